from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from .acoustic_model import AcousticModel, FrameScorer
from .exceptions import AlignmentError, UtteranceTooShortError
from .frontend import FeatureMatrix
from .lexicon import DEFAULT_EXPANSION_CAP, PronunciationLattice

logger = logging.getLogger(__file__)


class AlignOptions(BaseModel):
    model_config = ConfigDict(frozen=True)

    min_duration: int = 3
    silence_min_duration: Optional[int] = None
    insert_silence: bool = True
    expansion_cap: int = DEFAULT_EXPANSION_CAP

    @model_validator(mode="after")
    def _check(self) -> "AlignOptions":
        if self.min_duration < 1:
            raise ValueError(f"min_duration must be at least 1, got {self.min_duration}")
        if self.silence_min_duration is not None and self.silence_min_duration < 1:
            raise ValueError("silence_min_duration must be at least 1")
        if self.expansion_cap < 1:
            raise ValueError("expansion_cap must be at least 1")
        return self

    @property
    def silence_duration(self) -> int:
        if self.silence_min_duration is None:
            return self.min_duration
        return self.silence_min_duration


class ChainState(BaseModel):
    model_config = ConfigDict(frozen=True)

    phone: str
    min_duration: int
    optional: bool = False
    is_silence: bool = False
    word_index: Optional[int] = None


class AlignmentGraph(BaseModel):
    """One linear chain of phone states per lattice expansion."""

    model_config = ConfigDict(frozen=True)

    chains: Tuple[Tuple[ChainState, ...], ...]

    @field_validator("chains")
    @classmethod
    def _non_empty(cls, chains):
        if not chains or any(not any(not s.optional for s in chain) for chain in chains):
            raise ValueError("every chain needs at least one mandatory state")
        return chains

    def min_frames(self, chain: int) -> int:
        return sum(s.min_duration for s in self.chains[chain] if not s.optional)


def build_alignment_graph(
    lattice: PronunciationLattice, silence: Optional[str], opts: AlignOptions
) -> AlignmentGraph:
    """
    Expand the lattice into chains. With a silence phone and silence
    insertion on, an optional silence state sits before the first word,
    between words and after the last word.
    """
    use_silence = opts.insert_silence and silence is not None
    chains = []
    for expansion in lattice.expansions(opts.expansion_cap):
        chain: List[ChainState] = []
        for w, phones in enumerate(expansion.words):
            if use_silence:
                chain.append(
                    ChainState(phone=silence, min_duration=opts.silence_duration, optional=True, is_silence=True)
                )
            chain.extend(
                ChainState(phone=p, min_duration=opts.min_duration, word_index=w) for p in phones
            )
        if use_silence:
            chain.append(
                ChainState(phone=silence, min_duration=opts.silence_duration, optional=True, is_silence=True)
            )
        chains.append(tuple(chain))
    return AlignmentGraph(chains=tuple(chains))


class AlignedSegment(BaseModel):
    model_config = ConfigDict(frozen=True)

    phone: str
    start: int
    end: int
    score: float
    is_silence: bool = False
    word_index: Optional[int] = None

    @property
    def num_frames(self) -> int:
        return self.end - self.start


class Alignment(BaseModel):
    """
    Segments partition ``[0, num_frames)`` in order. Silence segments are kept
    for coverage but do not count towards ``N``.
    """

    model_config = ConfigDict(frozen=True)

    segments: Tuple[AlignedSegment, ...]
    total_loglik: float
    num_frames: int
    expansion_index: int = 0

    @model_validator(mode="after")
    def _check(self) -> "Alignment":
        position = 0
        for seg in self.segments:
            if seg.start != position or seg.end <= seg.start:
                raise ValueError(
                    f"segment '{seg.phone}' [{seg.start}, {seg.end}) breaks the partition at frame {position}"
                )
            position = seg.end
        if position != self.num_frames:
            raise ValueError(f"segments cover {position} of {self.num_frames} frames")
        if self.N < 1:
            raise ValueError("an alignment needs at least one non-silence phone")
        return self

    @property
    def phone_segments(self) -> Tuple[AlignedSegment, ...]:
        return tuple(s for s in self.segments if not s.is_silence)

    @property
    def phones(self) -> Tuple[str, ...]:
        return tuple(s.phone for s in self.phone_segments)

    @property
    def N(self) -> int:
        return len(self.phone_segments)


def path_loglik(scores: np.ndarray, ends: Sequence[int]) -> float:
    """
    Total of ``scores[s, t]`` along the path where state ``s`` covers
    ``[ends[s-1], ends[s])``; summed with ``math.fsum`` so the result does not
    depend on summation order.
    """
    parts = []
    start = 0
    for s, end in enumerate(ends):
        parts.extend(scores[s, start:end])
        start = end
    return math.fsum(parts)


def segment_dp(
    scores: np.ndarray,
    min_durations: Sequence[int],
    optional: Optional[Sequence[bool]] = None,
) -> Tuple[float, Tuple[int, ...]]:
    """
    Exact maximum-likelihood segmentation of T frames into S ordered states.

    :param scores: (S, T) per-state frame log-likelihoods.
    :param min_durations: minimum frames per used state.
    :param optional: states that may be skipped (covering zero frames).
    :return: the path total and the end frame of every state (a skipped state
        ends where it starts). Among equal totals the lexicographically
        smallest end vector wins.
    """
    scores = np.asarray(scores, dtype=np.float64)
    S, T = scores.shape
    min_d = np.asarray(min_durations, dtype=int)
    opt = np.zeros(S, dtype=bool) if optional is None else np.asarray(optional, dtype=bool)
    if min_d.shape != (S,) or opt.shape != (S,):
        raise ValueError("min_durations and optional need one entry per state")
    if np.any(min_d < 1):
        raise ValueError("minimum durations must be at least 1")

    cum = np.zeros((S, T + 1))
    cum[:, 1:] = np.cumsum(scores, axis=1)
    starts = np.arange(T + 1)[:, None]
    ends = np.arange(T + 1)[None, :]

    # best[s, t]: best total for states s.. covering frames [t, T)
    best = np.full((S + 1, T + 1), -np.inf)
    best[S, T] = 0.0
    for s in range(S - 1, -1, -1):
        cand = (cum[s][None, :] - cum[s][:, None]) + best[s + 1][None, :]
        cand = np.where(ends - starts >= min_d[s], cand, -np.inf)
        best[s] = cand.max(axis=1)
        if opt[s]:
            best[s] = np.maximum(best[s], best[s + 1])

    if best[0, 0] == -np.inf:
        raise UtteranceTooShortError(
            f"{T} frames are too few for {int(min_d[~opt].sum())} frames of mandatory states"
        )

    path: List[int] = []
    t = 0
    for s in range(S):
        if opt[s] and best[s + 1, t] == best[s, t]:
            path.append(t)
            continue
        first = t + int(min_d[s])
        cand = (cum[s][first:] - cum[s][t]) + best[s + 1][first:]
        t = first + int(np.argmax(cand))
        path.append(t)
    return path_loglik(scores, path), tuple(path)


def viterbi_align(
    feat: FeatureMatrix,
    lattice: PronunciationLattice,
    m: AcousticModel,
    opts: Optional[AlignOptions] = None,
    scorer: Optional[FrameScorer] = None,
) -> Alignment:
    """
    Forced alignment over every lattice expansion (up to the cap). The best
    total wins; ties go to the smaller end vector, then the earlier expansion.
    """
    opts = opts or AlignOptions()
    m.check_dim(feat.dim)
    if scorer is None:
        scorer = FrameScorer(m, feat)
    graph = build_alignment_graph(lattice, m.inventory.silence, opts)
    T = feat.num_frames

    best = None
    for index, chain in enumerate(graph.chains):
        if graph.min_frames(index) > T:
            logger.debug("Expansion %d needs %d frames, utterance has %d", index, graph.min_frames(index), T)
            continue
        scores = np.vstack([scorer.phone_scores(state.phone) for state in chain])
        total, ends = segment_dp(
            scores, [s.min_duration for s in chain], [s.optional for s in chain]
        )
        logger.debug("Expansion %d: total log-likelihood %.6f", index, total)
        key = (-total, ends, index)
        if best is None or key < best[0]:
            best = (key, chain, ends)

    if best is None:
        shortest = min(graph.min_frames(i) for i in range(len(graph.chains)))
        raise UtteranceTooShortError(
            f"utterance of {T} frames is shorter than every expansion (shortest needs {shortest})"
        )

    (neg_total, ends, index), chain, _ = best
    segments = []
    start = 0
    for state, end in zip(chain, ends):
        if end == start:
            continue
        segments.append(
            AlignedSegment(
                phone=state.phone,
                start=start,
                end=end,
                score=scorer.segment_score(state.phone, start, end),
                is_silence=state.is_silence,
                word_index=state.word_index,
            )
        )
        start = end
    return Alignment(
        segments=tuple(segments), total_loglik=-neg_total, num_frames=T, expansion_index=index
    )


def segment_features(feat: FeatureMatrix, alignment: Alignment) -> List[Tuple[str, np.ndarray]]:
    """The N non-silence ``(phone, frames)`` pairs in order."""
    if feat.num_frames != alignment.num_frames:
        raise AlignmentError(
            f"alignment covers {alignment.num_frames} frames, features have {feat.num_frames}"
        )
    return [(s.phone, feat.frames[s.start : s.end]) for s in alignment.phone_segments]


def write_alignment(target: Union[str, Path, TextIO], alignment: Alignment) -> None:
    """
    Dump ``# N T total_loglik`` followed by ``phone start end seg_score``
    lines, silence included.
    """
    if isinstance(target, (str, Path)):
        with open(target, "w", encoding="utf-8") as fobj:
            write_alignment(fobj, alignment)
        return
    target.write(f"# {alignment.N} {alignment.num_frames} {alignment.total_loglik!r}\n")
    for seg in alignment.segments:
        target.write(f"{seg.phone} {seg.start} {seg.end} {seg.score!r}\n")
