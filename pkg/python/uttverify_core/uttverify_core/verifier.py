from __future__ import annotations

import logging
import math
from enum import Enum
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from .acoustic_model import AcousticModel, FrameScorer, score_segment
from .aligner import Alignment, AlignOptions, viterbi_align
from .exceptions import (
    AlignmentError,
    FingerprintMismatchError,
    InventoryMismatchError,
    ThresholdError,
    UnknownPhoneError,
)
from .frontend import FeatureMatrix
from .lexicon import Lexicon, script_to_lattice

logger = logging.getLogger(__file__)


class Method(str, Enum):
    LRT = "LRT"
    APR = "APR"
    APR2STAGE = "APR2STAGE"


class Decision(str, Enum):
    MATCH = "match"
    MISMATCH = "mismatch"


class VerifierConfig(BaseModel):
    """
    :param tau: LLR threshold; LRT matches when the LLR is above it and the
        two-stage score falls back to ``|P|`` when the LLR is at or below it.
    :param theta: APR threshold; APR methods match when the score is below it.
    """

    model_config = ConfigDict(frozen=True)

    tau: float = 0.0
    theta: float = 1.5
    method: Method = Method.APR

    @model_validator(mode="after")
    def _check(self) -> "VerifierConfig":
        if math.isnan(self.tau):
            raise ValueError("tau must not be NaN")
        if not self.theta > 1.0:
            raise ValueError(f"theta must be greater than 1, got {self.theta}")
        return self

    def check_inventory_size(self, size: int) -> None:
        if self.theta > size:
            raise ThresholdError(f"theta {self.theta} exceeds the inventory size |P| = {size}")


class ScoreTable(BaseModel):
    """
    Segment-level scores of one alignment: the mean H0 score of every
    segment under every ranking phone, its anti-model score and its length.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    phones: Tuple[str, ...]
    targets: Tuple[str, ...]
    h0: np.ndarray
    anti: np.ndarray
    frames: np.ndarray

    @model_validator(mode="after")
    def _check(self) -> "ScoreTable":
        N = len(self.targets)
        if self.h0.shape != (N, len(self.phones)) or self.anti.shape != (N,) or self.frames.shape != (N,):
            raise ValueError("score table shapes do not match the number of segments")
        for target in self.targets:
            if target not in self.phones:
                raise ValueError(f"segment phone '{target}' is not a ranking phone")
        return self

    @property
    def N(self) -> int:
        return len(self.targets)

    @property
    def inventory_size(self) -> int:
        return len(self.phones)

    def _require_segments(self) -> None:
        if self.N == 0:
            raise AlignmentError("no phone segments to score (N = 0)")

    def target_scores(self) -> np.ndarray:
        columns = [self.phones.index(t) for t in self.targets]
        return self.h0[np.arange(self.N), columns]

    def ranks(self) -> np.ndarray:
        """Rank of each target among all phones, 1 = best; ties share the better rank."""
        target = self.target_scores()
        return 1 + np.sum(self.h0 > target[:, None], axis=1)

    def llr(self) -> float:
        self._require_segments()
        total = math.fsum(self.frames)
        g = math.fsum(self.frames * self.target_scores()) / total
        G = math.fsum(self.frames * self.anti) / total
        return g - G

    def apr(self) -> float:
        self._require_segments()
        return math.fsum(self.ranks()) / self.N

    def two_stage(self, tau: float) -> float:
        if self.llr() <= tau:
            return float(self.inventory_size)
        return self.apr()

    def map(self, fn: Callable[[np.ndarray], np.ndarray], include_anti: bool = True) -> "ScoreTable":
        """Apply ``fn`` elementwise to every H0 score (and anti score)."""
        return ScoreTable(
            phones=self.phones,
            targets=self.targets,
            h0=np.asarray(fn(self.h0), dtype=np.float64),
            anti=np.asarray(fn(self.anti), dtype=np.float64) if include_anti else self.anti,
            frames=self.frames,
        )


def score_alignment(
    m: AcousticModel,
    alignment: Alignment,
    feat: FeatureMatrix,
    scorer: Optional[FrameScorer] = None,
) -> ScoreTable:
    if alignment.num_frames != feat.num_frames:
        raise AlignmentError(
            f"alignment covers {alignment.num_frames} frames, features have {feat.num_frames}"
        )
    if scorer is None:
        scorer = FrameScorer(m, feat)
    phones = m.inventory.ranking_phones
    segments = alignment.phone_segments
    for s in segments:
        if s.phone not in phones:
            raise UnknownPhoneError(s.phone, "not a ranking phone")
    h0 = np.array(
        [[scorer.segment_score(q, s.start, s.end) for q in phones] for s in segments]
    ).reshape(len(segments), len(phones))
    return ScoreTable(
        phones=phones,
        targets=tuple(s.phone for s in segments),
        h0=h0,
        anti=np.array([scorer.segment_anti(s.start, s.end) for s in segments]),
        frames=np.array([s.num_frames for s in segments], dtype=np.float64),
    )


def phone_rank(m: AcousticModel, phone: str, seg) -> int:
    phones = m.inventory.ranking_phones
    if phone not in phones:
        raise UnknownPhoneError(phone, "not a ranking phone")
    target = score_segment(m, phone, seg)
    better = sum(1 for q in phones if q != phone and score_segment(m, q, seg) > target)
    return 1 + better


def compute_llr(m: AcousticModel, alignment: Alignment, feat: FeatureMatrix) -> float:
    """Frame-weighted mean H0 score minus frame-weighted mean anti score."""
    return score_alignment(m, alignment, feat).llr()


def compute_apr(m: AcousticModel, alignment: Alignment, feat: FeatureMatrix) -> float:
    return score_alignment(m, alignment, feat).apr()


def compute_two_stage(
    m: AcousticModel, alignment: Alignment, feat: FeatureMatrix, cfg: VerifierConfig
) -> float:
    return score_alignment(m, alignment, feat).two_stage(cfg.tau)


def decide(score: float, cfg: VerifierConfig) -> Decision:
    if cfg.method == Method.LRT:
        return Decision.MATCH if score > cfg.tau else Decision.MISMATCH
    return Decision.MATCH if score < cfg.theta else Decision.MISMATCH


class PhoneVerdict(BaseModel):
    model_config = ConfigDict(frozen=True)

    phone: str
    rank: int
    h0_score: float
    anti_score: float


REPORT_COLUMNS = (
    "pair_id",
    "method",
    "llr",
    "apr",
    "two_stage",
    "decision",
    "tau",
    "theta",
    "N",
    "per_phone",
)


class VerdictReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    pair_id: str = ""
    method: Method
    llr: float
    apr: float
    two_stage: float
    decision: Decision
    tau: float
    theta: float
    N: int
    inventory_size: int
    per_phone: Tuple[PhoneVerdict, ...]
    oov_words: Tuple[str, ...] = ()

    @model_validator(mode="after")
    def _check(self) -> "VerdictReport":
        if not 1.0 <= self.apr <= self.inventory_size:
            raise ValueError(f"APR {self.apr} outside [1, {self.inventory_size}]")
        for verdict in self.per_phone:
            if not 1 <= verdict.rank <= self.inventory_size:
                raise ValueError(f"rank {verdict.rank} of '{verdict.phone}' out of range")
        return self

    @property
    def score(self) -> float:
        return {Method.LRT: self.llr, Method.APR: self.apr, Method.APR2STAGE: self.two_stage}[
            self.method
        ]

    @property
    def is_match(self) -> bool:
        return self.decision == Decision.MATCH

    def to_record(self) -> Dict[str, str]:
        per_phone = ",".join(f"{v.phone}:{v.rank}:{v.h0_score!r}" for v in self.per_phone)
        return {
            "pair_id": self.pair_id,
            "method": self.method.value,
            "llr": repr(self.llr),
            "apr": repr(self.apr),
            "two_stage": repr(self.two_stage),
            "decision": self.decision.value,
            "tau": repr(self.tau),
            "theta": repr(self.theta),
            "N": str(self.N),
            "per_phone": per_phone,
        }

    def to_line(self) -> str:
        record = self.to_record()
        return "\t".join(record[c] for c in REPORT_COLUMNS)


def report_header() -> str:
    return "#" + "\t".join(REPORT_COLUMNS)


def build_report(
    table: ScoreTable, cfg: VerifierConfig, pair_id: str = "", oov_words: Tuple[str, ...] = ()
) -> VerdictReport:
    llr = table.llr()
    apr = table.apr()
    two_stage = table.two_stage(cfg.tau)
    score = {Method.LRT: llr, Method.APR: apr, Method.APR2STAGE: two_stage}[cfg.method]
    ranks = table.ranks()
    targets = table.target_scores()
    return VerdictReport(
        pair_id=pair_id,
        method=cfg.method,
        llr=llr,
        apr=apr,
        two_stage=two_stage,
        decision=decide(score, cfg),
        tau=cfg.tau,
        theta=cfg.theta,
        N=table.N,
        inventory_size=table.inventory_size,
        per_phone=tuple(
            PhoneVerdict(
                phone=phone, rank=int(rank), h0_score=float(h0), anti_score=float(anti)
            )
            for phone, rank, h0, anti in zip(table.targets, ranks, targets, table.anti)
        ),
        oov_words=oov_words,
    )


class Verifier:
    """
    Script/utterance verification with a fixed model, lexicon and thresholds.

    A ``Verifier`` holds no per-utterance state and can be shared between
    threads.
    """

    def __init__(
        self,
        model: AcousticModel,
        lexicon: Lexicon,
        config: Optional[VerifierConfig] = None,
        options: Optional[AlignOptions] = None,
    ):
        missing = [p for p in lexicon.inventory.ranking_phones if p not in model.inventory.ranking_phones]
        if missing:
            raise InventoryMismatchError(
                f"lexicon phone '{missing[0]}' has no model among the ranking phones"
            )
        self.model = model
        self.lexicon = lexicon
        self.config = config or VerifierConfig()
        self.options = options or AlignOptions()
        self.config.check_inventory_size(model.inventory.size)

    def check_fingerprint(self, feat: FeatureMatrix) -> None:
        expected = self.model.fingerprint
        if expected is None or feat.fingerprint is None:
            return
        if expected != feat.fingerprint:
            raise FingerprintMismatchError(
                f"features were computed with frontend '{feat.fingerprint}', "
                f"the model expects '{expected}'"
            )

    def score(self, script: str, feat: FeatureMatrix) -> Tuple[Alignment, ScoreTable, Tuple[str, ...]]:
        """Align ``script`` to ``feat`` and score the alignment."""
        self.check_fingerprint(feat)
        lattice = script_to_lattice(script, self.lexicon)
        scorer = FrameScorer(self.model, feat)
        alignment = viterbi_align(feat, lattice, self.model, self.options, scorer=scorer)
        table = score_alignment(self.model, alignment, feat, scorer=scorer)
        return alignment, table, lattice.oov_words

    def verify(self, script: str, feat: FeatureMatrix, pair_id: str = "") -> VerdictReport:
        _, table, oov_words = self.score(script, feat)
        report = build_report(table, self.config, pair_id=pair_id, oov_words=oov_words)
        logger.debug(
            "%s: LLR %.4f APR %.4f -> %s", pair_id or "<pair>", report.llr, report.apr, report.decision.value
        )
        return report

