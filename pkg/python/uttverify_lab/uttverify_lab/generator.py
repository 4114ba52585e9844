from __future__ import annotations

import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from uttverify_core.acoustic_model import SYNTHETIC_FINGERPRINT, AcousticModel, LabeledSegment
from uttverify_core.aligner import AlignedSegment, Alignment, AlignOptions
from uttverify_core.exceptions import CorpusError, FeatureDimensionError, UnknownPhoneError
from uttverify_core.frontend import FeatureMatrix
from uttverify_core.gmm import Gmm
from uttverify_core.lexicon import Lexicon, PhoneInventory, script_to_lattice

from .manifest import CorpusManifest, Label, ManifestEntry, MismatchMode, feature_name

logger = logging.getLogger(__file__)

MIN_DURATION = AlignOptions().min_duration


def _check_range(value: Tuple[int, int], what: str) -> Tuple[int, int]:
    low, high = value
    if low < MIN_DURATION:
        raise ValueError(f"{what} minimum {low} is below the aligner minimum duration {MIN_DURATION}")
    if high < low:
        raise ValueError(f"{what} range ({low}, {high}) is empty")
    return value


class GeneratorSpec(BaseModel):
    """
    Per-phone frame generators used in place of recorded speech.

    :param inventory: the phones the generator covers, silence included.
    :param generators: one Gaussian mixture per inventory phone.
    :param duration: inclusive ``(min, max)`` frame count of a phone.
    :param silence_duration: inclusive ``(min, max)`` frame count of a pause.
    :param pause_probability: chance of a pause between two words.
    """

    model_config = ConfigDict(frozen=True)

    inventory: PhoneInventory
    generators: Dict[str, Gmm]
    duration: Tuple[int, int] = (4, 8)
    silence_duration: Tuple[int, int] = (4, 8)
    pause_probability: float = 0.5
    seed: int = 0

    @field_validator("duration")
    @classmethod
    def _check_duration(cls, value):
        return _check_range(value, "phone duration")

    @field_validator("silence_duration")
    @classmethod
    def _check_silence_duration(cls, value):
        return _check_range(value, "silence duration")

    @model_validator(mode="after")
    def _check(self) -> "GeneratorSpec":
        missing = [p for p in self.inventory.phones if p not in self.generators]
        if missing:
            raise ValueError(f"no generator for phone '{missing[0]}'")
        dims = {g.dim for g in self.generators.values()}
        if len(dims) != 1:
            raise ValueError(f"generators disagree on the feature dimension: {sorted(dims)}")
        if not 0.0 <= self.pause_probability <= 1.0:
            raise ValueError(f"pause probability {self.pause_probability} is not in [0, 1]")
        return self

    @property
    def dim(self) -> int:
        return next(iter(self.generators.values())).dim

    @classmethod
    def random(
        cls,
        inventory: PhoneInventory,
        dim: int = 13,
        spread: float = 1.0,
        within: float = 1.0,
        components: int = 1,
        seed: int = 0,
        **kwargs,
    ) -> "GeneratorSpec":
        """
        Phone centres drawn from ``N(0, spread^2)`` per dimension; every
        component has variance ``within``. With ``components > 1`` the
        component means scatter around the phone centre.
        """
        if spread <= 0 or within <= 0:
            raise ValueError("spread and within-phone variance must be positive")
        rng = np.random.default_rng(seed)
        generators = {}
        for phone in inventory.phones:
            centre = rng.normal(scale=spread, size=dim)
            offsets = (
                rng.normal(scale=0.5 * math.sqrt(within), size=(components, dim))
                if components > 1
                else np.zeros((1, dim))
            )
            generators[phone] = Gmm(
                weights=np.full(components, 1.0 / components),
                means=centre + offsets,
                variances=np.full((components, dim), within),
            )
        return cls(inventory=inventory, generators=generators, seed=seed, **kwargs)

    def perturbed(self, scale: float, seed: int) -> "GeneratorSpec":
        """A copy with every component mean moved by ``N(0, scale^2)`` noise."""
        rng = np.random.default_rng(seed)
        generators = {
            phone: Gmm(
                weights=g.weights,
                means=g.means + rng.normal(scale=scale, size=g.means.shape),
                variances=g.variances,
            )
            for phone, g in self.generators.items()
        }
        return self.model_copy(update={"generators": generators, "seed": seed})

    def centre(self, phone: str) -> np.ndarray:
        g = self.generators[phone]
        return g.weights @ g.means

    def mean_variance(self) -> float:
        return float(np.mean([g.weights @ g.variances for g in self.generators.values()]))

    def sample(self, phone: str, n: int, rng: np.random.Generator) -> np.ndarray:
        if phone not in self.generators:
            raise UnknownPhoneError(phone, "generator")
        return self.generators[phone].sample(n, rng)

    def as_model(self) -> AcousticModel:
        """The generator distributions as an acoustic model; the anti-model
        mixes every ranking phone's components with equal phone weight."""
        ranking = self.inventory.ranking_phones
        anti = Gmm(
            weights=np.concatenate([self.generators[p].weights / len(ranking) for p in ranking]),
            means=np.vstack([self.generators[p].means for p in ranking]),
            variances=np.vstack([self.generators[p].variances for p in ranking]),
        )
        return AcousticModel(
            inventory=self.inventory,
            gmms=dict(self.generators),
            anti_model=anti,
            fingerprint=SYNTHETIC_FINGERPRINT,
        )


class StyleShift(BaseModel):
    """
    Shared degradation of a whole utterance: covariance inflation by
    ``gamma``, a global mean ``offset`` and a random per-utterance gain on
    the first coefficient.
    """

    model_config = ConfigDict(frozen=True)

    gamma: float = 1.0
    offset: Tuple[float, ...] = ()
    gain_std: float = 0.0

    @model_validator(mode="after")
    def _check(self) -> "StyleShift":
        if not self.gamma >= 1.0:
            raise ValueError(f"gamma must be at least 1, got {self.gamma}")
        if self.gain_std < 0:
            raise ValueError(f"gain deviation must be non-negative, got {self.gain_std}")
        if not all(math.isfinite(v) for v in self.offset):
            raise ValueError("offset must be finite")
        return self

    @classmethod
    def with_offset(cls, gamma: float, norm: float, dim: int = 13, seed: int = 0, **kwargs) -> "StyleShift":
        """Offset of length ``norm`` in a random direction."""
        direction = np.random.default_rng(seed).standard_normal(dim)
        direction *= norm / np.linalg.norm(direction)
        return cls(gamma=gamma, offset=tuple(float(v) for v in direction), **kwargs)

    def apply(self, frames: np.ndarray, rng: np.random.Generator, base_variance: float = 1.0) -> np.ndarray:
        out = np.array(frames, dtype=np.float64)
        if self.gamma > 1.0:
            out += math.sqrt((self.gamma - 1.0) * base_variance) * rng.standard_normal(out.shape)
        if self.offset:
            if len(self.offset) != out.shape[1]:
                raise FeatureDimensionError(
                    f"offset has {len(self.offset)} dimensions, frames have {out.shape[1]}"
                )
            out += np.asarray(self.offset)
        if self.gain_std > 0:
            out[:, 0] += rng.normal(scale=self.gain_std)
        return out


class SyntheticUtterance(BaseModel):
    model_config = ConfigDict(frozen=True)

    script: str
    features: FeatureMatrix
    alignment: Alignment


def _choose_phones(script: str, lex: Lexicon, rng: np.random.Generator) -> List[Tuple[str, ...]]:
    lattice = script_to_lattice(script, lex)
    return [word.variants[int(rng.integers(len(word.variants)))].phones for word in lattice.words]


def _layout(
    words: Sequence[Tuple[str, ...]], spec: GeneratorSpec, rng: np.random.Generator
) -> List[Tuple[str, int, bool, Optional[int]]]:
    silence = spec.inventory.silence

    def pause() -> int:
        return int(rng.integers(spec.silence_duration[0], spec.silence_duration[1] + 1))

    runs = []
    if silence is not None:
        runs.append((silence, pause(), True, None))
    for index, phones in enumerate(words):
        if index > 0 and silence is not None and rng.random() < spec.pause_probability:
            runs.append((silence, pause(), True, None))
        for phone in phones:
            runs.append((phone, int(rng.integers(spec.duration[0], spec.duration[1] + 1)), False, index))
    if silence is not None:
        runs.append((silence, pause(), True, None))
    return runs


def _assemble(script: str, spec: GeneratorSpec, runs, chunks: List[np.ndarray]) -> SyntheticUtterance:
    frames = np.vstack(chunks)
    segments = []
    scores = []
    start = 0
    for phone, n, is_silence, word_index in runs:
        loglik = spec.generators[phone].log_likelihood(frames[start : start + n])
        scores.extend(loglik)
        segments.append(
            AlignedSegment(
                phone=phone,
                start=start,
                end=start + n,
                score=math.fsum(loglik) / n,
                is_silence=is_silence,
                word_index=word_index,
            )
        )
        start += n
    return SyntheticUtterance(
        script=script,
        features=FeatureMatrix(frames=frames, fingerprint=SYNTHETIC_FINGERPRINT),
        alignment=Alignment(
            segments=tuple(segments), total_loglik=math.fsum(scores), num_frames=frames.shape[0]
        ),
    )


def synthesize_utterance(
    script: str,
    lex: Lexicon,
    spec: GeneratorSpec,
    shift: Optional[StyleShift] = None,
    seed: int = 0,
) -> SyntheticUtterance:
    """
    Frames for ``script``: one pronunciation per word, phone durations drawn
    uniformly from the spec, pauses around and between words. The returned
    alignment is the ground truth; its scores are under the generator.
    """
    rng = np.random.default_rng(seed)
    runs = _layout(_choose_phones(script, lex, rng), spec, rng)
    chunks = [spec.sample(phone, n, rng) for phone, n, _, _ in runs]
    if shift is not None:
        shifted = shift.apply(np.vstack(chunks), rng, spec.mean_variance())
        bounds = np.cumsum([n for _, n, _, _ in runs])[:-1]
        chunks = np.split(shifted, bounds)
    return _assemble(script, spec, runs, chunks)


def degenerate_utterance(
    script: str, lex: Lexicon, spec: GeneratorSpec, distance: float = 12.0, seed: int = 0
) -> SyntheticUtterance:
    """
    Frames pushed ``distance`` away from each phone's centre, outward from the
    centroid of all phones. The script's phones stay the closest models so
    ranks look good while every likelihood collapses.
    """
    rng = np.random.default_rng(seed)
    runs = _layout(_choose_phones(script, lex, rng), spec, rng)
    centroid = np.mean([spec.centre(p) for p in spec.inventory.phones], axis=0)
    chunks = []
    for phone, n, _, _ in runs:
        centre = spec.centre(phone)
        direction = centre - centroid
        direction /= np.linalg.norm(direction)
        chunks.append(centre + distance * direction + 0.1 * rng.standard_normal((n, spec.dim)))
    return _assemble(script, spec, runs, chunks)


def training_segments(
    spec: GeneratorSpec, per_phone: int = 40, seed: int = 0
) -> List[LabeledSegment]:
    """``per_phone`` labeled segments for every inventory phone, silence included."""
    rng = np.random.default_rng(seed)
    segments = []
    for phone in spec.inventory.phones:
        low, high = spec.silence_duration if phone == spec.inventory.silence else spec.duration
        for _ in range(per_phone):
            n = int(rng.integers(low, high + 1))
            segments.append(LabeledSegment(phone=phone, frames=spec.sample(phone, n, rng)))
    logger.info("Generated %d training segments for %d phones", len(segments), len(spec.inventory.phones))
    return segments


def random_scripts(
    vocabulary: Sequence[str], n: int, words: Tuple[int, int], seed: int = 0
) -> List[str]:
    """``n`` distinct scripts with a uniform word count in ``words`` (inclusive),
    words drawn uniformly from ``vocabulary``."""
    if not vocabulary:
        raise CorpusError("cannot draw scripts from an empty vocabulary")
    low, high = words
    if low < 1 or high < low:
        raise CorpusError(f"invalid word count range {words}")
    rng = np.random.default_rng(seed)
    scripts: List[str] = []
    seen = set()
    attempts = 0
    while len(scripts) < n:
        attempts += 1
        if attempts > 100 * n + 1000:
            raise CorpusError(f"could not draw {n} distinct scripts from {len(vocabulary)} words")
        count = int(rng.integers(low, high + 1))
        script = " ".join(vocabulary[i] for i in rng.integers(len(vocabulary), size=count))
        if script not in seen:
            seen.add(script)
            scripts.append(script)
    return scripts


def synthesize_corpus(
    lex: Lexicon,
    spec: GeneratorSpec,
    n: int,
    words: Tuple[int, int] = (2, 5),
    shift: Optional[StyleShift] = None,
    style: str = "read",
    seed: int = 0,
    prefix: str = "u",
) -> CorpusManifest:
    """
    ``n`` correct pairs with distinct random scripts; utterance ``i`` is
    generated from its own seed stream so corpora built with and without a
    ``shift`` share scripts and underlying samples.
    """
    scripts = random_scripts(lex.words(), n, words, seed=seed)
    streams = np.random.SeedSequence(seed).spawn(n)
    entries = []
    features = {}
    for i, (script, stream) in enumerate(zip(scripts, streams)):
        pair_id = f"{prefix}{i:05d}"
        utterance = synthesize_utterance(
            script, lex, spec, shift=shift, seed=int(stream.generate_state(1)[0])
        )
        name = feature_name(pair_id)
        features[name] = utterance.features
        entries.append(
            ManifestEntry(pair_id=pair_id, script=script, feature_file=name, label=Label.CORRECT, style=style)
        )
    manifest = CorpusManifest(entries=tuple(entries))
    for name, feat in features.items():
        manifest.store(name, feat)
    logger.info("Synthesized %d '%s' utterances", n, style)
    return manifest


def spike_degenerate(
    manifest: CorpusManifest,
    lex: Lexicon,
    spec: GeneratorSpec,
    fraction: float = 0.05,
    distance: float = 12.0,
    seed: int = 0,
) -> CorpusManifest:
    """
    Replace ``ceil(fraction * len(manifest))`` incorrect pairs with degenerate
    utterances of the same scripts. Labels keep their counts, so a balanced
    manifest stays balanced.
    """
    if not 0.0 < fraction <= 1.0:
        raise CorpusError(f"degenerate fraction {fraction} is not in (0, 1]")
    entries = list(manifest.entries)
    incorrect = [i for i, entry in enumerate(entries) if entry.label == Label.INCORRECT]
    count = math.ceil(fraction * len(manifest))
    if count > len(incorrect):
        raise CorpusError(
            f"{count} degenerate utterances requested but the manifest holds {len(incorrect)} incorrect pairs"
        )
    rng = np.random.default_rng(seed)
    picks = sorted(int(p) for p in rng.choice(len(incorrect), size=count, replace=False))
    spiked = []
    for i, pick in enumerate(picks):
        pair_id = f"g{i:05d}"
        position = incorrect[pick]
        utterance = degenerate_utterance(
            entries[position].script, lex, spec, distance=distance, seed=int(rng.integers(2**32))
        )
        spiked.append((feature_name(pair_id), utterance.features))
        entries[position] = ManifestEntry(
            pair_id=pair_id,
            script=utterance.script,
            feature_file=feature_name(pair_id),
            label=Label.INCORRECT,
            style="degenerate",
            mode=MismatchMode.DEGENERATE,
        )
    out = manifest.derive(entries)
    for name, feat in spiked:
        out.store(name, feat)
    logger.info("Replaced %d incorrect pairs with degenerate utterances", count)
    return out
