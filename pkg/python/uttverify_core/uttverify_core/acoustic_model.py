from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from .exceptions import (
    CorruptModelError,
    EmptySegmentError,
    FeatureDimensionError,
    InsufficientDataError,
    InventoryMismatchError,
    ModelVersionError,
    UnknownPhoneError,
)
from .frontend import FeatureMatrix
from .gmm import VARIANCE_FLOOR, Gmm, fit_gmm
from .lexicon import PhoneInventory

logger = logging.getLogger(__file__)

MODEL_FORMAT_VERSION = 1
DEFAULT_COMPONENTS = 4
DEFAULT_ITERATIONS = 100
SYNTHETIC_FINGERPRINT = "synthetic"
ANTI_MODEL_NAME = "<anti>"


class LabeledSegment(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    phone: str
    frames: np.ndarray

    @field_validator("frames", mode="before")
    @classmethod
    def _check_frames(cls, value):
        frames = np.array(value, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise ValueError("a labeled segment needs a (n >= 1, D) frame matrix")
        return frames


class AcousticModel(BaseModel):
    """
    One GMM per inventory phone (silence included) plus the pooled anti-model.
    """

    model_config = ConfigDict(frozen=True)

    inventory: PhoneInventory
    gmms: Dict[str, Gmm]
    anti_model: Gmm
    fingerprint: Optional[str] = None

    @model_validator(mode="after")
    def _check(self) -> "AcousticModel":
        missing = [p for p in self.inventory.phones if p not in self.gmms]
        if missing:
            raise ValueError(f"No GMM for phone '{missing[0]}'")
        extra = [p for p in self.gmms if p not in self.inventory]
        if extra:
            raise ValueError(f"GMM for phone '{extra[0]}' which is not in the inventory")
        dims = {g.dim for g in self.gmms.values()} | {self.anti_model.dim}
        if len(dims) != 1:
            raise ValueError(f"GMMs disagree on the feature dimension: {sorted(dims)}")
        return self

    @property
    def feature_dim(self) -> int:
        return self.anti_model.dim

    def gmm(self, phone: str) -> Gmm:
        try:
            return self.gmms[phone]
        except KeyError:
            raise UnknownPhoneError(phone, "not in the acoustic model") from None

    def check_dim(self, dim: int) -> None:
        if dim != self.feature_dim:
            raise FeatureDimensionError(
                f"features are {dim}-dimensional, the model expects {self.feature_dim}"
            )


def _segment_matrix(m: AcousticModel, seg) -> np.ndarray:
    frames = np.asarray(seg.frames if isinstance(seg, FeatureMatrix) else seg, dtype=np.float64)
    if frames.ndim == 1:
        frames = frames[None, :]
    if frames.shape[0] == 0:
        raise EmptySegmentError("cannot score an empty segment")
    m.check_dim(frames.shape[1])
    return frames


def mean_score(frame_scores: np.ndarray) -> float:
    """Per-frame mean with correctly rounded summation."""
    return math.fsum(frame_scores) / len(frame_scores)


def score_frame(m: AcousticModel, phone: str, frame: np.ndarray) -> float:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 1:
        raise FeatureDimensionError("score_frame takes a single D-vector")
    m.check_dim(frame.shape[0])
    return float(m.gmm(phone).log_likelihood(frame[None, :])[0])


def score_segment(m: AcousticModel, phone: str, seg) -> float:
    gmm = m.gmm(phone)
    return mean_score(gmm.log_likelihood(_segment_matrix(m, seg)))


def score_anti(m: AcousticModel, seg) -> float:
    return mean_score(m.anti_model.log_likelihood(_segment_matrix(m, seg)))


class FrameScorer:
    """
    Per-utterance cache of frame log-likelihood vectors, one per phone, so
    alignment and scoring evaluate each GMM at most once per utterance.
    """

    def __init__(self, model: AcousticModel, feat: FeatureMatrix):
        model.check_dim(feat.dim)
        self.model = model
        self.feat = feat
        self._cache: Dict[str, np.ndarray] = {}
        self._anti: Optional[np.ndarray] = None

    @property
    def num_frames(self) -> int:
        return self.feat.num_frames

    def phone_scores(self, phone: str) -> np.ndarray:
        if phone not in self._cache:
            self._cache[phone] = self.model.gmm(phone).log_likelihood(self.feat.frames)
        return self._cache[phone]

    def anti_scores(self) -> np.ndarray:
        if self._anti is None:
            self._anti = self.model.anti_model.log_likelihood(self.feat.frames)
        return self._anti

    def segment_score(self, phone: str, start: int, end: int) -> float:
        if end <= start:
            raise EmptySegmentError(f"empty segment [{start}, {end})")
        return mean_score(self.phone_scores(phone)[start:end])

    def segment_anti(self, start: int, end: int) -> float:
        if end <= start:
            raise EmptySegmentError(f"empty segment [{start}, {end})")
        return mean_score(self.anti_scores()[start:end])


def _pool(segments: Iterable[LabeledSegment], inventory: PhoneInventory) -> Dict[str, np.ndarray]:
    pooled: Dict[str, List[np.ndarray]] = {p: [] for p in inventory.phones}
    dims = set()
    for seg in segments:
        if seg.phone not in inventory:
            raise UnknownPhoneError(seg.phone, "training segment")
        pooled[seg.phone].append(seg.frames)
        dims.add(seg.frames.shape[1])
    if len(dims) > 1:
        raise FeatureDimensionError(f"training segments disagree on dimension: {sorted(dims)}")
    return {p: (np.vstack(chunks) if chunks else np.empty((0, 0))) for p, chunks in pooled.items()}


def train_em(
    segments: Iterable[LabeledSegment],
    inventory: PhoneInventory,
    K: int = DEFAULT_COMPONENTS,
    iters: int = DEFAULT_ITERATIONS,
    seed: int = 0,
    variance_floor: float = VARIANCE_FLOOR,
    fingerprint: Optional[str] = None,
    callback: Optional[Callable[[str, int, float], None]] = None,
) -> AcousticModel:
    """
    Train one GMM per inventory phone and an anti-model on the pooled
    non-silence frames.

    ``callback(phone, iteration, loglik)`` is called after every EM step; the
    anti-model reports under the name ``<anti>``.
    """
    if K < 1:
        raise ValueError(f"K must be at least 1, got {K}")
    pooled = _pool(segments, inventory)
    dim = max(frames.shape[1] for frames in pooled.values())
    needed = K * max(dim, 1)
    for phone, frames in pooled.items():
        if frames.shape[0] < needed:
            raise InsufficientDataError(phone, frames.shape[0], needed)

    def fit(name: str, frames: np.ndarray, index: int) -> Gmm:
        def report(iteration: int, total: float) -> None:
            logger.info("%s iteration %d: log-likelihood %.6f", name, iteration, total)
            if callback is not None:
                callback(name, iteration, total)

        result = fit_gmm(
            frames,
            K,
            iters=iters,
            seed=int(np.random.SeedSequence([seed, index]).generate_state(1)[0]),
            variance_floor=variance_floor,
            name=name,
            callback=report,
        )
        return result.gmm

    gmms = {phone: fit(phone, pooled[phone], i) for i, phone in enumerate(inventory.phones)}
    anti_frames = np.vstack([pooled[p] for p in inventory.ranking_phones])
    anti_model = fit(ANTI_MODEL_NAME, anti_frames, len(inventory.phones))
    logger.info(
        "Trained %d phone GMMs and the anti-model (K=%d, D=%d)", len(gmms), K, dim
    )
    return AcousticModel(
        inventory=inventory, gmms=gmms, anti_model=anti_model, fingerprint=fingerprint
    )


def identifiability_matrix(
    m: AcousticModel, segments: Mapping[str, Sequence[np.ndarray]]
) -> Tuple[Tuple[str, ...], np.ndarray]:
    """
    R[i][j] = mean score of the phone-i segments under the phone-j GMM, over
    the phones present in ``segments``.
    """
    phones = tuple(p for p in m.inventory.phones if p in segments)
    R = np.empty((len(phones), len(phones)))
    for i, source in enumerate(phones):
        for j, target in enumerate(phones):
            R[i, j] = np.mean([score_segment(m, target, seg) for seg in segments[source]])
    return phones, R


def _format_row(values: Iterable[float]) -> str:
    return " ".join("%.17g" % v for v in values)


def _write_gmm(fobj: TextIO, gmm: Gmm) -> None:
    for k in range(gmm.num_components):
        row = [gmm.weights[k], *gmm.means[k], *gmm.variances[k]]
        fobj.write(_format_row(row) + "\n")


def save_model(m: AcousticModel, path: Union[str, Path]) -> None:
    """
    Write the versioned text model format. Floats carry 17 significant
    digits so a reload scores bit-identically.
    """
    K = m.anti_model.num_components
    if any(g.num_components != K for g in m.gmms.values()):
        raise ValueError("all GMMs of a model must have the same number of components")
    with open(path, "w", encoding="utf-8") as fobj:
        fobj.write(f"version {MODEL_FORMAT_VERSION}\n")
        fobj.write(f"dim {m.feature_dim}\n")
        fobj.write(f"components {K}\n")
        fobj.write(f"inventory {m.inventory.inventory_hash()}\n")
        fobj.write(f"silence {m.inventory.silence or '-'}\n")
        fobj.write(f"fingerprint {m.fingerprint or '-'}\n")
        for phone in m.inventory.phones:
            fobj.write(f"phone {phone}\n")
            _write_gmm(fobj, m.gmms[phone])
        fobj.write("anti\n")
        _write_gmm(fobj, m.anti_model)
        fobj.write("end\n")


class _ModelReader:
    def __init__(self, path: Path):
        self.path = path
        with open(path, "r", encoding="utf-8") as fobj:
            self.lines = [line.strip() for line in fobj]
        self.pos = 0

    def next_line(self) -> str:
        while self.pos < len(self.lines) and not self.lines[self.pos]:
            self.pos += 1
        if self.pos >= len(self.lines):
            raise CorruptModelError(f"{self.path}: unexpected end of file")
        self.pos += 1
        return self.lines[self.pos - 1]

    def header(self, key: str) -> str:
        line = self.next_line()
        parts = line.split()
        if len(parts) != 2 or parts[0] != key:
            raise CorruptModelError(
                f"{self.path}:{self.pos}: expected '{key} <value>', got {line!r}"
            )
        return parts[1]

    def gmm(self, K: int, D: int, name: str) -> Gmm:
        rows = []
        for _ in range(K):
            line = self.next_line()
            try:
                row = [float(v) for v in line.split()]
            except ValueError:
                raise CorruptModelError(f"{self.path}:{self.pos}: malformed number in {line!r}") from None
            if len(row) != 1 + 2 * D:
                raise CorruptModelError(
                    f"{self.path}:{self.pos}: expected {1 + 2 * D} values for '{name}', got {len(row)}"
                )
            rows.append(row)
        table = np.array(rows)
        try:
            return Gmm(weights=table[:, 0], means=table[:, 1 : 1 + D], variances=table[:, 1 + D :])
        except ValidationError as e:
            raise CorruptModelError(f"{self.path}: invalid parameters for '{name}': {e}") from None


def load_model(path: Union[str, Path], inventory: Optional[PhoneInventory] = None) -> AcousticModel:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"No such model file: {path}")
    reader = _ModelReader(path)

    version = reader.header("version")
    if version != str(MODEL_FORMAT_VERSION):
        raise ModelVersionError(
            f"{path}: model format version {version}, this library reads version {MODEL_FORMAT_VERSION}"
        )
    try:
        D = int(reader.header("dim"))
        K = int(reader.header("components"))
    except ValueError:
        raise CorruptModelError(f"{path}: malformed dimension header") from None
    stored_hash = reader.header("inventory")
    silence = reader.header("silence")
    fingerprint = reader.header("fingerprint")

    phones: List[str] = []
    gmms: Dict[str, Gmm] = {}
    while True:
        line = reader.next_line()
        if line == "anti":
            break
        parts = line.split()
        if len(parts) != 2 or parts[0] != "phone":
            raise CorruptModelError(f"{path}:{reader.pos}: expected 'phone <sym>' or 'anti', got {line!r}")
        phones.append(parts[1])
        gmms[parts[1]] = reader.gmm(K, D, parts[1])
    anti_model = reader.gmm(K, D, ANTI_MODEL_NAME)
    if reader.next_line() != "end":
        raise CorruptModelError(f"{path}: missing 'end' marker")

    try:
        found = PhoneInventory(phones=tuple(phones), silence=None if silence == "-" else silence)
    except ValidationError as e:
        raise InventoryMismatchError(f"{path}: invalid phone list: {e}") from None
    if found.inventory_hash() != stored_hash:
        raise InventoryMismatchError(
            f"{path}: phone list does not match the recorded inventory hash {stored_hash}"
        )
    if inventory is not None and inventory.inventory_hash() != stored_hash:
        raise InventoryMismatchError(f"{path}: model was trained on a different phone inventory")

    return AcousticModel(
        inventory=found,
        gmms=gmms,
        anti_model=anti_model,
        fingerprint=None if fingerprint == "-" else fingerprint,
    )
