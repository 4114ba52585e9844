from __future__ import annotations

import logging
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, PrivateAttr, field_validator, model_validator

from uttverify_core.acoustic_model import LabeledSegment
from uttverify_core.exceptions import CorpusError, ManifestError
from uttverify_core.frontend import (
    FeatureMatrix,
    FrontendConfig,
    featurize,
    load_wav,
    read_features,
    write_features,
)

logger = logging.getLogger(__file__)

MANIFEST_COLUMNS = ("pair_id", "script", "feature_file", "label", "style", "mode")
FEATURE_DIR = "features"
FEATURE_SUFFIX = ".feat"


class Label(str, Enum):
    CORRECT = "correct"
    INCORRECT = "incorrect"


class MismatchMode(str, Enum):
    NONE = "none"
    DELETE = "delete"
    INSERT = "insert"
    SUBSTITUTE = "substitute"
    REASSIGN = "reassign"
    DEGENERATE = "degenerate"


EDIT_MODES = (MismatchMode.DELETE, MismatchMode.INSERT, MismatchMode.SUBSTITUTE)


class ManifestEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    pair_id: str
    script: str
    feature_file: str
    label: Label
    style: str = "read"
    mode: MismatchMode = MismatchMode.NONE

    @field_validator("pair_id", "script", "feature_file", "style")
    @classmethod
    def _single_field(cls, value: str) -> str:
        if not value.strip() or "\t" in value or "\n" in value:
            raise ValueError(f"manifest field {value!r} must be non-empty and free of tabs/newlines")
        return value

    def to_line(self) -> str:
        return "\t".join(
            [self.pair_id, self.script, self.feature_file, self.label.value, self.style, self.mode.value]
        )


def _duplicate_id(entries: Sequence[ManifestEntry]) -> Optional[str]:
    seen = set()
    for entry in entries:
        if entry.pair_id in seen:
            return entry.pair_id
        seen.add(entry.pair_id)
    return None


class CorpusManifest(BaseModel):
    """
    Ordered pairs of script and audio. ``feature_file`` names resolve against
    ``root``; features generated in memory live in the manifest's store until
    the manifest is saved.
    """

    model_config = ConfigDict(frozen=True)

    entries: Tuple[ManifestEntry, ...]
    root: Optional[Path] = None
    frontend: FrontendConfig = FrontendConfig()

    _store: Dict[str, FeatureMatrix] = PrivateAttr(default_factory=dict)

    @model_validator(mode="after")
    def _check(self) -> "CorpusManifest":
        duplicate = _duplicate_id(self.entries)
        if duplicate is not None:
            raise ValueError(f"duplicate pair id '{duplicate}'")
        return self

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def counts(self) -> Dict[Label, int]:
        return {label: sum(e.label == label for e in self.entries) for label in Label}

    def is_balanced(self) -> bool:
        counts = self.counts()
        return counts[Label.CORRECT] == counts[Label.INCORRECT]

    def correct(self) -> List[ManifestEntry]:
        return [e for e in self.entries if e.label == Label.CORRECT]

    def store(self, feature_file: str, feat: FeatureMatrix) -> None:
        self._store[feature_file] = feat

    def stored(self) -> Dict[str, FeatureMatrix]:
        return dict(self._store)

    def derive(self, entries: Sequence[ManifestEntry]) -> "CorpusManifest":
        """A manifest over ``entries`` sharing this one's features."""
        other = CorpusManifest(entries=tuple(entries), root=self.root, frontend=self.frontend)
        other._store.update(self._store)
        return other

    def path_of(self, entry: ManifestEntry) -> Path:
        path = Path(entry.feature_file)
        if not path.is_absolute() and self.root is not None:
            path = self.root / path
        return path

    def features(self, entry: ManifestEntry) -> FeatureMatrix:
        """Features of ``entry``: from the store, a feature dump or a WAV file."""
        if entry.feature_file in self._store:
            return self._store[entry.feature_file]
        path = self.path_of(entry)
        if path.suffix.lower() == ".wav":
            return featurize(load_wav(path), self.frontend)
        return read_features(path)

    def check_files(self) -> None:
        for entry in self.entries:
            if entry.feature_file not in self._store and not self.path_of(entry).is_file():
                raise ManifestError(f"pair '{entry.pair_id}': missing file {self.path_of(entry)}")


def merge_manifests(*manifests: CorpusManifest) -> CorpusManifest:
    first = manifests[0]
    merged = first.derive([e for m in manifests for e in m.entries])
    for m in manifests[1:]:
        merged._store.update(m._store)
    return merged


def save_manifest(manifest: CorpusManifest, path: Union[str, Path]) -> Path:
    """
    Write the manifest TSV and dump in-memory features under ``features/``
    next to it. Returns the manifest path.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stored = manifest.stored()
    for name, feat in stored.items():
        target = path.parent / name
        target.parent.mkdir(parents=True, exist_ok=True)
        write_features(target, feat)
    with open(path, "w", encoding="utf-8") as fobj:
        fobj.write("#" + "\t".join(MANIFEST_COLUMNS) + "\n")
        for entry in manifest.entries:
            if entry.feature_file in stored:
                fobj.write(entry.to_line() + "\n")
            else:
                absolute = entry.model_copy(update={"feature_file": str(manifest.path_of(entry).resolve())})
                fobj.write(absolute.to_line() + "\n")
    logger.info("Wrote %d pairs and %d feature files to %s", len(manifest), len(stored), path)
    return path


def load_manifest(path: Union[str, Path], frontend: Optional[FrontendConfig] = None) -> CorpusManifest:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    entries = []
    with open(path, encoding="utf-8") as fobj:
        for lineno, raw in enumerate(fobj, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != len(MANIFEST_COLUMNS):
                raise ManifestError(
                    f"{path}:{lineno}: expected {len(MANIFEST_COLUMNS)} tab-separated fields, got {len(fields)}"
                )
            try:
                entries.append(ManifestEntry(**dict(zip(MANIFEST_COLUMNS, fields))))
            except ValueError as err:
                raise ManifestError(f"{path}:{lineno}: {err}") from err
    duplicate = _duplicate_id(entries)
    if duplicate is not None:
        raise ManifestError(f"{path}: duplicate pair id '{duplicate}'")
    manifest = CorpusManifest(
        entries=tuple(entries), root=path.parent, frontend=frontend or FrontendConfig()
    )
    manifest.check_files()
    logger.info("Loaded %d pairs from %s", len(manifest), path)
    return manifest


def derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """A uniformly random permutation of ``range(n)`` without fixed points."""
    if n < 2:
        raise CorpusError(f"a derangement needs at least 2 items, got {n}")
    identity = np.arange(n)
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == identity):
            return perm


def _edit(words: List[str], mode: MismatchMode, k: int, vocabulary: Sequence[str], rng) -> List[str]:
    if mode == MismatchMode.DELETE:
        drop = set(rng.choice(len(words), size=k, replace=False).tolist())
        return [w for i, w in enumerate(words) if i not in drop]
    if mode == MismatchMode.INSERT:
        slots = set(rng.choice(len(words) + k, size=k, replace=False).tolist())
        source = iter(words)
        return [
            vocabulary[int(rng.integers(len(vocabulary)))] if i in slots else next(source)
            for i in range(len(words) + k)
        ]
    out = list(words)
    for i in rng.choice(len(words), size=k, replace=False):
        choices = [w for w in vocabulary if w != words[i]]
        out[i] = choices[int(rng.integers(len(choices)))]
    return out


def make_mismatch_set(
    manifest: CorpusManifest,
    mode: Union[MismatchMode, str],
    k: int = 4,
    seed: int = 0,
    vocabulary: Sequence[str] = (),
) -> CorpusManifest:
    """
    One incorrect pair per correct pair of ``manifest``.

    ``reassign`` pairs every audio with another pair's script through a
    derangement; the edit modes delete, insert or substitute ``k`` words at
    positions sampled without replacement, inserted and substituted words
    coming uniformly from ``vocabulary``.
    """
    mode = MismatchMode(mode)
    if mode in (MismatchMode.NONE, MismatchMode.DEGENERATE):
        raise CorpusError(f"'{mode.value}' is not a mismatch construction mode")
    correct = manifest.correct()
    rng = np.random.default_rng(seed)
    incorrect = []
    if mode == MismatchMode.REASSIGN:
        if len(correct) < 2:
            raise CorpusError(f"reassignment needs at least 2 correct pairs, got {len(correct)}")
        perm = derangement(len(correct), rng)
        scripts = [correct[j].script for j in perm]
    else:
        if k < 1:
            raise CorpusError(f"k must be at least 1, got {k}")
        if mode != MismatchMode.DELETE and len(set(vocabulary)) < 2:
            raise CorpusError(f"'{mode.value}' needs a vocabulary of at least 2 words")
        scripts = []
        for entry in correct:
            words = entry.script.split()
            if len(words) <= k:
                raise CorpusError(
                    f"pair '{entry.pair_id}': script of {len(words)} words is too short for {k} edits"
                )
            scripts.append(" ".join(_edit(words, mode, k, vocabulary, rng)))
    for entry, script in zip(correct, scripts):
        incorrect.append(
            entry.model_copy(
                update={
                    "pair_id": f"{entry.pair_id}-{mode.value}",
                    "script": script,
                    "label": Label.INCORRECT,
                    "mode": mode,
                }
            )
        )
    logger.info("Built %d '%s' mismatched pairs", len(incorrect), mode.value)
    return manifest.derive(correct + incorrect)


def feature_name(pair_id: str) -> str:
    return f"{FEATURE_DIR}/{pair_id}{FEATURE_SUFFIX}"


SEGMENT_COLUMNS = ("phone", "feature_file", "start", "end")


def save_training_set(
    segments: Sequence[LabeledSegment], path: Union[str, Path], fingerprint: Optional[str] = None
) -> Path:
    """
    Write labeled training segments: the frames of every phone go to one
    feature file under ``features/`` and the TSV at ``path`` lists each
    segment's frame range in it.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    by_phone: Dict[str, List[np.ndarray]] = {}
    rows = []
    for seg in segments:
        chunks = by_phone.setdefault(seg.phone, [])
        start = sum(c.shape[0] for c in chunks)
        chunks.append(seg.frames)
        rows.append((seg.phone, f"{FEATURE_DIR}/train_{seg.phone}{FEATURE_SUFFIX}", start, start + seg.frames.shape[0]))
    for phone, chunks in by_phone.items():
        target = path.parent / FEATURE_DIR / f"train_{phone}{FEATURE_SUFFIX}"
        target.parent.mkdir(parents=True, exist_ok=True)
        write_features(target, FeatureMatrix(frames=np.vstack(chunks), fingerprint=fingerprint))
    with open(path, "w", encoding="utf-8") as fobj:
        fobj.write("#" + "\t".join(SEGMENT_COLUMNS) + "\n")
        for phone, name, start, end in rows:
            fobj.write(f"{phone}\t{name}\t{start}\t{end}\n")
    logger.info("Wrote %d training segments for %d phones to %s", len(rows), len(by_phone), path)
    return path


def load_training_set(path: Union[str, Path]) -> Tuple[List[LabeledSegment], Optional[str]]:
    """Segments listed in ``path`` and the frontend fingerprint their features share."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"training set not found: {path}")
    files: Dict[str, FeatureMatrix] = {}
    segments = []
    with open(path, encoding="utf-8") as fobj:
        for lineno, raw in enumerate(fobj, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != len(SEGMENT_COLUMNS):
                raise ManifestError(
                    f"{path}:{lineno}: expected {len(SEGMENT_COLUMNS)} tab-separated fields, got {len(fields)}"
                )
            phone, name = fields[0], fields[1]
            try:
                start, end = int(fields[2]), int(fields[3])
            except ValueError as err:
                raise ManifestError(f"{path}:{lineno}: bad frame range") from err
            if name not in files:
                feature_path = Path(name) if Path(name).is_absolute() else path.parent / name
                if not feature_path.is_file():
                    raise ManifestError(f"{path}:{lineno}: missing file {feature_path}")
                files[name] = read_features(feature_path)
            frames = files[name].frames
            if not 0 <= start < end <= frames.shape[0]:
                raise ManifestError(f"{path}:{lineno}: frames [{start}, {end}) outside {name}")
            segments.append(LabeledSegment(phone=phone, frames=frames[start:end]))
    fingerprints = {f.fingerprint for f in files.values()}
    fingerprint = fingerprints.pop() if len(fingerprints) == 1 else None
    logger.info("Loaded %d training segments from %s", len(segments), path)
    return segments, fingerprint
