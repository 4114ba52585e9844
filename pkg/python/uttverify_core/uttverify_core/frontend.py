from __future__ import annotations

import hashlib
import logging
from pathlib import Path
from typing import Literal, Optional, TextIO, Union

import numpy as np
import scipy.fft
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator
from scipy.io import wavfile

from .exceptions import FeatureDimensionError, FrameError, UnsupportedAudioError

logger = logging.getLogger(__file__)

PCM_SCALE = 32768.0
FEATURE_DIMS = (13, 39)


def _frozen(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


class Waveform(BaseModel):
    """
    A mono utterance.

    :param samples: amplitudes in [-1, 1].
    :param sample_rate: sampling rate in Hz.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    samples: np.ndarray
    sample_rate: int

    @field_validator("samples", mode="before")
    @classmethod
    def _check_samples(cls, value):
        samples = np.array(value, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("samples must be a one-dimensional sequence")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        return _frozen(samples)

    @field_validator("sample_rate")
    @classmethod
    def _check_rate(cls, value: int) -> int:
        if value <= 0:
            raise ValueError(f"sample_rate must be positive, got {value}")
        return value

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


class FeatureMatrix(BaseModel):
    """
    Per-frame acoustic features, one row per frame.

    ``fingerprint`` identifies the frontend configuration that produced the
    frames (``None`` when unknown, ``"synthetic"`` for generated corpora).
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    frames: np.ndarray
    frame_shift_ms: float = 10.0
    fingerprint: Optional[str] = None

    @field_validator("frames", mode="before")
    @classmethod
    def _check_frames(cls, value):
        frames = np.array(value, dtype=np.float64)
        if frames.ndim != 2:
            raise ValueError("frames must be a T x D matrix")
        if frames.shape[0] < 1:
            raise ValueError("a feature matrix needs at least one frame")
        if frames.shape[1] not in FEATURE_DIMS:
            raise ValueError(f"feature dimension must be 13 or 39, got {frames.shape[1]}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("feature values must be finite")
        return _frozen(frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def __len__(self) -> int:
        return self.num_frames


class FrontendConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    frame_length_ms: float = 25.0
    frame_shift_ms: float = 10.0
    pre_emphasis: float = 0.97
    num_mel_filters: int = 26
    num_ceps: Literal[13] = 13
    fft_size: Optional[int] = None
    delta_window: int = 2
    log_floor: float = float(np.finfo(np.float64).tiny)
    low_freq_hz: float = 0.0
    high_freq_hz: Optional[float] = None

    @model_validator(mode="after")
    def _check(self) -> "FrontendConfig":
        if self.frame_length_ms <= 0 or self.frame_shift_ms <= 0:
            raise ValueError("frame length and shift must be positive")
        if self.frame_shift_ms > self.frame_length_ms:
            raise ValueError("frame_shift_ms must not exceed frame_length_ms")
        if self.num_ceps > self.num_mel_filters:
            raise ValueError("num_ceps must not exceed num_mel_filters")
        if self.fft_size is not None and (
            self.fft_size < 1 or self.fft_size & (self.fft_size - 1)
        ):
            raise ValueError(f"fft_size must be a power of two, got {self.fft_size}")
        if self.delta_window < 1:
            raise ValueError("delta_window must be at least 1")
        if not self.log_floor > 0:
            raise ValueError("log_floor must be positive")
        return self

    def frame_samples(self, sample_rate: int) -> int:
        return int(round(self.frame_length_ms * sample_rate / 1000.0))

    def shift_samples(self, sample_rate: int) -> int:
        return int(round(self.frame_shift_ms * sample_rate / 1000.0))

    def nfft(self, sample_rate: int) -> int:
        frame = self.frame_samples(sample_rate)
        if self.fft_size is not None:
            if self.fft_size < frame:
                raise FrameError(
                    f"fft_size {self.fft_size} is smaller than a frame ({frame} samples)"
                )
            return self.fft_size
        nfft = 1
        while nfft < frame:
            nfft *= 2
        return nfft

    def fingerprint(self) -> str:
        return hashlib.sha256(self.model_dump_json().encode("utf-8")).hexdigest()[:16]


def load_wav(path: Union[str, Path]) -> Waveform:
    """
    Read a 16-bit PCM mono WAV file, normalizing samples by 32768.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"No such audio file: {path}")
    try:
        sample_rate, data = wavfile.read(path)
    except ValueError as e:
        raise UnsupportedAudioError(f"{path}: unreadable WAV ({e})") from e

    if data.ndim != 1:
        raise UnsupportedAudioError(
            f"{path}: {data.shape[1]} channels, only mono is supported"
        )
    if data.dtype.kind == "f":
        raise UnsupportedAudioError(f"{path}: non-PCM (floating point) encoding")
    if data.dtype != np.int16:
        raise UnsupportedAudioError(
            f"{path}: samples are not 16-bit PCM (decoded as {data.dtype}), only 16-bit PCM is supported"
        )
    return Waveform(samples=data.astype(np.float64) / PCM_SCALE, sample_rate=sample_rate)


def write_wav(path: Union[str, Path], waveform: Waveform) -> None:
    pcm = np.clip(np.round(waveform.samples * PCM_SCALE), -PCM_SCALE, PCM_SCALE - 1)
    wavfile.write(Path(path), waveform.sample_rate, pcm.astype(np.int16))


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def filter_edges_hz(cfg: FrontendConfig, sample_rate: int) -> np.ndarray:
    """Lower edge, centers and upper edge of the mel filters, in Hz."""
    high = cfg.high_freq_hz if cfg.high_freq_hz is not None else sample_rate / 2.0
    if not 0 <= cfg.low_freq_hz < high <= sample_rate / 2.0:
        raise ValueError(f"invalid mel band [{cfg.low_freq_hz}, {high}] Hz")
    mels = np.linspace(hz_to_mel(cfg.low_freq_hz), hz_to_mel(high), cfg.num_mel_filters + 2)
    return mel_to_hz(mels)


def mel_filterbank(cfg: FrontendConfig, sample_rate: int) -> np.ndarray:
    """
    Triangular mel filters as a (num_mel_filters, nfft // 2 + 1) weight matrix.

    Filter ``k`` rises linearly from edge ``k`` to its center ``k + 1`` and
    falls back to zero at edge ``k + 2``, with unit peak.
    """
    nfft = cfg.nfft(sample_rate)
    edges = filter_edges_hz(cfg, sample_rate)
    freqs = np.arange(nfft // 2 + 1) * sample_rate / nfft
    lower = edges[:-2, None]
    center = edges[1:-1, None]
    upper = edges[2:, None]
    rising = (freqs[None, :] - lower) / (center - lower)
    falling = (upper - freqs[None, :]) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def _frames(samples: np.ndarray, frame_len: int, shift: int) -> np.ndarray:
    if len(samples) < frame_len:
        raise FrameError(
            f"signal of {len(samples)} samples is shorter than one frame ({frame_len} samples)"
        )
    return sliding_window_view(samples, frame_len)[::shift]


def power_spectrum(w: Waveform, cfg: FrontendConfig) -> np.ndarray:
    """Per-frame pre-emphasized, Hamming-windowed power spectrum."""
    frame_len = cfg.frame_samples(w.sample_rate)
    shift = cfg.shift_samples(w.sample_rate)
    nfft = cfg.nfft(w.sample_rate)

    frames = _frames(w.samples, frame_len, shift)
    emphasized = np.array(frames)
    emphasized[:, 1:] -= cfg.pre_emphasis * frames[:, :-1]
    windowed = emphasized * np.hamming(frame_len)
    return np.abs(scipy.fft.rfft(windowed, n=nfft, axis=1)) ** 2 / nfft


def log_mel_energies(w: Waveform, cfg: FrontendConfig) -> np.ndarray:
    energies = power_spectrum(w, cfg) @ mel_filterbank(cfg, w.sample_rate).T
    return np.log(np.maximum(energies, cfg.log_floor))


def dct_ii(log_energies: np.ndarray, num_ceps: int) -> np.ndarray:
    """Orthonormal DCT-II over the last axis, keeping coefficients 0..num_ceps-1."""
    return scipy.fft.dct(log_energies, type=2, norm="ortho", axis=-1)[..., :num_ceps]


def compute_mfcc(w: Waveform, cfg: Optional[FrontendConfig] = None) -> FeatureMatrix:
    cfg = cfg or FrontendConfig()
    ceps = dct_ii(log_mel_energies(w, cfg), cfg.num_ceps)
    logger.debug("Computed %d MFCC frames from %.3f s of audio", len(ceps), w.duration)
    return FeatureMatrix(
        frames=ceps, frame_shift_ms=cfg.frame_shift_ms, fingerprint=cfg.fingerprint()
    )


def _regression_deltas(c: np.ndarray, window: int) -> np.ndarray:
    num_frames = c.shape[0]
    padded = np.pad(c, ((window, window), (0, 0)), mode="edge")
    denom = 2.0 * sum(n * n for n in range(1, window + 1))
    delta = np.zeros_like(c)
    for n in range(1, window + 1):
        ahead = padded[window + n : window + n + num_frames]
        behind = padded[window - n : window - n + num_frames]
        delta += n * (ahead - behind)
    return delta / denom


def append_deltas(feat: FeatureMatrix, window: int = 2) -> FeatureMatrix:
    """
    Append regression deltas and delta-deltas, clamping at the edge frames.
    """
    if feat.dim != 13:
        raise FeatureDimensionError(f"deltas need 13-dimensional input, got {feat.dim}")
    if window < 1:
        raise ValueError("delta window must be at least 1")
    delta = _regression_deltas(feat.frames, window)
    delta2 = _regression_deltas(delta, window)
    return FeatureMatrix(
        frames=np.hstack([feat.frames, delta, delta2]),
        frame_shift_ms=feat.frame_shift_ms,
        fingerprint=feat.fingerprint,
    )


def featurize(w: Waveform, cfg: Optional[FrontendConfig] = None) -> FeatureMatrix:
    cfg = cfg or FrontendConfig()
    return append_deltas(compute_mfcc(w, cfg), cfg.delta_window)


def write_features(target: Union[str, Path, TextIO], feat: FeatureMatrix) -> None:
    """
    Dump features as text: a ``# T D frame_shift_ms fingerprint`` header, then
    one line of space separated values per frame.
    """
    if isinstance(target, (str, Path)):
        with open(target, "w", encoding="utf-8") as fobj:
            write_features(fobj, feat)
        return
    fingerprint = feat.fingerprint or "-"
    target.write(
        f"# {feat.num_frames} {feat.dim} {feat.frame_shift_ms!r} {fingerprint}\n"
    )
    np.savetxt(target, feat.frames, fmt="%.17g")


def read_features(path: Union[str, Path]) -> FeatureMatrix:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fobj:
        header = fobj.readline().split()
        if len(header) != 5 or header[0] != "#":
            raise FeatureDimensionError(f"{path}: missing '# T D frame_shift_ms fingerprint' header")
        try:
            num_frames, dim = int(header[1]), int(header[2])
            shift = float(header[3])
        except ValueError as e:
            raise FeatureDimensionError(f"{path}: malformed header") from e
        try:
            frames = np.loadtxt(fobj, dtype=np.float64, ndmin=2)
        except ValueError as e:
            raise FeatureDimensionError(f"{path}: unreadable feature values ({e})") from e
    if frames.shape != (num_frames, dim):
        raise FeatureDimensionError(
            f"{path}: header announces {num_frames}x{dim}, file holds {frames.shape[0]}x{frames.shape[1]}"
        )
    fingerprint = None if header[4] == "-" else header[4]
    try:
        return FeatureMatrix(frames=frames, frame_shift_ms=shift, fingerprint=fingerprint)
    except ValidationError as e:
        messages = "; ".join(err["msg"] for err in e.errors())
        raise FeatureDimensionError(f"{path}: invalid features: {messages}") from None
