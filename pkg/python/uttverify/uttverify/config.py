from __future__ import annotations

from pathlib import Path
from typing import Dict, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from uttverify_core.aligner import AlignOptions
from uttverify_core.frontend import FrontendConfig
from uttverify_core.lexicon import DEFAULT_EXPANSION_CAP
from uttverify_core.verifier import Method, VerifierConfig
from uttverify_lab.manifest import MismatchMode

Command = Literal["train", "verify", "align", "gen-corpus", "evaluate", "sweep"]

REQUIRED: Dict[str, Tuple[str, ...]] = {
    "train": ("inventory", "output"),
    "verify": ("model", "script", "input"),
    "align": ("model", "script", "input"),
    "gen-corpus": ("output",),
    "evaluate": ("model", "manifest"),
    "sweep": ("model", "manifest"),
}

FRONTEND_FIELDS = ("frame_length_ms", "frame_shift_ms", "pre_emphasis", "num_mel_filters", "delta_window")


def read_config_file(path: Union[str, Path]) -> Dict[str, str]:
    """``key=value`` lines; blank lines and ``#`` comments are skipped."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    values = {}
    with open(path, encoding="utf-8") as fobj:
        for lineno, raw in enumerate(fobj, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep or not key.strip():
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _split(value, sep: str = ","):
    if isinstance(value, str):
        return tuple(v.strip() for v in value.split(sep) if v.strip())
    return value


class RunConfig(BaseModel):
    """
    Everything one CLI invocation needs. Values come from ``--config`` and
    the command line, the latter winning.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    command: Command

    # paths
    model: Optional[Path] = None
    lexicon: Optional[Path] = None
    inventory: Optional[Path] = None
    manifest: Optional[Path] = None
    segments: Optional[Path] = None
    output: Optional[Path] = None
    input: Optional[Path] = None
    script: Optional[str] = None

    # decision
    method: Method = Method.APR
    methods: Tuple[Method, ...] = (Method.LRT, Method.APR)
    tau: float = 0.0
    theta: float = 1.5
    optimize: bool = False
    grid: Optional[Tuple[float, float, float]] = None

    # alignment
    min_duration: int = 3
    expansion_cap: int = DEFAULT_EXPANSION_CAP

    # training
    components: int = 4
    iterations: int = 100
    variance_floor: float = 1e-4
    synthetic: bool = False
    per_phone: int = 40

    # synthetic corpora
    spread: float = 1.0
    pairs: int = 200
    words: Tuple[int, int] = (2, 5)
    mode: MismatchMode = MismatchMode.NONE
    edits: int = 4
    gamma: float = 1.0
    offset: float = 0.0
    gain_std: float = 0.0
    style: str = "read"
    degenerate: float = 0.0
    perturbation: float = 0.0
    training_set: bool = False

    # front end overrides
    frame_length_ms: Optional[float] = None
    frame_shift_ms: Optional[float] = None
    pre_emphasis: Optional[float] = None
    num_mel_filters: Optional[int] = None
    delta_window: Optional[int] = None

    seed: int = 0
    workers: Optional[int] = None
    verbose: int = 0

    @field_validator("methods", "words", mode="before")
    @classmethod
    def _comma_list(cls, value):
        return _split(value)

    @field_validator("grid", mode="before")
    @classmethod
    def _grid(cls, value):
        return _split(value, ":")

    @model_validator(mode="after")
    def _check(self) -> "RunConfig":
        missing = [name for name in REQUIRED[self.command] if getattr(self, name) is None]
        if missing:
            raise ValueError(f"'{self.command}' needs --{missing[0].replace('_', '-')}")
        if self.command == "train" and (self.segments is None) == (not self.synthetic):
            raise ValueError("'train' needs exactly one of --segments and --synthetic")
        if not self.methods:
            raise ValueError("at least one method is needed")
        if self.grid is not None:
            low, high, step = self.grid
            if not step > 0 or high < low:
                raise ValueError(f"threshold grid {low}:{high}:{step} is empty")
        if self.pairs < 1 or self.edits < 1:
            raise ValueError("pairs and edits must be at least 1")
        if not 0.0 <= self.degenerate <= 1.0:
            raise ValueError(f"degenerate fraction {self.degenerate} is not in [0, 1]")
        if self.workers is not None and self.workers < 1:
            raise ValueError(f"workers must be at least 1, got {self.workers}")
        self.verifier_config()
        self.align_options()
        self.frontend()
        return self

    def verifier_config(self) -> VerifierConfig:
        return VerifierConfig(tau=self.tau, theta=self.theta, method=self.method)

    def align_options(self) -> AlignOptions:
        return AlignOptions(min_duration=self.min_duration, expansion_cap=self.expansion_cap)

    def frontend(self) -> FrontendConfig:
        overrides = {name: getattr(self, name) for name in FRONTEND_FIELDS if getattr(self, name) is not None}
        return FrontendConfig(**overrides)

    def threshold(self, method: Method) -> float:
        return self.tau if method == Method.LRT else self.theta
