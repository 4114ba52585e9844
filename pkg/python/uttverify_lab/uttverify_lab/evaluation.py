from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from uttverify_core.acoustic_model import AcousticModel
from uttverify_core.aligner import AlignOptions
from uttverify_core.exceptions import CorpusError, FingerprintMismatchError
from uttverify_core.lexicon import Lexicon
from uttverify_core.verifier import (
    Decision,
    Method,
    PhoneVerdict,
    VerdictReport,
    Verifier,
    VerifierConfig,
    report_header,
)

from .manifest import CorpusManifest, Label, ManifestEntry, MismatchMode

logger = logging.getLogger(__file__)


class ScoredPair(BaseModel):
    """
    Threshold-independent scores of one manifest pair. A pair the pipeline
    could not score keeps ``error`` and the worst scores, so it is rejected
    at every threshold.
    """

    model_config = ConfigDict(frozen=True)

    pair_id: str
    label: Label
    mode: MismatchMode = MismatchMode.NONE
    style: str = "read"
    llr: float
    apr: float
    N: int
    inventory_size: int
    per_phone: Tuple[PhoneVerdict, ...] = ()
    oov_words: Tuple[str, ...] = ()
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    def score(self, method: Method, tau: float = 0.0) -> float:
        if method == Method.LRT:
            return self.llr
        if method == Method.APR:
            return self.apr
        return float(self.inventory_size) if self.llr <= tau else self.apr

    def report(self, cfg: VerifierConfig) -> VerdictReport:
        return VerdictReport(
            pair_id=self.pair_id,
            method=cfg.method,
            llr=self.llr,
            apr=self.apr,
            two_stage=self.score(Method.APR2STAGE, cfg.tau),
            decision=accepts(cfg.method, self.score(cfg.method, cfg.tau), _threshold(cfg)),
            tau=cfg.tau,
            theta=cfg.theta,
            N=self.N,
            inventory_size=self.inventory_size,
            per_phone=self.per_phone,
            oov_words=self.oov_words,
        )


def _threshold(cfg: VerifierConfig) -> float:
    return cfg.tau if cfg.method == Method.LRT else cfg.theta


def accepts(method: Method, score: float, threshold: float) -> Decision:
    """Same rule as ``decide``, for any threshold value on the sweep grid."""
    if method == Method.LRT:
        return Decision.MATCH if score > threshold else Decision.MISMATCH
    return Decision.MATCH if score < threshold else Decision.MISMATCH


def _score_entry(verifier: Verifier, manifest: CorpusManifest, entry: ManifestEntry) -> ScoredPair:
    size = verifier.model.inventory.size
    try:
        feat = manifest.features(entry)
        report = verifier.verify(entry.script, feat, pair_id=entry.pair_id)
    except FingerprintMismatchError:
        raise
    except (ValueError, OSError) as err:
        # unreadable audio or features fail the pair, not the run
        logger.warning("%s: scoring failed: %s", entry.pair_id, err)
        return ScoredPair(
            pair_id=entry.pair_id,
            label=entry.label,
            mode=entry.mode,
            style=entry.style,
            llr=-math.inf,
            apr=float(size),
            N=0,
            inventory_size=size,
            error=str(err),
        )
    logger.debug("%s: LLR %.4f APR %.4f", entry.pair_id, report.llr, report.apr)
    return ScoredPair(
        pair_id=entry.pair_id,
        label=entry.label,
        mode=entry.mode,
        style=entry.style,
        llr=report.llr,
        apr=report.apr,
        N=report.N,
        inventory_size=size,
        per_phone=report.per_phone,
        oov_words=report.oov_words,
    )


def score_manifest(
    manifest: CorpusManifest,
    model: AcousticModel,
    lexicon: Lexicon,
    options: Optional[AlignOptions] = None,
    workers: Optional[int] = None,
) -> List[ScoredPair]:
    """
    Align and score every pair once; results are ordered by pair id whatever
    the scheduling. Unreadable audio or features fail their pair only; a
    model/feature fingerprint mismatch aborts the run.
    """
    verifier = Verifier(model, lexicon, options=options)
    workers = workers or os.cpu_count() or 1
    with ThreadPoolExecutor(max_workers=workers) as pool:
        scored = list(pool.map(lambda e: _score_entry(verifier, manifest, e), manifest.entries))
    failed = sum(p.failed for p in scored)
    logger.info("Scored %d pairs (%d failed) with %d workers", len(scored), failed, workers)
    return sorted(scored, key=lambda p: p.pair_id)


class EvalResult(BaseModel):
    """Decisions of one method at one threshold; ``correct`` is the positive class."""

    model_config = ConfigDict(frozen=True)

    method: Method
    threshold: float
    tau: float = 0.0
    accuracy: float
    tp: int
    tn: int
    fp: int
    fn: int
    pairs: Tuple[ScoredPair, ...] = ()

    @model_validator(mode="after")
    def _check(self) -> "EvalResult":
        total = self.tp + self.tn + self.fp + self.fn
        if self.pairs and total != len(self.pairs):
            raise ValueError(f"counts sum to {total}, expected {len(self.pairs)}")
        if total and self.accuracy != (self.tp + self.tn) / total:
            raise ValueError("accuracy does not match the counts")
        return self

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def config(self) -> VerifierConfig:
        """Verifier settings of this result (``theta`` falls back to 1.5 for LRT)."""
        if self.method == Method.LRT:
            return VerifierConfig(method=self.method, tau=self.threshold)
        return VerifierConfig(method=self.method, tau=self.tau, theta=self.threshold)

    def summary(self) -> Dict[str, str]:
        return {
            "method": self.method.value,
            "threshold": repr(self.threshold),
            "tau": repr(self.tau),
            "accuracy": repr(self.accuracy),
            "tp": str(self.tp),
            "tn": str(self.tn),
            "fp": str(self.fp),
            "fn": str(self.fn),
        }


def evaluate_scores(
    pairs: Sequence[ScoredPair], method: Union[Method, str], threshold: float, tau: float = 0.0
) -> EvalResult:
    method = Method(method)
    counts = {"tp": 0, "tn": 0, "fp": 0, "fn": 0}
    for pair in pairs:
        match = accepts(method, pair.score(method, tau), threshold) == Decision.MATCH
        if pair.label == Label.CORRECT:
            counts["tp" if match else "fn"] += 1
        else:
            counts["fp" if match else "tn"] += 1
    total = len(pairs)
    accuracy = (counts["tp"] + counts["tn"]) / total if total else 0.0
    return EvalResult(
        method=method, threshold=threshold, tau=tau, accuracy=accuracy, pairs=tuple(pairs), **counts
    )


def evaluate(
    manifest: CorpusManifest,
    model: AcousticModel,
    lexicon: Lexicon,
    method: Union[Method, str],
    threshold: float,
    tau: float = 0.0,
    options: Optional[AlignOptions] = None,
    workers: Optional[int] = None,
) -> EvalResult:
    """Run the full pipeline on every pair and decide at ``threshold``."""
    pairs = score_manifest(manifest, model, lexicon, options=options, workers=workers)
    return evaluate_scores(pairs, method, threshold, tau)


def candidate_thresholds(pairs: Sequence[ScoredPair], method: Union[Method, str], tau: float = 0.0) -> List[float]:
    """
    Midpoints between consecutive distinct finite scores plus one point
    beyond either end; every distinct decision set is reached by one of them.
    """
    method = Method(method)
    scores = np.unique([s for s in (p.score(method, tau) for p in pairs) if math.isfinite(s)])
    if scores.size == 0:
        if method == Method.LRT:
            return [0.0]
        return [float(pairs[0].inventory_size) if pairs else 2.0]
    candidates = [float(scores[0] - 1.0), *((scores[:-1] + scores[1:]) / 2.0).tolist(), float(scores[-1] + 1.0)]
    if method != Method.LRT:
        size = float(pairs[0].inventory_size)
        candidates = [c for c in candidates if 1.0 < c <= size] or [size]
    return candidates


def theta_grid(inventory_size: int, step: float = 0.5, start: float = 1.0) -> List[float]:
    return np.arange(start, inventory_size + step / 2, step).tolist()


class SweepResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    best: EvalResult
    curve: Tuple[EvalResult, ...]

    @property
    def thresholds(self) -> List[float]:
        return [r.threshold for r in self.curve]

    @property
    def accuracies(self) -> List[float]:
        return [r.accuracy for r in self.curve]

    def plateau(self) -> Tuple[float, float]:
        """First and last threshold of the best-accuracy run that starts at ``best``."""
        start = self.thresholds.index(self.best.threshold)
        end = start
        while end + 1 < len(self.curve) and self.curve[end + 1].accuracy == self.best.accuracy:
            end += 1
        return self.curve[start].threshold, self.curve[end].threshold

    def plateau_centre(self) -> float:
        low, high = self.plateau()
        return (low + high) / 2.0


def sweep_threshold(
    pairs: Sequence[ScoredPair],
    method: Union[Method, str],
    grid: Optional[Iterable[float]] = None,
    tau: float = 0.0,
) -> SweepResult:
    """
    Evaluate every grid point (by default every candidate threshold) and
    return the most accurate one, ties going to the smallest threshold,
    together with the full curve in increasing threshold order.
    """
    method = Method(method)
    points = sorted(set(candidate_thresholds(pairs, method, tau) if grid is None else grid))
    if not points:
        raise CorpusError("threshold grid is empty")
    if any(math.isnan(t) for t in points):
        raise CorpusError("threshold grid contains NaN")
    curve = tuple(evaluate_scores(pairs, method, t, tau) for t in points)
    best = curve[0]
    for result in curve[1:]:
        if result.accuracy > best.accuracy:
            best = result
    logger.info(
        "%s sweep over %d thresholds: best %.6g with accuracy %.4f",
        method.value,
        len(points),
        best.threshold,
        best.accuracy,
    )
    return SweepResult(best=best, curve=curve)


def optimize(pairs: Sequence[ScoredPair], method: Union[Method, str], tau: float = 0.0) -> EvalResult:
    """Evaluate at the centre of the best-accuracy plateau of the candidate sweep."""
    sweep = sweep_threshold(pairs, method, tau=tau)
    return evaluate_scores(pairs, method, sweep.plateau_centre(), tau)


class MethodRow(BaseModel):
    """One row of a method comparison: accuracy and change against the baseline."""

    model_config = ConfigDict(frozen=True)

    result: EvalResult
    delta: float
    relative: float


def _relative(delta: float, base: float) -> float:
    return 100.0 * delta / base if base else 0.0


def method_rows(results: Sequence[EvalResult]) -> List[MethodRow]:
    """Rows with accuracy deltas against the first result."""
    base = results[0].accuracy
    return [
        MethodRow(result=r, delta=r.accuracy - base, relative=_relative(r.accuracy - base, base))
        for r in results
    ]


def compare_methods(
    pairs: Sequence[ScoredPair], methods: Sequence[Method] = (Method.LRT, Method.APR)
) -> List[MethodRow]:
    """Optimized accuracy per method; deltas are against the first method."""
    return method_rows([optimize(pairs, m) for m in methods])


class DegradationRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    method: Method
    threshold: float
    read: EvalResult
    shifted: EvalResult

    @property
    def delta(self) -> float:
        return self.shifted.accuracy - self.read.accuracy

    @property
    def relative(self) -> float:
        return _relative(self.delta, self.read.accuracy)


def degradation_report(
    read_pairs: Sequence[ScoredPair],
    shifted_pairs: Sequence[ScoredPair],
    methods: Sequence[Method] = (Method.LRT, Method.APR),
) -> List[DegradationRow]:
    """
    Thresholds optimized on the read-style pairs, applied unchanged to the
    shifted pairs.
    """
    rows = []
    for method in methods:
        read = optimize(read_pairs, method)
        shifted = evaluate_scores(shifted_pairs, method, read.threshold)
        logger.info(
            "%s: read %.4f, shifted %.4f at %.6g", method.value, read.accuracy, shifted.accuracy, read.threshold
        )
        rows.append(DegradationRow(method=method, threshold=read.threshold, read=read, shifted=shifted))
    return rows


class TwoStageReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    theta: float
    tau: float
    apr: EvalResult
    two_stage: EvalResult
    flipped: Tuple[str, ...]

    @property
    def delta(self) -> float:
        return self.two_stage.accuracy - self.apr.accuracy

    @property
    def relative(self) -> float:
        return _relative(self.delta, self.apr.accuracy)


def two_stage_report(pairs: Sequence[ScoredPair]) -> TwoStageReport:
    """
    APR at its optimized theta against the two-stage score at the same theta,
    with tau chosen by sweeping the LLR gate (``-inf`` keeps plain APR).
    """
    apr = optimize(pairs, Method.APR)
    taus = [-math.inf] + candidate_thresholds(pairs, Method.LRT)
    best = None
    for tau in taus:
        result = evaluate_scores(pairs, Method.APR2STAGE, apr.threshold, tau)
        if best is None or result.accuracy > best.accuracy:
            best = result
    flipped = tuple(
        p.pair_id
        for p in pairs
        if accepts(Method.APR, p.apr, apr.threshold)
        != accepts(Method.APR2STAGE, p.score(Method.APR2STAGE, best.tau), apr.threshold)
    )
    logger.info(
        "Two-stage: APR %.4f, two-stage %.4f (tau %.6g), %d flipped",
        apr.accuracy,
        best.accuracy,
        best.tau,
        len(flipped),
    )
    return TwoStageReport(theta=apr.threshold, tau=best.tau, apr=apr, two_stage=best, flipped=flipped)


class EditModeReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    method: Method
    threshold: float
    results: Dict[MismatchMode, EvalResult]

    @property
    def average(self) -> float:
        return float(np.mean([r.accuracy for r in self.results.values()]))


def edit_mode_report(
    pairs_by_mode: Mapping[MismatchMode, Sequence[ScoredPair]],
    method: Method = Method.APR,
    threshold: Optional[float] = None,
) -> EditModeReport:
    """
    Accuracy per mismatch mode at one shared threshold; unless given, the
    threshold is optimized on all pairs pooled.
    """
    if threshold is None:
        pooled = {p.pair_id: p for pairs in pairs_by_mode.values() for p in pairs}
        threshold = optimize(sorted(pooled.values(), key=lambda p: p.pair_id), method).threshold
    results = {mode: evaluate_scores(pairs, method, threshold) for mode, pairs in pairs_by_mode.items()}
    return EditModeReport(method=method, threshold=threshold, results=results)


class ScoreHistogram(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    method: Method
    edges: np.ndarray
    counts: Dict[Label, np.ndarray]

    def write(self, target: Union[str, Path]) -> None:
        with open(target, "w", encoding="utf-8") as fobj:
            fobj.write("#low\thigh\t" + "\t".join(label.value for label in Label) + "\n")
            for i in range(len(self.edges) - 1):
                row = [repr(float(self.edges[i])), repr(float(self.edges[i + 1]))]
                row += [str(int(self.counts[label][i])) for label in Label]
                fobj.write("\t".join(row) + "\n")


def score_histogram(
    pairs: Sequence[ScoredPair], method: Union[Method, str], bins: int = 30, tau: float = 0.0
) -> ScoreHistogram:
    """Distribution of finite scores per label on shared bins."""
    method = Method(method)
    scores = {
        label: np.array(
            [s for s in (p.score(method, tau) for p in pairs if p.label == label) if math.isfinite(s)]
        )
        for label in Label
    }
    everything = np.concatenate(list(scores.values()))
    if everything.size == 0:
        raise CorpusError("no finite scores to histogram")
    edges = np.histogram_bin_edges(everything, bins=bins)
    counts = {label: np.histogram(values, bins=edges)[0] for label, values in scores.items()}
    return ScoreHistogram(method=method, edges=edges, counts=counts)


class RankStability(BaseModel):
    """
    How far the style shift moves correct pairs towards the mismatched ones,
    as a fraction of the correct-to-mismatched gap, for LLR and APR.
    """

    model_config = ConfigDict(frozen=True)

    llr_degradation: float
    apr_increase: float
    ratio: float = 0.2

    @property
    def stable(self) -> bool:
        return self.apr_increase < self.ratio * self.llr_degradation


def _mean(pairs: Iterable[ScoredPair], attr: str, label: Label) -> float:
    values = [getattr(p, attr) for p in pairs if p.label == label and not p.failed]
    if not values:
        raise CorpusError(f"no scored '{label.value}' pairs")
    return math.fsum(values) / len(values)


def rank_stability(
    read: Sequence[ScoredPair],
    shifted: Sequence[ScoredPair],
    mismatched: Sequence[ScoredPair],
    ratio: float = 0.2,
) -> RankStability:
    llr_read = _mean(read, "llr", Label.CORRECT)
    apr_read = _mean(read, "apr", Label.CORRECT)
    llr_gap = llr_read - _mean(mismatched, "llr", Label.INCORRECT)
    apr_gap = _mean(mismatched, "apr", Label.INCORRECT) - apr_read
    if llr_gap <= 0 or apr_gap <= 0:
        raise CorpusError("mismatched pairs do not score worse than correct ones")
    return RankStability(
        llr_degradation=(llr_read - _mean(shifted, "llr", Label.CORRECT)) / llr_gap,
        apr_increase=(_mean(shifted, "apr", Label.CORRECT) - apr_read) / apr_gap,
        ratio=ratio,
    )


def write_eval_result(target: Union[str, Path], result: EvalResult) -> None:
    """Per-pair verdict records followed by a ``#``-prefixed summary block."""
    cfg = result.config()
    with open(target, "w", encoding="utf-8") as fobj:
        fobj.write(report_header() + "\n")
        for pair in result.pairs:
            fobj.write(pair.report(cfg).to_line() + "\n")
        for key, value in result.summary().items():
            fobj.write(f"# {key}\t{value}\n")


def write_curve(target: Union[str, Path], sweep: SweepResult) -> None:
    with open(target, "w", encoding="utf-8") as fobj:
        fobj.write("#threshold\taccuracy\ttp\ttn\tfp\tfn\n")
        for r in sweep.curve:
            fobj.write(f"{r.threshold!r}\t{r.accuracy!r}\t{r.tp}\t{r.tn}\t{r.fp}\t{r.fn}\n")
