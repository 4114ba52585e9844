"""
Seeded end-to-end experiments on synthetic corpora: method separation,
cross-style degradation, the two-stage gate, the word-edit mismatch modes
and the rank stability of a style shift.
"""

from __future__ import annotations

import logging
from typing import Dict, List, Mapping, Optional, Tuple

from pydantic import BaseModel, ConfigDict

from uttverify_core.acoustic_model import SYNTHETIC_FINGERPRINT, AcousticModel, train_em
from uttverify_core.lexicon import Lexicon, toy_inventory, toy_lexicon
from uttverify_core.verifier import Method

from .evaluation import (
    DegradationRow,
    EditModeReport,
    MethodRow,
    RankStability,
    ScoredPair,
    TwoStageReport,
    compare_methods,
    degradation_report,
    edit_mode_report,
    rank_stability,
    score_manifest,
    two_stage_report,
)
from .generator import GeneratorSpec, StyleShift, spike_degenerate, synthesize_corpus, training_segments
from .manifest import EDIT_MODES, CorpusManifest, MismatchMode, make_mismatch_set

logger = logging.getLogger(__file__)


class LabSetup(BaseModel):
    """A trained model, the generator its test data comes from and the lexicon."""

    model_config = ConfigDict(frozen=True)

    lexicon: Lexicon
    spec: GeneratorSpec
    model: AcousticModel
    workers: Optional[int] = None

    def corpus(
        self,
        n: int,
        words: Tuple[int, int],
        shift: Optional[StyleShift] = None,
        style: str = "read",
        seed: int = 0,
    ) -> CorpusManifest:
        return synthesize_corpus(self.lexicon, self.spec, n, words=words, shift=shift, style=style, seed=seed)

    def mismatched(self, manifest: CorpusManifest, mode: MismatchMode, k: int = 4, seed: int = 0) -> CorpusManifest:
        return make_mismatch_set(manifest, mode, k=k, seed=seed, vocabulary=self.lexicon.words())

    def score(self, manifest: CorpusManifest) -> List[ScoredPair]:
        return score_manifest(manifest, self.model, self.lexicon, workers=self.workers)


def build_setup(
    seed: int = 0,
    spread: float = 1.0,
    components: int = 2,
    per_phone: int = 40,
    iters: int = 30,
    perturbation: float = 0.0,
    workers: Optional[int] = None,
) -> LabSetup:
    """
    Train on samples of a random generator over the toy inventory. With
    ``perturbation > 0`` the test data comes from a perturbed copy of the
    training generator.
    """
    lexicon = toy_lexicon()
    train_spec = GeneratorSpec.random(toy_inventory(), spread=spread, seed=seed)
    model = train_em(
        training_segments(train_spec, per_phone=per_phone, seed=seed + 1),
        train_spec.inventory,
        K=components,
        iters=iters,
        seed=seed,
        fingerprint=SYNTHETIC_FINGERPRINT,
    )
    spec = train_spec.perturbed(perturbation, seed + 2) if perturbation > 0 else train_spec
    return LabSetup(lexicon=lexicon, spec=spec, model=model, workers=workers)


def separation_experiment(
    setup: LabSetup, n: int = 200, words: Tuple[int, int] = (2, 4), seed: int = 0
) -> List[MethodRow]:
    """Correct pairs against reassigned scripts; LRT and APR at optimized thresholds."""
    manifest = setup.mismatched(setup.corpus(n, words, seed=seed), MismatchMode.REASSIGN, seed=seed)
    return compare_methods(setup.score(manifest))


def degradation_experiment(
    setup: LabSetup,
    shifts: Mapping[str, StyleShift],
    n: int = 200,
    words: Tuple[int, int] = (8, 8),
    mode: MismatchMode = MismatchMode.SUBSTITUTE,
    k: int = 3,
    seed: int = 0,
) -> Dict[str, List[DegradationRow]]:
    """
    Optimize on a read-style corpus, then apply the thresholds to the same
    scripts and mismatches generated under each style shift.
    """
    read = setup.score(setup.mismatched(setup.corpus(n, words, seed=seed), mode, k=k, seed=seed))
    reports = {}
    for name, shift in shifts.items():
        shifted = setup.corpus(n, words, shift=shift, style=name, seed=seed)
        pairs = setup.score(setup.mismatched(shifted, mode, k=k, seed=seed))
        reports[name] = degradation_report(read, pairs)
    return reports


def two_stage_experiment(
    setup: LabSetup,
    n: int = 200,
    words: Tuple[int, int] = (2, 4),
    fraction: float = 0.05,
    seed: int = 0,
) -> TwoStageReport:
    """Reassignment corpus spiked with degenerate utterances."""
    manifest = setup.mismatched(setup.corpus(n, words, seed=seed), MismatchMode.REASSIGN, seed=seed)
    manifest = spike_degenerate(manifest, setup.lexicon, setup.spec, fraction=fraction, seed=seed)
    return two_stage_report(setup.score(manifest))


def edit_mode_experiment(
    setup: LabSetup,
    n: int = 100,
    words: int = 10,
    k: int = 4,
    method: Method = Method.APR,
    seed: int = 0,
) -> EditModeReport:
    """Deletion, insertion and substitution of ``k`` words in ``words``-word scripts."""
    correct = setup.corpus(n, (words, words), seed=seed)
    pairs = {mode: setup.score(setup.mismatched(correct, mode, k=k, seed=seed)) for mode in EDIT_MODES}
    return edit_mode_report(pairs, method=method)


def rank_stability_experiment(
    setup: LabSetup,
    shift: StyleShift,
    n: int = 500,
    words: Tuple[int, int] = (2, 3),
    seed: int = 0,
) -> RankStability:
    read = setup.score(setup.mismatched(setup.corpus(n, words, seed=seed), MismatchMode.REASSIGN, seed=seed))
    shifted = setup.score(setup.corpus(n, words, shift=shift, style="shifted", seed=seed))
    return rank_stability(read, shifted, read)
