try:
    from ._version import __version__
except ImportError:
    # Fallback when using the package in dev mode without installing
    # in editable mode with pip.
    import warnings

    warnings.warn("Importing 'uttverify_lab' outside a proper installation.")
    __version__ = "dev"

from .evaluation import (  # noqa
    EvalResult,
    ScoredPair,
    SweepResult,
    candidate_thresholds,
    compare_methods,
    degradation_report,
    edit_mode_report,
    evaluate,
    evaluate_scores,
    method_rows,
    optimize,
    rank_stability,
    score_histogram,
    score_manifest,
    sweep_threshold,
    theta_grid,
    two_stage_report,
    write_curve,
    write_eval_result,
)
from .experiments import (  # noqa
    LabSetup,
    build_setup,
    degradation_experiment,
    edit_mode_experiment,
    rank_stability_experiment,
    separation_experiment,
    two_stage_experiment,
)
from .generator import (  # noqa
    GeneratorSpec,
    StyleShift,
    SyntheticUtterance,
    degenerate_utterance,
    random_scripts,
    spike_degenerate,
    synthesize_corpus,
    synthesize_utterance,
    training_segments,
)
from .manifest import (  # noqa
    CorpusManifest,
    Label,
    ManifestEntry,
    MismatchMode,
    derangement,
    load_manifest,
    load_training_set,
    make_mismatch_set,
    merge_manifests,
    save_manifest,
    save_training_set,
)
