try:
    from ._version import __version__
except ImportError:
    # Fallback when using the package in dev mode without installing
    # in editable mode with pip.
    import warnings

    warnings.warn("Importing 'uttverify' outside a proper installation.")
    __version__ = "dev"

from uttverify_core import (  # noqa
    AcousticModel,
    Decision,
    FeatureMatrix,
    FrontendConfig,
    Lexicon,
    Method,
    PhoneInventory,
    VerdictReport,
    Verifier,
    VerifierConfig,
    featurize,
    load_inventory,
    load_lexicon,
    load_model,
    load_wav,
    save_model,
    train_em,
    viterbi_align,
)
from uttverify_lab import (  # noqa
    CorpusManifest,
    GeneratorSpec,
    StyleShift,
    evaluate,
    load_manifest,
    make_mismatch_set,
    score_manifest,
    sweep_threshold,
    synthesize_corpus,
)

from .config import RunConfig  # noqa
