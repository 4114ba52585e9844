try:
    from ._version import __version__
except ImportError:
    # Fallback when using the package in dev mode without installing
    # in editable mode with pip.
    import warnings

    warnings.warn("Importing 'uttverify_core' outside a proper installation.")
    __version__ = "dev"

from .acoustic_model import (  # noqa
    AcousticModel,
    FrameScorer,
    LabeledSegment,
    identifiability_matrix,
    load_model,
    save_model,
    score_anti,
    score_frame,
    score_segment,
    train_em,
)
from .aligner import (  # noqa
    Alignment,
    AlignmentGraph,
    AlignOptions,
    segment_dp,
    segment_features,
    viterbi_align,
    write_alignment,
)
from .frontend import (  # noqa
    FeatureMatrix,
    FrontendConfig,
    Waveform,
    append_deltas,
    compute_mfcc,
    featurize,
    load_wav,
    read_features,
    write_features,
    write_wav,
)
from .gmm import Gmm, fit_gmm  # noqa
from .lexicon import (  # noqa
    Lexicon,
    PhoneInventory,
    Pronunciation,
    PronunciationLattice,
    g2p_fallback,
    load_inventory,
    load_lexicon,
    save_inventory,
    save_lexicon,
    script_to_lattice,
    toy_inventory,
    toy_lexicon,
)
from .verifier import (  # noqa
    Decision,
    Method,
    ScoreTable,
    VerdictReport,
    Verifier,
    VerifierConfig,
    compute_apr,
    compute_llr,
    compute_two_stage,
    decide,
    phone_rank,
    score_alignment,
)
