"""Multi-verb action labels: label construction, a regression head, and retrieval metrics."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .label_space import (  # noqa: E402
    LabelVector,
    Scheme,
    VerbVocabulary,
    VoteRecord,
    build_label,
    build_ml,
    build_saml,
    build_sl,
    relevant_verbs,
    verb_vertex,
)
from .dataset import (  # noqa: E402
    FoldAssignment,
    SyntheticSpec,
    VideoInstance,
    attach_labels,
    feature_matrix,
    generate_synthetic,
    ingest_features,
    stratified_folds,
    write_features,
)
from .regressor import ModelParams, TrainConfig, forward, grad, load_model, predict, save_model, train  # noqa: E402
from .evaluation import (  # noqa: E402
    EvalReport,
    QueryVector,
    RankedList,
    average_precision,
    enumerate_queries,
    overlap_accuracy,
    rank_verbs,
    t2v_map,
    v2t_map,
    v2v_retrieve,
)
