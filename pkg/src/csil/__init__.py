"""Incremental learning for wireless device fingerprints.

Classifiers end in a bias-free cosine-matching layer whose rows are
per-device fingerprints. The degree-of-conflict metric scores how well a
model has separated those fingerprints (optimum -C/2 for C classes), and
the channel-separated incremental learner grows the model stage by stage
while keeping fingerprints of different stages exactly orthogonal.
"""

from ._kernels import BACKEND as kernel_backend
from .conflict import (
    degree_of_conflict,
    mean_pairwise_similarity,
    optimal_doc,
    similarity_matrix,
)
from .continual import (
    EpochLog,
    LossWeights,
    StageContext,
    StageData,
    StageSpan,
    estimate_fisher,
    ewc_loss,
    expand_embedding,
    expand_similarity,
    init_new_fingerprints,
    initial_context,
    kd_loss,
    masks_for_stage,
    train_stage,
)
from .engine import ShapeError, Tensor, constant, parameter
from .harness import ExperimentConfig, InvariantError, run_ablation, run_experiment
from .model import (
    DEFAULT_TEMPERATURE,
    Classifier,
    EmbeddingLayer,
    RegularHead,
    ZeroBiasHead,
    build_classifier,
    classify,
    cosine_match,
    regular_dense_forward,
    zerobias_forward,
)
from .optim import MaskedSgd, SgdConfig, sgd_step
from .report import ExperimentReport, StageMetrics, emit_report
from .signals import (
    DatasetFormatError,
    DeviceProfile,
    SignalDataset,
    load_dataset,
    make_dataset,
    make_profile,
    save_dataset,
    synthesize_sample,
    write_manifest,
)
from .strategies import StrategyConfig, prepare_stage, run_stage, strategy_config

__version__ = "0.1.0"
