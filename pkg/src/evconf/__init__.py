"""Confidence-aware dialogue classification with Dirichlet evidence heads.

The package splits into small layers: ``numeric`` (special functions,
seeded streams, samplers), ``evidential`` (the Dirichlet Bayes-risk loss
and its regulariser), ``network`` (a manual-backprop feed-forward net
with AdamW and warmup scheduling), ``methods`` (five training/prediction
systems sharing one record format), ``metrics`` and ``calibration``
(scores plus the monotone confidence remapping), ``data`` (synthetic
dialogues, splits, augmentation), and ``cli`` (the pipeline commands).
"""

from .calibration import (
    PiecewiseLinearMap,
    apply_pwlm,
    fit_pwlm,
    load_pwlm,
    map_records,
    save_pwlm,
)
from .data import (
    AUGMENT_PRESETS,
    DialogueExample,
    SplitSpec,
    SyntheticSpec,
    balance_augment,
    generate_synthetic,
    load_examples,
    save_examples,
    split,
    sub_dialogue_shuffle,
)
from .errors import (
    ContractError,
    DomainError,
    NumericError,
    ParseError,
    TrainingError,
    UndefinedMetricError,
)
from .evidential import (
    DirichletParams,
    LossBreakdown,
    OneHotTarget,
    batch_total_loss,
    bayes_risk_grad,
    bayes_risk_loss,
    confidence,
    kl_regulariser,
    predictive_distribution,
    total_loss,
    total_loss_grad,
)
from .metrics import (
    EceConfig,
    MetricsReport,
    RejectPoint,
    accuracy_f1,
    auprc,
    auroc,
    ece,
    nce,
    reject_sweep,
    reliability_bins,
)
from .methods import (
    METHODS,
    MethodConfig,
    PredictionRecord,
    TrainedModel,
    load_model,
    predict,
    predict_dataset,
    read_prediction_log,
    save_model,
    train_method,
    write_prediction_log,
)
from .network import (
    AdamWState,
    FeedForwardNet,
    LayerSpec,
    ScheduleConfig,
    adamw_step,
    load_checkpoint,
    noam_lr,
    save_checkpoint,
)
from .numeric import (
    SeededStream,
    digamma,
    finite_difference_grad,
    log_gamma,
    sample_dirichlet,
    sample_gamma,
    trigamma,
)

__version__ = "0.1.0"

__all__ = [
    "AUGMENT_PRESETS",
    "AdamWState",
    "ContractError",
    "DialogueExample",
    "DirichletParams",
    "DomainError",
    "EceConfig",
    "FeedForwardNet",
    "LayerSpec",
    "LossBreakdown",
    "METHODS",
    "MethodConfig",
    "MetricsReport",
    "NumericError",
    "OneHotTarget",
    "ParseError",
    "PiecewiseLinearMap",
    "PredictionRecord",
    "RejectPoint",
    "ScheduleConfig",
    "SeededStream",
    "SplitSpec",
    "SyntheticSpec",
    "TrainedModel",
    "TrainingError",
    "UndefinedMetricError",
    "accuracy_f1",
    "adamw_step",
    "apply_pwlm",
    "auprc",
    "auroc",
    "balance_augment",
    "batch_total_loss",
    "bayes_risk_grad",
    "bayes_risk_loss",
    "confidence",
    "digamma",
    "ece",
    "finite_difference_grad",
    "fit_pwlm",
    "generate_synthetic",
    "kl_regulariser",
    "load_checkpoint",
    "load_examples",
    "load_model",
    "load_pwlm",
    "log_gamma",
    "map_records",
    "nce",
    "noam_lr",
    "predict",
    "predict_dataset",
    "predictive_distribution",
    "read_prediction_log",
    "reject_sweep",
    "reliability_bins",
    "sample_dirichlet",
    "sample_gamma",
    "save_checkpoint",
    "save_examples",
    "save_model",
    "save_pwlm",
    "split",
    "sub_dialogue_shuffle",
    "total_loss",
    "total_loss_grad",
    "train_method",
    "trigamma",
    "write_prediction_log",
]
