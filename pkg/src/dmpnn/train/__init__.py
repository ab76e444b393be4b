"""Losses, optimization, metrics, ensembles, hyperparameter search and checkpoints."""

from .checkpoint import (
    FORMAT_VERSION,
    CheckpointError,
    CorruptCheckpoint,
    VersionMismatch,
    checkpoint_dict,
    load_checkpoint,
    save_checkpoint,
)
from .ensemble import average_predictions, ensemble_predict, ensemble_train
from .hyperopt import HyperoptResult, HyperSpace, Trial, hyperopt, training_objective
from .loop import (
    Diverged,
    FeatureDimMismatch,
    TrainConfig,
    TrainedModel,
    TrainResult,
    rng_stream,
    train_model,
    worker_count,
)
from .metrics import (
    METRICS,
    Empty,
    MetricResult,
    SingleClass,
    evaluate,
    mae,
    prc_auc,
    r2,
    rmse,
    roc_auc,
)
from .optim import Adam, AllMissing, NoamSchedule, masked_loss, noam_schedule
