from .rollout import (
    EvictedError,
    NumericError,
    PairSample,
    RecurrenceTrace,
    Rollout,
    pair_ranges,
    sample_pair,
    unroll,
)
from .loop import (
    CheckpointError,
    TrainResult,
    load_checkpoint,
    lr_factor,
    parameter_hash,
    save_checkpoint,
    train_loop,
)

__all__ = [
    "EvictedError", "NumericError", "PairSample", "RecurrenceTrace", "Rollout", "pair_ranges", "sample_pair",
    "unroll", "CheckpointError", "TrainResult", "load_checkpoint", "lr_factor", "parameter_hash",
    "save_checkpoint", "train_loop",
]
