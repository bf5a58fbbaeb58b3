from .hungarian import linear_assignment
from .metrics import MaskSequence, ari, discovery_metrics, match_frame, mbo, miou, upsample_nearest
from .evaluate import EvalReport, evaluate_model, run_clips, score_outputs

__all__ = [
    "linear_assignment", "MaskSequence", "ari", "discovery_metrics", "match_frame", "mbo", "miou",
    "upsample_nearest", "EvalReport", "evaluate_model", "run_clips", "score_outputs",
]
from .probe import ProbeConfig, ProbeData, ProbeError, evaluate_probe, probe_targets, r2_score, train_probe

__all__ += ["ProbeConfig", "ProbeData", "ProbeError", "evaluate_probe", "probe_targets", "r2_score", "train_probe"]
