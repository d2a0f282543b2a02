from .buffer import Batch, ReplayBuffer
from .features import FeatureSpec, StepFeatures, observe
from .learner import Decision, ExecutionModeError, Learner, NonFiniteLoss, td_target
from .networks import AttentionCritic, PolicyNet, soft_update, squashed_log_prob
from .rollout import Rollout, evaluate, run_episode
from .trainer import TrainingDiverged, TrainResult, learner_from_checkpoint, read_curve, train

__all__ = [
    "Batch", "ReplayBuffer", "FeatureSpec", "StepFeatures", "observe",
    "Decision", "ExecutionModeError", "Learner", "NonFiniteLoss", "td_target",
    "AttentionCritic", "PolicyNet", "soft_update", "squashed_log_prob",
    "Rollout", "evaluate", "run_episode",
    "TrainingDiverged", "TrainResult", "learner_from_checkpoint", "read_curve", "train",
]
