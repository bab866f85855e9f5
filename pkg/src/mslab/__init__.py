"""mslab: first-order MAML with a multi-step loss, end to end.

Layers, bottom to top:

  kernels   hot numeric kernels (compiled extension or numpy fallback)
  tensor    tape-based reverse-mode autodiff
  model     miniature encoder-decoder + regression MLP + checkpoints
  meta      inner-loop adaptation, multi-step loss, outer updates
  tasks     synthetic task families (quad / sinusoid / cipher)
  metrics   character error rate and curve stability statistics
  cli       experiment harness (train / finetune-eval / compare / plots)
"""

from . import kernels
from .meta import (
    AdaptTrajectory,
    Episode,
    InnerConfig,
    OuterConfig,
    RunRecord,
    WeightSchedule,
    fine_tune,
    inner_adapt,
    meta_train,
    msl_combine,
    outer_grad,
    per_step_target_losses,
    weights_at,
)
from .model import ModelConfig, ParamSet, SequenceBatch, init_params
from .tensor import GradStore, Recording, Tensor, backward, finite_diff_grad

__version__ = "0.1.0"

__all__ = [
    "AdaptTrajectory",
    "Episode",
    "GradStore",
    "InnerConfig",
    "ModelConfig",
    "OuterConfig",
    "ParamSet",
    "Recording",
    "RunRecord",
    "SequenceBatch",
    "Tensor",
    "WeightSchedule",
    "backward",
    "fine_tune",
    "finite_diff_grad",
    "init_params",
    "inner_adapt",
    "kernels",
    "meta_train",
    "msl_combine",
    "outer_grad",
    "per_step_target_losses",
    "weights_at",
]
