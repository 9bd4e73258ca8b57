"""Selective-scan state-space kernels, dilated attention, cross-scale fusion and
small-target box losses on a small reverse-mode autodiff core."""
from .attention import MSDA, MSDAConfig, dilated_attention_branch, msda
from .errors import (ConfigError, DimensionError, DomainError, FormatError, GenerationError, MDSFError,
                     TrainingError, UsageError)
from .fusion import DFMambaEncoder, SCMBlock, afr, build_modulator, dfmamba_encoder, fus_ssm, scm_blend
from .gradcheck import gradcheck
from .kernels import BACKENDS, DEFAULT_BACKEND
from .losses import (BBox, LossConfig, LossReport, area_weight, ciou_loss, csc_loss, focal_loss, l1_loss,
                     nwd_loss, sa_wiou, total_loss, wasserstein_sq)
from .pyramid import EFPN, HybridBlock, PyramidSet, efpn
from .ssm import MambaMixerBlock, SelectiveInputs, SSMParams, directional_scan_2d, discretize, selective_scan
from .synthetic import ModelConfig, SceneConfig, ToyMambaDSF, generate_scene, smoke_train
from .tensor import Tensor, no_grad, tensor

__version__ = "0.1.0"
