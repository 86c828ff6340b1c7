"""Conditional denoising diffusion model: schedule, denoiser, training, sampling."""

from .checkpoint import Checkpoint
from .estimator import ConditionalDDPM
from .schedule import NoiseSchedule, forward_sample, from_signal, make_schedule, to_signal
from .training import (COMPONENTS, FREEZE_PRESETS, FreezeSpec, TrainConfig, UQResult,
                       ancestral_sample, build_model, diffusion_loss, finetune,
                       frozen_parameter_names, init_model, mc_property_uq, predict_noise,
                       pretrain, sample, summarize)
from .unet import ConditionalUNet, DenoiserConfig

# alternate name used by the pipeline docs
denoise_predict = predict_noise

__all__ = [
    "COMPONENTS", "Checkpoint", "ConditionalDDPM", "ConditionalUNet", "DenoiserConfig",
    "FREEZE_PRESETS", "FreezeSpec", "NoiseSchedule", "TrainConfig", "UQResult",
    "ancestral_sample", "build_model", "denoise_predict", "diffusion_loss", "finetune",
    "forward_sample", "from_signal", "frozen_parameter_names", "init_model", "make_schedule",
    "mc_property_uq", "predict_noise", "pretrain", "sample", "summarize", "to_signal",
]
