from cofindiff.diffusion.denoiser import DenoiserConfig, UNet
from cofindiff.diffusion.model import DiffusionModel
from cofindiff.diffusion.sampling import (GenerationRequest, GenerationResult, NoiseStreams, ancestral_sample, as_generator,
                                          cfg_eps, generate_batch, generate_series, sample_image, sample_images,
                                          sample_seed)
from cofindiff.diffusion.schedule import NoiseSchedule, make_schedule, q_sample, q_step
from cofindiff.diffusion.training import EarlyStopping, TrainControl, TrainState, train

__all__ = [
    "DenoiserConfig", "UNet", "DiffusionModel", "GenerationRequest", "GenerationResult", "NoiseStreams",
    "ancestral_sample", "as_generator", "cfg_eps", "generate_batch", "generate_series", "sample_image",
    "sample_images", "sample_seed", "NoiseSchedule", "make_schedule", "q_sample", "q_step", "EarlyStopping",
    "TrainControl", "TrainState", "train",
]
