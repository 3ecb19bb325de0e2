from cofindiff.baselines.gan import GanConfig, GanControl, GanModel, gan_generate, gan_generate_batch, train_cgan
from cofindiff.baselines.stochastic import GarchParams, GBMParams, gbm_log_returns, simulate_garch, simulate_gbm

__all__ = ["GanConfig", "GanControl", "GanModel", "gan_generate", "gan_generate_batch", "train_cgan", "GarchParams",
           "GBMParams", "gbm_log_returns", "simulate_garch", "simulate_gbm"]
