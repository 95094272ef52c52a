"""GAN training with controlled stochasticity and 1-NN overfitting/mode-drop metrics."""

from .autodiff import Graph, Tensor, precision, set_precision
from .datasets import (LatentSet, MixtureSpec, SampleSet, load_image_dataset, make_fixed_latents,
                       make_gaussian_ring, save_image_dataset)
from .evaluation import (DistanceSpace, FeatureEmbedder, MetricsReport, feature_distance, feature_space,
                         mode_drop_metric, nn_search, overfitting_metric, pixel_distance, pixel_space,
                         report_stats)
from .experiment import (ExperimentConfig, emit_grid, emit_table, load_config, parse_config,
                         run_experiment)
from .network import (ParamStore, discriminator_forward, discriminator_spec, generator_forward,
                      generator_spec, init_params, load_checkpoint, save_checkpoint, spectral_normalize)
from .optim import EMA, Adam
from .training import TrainConfig, d_loss, g_loss, train, train_step

__version__ = "0.1.0"
