"""One-step consistency-model restoration from a shallow prior.

Consistency parameterization over a Karras-style schedule, isolated
consistency training with a loss-table importance sampler, a
condition-only prior with a KL-derived restore level, and a Frechet
scorer that picks the best restore point.
"""

from .data import Dataset, DatasetSpec, gen_gmm2d, gen_patches, train_test_split
from .nnet import Denoiser, DenseNet, OptimizerState, optimizer_step, time_embed
from .prior import PriorBridge, PriorNet, compute_k, kl_noised, prior_predict, train_prior
from .sampler import (GenerationReport, generate_direct, generate_prior_only, generate_v1,
                      generate_v2, generate_v3, sweep_restore_points)
from .schedule import (NoiseSchedule, ScheduleConfig, SkipCoefficients, build_schedule,
                       noise_to_level, skip_coefficients)
from .scorer import (FeatureProjector, GaussianSummary, ScorerState, extract_features,
                     fit_gaussian, frechet_distance, select_optimal_point)
from .trainer import (LossTable, TrainerConfig, TrainerState, consistency_loss,
                      index_probabilities, sample_index, train_loop, train_step,
                      update_loss_table)

__version__ = "0.1.0"
