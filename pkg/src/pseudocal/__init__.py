"""Semi-supervised multi-label learning with correctness-calibrated
pseudo-label weights, dual-threshold partitioning, and contrastive handling
of uncertain predictions."""

from .autodiff import Tensor, vstack
from .benchmarks import (Benchmark, make_benchmark, reference_gen_config,
                         reference_model_config, reference_train_config)
from .calibration import (BinStats, ConfidenceWeights, TableWeights,
                          UniformWeights, WeightTable, accumulate_bin_stats,
                          bce_weight_objective, bin_index, make_weight_table,
                          oracle_weight_table)
from .data import (Dataset, GenConfig, SsmllSplits, augment,
                   generate_synthetic, load_dataset, load_splits,
                   save_dataset, save_splits, split_ssmll,
                   train_test_datasets)
from .estimator import CalibratedPseudoLabelClassifier
from .losses import (AslConfig, ContrastiveBatch, asl, class_infonce,
                     paired_batch, pseudo_loss, supervised_loss, total_loss)
from .metrics import (average_precision, classwise_average_precision,
                      curve_stability_gap, mean_average_precision,
                      reliability_report)
from .model import (ModelConfig, ModelState, load_checkpoint,
                    save_checkpoint)
from .optim import (AdamWConfig, EmaState, OptimState, Parameter, ParamSet,
                    adamw_step, ema_update, grad_check)
from .policies import PolicyReport, compare_policies
from .thresholding import (ClassThresholds, assign_pseudo_labels,
                           derive_thresholds)
from .training import (POLICIES, EpochReport, PipelineResult, TrainConfig,
                       finetune_head, run_pipeline, train_epoch, warmup)

__version__ = "0.1.0"
