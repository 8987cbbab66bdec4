"""Predictive precompute toolkit for session logs.

Models estimate, at the start of each user session, the probability
that the session will access a target surface; a serving policy spends
a precompute when that probability clears a calibrated threshold. The
package covers the whole loop: log ingestion and synthesis, feature
aggregation, baseline and recurrent models, precision-recall
evaluation, and a discrete-event serving simulator with cost
accounting.
"""

from .baselines import (GradientBoostedTrees, LogisticModel, PercentageModel,
                        log_loss, logistic_loss_and_gradient)
from .datamodel import (AccessLog, Context, Dataset, GeneratorConfig,
                        PeakExample, Schema, SessionRecord, SplitSpec,
                        StatsReport, dataset_stats, derive_peak_examples,
                        generate_synthetic, ingest, split_users,
                        subset_dataset, write_dataset)
from .errors import (CalibrationError, ConfigError, DataError,
                     EvaluationError, LeakageError, NumericalError,
                     OrderingError, PrefetchkitError, SimulationError)
from .evaluation import (MetricsReport, PrCurve, evaluate_model,
                         evaluate_peaks, pr_auc, pr_curve,
                         recall_at_precision)
from .features import (DEFAULT_WINDOWS, AggregationState, ColumnScaler,
                       FeatureLayout, SessionFeaturizer, bucketize_elapsed,
                       context_subsets, hash_categorical, subset_name,
                       time_features)
from .modelio import Checkpoint, load_checkpoint, save_checkpoint
from .rnn import (GruParams, PredictHead, RecurrentAccessModel, SequenceTrace,
                  gru_forward, init_params, loss_curve_csv, masked_log_loss,
                  named_arrays, predict_forward, select_k)
from .seeding import derive_rng, derive_seed
from .serving import (BaselineCostReport, CalibrationResult, CostComparison,
                      CostLedger, DecisionPolicy, HiddenStore, SessionBuffer,
                      SimReport, calibrate_threshold, cold_start_series,
                      compare_costs, replay, replay_baseline_costs, series_csv)
from .workflows import (MODEL_KINDS, FeatureSessionScorer, ablation_run,
                        fit_gbdt, fit_linear, fit_model, fit_percentage,
                        fit_rnn)

__version__ = "0.1.0"

__all__ = [
    "AccessLog", "AggregationState", "BaselineCostReport", "CalibrationError",
    "CalibrationResult", "Checkpoint", "ColumnScaler", "ConfigError",
    "Context", "CostComparison", "CostLedger", "DEFAULT_WINDOWS", "DataError",
    "Dataset", "DecisionPolicy", "EvaluationError", "FeatureLayout",
    "FeatureSessionScorer", "GeneratorConfig", "GradientBoostedTrees",
    "GruParams", "HiddenStore", "LeakageError", "LogisticModel",
    "MetricsReport", "MODEL_KINDS", "NumericalError", "OrderingError",
    "PeakExample", "PercentageModel", "PrCurve", "PredictHead",
    "PrefetchkitError", "RecurrentAccessModel", "Schema", "SequenceTrace",
    "SessionBuffer", "SessionFeaturizer", "SessionRecord", "SimReport",
    "SimulationError", "SplitSpec", "StatsReport", "ablation_run",
    "bucketize_elapsed", "calibrate_threshold", "cold_start_series",
    "compare_costs", "context_subsets", "dataset_stats",
    "derive_peak_examples", "derive_rng", "derive_seed", "evaluate_model",
    "evaluate_peaks", "fit_gbdt", "fit_linear", "fit_model", "fit_percentage",
    "fit_rnn", "generate_synthetic", "gru_forward", "hash_categorical",
    "ingest", "init_params", "load_checkpoint", "log_loss",
    "logistic_loss_and_gradient", "loss_curve_csv", "masked_log_loss",
    "named_arrays", "pr_auc", "pr_curve", "predict_forward",
    "recall_at_precision", "replay", "replay_baseline_costs",
    "save_checkpoint", "select_k", "series_csv", "split_users",
    "subset_dataset", "subset_name", "time_features", "write_dataset",
]
