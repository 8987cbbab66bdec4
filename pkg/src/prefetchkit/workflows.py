"""Training harnesses that wire featurizers to estimators.

Feature-based models (logistic, boosted trees) train on a trailing
window of sessions: aggregation state is warmed on each user's entire
history, but only recent sessions become training rows. This keeps the
design matrix bounded on long logs without changing what any single row
contains. Scoring always replays full logs chronologically.
"""

from __future__ import annotations

import numpy as np

from .baselines import GradientBoostedTrees, LogisticModel, PercentageModel
from .datamodel import Dataset, SplitSpec, derive_peak_examples, split_users
from .errors import ConfigError
from .features import DEFAULT_WINDOWS, ColumnScaler, SessionFeaturizer
from .rnn import RecurrentAccessModel

MODEL_KINDS = ("pct", "lr", "gbdt", "rnn")


class FeatureSessionScorer:
    """A fitted featurizer/scaler/estimator stack that replays logs.

    ``score_log`` feeds each session's feature row, built from strictly
    earlier history, through the estimator. Scores come back in session
    order, one per session.
    """

    def __init__(self, featurizer: SessionFeaturizer, scaler: ColumnScaler | None,
                 estimator, kind: str):
        self.featurizer = featurizer
        self.scaler = scaler
        self.estimator = estimator
        self.kind = kind

    def score_log(self, log) -> np.ndarray:
        width = self.featurizer.layout_.width
        n = len(log.sessions)
        X = np.zeros((n, width), dtype=np.float32)
        row = np.zeros(width, dtype=np.float64)
        state = self.featurizer.new_state()
        for i, rec in enumerate(log.sessions):
            self.featurizer.extract(state, rec.context, out=row)
            X[i] = row
            state.update(rec.context, rec.access)
        if self.scaler is not None:
            X = self.scaler.transform(X)
        if n == 0:
            return np.zeros(0, dtype=np.float64)
        return self.estimator.predict_proba(X)[:, 1]

    def score_dataset(self, ds: Dataset) -> dict[str, np.ndarray]:
        return {user: self.score_log(ds.logs[user]) for user in ds.users()}


def fit_percentage(ds: Dataset, alpha: float | None = None, mode: str = "session",
                   peak_hours: tuple[int, int] | None = None) -> PercentageModel:
    peaks = None
    if mode == "peak":
        if peak_hours is None:
            raise ConfigError("peak mode requires peak_hours")
        peaks = derive_peak_examples(ds, peak_hours[0], peak_hours[1])
    return PercentageModel(alpha=alpha, mode=mode).fit(ds, peaks=peaks)


def fit_linear(ds: Dataset, seed: int = 0, train_window_days: float = 7.0,
               groups=("C", "E", "A"), windows=DEFAULT_WINDOWS,
               hash_modulus: int = 97, elapsed_buckets: int = 50,
               max_subset_dims: int = 4, learning_rate: float = 0.1,
               epochs: int = 200, batch_size: int = 256, l2: float = 1e-4,
               tol: float = 1e-5) -> FeatureSessionScorer:
    """Logistic regression on one-hot features with standardized columns."""
    featurizer = SessionFeaturizer(
        groups=groups, windows=windows, hash_modulus=hash_modulus,
        elapsed_buckets=elapsed_buckets, max_subset_dims=max_subset_dims,
        numeric_time=False, numeric_elapsed=False).fit(ds)
    X, y, _, _ = featurizer.matrix(ds, window_days=train_window_days,
                                   dtype=np.float32)
    scaler = ColumnScaler(copy=False).fit(X)
    X = scaler.transform(X)
    model = LogisticModel(learning_rate=learning_rate, epochs=epochs,
                          batch_size=batch_size, l2=l2, tol=tol, seed=seed)
    model.fit(X, y)
    return FeatureSessionScorer(featurizer, scaler, model, "lr")


def fit_gbdt(ds: Dataset, seed: int = 0, train_window_days: float = 7.0,
             groups=("C", "E", "A"), windows=DEFAULT_WINDOWS,
             hash_modulus: int = 97, elapsed_buckets: int = 50,
             max_subset_dims: int = 4, rounds: int = 100,
             learning_rate: float = 0.3, depth: int | None = None,
             depth_range: tuple[int, int] = (1, 10), leaf_l2: float = 1.0,
             min_child_hessian: float = 1.0,
             valid_fraction: float = 0.1) -> FeatureSessionScorer:
    """Boosted trees on numeric-valued features.

    Time and elapsed features stay numeric so splits can carve them
    directly. When no depth is pinned, a user-level holdout drives the
    depth search; the holdout users still contribute scoring rows only
    through validation, never through tree growth.
    """
    featurizer = SessionFeaturizer(
        groups=groups, windows=windows, hash_modulus=hash_modulus,
        elapsed_buckets=elapsed_buckets, max_subset_dims=max_subset_dims,
        numeric_time=True, numeric_elapsed=True).fit(ds)
    model = GradientBoostedTrees(
        rounds=rounds, learning_rate=learning_rate, depth=depth,
        depth_range=depth_range, leaf_l2=leaf_l2,
        min_child_hessian=min_child_hessian, seed=seed)
    if depth is None:
        if not (0.0 < valid_fraction < 1.0):
            raise ConfigError(
                f"valid_fraction must lie in (0, 1), got {valid_fraction}")
        if len(ds.logs) < 2:
            raise ConfigError("depth search needs at least two users")
        build_ds, valid_ds = split_users(
            ds, SplitSpec(train_fraction=1.0 - valid_fraction, seed=seed))
        Xb, yb, _, _ = featurizer.matrix(build_ds, window_days=train_window_days,
                                         dtype=np.float32)
        Xv, yv, _, _ = featurizer.matrix(valid_ds, window_days=train_window_days,
                                         dtype=np.float32)
        model.fit(Xb, yb, X_valid=Xv, y_valid=yv)
    else:
        X, y, _, _ = featurizer.matrix(ds, window_days=train_window_days,
                                       dtype=np.float32)
        model.fit(X, y)
    return FeatureSessionScorer(featurizer, None, model, "gbdt")


def fit_rnn(ds: Dataset, seed: int = 0, **config) -> RecurrentAccessModel:
    return RecurrentAccessModel(seed=seed, **config).fit(ds)


def fit_model(kind: str, ds: Dataset, seed: int = 0, config: dict | None = None):
    """Train one model kind with its config dict; returns the scorer."""
    config = dict(config or {})
    if kind == "pct":
        return fit_percentage(ds, **config)
    if kind == "lr":
        return fit_linear(ds, seed=seed, **config)
    if kind == "gbdt":
        return fit_gbdt(ds, seed=seed, **config)
    if kind == "rnn":
        return fit_rnn(ds, seed=seed, **config)
    raise ConfigError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def ablation_run(train_ds: Dataset, eval_ds: Dataset, seed: int = 0,
                 group_sets=(("C",), ("C", "E"), ("C", "E", "A")),
                 eval_window_days: float = 7.0, targets=(0.5,),
                 **gbdt_config) -> dict[str, object]:
    """Boosted-tree quality as feature groups accumulate.

    Every run shares the seed, split, and hyperparameters; only the
    feature groups differ, so score deltas isolate the groups' value.
    """
    from .evaluation import evaluate_model

    reports: dict[str, object] = {}
    for groups in group_sets:
        scorer = fit_gbdt(train_ds, seed=seed, groups=tuple(groups), **gbdt_config)
        label = "+".join(groups)
        reports[label] = evaluate_model(scorer, eval_ds,
                                        eval_window_days=eval_window_days,
                                        targets=targets)
    return reports
