"""Baseline access models: percentage counters, logistic regression, and
gradient-boosted decision trees.

The array-based models follow the familiar estimator surface: construct
with hyperparameters, ``fit(X, y)``, ``predict_proba(X)``. Both are
implemented from scratch on numpy; the percentage model is an online
counter keyed by user.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .datamodel import AccessLog, Dataset, PeakExample
from .errors import ConfigError, DataError
from .seeding import derive_rng
from .validation import check_fitted, check_labels, check_matrix

PROB_CLAMP = 1e-7
_RATE_CLAMP = 1e-6


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def log_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary log loss with probabilities clamped away from 0 and 1."""
    p = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.mean(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p)))


# ---------------------------------------------------------------------------
# Percentage model


class PercentageModel(BaseEstimator):
    """Smoothed per-user access frequency.

    The probability that session n is an access, given the user's n-1
    previous labels, is (alpha + sum of previous labels) / n. With no
    history the prediction is alpha itself. ``mode="peak"`` applies the
    same formula to per-day peak-window labels instead of sessions.

    ``alpha=None`` learns the smoothing prior from the global positive
    rate of the training data.
    """

    def __init__(self, alpha: float | None = None, mode: str = "session"):
        self.alpha = alpha
        self.mode = mode

    def fit(self, ds: Dataset, peaks: list[PeakExample] | None = None):
        if self.mode not in ("session", "peak"):
            raise ConfigError(f"mode must be 'session' or 'peak', got {self.mode!r}")
        if self.alpha is not None:
            if not (0.0 < self.alpha < 1.0):
                raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
            self.alpha_ = float(self.alpha)
        else:
            if self.mode == "peak":
                if not peaks:
                    raise ConfigError("peak mode needs peak examples to learn alpha")
                rate = sum(p.label for p in peaks) / len(peaks)
            else:
                total = ds.n_sessions()
                if total == 0:
                    raise DataError("cannot learn alpha from an empty dataset")
                pos = sum(s.access for log in ds.logs.values() for s in log.sessions)
                rate = pos / total
            self.alpha_ = float(min(max(rate, _RATE_CLAMP), 1.0 - _RATE_CLAMP))
        self.counters_: dict[str, tuple[int, int]] = {}
        return self

    # -- online surface ------------------------------------------------

    def predict_user(self, user_id: str) -> float:
        """Probability for the user's next observation."""
        check_fitted(self, "alpha_")
        seen, positives = self.counters_.get(user_id, (0, 0))
        return (self.alpha_ + positives) / (seen + 1)

    def update(self, user_id: str, label: int) -> None:
        check_fitted(self, "alpha_")
        if label not in (0, 1):
            raise DataError(f"label must be 0 or 1, got {label}")
        seen, positives = self.counters_.get(user_id, (0, 0))
        self.counters_[user_id] = (seen + 1, positives + label)

    # -- replay surface --------------------------------------------------

    def score_log(self, log: AccessLog) -> np.ndarray:
        """Per-session probabilities via predict-then-update replay.

        Uses a fresh counter, so repeated scoring is side-effect free.
        """
        check_fitted(self, "alpha_")
        out = np.empty(len(log.sessions), dtype=np.float64)
        positives = 0
        for i, rec in enumerate(log.sessions):
            out[i] = (self.alpha_ + positives) / (i + 1)
            positives += rec.access
        return out

    def score_peaks(self, log: AccessLog, peaks: list[PeakExample]) -> np.ndarray:
        """Per-day probabilities for one user's peak-window labels.

        Only the labels of earlier days inform each prediction; the
        session log itself is not consulted. Examples must arrive in
        day order.
        """
        check_fitted(self, "alpha_")
        days = [p.day for p in peaks]
        if any(b <= a for a, b in zip(days, days[1:])):
            raise DataError("peak examples must be ordered by day without repeats")
        out = np.empty(len(peaks), dtype=np.float64)
        positives = 0
        for i, example in enumerate(peaks):
            out[i] = (self.alpha_ + positives) / (i + 1)
            positives += int(example.label)
        return out


# ---------------------------------------------------------------------------
# Logistic regression


def logistic_loss_and_gradient(w: np.ndarray, b: float, X: np.ndarray,
                               y: np.ndarray, l2: float):
    """(loss, grad_w, grad_b) of mean log loss plus (l2/2)*||w||^2.

    The bias is not regularized. Exposed as a function so the gradient
    can be checked against finite differences.
    """
    z = X @ w + b
    p = _sigmoid(z)
    eps = 1e-12
    loss = float(-np.mean(y * np.log(p + eps) + (1.0 - y) * np.log(1.0 - p + eps)))
    loss += 0.5 * l2 * float(w @ w)
    resid = (p - y) / X.shape[0]
    grad_w = X.T @ resid + l2 * w
    grad_b = float(resid.sum())
    return loss, grad_w, grad_b


class LogisticModel(BaseEstimator, ClassifierMixin):
    """Binary logistic regression trained by mini-batch gradient descent.

    Runs up to ``epochs`` passes with fixed learning rate, stopping when
    the full-data objective improves by less than ``tol`` between
    epochs. L2 strength ``l2`` penalizes (l2/2)*||w||^2, bias excluded.
    """

    def __init__(self, learning_rate: float = 0.1, epochs: int = 200,
                 batch_size: int = 256, l2: float = 1e-4, tol: float = 1e-5,
                 seed: int = 0):
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.l2 = l2
        self.tol = tol
        self.seed = seed

    def fit(self, X, y):
        if self.learning_rate <= 0 or self.epochs <= 0 or self.batch_size <= 0:
            raise ConfigError("learning_rate, epochs, and batch_size must be positive")
        if self.l2 < 0 or self.tol < 0:
            raise ConfigError("l2 and tol must be non-negative")
        X = check_matrix(X)
        y = check_labels(y, X.shape[0])
        n, d = X.shape
        if n == 0:
            raise DataError("cannot fit on an empty matrix")
        w = np.zeros(d, dtype=np.float64)
        b = 0.0
        rng = derive_rng(self.seed, "logistic:shuffle")
        prev_loss = np.inf
        epochs_run = 0
        for _ in range(self.epochs):
            order = rng.permutation(n)
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                Xb = X[idx]
                p = _sigmoid(Xb.astype(np.float64, copy=False) @ w + b)
                resid = (p - y[idx]) / idx.shape[0]
                w -= self.learning_rate * (Xb.T @ resid + self.l2 * w)
                b -= self.learning_rate * float(resid.sum())
            epochs_run += 1
            loss, _, _ = logistic_loss_and_gradient(w, b, X, y, self.l2)
            if not np.isfinite(loss):
                raise DataError("logistic training produced a non-finite loss")
            if abs(prev_loss - loss) < self.tol:
                break
            prev_loss = loss
        self.coef_ = w
        self.intercept_ = b
        self.n_epochs_ = epochs_run
        self.classes_ = np.array([0, 1])
        return self

    def decision_function(self, X) -> np.ndarray:
        check_fitted(self, "coef_")
        X = check_matrix(X)
        return X.astype(np.float64, copy=False) @ self.coef_ + self.intercept_

    def predict_proba(self, X) -> np.ndarray:
        p1 = _sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) >= 0.0).astype(int)


# ---------------------------------------------------------------------------
# Gradient-boosted decision trees


@dataclass
class _Tree:
    """Flat array representation of one regression tree.

    Internal node i routes rows with feature[i] value < threshold[i] to
    left[i], the rest to right[i]. Leaves have feature -1 and carry an
    unshrunk output value; the learning rate is applied at predict time.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            feat = self.feature[node]
            active = feat >= 0
            if not active.any():
                break
            rows = np.flatnonzero(active)
            f = feat[rows]
            goes_left = X[rows, f] < self.threshold[node[rows]]
            node[rows] = np.where(goes_left, self.left[node[rows]], self.right[node[rows]])
        return self.value[node]


class _TreeBuilder:
    """Level-wise exact greedy splitter on second-order statistics.

    Split gain for a candidate partition (L, R) of a node:

        0.5 * (GL^2/(HL+l2) + GR^2/(HR+l2) - G^2/(H+l2))

    Every boundary between adjacent distinct feature values is scored;
    the per-value gradient/hessian sums come from bincounts over a
    precomputed value-rank matrix, so the search is exact and O(rows)
    per feature per node. Ties prefer the lowest feature index, then
    the lowest threshold.
    """

    def __init__(self, ranks: np.ndarray, values: list[np.ndarray],
                 leaf_l2: float, min_child_hessian: float):
        self.ranks = ranks
        self.values = values
        self.leaf_l2 = leaf_l2
        self.min_child_hessian = min_child_hessian

    def build(self, grad: np.ndarray, hess: np.ndarray, depth: int):
        """Returns (tree, per-training-row leaf output)."""
        n_features = self.ranks.shape[1]
        feature = [0]
        threshold = [0.0]
        left = [-1]
        right = [-1]
        value = [0.0]
        row_out = np.zeros(self.ranks.shape[0], dtype=np.float64)
        frontier = [(0, np.arange(self.ranks.shape[0], dtype=np.int64), 0)]
        while frontier:
            node_id, rows, level = frontier.pop(0)
            g_sum = float(grad[rows].sum())
            h_sum = float(hess[rows].sum())
            best = None  # (gain, feat, rank, thr)
            if level < depth and rows.shape[0] >= 2:
                parent_score = g_sum * g_sum / (h_sum + self.leaf_l2)
                for f in range(n_features):
                    r = self.ranks[rows, f]
                    nv = self.values[f].shape[0]
                    if nv < 2:
                        continue
                    gb = np.bincount(r, weights=grad[rows], minlength=nv)
                    hb = np.bincount(r, weights=hess[rows], minlength=nv)
                    gl = np.cumsum(gb)[:-1]
                    hl = np.cumsum(hb)[:-1]
                    gr = g_sum - gl
                    hr = h_sum - hl
                    ok = (hl >= self.min_child_hessian) & (hr >= self.min_child_hessian)
                    if not ok.any():
                        continue
                    gains = np.where(
                        ok,
                        0.5 * (gl * gl / (hl + self.leaf_l2)
                               + gr * gr / (hr + self.leaf_l2)
                               - parent_score),
                        -np.inf,
                    )
                    k = int(np.argmax(gains))
                    gain = float(gains[k])
                    if gain > 1e-12 and (best is None or gain > best[0]):
                        thr = 0.5 * (self.values[f][k] + self.values[f][k + 1])
                        best = (gain, f, k, thr)
            if best is None:
                feature[node_id] = -1
                leaf = -g_sum / (h_sum + self.leaf_l2)
                value[node_id] = leaf
                row_out[rows] = leaf
                continue
            _, f, k, thr = best
            goes_left = self.ranks[rows, f] <= k
            for child_rows in (rows[goes_left], rows[~goes_left]):
                feature.append(0)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                value.append(0.0)
                frontier.append((len(feature) - 1, child_rows, level + 1))
            feature[node_id] = f
            threshold[node_id] = thr
            left[node_id] = len(feature) - 2
            right[node_id] = len(feature) - 1
        tree = _Tree(
            feature=np.array(feature, dtype=np.int64),
            threshold=np.array(threshold, dtype=np.float64),
            left=np.array(left, dtype=np.int64),
            right=np.array(right, dtype=np.int64),
            value=np.array(value, dtype=np.float64),
        )
        return tree, row_out


class GradientBoostedTrees(BaseEstimator, ClassifierMixin):
    """Boosted trees on binary log loss with second-order updates.

    Each round fits one tree to the gradient/hessian of the current
    margin; leaf values are -G/(H+leaf_l2) and the final score is
    sigmoid(base_score + learning_rate * sum of tree outputs).

    When ``depth`` is None the maximum depth is selected by retraining
    over ``depth_range`` (inclusive) and picking the depth minimizing
    validation log loss, smallest depth on ties; a validation set is
    then required. Training itself is deterministic: exact greedy splits
    involve no sampling, so ``seed`` only names the run.
    """

    def __init__(self, rounds: int = 100, learning_rate: float = 0.3,
                 depth: int | None = None, depth_range: tuple[int, int] = (1, 10),
                 leaf_l2: float = 1.0, min_child_hessian: float = 1.0,
                 seed: int = 0):
        self.rounds = rounds
        self.learning_rate = learning_rate
        self.depth = depth
        self.depth_range = depth_range
        self.leaf_l2 = leaf_l2
        self.min_child_hessian = min_child_hessian
        self.seed = seed

    def fit(self, X, y, X_valid=None, y_valid=None):
        if self.rounds <= 0 or self.learning_rate <= 0:
            raise ConfigError("rounds and learning_rate must be positive")
        if self.leaf_l2 < 0 or self.min_child_hessian < 0:
            raise ConfigError("leaf_l2 and min_child_hessian must be non-negative")
        X = check_matrix(X)
        y = check_labels(y, X.shape[0])
        if X.shape[0] == 0:
            raise DataError("cannot fit on an empty matrix")
        rate = float(np.clip(y.mean(), _RATE_CLAMP, 1.0 - _RATE_CLAMP))
        self.base_score_ = float(np.log(rate / (1.0 - rate)))

        ranks, values = self._rank_encode(X)
        builder = _TreeBuilder(ranks, values, self.leaf_l2, self.min_child_hessian)

        if self.depth is not None:
            if self.depth <= 0:
                raise ConfigError(f"depth must be positive, got {self.depth}")
            self.trees_ = self._boost(builder, y, self.depth)
            self.depth_ = self.depth
        else:
            lo, hi = int(self.depth_range[0]), int(self.depth_range[1])
            if lo <= 0 or hi < lo:
                raise ConfigError(f"depth_range must satisfy 1 <= lo <= hi, got {self.depth_range}")
            if X_valid is None or y_valid is None:
                raise ConfigError("depth search requires a validation set")
            X_valid = check_matrix(X_valid, "X_valid")
            y_valid = check_labels(y_valid, X_valid.shape[0], "y_valid")
            if X_valid.shape[0] == 0:
                raise ConfigError("validation set must be non-empty")
            best = None  # (loss, depth, trees)
            for depth in range(lo, hi + 1):
                trees = self._boost(builder, y, depth)
                margin = np.full(X_valid.shape[0], self.base_score_)
                for tree in trees:
                    margin = margin + self.learning_rate * tree.predict(X_valid)
                loss = log_loss(_sigmoid(margin), y_valid)
                if best is None or loss < best[0]:
                    best = (loss, depth, trees)
            _, self.depth_, self.trees_ = best
            self.valid_loss_ = best[0]
        self.classes_ = np.array([0, 1])
        return self

    @staticmethod
    def _rank_encode(X: np.ndarray):
        """Per-feature sorted distinct values and each row's value rank."""
        n, d = X.shape
        ranks = np.empty((n, d), dtype=np.int32)
        values = []
        for f in range(d):
            vals, inv = np.unique(X[:, f], return_inverse=True)
            values.append(vals.astype(np.float64))
            ranks[:, f] = inv.astype(np.int32)
        return ranks, values

    def _boost(self, builder: _TreeBuilder, y: np.ndarray, depth: int) -> list[_Tree]:
        n = y.shape[0]
        margin = np.full(n, self.base_score_)
        trees: list[_Tree] = []
        for _ in range(self.rounds):
            p = _sigmoid(margin)
            grad = p - y
            hess = p * (1.0 - p)
            tree, row_out = builder.build(grad, hess, depth)
            trees.append(tree)
            margin += self.learning_rate * row_out
        return trees

    def raw_margin(self, X) -> np.ndarray:
        check_fitted(self, "trees_")
        X = check_matrix(X)
        margin = np.full(X.shape[0], self.base_score_)
        for tree in self.trees_:
            margin += self.learning_rate * tree.predict(X)
        return margin

    def predict_proba(self, X) -> np.ndarray:
        p1 = _sigmoid(self.raw_margin(X))
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X) -> np.ndarray:
        return (self.raw_margin(X) >= 0.0).astype(int)
