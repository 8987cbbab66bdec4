"""Precision-recall evaluation over chronological replay.

Scores arrive from a model's replay over held-out users; metrics are
computed on sessions inside the trailing evaluation window only, while
the model still consumes each user's full history leading into it.

The PR curve places one operating point per distinct score, sweeping
thresholds downward; a point's prediction rule is score >= threshold,
so tied scores always move together. The curve area is the standard
average-precision sum of precision times incremental recall, not a
trapezoidal interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datamodel import Dataset, PeakExample, SECONDS_PER_DAY
from .errors import ConfigError, EvaluationError
from .validation import check_labels, check_scores


@dataclass(frozen=True, slots=True)
class PrCurve:
    thresholds: np.ndarray  # distinct scores, descending
    precisions: np.ndarray
    recalls: np.ndarray

    def __len__(self) -> int:
        return self.thresholds.shape[0]

    def to_csv(self) -> str:
        lines = ["threshold,precision,recall"]
        for t, p, r in zip(self.thresholds, self.precisions, self.recalls):
            lines.append(f"{float(t)!r},{float(p)!r},{float(r)!r}")
        return "\n".join(lines) + "\n"


def pr_curve(scores, labels) -> PrCurve:
    """Exact precision/recall at every distinct score threshold."""
    scores = check_scores(scores)
    labels = check_labels(labels, scores.shape[0], "labels")
    if scores.shape[0] == 0:
        raise EvaluationError("cannot build a PR curve from zero examples")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise EvaluationError("cannot build a PR curve without positive labels")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    cum_tp = np.cumsum(y)
    # last index of each tie group = positions where the next score differs
    boundary = np.flatnonzero(np.diff(s) != 0.0)
    last = np.append(boundary, s.shape[0] - 1)
    thresholds = s[last]
    tp = cum_tp[last]
    predicted = last + 1.0
    precisions = tp / predicted
    recalls = tp / n_pos
    return PrCurve(thresholds=thresholds, precisions=precisions, recalls=recalls)


def pr_auc(curve: PrCurve) -> float:
    """Average precision: sum of precision * recall increment, top down."""
    prev = np.concatenate([[0.0], curve.recalls[:-1]])
    return float(np.sum((curve.recalls - prev) * curve.precisions))


def recall_at_precision(curve: PrCurve, target: float):
    """(max recall, threshold) among points with precision >= target.

    Among qualifying points achieving that recall, the lowest threshold
    is reported. Returns (0.0, None) when no point qualifies.
    """
    if not (0.0 < target <= 1.0):
        raise ConfigError(f"target precision must lie in (0, 1], got {target}")
    ok = curve.precisions >= target
    if not ok.any():
        return 0.0, None
    best_recall = curve.recalls[ok].max()
    at_best = ok & (curve.recalls == best_recall)
    threshold = float(curve.thresholds[at_best].min())
    return float(best_recall), threshold


@dataclass(frozen=True, slots=True)
class MetricsReport:
    pr_auc: float
    recall_at: dict[float, tuple[float, float | None]]
    n_examples: int
    n_positives: int
    curve: PrCurve

    def to_text(self) -> str:
        lines = [
            f"examples\t{self.n_examples}",
            f"positives\t{self.n_positives}",
            f"pr_auc\t{self.pr_auc!r}",
        ]
        for target in sorted(self.recall_at):
            recall, threshold = self.recall_at[target]
            thr = "none" if threshold is None else repr(threshold)
            lines.append(f"recall_at_{target!r}\t{recall!r}\t{thr}")
        return "\n".join(lines) + "\n"


def _score_dataset(scorer, ds: Dataset) -> dict[str, np.ndarray]:
    """Per-user score arrays; models may provide a batched fast path."""
    fn = getattr(scorer, "score_dataset", None)
    if fn is not None:
        return fn(ds)
    return {user: scorer.score_log(ds.logs[user]) for user in ds.users()}


def evaluate_model(scorer, ds: Dataset, eval_window_days: float = 7.0,
                   targets=(0.5,)) -> MetricsReport:
    """Replay a model over held-out logs and score the trailing window.

    The scorer sees each user's sessions chronologically (history before
    the window warms its state); only sessions with timestamps in the
    final ``eval_window_days`` of the dataset time range enter the
    metrics. Same model, same data gives an identical report.
    """
    if ds.time_range is None:
        raise EvaluationError("cannot evaluate on an empty dataset")
    if eval_window_days <= 0:
        raise ConfigError(f"eval_window_days must be positive, got {eval_window_days}")
    cutoff = ds.time_range[1] - int(eval_window_days * SECONDS_PER_DAY)
    per_user = _score_dataset(scorer, ds)
    scores: list[np.ndarray] = []
    labels: list[np.ndarray] = []
    for user in ds.users():
        log = ds.logs[user]
        user_scores = np.asarray(per_user[user], dtype=np.float64)
        ts = log.timestamps()
        if user_scores.shape[0] != ts.shape[0]:
            raise EvaluationError(
                f"scorer returned {user_scores.shape[0]} scores for "
                f"{ts.shape[0]} sessions of user {user!r}")
        keep = ts >= cutoff
        scores.append(user_scores[keep])
        labels.append(log.labels()[keep])
    all_scores = np.concatenate(scores) if scores else np.array([])
    all_labels = np.concatenate(labels) if labels else np.array([])
    if all_scores.shape[0] == 0:
        raise EvaluationError("evaluation window contains no sessions")
    return _report(all_scores, all_labels, targets)


def evaluate_peaks(scorer, ds: Dataset, peaks: list[PeakExample],
                   eval_window_days: float = 7.0, targets=(0.5,)) -> MetricsReport:
    """Timeshift evaluation: score daily peak-window examples."""
    if ds.time_range is None:
        raise EvaluationError("cannot evaluate on an empty dataset")
    cutoff = ds.time_range[1] - int(eval_window_days * SECONDS_PER_DAY)
    by_user: dict[str, list[PeakExample]] = {}
    for ex in peaks:
        by_user.setdefault(ex.user_id, []).append(ex)
    scores: list[np.ndarray] = []
    labels: list[np.ndarray] = []
    for user in sorted(by_user):
        user_peaks = by_user[user]
        if user not in ds.logs:
            raise EvaluationError(f"peak examples reference unknown user {user!r}")
        p = np.asarray(scorer.score_peaks(ds.logs[user], user_peaks), dtype=np.float64)
        starts = np.array([ex.window[0] for ex in user_peaks], dtype=np.int64)
        y = np.array([ex.label for ex in user_peaks], dtype=np.float64)
        keep = starts >= cutoff
        scores.append(p[keep])
        labels.append(y[keep])
    all_scores = np.concatenate(scores) if scores else np.array([])
    all_labels = np.concatenate(labels) if labels else np.array([])
    if all_scores.shape[0] == 0:
        raise EvaluationError("evaluation window contains no peak examples")
    return _report(all_scores, all_labels, targets)


def _report(scores: np.ndarray, labels: np.ndarray, targets) -> MetricsReport:
    curve = pr_curve(scores, labels)
    recall_at = {float(t): recall_at_precision(curve, float(t)) for t in targets}
    return MetricsReport(
        pr_auc=pr_auc(curve),
        recall_at=recall_at,
        n_examples=int(scores.shape[0]),
        n_positives=int(labels.sum()),
        curve=curve,
    )
