"""Discrete-event replay of the precompute serving loop.

Each session start reads the user's stored hidden state, scores the
session, and fires a precompute when the probability clears the policy
threshold (strictly). The state update for that session becomes visible
only at its commit event, ``session_length + commit_latency`` seconds
after the session start. Events at equal times process reads before
commits, so a commit is visible only to strictly later reads; with the
commit latency left at the model's own lag this reproduces the offline
replay bit for bit.

Costs are tracked in plain counters so policies can be compared on
storage traffic as well as precision: one key-value read per session
start, one write per commit, one model evaluation per decision. The
aggregation-backed alternative is costed per prediction as one lookup
per (subset, window) pair plus two elapsed-time lookups per subset.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .datamodel import Dataset, SECONDS_PER_DAY
from .errors import CalibrationError, ConfigError, SimulationError
from .evaluation import pr_auc, pr_curve, recall_at_precision
from .validation import check_labels, check_scores


class HiddenStore:
    """Per-user hidden state keyed store with read/write counters."""

    def __init__(self):
        self._states: dict[str, tuple[np.ndarray, int]] = {}
        self.reads = 0
        self.writes = 0

    def read(self, user_id: str):
        """Serving read: (hidden, updated_at) or (None, None) if absent."""
        self.reads += 1
        entry = self._states.get(user_id)
        if entry is None:
            return None, None
        return entry

    def peek(self, user_id: str):
        """Uncounted read for the commit path's read-modify-write."""
        entry = self._states.get(user_id)
        if entry is None:
            return None, None
        return entry

    def write(self, user_id: str, hidden: np.ndarray, updated_at: int) -> None:
        self.writes += 1
        self._states[user_id] = (hidden, int(updated_at))

    def __len__(self) -> int:
        return len(self._states)


class SessionBuffer:
    """Sessions awaiting their commit event, FIFO per user."""

    def __init__(self):
        self._pending: dict[str, list] = {}
        self.max_outstanding = 0
        self._outstanding = 0

    def push(self, user_id: str, item) -> None:
        self._pending.setdefault(user_id, []).append(item)
        self._outstanding += 1
        if self._outstanding > self.max_outstanding:
            self.max_outstanding = self._outstanding

    def pop(self, user_id: str):
        queue = self._pending.get(user_id)
        if not queue:
            raise SimulationError(f"commit event with empty buffer for user {user_id!r}")
        self._outstanding -= 1
        item = queue.pop(0)
        if not queue:
            del self._pending[user_id]
        return item


@dataclass(frozen=True, slots=True)
class DecisionPolicy:
    """Fire a precompute when probability strictly exceeds the threshold."""

    threshold: float

    def __post_init__(self):
        if not np.isfinite(self.threshold):
            raise ConfigError(f"threshold must be finite, got {self.threshold}")

    def decide(self, probability: float) -> bool:
        return probability > self.threshold


@dataclass(slots=True)
class CostLedger:
    kv_reads: int = 0
    kv_writes: int = 0
    model_evals: int = 0
    precomputes: int = 0
    successful_precomputes: int = 0
    wasted_precomputes: int = 0
    aggregation_lookups_equivalent: int = 0

    def to_text(self) -> str:
        lines = [
            f"kv_reads\t{self.kv_reads}",
            f"kv_writes\t{self.kv_writes}",
            f"model_evals\t{self.model_evals}",
            f"precomputes\t{self.precomputes}",
            f"successful_precomputes\t{self.successful_precomputes}",
            f"wasted_precomputes\t{self.wasted_precomputes}",
            f"aggregation_lookups_equivalent\t{self.aggregation_lookups_equivalent}",
        ]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True, slots=True)
class SimReport:
    ledger: CostLedger
    n_sessions: int
    n_users: int
    probs: dict[str, np.ndarray]  # per-user scores, session order
    fired: dict[str, np.ndarray]  # per-user 0/1 decisions, session order
    day_series: list[tuple[int, int, int, int]]  # (day, fired, successful, wasted)
    store_size: int
    max_buffered: int

    def precision(self) -> float | None:
        if self.ledger.precomputes == 0:
            return None
        return self.ledger.successful_precomputes / self.ledger.precomputes

    def day_series_csv(self) -> str:
        lines = ["day,precomputes,successful,wasted"]
        for day, fired, good, bad in self.day_series:
            lines.append(f"{day},{fired},{good},{bad}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        lines = [
            f"sessions\t{self.n_sessions}",
            f"users\t{self.n_users}",
            f"store_size\t{self.store_size}",
            f"max_buffered\t{self.max_buffered}",
        ]
        precision = self.precision()
        lines.append(f"precision\t{'none' if precision is None else repr(precision)}")
        return "\n".join(lines) + "\n" + self.ledger.to_text()


_START = 0  # same-time reads run before commits: kind orders the heap
_COMMIT = 1


def replay(ds: Dataset, model, policy: DecisionPolicy,
           commit_latency: int | None = None) -> SimReport:
    """Run the serving loop over a dataset's sessions in time order.

    ``commit_latency`` is the extra delay after session end before the
    state write lands; it defaults to the model's own lag allowance so
    the online scores match the offline replay exactly.
    """
    for attr in ("serve_predict", "serve_update", "epsilon_lag"):
        if not hasattr(model, attr):
            raise SimulationError(f"model lacks serving hook {attr!r}")
    if commit_latency is None:
        commit_latency = model.epsilon_lag
    if commit_latency < 0:
        raise ConfigError(f"commit_latency must be >= 0, got {commit_latency}")
    commit_delay = ds.session_length + int(commit_latency)

    store = HiddenStore()
    buffer = SessionBuffer()
    ledger = CostLedger()
    probs: dict[str, list[float]] = {}
    fired: dict[str, list[float]] = {}
    day_counts: dict[int, list[int]] = {}

    heap: list[tuple[int, int, str, int]] = []
    for user in ds.users():
        probs[user] = []
        fired[user] = []
        for i, session in enumerate(ds.logs[user].sessions):
            heapq.heappush(heap, (session.timestamp, _START, user, i))

    n_sessions = 0
    while heap:
        time, kind, user, idx = heapq.heappop(heap)
        if kind == _START:
            session = ds.logs[user].sessions[idx]
            hidden, updated_at = store.read(user)
            p = model.serve_predict(hidden, updated_at, session.context, time)
            ledger.model_evals += 1
            n_sessions += 1
            decision = policy.decide(p)
            probs[user].append(p)
            fired[user].append(1.0 if decision else 0.0)
            if decision:
                ledger.precomputes += 1
                if session.access:
                    ledger.successful_precomputes += 1
                else:
                    ledger.wasted_precomputes += 1
                day = time // SECONDS_PER_DAY
                counts = day_counts.setdefault(day, [0, 0, 0])
                counts[0] += 1
                counts[1 if session.access else 2] += 1
            buffer.push(user, idx)
            heapq.heappush(heap, (time + commit_delay, _COMMIT, user, idx))
        else:
            pending = buffer.pop(user)
            session = ds.logs[user].sessions[pending]
            hidden, updated_at = store.peek(user)
            new_hidden = model.serve_update(
                hidden, session.context, session.access, updated_at,
                session.timestamp)
            store.write(user, new_hidden, session.timestamp)

    ledger.kv_reads = store.reads
    ledger.kv_writes = store.writes
    day_series = [(day, c[0], c[1], c[2]) for day, c in sorted(day_counts.items())]
    return SimReport(
        ledger=ledger,
        n_sessions=n_sessions,
        n_users=len(ds.logs),
        probs={u: np.array(v, dtype=np.float64) for u, v in probs.items()},
        fired={u: np.array(v, dtype=np.float64) for u, v in fired.items()},
        day_series=day_series,
        store_size=len(store),
        max_buffered=buffer.max_outstanding,
    )


@dataclass(frozen=True, slots=True)
class CalibrationResult:
    threshold: float
    precision: float
    recall: float


def calibrate_threshold(scores, labels, target_precision: float) -> CalibrationResult:
    """Pick the loosest threshold whose operating point meets the target.

    The returned threshold is the largest float strictly below the
    qualifying score, so a strict greater-than comparator fires exactly
    the sessions scoring at or above that point. Raises CalibrationError
    carrying the best achievable precision when no point qualifies.
    """
    scores = check_scores(scores)
    labels = check_labels(labels, scores.shape[0], "labels")
    curve = pr_curve(scores, labels)
    recall, threshold = recall_at_precision(curve, target_precision)
    if threshold is None:
        best = float(curve.precisions.max())
        raise CalibrationError(
            f"no threshold reaches precision {target_precision}; "
            f"best achievable is {best!r}", max_precision=best)
    at = np.flatnonzero(curve.thresholds == threshold)[0]
    return CalibrationResult(
        threshold=float(np.nextafter(threshold, -np.inf)),
        precision=float(curve.precisions[at]),
        recall=float(recall),
    )


@dataclass(frozen=True, slots=True)
class BaselineCostReport:
    n_predictions: int
    n_subsets: int
    n_windows: int
    lookups_per_prediction: int
    updates_per_session: int
    ledger: CostLedger

    def to_text(self) -> str:
        # the embedded ledger's only live counter; spelling the rest out
        # would shadow the simulator's ledger when reports are concatenated
        lines = [
            f"predictions\t{self.n_predictions}",
            f"subsets\t{self.n_subsets}",
            f"windows\t{self.n_windows}",
            f"lookups_per_prediction\t{self.lookups_per_prediction}",
            f"updates_per_session\t{self.updates_per_session}",
            f"baseline_lookups_total\t{self.ledger.aggregation_lookups_equivalent}",
        ]
        return "\n".join(lines) + "\n"


def replay_baseline_costs(ds: Dataset, featurizer) -> BaselineCostReport:
    """Cost an aggregation-backed scorer over the same serving traffic.

    Every prediction must fetch one windowed count per (subset, window)
    pair plus the last-access and last-session timestamps per subset;
    every session appends to each subset's aggregation key.
    """
    subsets = getattr(featurizer, "subsets_", None)
    windows = getattr(featurizer, "windows_", None)
    if subsets is None or windows is None:
        raise SimulationError("featurizer must be fitted before costing")
    n_subsets = len(subsets)
    n_windows = len(windows)
    per_prediction = n_subsets * n_windows + 2 * n_subsets
    n_predictions = ds.n_sessions()
    ledger = CostLedger(
        model_evals=n_predictions,
        aggregation_lookups_equivalent=per_prediction * n_predictions,
    )
    return BaselineCostReport(
        n_predictions=n_predictions,
        n_subsets=n_subsets,
        n_windows=n_windows,
        lookups_per_prediction=per_prediction,
        updates_per_session=n_subsets,
        ledger=ledger,
    )


@dataclass(frozen=True, slots=True)
class CostComparison:
    baseline_lookups_per_prediction: int
    recurrent_kv_ops_per_session: float
    ratio: float

    def to_text(self) -> str:
        return (
            f"baseline_lookups_per_prediction\t{self.baseline_lookups_per_prediction}\n"
            f"recurrent_kv_ops_per_session\t{self.recurrent_kv_ops_per_session!r}\n"
            f"ratio\t{self.ratio!r}\n"
        )


def compare_costs(sim: SimReport, baseline: BaselineCostReport) -> CostComparison:
    """Per-prediction storage traffic of aggregations versus state reads."""
    if sim.n_sessions == 0:
        raise SimulationError("cannot compare costs over zero sessions")
    kv_ops = (sim.ledger.kv_reads + sim.ledger.kv_writes) / sim.n_sessions
    if kv_ops == 0:
        raise SimulationError("recurrent replay recorded no key-value traffic")
    return CostComparison(
        baseline_lookups_per_prediction=baseline.lookups_per_prediction,
        recurrent_kv_ops_per_session=kv_ops,
        ratio=baseline.lookups_per_prediction / kv_ops,
    )


def cold_start_series(scorer, ds: Dataset) -> list[tuple[int, int, int, float | None]]:
    """Per-day ranking quality from the first day of traffic onward.

    Returns (day_index, examples, positives, area) rows where the area
    is None on days without both classes present. Day indices count
    from the first day in the dataset's time range.
    """
    if ds.time_range is None:
        raise SimulationError("cannot build a series from an empty dataset")
    fn = getattr(scorer, "score_dataset", None)
    per_user = fn(ds) if fn is not None else {
        u: scorer.score_log(ds.logs[u]) for u in ds.users()}
    first_day = ds.time_range[0] // SECONDS_PER_DAY
    by_day: dict[int, tuple[list, list]] = {}
    for user in ds.users():
        log = ds.logs[user]
        scores = np.asarray(per_user[user], dtype=np.float64)
        for i, session in enumerate(log.sessions):
            day = session.timestamp // SECONDS_PER_DAY - first_day
            bucket = by_day.setdefault(day, ([], []))
            bucket[0].append(scores[i])
            bucket[1].append(float(session.access))
    series: list[tuple[int, int, int, float | None]] = []
    for day in sorted(by_day):
        day_scores, day_labels = by_day[day]
        arr_scores = np.array(day_scores, dtype=np.float64)
        arr_labels = np.array(day_labels, dtype=np.float64)
        n_pos = int(arr_labels.sum())
        if n_pos == 0 or n_pos == arr_labels.shape[0]:
            series.append((day, arr_labels.shape[0], n_pos, None))
            continue
        curve = pr_curve(arr_scores, arr_labels)
        series.append((day, arr_labels.shape[0], n_pos, pr_auc(curve)))
    return series


def series_csv(series: list[tuple[int, int, int, float | None]]) -> str:
    lines = ["day,examples,positives,pr_auc"]
    for day, n, pos, auc in series:
        lines.append(f"{day},{n},{pos},{'' if auc is None else repr(auc)}")
    return "\n".join(lines) + "\n"
