"""Feature engineering over session logs.

Three feature groups, laid out in a fixed order so that enabling the
history-dependent groups never changes the meaning of the context group:

* C: context of the current session. One-hot hashed categoricals,
  one-hot clamped counts, one-hot hour-of-day and day-of-week (UTC).
* E: elapsed seconds since the last access and since the last session,
  bucketized on a log scale, per matching context subset.
* A: sliding-window aggregations (access count, session count, ratio)
  per (window, context subset) pair.

A "context subset" is any subset of the schema's context dimensions;
events match a subset key when they share exact values on those
dimensions. The empty subset aggregates over everything the user did.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .datamodel import COUNT_MAX, Context, Dataset, Schema, SECONDS_PER_DAY
from .errors import ConfigError, DataError, OrderingError
from .validation import check_fitted, check_matrix

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

DEFAULT_WINDOWS = (28 * SECONDS_PER_DAY, 7 * SECONDS_PER_DAY, SECONDS_PER_DAY, 3600)
DEFAULT_HASH_MODULUS = 97
DEFAULT_ELAPSED_BUCKETS = 50
MAX_SUBSET_DIMS = 4
_COUNT_WIDTH = COUNT_MAX + 1
_GROUPS = ("C", "E", "A")


def hash_categorical(value: str, modulus: int = DEFAULT_HASH_MODULUS) -> int:
    """FNV-1a 64-bit hash of the UTF-8 value, reduced modulo ``modulus``.

    Pure integer arithmetic: stable across runs, platforms, and Python
    builds, unlike the builtin randomized string hash.
    """
    if modulus <= 0:
        raise ConfigError(f"hash modulus must be positive, got {modulus}")
    h = FNV_OFFSET
    for byte in value.encode("utf-8"):
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h % modulus


def bucketize_elapsed(seconds: float, buckets: int = DEFAULT_ELAPSED_BUCKETS) -> int:
    """Log-scale bucket of an elapsed duration.

    floor((buckets/15) * ln(t)) clamped to [0, buckets-1], with t floored
    at 1 second. 15 is the nominal log-range: 30 days is about e^14.77
    seconds, which lands in the top bucket.
    """
    if buckets <= 1:
        raise ConfigError(f"buckets must exceed 1, got {buckets}")
    t = max(float(seconds), 1.0)
    b = math.floor(buckets / 15.0 * math.log(t))
    return min(max(b, 0), buckets - 1)


def time_features(timestamp: int) -> tuple[int, int]:
    """(hour-of-day, day-of-week) in UTC; Monday is day 0."""
    hour = (timestamp // 3600) % 24
    dow = (timestamp // SECONDS_PER_DAY + 3) % 7  # epoch day 0 was a Thursday
    return int(hour), int(dow)


def context_subsets(schema: Schema, max_dims: int = MAX_SUBSET_DIMS) -> list[tuple[str, ...]]:
    """All subsets of the context dimensions, canonically ordered.

    Ordered by subset size then by dimension position, starting with the
    empty subset. Schemas with more than ``max_dims`` dimensions are
    rejected: the lattice doubles per dimension.
    """
    dims = schema.context_dims
    if len(dims) > max_dims:
        raise ConfigError(
            f"{len(dims)} context dimensions exceed the subset limit of {max_dims}"
        )
    subsets = []
    for mask in range(2 ** len(dims)):
        subsets.append(tuple(d for i, d in enumerate(dims) if mask >> i & 1))
    subsets.sort(key=lambda s: (len(s), tuple(dims.index(d) for d in s)))
    return subsets


def subset_name(subset: tuple[str, ...]) -> str:
    return "+".join(subset) if subset else "global"


def _subset_values(subset: tuple[str, ...], ctx: Context):
    # Missing fields participate as an explicit None value, so "missing"
    # only ever matches "missing".
    values = []
    for dim in subset:
        if dim in ctx.categoricals:
            values.append(ctx.categoricals[dim])
        elif dim in ctx.counts:
            values.append(ctx.counts[dim])
        else:
            values.append(None)
    return tuple(values)


class AggregationState:
    """Per-user event index answering sliding-window count queries.

    Single-writer: updates must arrive in strictly increasing timestamp
    order. Queries at time t over window w count events with timestamps
    in the open interval (t - w, t); the state never contains events at
    or after the query time because updates happen after extraction.
    """

    def __init__(self, schema: Schema, max_dims: int = MAX_SUBSET_DIMS):
        self.schema = schema
        self.subsets = context_subsets(schema, max_dims)
        self._ts: dict = {}       # key -> list of event timestamps
        self._cum: dict = {}      # key -> cumulative access counts
        self._last_access: dict = {}
        self._last_session: dict = {}
        self.last_timestamp: int | None = None
        self.n_events = 0

    def keys_for(self, ctx: Context) -> list[tuple[int, tuple]]:
        return [(i, _subset_values(s, ctx)) for i, s in enumerate(self.subsets)]

    def update(self, ctx: Context, access: int) -> None:
        ts = ctx.timestamp
        if self.last_timestamp is not None and ts <= self.last_timestamp:
            raise OrderingError(
                f"aggregation update at {ts} not after {self.last_timestamp}"
            )
        for key in self.keys_for(ctx):
            ts_list = self._ts.get(key)
            if ts_list is None:
                self._ts[key] = [ts]
                self._cum[key] = [int(access)]
            else:
                ts_list.append(ts)
                cum = self._cum[key]
                cum.append(cum[-1] + int(access))
            self._last_session[key] = ts
            if access:
                self._last_access[key] = ts
        self.last_timestamp = ts
        self.n_events += 1

    def window_counts(self, key, window: int, t: int) -> tuple[int, int]:
        """(access_count, session_count) for events in (t - window, t)."""
        ts_list = self._ts.get(key)
        if not ts_list:
            return 0, 0
        lo = bisect_right(ts_list, t - window)
        n = len(ts_list) - lo
        if n <= 0:
            return 0, 0
        cum = self._cum[key]
        acc = cum[-1] - (cum[lo - 1] if lo > 0 else 0)
        return acc, n

    def elapsed_since_access(self, key, t: int) -> int | None:
        last = self._last_access.get(key)
        return None if last is None else t - last

    def elapsed_since_session(self, key, t: int) -> int | None:
        last = self._last_session.get(key)
        return None if last is None else t - last


@dataclass(frozen=True, slots=True)
class FeatureSlice:
    name: str
    group: str
    start: int
    stop: int


class FeatureLayout:
    """Named slices of the feature vector, in C, E, A group order."""

    def __init__(self, slices: list[FeatureSlice]):
        self.slices = slices
        self.width = slices[-1].stop if slices else 0
        self._by_name = {s.name: s for s in slices}

    def __getitem__(self, name: str) -> FeatureSlice:
        return self._by_name[name]

    def names(self) -> list[str]:
        return [s.name for s in self.slices]

    def manifest_text(self) -> str:
        lines = ["name\tgroup\tstart\tstop"]
        for s in self.slices:
            lines.append(f"{s.name}\t{s.group}\t{s.start}\t{s.stop}")
        return "\n".join(lines) + "\n"


class SessionFeaturizer(BaseEstimator, TransformerMixin):
    """Transforms session logs into fixed-width feature matrices.

    Parameters
    ----------
    groups : feature groups to emit, subset of {"C", "E", "A"}.
    windows : aggregation window lengths in seconds, strictly decreasing.
    hash_modulus : one-hot width of each hashed categorical field.
    elapsed_buckets : bucket count for log-scale elapsed durations.
    numeric_time : emit hour/day-of-week as two scalar columns instead
        of one-hot (tree models split on ordinals directly).
    numeric_elapsed : emit elapsed buckets as scalar indices instead of
        one-hot.
    max_subset_dims : guard on the context-subset lattice size.
    """

    def __init__(self, groups=("C", "E", "A"), windows=DEFAULT_WINDOWS,
                 hash_modulus=DEFAULT_HASH_MODULUS,
                 elapsed_buckets=DEFAULT_ELAPSED_BUCKETS,
                 numeric_time=False, numeric_elapsed=False,
                 max_subset_dims=MAX_SUBSET_DIMS):
        self.groups = groups
        self.windows = windows
        self.hash_modulus = hash_modulus
        self.elapsed_buckets = elapsed_buckets
        self.numeric_time = numeric_time
        self.numeric_elapsed = numeric_elapsed
        self.max_subset_dims = max_subset_dims

    # -- fitting -----------------------------------------------------------

    def fit(self, ds: Dataset, y=None):
        return self.fit_schema(ds.schema)

    def fit_schema(self, schema: Schema):
        """Bind the layout to a schema directly (no data needed)."""
        groups = tuple(self.groups)
        if not groups or any(g not in _GROUPS for g in groups):
            raise ConfigError(f"groups must be a non-empty subset of {_GROUPS}, got {groups}")
        if len(set(groups)) != len(groups):
            raise ConfigError(f"duplicate feature groups: {groups}")
        windows = tuple(int(w) for w in self.windows)
        if not windows or any(w <= 0 for w in windows):
            raise ConfigError(f"windows must be positive, got {windows}")
        if any(a <= b for a, b in zip(windows, windows[1:])):
            raise ConfigError(f"windows must be strictly decreasing, got {windows}")
        if self.hash_modulus <= 0:
            raise ConfigError(f"hash_modulus must be positive, got {self.hash_modulus}")
        if self.elapsed_buckets <= 1:
            raise ConfigError(f"elapsed_buckets must exceed 1, got {self.elapsed_buckets}")
        self.schema_ = schema
        self.windows_ = windows
        self.groups_ = tuple(g for g in _GROUPS if g in groups)
        self.subsets_ = context_subsets(schema, self.max_subset_dims)
        self.layout_ = self._build_layout()
        return self

    def _build_layout(self) -> FeatureLayout:
        slices: list[FeatureSlice] = []
        pos = 0

        def add(name, group, width):
            nonlocal pos
            slices.append(FeatureSlice(name=name, group=group, start=pos, stop=pos + width))
            pos += width

        if "C" in self.groups_:
            for field in self.schema_.categorical:
                add(f"cat:{field}", "C", self.hash_modulus)
            for field in self.schema_.counts:
                add(f"count:{field}", "C", _COUNT_WIDTH)
            if self.numeric_time:
                add("time:hour", "C", 1)
                add("time:dow", "C", 1)
            else:
                add("time:hour", "C", 24)
                add("time:dow", "C", 7)
        if "E" in self.groups_:
            ew = 1 if self.numeric_elapsed else self.elapsed_buckets
            for subset in self.subsets_:
                sname = subset_name(subset)
                add(f"elapsed_access:{sname}", "E", ew)
                add(f"elapsed_session:{sname}", "E", ew)
        if "A" in self.groups_:
            for subset in self.subsets_:
                sname = subset_name(subset)
                for w in self.windows_:
                    add(f"agg:{sname}:{w}s", "A", 3)
        return FeatureLayout(slices)

    # -- extraction --------------------------------------------------------

    def new_state(self) -> AggregationState:
        check_fitted(self, "layout_")
        return AggregationState(self.schema_, self.max_subset_dims)

    def context_row(self, ctx: Context, out: np.ndarray | None = None) -> np.ndarray:
        """C-group feature row for a context, independent of history."""
        check_fitted(self, "layout_")
        width = self.context_width()
        if out is None:
            row = np.zeros(width, dtype=np.float64)
        else:
            row = out
            row[:] = 0.0
        pos = 0
        if "C" in self.groups_:
            for field in self.schema_.categorical:
                value = ctx.categoricals.get(field)
                if value is not None:
                    row[pos + hash_categorical(value, self.hash_modulus)] = 1.0
                pos += self.hash_modulus
            for field in self.schema_.counts:
                value = ctx.counts.get(field)
                if value is not None:
                    row[pos + value] = 1.0
                pos += _COUNT_WIDTH
            hour, dow = time_features(ctx.timestamp)
            if self.numeric_time:
                row[pos] = hour
                row[pos + 1] = dow
                pos += 2
            else:
                row[pos + hour] = 1.0
                pos += 24
                row[pos + dow] = 1.0
                pos += 7
        return row

    def context_width(self) -> int:
        check_fitted(self, "layout_")
        if "C" not in self.groups_:
            return 0
        c = [s for s in self.layout_.slices if s.group == "C"]
        return c[-1].stop - c[0].start

    def _elapsed_entry(self, row, pos, elapsed):
        # "never happened" lands in the top bucket, same as very old events
        if elapsed is None:
            bucket = self.elapsed_buckets - 1
        else:
            bucket = bucketize_elapsed(elapsed, self.elapsed_buckets)
        if self.numeric_elapsed:
            row[pos] = bucket
            return pos + 1
        row[pos + bucket] = 1.0
        return pos + self.elapsed_buckets

    def extract(self, state: AggregationState, ctx: Context,
                out: np.ndarray | None = None) -> np.ndarray:
        """Feature row for a session, using only history already in ``state``."""
        check_fitted(self, "layout_")
        if state.schema != self.schema_:
            raise DataError("aggregation state schema does not match the featurizer")
        if out is None:
            row = np.zeros(self.layout_.width, dtype=np.float64)
        else:
            row = out
            row[:] = 0.0
        t = ctx.timestamp
        pos = 0
        if "C" in self.groups_:
            self.context_row(ctx, out=row[: self.context_width()])
            pos = self.context_width()
        keys = state.keys_for(ctx) if ("E" in self.groups_ or "A" in self.groups_) else []
        if "E" in self.groups_:
            for key in keys:
                pos = self._elapsed_entry(row, pos, state.elapsed_since_access(key, t))
                pos = self._elapsed_entry(row, pos, state.elapsed_since_session(key, t))
        if "A" in self.groups_:
            for key in keys:
                for w in self.windows_:
                    acc, n = state.window_counts(key, w, t)
                    row[pos] = acc
                    row[pos + 1] = n
                    row[pos + 2] = acc / max(n, 1)
                    pos += 3
        return row

    # -- dataset-level matrices --------------------------------------------

    def matrix(self, ds: Dataset, window_days: float | None = None,
               dtype=np.float64):
        """(X, y, timestamps, user_ids) over all sessions, per-user replay.

        Feature rows are emitted only for sessions inside the trailing
        ``window_days`` of the dataset time range (all sessions when
        None), but aggregation state is always warmed on the full
        preceding history. Users are visited in sorted order; sessions
        chronologically.
        """
        check_fitted(self, "layout_")
        if ds.schema != self.schema_:
            raise DataError("dataset schema does not match the fitted featurizer")
        cutoff = None
        if window_days is not None:
            if ds.time_range is None:
                raise DataError("cannot window an empty dataset")
            cutoff = ds.time_range[1] - int(window_days * SECONDS_PER_DAY)
        n_rows = 0
        for user in ds.users():
            for rec in ds.logs[user].sessions:
                if cutoff is None or rec.timestamp >= cutoff:
                    n_rows += 1
        X = np.zeros((n_rows, self.layout_.width), dtype=dtype)
        y = np.zeros(n_rows, dtype=np.float64)
        ts_out = np.zeros(n_rows, dtype=np.int64)
        users_out: list[str] = []
        row = np.zeros(self.layout_.width, dtype=np.float64)
        r = 0
        for user in ds.users():
            state = self.new_state()
            for rec in ds.logs[user].sessions:
                if cutoff is None or rec.timestamp >= cutoff:
                    self.extract(state, rec.context, out=row)
                    X[r] = row
                    y[r] = rec.access
                    ts_out[r] = rec.timestamp
                    users_out.append(user)
                    r += 1
                state.update(rec.context, rec.access)
        return X, y, ts_out, users_out

    def transform(self, ds: Dataset) -> np.ndarray:
        """Feature matrix over every session (sklearn transformer surface)."""
        X, _, _, _ = self.matrix(ds)
        return X


class ColumnScaler(BaseEstimator, TransformerMixin):
    """Per-column standardization: (x - mean) / std, constant columns pass through."""

    def __init__(self, copy: bool = True):
        self.copy = copy

    def fit(self, X, y=None):
        X = check_matrix(X)
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        std[std == 0.0] = 1.0
        self.scale_ = std
        return self

    def transform(self, X) -> np.ndarray:
        check_fitted(self, "scale_")
        X = np.asarray(X)
        if self.copy:
            X = X.astype(X.dtype, copy=True)
        X -= self.mean_.astype(X.dtype)
        X /= self.scale_.astype(X.dtype)
        return X
