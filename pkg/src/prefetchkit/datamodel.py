"""Session access logs: core types, TSV ingestion, splits, and synthesis.

A dataset is a set of per-user session logs. Each session carries a UTC
timestamp (integer seconds), a context (categorical string fields plus
small bounded integer count fields), and a binary access label: whether
the user performed the precomputable action during that session.

The on-disk format is a UTF-8 TSV whose first line declares the schema::

    #schema\tsession_length=1200\tcat=active_tab\tcount=unread
    u0\t1641024000\t1\tactive_tab=Home;unread=3

Serialization is canonical (users sorted, sessions chronological, fields
in schema order) so ingest -> serialize -> ingest is byte-stable.
"""

from __future__ import annotations

import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError, OrderingError
from .seeding import derive_rng

SECONDS_PER_DAY = 86400
COUNT_MIN = 0
COUNT_MAX = 99
DEFAULT_SESSION_LENGTH = 1200

_HEADER_PREFIX = "#schema"
_RESERVED_CHARS = ("\t", "\n", ";", "=")


def clamp_count(value: int) -> int:
    """Clamp a count field into the supported [0, 99] range."""
    return max(COUNT_MIN, min(COUNT_MAX, int(value)))


@dataclass(frozen=True, slots=True)
class Schema:
    """Ordered context field names: categoricals first, then counts."""

    categorical: tuple[str, ...] = ()
    counts: tuple[str, ...] = ()

    def __post_init__(self):
        seen = set()
        for name in self.categorical + self.counts:
            if not name or any(ch in name for ch in _RESERVED_CHARS + (",",)):
                raise DataError(f"invalid schema field name: {name!r}")
            if name in seen:
                raise DataError(f"duplicate schema field name: {name!r}")
            seen.add(name)

    @property
    def context_dims(self) -> tuple[str, ...]:
        return self.categorical + self.counts


@dataclass(frozen=True, slots=True)
class Context:
    """Session context at a point in time.

    ``categoricals`` and ``counts`` may omit fields declared by the
    schema; a missing field is treated as an explicit "missing" value
    downstream (all-zero one-hot slice, no subset match on that field).
    """

    timestamp: int
    categoricals: dict[str, str] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)


@dataclass(frozen=True, slots=True)
class SessionRecord:
    user_id: str
    context: Context
    access: int

    @property
    def timestamp(self) -> int:
        return self.context.timestamp


@dataclass(frozen=True, slots=True)
class AccessLog:
    """One user's chronologically ordered sessions."""

    user_id: str
    sessions: tuple[SessionRecord, ...]

    def timestamps(self) -> np.ndarray:
        return np.array([s.timestamp for s in self.sessions], dtype=np.int64)

    def labels(self) -> np.ndarray:
        return np.array([s.access for s in self.sessions], dtype=np.float64)

    def __len__(self) -> int:
        return len(self.sessions)


@dataclass(frozen=True, slots=True)
class Dataset:
    """Validated collection of access logs sharing one schema.

    ``truth`` optionally carries the generating probability of each
    session (same per-user ordering); it is ignored by equality checks
    and never serialized into the log file itself.
    """

    logs: dict[str, AccessLog]
    schema: Schema
    session_length: int = DEFAULT_SESSION_LENGTH
    truth: dict[str, tuple[float, ...]] | None = field(default=None, compare=False)
    time_range: tuple[int, int] | None = field(default=None, init=False)

    def __post_init__(self):
        if self.session_length <= 0:
            raise ConfigError(f"session_length must be positive, got {self.session_length}")
        cat_fields = set(self.schema.categorical)
        count_fields = set(self.schema.counts)
        t_min, t_max = None, None
        for user_id, log in self.logs.items():
            if log.user_id != user_id:
                raise DataError(f"log keyed {user_id!r} carries user_id {log.user_id!r}")
            prev = None
            for rec in log.sessions:
                if rec.user_id != user_id:
                    raise DataError(f"session under {user_id!r} carries user_id {rec.user_id!r}")
                ts = rec.context.timestamp
                if prev is not None and ts <= prev:
                    raise OrderingError(
                        f"user {user_id!r}: timestamps must strictly increase "
                        f"({ts} after {prev})"
                    )
                prev = ts
                if rec.access not in (0, 1):
                    raise DataError(f"user {user_id!r}: access must be 0 or 1, got {rec.access}")
                for name in rec.context.categoricals:
                    if name not in cat_fields:
                        raise DataError(f"user {user_id!r}: unknown categorical field {name!r}")
                for name, value in rec.context.counts.items():
                    if name not in count_fields:
                        raise DataError(f"user {user_id!r}: unknown count field {name!r}")
                    if not (COUNT_MIN <= value <= COUNT_MAX):
                        raise DataError(
                            f"user {user_id!r}: count {name!r}={value} outside "
                            f"[{COUNT_MIN}, {COUNT_MAX}]"
                        )
                if t_min is None or ts < t_min:
                    t_min = ts
                if t_max is None or ts > t_max:
                    t_max = ts
        rng = None if t_min is None else (t_min, t_max)
        object.__setattr__(self, "time_range", rng)

    def users(self) -> list[str]:
        return sorted(self.logs)

    def n_sessions(self) -> int:
        return sum(len(log) for log in self.logs.values())


@dataclass(frozen=True, slots=True)
class SplitSpec:
    """Deterministic train/test user split."""

    train_fraction: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.train_fraction < 1.0):
            raise ConfigError(
                f"train_fraction must lie in (0, 1), got {self.train_fraction}"
            )


@dataclass(frozen=True, slots=True)
class PeakExample:
    """Daily peak-window label: did any access land inside the window."""

    user_id: str
    day: int                   # UTC epoch day index
    window: tuple[int, int]    # [start, end) in epoch seconds
    label: int


# ---------------------------------------------------------------------------
# TSV ingestion / serialization


def _format_context(ctx: Context, schema: Schema) -> str:
    parts = []
    for name in schema.categorical:
        if name in ctx.categoricals:
            value = ctx.categoricals[name]
            for ch in _RESERVED_CHARS:
                if ch in value:
                    raise DataError(f"categorical value {value!r} contains reserved {ch!r}")
            parts.append(f"{name}={value}")
    for name in schema.counts:
        if name in ctx.counts:
            parts.append(f"{name}={ctx.counts[name]}")
    return ";".join(parts) if parts else "-"


def _parse_context(text: str, schema: Schema, timestamp: int, lineno: int) -> Context:
    cats: dict[str, str] = {}
    counts: dict[str, int] = {}
    if text != "-" and text != "":
        for item in text.split(";"):
            if "=" not in item:
                raise DataError(f"line {lineno}: malformed context item {item!r}")
            key, value = item.split("=", 1)
            if key in schema.categorical:
                cats[key] = value
            elif key in schema.counts:
                try:
                    counts[key] = clamp_count(int(value))
                except ValueError:
                    raise DataError(f"line {lineno}: count {key!r} is not an integer: {value!r}")
            else:
                raise DataError(f"line {lineno}: field {key!r} not declared by the header")
    return Context(timestamp=timestamp, categoricals=cats, counts=counts)


def _parse_header(line: str, lineno: int = 1) -> tuple[Schema, int]:
    parts = line.rstrip("\n").split("\t")
    if not parts or parts[0] != _HEADER_PREFIX:
        raise DataError(f"line {lineno}: expected header starting with {_HEADER_PREFIX!r}")
    session_length = DEFAULT_SESSION_LENGTH
    cats: tuple[str, ...] = ()
    counts: tuple[str, ...] = ()
    for part in parts[1:]:
        if "=" not in part:
            raise DataError(f"line {lineno}: malformed header item {part!r}")
        key, value = part.split("=", 1)
        if key == "session_length":
            session_length = int(value)
        elif key == "cat":
            cats = tuple(v for v in value.split(",") if v)
        elif key == "count":
            counts = tuple(v for v in value.split(",") if v)
        else:
            raise DataError(f"line {lineno}: unknown header key {key!r}")
    return Schema(categorical=cats, counts=counts), session_length


def ingest(path: str, schema: Schema | None = None,
           session_length: int | None = None) -> Dataset:
    """Parse a session-log TSV into a validated Dataset.

    The header line is authoritative for the schema; passing ``schema``
    asserts that the file matches the expectation. ``session_length``
    overrides the header value when given. Lines may be interleaved
    across users; within a user, duplicate timestamps are rejected.
    """
    per_user: dict[str, list[SessionRecord]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header:
            raise DataError(f"{path}: empty file, missing header")
        file_schema, file_sl = _parse_header(header)
        if schema is not None and schema != file_schema:
            raise DataError(f"{path}: header schema {file_schema} does not match expected {schema}")
        sl = session_length if session_length is not None else file_sl
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise DataError(f"line {lineno}: expected 4 tab-separated fields, got {len(fields)}")
            user_id, ts_text, access_text, ctx_text = fields
            if not user_id:
                raise DataError(f"line {lineno}: empty user id")
            try:
                ts = int(ts_text)
            except ValueError:
                raise DataError(f"line {lineno}: timestamp is not an integer: {ts_text!r}")
            if access_text not in ("0", "1"):
                raise DataError(f"line {lineno}: access flag must be 0 or 1, got {access_text!r}")
            ctx = _parse_context(ctx_text, file_schema, ts, lineno)
            per_user.setdefault(user_id, []).append(
                SessionRecord(user_id=user_id, context=ctx, access=int(access_text))
            )
    logs: dict[str, AccessLog] = {}
    for user_id, records in per_user.items():
        records.sort(key=lambda r: r.timestamp)
        for a, b in zip(records, records[1:]):
            if a.timestamp == b.timestamp:
                raise OrderingError(
                    f"user {user_id!r}: duplicate timestamp {a.timestamp}"
                )
        logs[user_id] = AccessLog(user_id=user_id, sessions=tuple(records))
    return Dataset(logs=logs, schema=file_schema, session_length=sl)


def write_dataset(ds: Dataset, path: str) -> None:
    """Serialize a Dataset to its canonical TSV form."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_header(ds.schema, ds.session_length) + "\n")
        for user_id in ds.users():
            for rec in ds.logs[user_id].sessions:
                ctx_text = _format_context(rec.context, ds.schema)
                fh.write(f"{user_id}\t{rec.timestamp}\t{rec.access}\t{ctx_text}\n")


def serialize_header(schema: Schema, session_length: int) -> str:
    return (
        f"{_HEADER_PREFIX}\tsession_length={session_length}"
        f"\tcat={','.join(schema.categorical)}"
        f"\tcount={','.join(schema.counts)}"
    )


# ---------------------------------------------------------------------------
# Splits and peak-window labels


def split_users(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Disjoint train/test partition of users, deterministic in the seed.

    The train side receives round(fraction * n) users, clamped so both
    sides are non-empty.
    """
    users = ds.users()
    if len(users) < 2:
        raise DataError("split requires at least 2 users")
    order = derive_rng(spec.seed, "split").permutation(len(users))
    n_train = int(round(spec.train_fraction * len(users)))
    n_train = max(1, min(len(users) - 1, n_train))
    train_ids = sorted(users[i] for i in order[:n_train])
    test_ids = sorted(users[i] for i in order[n_train:])
    return subset_dataset(ds, train_ids), subset_dataset(ds, test_ids)


def subset_dataset(ds: Dataset, user_ids) -> Dataset:
    """Dataset restricted to the given users (schema and length shared)."""
    missing = [u for u in user_ids if u not in ds.logs]
    if missing:
        raise DataError(f"unknown users in subset: {missing[:5]}")
    logs = {u: ds.logs[u] for u in user_ids}
    truth = None
    if ds.truth is not None:
        truth = {u: ds.truth[u] for u in user_ids if u in ds.truth}
    return Dataset(logs=logs, schema=ds.schema,
                   session_length=ds.session_length, truth=truth)


def derive_peak_examples(ds: Dataset, start_hour: int, end_hour: int) -> list[PeakExample]:
    """One peak-window example per user per calendar day of the dataset.

    The label is 1 iff the user logged at least one access with a
    timestamp inside [day + start_hour, day + end_hour) UTC. Days with
    no sessions at all still yield (negative) examples.
    """
    if not (0 <= start_hour < end_hour <= 24):
        raise ConfigError(f"peak window must satisfy 0 <= start < end <= 24, got [{start_hour}, {end_hour})")
    if ds.time_range is None:
        return []
    first_day = ds.time_range[0] // SECONDS_PER_DAY
    last_day = ds.time_range[1] // SECONDS_PER_DAY
    examples: list[PeakExample] = []
    for user_id in ds.users():
        log = ds.logs[user_id]
        access_ts = [s.timestamp for s in log.sessions if s.access == 1]
        for day in range(first_day, last_day + 1):
            lo = day * SECONDS_PER_DAY + start_hour * 3600
            hi = day * SECONDS_PER_DAY + end_hour * 3600
            n_in = bisect_left(access_ts, hi) - bisect_left(access_ts, lo)
            examples.append(PeakExample(user_id=user_id, day=day,
                                        window=(lo, hi), label=int(n_in > 0)))
    return examples


# ---------------------------------------------------------------------------
# Synthetic generation


@dataclass(frozen=True, slots=True)
class GeneratorConfig:
    """Planted-signal synthetic world.

    Each session's access label is drawn from a logistic ground truth::

        logit = base_logit + user_bias
              + hour_weight * cos(2*pi*(hour - peak_hour)/24)
              + count_weight * min(count, 10)/10
              + markov_weight * prev_access
              + dormancy_weight * (momentum - 0.5)
              + interaction_weight * (momentum - 0.5) * cos(2*pi*(hour - peak_hour)/24)

    where ``momentum`` is a per-user exponential moving average of past
    access labels (decay ``dormancy_decay``, initialized at 0.5), so a
    stretch without accesses decays the user toward dormancy. user_bias
    is drawn once per user from N(0, user_sigma). With every weight at
    zero the access rate equals sigmoid(base_logit).
    """

    users: int = 100
    days: int = 30
    sessions_per_day: float = 3.0
    rate_shape: float = 4.0          # Gamma shape of per-user session rates
    base_logit: float = -1.0
    user_sigma: float = 0.0
    hour_weight: float = 0.0
    peak_hour: int = 19
    count_weight: float = 0.0
    markov_weight: float = 0.0
    dormancy_weight: float = 0.0
    dormancy_decay: float = 0.85
    interaction_weight: float = 0.0
    tab_field: str = "active_tab"
    tab_values: tuple[str, ...] = ("Home", "Feed", "Messages")
    count_field: str = "unread"
    count_mean: float = 3.0
    session_length: int = DEFAULT_SESSION_LENGTH
    start_day: int = 19000           # epoch day of the first generated day

    def __post_init__(self):
        if self.users <= 0 or self.days <= 0:
            raise ConfigError("users and days must be positive")
        if self.sessions_per_day <= 0 or self.rate_shape <= 0:
            raise ConfigError("session rate parameters must be positive")
        if not (0.0 <= self.dormancy_decay < 1.0):
            raise ConfigError("dormancy_decay must lie in [0, 1)")
        if not (0 <= self.peak_hour < 24):
            raise ConfigError("peak_hour must lie in [0, 24)")


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def generate_synthetic(gen: GeneratorConfig, seed: int) -> Dataset:
    """Generate a Dataset from the planted ground-truth model.

    Deterministic in (gen, seed); ground-truth probabilities are kept on
    ``Dataset.truth`` keyed by user, aligned with each session sequence.
    """
    schema = Schema(categorical=(gen.tab_field,), counts=(gen.count_field,))
    logs: dict[str, AccessLog] = {}
    truth: dict[str, tuple[float, ...]] = {}
    width = len(str(max(gen.users - 1, 1)))
    for u in range(gen.users):
        user_id = f"u{u:0{width}d}"
        rng = derive_rng(seed, f"generate:{user_id}")
        rate = rng.gamma(gen.rate_shape, gen.sessions_per_day / gen.rate_shape)
        user_bias = rng.normal(0.0, gen.user_sigma) if gen.user_sigma > 0 else 0.0
        tab_pref = rng.dirichlet(np.ones(len(gen.tab_values)) * 2.0)
        offsets: list[int] = []
        for day in range(gen.days):
            n_d = rng.poisson(rate)
            if n_d == 0:
                continue
            base = (gen.start_day + day) * SECONDS_PER_DAY
            day_offsets = np.unique(rng.integers(0, SECONDS_PER_DAY, size=n_d))
            offsets.extend(int(base + o) for o in day_offsets)
        records: list[SessionRecord] = []
        probs: list[float] = []
        momentum = 0.5
        prev_access = 0
        for ts in offsets:
            hour = (ts // 3600) % 24
            hour_signal = math.cos(2.0 * math.pi * (hour - gen.peak_hour) / 24.0)
            count_value = clamp_count(int(rng.poisson(gen.count_mean)))
            tab = gen.tab_values[int(rng.choice(len(gen.tab_values), p=tab_pref))]
            logit = (
                gen.base_logit
                + user_bias
                + gen.hour_weight * hour_signal
                + gen.count_weight * (min(count_value, 10) / 10.0)
                + gen.markov_weight * prev_access
                + gen.dormancy_weight * (momentum - 0.5)
                + gen.interaction_weight * (momentum - 0.5) * hour_signal
            )
            p = _sigmoid(logit)
            access = int(rng.random() < p)
            ctx = Context(timestamp=ts,
                          categoricals={gen.tab_field: tab},
                          counts={gen.count_field: count_value})
            records.append(SessionRecord(user_id=user_id, context=ctx, access=access))
            probs.append(p)
            momentum = gen.dormancy_decay * momentum + (1.0 - gen.dormancy_decay) * access
            prev_access = access
        logs[user_id] = AccessLog(user_id=user_id, sessions=tuple(records))
        truth[user_id] = tuple(probs)
    return Dataset(logs=logs, schema=schema,
                   session_length=gen.session_length, truth=truth)


# ---------------------------------------------------------------------------
# Dataset statistics


@dataclass(frozen=True, slots=True)
class StatsReport:
    user_count: int
    session_count: int
    access_count: int
    positive_rate: float
    cdf_x: tuple[float, ...]
    cdf_y: tuple[float, ...]

    def to_text(self) -> str:
        lines = [
            f"users\t{self.user_count}",
            f"sessions\t{self.session_count}",
            f"accesses\t{self.access_count}",
            f"positive_rate\t{self.positive_rate!r}",
        ]
        return "\n".join(lines) + "\n"

    def cdf_csv(self) -> str:
        lines = ["access_rate,fraction_users"]
        for x, y in zip(self.cdf_x, self.cdf_y):
            lines.append(f"{x!r},{y!r}")
        return "\n".join(lines) + "\n"


def dataset_stats(ds: Dataset, cdf_points: int = 100) -> StatsReport:
    """Summary statistics plus a per-user access-rate CDF.

    The CDF is sampled at ``cdf_points`` evenly spaced access rates on
    [0, 1]; each y value is the fraction of users whose rate is <= x.
    """
    rates = []
    sessions = 0
    accesses = 0
    for log in ds.logs.values():
        n = len(log)
        if n == 0:
            continue
        a = sum(s.access for s in log.sessions)
        sessions += n
        accesses += a
        rates.append(a / n)
    if not rates:
        return StatsReport(user_count=len(ds.logs), session_count=0, access_count=0,
                           positive_rate=0.0, cdf_x=(), cdf_y=())
    rates_arr = np.sort(np.array(rates))
    xs = np.linspace(0.0, 1.0, cdf_points)
    ys = np.searchsorted(rates_arr, xs, side="right") / len(rates_arr)
    return StatsReport(
        user_count=len(ds.logs),
        session_count=sessions,
        access_count=accesses,
        positive_rate=accesses / sessions,
        cdf_x=tuple(float(x) for x in xs),
        cdf_y=tuple(float(y) for y in ys),
    )
