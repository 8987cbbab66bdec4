"""Feature extraction against independent reference implementations."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prefetchkit import (ColumnScaler, ConfigError, Context, OrderingError,
                         Schema, SessionFeaturizer, bucketize_elapsed,
                         context_subsets, hash_categorical, subset_name,
                         time_features)
from conftest import make_dataset


# ---------------------------------------------------------------------------
# Hashing: reference FNV-1a 64 written from the algorithm definition


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) % 2**64
    return h


def test_hash_empty_string_golden():
    # offset basis 0xcbf29ce484222325 mod 97
    assert hash_categorical("", 97) == 18


@pytest.mark.parametrize("text", ["a", "Home", "Feed", "unread", "tab=x", "ü"])
def test_hash_matches_reference(text):
    assert hash_categorical(text, 97) == fnv1a64(text.encode("utf-8")) % 97
    assert hash_categorical(text, 1000) == fnv1a64(text.encode("utf-8")) % 1000


@given(st.text(max_size=30), st.integers(min_value=1, max_value=10**6))
def test_hash_in_range(text, modulus):
    assert 0 <= hash_categorical(text, modulus) < modulus


# ---------------------------------------------------------------------------
# Elapsed-time buckets


def test_bucketize_hand_values():
    assert bucketize_elapsed(1) == 0
    assert bucketize_elapsed(0) == 0          # clamped to at least one second
    assert bucketize_elapsed(math.exp(3.0)) == 10
    assert bucketize_elapsed(3600) == 27
    assert bucketize_elapsed(30 * 86400) == 49
    assert bucketize_elapsed(10**12) == 49    # saturates at the top bucket


def test_bucketize_formula():
    for t in [1, 2, 10, 59, 3600, 86400, 604800]:
        expected = min(49, max(0, math.floor((50 / 15) * math.log(max(t, 1)))))
        assert bucketize_elapsed(t) == expected


@given(st.integers(min_value=0, max_value=10**10),
       st.integers(min_value=0, max_value=10**10))
def test_bucketize_monotone(a, b):
    if a <= b:
        assert bucketize_elapsed(a) <= bucketize_elapsed(b)


@given(st.integers(min_value=0, max_value=10**10),
       st.integers(min_value=2, max_value=200))
def test_bucketize_respects_bucket_count(t, buckets):
    assert 0 <= bucketize_elapsed(t, buckets) < buckets


# ---------------------------------------------------------------------------
# Clock features


def test_time_features_epoch():
    assert time_features(0) == (0, 3)  # 1970-01-01 was a Thursday


def test_time_features_known_points():
    assert time_features(4 * 86400) == (0, 0)        # Monday
    assert time_features(25 * 3600) == (1, 4)        # Friday 01:00
    assert time_features(19000 * 86400 + 13 * 3600)[0] == 13


@given(st.integers(min_value=0, max_value=2**40))
def test_time_features_ranges(ts):
    hour, dow = time_features(ts)
    assert 0 <= hour < 24 and 0 <= dow < 7
    assert hour == (ts // 3600) % 24
    assert dow == (ts // 86400 + 3) % 7


# ---------------------------------------------------------------------------
# Context subsets


def test_subset_lattice_order(schema):
    subs = context_subsets(schema)
    names = [subset_name(s) for s in subs]
    assert names == ["global", "tab", "country", "unread", "tab+country",
                     "tab+unread", "country+unread", "tab+country+unread"]


def test_subset_limit_enforced():
    wide = Schema(categorical=("a", "b", "c"), counts=("d", "e"))
    with pytest.raises(ConfigError):
        context_subsets(wide, max_dims=4)
    assert len(context_subsets(wide, max_dims=5)) == 32


def test_subset_max_dims_cuts_lattice(schema):
    subs = context_subsets(schema, max_dims=3)
    assert len(subs) == 8  # schema has 3 dims, all subsets allowed


# ---------------------------------------------------------------------------
# Aggregation state vs a brute-force recount


def _ctx(ts, tab=None, country=None, unread=None):
    cats = {}
    if tab is not None:
        cats["tab"] = tab
    if country is not None:
        cats["country"] = country
    counts = {} if unread is None else {"unread": unread}
    return Context(timestamp=ts, categoricals=cats, counts=counts)


def _subset_values_of(ctx, subset):
    out = []
    for dim in subset:
        if dim in ctx.categoricals:
            out.append(ctx.categoricals[dim])
        elif dim in ctx.counts:
            out.append(ctx.counts[dim])
        else:
            out.append(None)
    return tuple(out)


def _brute_window(history, subset, values, w, t):
    acc = n = 0
    for ctx, access in history:
        if _subset_values_of(ctx, subset) == values and t - w < ctx.timestamp < t:
            n += 1
            acc += access
    return acc, n


def _brute_elapsed(history, subset, values, t, access_only):
    last = None
    for ctx, access in history:
        if _subset_values_of(ctx, subset) != values:
            continue
        if access_only and not access:
            continue
        last = ctx.timestamp
    return None if last is None else t - last


@settings(max_examples=60, deadline=None)
@given(st.lists(
    st.tuples(st.integers(min_value=1, max_value=500),
              st.sampled_from([None, "Home", "Feed"]),
              st.sampled_from([None, "us", "de"]),
              st.sampled_from([None, 0, 3]),
              st.integers(min_value=0, max_value=1)),
    min_size=1, max_size=25))
def test_aggregation_matches_brute_force(events):
    schema = Schema(categorical=("tab", "country"), counts=("unread",))
    state_cls_events = []
    ts = 0
    stream = []
    for gap, tab, country, unread, access in events:
        ts += gap
        stream.append((_ctx(ts, tab, country, unread), access))
    from prefetchkit import AggregationState

    state = AggregationState(schema)
    subsets = state.subsets
    history = []
    for ctx, access in stream:
        t = ctx.timestamp
        for (idx, values) in state.keys_for(ctx):
            subset = subsets[idx]
            for w in (1000, 120, 7):
                assert state.window_counts((idx, values), w, t) == \
                    _brute_window(history, subset, values, w, t)
            assert state.elapsed_since_session((idx, values), t) == \
                _brute_elapsed(history, subset, values, t, False)
            assert state.elapsed_since_access((idx, values), t) == \
                _brute_elapsed(history, subset, values, t, True)
        state.update(ctx, access)
        history.append((ctx, access))


def test_window_boundaries_are_open(schema):
    from prefetchkit import AggregationState

    state = AggregationState(schema)
    state.update(_ctx(100, tab="Home"), 1)
    key = state.keys_for(_ctx(200, tab="Home"))[0]  # the global subset
    # event at exactly t - w is outside the open interval
    assert state.window_counts(key, 100, 200) == (0, 0)
    assert state.window_counts(key, 101, 200) == (1, 1)


def test_aggregation_rejects_stale_updates(schema):
    from prefetchkit import AggregationState

    state = AggregationState(schema)
    state.update(_ctx(100, tab="Home"), 1)
    with pytest.raises(OrderingError):
        state.update(_ctx(100, tab="Feed"), 0)
    with pytest.raises(OrderingError):
        state.update(_ctx(99, tab="Feed"), 0)


def test_missing_fields_share_a_none_key(schema):
    from prefetchkit import AggregationState

    state = AggregationState(schema)
    state.update(_ctx(10), 1)              # no tab at all
    state.update(_ctx(20, tab="Home"), 0)
    keys = {k: v for k, v in state.keys_for(_ctx(30))}
    tab_subset_idx = state.subsets.index(("tab",))
    assert state.window_counts((tab_subset_idx, (None,)), 100, 30) == (1, 1)


# ---------------------------------------------------------------------------
# Featurizer layout and rows


def test_layout_width_is_sum_of_slices(schema, tiny_dataset):
    feat = SessionFeaturizer().fit(tiny_dataset)
    width = sum(s.stop - s.start for s in feat.layout_.slices)
    assert feat.layout_.width == width


def test_context_group_is_layout_prefix(schema, tiny_dataset):
    """Adding E and A groups must not move the C block."""
    c_only = SessionFeaturizer(groups=("C",)).fit(tiny_dataset)
    full = SessionFeaturizer(groups=("C", "E", "A")).fit(tiny_dataset)
    ctx = tiny_dataset.logs["ua"].sessions[0].context
    row_c = c_only.context_row(ctx)
    state = full.new_state()
    row_full = full.extract(state, ctx)
    np.testing.assert_array_equal(row_full[: c_only.context_width()], row_c)


def test_context_row_one_hot_positions(tiny_dataset):
    feat = SessionFeaturizer().fit(tiny_dataset)
    ctx = Context(timestamp=9 * 3600, categoricals={"tab": "Feed"},
                  counts={"unread": 7})
    row = feat.context_row(ctx)
    by_name = {s.name: s for s in feat.layout_.slices}
    tab = by_name["cat:tab"]
    assert row[tab.start + fnv1a64(b"Feed") % 97] == 1.0
    assert row[tab.start:tab.stop].sum() == 1.0
    country = by_name["cat:country"]
    assert row[country.start:country.stop].sum() == 0.0  # field missing
    unread = by_name["count:unread"]
    assert row[unread.start + 7] == 1.0
    hour = by_name["time:hour"]
    assert row[hour.start + 9] == 1.0


def test_count_one_hot_clamps(tiny_dataset):
    feat = SessionFeaturizer().fit(tiny_dataset)
    ctx = Context(timestamp=0, categoricals={}, counts={"unread": 99})
    row = feat.context_row(ctx)
    by_name = {s.name: s for s in feat.layout_.slices}
    unread = by_name["count:unread"]
    assert row[unread.start + 99] == 1.0


def test_numeric_time_uses_raw_values(tiny_dataset):
    feat = SessionFeaturizer(numeric_time=True).fit(tiny_dataset)
    ctx = Context(timestamp=4 * 86400 + 13 * 3600, categoricals={}, counts={})
    row = feat.context_row(ctx)
    by_name = {s.name: s for s in feat.layout_.slices}
    assert row[by_name["time:hour"].start] == 13.0
    assert row[by_name["time:dow"].start] == 0.0


def test_elapsed_never_lands_in_top_bucket(tiny_dataset):
    feat = SessionFeaturizer(groups=("C", "E")).fit(tiny_dataset)
    ctx = tiny_dataset.logs["ua"].sessions[0].context
    row = feat.extract(feat.new_state(), ctx)
    by_name = {s.name: s for s in feat.layout_.slices}
    sl = by_name["elapsed_access:global"]
    assert row[sl.stop - 1] == 1.0
    assert row[sl.start:sl.stop].sum() == 1.0


def test_elapsed_tracks_history(schema):
    ds = make_dataset(schema, {"u": [(100, 1), (200, 0), (350, 0)]})
    feat = SessionFeaturizer(groups=("C", "E"), numeric_elapsed=True).fit(ds)
    state = feat.new_state()
    sessions = ds.logs["u"].sessions
    by_name = {s.name: s for s in feat.layout_.slices}
    acc_pos = by_name["elapsed_access:global"].start
    ses_pos = by_name["elapsed_session:global"].start
    feat.extract(state, sessions[0].context)
    state.update(sessions[0].context, 1)
    row = feat.extract(state, sessions[2].context.__class__(
        timestamp=200, categoricals={}, counts={}))
    # last access and last session were both at t=100, so elapsed is 100
    assert row[acc_pos] == bucketize_elapsed(100)
    assert row[ses_pos] == bucketize_elapsed(100)


def test_aggregation_features_count_accesses(schema):
    ds = make_dataset(schema, {"u": [(100, 1), (200, 1), (300, 0), (400, 0)]})
    feat = SessionFeaturizer(groups=("A",), windows=(1000, 150)).fit(ds)
    state = feat.new_state()
    by_name = {s.name: s for s in feat.layout_.slices}
    for rec in ds.logs["u"].sessions[:3]:
        feat.extract(state, rec.context)
        state.update(rec.context, rec.access)
    row = feat.extract(state, ds.logs["u"].sessions[3].context)
    wide = by_name["agg:global:1000s"]
    assert list(row[wide.start:wide.stop]) == [2.0, 3.0, 2.0 / 3.0]
    narrow = by_name["agg:global:150s"]
    assert list(row[narrow.start:narrow.stop]) == [0.0, 1.0, 0.0]


def test_windows_must_strictly_decrease(tiny_dataset):
    with pytest.raises(ConfigError):
        SessionFeaturizer(windows=(100, 100)).fit(tiny_dataset)
    with pytest.raises(ConfigError):
        SessionFeaturizer(windows=(100, 200)).fit(tiny_dataset)


def test_matrix_window_matches_full_slice(synthetic_dataset):
    feat = SessionFeaturizer().fit(synthetic_dataset)
    X_full, y_full, ts_full, users_full = feat.matrix(synthetic_dataset)
    X_win, y_win, ts_win, users_win = feat.matrix(synthetic_dataset,
                                                  window_days=3.0)
    cutoff = synthetic_dataset.time_range[1] - int(3.0 * 86400)
    keep = ts_full >= cutoff
    np.testing.assert_array_equal(X_win, X_full[keep])
    np.testing.assert_array_equal(y_win, y_full[keep])
    np.testing.assert_array_equal(ts_win, ts_full[keep])
    assert users_win == [u for u, k in zip(users_full, keep) if k]


def test_matrix_rows_use_only_prior_history(schema):
    ds = make_dataset(schema, {"u": [(100, 1), (200, 0)]})
    feat = SessionFeaturizer(groups=("A",), windows=(1000,)).fit(ds)
    X, y, ts, users = feat.matrix(ds)
    # first session sees an empty state; second sees exactly one event
    assert X[0].sum() == 0.0
    global_slice = feat.layout_.slices[0]
    assert X[1][global_slice.start + 1] == 1.0  # one prior session


def test_transform_equals_matrix(synthetic_dataset):
    feat = SessionFeaturizer().fit(synthetic_dataset)
    X, _, _, _ = feat.matrix(synthetic_dataset)
    np.testing.assert_array_equal(feat.transform(synthetic_dataset), X)


def test_manifest_lists_every_slice(tiny_dataset):
    feat = SessionFeaturizer().fit(tiny_dataset)
    text = feat.layout_.manifest_text()
    for s in feat.layout_.slices:
        assert s.name in text


# ---------------------------------------------------------------------------
# Column scaling


def test_scaler_standardizes_columns():
    rng = np.random.default_rng(0)
    X = rng.normal(3.0, 2.0, size=(200, 4))
    scaled = ColumnScaler().fit(X).transform(X)
    np.testing.assert_allclose(scaled.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(scaled.std(axis=0), 1.0, atol=1e-12)


def test_scaler_constant_column_passthrough():
    X = np.column_stack([np.full(10, 7.0), np.arange(10.0)])
    scaled = ColumnScaler().fit(X).transform(X)
    np.testing.assert_array_equal(scaled[:, 0], 0.0)
