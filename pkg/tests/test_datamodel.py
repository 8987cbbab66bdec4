"""Dataset construction, file round-trips, splits, and the generator."""

import math

import numpy as np
import pytest

from prefetchkit import (AccessLog, Context, DataError, Dataset,
                         GeneratorConfig, OrderingError, Schema, SessionRecord,
                         SplitSpec, dataset_stats, derive_peak_examples,
                         generate_synthetic, ingest, split_users,
                         subset_dataset, write_dataset)
from conftest import DAY, make_dataset, make_session


def _sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


# ---------------------------------------------------------------------------
# Construction invariants


def test_duplicate_timestamps_rejected(schema):
    with pytest.raises(OrderingError):
        make_dataset(schema, {"u": [(100, 1), (100, 0)]})


def test_decreasing_timestamps_rejected(schema):
    with pytest.raises(OrderingError):
        make_dataset(schema, {"u": [(200, 1), (100, 0)]})


def test_bad_access_label_rejected(schema):
    with pytest.raises(DataError):
        make_dataset(schema, {"u": [(100, 2)]})


def test_undeclared_field_rejected(schema):
    ctx = Context(timestamp=10, categoricals={"nope": "x"}, counts={})
    rec = SessionRecord(user_id="u", context=ctx, access=0)
    with pytest.raises(DataError):
        Dataset(logs={"u": AccessLog(user_id="u", sessions=(rec,))},
                schema=schema, session_length=1200)


def test_count_out_of_range_rejected(schema):
    with pytest.raises(DataError):
        make_dataset(schema, {"u": [(100, 0, {"unread": 120})]})


def test_time_range_spans_all_users(tiny_dataset):
    assert tiny_dataset.time_range == (50, 90000)


def test_missing_context_fields_allowed(schema):
    ctx = Context(timestamp=10, categoricals={}, counts={})
    rec = SessionRecord(user_id="u", context=ctx, access=1)
    ds = Dataset(logs={"u": AccessLog(user_id="u", sessions=(rec,))},
                 schema=schema, session_length=1200)
    assert ds.n_sessions() == 1


# ---------------------------------------------------------------------------
# File round-trip


def test_roundtrip_preserves_everything(tiny_dataset, tmp_path):
    path = tmp_path / "data.tsv"
    write_dataset(tiny_dataset, str(path))
    back = ingest(str(path))
    assert back.schema == tiny_dataset.schema
    assert back.session_length == tiny_dataset.session_length
    assert back.logs == tiny_dataset.logs


def test_roundtrip_missing_fields(schema, tmp_path):
    ctx = Context(timestamp=10, categoricals={"tab": "Home"}, counts={})
    rec = SessionRecord(user_id="u", context=ctx, access=1)
    ds = Dataset(logs={"u": AccessLog(user_id="u", sessions=(rec,))},
                 schema=schema, session_length=900)
    path = tmp_path / "d.tsv"
    write_dataset(ds, str(path))
    back = ingest(str(path))
    rec2 = back.logs["u"].sessions[0]
    assert rec2.context.categoricals == {"tab": "Home"}
    assert rec2.context.counts == {}


def test_ingest_sorts_interleaved_lines(schema, tmp_path):
    path = tmp_path / "d.tsv"
    path.write_text(
        "#schema\tsession_length=1200\tcat=tab,country\tcount=unread\n"
        "ub\t500\t1\ttab=Feed\n"
        "ua\t900\t0\t-\n"
        "ua\t100\t1\tunread=3\n")
    ds = ingest(str(path))
    assert ds.users() == ["ua", "ub"]
    assert [s.timestamp for s in ds.logs["ua"].sessions] == [100, 900]


def test_ingest_clamps_counts(schema, tmp_path):
    path = tmp_path / "d.tsv"
    path.write_text(
        "#schema\tsession_length=1200\tcat=tab,country\tcount=unread\n"
        "u\t100\t1\tunread=250\n")
    ds = ingest(str(path))
    assert ds.logs["u"].sessions[0].context.counts["unread"] == 99


def test_ingest_unknown_field_names_line(tmp_path):
    path = tmp_path / "d.tsv"
    path.write_text(
        "#schema\tsession_length=1200\tcat=tab\tcount=\n"
        "u\t100\t1\tbogus=3\n")
    with pytest.raises(DataError, match="line 2"):
        ingest(str(path))


def test_ingest_duplicate_timestamp_rejected(tmp_path):
    path = tmp_path / "d.tsv"
    path.write_text(
        "#schema\tsession_length=1200\tcat=tab\tcount=\n"
        "u\t100\t1\t-\n"
        "u\t100\t0\t-\n")
    with pytest.raises(OrderingError):
        ingest(str(path))


def test_ingest_explicit_schema_must_match(tmp_path):
    path = tmp_path / "d.tsv"
    path.write_text("#schema\tsession_length=1200\tcat=tab\tcount=\n"
                    "u\t100\t1\t-\n")
    with pytest.raises(DataError):
        ingest(str(path), schema=Schema(categorical=("other",), counts=()))


def test_reserved_characters_rejected_on_write(schema, tmp_path):
    ds = make_dataset(schema, {"u": [(100, 1, {"tab": "a;b"})]})
    with pytest.raises(DataError):
        write_dataset(ds, str(tmp_path / "d.tsv"))


def test_canonical_write_is_stable(tiny_dataset, tmp_path):
    p1, p2 = tmp_path / "a.tsv", tmp_path / "b.tsv"
    write_dataset(tiny_dataset, str(p1))
    write_dataset(ingest(str(p1)), str(p2))
    assert p1.read_bytes() == p2.read_bytes()


# ---------------------------------------------------------------------------
# Splits


def test_split_deterministic_and_disjoint(synthetic_dataset):
    spec = SplitSpec(train_fraction=0.75, seed=5)
    a1, b1 = split_users(synthetic_dataset, spec)
    a2, b2 = split_users(synthetic_dataset, spec)
    assert a1.users() == a2.users() and b1.users() == b2.users()
    assert not (set(a1.users()) & set(b1.users()))
    assert sorted(a1.users() + b1.users()) == synthetic_dataset.users()
    assert len(a1.users()) == round(0.75 * 12)


def test_split_seed_changes_partition(synthetic_dataset):
    a1, _ = split_users(synthetic_dataset, SplitSpec(train_fraction=0.5, seed=1))
    a2, _ = split_users(synthetic_dataset, SplitSpec(train_fraction=0.5, seed=2))
    assert a1.users() != a2.users()


def test_split_keeps_both_sides_nonempty(schema):
    ds = make_dataset(schema, {"ua": [(1, 0)], "ub": [(2, 1)]})
    train, test = split_users(ds, SplitSpec(train_fraction=0.99, seed=0))
    assert len(train.users()) == 1 and len(test.users()) == 1


def test_subset_preserves_truth(synthetic_dataset):
    users = synthetic_dataset.users()[:3]
    sub = subset_dataset(synthetic_dataset, users)
    assert sub.users() == users
    assert set(sub.truth) == set(users)


# ---------------------------------------------------------------------------
# Peak-window labels


def test_peak_examples_hand_case(schema):
    day0 = 100 * DAY
    ds = make_dataset(schema, {
        "u": [
            (day0 + 9 * 3600, 1),        # inside [8, 11) with an access
            (day0 + DAY + 9 * 3600, 0),  # inside the window, no access
            (day0 + 2 * DAY + 12 * 3600, 1),  # access outside the window
        ],
    })
    examples = derive_peak_examples(ds, 8, 11)
    assert [e.label for e in examples] == [1, 0, 0]
    assert [e.day for e in examples] == [100, 101, 102]
    first = examples[0]
    assert first.window == (day0 + 8 * 3600, day0 + 11 * 3600)


def test_peak_examples_cover_silent_days(schema):
    ds = make_dataset(schema, {"u": [(100 * DAY + 9 * 3600, 1),
                                     (103 * DAY + 9 * 3600, 1)]})
    examples = derive_peak_examples(ds, 8, 11)
    assert [e.day for e in examples] == [100, 101, 102, 103]
    assert [e.label for e in examples] == [1, 0, 0, 1]


def test_peak_window_boundary_is_half_open(schema):
    day0 = 50 * DAY
    ds = make_dataset(schema, {"u": [(day0 + 11 * 3600, 1)]})
    examples = derive_peak_examples(ds, 8, 11)
    assert examples[0].label == 0  # access at exactly end hour is outside


# ---------------------------------------------------------------------------
# Synthetic generator


def test_generator_is_deterministic():
    gen = GeneratorConfig(users=6, days=5)
    d1 = generate_synthetic(gen, seed=3)
    d2 = generate_synthetic(gen, seed=3)
    assert d1.logs == d2.logs and d1.truth == d2.truth
    d3 = generate_synthetic(gen, seed=4)
    assert d1.logs != d3.logs


def test_generator_base_rate_matches_logit():
    gen = GeneratorConfig(users=40, days=20, sessions_per_day=4.0,
                          base_logit=-1.0)
    ds = generate_synthetic(gen, seed=9)
    n = ds.n_sessions()
    labels = np.concatenate([ds.logs[u].labels() for u in ds.users()])
    p = _sigmoid(-1.0)
    sigma = math.sqrt(p * (1 - p) / n)
    assert abs(labels.mean() - p) < 3 * sigma


def test_generator_markov_truth_is_exact():
    gen = GeneratorConfig(users=8, days=6, base_logit=-0.5, markov_weight=1.5)
    ds = generate_synthetic(gen, seed=2)
    for user in ds.users():
        labels = ds.logs[user].labels()
        probs = ds.truth[user]
        for i, p in enumerate(probs):
            prev = 0 if i == 0 else int(labels[i - 1])
            assert p == pytest.approx(_sigmoid(-0.5 + 1.5 * prev), abs=1e-12)


def test_generator_timestamps_strictly_increase():
    gen = GeneratorConfig(users=10, days=10, sessions_per_day=8.0)
    ds = generate_synthetic(gen, seed=1)
    for user in ds.users():
        ts = ds.logs[user].timestamps()
        assert (np.diff(ts) > 0).all()


def test_generator_context_follows_schema():
    gen = GeneratorConfig(users=3, days=3)
    ds = generate_synthetic(gen, seed=0)
    assert ds.schema == Schema(categorical=("active_tab",), counts=("unread",))
    for user in ds.users():
        for rec in ds.logs[user].sessions:
            assert rec.context.categoricals["active_tab"] in gen.tab_values
            assert 0 <= rec.context.counts["unread"] <= 99


# ---------------------------------------------------------------------------
# Statistics


def test_stats_counts_and_rate(schema):
    ds = make_dataset(schema, {"ua": [(1, 1), (2, 0)], "ub": [(1, 0), (5, 0)]})
    stats = dataset_stats(ds)
    assert stats.user_count == 2
    assert stats.session_count == 4
    assert stats.access_count == 1
    assert stats.positive_rate == 0.25


def test_stats_cdf_hand_case(schema):
    # rates are 0.5 (ua) and 0.0 (ub)
    ds = make_dataset(schema, {"ua": [(1, 1), (2, 0)], "ub": [(1, 0), (5, 0)]})
    stats = dataset_stats(ds, cdf_points=101)
    xs = np.array(stats.cdf_x)
    ys = np.array(stats.cdf_y)
    assert ys[0] == 0.5            # fraction of users with rate <= 0
    assert ys[np.searchsorted(xs, 0.5)] == 1.0
    assert ys[np.searchsorted(xs, 0.49)] == 0.5
    assert (np.diff(ys) >= 0).all()
    assert ys[-1] == 1.0


def test_stats_text_uses_exact_float_repr(schema):
    ds = make_dataset(schema, {"ua": [(1, 1), (2, 0), (3, 0)]})
    text = dataset_stats(ds).to_text()
    assert f"positive_rate\t{1/3!r}" in text
