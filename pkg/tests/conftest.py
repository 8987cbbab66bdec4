"""Shared fixtures: small hand-built logs and synthetic worlds."""

import numpy as np
import pytest

from prefetchkit import (AccessLog, Context, Dataset, GeneratorConfig, Schema,
                         SessionRecord, generate_synthetic)

DAY = 86400


@pytest.fixture
def schema():
    return Schema(categorical=("tab", "country"), counts=("unread",))


def make_session(user, ts, access, tab="Home", country="us", unread=2):
    ctx = Context(timestamp=ts, categoricals={"tab": tab, "country": country},
                  counts={"unread": unread})
    return SessionRecord(user_id=user, context=ctx, access=access)


def make_dataset(schema, per_user, session_length=1200, truth=None):
    """per_user: {user: [(ts, access, kwargs?), ...]}"""
    logs = {}
    for user, rows in per_user.items():
        sessions = []
        for row in rows:
            ts, access = row[0], row[1]
            kwargs = row[2] if len(row) > 2 else {}
            sessions.append(make_session(user, ts, access, **kwargs))
        logs[user] = AccessLog(user_id=user, sessions=tuple(sessions))
    return Dataset(logs=logs, schema=schema, session_length=session_length,
                   truth=truth)


@pytest.fixture
def tiny_dataset(schema):
    return make_dataset(schema, {
        "ua": [(100, 1), (5000, 0), (86400, 1), (90000, 0)],
        "ub": [(50, 0), (7200, 1, {"tab": "Feed", "unread": 7})],
    })


@pytest.fixture
def synthetic_dataset():
    gen = GeneratorConfig(users=12, days=8, sessions_per_day=4.0,
                          markov_weight=1.2, hour_weight=0.6,
                          count_weight=0.5)
    return generate_synthetic(gen, seed=11)


def assert_grad_close(analytic, numeric, rel=1e-5, abs_tol=1e-8):
    denom = max(abs(analytic), abs(numeric), abs_tol)
    assert abs(analytic - numeric) / denom < rel, (
        f"analytic {analytic!r} vs numeric {numeric!r}")


def central_difference(fn, eps=1e-6):
    """Scalar central finite difference of fn at 0 perturbation."""
    return (fn(eps) - fn(-eps)) / (2.0 * eps)


def brute_force_pr(scores, labels):
    """All-thresholds precision/recall by direct counting (oracle)."""
    out = []
    n_pos = labels.sum()
    for theta in sorted(set(scores), reverse=True):
        pred = scores >= theta
        tp = float(np.sum(pred & (labels == 1)))
        out.append((theta, tp / pred.sum(), tp / n_pos))
    return out
