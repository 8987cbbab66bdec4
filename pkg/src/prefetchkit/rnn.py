"""Recurrent access model with delayed hidden-state updates.

The hidden state is a per-user GRU over session inputs. Serving commits
each update only after the session window closes, so a prediction at
time t may consume only the state from session k, the latest session
with t_k < t - delta, where delta = session_length + epsilon. Training
and offline scoring reproduce exactly this lag.

Per session i the hidden update input is [context features; access
flag; bucketized gap since the previous session]. A prediction combines
the lagged state h_k with fresh inputs u through a latent cross,

    q = h_k * (1 + L u + b_L)

followed by a one-hidden-layer MLP with dropout applied to the
pre-activation, P = sigmoid(w2 . relu(dropout(W1 [q; u] + b1)) + b2).
The GRU convention here is h' = (1 - z) * h + z * c: the update gate z
scales the candidate, not the carried state.

In access mode u is [context features; bucketized elapsed since t_k]
and the label is the session's access flag. In timeshift mode the model
predicts daily peak-window access with u = [bucketized (window start -
t_k)] alone.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .datamodel import (AccessLog, Dataset, PeakExample, SECONDS_PER_DAY,
                        derive_peak_examples)
from .errors import ConfigError, DataError, NumericalError
from .features import SessionFeaturizer, bucketize_elapsed
from .seeding import derive_rng
from .validation import check_fitted

PROB_CLAMP = 1e-7


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                    np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


# ---------------------------------------------------------------------------
# Parameters


@dataclass
class GruParams:
    """Gate parameters. ``w`` stacks the reset/update/candidate input
    projections row-wise; the recurrent matrices stay separate because
    the candidate one multiplies the gated state."""

    w: np.ndarray      # (3d, x_dim)
    u_r: np.ndarray    # (d, d)
    u_z: np.ndarray    # (d, d)
    u_c: np.ndarray    # (d, d)
    b: np.ndarray      # (3d,)

    @property
    def d(self) -> int:
        return self.u_r.shape[0]

    @property
    def w_r(self) -> np.ndarray:
        return self.w[: self.d]

    @property
    def w_z(self) -> np.ndarray:
        return self.w[self.d: 2 * self.d]

    @property
    def w_c(self) -> np.ndarray:
        return self.w[2 * self.d:]

    @property
    def b_r(self) -> np.ndarray:
        return self.b[: self.d]

    @property
    def b_z(self) -> np.ndarray:
        return self.b[self.d: 2 * self.d]

    @property
    def b_c(self) -> np.ndarray:
        return self.b[2 * self.d:]


@dataclass
class PredictHead:
    l: np.ndarray      # (d, u_dim) latent-cross projection
    b_l: np.ndarray    # (d,)
    w1: np.ndarray     # (mlp_width, d + u_dim)
    b1: np.ndarray     # (mlp_width,)
    w2: np.ndarray     # (mlp_width,)
    b2: np.ndarray     # (1,)


def named_arrays(gru: GruParams, head: PredictHead) -> dict[str, np.ndarray]:
    return {
        "w": gru.w, "u_r": gru.u_r, "u_z": gru.u_z, "u_c": gru.u_c, "b": gru.b,
        "l": head.l, "b_l": head.b_l, "w1": head.w1, "b1": head.b1,
        "w2": head.w2, "b2": head.b2,
    }


def init_params(d: int, x_dim: int, u_dim: int, mlp_width: int,
                rng: np.random.Generator) -> tuple[GruParams, PredictHead]:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) per matrix, zero biases."""

    def uniform(shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    gru = GruParams(
        w=uniform((3 * d, x_dim), x_dim),
        u_r=uniform((d, d), d),
        u_z=uniform((d, d), d),
        u_c=uniform((d, d), d),
        b=np.zeros(3 * d),
    )
    head = PredictHead(
        l=uniform((d, u_dim), u_dim),
        b_l=np.zeros(d),
        w1=uniform((mlp_width, d + u_dim), d + u_dim),
        b1=np.zeros(mlp_width),
        w2=uniform(mlp_width, mlp_width),
        b2=np.zeros(1),
    )
    return gru, head


# ---------------------------------------------------------------------------
# Kernels (shared verbatim by offline scoring and the serving simulator)


def gru_forward(gru: GruParams, h: np.ndarray, x: np.ndarray) -> np.ndarray:
    """One gated update of the hidden state."""
    d = gru.d
    if h.shape != (d,):
        raise DataError(f"hidden state must have shape ({d},), got {h.shape}")
    if x.shape != (gru.w.shape[1],):
        raise DataError(f"input must have shape ({gru.w.shape[1]},), got {x.shape}")
    pre = gru.w @ x + gru.b
    r = _sigmoid(pre[:d] + gru.u_r @ h)
    z = _sigmoid(pre[d:2 * d] + gru.u_z @ h)
    c = np.tanh(pre[2 * d:] + gru.u_c @ (r * h))
    return (1.0 - z) * h + z * c


def predict_forward(head: PredictHead, h_k: np.ndarray, u: np.ndarray) -> float:
    """Inference-mode probability from a lagged state and fresh inputs."""
    q = h_k * (1.0 + head.l @ u + head.b_l)
    a = head.w1 @ np.concatenate([q, u]) + head.b1
    v = np.maximum(a, 0.0)
    s = float(head.w2 @ v + head.b2[0])
    return float(_sigmoid(np.array(s)))


def select_k(timestamps: np.ndarray, query_time: int, delta: int) -> int:
    """Largest k with t_k < query_time - delta; 0 when no session qualifies.

    Returned as a count: k = 3 means the third session's post-update
    state. k = 0 denotes the zero initial state.
    """
    if delta < 0:
        raise ConfigError(f"delta must be non-negative, got {delta}")
    return int(np.searchsorted(timestamps, query_time - delta, side="left"))


def masked_log_loss(probs: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    """Mean clamped log loss over the masked positions."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if probs.shape != labels.shape or probs.shape != mask.shape:
        raise DataError("probs, labels, and mask must share one shape")
    if not mask.any():
        raise ConfigError("loss mask selects no positions")
    p = np.clip(probs[mask], PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = labels[mask]
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


# ---------------------------------------------------------------------------
# Per-user training inputs


@dataclass
class UserSequence:
    """Immutable per-user training arrays (single-writer ownership)."""

    user_id: str
    ts: np.ndarray        # (n,) int64 session timestamps
    x: np.ndarray         # (n, x_dim) hidden-update inputs
    f: np.ndarray         # (n, f_dim) context rows
    labels: np.ndarray    # (n,) access flags
    q_times: np.ndarray   # (nq,) query timestamps
    q_kidx: np.ndarray    # (nq,) lagged state index per query (0..n)
    q_u: np.ndarray       # (nq, u_dim) fresh inputs per query
    q_labels: np.ndarray  # (nq,)


@dataclass
class SequenceTrace:
    """Offline scoring trace: one probability per query, plus the lag
    bookkeeping needed to audit which state each prediction consumed."""

    timestamps: np.ndarray
    probs: np.ndarray
    k_index: np.ndarray
    hidden: np.ndarray    # (n+1, d); row 0 is the zero initial state


# ---------------------------------------------------------------------------
# Vectorized training loss / gradients for one user


def _user_forward_backward(gru: GruParams, head: PredictHead, seq: UserSequence,
                           mask: np.ndarray, dropout: float,
                           dropout_rng: np.random.Generator | None):
    """(loss_sum, n_pairs, grads-of-summed-loss) for one user's sequence.

    Gradients are of the clamped log loss summed over masked queries, so
    batch gradients are plain sums of per-user results.
    """
    d = gru.d
    n = seq.ts.shape[0]
    grads = {k: np.zeros_like(v) for k, v in named_arrays(gru, head).items()}
    q_sel = np.flatnonzero(mask)
    if q_sel.size == 0 or n == 0:
        return 0.0, 0, grads

    # forward chain
    xproj = seq.x @ gru.w.T + gru.b
    H = np.zeros((n + 1, d))
    R = np.empty((n, d))
    Z = np.empty((n, d))
    C = np.empty((n, d))
    h = H[0]
    for i in range(n):
        pre = xproj[i]
        r = _sigmoid(pre[:d] + gru.u_r @ h)
        z = _sigmoid(pre[d:2 * d] + gru.u_z @ h)
        c = np.tanh(pre[2 * d:] + gru.u_c @ (r * h))
        h = (1.0 - z) * h + z * c
        R[i] = r
        Z[i] = z
        C[i] = c
        H[i + 1] = h

    # prediction head, vectorized over masked queries
    kidx = seq.q_kidx[q_sel]
    U = seq.q_u[q_sel]
    y = seq.q_labels[q_sel]
    Hk = H[kidx]
    G = 1.0 + U @ head.l.T + head.b_l
    Q = Hk * G
    M = np.hstack([Q, U])
    A = M @ head.w1.T + head.b1
    if dropout > 0.0:
        if dropout_rng is None:
            raise ConfigError("dropout requires a generator during training")
        drop = (dropout_rng.random(A.shape) >= dropout) / (1.0 - dropout)
        Ad = A * drop
    else:
        drop = None
        Ad = A
    V = np.maximum(Ad, 0.0)
    S = V @ head.w2 + head.b2[0]
    P = _sigmoid(S)
    p_clamped = np.clip(P, PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss_sum = float(-np.sum(y * np.log(p_clamped) + (1.0 - y) * np.log(1.0 - p_clamped)))

    # head backward; clamped probabilities contribute zero gradient
    in_range = (P > PROB_CLAMP) & (P < 1.0 - PROB_CLAMP)
    dS = np.where(in_range, P - y, 0.0)
    grads["w2"][:] = V.T @ dS
    grads["b2"][0] = dS.sum()
    dV = np.outer(dS, head.w2)
    dAd = dV * (Ad > 0.0)
    dA = dAd * drop if drop is not None else dAd
    grads["w1"][:] = dA.T @ M
    grads["b1"][:] = dA.sum(axis=0)
    dM = dA @ head.w1
    dQ = dM[:, :d]
    dG = dQ * Hk
    grads["l"][:] = dG.T @ U
    grads["b_l"][:] = dG.sum(axis=0)
    dHk = dQ * G
    dH_inject = np.zeros((n + 1, d))
    np.add.at(dH_inject, kidx, dHk)

    # backward through time
    dRpre = np.empty((n, d))
    dZpre = np.empty((n, d))
    dCpre = np.empty((n, d))
    u_r_T = gru.u_r.T
    u_z_T = gru.u_z.T
    u_c_T = gru.u_c.T
    carry = np.zeros(d)
    for i in range(n - 1, -1, -1):
        dh = carry + dH_inject[i + 1]
        hprev = H[i]
        r = R[i]
        z = Z[i]
        c = C[i]
        dcp = (dh * z) * (1.0 - c * c)
        dzp = (dh * (c - hprev)) * z * (1.0 - z)
        carry = dh * (1.0 - z)
        tmp = u_c_T @ dcp
        carry += tmp * r
        drp = (tmp * hprev) * r * (1.0 - r)
        dRpre[i] = drp
        dZpre[i] = dzp
        dCpre[i] = dcp
        carry += u_r_T @ drp
        carry += u_z_T @ dzp
    dpre = np.hstack([dRpre, dZpre, dCpre])
    grads["w"][:] = dpre.T @ seq.x
    grads["b"][:] = dpre.sum(axis=0)
    hprev_all = H[:-1]
    grads["u_r"][:] = dRpre.T @ hprev_all
    grads["u_z"][:] = dZpre.T @ hprev_all
    grads["u_c"][:] = dCpre.T @ (R * hprev_all)
    return loss_sum, int(q_sel.size), grads


# ---------------------------------------------------------------------------
# Adam


class AdamState:
    """Standard Adam with bias correction, updating arrays in place."""

    def __init__(self, arrays: dict[str, np.ndarray], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in arrays.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# ---------------------------------------------------------------------------
# The estimator


class RecurrentAccessModel(BaseEstimator):
    """Sequence model over per-user session logs.

    Parameters mirror the training recipe: full-sequence gradients (no
    truncation inside a sequence, only a cap on total sessions kept per
    user), minibatches of whole users, Adam updates, and a loss mask
    restricted to the trailing ``loss_window_days`` of the dataset.

    ``workers`` > 1 computes per-user gradients in a thread pool. With
    ``deterministic=True`` contributions are reduced in user order,
    which is bit-identical to the sequential run; ``deterministic=False``
    reduces in completion order (still correct, not bit-stable).
    """

    def __init__(self, hidden_dim: int = 128, mlp_width: int = 128,
                 dropout: float = 0.2, learning_rate: float = 1e-3,
                 epochs: int = 1, minibatch_users: int = 10,
                 loss_window_days: float = 21.0, truncate_sessions: int = 10000,
                 epsilon_lag: int = 60, elapsed_encoding: str = "onehot",
                 elapsed_buckets: int = 50, hash_modulus: int = 97,
                 mode: str = "access", peak_hours: tuple[int, int] | None = None,
                 adam_beta1: float = 0.9, adam_beta2: float = 0.999,
                 adam_eps: float = 1e-8, workers: int = 1,
                 deterministic: bool = True, seed: int = 0):
        self.hidden_dim = hidden_dim
        self.mlp_width = mlp_width
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.minibatch_users = minibatch_users
        self.loss_window_days = loss_window_days
        self.truncate_sessions = truncate_sessions
        self.epsilon_lag = epsilon_lag
        self.elapsed_encoding = elapsed_encoding
        self.elapsed_buckets = elapsed_buckets
        self.hash_modulus = hash_modulus
        self.mode = mode
        self.peak_hours = peak_hours
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.adam_eps = adam_eps
        self.workers = workers
        self.deterministic = deterministic
        self.seed = seed

    # -- construction ------------------------------------------------------

    def _check_config(self):
        if self.hidden_dim <= 0 or self.mlp_width <= 0:
            raise ConfigError("hidden_dim and mlp_width must be positive")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.mode not in ("access", "timeshift"):
            raise ConfigError(f"mode must be 'access' or 'timeshift', got {self.mode!r}")
        if self.mode == "timeshift" and self.peak_hours is None:
            raise ConfigError("timeshift mode requires peak_hours=(start, end)")
        if self.elapsed_encoding not in ("onehot", "scalar"):
            raise ConfigError(
                f"elapsed_encoding must be 'onehot' or 'scalar', got {self.elapsed_encoding!r}")
        if self.epsilon_lag < 0:
            raise ConfigError("epsilon_lag must be non-negative")
        if self.epochs <= 0 or self.minibatch_users <= 0 or self.truncate_sessions <= 0:
            raise ConfigError("epochs, minibatch_users, truncate_sessions must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.workers <= 0:
            raise ConfigError("workers must be positive")

    def prepare(self, ds: Dataset):
        """Bind to a dataset's schema and initialize parameters (no training)."""
        return self.prepare_schema(ds.schema, ds.session_length)

    def prepare_schema(self, schema, session_length: int):
        self._check_config()
        featurizer = SessionFeaturizer(groups=("C",), hash_modulus=self.hash_modulus,
                                       elapsed_buckets=self.elapsed_buckets)
        featurizer.fit_schema(schema)
        self.featurizer_ = featurizer
        self.delta_ = int(session_length) + int(self.epsilon_lag)
        f_dim = featurizer.context_width()
        enc_w = self._enc_width()
        self.f_dim_ = f_dim
        self.x_dim_ = f_dim + 1 + enc_w
        self.u_dim_ = (f_dim + enc_w) if self.mode == "access" else enc_w
        rng = derive_rng(self.seed, "rnn:init")
        self.gru_, self.head_ = init_params(self.hidden_dim, self.x_dim_,
                                            self.u_dim_, self.mlp_width, rng)
        self.loss_curve_ = []
        return self

    def _enc_width(self) -> int:
        return self.elapsed_buckets if self.elapsed_encoding == "onehot" else 1

    def encode_elapsed(self, seconds: float) -> np.ndarray:
        bucket = bucketize_elapsed(seconds, self.elapsed_buckets)
        if self.elapsed_encoding == "onehot":
            out = np.zeros(self.elapsed_buckets)
            out[bucket] = 1.0
            return out
        return np.array([float(bucket)])

    # -- input assembly (single source for training, scoring, serving) ------

    def _update_input(self, f_row: np.ndarray, access: int, gap_seconds: int) -> np.ndarray:
        return np.concatenate([f_row, [float(access)], self.encode_elapsed(gap_seconds)])

    def _query_input(self, f_row: np.ndarray | None, elapsed_seconds: int) -> np.ndarray:
        enc = self.encode_elapsed(elapsed_seconds)
        if self.mode == "access":
            return np.concatenate([f_row, enc])
        return enc

    def _truncated(self, log: AccessLog):
        sessions = log.sessions
        if len(sessions) > self.truncate_sessions:
            sessions = sessions[-self.truncate_sessions:]
        return sessions

    def _build_sequence(self, log: AccessLog,
                        peaks: list[PeakExample] | None = None) -> UserSequence:
        sessions = self._truncated(log)
        n = len(sessions)
        ts = np.array([s.timestamp for s in sessions], dtype=np.int64)
        labels = np.array([s.access for s in sessions], dtype=np.float64)
        f = np.zeros((n, self.f_dim_))
        for i, s in enumerate(sessions):
            self.featurizer_.context_row(s.context, out=f[i])
        x = np.zeros((n, self.x_dim_))
        for i, s in enumerate(sessions):
            gap = 0 if i == 0 else int(ts[i] - ts[i - 1])
            x[i] = self._update_input(f[i], s.access, gap)
        if self.mode == "access":
            q_times = ts.copy()
            q_labels = labels.copy()
        else:
            peaks = peaks or []
            q_times = np.array([p.window[0] for p in peaks], dtype=np.int64)
            q_labels = np.array([p.label for p in peaks], dtype=np.float64)
        nq = q_times.shape[0]
        q_kidx = np.empty(nq, dtype=np.int64)
        q_u = np.zeros((nq, self.u_dim_))
        for j in range(nq):
            k = select_k(ts, int(q_times[j]), self.delta_)
            q_kidx[j] = k
            elapsed = 0 if k == 0 else int(q_times[j] - ts[k - 1])
            f_row = f[j] if self.mode == "access" else None
            q_u[j] = self._query_input(f_row, elapsed)
        return UserSequence(user_id=log.user_id, ts=ts, x=x, f=f, labels=labels,
                            q_times=q_times, q_kidx=q_kidx, q_u=q_u, q_labels=q_labels)

    def _peaks_by_user(self, ds: Dataset) -> dict[str, list[PeakExample]]:
        start, end = self.peak_hours
        by_user: dict[str, list[PeakExample]] = {u: [] for u in ds.logs}
        for ex in derive_peak_examples(ds, start, end):
            by_user[ex.user_id].append(ex)
        return by_user

    # -- training ------------------------------------------------------------

    def fit(self, ds: Dataset, y=None):
        self.prepare(ds)
        if ds.time_range is None:
            raise DataError("cannot fit on an empty dataset")
        cutoff = ds.time_range[1] - int(self.loss_window_days * SECONDS_PER_DAY)
        peaks_by_user = self._peaks_by_user(ds) if self.mode == "timeshift" else {}

        # Per-user arrays are rebuilt per minibatch: holding every
        # sequence for a large dataset would cost gigabytes, rebuilding
        # is cheap next to the backward pass.
        train_users: list[str] = []
        for user in ds.users():
            if self.mode == "access":
                sessions = self._truncated(ds.logs[user])
                has_target = any(s.timestamp >= cutoff for s in sessions)
            else:
                has_target = any(p.window[0] >= cutoff for p in peaks_by_user.get(user, []))
            if has_target:
                train_users.append(user)
        if not train_users:
            raise ConfigError("loss window selects no prediction targets")

        params = named_arrays(self.gru_, self.head_)
        adam = AdamState(params, learning_rate=self.learning_rate,
                         beta1=self.adam_beta1, beta2=self.adam_beta2,
                         eps=self.adam_eps)
        pool = ThreadPoolExecutor(max_workers=self.workers) if self.workers > 1 else None
        sessions_processed = 0
        try:
            for epoch in range(self.epochs):
                order = derive_rng(self.seed, f"rnn:order:{epoch}").permutation(len(train_users))
                for start in range(0, len(order), self.minibatch_users):
                    batch = [train_users[int(i)] for i in order[start:start + self.minibatch_users]]
                    snapshot = {k: v.copy() for k, v in params.items()}
                    loss_sum, n_pairs, n_sessions, grads = self._batch_gradients(
                        ds, batch, peaks_by_user, cutoff, epoch, pool)
                    if n_pairs == 0:
                        continue
                    if not np.isfinite(loss_sum):
                        self._restore(params, snapshot)
                        raise NumericalError(
                            "training loss diverged; parameters restored to the "
                            "last finite minibatch",
                            last_good=snapshot)
                    scale = 1.0 / n_pairs
                    for k in grads:
                        grads[k] *= scale
                    adam.step(params, grads)
                    sessions_processed += n_sessions
                    self.loss_curve_.append((sessions_processed, loss_sum / n_pairs))
        finally:
            if pool is not None:
                pool.shutdown()
        return self

    @staticmethod
    def _restore(params: dict[str, np.ndarray], snapshot: dict[str, np.ndarray]):
        for k, v in params.items():
            v[:] = snapshot[k]

    def _batch_gradients(self, ds, batch, peaks_by_user, cutoff, epoch, pool):
        def one(user: str):
            seq = self._build_sequence(ds.logs[user], peaks_by_user.get(user))
            mask = seq.q_times >= cutoff
            rng = (derive_rng(self.seed, f"rnn:dropout:{epoch}:{user}")
                   if self.dropout > 0.0 else None)
            loss_sum, n_pairs, grads = _user_forward_backward(
                self.gru_, self.head_, seq, mask, self.dropout, rng)
            return loss_sum, n_pairs, seq.ts.shape[0], grads

        total_loss = 0.0
        total_pairs = 0
        total_sessions = 0
        acc: dict[str, np.ndarray] | None = None
        if pool is None:
            results = map(one, batch)
        elif self.deterministic:
            results = pool.map(one, batch)
        else:
            from concurrent.futures import as_completed
            futures = [pool.submit(one, u) for u in batch]
            results = (f.result() for f in as_completed(futures))
        for loss_sum, n_pairs, n_sessions, grads in results:
            total_loss += loss_sum
            total_pairs += n_pairs
            total_sessions += n_sessions
            if acc is None:
                acc = grads
            else:
                for k in acc:
                    acc[k] += grads[k]
        return total_loss, total_pairs, total_sessions, acc or {}

    # -- introspection used by tests ----------------------------------------

    def training_loss(self, ds: Dataset) -> float:
        """Mean masked loss of the current parameters, dropout disabled."""
        loss, _, n = self._full_gradients(ds)
        return loss

    def training_gradients(self, ds: Dataset):
        """(mean loss, gradients of the mean loss, n_pairs), dropout disabled."""
        loss, grads, n = self._full_gradients(ds)
        return loss, grads, n

    def _full_gradients(self, ds: Dataset):
        check_fitted(self, "gru_")
        cutoff = ds.time_range[1] - int(self.loss_window_days * SECONDS_PER_DAY)
        peaks_by_user = self._peaks_by_user(ds) if self.mode == "timeshift" else {}
        total = 0.0
        pairs = 0
        acc = {k: np.zeros_like(v) for k, v in named_arrays(self.gru_, self.head_).items()}
        for user in ds.users():
            seq = self._build_sequence(ds.logs[user], peaks_by_user.get(user))
            mask = seq.q_times >= cutoff
            loss_sum, n_pairs, grads = _user_forward_backward(
                self.gru_, self.head_, seq, mask, 0.0, None)
            total += loss_sum
            pairs += n_pairs
            for k in acc:
                acc[k] += grads[k]
        if pairs == 0:
            raise ConfigError("loss window selects no prediction targets")
        for k in acc:
            acc[k] /= pairs
        return total / pairs, acc, pairs

    def user_gradients(self, ds: Dataset, user_id: str):
        """(loss_sum, n_pairs, grads of summed loss) for one user, dropout off."""
        check_fitted(self, "gru_")
        cutoff = ds.time_range[1] - int(self.loss_window_days * SECONDS_PER_DAY)
        peaks = self._peaks_by_user(ds).get(user_id) if self.mode == "timeshift" else None
        seq = self._build_sequence(ds.logs[user_id], peaks)
        mask = seq.q_times >= cutoff
        return _user_forward_backward(self.gru_, self.head_, seq, mask, 0.0, None)

    # -- offline scoring ------------------------------------------------------

    def sequence_forward(self, log: AccessLog) -> SequenceTrace:
        """Chronological replay of one user's log in inference mode.

        Uses the same step kernels as the serving simulator, so the
        resulting probabilities are bit-identical to an online replay
        with commit latency equal to ``epsilon_lag``.
        """
        check_fitted(self, "gru_")
        if self.mode != "access":
            raise ConfigError("sequence_forward applies to access mode")
        sessions = self._truncated(log)
        n = len(sessions)
        d = self.hidden_dim
        ts = np.array([s.timestamp for s in sessions], dtype=np.int64)
        hidden = np.zeros((n + 1, d))
        probs = np.empty(n)
        k_index = np.empty(n, dtype=np.int64)
        for i, s in enumerate(sessions):
            f_row = self.featurizer_.context_row(s.context)
            k = select_k(ts, int(ts[i]), self.delta_)
            k_index[i] = k
            elapsed = 0 if k == 0 else int(ts[i] - ts[k - 1])
            u = self._query_input(f_row, elapsed)
            probs[i] = predict_forward(self.head_, hidden[k], u)
            gap = 0 if i == 0 else int(ts[i] - ts[i - 1])
            x = self._update_input(f_row, s.access, gap)
            hidden[i + 1] = gru_forward(self.gru_, hidden[i], x)
        return SequenceTrace(timestamps=ts, probs=probs, k_index=k_index, hidden=hidden)

    def score_log(self, log: AccessLog) -> np.ndarray:
        return self.sequence_forward(log).probs

    def score_peaks(self, log: AccessLog, peaks: list[PeakExample]) -> np.ndarray:
        """Timeshift scoring: one probability per peak example."""
        check_fitted(self, "gru_")
        if self.mode != "timeshift":
            raise ConfigError("score_peaks applies to timeshift mode")
        sessions = self._truncated(log)
        n = len(sessions)
        ts = np.array([s.timestamp for s in sessions], dtype=np.int64)
        hidden = np.zeros((n + 1, self.hidden_dim))
        for i, s in enumerate(sessions):
            f_row = self.featurizer_.context_row(s.context)
            gap = 0 if i == 0 else int(ts[i] - ts[i - 1])
            hidden[i + 1] = gru_forward(self.gru_, hidden[i],
                                        self._update_input(f_row, s.access, gap))
        out = np.empty(len(peaks))
        for j, ex in enumerate(peaks):
            start = ex.window[0]
            k = select_k(ts, start, self.delta_)
            elapsed = 0 if k == 0 else int(start - ts[k - 1])
            out[j] = predict_forward(self.head_, hidden[k], self._query_input(None, elapsed))
        return out

    # -- serving hooks --------------------------------------------------------

    def serve_predict(self, h: np.ndarray | None, t_updated: int | None,
                      ctx, t: int) -> float:
        """Probability for a session start given the stored (h, t_updated)."""
        check_fitted(self, "gru_")
        f_row = self.featurizer_.context_row(ctx)
        if h is None:
            h = np.zeros(self.hidden_dim)
            elapsed = 0
        else:
            elapsed = int(t - t_updated)
        return predict_forward(self.head_, h, self._query_input(f_row, elapsed))

    def serve_update(self, h: np.ndarray | None, ctx, access: int,
                     t_updated: int | None, t: int) -> np.ndarray:
        """New hidden state committed after the session at time t closes."""
        check_fitted(self, "gru_")
        if h is None:
            h = np.zeros(self.hidden_dim)
            gap = 0
        else:
            gap = int(t - t_updated)
        f_row = self.featurizer_.context_row(ctx)
        return gru_forward(self.gru_, h, self._update_input(f_row, access, gap))


def loss_curve_csv(curve) -> str:
    lines = ["sessions_processed,loss"]
    for sessions, loss in curve:
        lines.append(f"{sessions},{loss!r}")
    return "\n".join(lines) + "\n"
