"""Text checkpoints for trained models.

A checkpoint bundles everything needed to score new logs: the model
kind, its constructor parameters, fitted arrays, the schema and session
length it was bound to, and the ids of the users it was trained on so
later evaluation can refuse them. Floats are written with ``repr`` and
parse back to the identical bit pattern, making save/load a no-op for
predictions.

Layout: a version line, flat ``key=value`` lines, then bracketed
sections. ``[params NAME]`` holds constructor arguments as Python
literals; ``[scalar NAME]``, ``[vector NAME n]`` and
``[matrix NAME rows cols]`` hold fitted values; ``[users n]`` lists
training users; ``[tree i nodes]`` rows are
``feature left right threshold value``. A final ``[end]`` guards
against truncation.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass

import numpy as np

from .baselines import GradientBoostedTrees, LogisticModel, PercentageModel, _Tree
from .datamodel import Schema
from .errors import DataError
from .features import ColumnScaler, SessionFeaturizer
from .rnn import RecurrentAccessModel, named_arrays
from .workflows import MODEL_KINDS, FeatureSessionScorer

_MAGIC = "prefetchkit-checkpoint v1"


@dataclass(frozen=True, slots=True)
class Checkpoint:
    kind: str
    scorer: object
    train_users: tuple[str, ...]
    schema: Schema
    session_length: int


# ---------------------------------------------------------------------------
# Writing


def _emit_params(lines: list[str], name: str, params: dict) -> None:
    lines.append(f"[params {name}]")
    for key in sorted(params):
        lines.append(f"{key}={params[key]!r}")


def _emit_scalar(lines: list[str], name: str, value) -> None:
    lines.append(f"[scalar {name}]")
    lines.append(repr(value))


def _emit_vector(lines: list[str], name: str, vec: np.ndarray) -> None:
    vec = np.asarray(vec, dtype=np.float64)
    lines.append(f"[vector {name} {vec.shape[0]}]")
    lines.append(" ".join(repr(float(v)) for v in vec))


def _emit_matrix(lines: list[str], name: str, mat: np.ndarray) -> None:
    mat = np.asarray(mat, dtype=np.float64)
    lines.append(f"[matrix {name} {mat.shape[0]} {mat.shape[1]}]")
    for row in mat:
        lines.append(" ".join(repr(float(v)) for v in row))


def _emit_trees(lines: list[str], trees: list[_Tree]) -> None:
    lines.append(f"[trees {len(trees)}]")
    for i, tree in enumerate(trees):
        n = tree.feature.shape[0]
        lines.append(f"[tree {i} {n}]")
        for j in range(n):
            lines.append(
                f"{int(tree.feature[j])} {int(tree.left[j])} {int(tree.right[j])} "
                f"{float(tree.threshold[j])!r} {float(tree.value[j])!r}")


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    if ckpt.kind not in MODEL_KINDS:
        raise DataError(f"unknown model kind {ckpt.kind!r}")
    lines = [_MAGIC, f"kind={ckpt.kind}", f"session_length={ckpt.session_length}"]
    lines.append("[schema]")
    lines.append("categorical=" + ",".join(ckpt.schema.categorical))
    lines.append("counts=" + ",".join(ckpt.schema.counts))
    lines.append(f"[users {len(ckpt.train_users)}]")
    lines.extend(ckpt.train_users)

    scorer = ckpt.scorer
    if ckpt.kind == "pct":
        _emit_params(lines, "model", scorer.get_params())
        _emit_scalar(lines, "alpha_", scorer.alpha_)
    elif ckpt.kind in ("lr", "gbdt"):
        est = scorer.estimator
        _emit_params(lines, "model", est.get_params())
        _emit_params(lines, "featurizer", scorer.featurizer.get_params())
        if ckpt.kind == "lr":
            _emit_vector(lines, "coef_", est.coef_)
            _emit_scalar(lines, "intercept_", float(est.intercept_))
            _emit_scalar(lines, "n_epochs_", int(est.n_epochs_))
            _emit_vector(lines, "scaler_mean", scorer.scaler.mean_)
            _emit_vector(lines, "scaler_scale", scorer.scaler.scale_)
        else:
            _emit_scalar(lines, "base_score_", est.base_score_)
            _emit_scalar(lines, "depth_", int(est.depth_))
            if getattr(est, "valid_loss_", None) is not None:
                _emit_scalar(lines, "valid_loss_", est.valid_loss_)
            _emit_trees(lines, est.trees_)
    elif ckpt.kind == "rnn":
        _emit_params(lines, "model", scorer.get_params())
        arrays = named_arrays(scorer.gru_, scorer.head_)
        for name in sorted(arrays):
            arr = arrays[name]
            if arr.ndim == 1:
                _emit_vector(lines, name, arr)
            else:
                _emit_matrix(lines, name, arr)
    lines.append("[end]")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Reading


class _Reader:
    def __init__(self, path):
        with open(path, encoding="utf-8") as fh:
            self.lines = fh.read().splitlines()
        self.pos = 0
        self.path = path

    def error(self, message: str) -> DataError:
        return DataError(f"{self.path}:{self.pos}: {message}")

    def next(self) -> str:
        if self.pos >= len(self.lines):
            raise DataError(f"{self.path}: unexpected end of checkpoint")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def peek(self) -> str | None:
        return self.lines[self.pos] if self.pos < len(self.lines) else None

    def expect_kv(self, key: str) -> str:
        line = self.next()
        prefix = key + "="
        if not line.startswith(prefix):
            raise self.error(f"expected {key}=..., got {line!r}")
        return line[len(prefix):]

    def expect_section(self, *kinds: str) -> list[str]:
        line = self.next()
        if not (line.startswith("[") and line.endswith("]")):
            raise self.error(f"expected a section header, got {line!r}")
        parts = line[1:-1].split()
        if parts[0] not in kinds:
            raise self.error(f"expected section {kinds}, got {line!r}")
        return parts


def _read_params(reader: _Reader, name: str) -> dict:
    parts = reader.expect_section("params")
    if parts[1] != name:
        raise reader.error(f"expected params {name}, got {parts[1]}")
    params: dict = {}
    while True:
        line = reader.peek()
        if line is None or line.startswith("["):
            return params
        reader.next()
        key, _, raw = line.partition("=")
        if not _:
            raise reader.error(f"expected key=value, got {line!r}")
        try:
            params[key] = ast.literal_eval(raw)
        except (ValueError, SyntaxError) as exc:
            raise reader.error(f"bad parameter literal {raw!r}") from exc


def _read_scalar(reader: _Reader, name: str):
    parts = reader.expect_section("scalar")
    if parts[1] != name:
        raise reader.error(f"expected scalar {name}, got {parts[1]}")
    return ast.literal_eval(reader.next())


def _read_vector(reader: _Reader, name: str) -> np.ndarray:
    parts = reader.expect_section("vector")
    if parts[1] != name:
        raise reader.error(f"expected vector {name}, got {parts[1]}")
    n = int(parts[2])
    tokens = reader.next().split()
    if len(tokens) != n:
        raise reader.error(f"vector {name} expected {n} values, got {len(tokens)}")
    return np.array([float(t) for t in tokens], dtype=np.float64)


def _read_matrix(reader: _Reader, name: str) -> np.ndarray:
    parts = reader.expect_section("matrix")
    if parts[1] != name:
        raise reader.error(f"expected matrix {name}, got {parts[1]}")
    rows, cols = int(parts[2]), int(parts[3])
    out = np.empty((rows, cols), dtype=np.float64)
    for r in range(rows):
        tokens = reader.next().split()
        if len(tokens) != cols:
            raise reader.error(f"matrix {name} row {r} expected {cols} values")
        out[r] = [float(t) for t in tokens]
    return out


def _read_trees(reader: _Reader) -> list[_Tree]:
    parts = reader.expect_section("trees")
    count = int(parts[1])
    trees: list[_Tree] = []
    for i in range(count):
        header = reader.expect_section("tree")
        if int(header[1]) != i:
            raise reader.error(f"expected tree {i}, got {header[1]}")
        n = int(header[2])
        feature = np.empty(n, dtype=np.int64)
        left = np.empty(n, dtype=np.int64)
        right = np.empty(n, dtype=np.int64)
        threshold = np.empty(n, dtype=np.float64)
        value = np.empty(n, dtype=np.float64)
        for j in range(n):
            tokens = reader.next().split()
            if len(tokens) != 5:
                raise reader.error(f"tree node expects 5 fields, got {len(tokens)}")
            feature[j] = int(tokens[0])
            left[j] = int(tokens[1])
            right[j] = int(tokens[2])
            threshold[j] = float(tokens[3])
            value[j] = float(tokens[4])
        trees.append(_Tree(feature=feature, threshold=threshold, left=left,
                           right=right, value=value))
    return trees


def _split_names(raw: str) -> tuple[str, ...]:
    return tuple(n for n in raw.split(",") if n)


def load_checkpoint(path) -> Checkpoint:
    reader = _Reader(path)
    if reader.next() != _MAGIC:
        raise DataError(f"{path}: not a recognized checkpoint (bad magic line)")
    kind = reader.expect_kv("kind")
    if kind not in MODEL_KINDS:
        raise reader.error(f"unknown model kind {kind!r}")
    session_length = int(reader.expect_kv("session_length"))
    reader.expect_section("schema")
    schema = Schema(categorical=_split_names(reader.expect_kv("categorical")),
                    counts=_split_names(reader.expect_kv("counts")))
    parts = reader.expect_section("users")
    n_users = int(parts[1])
    train_users = tuple(reader.next() for _ in range(n_users))

    if kind == "pct":
        model = PercentageModel(**_read_params(reader, "model"))
        model.alpha_ = float(_read_scalar(reader, "alpha_"))
        model.counters_ = {}
        scorer: object = model
    elif kind == "lr":
        mparams = _read_params(reader, "model")
        fparams = _read_params(reader, "featurizer")
        featurizer = SessionFeaturizer(**fparams).fit_schema(schema)
        est = LogisticModel(**mparams)
        est.coef_ = _read_vector(reader, "coef_")
        est.intercept_ = float(_read_scalar(reader, "intercept_"))
        est.n_epochs_ = int(_read_scalar(reader, "n_epochs_"))
        est.classes_ = np.array([0, 1])
        scaler = ColumnScaler()
        scaler.mean_ = _read_vector(reader, "scaler_mean")
        scaler.scale_ = _read_vector(reader, "scaler_scale")
        scorer = FeatureSessionScorer(featurizer, scaler, est, "lr")
    elif kind == "gbdt":
        mparams = _read_params(reader, "model")
        fparams = _read_params(reader, "featurizer")
        featurizer = SessionFeaturizer(**fparams).fit_schema(schema)
        est = GradientBoostedTrees(**mparams)
        est.base_score_ = float(_read_scalar(reader, "base_score_"))
        est.depth_ = int(_read_scalar(reader, "depth_"))
        if reader.peek() == "[scalar valid_loss_]":
            est.valid_loss_ = float(_read_scalar(reader, "valid_loss_"))
        est.trees_ = _read_trees(reader)
        est.classes_ = np.array([0, 1])
        scorer = FeatureSessionScorer(featurizer, None, est, "gbdt")
    else:
        model = RecurrentAccessModel(**_read_params(reader, "model"))
        model.prepare_schema(schema, session_length)
        arrays = named_arrays(model.gru_, model.head_)
        for name in sorted(arrays):
            target = arrays[name]
            loaded = (_read_vector(reader, name) if target.ndim == 1
                      else _read_matrix(reader, name))
            if loaded.shape != target.shape:
                raise reader.error(
                    f"array {name} has shape {loaded.shape}, expected {target.shape}")
            target[:] = loaded
        scorer = model

    if reader.next() != "[end]":
        raise reader.error("missing [end] marker; checkpoint may be truncated")
    return Checkpoint(kind=kind, scorer=scorer, train_users=train_users,
                      schema=schema, session_length=session_length)
