"""Per-modality classifiers and the client's decision-level ensemble.

Modality models are one-hidden-layer networks (tanh hidden layer, log-softmax
output) trained with mini-batch SGD on negative log-likelihood, entirely in
float32. The ensemble consumes hard predicted labels, one column per
modality, and is either a random forest of equality-split Gini trees or a
plain majority vote.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .domain import (
    DimensionMismatch,
    DomainError,
    EnsembleKind,
    ModalityData,
    ModalityModelParams,
    PredictionMatrix,
    param_count,
)


class NonFiniteLoss(ArithmeticError):
    """Training diverged; retry with a smaller learning rate."""


class EmptyInput(DomainError):
    pass


class ArityMismatch(DomainError):
    pass


class EmptyBackground(DomainError):
    pass


# ---------------------------------------------------------------- modality model


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int
    learning_rate: float
    batch_size: int = 32
    rng_seed: int = 0
    # epoch counter offset, so consecutive calls continue one shuffle schedule
    start_epoch: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def unpack(params: ModalityModelParams):
    d, h, c = params.arch
    w = params.weights
    o1 = d * h
    o2 = o1 + h
    o3 = o2 + h * c
    return w[:o1].reshape(d, h), w[o1:o2], w[o2:o3].reshape(h, c), w[o3:]


def pack(modality_id, arch, w1, b1, w2, b2) -> ModalityModelParams:
    flat = np.concatenate([w1.ravel(), b1.ravel(), w2.ravel(), b2.ravel()]).astype(np.float32, copy=False)
    return ModalityModelParams(modality_id, arch, flat)


def init_modality_model(modality_id: int, arch, seed: int) -> ModalityModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init per layer, as torch's Linear does."""
    d, h, c = (int(a) for a in arch)
    rng = np.random.default_rng([int(seed), int(modality_id)])
    b_in, b_hid = 1.0 / np.sqrt(d), 1.0 / np.sqrt(h)
    w1 = rng.uniform(-b_in, b_in, (d, h))
    b1 = rng.uniform(-b_in, b_in, h)
    w2 = rng.uniform(-b_hid, b_hid, (h, c))
    b2 = rng.uniform(-b_hid, b_hid, c)
    return pack(modality_id, (d, h, c), w1, b1, w2, b2)


def zero_model(modality_id: int, arch) -> ModalityModelParams:
    return ModalityModelParams(modality_id, tuple(arch), np.zeros(param_count(*arch), dtype=np.float32))


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _forward(w1, b1, w2, b2, X):
    hidden = np.tanh(X @ w1 + b1)
    return hidden, _log_softmax(hidden @ w2 + b2)


def _as_features(params, features) -> np.ndarray:
    X = np.asarray(features.features if isinstance(features, ModalityData) else features, dtype=np.float32)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != params.input_dim:
        raise DimensionMismatch(f"feature dim {X.shape[1]} vs model input_dim {params.input_dim}")
    return X


def nll_loss(params: ModalityModelParams, features, labels) -> float:
    X = _as_features(params, features)
    _, logp = _forward(*unpack(params), X)
    y = np.asarray(labels, dtype=np.int64)
    return float(-logp[np.arange(y.size), y].mean())


def train_modality_model(params, data, labels, tc: TrainingConfig, history: list | None = None):
    """Runs ``tc.epochs`` epochs of mini-batch SGD and returns new params.

    The shuffle order of epoch ``e`` depends only on ``(tc.rng_seed,
    tc.start_epoch + e)``. If ``history`` is given, the full-data loss at the
    start and after every epoch is appended to it.
    """
    X = _as_features(params, data)
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (X.shape[0],):
        raise DimensionMismatch(f"{y.size} labels for {X.shape[0]} rows")
    if y.size and (y.min() < 0 or y.max() >= params.num_classes):
        raise DomainError("label outside model class range")
    if tc.epochs == 0:
        return params
    w1, b1, w2, b2 = (a.copy() for a in unpack(params))
    lr = np.float32(tc.learning_rate)
    n = X.shape[0]
    if history is not None:
        history.append(nll_loss(params, X, y))
    for e in range(tc.epochs):
        order = np.random.default_rng([int(tc.rng_seed), tc.start_epoch + e]).permutation(n)
        for start in range(0, n, tc.batch_size):
            idx = order[start : start + tc.batch_size]
            xb, yb = X[idx], y[idx]
            hidden, logp = _forward(w1, b1, w2, b2, xb)
            batch_loss = -logp[np.arange(idx.size), yb].mean()
            if not np.isfinite(batch_loss):
                raise NonFiniteLoss(f"loss became {batch_loss} at epoch {tc.start_epoch + e}")
            dz = np.exp(logp)
            dz[np.arange(idx.size), yb] -= 1.0
            dz /= np.float32(idx.size)
            dh = (dz @ w2.T) * (1.0 - hidden * hidden)
            w2 -= lr * (hidden.T @ dz)
            b2 -= lr * dz.sum(axis=0)
            w1 -= lr * (xb.T @ dh)
            b1 -= lr * dh.sum(axis=0)
        if history is not None:
            history.append(nll_loss(pack(params.modality_id, params.arch, w1, b1, w2, b2), X, y))
    return pack(params.modality_id, params.arch, w1, b1, w2, b2)


def predict_modality(params: ModalityModelParams, features_row) -> tuple[int, np.ndarray]:
    row = np.asarray(features_row)
    if row.ndim != 1:
        raise DimensionMismatch("expected a single feature row")
    _, logp = _forward(*unpack(params), _as_features(params, row))
    return int(np.argmax(logp[0])), logp[0]


def predict_log_proba(params: ModalityModelParams, features) -> np.ndarray:
    _, logp = _forward(*unpack(params), _as_features(params, features))
    return logp


def predict_classes(params: ModalityModelParams, features) -> np.ndarray:
    return np.argmax(predict_log_proba(params, features), axis=1).astype(np.int32)


def build_prediction_matrix(models: dict, dataset) -> PredictionMatrix:
    """Hard predictions of each modality model on its own modality's rows."""
    cols = sorted(dataset.modalities)
    values = np.column_stack([predict_classes(models[m], dataset.modalities[m]) for m in cols])
    return PredictionMatrix(values, tuple(cols), dataset.num_classes)


# ---------------------------------------------------------------- checkpoints

_HEADER = struct.Struct("<4I")


def encode_checkpoint(params: ModalityModelParams) -> bytes:
    payload = params.weights.astype("<f4").tobytes()
    assert len(payload) == params.size_bytes
    return _HEADER.pack(params.modality_id, *params.arch) + payload


def decode_checkpoint(blob: bytes) -> ModalityModelParams:
    if len(blob) < _HEADER.size:
        raise DomainError("checkpoint shorter than its header")
    mid, d, h, c = _HEADER.unpack_from(blob)
    payload = blob[_HEADER.size :]
    if len(payload) != 4 * param_count(d, h, c):
        raise DomainError(f"checkpoint payload is {len(payload)} bytes, arch needs {4 * param_count(d, h, c)}")
    return ModalityModelParams(mid, (d, h, c), np.frombuffer(payload, dtype="<f4"))


def write_checkpoint(params: ModalityModelParams, path) -> None:
    Path(path).write_bytes(encode_checkpoint(params))


def read_checkpoint(path) -> ModalityModelParams:
    return decode_checkpoint(Path(path).read_bytes())


# ---------------------------------------------------------------- ensemble


@dataclass(frozen=True)
class ForestConfig:
    tree_count: int = 25
    max_depth: int = 6
    rng_seed: int = 0


@dataclass(frozen=True, eq=False)
class Forest:
    """Trees concatenated into flat arrays; child indices are absolute."""

    feature: np.ndarray
    value: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf: np.ndarray
    roots: np.ndarray

    @property
    def tree_count(self) -> int:
        return self.roots.size

    def arrays(self):
        return self.feature, self.value, self.left, self.right, self.leaf, self.roots

    def split_columns(self) -> set:
        return {int(f) for f, l in zip(self.feature, self.left) if l != -1}

    def tree(self, t: int) -> "Forest":
        start = int(self.roots[t])
        stop = int(self.roots[t + 1]) if t + 1 < self.roots.size else self.feature.size
        shift = lambda a: np.where(a[start:stop] >= 0, a[start:stop] - start, -1).astype(np.int32)
        return Forest(
            self.feature[start:stop].copy(),
            self.value[start:stop].copy(),
            shift(self.left),
            shift(self.right),
            self.leaf[start:stop].copy(),
            np.zeros(1, dtype=np.int32),
        )

    def __eq__(self, other):
        return isinstance(other, Forest) and all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


def concat_trees(trees) -> Forest:
    parts = [[] for _ in range(5)]
    roots = []
    offset = 0
    for tree in trees:
        feature, value, left, right, leaf = tree
        roots.append(offset)
        parts[0].append(feature)
        parts[1].append(value)
        parts[2].append(np.where(left >= 0, left + offset, -1))
        parts[3].append(np.where(right >= 0, right + offset, -1))
        parts[4].append(leaf)
        offset += feature.size
    arrays = [np.concatenate(p).astype(np.int32) for p in parts]
    for a in arrays:
        a.setflags(write=False)
    r = np.asarray(roots, dtype=np.int32)
    r.setflags(write=False)
    return Forest(*arrays, r)


@dataclass(frozen=True, eq=False)
class EnsembleModel:
    kind: EnsembleKind
    input_modalities: tuple
    class_count: int
    forest: Forest | None = None
    tree_count: int = 0
    max_depth: int = 0
    rng_seed: int = 0

    def __eq__(self, other):
        return (
            isinstance(other, EnsembleModel)
            and self.kind == other.kind
            and self.input_modalities == other.input_modalities
            and self.class_count == other.class_count
            and self.forest == other.forest
        )


def train_ensemble(preds: PredictionMatrix, labels, kind=EnsembleKind.RANDOM_FOREST, forest_cfg: ForestConfig | None = None):
    kind = EnsembleKind(kind)
    y = np.asarray(labels, dtype=np.int32)
    if preds.num_rows == 0 or y.size == 0:
        raise EmptyInput("cannot fit an ensemble on zero rows")
    if y.size != preds.num_rows:
        raise DimensionMismatch(f"{preds.num_rows} prediction rows vs {y.size} labels")
    if kind is EnsembleKind.MAJORITY_VOTE:
        return EnsembleModel(kind, preds.column_modalities, preds.num_classes)
    cfg = forest_cfg or ForestConfig()
    if cfg.tree_count < 1:
        raise ValueError("tree_count must be >= 1")
    rng = np.random.default_rng(int(cfg.rng_seed))
    X = preds.values
    n = X.shape[0]
    trees = []
    for _ in range(cfg.tree_count):
        boot = rng.integers(0, n, n)
        trees.append(kernels.grow_tree(X[boot], y[boot], preds.num_classes, cfg.max_depth))
    return EnsembleModel(
        kind, preds.column_modalities, preds.num_classes, concat_trees(trees), cfg.tree_count, cfg.max_depth, cfg.rng_seed
    )


def _rows(ens: EnsembleModel, rows) -> np.ndarray:
    if isinstance(rows, PredictionMatrix):
        if rows.column_modalities != ens.input_modalities:
            raise ArityMismatch(f"columns {rows.column_modalities} vs ensemble inputs {ens.input_modalities}")
        rows = rows.values
    X = np.asarray(rows, dtype=np.int32)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != len(ens.input_modalities):
        raise ArityMismatch(f"row length {X.shape[1]} vs {len(ens.input_modalities)} ensemble inputs")
    return X


def _vote_counts(ens: EnsembleModel, X: np.ndarray) -> np.ndarray:
    c = ens.class_count
    if ens.kind is EnsembleKind.MAJORITY_VOTE:
        counts = np.zeros((X.shape[0], c), dtype=np.int64)
        for j in range(X.shape[1]):
            counts[np.arange(X.shape[0]), X[:, j]] += 1
        return counts
    return kernels.forest_votes(*ens.forest.arrays(), X, c)


def ensemble_predict_batch(ens: EnsembleModel, rows) -> np.ndarray:
    return np.argmax(_vote_counts(ens, _rows(ens, rows)), axis=1).astype(np.int32)


def ensemble_predict(ens: EnsembleModel, row) -> int:
    return int(ensemble_predict_batch(ens, row)[0])


def ensemble_predict_proba(ens: EnsembleModel, rows) -> np.ndarray:
    """Forest: fraction of trees per class. Vote: one-hot of the voted class."""
    X = _rows(ens, rows)
    counts = _vote_counts(ens, X)
    if ens.kind is EnsembleKind.MAJORITY_VOTE:
        return np.eye(ens.class_count)[np.argmax(counts, axis=1)]
    return counts / ens.forest.tree_count


def _background(ens, background) -> np.ndarray:
    B = _rows(ens, background)
    if B.shape[0] == 0:
        raise EmptyBackground("masked evaluation needs at least one background row")
    return B


def ensemble_predict_proba_masked(ens: EnsembleModel, partial_row: dict, background) -> np.ndarray:
    """Mean class-probability over background rows completed with ``partial_row``."""
    B = _background(ens, background)
    pos = {m: j for j, m in enumerate(ens.input_modalities)}
    extra = set(partial_row) - set(pos)
    if extra:
        raise ArityMismatch(f"modalities {sorted(extra)} are not ensemble inputs")
    rows = B.copy()
    for m, cls in partial_row.items():
        rows[:, pos[m]] = cls
    return ensemble_predict_proba(ens, rows).mean(axis=0)


def masked_label_values(ens: EnsembleModel, samples, labels, background) -> np.ndarray:
    """Coalition values for every sample at once, shape (samples, 2**M).

    Column ``mask`` holds the masked probability of the sample's own label
    when the inputs whose bit is set in ``mask`` come from the sample and the
    rest from each background row.
    """
    S = _rows(ens, samples)
    B = _background(ens, background)
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (S.shape[0],):
        raise DimensionMismatch("one label per sample required")
    if ens.kind is EnsembleKind.RANDOM_FOREST:
        # hard-label rows repeat a lot; evaluate each distinct (row, label) and background row once
        keyed = np.column_stack([S, y.astype(np.int32)])
        uniq, inverse = np.unique(keyed, axis=0, return_inverse=True)
        bg_rows, bg_counts = np.unique(B, axis=0, return_counts=True)
        hits = np.zeros((uniq.shape[0], 1 << S.shape[1]), dtype=np.int64)
        for row, count in zip(bg_rows, bg_counts):
            hits += count * kernels.masked_label_votes(*ens.forest.arrays(), uniq[:, :-1], uniq[:, -1], row[None, :])
        return hits[inverse.ravel()] / (B.shape[0] * ens.forest.tree_count)
    m = S.shape[1]
    out = np.empty((S.shape[0], 1 << m))
    for mask in range(1 << m):
        take = np.array([(mask >> j) & 1 for j in range(m)], dtype=bool)
        for i in range(S.shape[0]):
            rows = np.where(take, S[i], B)
            out[i, mask] = np.mean(ensemble_predict_batch(ens, rows) == y[i])
    return out
