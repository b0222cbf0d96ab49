"""Core value types, configuration records and the on-disk dataset format.

All types are frozen after construction. Arrays held by them are marked
read-only so instances can be shared between client workers.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path

import numpy as np

ModalityId = int

ALPHA_TOL = 1e-12


class DomainError(ValueError):
    """Base class for invariant violations on domain values."""


class DimensionMismatch(DomainError):
    pass


class ArchMismatch(DomainError):
    pass


class Strategy(str, Enum):
    FEDMFS = "fedmfs"
    UPLOAD_ALL = "upload_all"
    RANDOM_ONE = "random_one"
    LOCAL_ONLY = "local_only"


class EnsembleKind(str, Enum):
    RANDOM_FOREST = "random_forest"
    MAJORITY_VOTE = "majority_vote"


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------- config


@dataclass(frozen=True)
class Violation:
    kind: str
    field: str
    message: str

    def __str__(self) -> str:
        return f"{self.kind}: {self.field}: {self.message}"


class ConfigError(DomainError):
    """Raised with the complete list of violations found in a config."""

    def __init__(self, violations: list[Violation]):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


@dataclass(frozen=True)
class ExperimentConfig:
    dataset_path: str
    rounds: int = 100
    local_epochs: int = 5
    learning_rate: float = 0.1
    batch_size: int = 32
    gamma: int = 1
    alpha_s: float = 0.2
    alpha_c: float = 0.8
    shapley_subsample: int = 50
    strategy: Strategy = Strategy.FEDMFS
    seed: int = 0
    ensemble_kind: EnsembleKind = EnsembleKind.RANDOM_FOREST
    tree_count: int = 25
    max_depth: int = 6
    eval_fraction: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        object.__setattr__(self, "ensemble_kind", EnsembleKind(self.ensemble_kind))
        object.__setattr__(self, "dataset_path", str(self.dataset_path))

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["strategy"] = self.strategy.value
        out["ensemble_kind"] = self.ensemble_kind.value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError([Violation("UnknownField", k, "not an ExperimentConfig field") for k in unknown])
        if "dataset_path" not in data:
            raise ConfigError([Violation("MissingDataset", "dataset_path", "required")])
        try:
            return cls(**data)
        except ValueError as exc:
            raise ConfigError([Violation("InvalidValue", "strategy/ensemble_kind", str(exc))]) from exc

    def with_(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


def _is_int(x) -> bool:
    return isinstance(x, (int, np.integer)) and not isinstance(x, bool)


def find_violations(cfg: ExperimentConfig) -> list[Violation]:
    """Every invariant failure in ``cfg``; empty when the config is valid."""
    out: list[Violation] = []

    def positive_int(name):
        value = getattr(cfg, name)
        if not _is_int(value) or value < 1:
            kind = "NonPositiveRounds" if name == "rounds" else "NonPositiveValue"
            out.append(Violation(kind, name, f"must be a positive integer, got {value!r}"))

    for name in ("rounds", "local_epochs", "batch_size", "gamma", "shapley_subsample", "tree_count"):
        positive_int(name)
    if not _is_int(cfg.max_depth) or cfg.max_depth < 0:
        out.append(Violation("NegativeValue", "max_depth", f"must be >= 0, got {cfg.max_depth!r}"))
    lr = cfg.learning_rate
    if not isinstance(lr, (int, float)) or not math.isfinite(lr) or lr <= 0:
        out.append(Violation("NonPositiveValue", "learning_rate", f"must be > 0, got {lr!r}"))
    for name in ("alpha_s", "alpha_c"):
        value = getattr(cfg, name)
        if not isinstance(value, (int, float)) or not 0.0 <= value <= 1.0:
            out.append(Violation("AlphaRange", name, f"must lie in [0, 1], got {value!r}"))
    try:
        total = float(cfg.alpha_s) + float(cfg.alpha_c)
    except (TypeError, ValueError):
        total = float("nan")
    if not abs(total - 1.0) <= ALPHA_TOL:
        out.append(Violation("AlphaSumViolation", "alpha_s+alpha_c", f"must sum to 1, got {total!r}"))
    if not 0.0 < cfg.eval_fraction < 1.0:
        out.append(Violation("InvalidValue", "eval_fraction", f"must lie in (0, 1), got {cfg.eval_fraction!r}"))
    if not _is_int(cfg.seed) or not 0 <= cfg.seed < 2**64:
        out.append(Violation("InvalidSeed", "seed", "must be an unsigned 64-bit integer"))
    if not (Path(cfg.dataset_path) / MANIFEST_NAME).is_file():
        out.append(Violation("MissingDataset", "dataset_path", f"no {MANIFEST_NAME} under {cfg.dataset_path!r}"))
    return out


def validate_config(cfg: ExperimentConfig) -> ExperimentConfig:
    violations = find_violations(cfg)
    if violations:
        raise ConfigError(violations)
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError([Violation("Malformed", str(path), "config must be a JSON object")])
    ds = data.get("dataset_path")
    if isinstance(ds, str) and not os.path.isabs(ds):
        data["dataset_path"] = str((Path(path).parent / ds).resolve())
    return ExperimentConfig.from_dict(data)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- data


@dataclass(frozen=True, eq=False)
class ModalityData:
    modality_id: ModalityId
    features: np.ndarray

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] == 0 or feats.shape[1] == 0:
            raise DimensionMismatch(f"modality {self.modality_id}: features must be a non-empty 2-D matrix")
        if not np.all(np.isfinite(feats)):
            raise DomainError(f"modality {self.modality_id}: non-finite feature values")
        object.__setattr__(self, "features", _frozen_array(feats, np.float64))

    @property
    def sample_count(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def take(self, rows) -> "ModalityData":
        return ModalityData(self.modality_id, self.features[np.asarray(rows)])

    def __eq__(self, other):
        return (
            isinstance(other, ModalityData)
            and self.modality_id == other.modality_id
            and np.array_equal(self.features, other.features)
        )

    def to_dict(self) -> dict:
        return {"modality_id": self.modality_id, "features": self.features.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModalityData":
        return cls(int(d["modality_id"]), np.asarray(d["features"], dtype=np.float64))


@dataclass(frozen=True, eq=False)
class ClientDataset:
    client_id: int
    modalities: dict
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if not self.modalities:
            raise DomainError(f"client {self.client_id}: no modalities")
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1:
            raise DimensionMismatch("labels must be 1-D")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise DomainError(f"client {self.client_id}: label outside [0, {self.num_classes})")
        mods = {}
        for mid in sorted(self.modalities):
            md = self.modalities[mid]
            if md.modality_id != mid:
                raise DomainError(f"modality key {mid} does not match data id {md.modality_id}")
            if md.sample_count != labels.size:
                raise DimensionMismatch(
                    f"client {self.client_id} modality {mid}: {md.sample_count} rows vs {labels.size} labels"
                )
            mods[int(mid)] = md
        object.__setattr__(self, "modalities", mods)
        object.__setattr__(self, "labels", _frozen_array(labels, np.int64))

    @property
    def modality_ids(self) -> tuple:
        return tuple(self.modalities)

    @property
    def num_samples(self) -> int:
        return self.labels.size

    def take(self, rows) -> "ClientDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return ClientDataset(
            self.client_id,
            {m: d.take(rows) for m, d in self.modalities.items()},
            self.labels[rows],
            self.num_classes,
        )

    def __eq__(self, other):
        return (
            isinstance(other, ClientDataset)
            and self.client_id == other.client_id
            and self.num_classes == other.num_classes
            and self.modalities == other.modalities
            and np.array_equal(self.labels, other.labels)
        )

    def to_dict(self) -> dict:
        return {
            "client_id": self.client_id,
            "num_classes": self.num_classes,
            "labels": self.labels.tolist(),
            "modalities": [d.to_dict() for d in self.modalities.values()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClientDataset":
        mods = [ModalityData.from_dict(x) for x in d["modalities"]]
        return cls(int(d["client_id"]), {m.modality_id: m for m in mods}, d["labels"], int(d["num_classes"]))


# ---------------------------------------------------------------- models


def param_count(input_dim: int, hidden_dim: int, num_classes: int) -> int:
    return input_dim * hidden_dim + hidden_dim + hidden_dim * num_classes + num_classes


def size_bytes_for(arch) -> int:
    return 4 * param_count(*arch)


@dataclass(frozen=True, eq=False)
class ModalityModelParams:
    """Flat float32 weights of a one-hidden-layer classifier.

    Layout: input->hidden matrix (row-major, input_dim x hidden_dim), hidden
    bias, hidden->class matrix (hidden_dim x num_classes), class bias.
    """

    modality_id: ModalityId
    arch: tuple
    weights: np.ndarray

    def __post_init__(self):
        arch = tuple(int(a) for a in self.arch)
        if len(arch) != 3 or min(arch) < 1:
            raise DomainError(f"arch must be three positive ints, got {self.arch!r}")
        w = np.asarray(self.weights, dtype=np.float32).ravel()
        if w.size != param_count(*arch):
            raise DimensionMismatch(f"{w.size} weights do not match arch {arch} ({param_count(*arch)})")
        object.__setattr__(self, "arch", arch)
        object.__setattr__(self, "weights", _frozen_array(w, np.float32))

    @property
    def input_dim(self) -> int:
        return self.arch[0]

    @property
    def hidden_dim(self) -> int:
        return self.arch[1]

    @property
    def num_classes(self) -> int:
        return self.arch[2]

    @property
    def size_bytes(self) -> int:
        return 4 * self.weights.size

    def __eq__(self, other):
        return (
            isinstance(other, ModalityModelParams)
            and self.modality_id == other.modality_id
            and self.arch == other.arch
            and np.array_equal(self.weights, other.weights)
        )

    def bit_equal(self, other: "ModalityModelParams") -> bool:
        return self.arch == other.arch and self.weights.tobytes() == other.weights.tobytes()

    def to_dict(self) -> dict:
        return {"modality_id": self.modality_id, "arch": list(self.arch), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModalityModelParams":
        return cls(int(d["modality_id"]), tuple(d["arch"]), np.asarray(d["weights"], dtype=np.float32))


@dataclass(frozen=True, eq=False)
class PredictionMatrix:
    """Hard per-modality predictions; one column per modality, ascending id."""

    values: np.ndarray
    column_modalities: tuple
    num_classes: int

    def __post_init__(self):
        cols = tuple(int(m) for m in self.column_modalities)
        if any(b <= a for a, b in zip(cols, cols[1:])):
            raise DomainError(f"columns must be strictly ascending, got {cols}")
        vals = np.asarray(self.values, dtype=np.int32)
        if vals.ndim != 2 or vals.shape[1] != len(cols):
            raise DimensionMismatch(f"values shape {vals.shape} vs {len(cols)} columns")
        if vals.size and (vals.min() < 0 or vals.max() >= self.num_classes):
            raise DomainError("prediction outside class range")
        object.__setattr__(self, "column_modalities", cols)
        object.__setattr__(self, "values", _frozen_array(vals, np.int32))

    @property
    def num_rows(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other):
        return (
            isinstance(other, PredictionMatrix)
            and self.column_modalities == other.column_modalities
            and self.num_classes == other.num_classes
            and np.array_equal(self.values, other.values)
        )

    def to_dict(self) -> dict:
        return {
            "values": self.values.tolist(),
            "column_modalities": list(self.column_modalities),
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PredictionMatrix":
        cols = d["column_modalities"]
        vals = np.asarray(d["values"], dtype=np.int32).reshape(-1, len(cols))
        return cls(vals, tuple(cols), int(d["num_classes"]))


# ---------------------------------------------------------------- attribution / selection


@dataclass(frozen=True, eq=False)
class ShapleyReport:
    per_modality_mean_abs: dict
    subsample_indices: tuple = ()
    per_sample: np.ndarray | None = None

    def __post_init__(self):
        vals = {int(m): float(v) for m, v in sorted(self.per_modality_mean_abs.items())}
        if any(v < 0 or not math.isfinite(v) for v in vals.values()):
            raise DomainError("mean |shapley| values must be finite and non-negative")
        object.__setattr__(self, "per_modality_mean_abs", vals)
        object.__setattr__(self, "subsample_indices", tuple(int(i) for i in self.subsample_indices))
        if self.per_sample is not None:
            ps = np.asarray(self.per_sample, dtype=np.float64)
            if ps.ndim != 2 or ps.shape[1] != len(vals):
                raise DimensionMismatch("per_sample must have one column per modality")
            object.__setattr__(self, "per_sample", _frozen_array(ps, np.float64))

    def __eq__(self, other):
        if not isinstance(other, ShapleyReport):
            return False
        if (self.per_sample is None) != (other.per_sample is None):
            return False
        return (
            self.per_modality_mean_abs == other.per_modality_mean_abs
            and self.subsample_indices == other.subsample_indices
            and (self.per_sample is None or np.array_equal(self.per_sample, other.per_sample))
        )

    def to_dict(self) -> dict:
        return {
            "per_modality_mean_abs": {str(m): v for m, v in self.per_modality_mean_abs.items()},
            "subsample_indices": list(self.subsample_indices),
            "per_sample": None if self.per_sample is None else self.per_sample.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ShapleyReport":
        per_sample = d.get("per_sample")
        n = len(d["per_modality_mean_abs"])
        if per_sample is not None:
            per_sample = np.asarray(per_sample, dtype=np.float64).reshape(-1, n)
        return cls(
            {int(m): v for m, v in d["per_modality_mean_abs"].items()},
            tuple(d.get("subsample_indices", ())),
            per_sample,
        )


@dataclass(frozen=True)
class SelectionResult:
    priorities: dict
    selected: tuple
    normalized_shapley: dict
    normalized_size: dict

    def __post_init__(self):
        object.__setattr__(self, "selected", tuple(sorted(int(m) for m in self.selected)))
        for name in ("priorities", "normalized_shapley", "normalized_size"):
            object.__setattr__(self, name, {int(m): float(v) for m, v in sorted(getattr(self, name).items())})

    def to_dict(self) -> dict:
        return {
            "priorities": {str(m): v for m, v in self.priorities.items()},
            "selected": list(self.selected),
            "normalized_shapley": {str(m): v for m, v in self.normalized_shapley.items()},
            "normalized_size": {str(m): v for m, v in self.normalized_size.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionResult":
        def keyed(x):
            return {int(m): v for m, v in x.items()}

        return cls(keyed(d["priorities"]), tuple(d["selected"]), keyed(d["normalized_shapley"]), keyed(d["normalized_size"]))


# ---------------------------------------------------------------- federation


@dataclass(frozen=True)
class UploadPacket:
    client_id: int
    modality_id: ModalityId
    params: ModalityModelParams
    sample_count: int

    def __post_init__(self):
        if self.sample_count <= 0:
            raise DomainError(f"packet from client {self.client_id}: sample_count must be > 0")
        if self.params.modality_id != self.modality_id:
            raise DomainError("packet modality_id does not match its params")

    def to_dict(self) -> dict:
        return {
            "client_id": self.client_id,
            "modality_id": self.modality_id,
            "params": self.params.to_dict(),
            "sample_count": self.sample_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UploadPacket":
        return cls(int(d["client_id"]), int(d["modality_id"]), ModalityModelParams.from_dict(d["params"]), int(d["sample_count"]))


@dataclass(frozen=True)
class GlobalState:
    global_models: dict
    round_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "global_models", {int(m): p for m, p in sorted(self.global_models.items())})

    def bit_equal(self, other: "GlobalState") -> bool:
        return (
            self.round_index == other.round_index
            and self.global_models.keys() == other.global_models.keys()
            and all(p.bit_equal(other.global_models[m]) for m, p in self.global_models.items())
        )

    def to_dict(self) -> dict:
        return {
            "round_index": self.round_index,
            "global_models": [p.to_dict() for p in self.global_models.values()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GlobalState":
        models = [ModalityModelParams.from_dict(x) for x in d["global_models"]]
        return cls({p.modality_id: p for p in models}, int(d["round_index"]))


@dataclass
class CommLedger:
    uploaded_bytes: list = field(default_factory=list)
    downloaded_bytes: list = field(default_factory=list)

    def record(self, uploaded: int, downloaded: int) -> None:
        self.uploaded_bytes.append(int(uploaded))
        self.downloaded_bytes.append(int(downloaded))

    @property
    def cumulative_uploaded_bytes(self) -> list:
        return [int(x) for x in np.cumsum(self.uploaded_bytes, dtype=np.int64)] if self.uploaded_bytes else []

    @property
    def cumulative_downloaded_bytes(self) -> list:
        return [int(x) for x in np.cumsum(self.downloaded_bytes, dtype=np.int64)] if self.downloaded_bytes else []

    def to_dict(self) -> dict:
        return {"uploaded_bytes": list(self.uploaded_bytes), "downloaded_bytes": list(self.downloaded_bytes)}

    @classmethod
    def from_dict(cls, d: dict) -> "CommLedger":
        return cls(list(d["uploaded_bytes"]), list(d["downloaded_bytes"]))


# ---------------------------------------------------------------- dataset directory

MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class ModalityInfo:
    modality_id: ModalityId
    feature_dim: int
    hidden_dim: int
    name: str = ""


@dataclass(frozen=True)
class Manifest:
    num_classes: int
    modalities: tuple
    clients: dict  # client_id -> tuple of modality ids

    def modality(self, mid: int) -> ModalityInfo:
        for info in self.modalities:
            if info.modality_id == mid:
                return info
        raise KeyError(mid)

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "modalities": [
                {"modality_id": i.modality_id, "name": i.name, "feature_dim": i.feature_dim, "hidden_dim": i.hidden_dim}
                for i in self.modalities
            ],
            "clients": [{"client_id": k, "modalities": list(v)} for k, v in sorted(self.clients.items())],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Manifest":
        mods = tuple(
            sorted(
                (
                    ModalityInfo(int(m["modality_id"]), int(m["feature_dim"]), int(m.get("hidden_dim", 32)), m.get("name", ""))
                    for m in d["modalities"]
                ),
                key=lambda i: i.modality_id,
            )
        )
        clients = {int(c["client_id"]): tuple(sorted(int(m) for m in c["modalities"])) for c in d["clients"]}
        return cls(int(d["num_classes"]), mods, clients)


def _format_row(row) -> str:
    return ",".join(repr(float(x)) for x in row)


def write_dataset(directory, manifest: Manifest, datasets) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    (out / MANIFEST_NAME).write_text(json.dumps(manifest.to_dict(), indent=2) + "\n", encoding="utf-8")
    for ds in datasets:
        k = ds.client_id
        (out / f"labels_{k}.csv").write_text("".join(f"{int(y)}\n" for y in ds.labels), encoding="utf-8")
        for m, md in ds.modalities.items():
            text = "".join(_format_row(r) + "\n" for r in md.features)
            (out / f"modality_{m}_{k}.csv").write_text(text, encoding="utf-8")


def read_manifest(directory) -> Manifest:
    path = Path(directory) / MANIFEST_NAME
    if not path.is_file():
        raise FileNotFoundError(f"no {MANIFEST_NAME} in {directory}")
    return Manifest.from_dict(json.loads(path.read_text(encoding="utf-8")))


def load_dataset(directory) -> tuple[Manifest, list[ClientDataset]]:
    """Reads a dataset directory, checking it against its manifest."""
    root = Path(directory)
    manifest = read_manifest(root)
    dims = {i.modality_id: i.feature_dim for i in manifest.modalities}
    datasets = []
    for k, mids in sorted(manifest.clients.items()):
        labels = np.loadtxt(root / f"labels_{k}.csv", dtype=np.int64, ndmin=1)
        mods = {}
        for m in mids:
            if m not in dims:
                raise DomainError(f"client {k} lists unknown modality {m}")
            feats = np.loadtxt(root / f"modality_{m}_{k}.csv", delimiter=",", dtype=np.float64, ndmin=2)
            if feats.shape[1] != dims[m]:
                raise DimensionMismatch(f"client {k} modality {m}: {feats.shape[1]} columns, manifest says {dims[m]}")
            mods[m] = ModalityData(m, feats)
        datasets.append(ClientDataset(k, mods, labels, manifest.num_classes))
    return manifest, datasets
