"""Seeded synthetic multimodal federations.

Each modality draws class-conditional Gaussians around seeded unit-norm
class centres: ``x = informativeness * centre[class] + noise_sigma * N(0, I)``.
Centres are shared by all clients, so every client solves the same task.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .domain import ClientDataset, DomainError, Manifest, ModalityData, ModalityInfo, write_dataset


class InvalidSpec(DomainError):
    pass


@dataclass(frozen=True)
class ModalitySpec:
    modality_id: int
    feature_dim: int
    hidden_dim: int
    informativeness: float
    noise_sigma: float
    name: str = ""


@dataclass(frozen=True)
class SynthSpec:
    num_clients: int
    num_classes: int
    samples_per_client: int
    modalities: tuple
    absence: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        mods = tuple(m if isinstance(m, ModalitySpec) else ModalitySpec(**m) for m in self.modalities)
        object.__setattr__(self, "modalities", tuple(sorted(mods, key=lambda m: m.modality_id)))
        object.__setattr__(self, "absence", {int(k): frozenset(int(x) for x in v) for k, v in self.absence.items()})

    def to_dict(self) -> dict:
        return {
            "num_clients": self.num_clients,
            "num_classes": self.num_classes,
            "samples_per_client": self.samples_per_client,
            "modalities": [asdict(m) for m in self.modalities],
            "absence": {str(k): sorted(v) for k, v in sorted(self.absence.items())},
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        return cls(
            int(d["num_clients"]),
            int(d["num_classes"]),
            int(d["samples_per_client"]),
            tuple(ModalitySpec(**m) for m in d["modalities"]),
            d.get("absence", {}),
            int(d.get("seed", 0)),
        )

    def replace_modality(self, modality_id: int, **changes) -> "SynthSpec":
        mods = tuple(
            ModalitySpec(**{**asdict(m), **changes}) if m.modality_id == modality_id else m for m in self.modalities
        )
        return SynthSpec(self.num_clients, self.num_classes, self.samples_per_client, mods, self.absence, self.seed)


def check_spec(spec: SynthSpec) -> None:
    problems = []
    if spec.num_clients < 1:
        problems.append("num_clients must be >= 1")
    if spec.num_classes < 2:
        problems.append("num_classes must be >= 2")
    if spec.samples_per_client < 2:
        problems.append("samples_per_client must be >= 2")
    if not spec.modalities:
        problems.append("at least one modality required")
    ids = [m.modality_id for m in spec.modalities]
    if len(set(ids)) != len(ids):
        problems.append("duplicate modality ids")
    for m in spec.modalities:
        if m.modality_id < 0:
            problems.append(f"modality {m.modality_id}: id must be >= 0")
        if m.feature_dim < 1 or m.hidden_dim < 1:
            problems.append(f"modality {m.modality_id}: feature_dim and hidden_dim must be >= 1")
        if not 0.0 <= m.informativeness <= 1.0:
            problems.append(f"modality {m.modality_id}: informativeness outside [0, 1]")
        if not m.noise_sigma > 0:
            problems.append(f"modality {m.modality_id}: noise_sigma must be > 0")
    for k, missing in spec.absence.items():
        if not 0 <= k < spec.num_clients:
            problems.append(f"absence lists unknown client {k}")
        unknown = set(missing) - set(ids)
        if unknown:
            problems.append(f"client {k}: absence lists unknown modalities {sorted(unknown)}")
        if set(ids) <= set(missing):
            problems.append(f"client {k}: absence removes every modality")
    if problems:
        raise InvalidSpec("; ".join(problems))


def class_centres(spec: SynthSpec, mod: ModalitySpec) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, 0, mod.modality_id])
    raw = rng.standard_normal((spec.num_classes, mod.feature_dim))
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    # a zero draw has probability zero; guard anyway for 1-d modalities
    norms[norms == 0] = 1.0
    return raw / norms


def generate(spec: SynthSpec) -> tuple[Manifest, list[ClientDataset]]:
    check_spec(spec)
    centres = {m.modality_id: class_centres(spec, m) for m in spec.modalities}
    datasets = []
    clients = {}
    for k in range(spec.num_clients):
        labels = np.random.default_rng([spec.seed, 1, k]).integers(0, spec.num_classes, spec.samples_per_client)
        missing = spec.absence.get(k, frozenset())
        mods = {}
        for mod in spec.modalities:
            if mod.modality_id in missing:
                continue
            rng = np.random.default_rng([spec.seed, 2, k, mod.modality_id])
            noise = rng.standard_normal((spec.samples_per_client, mod.feature_dim))
            feats = mod.informativeness * centres[mod.modality_id][labels] + mod.noise_sigma * noise
            mods[mod.modality_id] = ModalityData(mod.modality_id, feats)
        datasets.append(ClientDataset(k, mods, labels, spec.num_classes))
        clients[k] = tuple(sorted(mods))
    manifest = Manifest(
        spec.num_classes,
        tuple(ModalityInfo(m.modality_id, m.feature_dim, m.hidden_dim, m.name) for m in spec.modalities),
        clients,
    )
    return manifest, datasets


def gen_data(spec: SynthSpec, out_dir) -> Manifest:
    manifest, datasets = generate(spec)
    write_dataset(out_dir, manifest, datasets)
    return manifest


def load_spec(path) -> SynthSpec:
    return SynthSpec.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_spec(spec: SynthSpec, path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2) + "\n", encoding="utf-8")


# Hidden widths give parameter-count ratios of roughly 0.07 : 0.08 : 1.07 : 0.13
# between the eye, myo, tactile and body-pose stand-ins (5 classes).
TACTILE_LIKE = (3, 4)


def wearable_spec(seed: int = 0, samples_per_client: int = 400) -> SynthSpec:
    """Eight clients, five classes, six modalities; clients 4-7 lack the tactile pair.

    The compact right-arm and body-pose stand-ins carry most of the signal,
    the tactile pair is informative but large, the left arm is weak.
    """
    mods = (
        ModalitySpec(0, 2, 64, 0.6, 0.4, "eye"),
        ModalitySpec(1, 8, 42, 0.3, 0.5, "myo_left"),
        ModalitySpec(2, 8, 42, 1.0, 0.25, "myo_right"),
        ModalitySpec(3, 64, 113, 0.7, 0.35, "tactile_left"),
        ModalitySpec(4, 64, 113, 0.7, 0.35, "tactile_right"),
        ModalitySpec(5, 66, 13, 1.0, 0.3, "xsens"),
    )
    absence = {k: set(TACTILE_LIKE) for k in range(4, 8)}
    return SynthSpec(8, 5, samples_per_client, mods, absence, seed)
