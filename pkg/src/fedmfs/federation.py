"""Round loop: local learning, selective upload, per-modality aggregation, deployment.

Each round every client trains its modality models, fits a throwaway
(stage 1) ensemble used only for attribution, and uploads the models its
strategy picks. The server averages each modality over the clients that sent
it, weighting by sample count. Clients then deploy the new global models
and refit their personal (stage 2) ensemble, which is what gets evaluated.

Randomness is derived from ``seed ^ client_id`` plus a purpose tag, so
results do not depend on execution order or on which strategy is running.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .attribution import modality_impact
from .domain import (
    ArchMismatch,
    ClientDataset,
    CommLedger,
    DomainError,
    ExperimentConfig,
    GlobalState,
    Manifest,
    ModalityModelParams,
    SelectionResult,
    ShapleyReport,
    Strategy,
    UploadPacket,
    load_dataset,
    size_bytes_for,
)
from .models import (
    EnsembleModel,
    ForestConfig,
    TrainingConfig,
    build_prediction_matrix,
    ensemble_predict_batch,
    init_modality_model,
    train_ensemble,
    train_modality_model,
)
from .selection import SelectionConfig, compute_priorities

log = logging.getLogger(__name__)

TAG_SPLIT, TAG_TRAIN, TAG_STAGE1, TAG_STAGE2, TAG_SHAPLEY, TAG_RANDOM, TAG_INIT = range(7)


class ZeroSampleCount(DomainError):
    pass


class RoundFailure(RuntimeError):
    def __init__(self, round_index: int, cause: BaseException):
        self.round_index = round_index
        self.cause = cause
        super().__init__(f"round {round_index} failed: {type(cause).__name__}: {cause}")


def derive_seed(*parts: int) -> int:
    state = np.random.SeedSequence([int(p) for p in parts]).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def client_seed(seed: int, client_id: int) -> int:
    return int(seed) ^ int(client_id)


@dataclass(frozen=True)
class ClientState:
    client_id: int
    train: ClientDataset
    evaluation: ClientDataset
    local_models: dict
    rng_seed: int
    ensemble: EnsembleModel | None = None
    shapley: ShapleyReport | None = None
    selection: SelectionResult | None = None

    @property
    def modality_ids(self) -> tuple:
        return self.train.modality_ids


@dataclass(frozen=True)
class AggregationWeights:
    weights: dict  # modality -> {client_id: beta}

    def contributing_count(self, modality_id: int) -> int:
        return len(self.weights.get(modality_id, {}))


def split_rows(n: int, eval_fraction: float, seed: int):
    order = np.random.default_rng([seed, TAG_SPLIT]).permutation(n)
    n_eval = min(n - 1, max(1, int(round(n * eval_fraction))))
    return np.sort(order[n_eval:]), np.sort(order[:n_eval])


def model_arch(manifest: Manifest, modality_id: int):
    info = manifest.modality(modality_id)
    return (info.feature_dim, info.hidden_dim, manifest.num_classes)


def initial_models(manifest: Manifest, cfg: ExperimentConfig) -> dict:
    """Common seeded starting point per modality, shared by every client."""
    present = sorted({m for mids in manifest.clients.values() for m in mids})
    seed = derive_seed(cfg.seed, TAG_INIT)
    return {m: init_modality_model(m, model_arch(manifest, m), seed) for m in present}


def initial_global(manifest: Manifest, cfg: ExperimentConfig) -> GlobalState:
    """Round-0 server state: the common starting model of every modality."""
    return GlobalState(initial_models(manifest, cfg), 0)


def make_clients(datasets, global_: GlobalState, cfg: ExperimentConfig) -> list:
    states = []
    for ds in sorted(datasets, key=lambda d: d.client_id):
        cs = client_seed(cfg.seed, ds.client_id)
        train_rows, eval_rows = split_rows(ds.num_samples, cfg.eval_fraction, cs)
        states.append(
            ClientState(
                ds.client_id,
                ds.take(train_rows),
                ds.take(eval_rows),
                {m: global_.global_models[m] for m in ds.modality_ids},
                cs,
            )
        )
    return states


def _deployed(models: dict, global_: GlobalState) -> dict:
    out = dict(models)
    for m, local in models.items():
        g = global_.global_models.get(m)
        if g is None:
            continue
        if g.arch != local.arch:
            raise ArchMismatch(f"modality {m}: global arch {g.arch} vs local {local.arch}")
        out[m] = g
    return out


def _forest_cfg(cfg: ExperimentConfig, seed: int) -> ForestConfig:
    return ForestConfig(cfg.tree_count, cfg.max_depth, seed)


def client_round(state: ClientState, global_: GlobalState, cfg: ExperimentConfig):
    """Local learning plus upload selection; returns ``(packets, new_state)``."""
    t = global_.round_index
    models = _deployed(state.local_models, global_) if t > 0 else dict(state.local_models)
    labels = state.train.labels
    for m in sorted(models):
        tc = TrainingConfig(
            cfg.local_epochs,
            cfg.learning_rate,
            cfg.batch_size,
            derive_seed(state.rng_seed, TAG_TRAIN, m),
            start_epoch=t * cfg.local_epochs,
        )
        models[m] = train_modality_model(models[m], state.train.modalities[m], labels, tc)
    preds = build_prediction_matrix(models, state.train)
    ensemble = train_ensemble(preds, labels, cfg.ensemble_kind, _forest_cfg(cfg, derive_seed(state.rng_seed, TAG_STAGE1, t)))

    report = selection = None
    mids = tuple(sorted(models))
    if cfg.strategy is Strategy.FEDMFS:
        report = modality_impact(ensemble, preds, labels, cfg.shapley_subsample, derive_seed(state.rng_seed, TAG_SHAPLEY, t))
        sizes = {m: models[m].size_bytes for m in mids}
        selection = compute_priorities(report, sizes, SelectionConfig(cfg.gamma, cfg.alpha_s, cfg.alpha_c))
        chosen = selection.selected
    elif cfg.strategy is Strategy.UPLOAD_ALL:
        chosen = mids
    elif cfg.strategy is Strategy.RANDOM_ONE:
        rng = np.random.default_rng([state.rng_seed, TAG_RANDOM, t])
        chosen = (mids[int(rng.integers(len(mids)))],)
    else:
        chosen = ()

    packets = [
        UploadPacket(state.client_id, m, models[m], state.train.modalities[m].sample_count) for m in chosen
    ]
    return packets, replace(state, local_models=models, ensemble=ensemble, shapley=report, selection=selection)


def aggregation_weights(packets) -> AggregationWeights:
    by_mod: dict = {}
    for p in sorted(packets, key=lambda p: (p.modality_id, p.client_id)):
        if p.sample_count <= 0:
            raise ZeroSampleCount(f"client {p.client_id} sent modality {p.modality_id} with no samples")
        by_mod.setdefault(p.modality_id, []).append(p)
    weights = {}
    for m, group in by_mod.items():
        total = sum(p.sample_count for p in group)
        weights[m] = {p.client_id: p.sample_count / total for p in group}
    return AggregationWeights(weights)


def server_aggregate(packets, prev: GlobalState) -> GlobalState:
    """Sample-weighted average per modality; modalities nobody sent are kept."""
    packets = sorted(packets, key=lambda p: (p.modality_id, p.client_id))
    seen = set()
    for p in packets:
        if (p.client_id, p.modality_id) in seen:
            raise DomainError(f"client {p.client_id} sent modality {p.modality_id} twice")
        seen.add((p.client_id, p.modality_id))
    weights = aggregation_weights(packets).weights
    models = dict(prev.global_models)
    for m, betas in weights.items():
        group = [p for p in packets if p.modality_id == m]
        arch = group[0].params.arch
        if any(p.params.arch != arch for p in group) or (m in prev.global_models and prev.global_models[m].arch != arch):
            raise ArchMismatch(f"modality {m}: packets disagree on architecture")
        acc = np.zeros(group[0].params.weights.size, dtype=np.float64)
        for p in group:
            acc += betas[p.client_id] * p.params.weights.astype(np.float64)
        models[m] = ModalityModelParams(m, arch, acc.astype(np.float32))
    return GlobalState(models, prev.round_index + 1)


def deploy_and_stage2(state: ClientState, global_: GlobalState, cfg: ExperimentConfig):
    """Deploys the global models, refits the personal ensemble, scores it on held-out rows."""
    models = _deployed(state.local_models, global_)
    preds = build_prediction_matrix(models, state.train)
    seed = derive_seed(state.rng_seed, TAG_STAGE2, global_.round_index)
    ensemble = train_ensemble(preds, state.train.labels, cfg.ensemble_kind, _forest_cfg(cfg, seed))
    eval_preds = build_prediction_matrix(models, state.evaluation)
    guess = ensemble_predict_batch(ensemble, eval_preds)
    accuracy = float(np.mean(guess == state.evaluation.labels))
    return replace(state, local_models=models, ensemble=ensemble), accuracy


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    mean_accuracy: float
    min_accuracy: float
    max_accuracy: float
    uploaded_bytes: int
    downloaded_bytes: int
    cumulative_uploaded_bytes: int
    client_accuracy: dict = field(default_factory=dict)
    uploads: dict = field(default_factory=dict)  # client_id -> tuple of modality ids


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    metrics: list
    ledger: CommLedger
    selection_log: list
    attribution_log: list
    initial_accuracy: float
    globals: list  # GlobalState after each round
    weights: list  # AggregationWeights per round
    model_sizes: dict

    def accuracy_at_budget(self, budget_bytes: float):
        """Mean accuracy of the last round within ``budget_bytes`` of uplink, and that round count."""
        completed = sum(1 for m in self.metrics if m.cumulative_uploaded_bytes <= budget_bytes)
        acc = self.metrics[completed - 1].mean_accuracy if completed else self.initial_accuracy
        return acc, completed


def _selection_rows(t: int, state: ClientState, uploaded: tuple) -> list:
    rows = []
    sel = state.selection
    for m in state.modality_ids:
        row = {
            "round": t,
            "client_id": state.client_id,
            "modality_id": m,
            "raw_shapley": None,
            "norm_shapley": None,
            "size_bytes": state.local_models[m].size_bytes,
            "norm_size": None,
            "priority": None,
            "selected": int(m in uploaded),
        }
        if sel is not None:
            row.update(
                raw_shapley=state.shapley.per_modality_mean_abs[m],
                norm_shapley=sel.normalized_shapley[m],
                norm_size=sel.normalized_size[m],
                priority=sel.priorities[m],
            )
        rows.append(row)
    return rows


def _map(pool, fn, items):
    if pool is None:
        return [fn(x) for x in items]
    return list(pool.map(fn, items))


def run_experiment(cfg: ExperimentConfig, workers: int = 1, data=None) -> ExperimentResult:
    """Runs ``cfg.rounds`` rounds. ``data`` may supply a preloaded ``(manifest, datasets)``."""
    manifest, datasets = data if data is not None else load_dataset(cfg.dataset_path)
    global_ = initial_global(manifest, cfg)
    clients = make_clients(datasets, global_, cfg)
    sizes = {m: size_bytes_for(model_arch(manifest, m)) for m in global_.global_models}
    ledger = CommLedger()
    metrics, selection_log, attribution_log, globals_, weights_log = [], [], [], [], []
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        initial_accuracy = float(np.mean(_map(pool, lambda s: deploy_and_stage2(s, global_, cfg)[1], clients)))
        for t in range(cfg.rounds):
            try:
                outputs = _map(pool, lambda s: client_round(s, global_, cfg), clients)
                packets = [p for pk, _ in outputs for p in pk]
                clients = [s for _, s in outputs]
                held = {c.client_id: set(c.modality_ids) for c in clients}
                for p in packets:
                    if p.modality_id not in held[p.client_id]:
                        raise DomainError(f"client {p.client_id} uploaded modality {p.modality_id} it does not hold")
                weights_log.append(aggregation_weights(packets))
                global_ = server_aggregate(packets, global_)
                deployed = _map(pool, lambda s: deploy_and_stage2(s, global_, cfg), clients)
            except Exception as exc:
                raise RoundFailure(t, exc) from exc
            clients = [s for s, _ in deployed]
            accs = {s.client_id: a for s, a in deployed}
            uploads = {c.client_id: tuple(sorted(p.modality_id for p in packets if p.client_id == c.client_id)) for c in clients}
            up = sum(p.params.size_bytes for p in packets)
            down = sum(global_.global_models[m].size_bytes for c in clients for m in c.modality_ids)
            ledger.record(up, down)
            acc_values = list(accs.values())
            metrics.append(
                RoundMetrics(
                    t,
                    float(np.mean(acc_values)),
                    float(np.min(acc_values)),
                    float(np.max(acc_values)),
                    up,
                    down,
                    ledger.cumulative_uploaded_bytes[-1],
                    accs,
                    uploads,
                )
            )
            globals_.append(global_)
            for state, (_, trained) in zip(clients, outputs):
                selection_log.extend(_selection_rows(t, trained, uploads[state.client_id]))
                if trained.shapley is not None:
                    for m, v in trained.shapley.per_modality_mean_abs.items():
                        attribution_log.append({"round": t, "client_id": state.client_id, "modality_id": m, "mean_abs_shapley": v})
            log.info("round %d: mean acc %.4f, uplink %d bytes", t, metrics[-1].mean_accuracy, up)
    finally:
        if pool is not None:
            pool.shutdown()
    return ExperimentResult(cfg, metrics, ledger, selection_log, attribution_log, initial_accuracy, globals_, weights_log, sizes)
