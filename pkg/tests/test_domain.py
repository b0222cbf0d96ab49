import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedmfs.domain import (
    ClientDataset,
    CommLedger,
    ConfigError,
    DimensionMismatch,
    DomainError,
    ExperimentConfig,
    GlobalState,
    ModalityData,
    ModalityModelParams,
    PredictionMatrix,
    SelectionResult,
    ShapleyReport,
    UploadPacket,
    find_violations,
    load_config,
    load_dataset,
    param_count,
    save_config,
    size_bytes_for,
    validate_config,
    write_dataset,
)


def kinds(cfg):
    return {v.kind for v in find_violations(cfg)}


def test_reference_hyperparameters_are_valid(tiny_dir):
    cfg = ExperimentConfig(str(tiny_dir), rounds=100, local_epochs=5, learning_rate=0.1, gamma=1, alpha_s=0.2, alpha_c=0.8)
    assert validate_config(cfg) is cfg


def test_alpha_sum_violation(tiny_dir):
    cfg = ExperimentConfig(str(tiny_dir), alpha_s=0.5, alpha_c=0.6)
    with pytest.raises(ConfigError) as err:
        validate_config(cfg)
    assert "AlphaSumViolation" in {v.kind for v in err.value.violations}


def test_gamma_zero_rejected(tiny_dir):
    assert find_violations(ExperimentConfig(str(tiny_dir), gamma=0))


def test_violation_list_is_complete(tmp_path):
    cfg = ExperimentConfig(str(tmp_path / "nowhere"), rounds=0, alpha_s=0.9, alpha_c=0.9)
    assert {"NonPositiveRounds", "AlphaSumViolation", "MissingDataset"} <= kinds(cfg)


def test_alpha_tolerance(tiny_dir):
    assert not find_violations(ExperimentConfig(str(tiny_dir), alpha_s=0.3, alpha_c=0.7))
    assert "AlphaSumViolation" in kinds(ExperimentConfig(str(tiny_dir), alpha_s=0.3, alpha_c=0.7 + 1e-9))


def test_seed_must_fit_u64(tiny_dir):
    assert "InvalidSeed" in kinds(ExperimentConfig(str(tiny_dir), seed=2**64))
    assert "InvalidSeed" in kinds(ExperimentConfig(str(tiny_dir), seed=-1))
    assert not find_violations(ExperimentConfig(str(tiny_dir), seed=2**64 - 1))


def test_config_file_round_trip(tmp_path, tiny_dir):
    cfg = ExperimentConfig(str(tiny_dir), rounds=7, strategy="random_one", seed=3)
    save_config(cfg, tmp_path / "c.json")
    assert load_config(tmp_path / "c.json") == cfg


def test_config_relative_dataset_path(tmp_path, tiny_dir):
    (tmp_path / "c.json").write_text(json.dumps({"dataset_path": "data", "rounds": 2}))
    assert load_config(tmp_path / "c.json").dataset_path == str(tiny_dir.resolve())


def test_config_unknown_field_rejected():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"dataset_path": "x", "rounds": 1, "epochz": 3})


@given(st.integers(1, 200), st.integers(1, 200), st.integers(2, 30))
def test_size_bytes_is_four_per_parameter(d, h, c):
    params = ModalityModelParams(0, (d, h, c), np.zeros(d * h + h + h * c + c, dtype=np.float32))
    assert params.size_bytes == 4 * (d * h + h + h * c + c) == size_bytes_for((d, h, c))
    assert param_count(d, h, c) == params.weights.size


def test_weight_count_must_match_arch():
    with pytest.raises(DimensionMismatch):
        ModalityModelParams(0, (2, 3, 2), np.zeros(10, dtype=np.float32))


def test_modality_data_rejects_non_finite():
    with pytest.raises(DomainError):
        ModalityData(0, [[0.0, np.nan]])


def test_client_dataset_rows_must_match_labels():
    with pytest.raises(DimensionMismatch):
        ClientDataset(0, {0: ModalityData(0, np.zeros((3, 2)))}, [0, 1], 2)
    with pytest.raises(DomainError):
        ClientDataset(0, {}, [0], 2)


def test_prediction_matrix_invariants():
    with pytest.raises(DomainError):
        PredictionMatrix(np.zeros((2, 2)), (1, 0), 3)
    with pytest.raises(DomainError):
        PredictionMatrix(np.full((2, 1), 3), (0,), 3)


def test_values_are_read_only():
    params = ModalityModelParams(0, (1, 1, 2), np.zeros(6, dtype=np.float32))
    with pytest.raises(ValueError):
        params.weights[0] = 1.0


def test_ledger_cumulative():
    ledger = CommLedger()
    for up, down in [(10, 5), (0, 5), (7, 5)]:
        ledger.record(up, down)
    assert ledger.cumulative_uploaded_bytes == [10, 10, 17]
    assert ledger.cumulative_downloaded_bytes == [5, 10, 15]


finite = st.floats(-1e6, 1e6, allow_nan=False, width=32)


@st.composite
def model_params(draw):
    d, h, c = draw(st.integers(1, 5)), draw(st.integers(1, 5)), draw(st.integers(2, 4))
    w = draw(st.lists(finite, min_size=param_count(d, h, c), max_size=param_count(d, h, c)))
    return ModalityModelParams(draw(st.integers(0, 9)), (d, h, c), np.array(w, dtype=np.float32))


@st.composite
def client_datasets(draw):
    n = draw(st.integers(1, 6))
    c = draw(st.integers(2, 4))
    mids = draw(st.sets(st.integers(0, 5), min_size=1, max_size=3))
    mods = {}
    for m in mids:
        d = draw(st.integers(1, 3))
        vals = draw(st.lists(st.floats(-1e9, 1e9, allow_nan=False), min_size=n * d, max_size=n * d))
        mods[m] = ModalityData(m, np.array(vals).reshape(n, d))
    labels = draw(st.lists(st.integers(0, c - 1), min_size=n, max_size=n))
    return ClientDataset(draw(st.integers(0, 50)), mods, labels, c)


def via_json(obj):
    return type(obj).from_dict(json.loads(json.dumps(obj.to_dict())))


@given(model_params())
def test_params_round_trip(p):
    back = via_json(p)
    assert back == p and back.bit_equal(p)


@given(client_datasets())
def test_dataset_round_trip(ds):
    assert via_json(ds) == ds


@given(model_params(), st.integers(1, 10_000), st.integers(0, 20))
def test_packet_and_global_round_trip(p, count, client):
    packet = UploadPacket(client, p.modality_id, p, count)
    assert via_json(packet) == packet
    g = GlobalState({p.modality_id: p}, 4)
    assert via_json(g).bit_equal(g)


@given(st.dictionaries(st.integers(0, 8), st.floats(0, 10), min_size=1, max_size=5), st.booleans())
def test_report_and_selection_round_trip(values, with_samples):
    per_sample = np.arange(3 * len(values), dtype=float).reshape(3, -1) if with_samples else None
    rep = ShapleyReport(values, (0, 4, 9), per_sample)
    assert via_json(rep) == rep
    sel = SelectionResult(values, tuple(values)[:1], values, values)
    assert via_json(sel) == sel


def test_prediction_matrix_and_ledger_round_trip():
    pm = PredictionMatrix([[0, 2], [1, 1]], (3, 5), 3)
    assert via_json(pm) == pm
    ledger = CommLedger([1, 2], [3, 4])
    assert via_json(ledger) == ledger


def test_dataset_directory_round_trip(tmp_path, tiny_data):
    manifest, datasets = tiny_data
    write_dataset(tmp_path, manifest, datasets)
    m2, d2 = load_dataset(tmp_path)
    assert m2 == manifest
    assert d2 == datasets


def test_dataset_directory_dimension_check(tmp_path, tiny_data):
    manifest, datasets = tiny_data
    write_dataset(tmp_path, manifest, datasets)
    path = tmp_path / "modality_1_0.csv"
    rows = path.read_text().splitlines()
    path.write_text("".join(r + ",0.0\n" for r in rows))
    with pytest.raises(DimensionMismatch):
        load_dataset(tmp_path)
