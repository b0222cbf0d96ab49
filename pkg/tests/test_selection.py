import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from fedmfs.domain import DomainError, ShapleyReport
from fedmfs.selection import (
    KeyMismatch,
    NonFiniteInput,
    SelectionConfig,
    compute_priorities,
    minmax_normalize,
    select_top_gamma,
)


def test_minmax_examples():
    assert minmax_normalize({"A": 0.2, "B": 0.5, "C": 0.8}) == pytest.approx({"A": 0.0, "B": 0.5, "C": 1.0})
    assert minmax_normalize({"A": 0.3, "B": 0.3}) == {"A": 0.5, "B": 0.5}


def test_minmax_on_reference_sizes():
    sizes = {"eye": 0.07, "myo": 0.08, "tactile": 1.07, "xsens": 0.13}
    out = minmax_normalize(sizes)
    assert out == pytest.approx({"eye": 0.0, "myo": 0.01, "tactile": 1.0, "xsens": 0.06}, abs=1e-12)


def test_minmax_rejects_non_finite():
    with pytest.raises(NonFiniteInput):
        minmax_normalize({0: 1.0, 1: math.inf})
    with pytest.raises(NonFiniteInput):
        minmax_normalize({0: math.nan})


def test_priority_examples():
    cfg = SelectionConfig(1, 0.2, 0.8)
    res = compute_priorities({0: 0.6, 1: 0.0, 2: 1.0}, {0: 101, 1: 100, 2: 200}, cfg)
    # modality 0: norm shapley 0.6, norm size 0.01
    assert res.priorities[0] == pytest.approx(0.2 * 0.6 + 0.8 * 0.99)
    assert res.priorities[0] == pytest.approx(0.912)


@given(st.floats(0, 1))
def test_both_criteria_maximal(alpha_s):
    cfg = SelectionConfig(1, alpha_s, 1.0 - alpha_s)
    assume(abs(cfg.alpha_s + cfg.alpha_c - 1.0) <= 1e-12)
    res = compute_priorities({0: 5.0, 1: 1.0}, {0: 10, 1: 90}, cfg)
    assert res.priorities[0] == pytest.approx(1.0)


def test_alpha_s_one_gives_normalized_shapley():
    res = compute_priorities({0: 0.1, 1: 0.4, 2: 0.3}, {0: 5, 1: 6, 2: 7}, SelectionConfig(1, 1.0, 0.0))
    assert res.priorities == pytest.approx(res.normalized_shapley)


def test_top_gamma_examples():
    assert select_top_gamma({"A": 0.9, "B": 0.5, "C": 0.1}, 1) == ("A",)
    assert select_top_gamma({"A": 0.9, "B": 0.5, "C": 0.1}, 7) == ("A", "B", "C")
    assert select_top_gamma({"A": 0.7, "B": 0.7}, 1, {"A": 20, "B": 10}) == ("B",)
    assert select_top_gamma({3: 0.7, 1: 0.7}, 1, {3: 10, 1: 10}) == (1,)


def test_key_mismatch():
    with pytest.raises(KeyMismatch):
        compute_priorities({0: 1.0}, {1: 4}, SelectionConfig())


def test_config_invariants():
    with pytest.raises(DomainError):
        SelectionConfig(0, 0.2, 0.8)
    with pytest.raises(DomainError):
        SelectionConfig(1, 0.5, 0.6)


# ---------------------------------------------------------------- properties

mids = st.lists(st.integers(0, 9), min_size=1, max_size=6, unique=True)


@st.composite
def reports(draw):
    keys = draw(mids)
    phi = {m: draw(st.floats(0, 1)) for m in keys}
    sizes = {m: draw(st.integers(1, 10_000)) for m in keys}
    return phi, sizes


@given(reports(), st.integers(1, 8), st.floats(0, 1))
def test_selection_invariants(rep, gamma, alpha_s):
    phi, sizes = rep
    res = compute_priorities(phi, sizes, SelectionConfig(gamma, alpha_s, 1.0 - alpha_s))
    assert len(res.selected) == min(gamma, len(phi))
    assert list(res.selected) == sorted(res.selected)
    assert all(0.0 - 1e-12 <= p <= 1.0 + 1e-12 for p in res.priorities.values())
    chosen = [res.priorities[m] for m in res.selected]
    rest = [res.priorities[m] for m in phi if m not in res.selected]
    if rest:
        assert min(chosen) >= max(rest)


@given(reports(), st.integers(1, 5))
def test_top_gamma_is_nested(rep, gamma):
    phi, sizes = rep
    pri = compute_priorities(phi, sizes, SelectionConfig(1, 0.4, 0.6)).priorities
    assert set(select_top_gamma(pri, gamma, sizes)) <= set(select_top_gamma(pri, gamma + 1, sizes))


@given(reports(), st.floats(0.01, 100), st.floats(-5, 5), st.floats(0.01, 100), st.floats(-5, 5))
def test_affine_invariance(rep, a, b, c, d):
    phi, sizes = rep
    cfg = SelectionConfig(1, 0.3, 0.7)
    base = compute_priorities(phi, sizes, cfg)
    moved = compute_priorities({m: a * v + b for m, v in phi.items()}, {m: c * v + d for m, v in sizes.items()}, cfg)
    assert moved.selected == base.selected or _near_tie(base.priorities)


def _near_tie(pri):
    vals = sorted(pri.values(), reverse=True)
    return len(vals) > 1 and vals[0] - vals[1] < 1e-9


def oracle_argmax(phi, sizes):
    best = max(phi.values())
    cands = [m for m in phi if phi[m] == best]
    return min(cands, key=lambda m: (sizes[m], m))


@pytest.mark.parametrize("seed", range(100))
def test_extreme_weights_pick_expected_modality(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    keys = sorted(rng.choice(10, n, replace=False).tolist())
    # coarse values so ties happen often
    phi = {m: float(rng.integers(0, 4)) / 4 for m in keys}
    sizes = {m: int(rng.integers(1, 5)) * 1000 for m in keys}
    rep = ShapleyReport(phi)
    by_impact = compute_priorities(rep, sizes, SelectionConfig(1, 1.0, 0.0)).selected
    assert by_impact == (oracle_argmax(phi, sizes),)
    by_size = compute_priorities(rep, sizes, SelectionConfig(1, 0.0, 1.0)).selected
    assert sizes[by_size[0]] == min(sizes.values())
