import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedmfs.attribution import (
    MAX_EXACT_PLAYERS,
    CoalitionGame,
    EmptyPredictionMatrix,
    TooManyPlayers,
    exact_shapley,
    modality_impact,
    permutation_shapley,
    sample_game,
    shapley_from_values,
    table_game,
)
from fedmfs.axioms import fixture_tables, off_by_one_weight, run_axiom_suite, three_player_game
from fedmfs.domain import PredictionMatrix
from fedmfs.models import ForestConfig, ensemble_predict_proba_masked, train_ensemble


def ordering_oracle(players, v):
    """Average marginal contribution over every ordering, from first principles."""
    totals = {p: 0.0 for p in players}
    for order in itertools.permutations(players):
        seen = frozenset()
        for p in order:
            totals[p] += v(seen | {p}) - v(seen)
            seen = seen | {p}
    n = math.factorial(len(players))
    return {p: t / n for p, t in totals.items()}


def test_dummy_player_gets_exact_zero():
    game = CoalitionGame((0, 1, 2), lambda s: 0.37 * (0 in s) + 0.11 * (2 in s) + 0.05 * (0 in s and 2 in s))
    assert exact_shapley(game)[1] == 0.0
    assert permutation_shapley(game, 50, seed=4)[1] == 0.0


def test_and_game():
    phi = exact_shapley(table_game((1, 2), (0, 0, 0, 1)))
    assert phi == {1: pytest.approx(0.5, abs=1e-12), 2: pytest.approx(0.5, abs=1e-12)}


def test_three_player_fixture_against_ordering_oracle():
    game = three_player_game()
    oracle = ordering_oracle(game.player_set, game.value_fn)
    assert oracle == pytest.approx({1: 2.0, 2: 3.0, 3: 4.0}, abs=1e-12)
    assert exact_shapley(game) == pytest.approx(oracle, abs=1e-12)
    assert permutation_shapley(game, 0, exhaustive=True) == pytest.approx(oracle, abs=1e-12)


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_exact_matches_ordering_oracle(n, seed):
    values = np.random.default_rng(seed).random(1 << n)
    game = table_game(tuple(range(10, 10 + n)), values)
    assert exact_shapley(game) == pytest.approx(ordering_oracle(game.player_set, game.value_fn), abs=1e-12)


@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_efficiency_property(n, seed):
    values = np.random.default_rng(seed).normal(size=1 << n)
    phi = shapley_from_values(values)
    assert abs(phi.sum() - (values[-1] - values[0])) <= 1e-9


@given(st.integers(2, 7), st.integers(0, 2**32 - 1))
def test_symmetric_players_share_equally(n, seed):
    rng = np.random.default_rng(seed)
    by_size = rng.random(n + 1)
    # players 0 and 1 are interchangeable; the rest carry extra weight
    extra = rng.random(n)
    extra[1] = extra[0]

    def v(s):
        return by_size[len(s)] + sum(extra[p] for p in s)

    phi = exact_shapley(CoalitionGame(tuple(range(n)), v))
    assert abs(phi[0] - phi[1]) < 1e-9


def test_exhaustive_permutations_equal_exact(rng):
    game = table_game(tuple("abcde"), rng.random(32))
    assert permutation_shapley(game, 1, exhaustive=True) == pytest.approx(exact_shapley(game), abs=1e-9)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_and_game_sampling_converges(seed):
    est = permutation_shapley(table_game((1, 2), (0, 0, 0, 1)), 10_000, seed=seed)
    assert abs(est[1] - 0.5) <= 0.05 and abs(est[2] - 0.5) <= 0.05


def test_permutation_estimator_deterministic(rng):
    game = table_game(range(4), rng.random(16))
    assert permutation_shapley(game, 200, seed=3) == permutation_shapley(game, 200, seed=3)


def test_value_fn_called_exactly_two_to_the_n_times():
    calls = []
    game = CoalitionGame(tuple(range(6)), lambda s: calls.append(s) or len(s) ** 2)
    exact_shapley(game)
    assert len(calls) == 64
    assert len(set(calls)) == 64


def test_player_bound():
    game = CoalitionGame(tuple(range(MAX_EXACT_PLAYERS + 1)), lambda s: 0.0)
    with pytest.raises(TooManyPlayers):
        exact_shapley(game)


def test_axiom_suite_passes_and_detects_broken_weight():
    assert all(c.passed for c in run_axiom_suite())
    broken = {c.name: c.passed for c in run_axiom_suite(off_by_one_weight)}
    assert broken["efficiency"] is False


def test_fixtures_stay_within_eight_players():
    assert all(len(v).bit_length() - 1 <= 8 for v in fixture_tables().values())


# ---------------------------------------------------------------- ensemble attribution


def fixture(seed, informative=1, cols=3, n=150):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 3, n)
    X = rng.integers(0, 3, (n, cols))
    X[:, informative] = y
    preds = PredictionMatrix(X, tuple(range(cols)), 3)
    ens = train_ensemble(preds, y, forest_cfg=ForestConfig(15, 5, seed))
    return ens, preds, y


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_informative_column_has_largest_impact(seed):
    ens, preds, y = fixture(seed)
    rep = modality_impact(ens, preds, y, 50, seed)
    others = [rep.per_modality_mean_abs[m] for m in (0, 2)]
    assert rep.per_modality_mean_abs[1] > max(others)
    # oracle: per-sample exact enumeration through the generic game path
    rows = preds.values[list(rep.subsample_indices)]
    phis = [exact_shapley(sample_game(ens, r, y[i], rows)) for r, i in zip(rows, rep.subsample_indices)]
    for m in range(3):
        assert rep.per_modality_mean_abs[m] == pytest.approx(np.mean([abs(p[m]) for p in phis]), abs=1e-12)


def test_unused_column_reports_zero():
    rng = np.random.default_rng(5)
    y = rng.integers(0, 3, 100)
    X = np.stack([y, np.ones(100, dtype=int)], axis=1)
    preds = PredictionMatrix(X, (4, 7), 3)
    ens = train_ensemble(preds, y, forest_cfg=ForestConfig(10, 4, 1))
    assert 1 not in ens.forest.split_columns()
    assert modality_impact(ens, preds, y).per_modality_mean_abs[7] == 0.0


def test_single_modality_report():
    rng = np.random.default_rng(2)
    y = rng.integers(0, 3, 80)
    X = np.where(rng.random(80) < 0.7, y, rng.integers(0, 3, 80))[:, None]
    preds = PredictionMatrix(X, (3,), 3)
    ens = train_ensemble(preds, y, forest_cfg=ForestConfig(7, 3, 0))
    rep = modality_impact(ens, preds, y, 30, 9)
    rows = preds.values[list(rep.subsample_indices)]
    expected = np.mean(
        [
            abs(ensemble_predict_proba_masked(ens, {3: int(r[0])}, rows)[y[i]] - ensemble_predict_proba_masked(ens, {}, rows)[y[i]])
            for r, i in zip(rows, rep.subsample_indices)
        ]
    )
    assert rep.per_modality_mean_abs[3] == pytest.approx(expected, abs=1e-12)


def test_subsample_drawn_without_replacement():
    ens, preds, y = fixture(0, n=30)
    rep = modality_impact(ens, preds, y, 50, 1)
    assert rep.subsample_indices == tuple(range(30))
    rep = modality_impact(ens, preds, y, 12, 1)
    assert len(set(rep.subsample_indices)) == 12
    assert rep == modality_impact(ens, preds, y, 12, 1)


def test_per_sample_efficiency_on_forest():
    ens, preds, y = fixture(3)
    rep = modality_impact(ens, preds, y, 40, 0)
    rows = preds.values[list(rep.subsample_indices)]
    for phi, i in zip(rep.per_sample, rep.subsample_indices):
        full = ensemble_predict_proba_masked(ens, {m: int(preds.values[i, m]) for m in range(3)}, rows)[y[i]]
        empty = ensemble_predict_proba_masked(ens, {}, rows)[y[i]]
        assert abs(phi.sum() - (full - empty)) <= 1e-9


def test_empty_prediction_matrix():
    ens, _, _ = fixture(0)
    with pytest.raises(EmptyPredictionMatrix):
        modality_impact(ens, PredictionMatrix(np.zeros((0, 3)), (0, 1, 2), 3), [])
