"""Self-test of the Shapley machinery on built-in games.

``run_axiom_suite`` checks efficiency, the dummy and symmetry axioms, and
agreement between the exact and permutation estimators. Passing a
different ``weight`` function lets the suite demonstrate that it catches a
wrong coalition weighting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attribution import (
    coalition_values,
    exact_shapley,
    permutation_shapley,
    sample_game,
    shapley_from_values,
    shapley_weight,
    table_game,
)
from .domain import EnsembleKind, PredictionMatrix
from .models import ForestConfig, train_ensemble

EFFICIENCY_TOL = 1e-9
SYMMETRY_TOL = 1e-9
ORACLE_TOL = 0.02
ORACLE_PERMUTATIONS = 10_000
ORACLE_SEEDS = (0, 1, 2)

# v over masks 0..7 for players (1, 2, 3); exact answer (2, 3, 4)
THREE_PLAYER_VALUES = (0.0, 1.0, 2.0, 4.0, 3.0, 5.0, 6.0, 9.0)


@dataclass(frozen=True)
class AxiomCheck:
    name: str
    passed: bool
    detail: str = ""


def off_by_one_weight(n: int, s: int) -> float:
    """A plausible-looking but wrong weight (``n - s`` instead of ``n - s - 1``)."""
    return math.factorial(s) * math.factorial(n - s) / math.factorial(n)


def and_game():
    return table_game((1, 2), (0.0, 0.0, 0.0, 1.0))


def three_player_game():
    return table_game((1, 2, 3), THREE_PLAYER_VALUES)


def with_dummy(values, dummy_pos: int) -> np.ndarray:
    """Inserts a player at bit ``dummy_pos`` that never changes the value."""
    values = np.asarray(values, dtype=np.float64)
    n = values.size.bit_length() - 1
    out = np.empty(1 << (n + 1))
    low = (1 << dummy_pos) - 1
    for mask in range(out.size):
        base = (mask & low) | ((mask >> (dummy_pos + 1)) << dummy_pos)
        out[mask] = values[base]
    return out


def symmetric_values(n: int, rng) -> np.ndarray:
    """A game whose value depends only on coalition size."""
    by_size = rng.random(n + 1)
    return np.array([by_size[bin(mask).count("1")] for mask in range(1 << n)])


def forest_fixture(seed: int = 0):
    """Ensemble over three prediction columns where only the middle one is informative."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 3, 120)
    cols = np.stack([rng.integers(0, 3, 120), y, rng.integers(0, 3, 120)], axis=1)
    preds = PredictionMatrix(cols, (0, 1, 2), 3)
    ens = train_ensemble(preds, y, EnsembleKind.RANDOM_FOREST, ForestConfig(10, 4, seed))
    return ens, preds, y


def fixture_tables(seed: int = 0) -> dict:
    """Named coalition-value tables, all with at most 8 players."""
    rng = np.random.default_rng(seed)
    tables = {
        "and": coalition_values(and_game()),
        "three_player": np.array(THREE_PLAYER_VALUES),
    }
    for n in range(1, 8):
        tables[f"random_{n}_with_dummy"] = with_dummy(rng.random(1 << n), int(rng.integers(0, n + 1)))
    for n in (2, 5, 8):
        tables[f"symmetric_{n}"] = symmetric_values(n, rng)
    ens, preds, y = forest_fixture(seed)
    rows = preds.values[:8]
    for i, row in enumerate(rows):
        tables[f"forest_sample_{i}"] = coalition_values(sample_game(ens, row, y[i], rows))
    return tables


def _dummies(values) -> list:
    n = values.size.bit_length() - 1
    masks = np.arange(values.size)
    out = []
    for j in range(n):
        without = masks[(masks >> j) & 1 == 0]
        if np.array_equal(values[without | (1 << j)], values[without]):
            out.append(j)
    return out


def _symmetric_pairs(values) -> list:
    n = values.size.bit_length() - 1
    pairs = []
    for i in range(n):
        for j in range(i + 1, n):
            swapped = np.array([_swap_bits(mask, i, j) for mask in range(values.size)])
            if np.array_equal(values[swapped], values):
                pairs.append((i, j))
    return pairs


def _swap_bits(mask: int, i: int, j: int) -> int:
    if ((mask >> i) & 1) != ((mask >> j) & 1):
        mask ^= (1 << i) | (1 << j)
    return mask


def check_efficiency(tables: dict, weight=shapley_weight) -> AxiomCheck:
    worst, where = 0.0, ""
    for name, values in tables.items():
        gap = abs(shapley_from_values(values, weight).sum() - (values[-1] - values[0]))
        if gap > worst:
            worst, where = gap, name
    return AxiomCheck("efficiency", bool(worst <= EFFICIENCY_TOL), f"max gap {worst:.3g}" + (f" ({where})" if where else ""))


def check_dummy(tables: dict, weight=shapley_weight) -> AxiomCheck:
    found, bad = 0, []
    for name, values in tables.items():
        phi = shapley_from_values(values, weight)
        for j in _dummies(values):
            found += 1
            if phi[j] != 0.0:
                bad.append(f"{name}[{j}]={phi[j]!r}")
    ok = found > 0 and not bad
    return AxiomCheck("dummy", ok, f"{found} dummy players" + (", nonzero: " + ", ".join(bad) if bad else ""))


def check_symmetry(tables: dict, weight=shapley_weight) -> AxiomCheck:
    found, worst = 0, 0.0
    for values in tables.values():
        phi = shapley_from_values(values, weight)
        for i, j in _symmetric_pairs(values):
            found += 1
            worst = max(worst, abs(phi[i] - phi[j]))
    return AxiomCheck("symmetry", bool(found > 0 and worst < SYMMETRY_TOL), f"{found} symmetric pairs, max diff {worst:.3g}")


def oracle_deviation(values, weight=shapley_weight, seeds=ORACLE_SEEDS, permutations=ORACLE_PERMUTATIONS) -> float:
    """Median over seeds of the mean absolute gap between exact and sampled values."""
    n = values.size.bit_length() - 1
    game = table_game(tuple(range(n)), values)
    exact = exact_shapley(game, weight)
    gaps = []
    for s in seeds:
        est = permutation_shapley(game, permutations, seed=s)
        gaps.append(np.mean([abs(exact[p] - est[p]) for p in game.player_set]))
    return float(np.median(gaps))


def check_oracle(weight=shapley_weight, seed: int = 0) -> AxiomCheck:
    values = np.random.default_rng([seed, 5]).random(32)
    dev = oracle_deviation(values, weight)
    return AxiomCheck("oracle_agreement", bool(dev <= ORACLE_TOL), f"5 players, median MAD {dev:.4f}")


def check_three_player(weight=shapley_weight) -> AxiomCheck:
    phi = exact_shapley(three_player_game(), weight)
    got = tuple(phi[p] for p in (1, 2, 3))
    ok = all(abs(a - b) <= EFFICIENCY_TOL for a, b in zip(got, (2.0, 3.0, 4.0)))
    return AxiomCheck("three_player_fixture", ok, f"phi = {tuple(round(g, 12) for g in got)}")


def run_axiom_suite(weight=shapley_weight, seed: int = 0) -> list[AxiomCheck]:
    tables = fixture_tables(seed)
    return [
        check_efficiency(tables, weight),
        check_dummy(tables, weight),
        check_symmetry(tables, weight),
        check_three_player(weight),
        check_oracle(weight, seed),
    ]
