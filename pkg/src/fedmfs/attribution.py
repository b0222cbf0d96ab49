"""Shapley attribution of the ensemble's output to its modality inputs.

Coalitions are encoded as bitmasks over the ordered player list: bit ``j``
set means player ``j`` is present. ``exact_shapley`` enumerates all ``2**n``
coalition values once; ``permutation_shapley`` is an independent Monte-Carlo
estimator used to cross-check it.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .domain import DomainError, PredictionMatrix, ShapleyReport
from .models import EnsembleModel, ensemble_predict_proba_masked, masked_label_values

MAX_EXACT_PLAYERS = 16


class TooManyPlayers(DomainError):
    pass


class EmptyPredictionMatrix(DomainError):
    pass


@dataclass(frozen=True)
class CoalitionGame:
    """``value_fn`` maps a frozenset of players to a real number."""

    player_set: tuple
    value_fn: Callable

    def mask_to_coalition(self, mask: int) -> frozenset:
        return frozenset(p for j, p in enumerate(self.player_set) if (mask >> j) & 1)


def shapley_weight(n: int, s: int) -> float:
    """Weight of a coalition of size ``s`` (excluding the player) among ``n`` players."""
    return math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n)


def shapley_from_values(values, weight=shapley_weight) -> np.ndarray:
    """Shapley values from a table of coalition values.

    ``values[..., mask]`` is ``v`` of the coalition encoded by ``mask``; the
    result has one trailing entry per player. Each player's value is a
    weighted sum of paired marginals ``v(S + j) - v(S)``, so a dummy player
    gets exactly zero.
    """
    values = np.asarray(values, dtype=np.float64)
    n_masks = values.shape[-1]
    n = n_masks.bit_length() - 1
    if 1 << n != n_masks:
        raise ValueError(f"value table length {n_masks} is not a power of two")
    if n > MAX_EXACT_PLAYERS:
        raise TooManyPlayers(f"{n} players exceeds the exact bound of {MAX_EXACT_PLAYERS}")
    masks = np.arange(n_masks)
    sizes = np.array([bin(x).count("1") for x in range(n_masks)])
    weights = np.array([weight(n, s) for s in range(n)] + [0.0])
    out = np.empty(values.shape[:-1] + (n,))
    for j in range(n):
        without = masks[(masks >> j) & 1 == 0]
        marginal = values[..., without | (1 << j)] - values[..., without]
        out[..., j] = marginal @ weights[sizes[without]]
    return out


def coalition_values(game: CoalitionGame) -> np.ndarray:
    n = len(game.player_set)
    if n > MAX_EXACT_PLAYERS:
        raise TooManyPlayers(f"{n} players exceeds the exact bound of {MAX_EXACT_PLAYERS}")
    return np.array([float(game.value_fn(game.mask_to_coalition(mask))) for mask in range(1 << n)])


def exact_shapley(game: CoalitionGame, weight=shapley_weight) -> dict:
    phi = shapley_from_values(coalition_values(game), weight)
    return {p: float(phi[j]) for j, p in enumerate(game.player_set)}


def permutation_shapley(game: CoalitionGame, num_permutations: int, seed: int = 0, exhaustive: bool = False) -> dict:
    """Average marginal contribution over orderings of the players.

    With ``exhaustive=True`` every ordering is visited once and
    ``num_permutations`` is ignored.
    """
    players = tuple(game.player_set)
    n = len(players)
    if exhaustive:
        orders = itertools.permutations(range(n))
        count = math.factorial(n)
    else:
        if num_permutations < 1:
            raise ValueError("num_permutations must be >= 1")
        rng = np.random.default_rng(seed)
        orders = (rng.permutation(n) for _ in range(num_permutations))
        count = num_permutations
    totals = np.zeros(n)
    empty = float(game.value_fn(frozenset()))
    for order in orders:
        coalition = set()
        prev = empty
        for j in order:
            coalition.add(players[j])
            cur = float(game.value_fn(frozenset(coalition)))
            totals[j] += cur - prev
            prev = cur
    return {p: float(totals[j] / count) for j, p in enumerate(players)}


def table_game(players, values) -> CoalitionGame:
    """Game backed by a precomputed value per coalition bitmask."""
    players = tuple(players)
    index = {p: j for j, p in enumerate(players)}
    table = np.asarray(values, dtype=np.float64)

    def value_fn(coalition):
        return table[sum(1 << index[p] for p in coalition)]

    return CoalitionGame(players, value_fn)


def sample_game(ens: EnsembleModel, row, label, background) -> CoalitionGame:
    """Game for one sample: v(S) is the masked probability of the true label."""
    row = np.asarray(row)
    players = ens.input_modalities

    def value_fn(coalition):
        partial = {m: int(row[j]) for j, m in enumerate(players) if m in coalition}
        return ensemble_predict_proba_masked(ens, partial, background)[int(label)]

    return CoalitionGame(players, value_fn)


def modality_impact(ens: EnsembleModel, preds: PredictionMatrix, labels, subsample: int = 50, seed: int = 0) -> ShapleyReport:
    """Mean |Shapley value| per modality over a seeded subsample of rows.

    The subsample doubles as the background set for masking.
    """
    if preds.num_rows == 0:
        raise EmptyPredictionMatrix("no rows to attribute")
    if subsample < 1:
        raise ValueError("subsample must be >= 1")
    y = np.asarray(labels, dtype=np.int64)
    k = min(subsample, preds.num_rows)
    idx = np.sort(np.random.default_rng(seed).choice(preds.num_rows, size=k, replace=False))
    rows = preds.values[idx]
    values = masked_label_values(ens, rows, y[idx], rows)
    phi = shapley_from_values(values)
    mean_abs = np.abs(phi).mean(axis=0)
    return ShapleyReport(
        {m: float(mean_abs[j]) for j, m in enumerate(preds.column_modalities)},
        tuple(int(i) for i in idx),
        phi,
    )
