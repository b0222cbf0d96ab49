"""Impact-versus-size priorities and the top-gamma upload set."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .domain import ALPHA_TOL, DomainError, SelectionResult, ShapleyReport


class NonFiniteInput(DomainError):
    pass


class KeyMismatch(DomainError):
    pass


@dataclass(frozen=True)
class SelectionConfig:
    gamma: int = 1
    alpha_s: float = 0.2
    alpha_c: float = 0.8

    def __post_init__(self):
        if self.gamma < 1:
            raise DomainError("gamma must be >= 1")
        if abs(self.alpha_s + self.alpha_c - 1.0) > ALPHA_TOL:
            raise DomainError(f"alpha_s + alpha_c must be 1, got {self.alpha_s + self.alpha_c!r}")


def minmax_normalize(values: dict) -> dict:
    """Affine map onto [0, 1]; an all-equal input maps every entry to 0.5."""
    if not values:
        raise ValueError("nothing to normalize")
    vals = {k: float(v) for k, v in values.items()}
    if not all(math.isfinite(v) for v in vals.values()):
        raise NonFiniteInput(f"non-finite value in {values!r}")
    lo, hi = min(vals.values()), max(vals.values())
    if hi == lo:
        return {k: 0.5 for k in vals}
    span = hi - lo
    return {k: (v - lo) / span for k, v in vals.items()}


def select_top_gamma(priorities: dict, gamma: int, sizes: dict | None = None) -> tuple:
    """The ``min(gamma, len(priorities))`` highest priorities, ascending by id.

    Ties go to the smaller model, then to the lower modality id.
    """
    if not priorities:
        raise ValueError("no priorities to select from")
    sizes = sizes or {}
    ranked = sorted(priorities, key=lambda m: (-priorities[m], sizes.get(m, 0), m))
    return tuple(sorted(ranked[: max(0, gamma)]))


def compute_priorities(shapley: ShapleyReport | dict, sizes: dict, cfg: SelectionConfig) -> SelectionResult:
    impact = shapley.per_modality_mean_abs if isinstance(shapley, ShapleyReport) else dict(shapley)
    if set(impact) != set(sizes):
        raise KeyMismatch(f"shapley keys {sorted(impact)} vs size keys {sorted(sizes)}")
    norm_s = minmax_normalize(impact)
    norm_c = minmax_normalize(sizes)
    priorities = {m: cfg.alpha_s * norm_s[m] + cfg.alpha_c * (1.0 - norm_c[m]) for m in impact}
    selected = select_top_gamma(priorities, cfg.gamma, sizes)
    return SelectionResult(priorities, selected, norm_s, norm_c)
