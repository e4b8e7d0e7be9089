"""Privacy-budget composition across clusters and rounds.

The accountant is descriptive: it reports what a per-round, per-cluster
(epsilon, delta) guarantee composes to under three regimes, and never
gates training.

* parallel:         clusters hold disjoint data, budget stays (eps, delta)
* naive sequential: (N T eps, N T delta), delta clamped at 1
* advanced:         eps_bar = eps sqrt(2 N T ln(1/delta_bar))
                            + N T eps (e^eps - 1),
                    delta_bar = N T delta + delta_slack
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ValidationError

REGIMES = ("parallel", "naive_sequential", "advanced")


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon_bar: float
    delta_bar: float
    regime: str
    delta_clamped: bool = False

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValidationError(f"regime must be one of {REGIMES}")
        if not (self.epsilon_bar >= 0):
            raise ValidationError("epsilon_bar must be >= 0")
        if not (0 <= self.delta_bar <= 1):
            raise ValidationError("delta_bar must lie in [0, 1]")

    def as_dict(self) -> dict:
        return {
            "epsilon_bar": self.epsilon_bar,
            "delta_bar": self.delta_bar,
            "regime": self.regime,
            "delta_clamped": self.delta_clamped,
        }


def _check_per_round(epsilon: float, delta: float) -> None:
    if not (epsilon > 0 and math.isfinite(epsilon)):
        raise ValidationError("epsilon must be positive and finite")
    if not (0 < delta < 1):
        raise ValidationError("delta must lie in (0, 1)")


def _check_counts(n_clusters: int, rounds: int) -> None:
    if n_clusters < 1 or rounds < 1:
        raise ValidationError("cluster and round counts must be >= 1")


def compose_parallel(epsilon: float, delta: float) -> PrivacyBudget:
    """Disjoint data: the composed budget equals the per-cluster budget."""
    _check_per_round(epsilon, delta)
    return PrivacyBudget(epsilon, delta, "parallel")


def compose_naive(epsilon: float, delta: float, n_clusters: int, rounds: int) -> PrivacyBudget:
    """Worst-case sequential composition over N clusters and T rounds."""
    _check_per_round(epsilon, delta)
    _check_counts(n_clusters, rounds)
    nt = n_clusters * rounds
    raw_delta = nt * delta
    return PrivacyBudget(
        nt * epsilon,
        min(1.0, raw_delta),
        "naive_sequential",
        delta_clamped=raw_delta > 1.0,
    )


def compose_advanced(
    epsilon: float,
    delta: float,
    n_clusters: int,
    rounds: int,
    delta_slack: float,
) -> PrivacyBudget:
    """Advanced composition; tighter than naive for small epsilon."""
    _check_per_round(epsilon, delta)
    _check_counts(n_clusters, rounds)
    if delta_slack < 0:
        raise ValidationError("delta_slack must be >= 0")
    nt = n_clusters * rounds
    delta_bar = nt * delta + delta_slack
    if not (0 < delta_bar < 1):
        raise ValidationError(
            f"total delta {delta_bar} must lie in (0, 1) for the advanced bound"
        )
    epsilon_bar = (
        epsilon * math.sqrt(2.0 * nt * math.log(1.0 / delta_bar))
        + nt * epsilon * math.expm1(epsilon)
    )
    return PrivacyBudget(epsilon_bar, delta_bar, "advanced")


def all_budgets(
    epsilon: float,
    delta: float,
    n_clusters: int,
    rounds: int,
    delta_slack: float,
) -> dict[str, dict | None]:
    """All three regimes keyed by name, for reports.

    The advanced regime is omitted (None, with a reason) when its total
    delta leaves (0, 1), which happens for large N T delta.
    """
    out: dict[str, dict | None] = {
        "parallel": compose_parallel(epsilon, delta).as_dict(),
        "naive_sequential": compose_naive(epsilon, delta, n_clusters, rounds).as_dict(),
    }
    try:
        out["advanced"] = compose_advanced(epsilon, delta, n_clusters, rounds, delta_slack).as_dict()
    except ValidationError as exc:
        out["advanced"] = None
        out["advanced_error"] = str(exc)
    return out
