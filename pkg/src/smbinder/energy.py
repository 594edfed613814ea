"""Class-AB line-driver power model and energy-efficiency computation.

The driver burns a static term V_s*I_Q + P_Hybrid regardless of load plus a
square-root dynamic term in the transmit power.  SM keeps one driver per
group active; vectoring keeps all M alive, which is what the efficiency
comparison ultimately hinges on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = ["LdParams", "EeResult", "ld_power", "group_ld_power", "energy_efficiency"]


@dataclass(frozen=True)
class LdParams:
    """Class-AB line-driver constants (defaults: 4 V, 11.1 mA, 64 ohm, 50 mW)."""

    v_s: float = 4.0
    i_q: float = 11.1e-3
    r_line: float = 64.0
    p_hybrid: float = 50e-3

    def __post_init__(self):
        if min(self.v_s, self.i_q, self.r_line, self.p_hybrid) <= 0:
            raise ValueError("all line-driver parameters must be positive")


@dataclass(frozen=True)
class EeResult:
    scheme: str
    capacity_used: float  # bits/s
    ld_power: float  # watts (the per-group driver power entering the ratio)
    efficiency: float  # bits/joule


def ld_power(p_t: float, params: LdParams = LdParams()) -> float:
    """P_LD = V_s*(I_Q + sqrt((2/pi)*P_t/R_line)) + P_Hybrid."""
    if p_t < 0:
        raise ValueError("transmit power must be >= 0")
    return params.v_s * (params.i_q + math.sqrt((2.0 / math.pi) * p_t / params.r_line)) + params.p_hybrid


def group_ld_power(
    p_total: float, scheme: str, m_lines: int, params: LdParams = LdParams()
) -> float:
    """Driver power of one group: a single driver at full budget for SM,
    M drivers at P/M each for vectoring."""
    if scheme == "sm":
        return ld_power(p_total, params)
    if scheme == "vectoring":
        return m_lines * ld_power(p_total / m_lines, params)
    raise ValueError(f"unknown scheme {scheme!r}")


def energy_efficiency(
    capacity: float,
    n_groups: int,
    group_ld: float,
    scheme: str,
    per_tone_count: int | None = None,
) -> EeResult:
    """Efficiency = capacity / (N * P_LD); the per-tone variant splits the
    driver power uniformly over the tone count."""
    if group_ld <= 0:
        raise ValueError("group_ld must be positive")
    power = group_ld if per_tone_count is None else group_ld / per_tone_count
    return EeResult(
        scheme=scheme,
        capacity_used=capacity,
        ld_power=power,
        efficiency=capacity / (n_groups * power),
    )
