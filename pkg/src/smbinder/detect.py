"""Hard detection: joint ML, CWDD single-line activation detection with
truncated ZF symbol recovery, and the full ZF vectoring benchmark."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .channel import BinderChannel, BinderLayout
from .smmod import ActivationSet, Constellation, PowerPlan, assemble_frame

__all__ = [
    "ToneObservation",
    "HardDecision",
    "SingularChannelError",
    "CandidateBudgetError",
    "enumerate_candidates",
    "ml_detect",
    "line_detect",
    "truncate",
    "zf_cancel",
    "zf_vectoring",
]

ML_CANDIDATE_LIMIT = 10**7
RCOND_THRESHOLD = 1e-12


class SingularChannelError(Exception):
    """Channel matrix too ill-conditioned to invert on this tone."""


class CandidateBudgetError(Exception):
    """Joint ML candidate count exceeds the enumeration guard."""


@dataclass(frozen=True)
class ToneObservation:
    """Received vector on one tone plus the noise/power bookkeeping."""

    y: np.ndarray  # (L,) complex128
    tone: int  # 1-based
    plan: PowerPlan
    sigma_w2: float  # noise variance per complex dimension

    def __post_init__(self):
        if self.sigma_w2 <= 0:
            raise ValueError("sigma_w2 must be positive")
        if not np.all(np.isfinite(self.y)):
            raise ValueError("observation contains non-finite entries")


@dataclass(frozen=True)
class HardDecision:
    active_lines: tuple  # m_hat per group, 1-based
    symbols: tuple  # s_hat per group
    metric: float


def group_candidates(act: ActivationSet, cons: Constellation):
    """Per-group candidates in canonical order: spatial label major, symbol label minor."""
    out = []
    for v in range(act.m_lines):
        m = act.line_for_label(v)
        for s in cons.points:
            out.append((m, complex(s)))
    return out


def enumerate_candidates(n_groups: int, act: ActivationSet, cons: Constellation):
    """All (JM)^N joint candidates in lexicographic candidate-index order."""
    per_group = group_candidates(act, cons)
    return list(itertools.product(per_group, repeat=n_groups))


def ml_detect(
    obs: ToneObservation,
    ch: BinderChannel,
    cons: Constellation,
    act: ActivationSet,
) -> HardDecision:
    """Exhaustive joint ML over all (JM)^N frames; ties break to the lowest
    lexicographic candidate index (spatial label major, symbol label minor)."""
    layout = ch.layout
    n, m = layout.n_groups, layout.m_lines
    n_cand = (cons.order * m) ** n
    if n_cand > ML_CANDIDATE_LIMIT:
        raise CandidateBudgetError(
            f"(JM)^N = {n_cand} exceeds {ML_CANDIDATE_LIMIT}; use the sequential detector"
        )
    hk = ch.matrix(obs.tone)
    amp = np.sqrt(obs.plan.per_line_tone_power)
    candidates = enumerate_candidates(n, act, cons)
    xs = np.stack([assemble_frame(c, n, m).x for c in candidates])
    resid = obs.y[None, :] - amp * xs @ hk.T
    costs = np.einsum("ij,ij->i", resid, resid.conj()).real
    best = int(np.argmin(costs))  # argmin returns the first (lowest) index on ties
    lines, syms = zip(*candidates[best])
    return HardDecision(active_lines=lines, symbols=syms, metric=float(costs[best]))


def line_detect(obs: ToneObservation, layout: BinderLayout) -> tuple:
    """Per group, the line with the largest received magnitude; ties -> lowest m."""
    m = layout.m_lines
    power = np.abs(obs.y) ** 2
    return tuple(
        int(np.argmax(power[(n - 1) * m : n * m])) + 1
        for n in range(1, layout.n_groups + 1)
    )


def truncate(obs: ToneObservation, ch: BinderChannel, m_hat) -> tuple[np.ndarray, np.ndarray]:
    """Keep only the detected active rows/columns: y_tilde (N,), H_tilde (N, N)."""
    m = ch.layout.m_lines
    idx = np.array([(n * m) + (mh - 1) for n, mh in enumerate(m_hat)])
    if np.any(idx < 0) or np.any(idx >= ch.layout.l_total):
        raise ValueError("invalid activation indices")
    hk = ch.matrix(obs.tone)
    return obs.y[idx], hk[np.ix_(idx, idx)]


def _guarded_inverse(h: np.ndarray, tone: int) -> np.ndarray:
    # reciprocal condition estimate in the 2-norm
    s = np.linalg.svd(h, compute_uv=False)
    if s[-1] == 0.0 or s[-1] / s[0] < RCOND_THRESHOLD:
        raise SingularChannelError(f"tone {tone}: channel matrix is singular")
    return np.linalg.inv(h)


def zf_cancel(
    y_tilde: np.ndarray,
    h_tilde: np.ndarray,
    plan: PowerPlan,
    sigma_w2: float,
    tone: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Linear crosstalk canceller on the truncated system.

    Returns the soft symbol estimates and the post-ZF noise variance per
    group: (sigma_w^2 / P_tone) * [H~^-1 H~^-H]_{nn}.
    """
    p_tone = plan.per_line_tone_power
    hinv = _guarded_inverse(h_tilde, tone)
    s_soft = hinv @ y_tilde / np.sqrt(p_tone)
    post_var = (sigma_w2 / p_tone) * np.einsum("ij,ij->i", hinv, hinv.conj()).real
    return s_soft, post_var


def zf_vectoring(
    obs: ToneObservation,
    ch: BinderChannel,
    plan: PowerPlan,
    cons: Constellation,
) -> tuple:
    """Full L x L ZF followed by per-line nearest-point decisions."""
    hk = ch.matrix(obs.tone)
    hinv = _guarded_inverse(hk, obs.tone)
    x_hat = hinv @ obs.y / np.sqrt(plan.per_line_tone_power)
    idx = np.argmin(np.abs(x_hat[:, None] - cons.points[None, :]), axis=1)
    return tuple(complex(cons.points[j]) for j in idx)
