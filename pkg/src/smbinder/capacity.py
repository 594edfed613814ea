"""Monte Carlo capacity estimators for grouped SM and vectoring.

CCMC (Gaussian-input) capacity: the vectoring value is a closed-form
log-det; the SM value is a closed-form SIMO signal term plus a sampled
spatial (active-line index) term.  DCMC (finite-alphabet) capacity is
estimated by Monte Carlo over noise draws with log-sum-exp likelihoods.
All per-tone values are scaled by the tone bandwidth (bits/s).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .channel import BinderChannel
from .smmod import ActivationSet, Constellation, PowerPlan, assemble_frame
from .detect import enumerate_candidates

__all__ = [
    "CapacityEstimate",
    "AlphabetTooLargeError",
    "ccmc_vectoring_tone",
    "ccmc_sm_tone",
    "dcmc_tone",
    "sm_alphabet",
    "vectoring_alphabet",
    "aggregate_band",
]

DCMC_ALPHABET_LIMIT = 10**5
LN2 = np.log(2.0)


class AlphabetTooLargeError(Exception):
    pass


@dataclass(frozen=True)
class CapacityEstimate:
    value: float  # bits/s (already delta_f-scaled)
    std_err: float
    n_samples: int
    scheme: str  # "sm" | "vectoring"
    kind: str  # "ccmc" | "dcmc"


def ccmc_vectoring_tone(
    ch: BinderChannel, tone: int, plan: PowerPlan, sigma_w2: float
) -> CapacityEstimate:
    """Deterministic log-det CCMC capacity of the fully active binder."""
    hk = ch.matrix(tone)
    l = hk.shape[0]
    snr = plan.per_line_tone_power / (l * sigma_w2)
    gram = np.eye(l) + snr * (hk.conj().T @ hk)
    sign, logdet = np.linalg.slogdet(gram)
    if sign.real <= 0 or not np.isfinite(logdet):
        raise ValueError(f"tone {tone}: non-finite capacity determinant")
    value = ch.grid.delta_f_hz * logdet / LN2
    return CapacityEstimate(value=float(value), std_err=0.0, n_samples=0,
                            scheme="vectoring", kind="ccmc")


def _group_columns(ch: BinderChannel, tone: int, group: int) -> np.ndarray:
    """Columns H_k^{n_m} restricted to the group's own M receive rows: (M, M)."""
    return ch.group_block(tone, group, group)


def _spatial_term_bits(h_cols: np.ndarray, p_tone: float, sigma_w2: float,
                       n_samples: int, rng) -> tuple[float, float]:
    """Mutual information (bits/use) between the active-line index and the
    group's received vector, sampled from the Gaussian mixture."""
    m = h_cols.shape[1]
    if m == 1:
        return 0.0, 0.0
    # Conditional covariances R_m = p*h h^H + sigma^2 I; Sherman-Morrison inverse.
    cols = [h_cols[:, i] for i in range(m)]
    norms2 = np.array([np.vdot(h, h).real for h in cols])
    logdets = np.log(sigma_w2) * m + np.log1p(p_tone * norms2 / sigma_w2)

    picks = rng.integers(0, m, size=n_samples)
    # Y | m = sqrt(p) h_m a + w with a ~ CN(0,1)
    a = (rng.standard_normal(n_samples) + 1j * rng.standard_normal(n_samples)) / np.sqrt(2)
    w = (rng.standard_normal((n_samples, m)) + 1j * rng.standard_normal((n_samples, m))) / np.sqrt(2)
    y = np.sqrt(p_tone) * a[:, None] * h_cols.T[picks] + np.sqrt(sigma_w2) * w

    # log p(Y|m') up to a common constant for every mixture component
    log_pdf = np.empty((n_samples, m))
    for i, h in enumerate(cols):
        proj = y @ h.conj()
        quad = (np.einsum("ij,ij->i", y, y.conj()).real
                - (p_tone / (sigma_w2 + p_tone * norms2[i])) * np.abs(proj) ** 2) / sigma_w2
        log_pdf[:, i] = -logdets[i] - quad
    own = log_pdf[np.arange(n_samples), picks]
    vals = (np.log(m) + own - logsumexp(log_pdf, axis=1)) / LN2
    return float(np.mean(vals)), float(np.std(vals, ddof=1) / np.sqrt(n_samples))


def ccmc_sm_tone(
    ch: BinderChannel,
    tone: int,
    plan: PowerPlan,
    sigma_w2: float,
    n_samples: int = 10**5,
    seed: int = 0,
) -> CapacityEstimate:
    """Grouped-SM CCMC capacity: closed-form SIMO term + sampled spatial term."""
    if plan.scheme != "sm":
        raise ValueError("plan.scheme must be 'sm'")
    if n_samples < 100:
        raise ValueError("sample budget below 100")
    p_tone = plan.per_line_tone_power
    df = ch.grid.delta_f_hz
    rng = np.random.default_rng([seed, tone])
    total = 0.0
    var = 0.0
    m = ch.layout.m_lines
    for n in range(1, ch.layout.n_groups + 1):
        cols = _group_columns(ch, tone, n)
        norms2 = np.einsum("ij,ij->j", cols, cols.conj()).real
        signal = np.sum(np.log2(1.0 + p_tone * norms2 / sigma_w2)) / m
        spatial, se = _spatial_term_bits(cols, p_tone, sigma_w2, n_samples, rng)
        spatial = min(max(spatial, 0.0), np.log2(m))  # entropy bounds
        total += df * (signal + spatial)
        var += (df * se) ** 2
    return CapacityEstimate(value=float(total), std_err=float(np.sqrt(var)),
                            n_samples=n_samples, scheme="sm", kind="ccmc")


def sm_alphabet(layout, cons: Constellation, act: ActivationSet) -> np.ndarray:
    """All (JM)^N grouped-SM transmit vectors, canonical candidate order."""
    cands = enumerate_candidates(layout.n_groups, act, cons)
    return np.stack([assemble_frame(c, layout.n_groups, layout.m_lines).x for c in cands])


def vectoring_alphabet(layout, cons: Constellation) -> np.ndarray:
    """All J^L fully active transmit vectors."""
    l = layout.l_total
    j = cons.order
    total = j**l
    if total > DCMC_ALPHABET_LIMIT:
        raise AlphabetTooLargeError(f"vectoring alphabet size {total} exceeds limit")
    idx = np.indices([j] * l).reshape(l, -1).T
    return cons.points[idx]


def dcmc_tone(
    ch: BinderChannel,
    tone: int,
    plan: PowerPlan,
    alphabet: np.ndarray,
    sigma_w2: float,
    n_draws_per_candidate: int = 10**4,
    seed: int = 0,
) -> CapacityEstimate:
    """Finite-alphabet mutual information on one tone, equiprobable inputs.

    For each alphabet vector S_i and each noise draw, evaluates
    log2(|S| p(Y|S_i) / sum_i' p(Y|S_i')) with log-sum-exp; the estimate is
    the average over candidates and draws.
    """
    alphabet = np.asarray(alphabet)
    size = alphabet.shape[0]
    if size > DCMC_ALPHABET_LIMIT:
        raise AlphabetTooLargeError(f"alphabet size {size} exceeds {DCMC_ALPHABET_LIMIT}")
    if size == 1:
        return CapacityEstimate(value=0.0, std_err=0.0, n_samples=0,
                                scheme=plan.scheme, kind="dcmc")
    hk = ch.matrix(tone)
    amp = np.sqrt(plan.per_line_tone_power)
    hx = amp * alphabet @ hk.T  # (|S|, L) noiseless receive points
    rng = np.random.default_rng([seed, tone])
    l = hx.shape[1]
    vals = []
    for i in range(size):
        w = (rng.standard_normal((n_draws_per_candidate, l))
             + 1j * rng.standard_normal((n_draws_per_candidate, l))) / np.sqrt(2)
        y = hx[i] + np.sqrt(sigma_w2) * w
        # ||y - hx_j||^2 for all draws x candidates
        d2 = (np.einsum("ij,ij->i", y, y.conj()).real[:, None]
              + np.einsum("ij,ij->j", hx.T, hx.conj().T).real[None, :]
              - 2.0 * (y @ hx.conj().T).real)
        log_lik = -d2 / sigma_w2
        if not np.all(np.isfinite(log_lik)):
            raise ValueError(f"tone {tone}: non-finite likelihood")
        v = (np.log(size) + log_lik[:, i] - logsumexp(log_lik, axis=1)) / LN2
        vals.append(v)
    vals = np.concatenate(vals)
    df = ch.grid.delta_f_hz
    value = df * float(np.mean(vals))
    std_err = df * float(np.std(vals, ddof=1) / np.sqrt(vals.size))
    return CapacityEstimate(value=value, std_err=std_err, n_samples=int(vals.size),
                            scheme=plan.scheme, kind="dcmc")


def aggregate_band(estimates, expected_tones: int | None = None) -> CapacityEstimate:
    """Sum per-tone estimates; standard errors combine in quadrature."""
    estimates = list(estimates)
    if expected_tones is not None and len(estimates) != expected_tones:
        raise ValueError(
            f"expected {expected_tones} per-tone estimates, got {len(estimates)}"
        )
    if not estimates:
        raise ValueError("no estimates to aggregate")
    value = sum(e.value for e in estimates)
    std_err = float(np.sqrt(sum(e.std_err**2 for e in estimates)))
    return CapacityEstimate(
        value=float(value),
        std_err=std_err,
        n_samples=sum(e.n_samples for e in estimates),
        scheme=estimates[0].scheme,
        kind=estimates[0].kind,
    )
