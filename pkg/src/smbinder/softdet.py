"""Soft turbo detection: SOSD-I joint Max-Log LLRs, SOSD-II separated
detection, an exact-MAP oracle, a SISO (log-MAP BCJR) convolutional
decoder, and the iterative detector/decoder loop.

LLR sign convention throughout: L = ln P(bit = 0) / P(bit = 1), so a
positive LLR favours bit 0 and hard decisions are bit = 1 iff L < 0.
All produced LLRs are clamped to +/- LLR_CLAMP.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import BinderChannel
from .detect import ToneObservation, line_detect, truncate, zf_cancel
from .smmod import ActivationSet, Constellation, int_to_bits

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap if not (args and callable(args[0])) else args[0]


__all__ = [
    "LLR_CLAMP",
    "LlrFrame",
    "CodecConfig",
    "RscCode",
    "TurboResult",
    "sosd1_llr",
    "sosd2_llr",
    "exact_map_llr",
    "siso_decode",
    "turbo_loop",
    "make_interleaver",
]

LLR_CLAMP = 50.0


def _clamp(x):
    return np.clip(x, -LLR_CLAMP, LLR_CLAMP)


@dataclass(frozen=True)
class LlrFrame:
    """Aligned a-priori / extrinsic / a-posteriori LLRs; po = e + pr."""

    pr: np.ndarray
    e: np.ndarray
    po: np.ndarray


# ---------------------------------------------------------------------------
# Detector-side LLR calculators
# ---------------------------------------------------------------------------


def _group_candidate_table(cons: Constellation, act: ActivationSet):
    """Candidate bit matrix and signal table for one group.

    Candidates follow the canonical order (spatial label major, symbol label
    minor).  Returns (bits (JM, p+q) int8, signals (JM, M) complex).
    """
    m, j = act.m_lines, cons.order
    p, q = act.p_bits, cons.bits_per_symbol
    bits = np.empty((m * j, p + q), dtype=np.int8)
    sig = np.zeros((m * j, m), dtype=np.complex128)
    row = 0
    for v in range(m):
        line = act.line_for_label(v)
        sp = int_to_bits(v, p)
        for t in range(j):
            bits[row, :p] = sp
            bits[row, p:] = cons.labels[t]
            sig[row, line - 1] = cons.points[t]
            row += 1
    return bits, sig


def _sosd1_metrics(obs, ch, group, cons, act, l_pr):
    """Per-candidate probability metric d for the group's own block."""
    m = ch.layout.m_lines
    y_n = obs.y[(group - 1) * m : group * m]
    h_nn = ch.group_block(obs.tone, group, group)
    amp = np.sqrt(obs.plan.per_line_tone_power)
    bits, sig = _group_candidate_table(cons, act)
    resid = y_n[None, :] - amp * sig @ h_nn.T
    d = -np.einsum("ij,ij->i", resid, resid.conj()).real / (2.0 * obs.sigma_w2)
    # A-priori term: candidates whose bit is 1 pay the prior L = ln P(0)/P(1).
    d = d - bits.astype(float) @ np.asarray(l_pr, dtype=float)
    return bits, d


def _bitwise_max_llr(bits, d):
    llr = np.empty(bits.shape[1])
    for i in range(bits.shape[1]):
        one = bits[:, i].astype(bool)
        llr[i] = np.max(d[~one]) - np.max(d[one])
    return _clamp(llr)


def _bitwise_lse_llr(bits, d):
    from scipy.special import logsumexp  # local import keeps scipy optional

    llr = np.empty(bits.shape[1])
    for i in range(bits.shape[1]):
        one = bits[:, i].astype(bool)
        llr[i] = logsumexp(d[~one]) - logsumexp(d[one])
    return _clamp(llr)


def sosd1_llr(
    obs: ToneObservation,
    ch: BinderChannel,
    group: int,
    cons: Constellation,
    act: ActivationSet,
    l_pr: np.ndarray,
) -> LlrFrame:
    """Joint Max-Log a-posteriori LLRs over the group's JM candidates.

    Only the group's own channel block enters the metric; crosstalk from
    other groups is treated as part of the noise.
    """
    bits, d = _sosd1_metrics(obs, ch, group, cons, act, l_pr)
    po = _bitwise_max_llr(bits, d)
    pr = np.asarray(l_pr, dtype=float)
    return LlrFrame(pr=pr, e=po - pr, po=po)


def exact_map_llr(
    obs: ToneObservation,
    ch: BinderChannel,
    group: int,
    cons: Constellation,
    act: ActivationSet,
    l_pr: np.ndarray,
) -> LlrFrame:
    """Log-sum-exp oracle over the same candidate set and metrics as SOSD-I."""
    bits, d = _sosd1_metrics(obs, ch, group, cons, act, l_pr)
    po = _bitwise_lse_llr(bits, d)
    pr = np.asarray(l_pr, dtype=float)
    return LlrFrame(pr=pr, e=po - pr, po=po)


def sosd2_llr(
    obs: ToneObservation,
    ch: BinderChannel,
    group: int,
    m_hat: int,
    s_soft: complex,
    post_noise_var: float,
    cons: Constellation,
    act: ActivationSet,
    l_pr: np.ndarray,
) -> LlrFrame:
    """Separated detection: hard activation index plus Max-Log symbol LLRs.

    Spatial bits become fixed unit-magnitude LLRs from the detected line
    index; symbol bits come from a Max-Log sweep over the J constellation
    points against the ZF soft estimate, using the post-ZF noise variance.
    """
    p, q = act.p_bits, cons.bits_per_symbol
    pr = np.asarray(l_pr, dtype=float)
    po = np.empty(p + q)

    # The hard activation decision contributes a fixed unit-magnitude
    # extrinsic (negative favours bit 1); it rides on top of the prior so
    # the additive split po = e + pr survives the turbo iterations.
    spatial = int_to_bits(act.label_for_line(m_hat), p)
    for i, a in enumerate(spatial):
        po[i] = pr[i] + (-1.0 if a else 1.0)

    sym_bits = np.array(cons.labels, dtype=np.int8)
    d = -np.abs(s_soft - cons.points) ** 2 / (2.0 * post_noise_var)
    d = d - sym_bits.astype(float) @ pr[p:]
    po[p:] = _bitwise_max_llr(sym_bits, d)
    return LlrFrame(pr=pr, e=po - pr, po=po)


# ---------------------------------------------------------------------------
# Recursive systematic convolutional code + log-MAP BCJR
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CodecConfig:
    """Rate-1/2 terminated RSC code plus the turbo-loop bookkeeping."""

    feedback_octal: int = 0o7
    feedforward_octal: int = 0o5
    interleaver_seed: int = 0
    iterations: int = 4

    def __post_init__(self):
        if not 1 <= self.iterations <= 32:
            raise ValueError("iterations must be in 1..32")


def make_interleaver(n: int, seed: int) -> np.ndarray:
    """Seeded uniform random permutation of coded-bit positions."""
    return np.random.default_rng(seed).permutation(n)


class RscCode:
    """Terminated recursive systematic convolutional code, rate 1/2."""

    def __init__(self, feedback_octal: int = 0o7, feedforward_octal: int = 0o5):
        self.fb = feedback_octal
        self.ff = feedforward_octal
        self.memory = max(self.fb.bit_length(), self.ff.bit_length()) - 1
        self.n_states = 1 << self.memory
        # Trellis tables indexed [state, input]: next state, parity bit.
        nxt = np.empty((self.n_states, 2), dtype=np.int64)
        par = np.empty((self.n_states, 2), dtype=np.int64)
        tail_in = np.empty(self.n_states, dtype=np.int64)
        for s in range(self.n_states):
            for u in (0, 1):
                # recursive bit a = feedback taps over [input, state bits]
                a = _parity_word(((u << self.memory) | s) & self.fb)
                out_reg = (a << self.memory) | s
                par[s, u] = _parity_word(out_reg & self.ff)
                nxt[s, u] = out_reg >> 1
            # tail input drives a = 0
            for u in (0, 1):
                if _parity_word(((u << self.memory) | s) & self.fb) == 0:
                    tail_in[s] = u
                    break
        self.next_state = nxt
        self.parity = par
        self.tail_input = tail_in

    def encode(self, info_bits) -> np.ndarray:
        """Systematic/parity interlaced stream of length 2*(n_info + memory)."""
        info_bits = np.asarray(info_bits, dtype=np.int64)
        out = np.empty(2 * (info_bits.size + self.memory), dtype=np.int64)
        s = 0
        pos = 0
        for u in info_bits:
            out[pos] = u
            out[pos + 1] = self.parity[s, u]
            s = self.next_state[s, u]
            pos += 2
        for _ in range(self.memory):
            u = self.tail_input[s]
            out[pos] = u
            out[pos + 1] = self.parity[s, u]
            s = self.next_state[s, u]
            pos += 2
        assert s == 0, "trellis failed to terminate"
        return out

    def n_coded(self, n_info: int) -> int:
        return 2 * (n_info + self.memory)

    def n_info(self, n_coded: int) -> int:
        n, r = divmod(n_coded, 2)
        if r:
            raise ValueError("coded length must be even")
        n -= self.memory
        if n < 1:
            raise ValueError("coded length too short for the terminated trellis")
        return n


def _parity_word(x: int) -> int:
    return bin(x).count("1") & 1


@njit(cache=True)
def _bcjr_core(l_sys, l_par, l_apr, next_state, parity, tail_input, n_info):  # pragma: no cover - jitted
    n_states = next_state.shape[0]
    n_steps = l_sys.shape[0]
    neg_inf = -1e30

    # branch metric gamma[t, s, u]; tail steps allow only the terminating input
    gamma = np.full((n_steps, n_states, 2), neg_inf)
    for t in range(n_steps):
        for s in range(n_states):
            if t < n_info:
                for u in range(2):
                    p = parity[s, u]
                    gamma[t, s, u] = -u * (l_sys[t] + l_apr[t]) - p * l_par[t]
            else:
                u = tail_input[s]
                p = parity[s, u]
                gamma[t, s, u] = -u * l_sys[t] - p * l_par[t]

    alpha = np.full((n_steps + 1, n_states), neg_inf)
    alpha[0, 0] = 0.0
    for t in range(n_steps):
        for s in range(n_states):
            a = alpha[t, s]
            if a <= neg_inf:
                continue
            for u in range(2):
                g = gamma[t, s, u]
                if g <= neg_inf:
                    continue
                ns = next_state[s, u]
                v = a + g
                cur = alpha[t + 1, ns]
                if cur <= neg_inf:
                    alpha[t + 1, ns] = v
                else:
                    hi = cur if cur > v else v
                    alpha[t + 1, ns] = hi + np.log1p(np.exp(-abs(cur - v)))

    beta = np.full((n_steps + 1, n_states), neg_inf)
    beta[n_steps, 0] = 0.0
    for t in range(n_steps - 1, -1, -1):
        for s in range(n_states):
            acc = neg_inf
            for u in range(2):
                g = gamma[t, s, u]
                if g <= neg_inf:
                    continue
                v = g + beta[t + 1, next_state[s, u]]
                if v <= neg_inf:
                    continue
                if acc <= neg_inf:
                    acc = v
                else:
                    hi = acc if acc > v else v
                    acc = hi + np.log1p(np.exp(-abs(acc - v)))
            beta[t, s] = acc

    info_llr = np.empty(n_info)
    sys_llr = np.empty(n_steps)
    par_llr = np.empty(n_steps)
    for t in range(n_steps):
        num_u = np.full(2, neg_inf)
        num_p = np.full(2, neg_inf)
        for s in range(n_states):
            for u in range(2):
                g = gamma[t, s, u]
                if g <= neg_inf:
                    continue
                v = alpha[t, s] + g + beta[t + 1, next_state[s, u]]
                if v <= neg_inf:
                    continue
                p = parity[s, u]
                if num_u[u] <= neg_inf:
                    num_u[u] = v
                else:
                    hi = num_u[u] if num_u[u] > v else v
                    num_u[u] = hi + np.log1p(np.exp(-abs(num_u[u] - v)))
                if num_p[p] <= neg_inf:
                    num_p[p] = v
                else:
                    hi = num_p[p] if num_p[p] > v else v
                    num_p[p] = hi + np.log1p(np.exp(-abs(num_p[p] - v)))
        sys_llr[t] = num_u[0] - num_u[1]
        par_llr[t] = num_p[0] - num_p[1]
        if t < n_info:
            info_llr[t] = sys_llr[t]
    return info_llr, sys_llr, par_llr


def siso_decode(
    coded_llr: np.ndarray,
    code: RscCode,
    info_apriori: np.ndarray | None = None,
) -> tuple[np.ndarray, LlrFrame]:
    """Log-MAP BCJR over the terminated trellis.

    coded_llr carries channel LLRs for the interlaced systematic/parity
    stream.  Returns (info-bit a-posteriori LLRs, LlrFrame over the coded
    bits) where the coded frame's extrinsic feeds the turbo loop.
    """
    coded_llr = np.asarray(coded_llr, dtype=float)
    n_info = code.n_info(coded_llr.size)
    n_steps = n_info + code.memory
    l_sys = coded_llr[0::2].copy()
    l_par = coded_llr[1::2].copy()
    if info_apriori is None:
        l_apr = np.zeros(n_info)
    else:
        l_apr = np.asarray(info_apriori, dtype=float)
        if l_apr.size != n_info:
            raise ValueError("a-priori length does not match info length")

    info_llr, sys_llr, par_llr = _bcjr_core(
        l_sys, l_par, l_apr, code.next_state, code.parity, code.tail_input, n_info
    )
    po = np.empty_like(coded_llr)
    po[0::2] = sys_llr
    po[1::2] = par_llr
    po = _clamp(po)
    frame = LlrFrame(pr=coded_llr, e=po - coded_llr, po=po)
    return _clamp(info_llr), frame


# ---------------------------------------------------------------------------
# Turbo loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TurboResult:
    info_bits: np.ndarray
    info_llr: np.ndarray
    # per-iteration info-bit a-posteriori LLRs
    trace: tuple


def turbo_loop(
    observations,
    ch: BinderChannel,
    cons: Constellation,
    act: ActivationSet,
    codec: CodecConfig,
    scheme: str = "sosd1",
) -> TurboResult:
    """Iterate detector -> deinterleave -> SISO decode -> interleave.

    `observations` is one ToneObservation per tone of the code block; the
    block's coded bits fill the (p+q) positions of every (tone, group) in
    order.  Hard decisions come from the final decoder a-posteriori.
    """
    if scheme not in ("sosd1", "sosd2"):
        raise ValueError(f"unknown soft detection scheme {scheme!r}")
    layout = ch.layout
    p, q = act.p_bits, cons.bits_per_symbol
    bits_per_group = p + q
    n_coded = len(observations) * layout.n_groups * bits_per_group
    code = RscCode(codec.feedback_octal, codec.feedforward_octal)
    n_info = code.n_info(n_coded)
    perm = make_interleaver(n_coded, codec.interleaver_seed)
    inv_perm = np.argsort(perm)

    # SOSD-II's hard line detection and ZF stage do not depend on priors.
    zf_state = []
    if scheme == "sosd2":
        for obs in observations:
            m_hat = line_detect(obs, layout)
            y_t, h_t = truncate(obs, ch, m_hat)
            s_soft, post_var = zf_cancel(y_t, h_t, obs.plan, obs.sigma_w2, obs.tone)
            zf_state.append((m_hat, s_soft, post_var))

    l_e_dec = np.zeros(n_coded)
    trace = []
    info_llr = np.zeros(n_info)
    for _ in range(codec.iterations):
        l_pr_det = l_e_dec[perm]
        l_e_det = np.empty(n_coded)
        pos = 0
        for t, obs in enumerate(observations):
            for n in range(1, layout.n_groups + 1):
                pr = l_pr_det[pos : pos + bits_per_group]
                if scheme == "sosd1":
                    frame = sosd1_llr(obs, ch, n, cons, act, pr)
                else:
                    m_hat, s_soft, post_var = zf_state[t]
                    frame = sosd2_llr(
                        obs, ch, n, m_hat[n - 1], s_soft[n - 1], post_var[n - 1],
                        cons, act, pr,
                    )
                l_e_det[pos : pos + bits_per_group] = _clamp(frame.e)
                pos += bits_per_group
        l_c = l_e_det[inv_perm]
        info_llr, coded_frame = siso_decode(l_c, code)
        l_e_dec = _clamp(coded_frame.e)
        trace.append(info_llr.copy())

    info_bits = (info_llr < 0).astype(np.int64)
    return TurboResult(info_bits=info_bits, info_llr=info_llr, trace=tuple(trace))
