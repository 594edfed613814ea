import math

import numpy as np
import pytest

from smbinder.channel import (
    BinderChannel,
    BinderLayout,
    ChannelParams,
    Provenance,
    ToneGrid,
    synth_binder,
)
from smbinder.detect import (
    CandidateBudgetError,
    SingularChannelError,
    ToneObservation,
    enumerate_candidates,
    line_detect,
    ml_detect,
    truncate,
    zf_cancel,
    zf_vectoring,
)
from smbinder.smmod import (
    ActivationSet,
    PowerPlan,
    assemble_frame,
    build_constellation,
)


def make_channel(h, delta_f=0.05e6, n_groups=2, m_lines=2):
    grid = ToneGrid(k_count=h.shape[0], delta_f_hz=delta_f, f_start_hz=2.025e6)
    layout = BinderLayout(n_groups=n_groups, m_lines=m_lines)
    return BinderChannel(grid=grid, layout=layout, h=h, loop_length_m=100.0,
                         provenance=Provenance(kind="synthetic"))


def oracle_ml(y, hk, amp, n_groups, m_lines, cons, act):
    """Brute-force joint search coded independently of the production path.

    Walks spatial labels then symbol labels per group, builds x by direct
    index arithmetic, tracks the strict first minimum.
    """
    best_cost = math.inf
    best = None
    l = n_groups * m_lines

    def rec(group, lines, syms):
        nonlocal best_cost, best
        if group == n_groups:
            x = np.zeros(l, dtype=complex)
            for g, (m, s) in enumerate(zip(lines, syms)):
                x[g * m_lines + (m - 1)] = s
            cost = float(np.sum(np.abs(y - amp * hk @ x) ** 2))
            if cost < best_cost:
                best_cost = cost
                best = (tuple(lines), tuple(syms))
            return
        for v in range(m_lines):
            m = act.line_for_label(v)
            for s in cons.points:
                rec(group + 1, lines + [m], syms + [complex(s)])

    rec(0, [], [])
    return best, best_cost


def obs_for(y, plan, sigma_w2, tone=1):
    return ToneObservation(y=np.asarray(y, dtype=complex), tone=tone, plan=plan,
                           sigma_w2=sigma_w2)


class TestEnumerateCandidates:
    def test_count_and_order(self):
        act = ActivationSet(2)
        cons = build_constellation("psk", 4)
        cands = enumerate_candidates(2, act, cons)
        assert len(cands) == (4 * 2) ** 2
        # first candidate: both groups spatial label 0 (last line), first symbol
        assert cands[0] == (((2, complex(cons.points[0])),) * 2)

    def test_distinct(self):
        act = ActivationSet(2)
        cons = build_constellation("qam", 4)
        cands = enumerate_candidates(2, act, cons)
        assert len(set(cands)) == len(cands)


class TestMlDetect:
    def setup_method(self):
        self.act = ActivationSet(2)
        self.cons = build_constellation("psk", 4)
        self.plan = PowerPlan(1.0, "sm", 1, 2)

    def test_noiseless_identity_exact(self):
        h = np.stack([np.eye(4, dtype=np.complex128)])
        ch = make_channel(h)
        for bits in [(0, 0, 0, 1, 1, 0), (1, 1, 1, 0, 0, 0)]:
            from smbinder.smmod import map_group_bits

            groups = [map_group_bits(bits[i:i + 3], self.act, self.cons)
                      for i in (0, 3)]
            frame = assemble_frame(groups, 2, 2)
            obs = obs_for(frame.x, self.plan, 1e-9)
            dec = ml_detect(obs, ch, self.cons, self.act)
            assert dec.active_lines == frame.active_lines
            assert dec.symbols == pytest.approx(frame.symbols)
            assert dec.metric == pytest.approx(0.0, abs=1e-20)

    def test_matches_oracle_under_noise(self):
        grid = ToneGrid(k_count=1, delta_f_hz=0.05e6, f_start_hz=2.025e6)
        layout = BinderLayout(n_groups=2, m_lines=2)
        ch = synth_binder(grid, layout, 100.0, ChannelParams(), seed=13)
        rng = np.random.default_rng(99)
        amp = 1.0
        for snr_db in (0.0, 20.0):
            sigma = 10.0 ** (-snr_db / 20.0)
            for _ in range(200):
                y = rng.standard_normal(4) + 1j * rng.standard_normal(4)
                y = y * sigma + amp * ch.matrix(1) @ assemble_frame(
                    [(1, 1.0), (2, 1j)], 2, 2).x
                obs = obs_for(y, self.plan, max(sigma**2, 1e-12))
                dec = ml_detect(obs, ch, self.cons, self.act)
                (lines, syms), cost = oracle_ml(
                    obs.y, ch.matrix(1), amp, 2, 2, self.cons, self.act)
                assert dec.active_lines == lines
                assert dec.symbols == pytest.approx(syms)
                assert dec.metric == pytest.approx(cost)

    def test_candidate_budget_guard(self):
        h = np.stack([np.eye(16, dtype=np.complex128)])
        ch = make_channel(h, n_groups=8, m_lines=2)
        cons = build_constellation("qam", 64)
        obs = obs_for(np.zeros(16), PowerPlan(1.0, "sm", 1, 2), 1.0)
        with pytest.raises(CandidateBudgetError):
            ml_detect(obs, ch, cons, ActivationSet(2))


class TestLineDetect:
    def test_single_nonzero_magnitude(self):
        layout = BinderLayout(n_groups=2, m_lines=2)
        y = np.array([0.0, 1.0, 0.3, 0.0], dtype=complex)
        obs = obs_for(y, PowerPlan(1.0, "sm", 1, 2), 1.0)
        assert line_detect(obs, layout) == (2, 1)

    def test_tie_breaks_to_lower_index(self):
        layout = BinderLayout(n_groups=1, m_lines=4)
        y = np.array([0.5, 0.5, 0.5, 0.5], dtype=complex)
        obs = obs_for(y, PowerPlan(1.0, "sm", 1, 4), 1.0)
        assert line_detect(obs, layout) == (1,)

    def test_noiseless_strict_cwdd_exact(self):
        grid = ToneGrid(k_count=1, delta_f_hz=0.05e6, f_start_hz=2.025e6)
        layout = BinderLayout(n_groups=2, m_lines=2)
        ch = synth_binder(grid, layout, 150.0, ChannelParams(), seed=4)
        plan = PowerPlan(1.0, "sm", 1, 2)
        rng = np.random.default_rng(8)
        cons = build_constellation("psk", 4)
        for _ in range(500):
            lines = tuple(int(v) for v in rng.integers(1, 3, size=2))
            syms = cons.points[rng.integers(0, 4, size=2)]
            frame = assemble_frame(list(zip(lines, syms)), 2, 2)
            obs = obs_for(ch.matrix(1) @ frame.x, plan, 1e-12)
            assert line_detect(obs, layout) == lines


class TestTruncate:
    def _channel(self):
        rng = np.random.default_rng(3)
        h = rng.standard_normal((1, 4, 4)) + 1j * rng.standard_normal((1, 4, 4))
        return make_channel(h)

    def test_selected_rows(self):
        ch = self._channel()
        y = np.arange(4, dtype=complex)
        obs = obs_for(y, PowerPlan(1.0, "sm", 1, 2), 1.0)
        y_t, h_t = truncate(obs, ch, (1, 2))
        # groups pick lines 1 and 2 -> stacked indices 1 and 4 (1-based)
        assert np.array_equal(y_t, y[[0, 3]])
        assert np.array_equal(h_t, ch.matrix(1)[np.ix_([0, 3], [0, 3])])

    def test_block_heads(self):
        ch = self._channel()
        obs = obs_for(np.zeros(4), PowerPlan(1.0, "sm", 1, 2), 1.0)
        _, h_t = truncate(obs, ch, (1, 1))
        assert np.array_equal(h_t, ch.matrix(1)[np.ix_([0, 2], [0, 2])])

    def test_matches_naive_lookup(self):
        ch = self._channel()
        rng = np.random.default_rng(1)
        hk = ch.matrix(1)
        obs = obs_for(np.zeros(4), PowerPlan(1.0, "sm", 1, 2), 1.0)
        for _ in range(20):
            m_hat = tuple(int(v) for v in rng.integers(1, 3, size=2))
            _, h_t = truncate(obs, ch, m_hat)
            idx = [g * 2 + (m - 1) for g, m in enumerate(m_hat)]
            for i in range(2):
                for j in range(2):
                    assert h_t[i, j] == hk[idx[i], idx[j]]


class TestZfCancel:
    def test_noiseless_exact(self):
        rng = np.random.default_rng(5)
        h_t = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        plan = PowerPlan(4.0, "sm", 1, 2)
        s = np.array([1.0, -1.0, 1j])
        y = np.sqrt(plan.per_line_tone_power) * h_t @ s
        s_soft, _ = zf_cancel(y, h_t, plan, 1e-9)
        assert s_soft == pytest.approx(s)

    def test_scaled_identity_noise_variance(self):
        c = 0.5 + 0.2j
        h_t = c * np.eye(3, dtype=complex)
        plan = PowerPlan(2.0, "sm", 1, 2)
        sigma_w2 = 0.01
        _, post_var = zf_cancel(np.zeros(3, dtype=complex), h_t, plan, sigma_w2)
        want = sigma_w2 / (plan.per_line_tone_power * abs(c) ** 2)
        assert post_var == pytest.approx([want] * 3)

    def test_variance_matches_monte_carlo(self):
        rng = np.random.default_rng(12)
        h_t = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        plan = PowerPlan(1.0, "sm", 1, 2)
        sigma_w2 = 0.04
        _, post_var = zf_cancel(np.zeros(2, dtype=complex), h_t, plan, sigma_w2)
        n = 10**5
        w = (rng.standard_normal((n, 2)) + 1j * rng.standard_normal((n, 2))) * math.sqrt(sigma_w2 / 2)
        passed = w @ np.linalg.inv(h_t).T / math.sqrt(plan.per_line_tone_power)
        sample = np.mean(np.abs(passed) ** 2, axis=0)
        assert post_var == pytest.approx(sample, rel=0.02)

    def test_singular_guard(self):
        h_t = np.array([[1.0, 1.0], [1.0, 1.0]], dtype=complex)
        plan = PowerPlan(1.0, "sm", 1, 2)
        with pytest.raises(SingularChannelError):
            zf_cancel(np.zeros(2, dtype=complex), h_t, plan, 1.0)


class TestZfVectoring:
    def test_noiseless_exact_recovery(self):
        grid = ToneGrid(k_count=1, delta_f_hz=0.05e6, f_start_hz=2.025e6)
        layout = BinderLayout(n_groups=2, m_lines=2)
        ch = synth_binder(grid, layout, 100.0, ChannelParams(), seed=6)
        cons = build_constellation("psk", 4)
        plan = PowerPlan(1.0, "vectoring", 1, 2)
        rng = np.random.default_rng(2)
        for _ in range(100):
            x = cons.points[rng.integers(0, 4, size=4)]
            y = math.sqrt(plan.per_line_tone_power) * ch.matrix(1) @ x
            obs = obs_for(y, plan, 1e-12)
            got = zf_vectoring(obs, ch, plan, cons)
            assert got == pytest.approx(tuple(x))

    def test_identity_awgn_error_rate(self):
        # QPSK over an identity channel at 30 dB per-tone SNR; the AWGN
        # oracle rate 2Q(sqrt(SNR)) is astronomically below 1e-3
        h = np.stack([np.eye(4, dtype=np.complex128)])
        ch = make_channel(h)
        cons = build_constellation("psk", 4)
        plan = PowerPlan(4.0, "vectoring", 1, 2)
        p_tone = plan.per_line_tone_power
        sigma_w2 = p_tone / 1000.0
        rng = np.random.default_rng(44)
        n_trials = 2000  # 8000 symbol decisions
        errors = 0
        for _ in range(n_trials):
            x = cons.points[rng.integers(0, 4, size=4)]
            w = (rng.standard_normal(4) + 1j * rng.standard_normal(4)) * math.sqrt(sigma_w2 / 2)
            obs = obs_for(math.sqrt(p_tone) * x + w, plan, sigma_w2)
            got = zf_vectoring(obs, ch, plan, cons)
            errors += sum(abs(g - s) > 1e-9 for g, s in zip(got, x))
        assert errors / (4 * n_trials) < 1e-3

    def test_agrees_with_nearest_point_oracle(self):
        grid = ToneGrid(k_count=1, delta_f_hz=0.05e6, f_start_hz=2.025e6)
        layout = BinderLayout(n_groups=2, m_lines=2)
        ch = synth_binder(grid, layout, 100.0, ChannelParams(), seed=14)
        cons = build_constellation("qam", 4)
        plan = PowerPlan(1.0, "vectoring", 1, 2)
        rng = np.random.default_rng(7)
        hinv = np.linalg.inv(ch.matrix(1))
        for _ in range(200):
            y = rng.standard_normal(4) + 1j * rng.standard_normal(4)
            obs = obs_for(y, plan, 1.0)
            got = zf_vectoring(obs, ch, plan, cons)
            x_hat = hinv @ y / math.sqrt(plan.per_line_tone_power)
            for g, xh in zip(got, x_hat):
                dists = [abs(xh - p) for p in cons.points]
                assert g == pytest.approx(complex(cons.points[int(np.argmin(dists))]))
