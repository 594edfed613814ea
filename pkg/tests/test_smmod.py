import itertools

import numpy as np
import pytest

from smbinder.smmod import (
    ActivationSet,
    PowerPlan,
    assemble_frame,
    bits_to_int,
    build_constellation,
    demap_frame,
    demap_group,
    int_to_bits,
    map_group_bits,
)


def oracle_position(group, line, m_lines):
    """Independent stacked-vector index for (group, line), both 1-based."""
    return (group - 1) * m_lines + (line - 1)


class TestBitHelpers:
    def test_roundtrip(self):
        for width in (1, 2, 3, 5, 8):
            for v in range(1 << width):
                assert bits_to_int(int_to_bits(v, width)) == v

    def test_big_endian(self):
        assert int_to_bits(0b110, 3) == (1, 1, 0)
        assert bits_to_int((1, 0, 1)) == 5


class TestConstellation:
    def test_qpsk_labeling(self):
        cons = build_constellation("psk", 4)
        want = {(0, 0): 1, (0, 1): 1j, (1, 1): -1, (1, 0): -1j}
        for bits, point in want.items():
            assert cons.point_for_bits(bits) == pytest.approx(point)
            assert cons.bits_for_point(point) == bits

    def test_bpsk(self):
        cons = build_constellation("psk", 2)
        assert cons.point_for_bits((0,)) == pytest.approx(1.0)
        assert cons.point_for_bits((1,)) == pytest.approx(-1.0)
        assert np.mean(np.abs(cons.points) ** 2) == pytest.approx(1.0)

    def test_16qam_all_zero_label(self):
        cons = build_constellation("qam", 16)
        want = (-3 + 3j) / np.sqrt(10.0)
        assert cons.point_for_bits((0, 0, 0, 0)) == pytest.approx(want)

    @pytest.mark.parametrize("kind,order", [
        ("psk", 2), ("psk", 4), ("psk", 8),
        ("qam", 4), ("qam", 8), ("qam", 16), ("qam", 32), ("qam", 64),
    ])
    def test_unit_energy_and_bijective_labels(self, kind, order):
        cons = build_constellation(kind, order)
        assert len(cons.points) == order
        assert np.mean(np.abs(cons.points) ** 2) == pytest.approx(1.0)
        assert len(set(cons.labels)) == order
        assert all(len(lab) == cons.bits_per_symbol for lab in cons.labels)
        # distinct points, label roundtrip through nearest-point demapping
        assert len({complex(p) for p in cons.points}) == order
        for lab in cons.labels:
            assert cons.bits_for_point(cons.point_for_bits(lab)) == lab

    @pytest.mark.parametrize("kind,order", [("psk", 4), ("qam", 16), ("qam", 64)])
    def test_gray_axis_neighbors(self, kind, order):
        # Gray labelings differ by one bit between nearest neighbors
        cons = build_constellation(kind, order)
        pts = cons.points
        for j in range(order):
            d = np.abs(pts - pts[j])
            d[j] = np.inf
            nearest = int(np.argmin(d))
            flips = sum(a != b for a, b in zip(cons.labels[j], cons.labels[nearest]))
            assert flips == 1

    def test_32_cross_shape(self):
        cons = build_constellation("qam", 32)
        raw = cons.points * cons.scale
        assert not any(abs(p.real) == 5 and abs(p.imag) == 5 for p in raw)

    def test_rejects_unknown(self):
        with pytest.raises(ValueError):
            build_constellation("qam", 12)
        with pytest.raises(ValueError):
            build_constellation("apsk", 16)


class TestActivationSet:
    def test_label_to_line_convention(self):
        act = ActivationSet(4)
        # all-zero spatial label activates the last line of the group
        assert act.line_for_label(0) == 4
        assert np.array_equal(act.pattern(act.line_for_label(0)), [0, 0, 0, 1])
        assert act.line_for_label(3) == 1

    def test_label_line_roundtrip(self):
        for m in (1, 2, 4, 8):
            act = ActivationSet(m)
            for v in range(m):
                assert act.label_for_line(act.line_for_label(v)) == v

    def test_patterns_are_standard_basis(self):
        act = ActivationSet(4)
        pats = act.patterns
        assert pats.shape == (4, 4)
        assert np.array_equal(np.sort(np.argmax(pats, axis=1)), np.arange(4))
        assert np.all(pats.sum(axis=1) == 1.0)

    def test_bounds(self):
        act = ActivationSet(2)
        with pytest.raises(ValueError):
            act.line_for_label(2)
        with pytest.raises(ValueError):
            act.label_for_line(0)


class TestMapGroupBits:
    def test_spatial_one_selects_line_one(self):
        act = ActivationSet(2)
        cons = build_constellation("psk", 4)
        m, s = map_group_bits((1, 0, 1), act, cons)
        assert m == 1
        assert s == pytest.approx(1j)

    def test_degenerate_spatial_dimension(self):
        act = ActivationSet(1)
        cons = build_constellation("psk", 4)
        m, s = map_group_bits((0, 0), act, cons)
        assert m == 1
        assert s == pytest.approx(1.0)

    def test_bits_per_group(self):
        act = ActivationSet(2)
        cons = build_constellation("qam", 8)
        assert act.p_bits + cons.bits_per_symbol == 4

    def test_wrong_length(self):
        act = ActivationSet(2)
        cons = build_constellation("psk", 4)
        with pytest.raises(ValueError):
            map_group_bits((0, 0), act, cons)

    def test_demap_inverts(self):
        act = ActivationSet(4)
        cons = build_constellation("qam", 16)
        for bits in itertools.product((0, 1), repeat=6):
            m, s = map_group_bits(bits, act, cons)
            assert demap_group(m, s, act, cons) == bits


class TestAssembleFrame:
    def test_direct_placement(self):
        frame = assemble_frame([(1, 1.0), (2, -1.0)], 2, 2)
        assert np.array_equal(frame.x, [1, 0, 0, -1])
        assert frame.active_lines == (1, 2)

    def test_all_block_heads(self):
        n = 4
        frame = assemble_frame([(1, 1.0)] * n, n, 2)
        assert np.array_equal(frame.x, [1, 0] * n)

    def test_positions_match_index_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            n, m = 3, 2
            lines = rng.integers(1, m + 1, size=n)
            syms = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            frame = assemble_frame(list(zip(lines, syms)), n, m)
            nz = np.flatnonzero(frame.x)
            assert len(nz) == n
            for g in range(1, n + 1):
                assert frame.x[oracle_position(g, lines[g - 1], m)] == syms[g - 1]

    def test_rejects_bad_line(self):
        with pytest.raises(ValueError):
            assemble_frame([(3, 1.0), (1, 1.0)], 2, 2)
        with pytest.raises(ValueError):
            assemble_frame([(1, 1.0)], 2, 2)


class TestDemapFrame:
    def test_fuzz_roundtrip(self):
        rng = np.random.default_rng(17)
        grids = [(1, 2, "psk", 4), (2, 2, "qam", 8), (3, 4, "qam", 16), (2, 1, "psk", 2)]
        for n, m, kind, order in grids:
            act = ActivationSet(m)
            cons = build_constellation(kind, order)
            width = n * (act.p_bits + cons.bits_per_symbol)
            for _ in range(200):
                bits = tuple(int(b) for b in rng.integers(0, 2, size=width))
                per = act.p_bits + cons.bits_per_symbol
                groups = [map_group_bits(bits[i * per:(i + 1) * per], act, cons)
                          for i in range(n)]
                frame = assemble_frame(groups, n, m)
                back = demap_frame(zip(frame.active_lines, frame.symbols), act, cons)
                assert back == bits


class TestPowerPlan:
    def test_sm_concentrates_budget(self):
        plan = PowerPlan(0.01, "sm", 2048, 4)
        assert plan.per_line_power == pytest.approx(0.01)
        assert plan.per_line_tone_power == pytest.approx(0.01 / 2048)

    def test_vectoring_splits_budget(self):
        plan = PowerPlan(0.01, "vectoring", 2048, 4)
        assert plan.per_line_power == pytest.approx(0.0025)
        assert plan.per_line_tone_power == pytest.approx(0.0025 / 2048)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            PowerPlan(0.01, "tdma", 2048, 2)
        with pytest.raises(ValueError):
            PowerPlan(-1.0, "sm", 2048, 2)
        with pytest.raises(ValueError):
            PowerPlan(0.01, "sm", 0, 2)
