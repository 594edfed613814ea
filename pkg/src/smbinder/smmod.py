"""Grouped spatial-modulation bit mapping and power allocation.

Each group carries p = log2(M) spatial bits selecting the active line and
q = log2(J) symbol bits selecting a constellation point.  The spatial bit
label v (big-endian integer) activates line m = M - v, so the all-zero
label activates the last line of the group (pattern [0 ... 0 1]^T).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Constellation",
    "ActivationSet",
    "SmFrame",
    "PowerPlan",
    "build_constellation",
    "map_group_bits",
    "assemble_frame",
    "demap_frame",
    "bits_to_int",
    "int_to_bits",
]


def bits_to_int(bits) -> int:
    """Big-endian bit tuple/array -> integer."""
    v = 0
    for b in bits:
        v = (v << 1) | int(b)
    return v


def int_to_bits(value: int, width: int) -> tuple[int, ...]:
    return tuple((value >> (width - 1 - i)) & 1 for i in range(width))


@dataclass(frozen=True)
class Constellation:
    """Unit-average-energy alphabet with a bijective bit labeling."""

    kind: str
    order: int
    points: np.ndarray  # (J,) complex128
    labels: tuple  # labels[j] is the bit tuple of points[j]
    scale: float  # divisor applied to the raw (integer-grid) points

    def __post_init__(self):
        self.points.setflags(write=False)

    @property
    def bits_per_symbol(self) -> int:
        return self.order.bit_length() - 1

    def point_for_bits(self, bits) -> complex:
        return complex(self.points[self._label_index[tuple(int(b) for b in bits)]])

    def bits_for_point(self, point: complex) -> tuple[int, ...]:
        """Label of the nearest constellation point."""
        j = int(np.argmin(np.abs(self.points - point)))
        return self.labels[j]

    @property
    def _label_index(self):
        # cached lazily; frozen dataclass so stash on the type-checked dict
        idx = self.__dict__.get("_label_index_cache")
        if idx is None:
            idx = {lab: j for j, lab in enumerate(self.labels)}
            self.__dict__["_label_index_cache"] = idx
        return idx


def _gray(n: int) -> int:
    return n ^ (n >> 1)


def _gray_axis(n_levels: int, descending: bool = False):
    """Gray labels for n_levels PAM levels; returns {label_int: level}."""
    levels = np.arange(-(n_levels - 1), n_levels, 2, dtype=float)
    if descending:
        levels = levels[::-1]
    return {_gray(i): levels[i] for i in range(n_levels)}


def _cross_32_points():
    # 6x6 grid minus the four corners.
    pts = []
    for i in (-5, -3, -1, 1, 3, 5):
        for q in (5, 3, 1, -1, -3, -5):
            if abs(i) == 5 and abs(q) == 5:
                continue
            pts.append(complex(i, q))
    return pts


def build_constellation(kind: str, order: int) -> Constellation:
    """PSK or QAM alphabet, Gray labeled, normalized to unit average energy.

    QPSK (psk, 4) reproduces the labeling {1->00, i->01, -1->11, -i->10};
    16-QAM maps the all-zero label to the normalized image of (-3+3j).
    """
    if order not in (2, 4, 8, 16, 32, 64):
        raise ValueError(f"unsupported constellation order {order}")
    q = order.bit_length() - 1

    if kind == "psk":
        raw = [np.exp(2j * np.pi * t / order) for t in range(order)]
        labels = [int_to_bits(_gray(t), q) for t in range(order)]
    elif kind == "qam":
        if order == 4:
            i_map = _gray_axis(2)
            q_map = _gray_axis(2, descending=True)
            raw, labels = [], []
            for bi in range(2):
                for bq in range(2):
                    raw.append(complex(i_map[bi], q_map[bq]))
                    labels.append((bi, bq))
        elif order == 8:
            # Rectangular 4x2 cross: 2 Gray bits on I, 1 on Q.
            i_map = _gray_axis(4)
            q_map = _gray_axis(2, descending=True)
            raw, labels = [], []
            for vi in range(4):
                for bq in range(2):
                    raw.append(complex(i_map[vi], q_map[bq]))
                    labels.append(int_to_bits(vi, 2) + (bq,))
        elif order == 32:
            pts = _cross_32_points()
            raw = pts
            labels = [int_to_bits(j, 5) for j in range(32)]
        else:  # 16, 64: square with per-axis Gray labels
            side = 4 if order == 16 else 8
            half = q // 2
            i_map = _gray_axis(side)
            q_map = _gray_axis(side, descending=True)
            raw, labels = [], []
            for vi in range(side):
                for vq in range(side):
                    raw.append(complex(i_map[vi], q_map[vq]))
                    labels.append(int_to_bits(vi, half) + int_to_bits(vq, half))
    else:
        raise ValueError(f"unknown constellation kind {kind!r}")

    raw = np.asarray(raw, dtype=np.complex128)
    scale = float(np.sqrt(np.mean(np.abs(raw) ** 2)))
    return Constellation(
        kind=kind, order=order, points=raw / scale, labels=tuple(labels), scale=scale
    )


@dataclass(frozen=True)
class ActivationSet:
    """The M standard-basis activation patterns of a group."""

    m_lines: int

    @property
    def p_bits(self) -> int:
        return self.m_lines.bit_length() - 1

    def line_for_label(self, label: int) -> int:
        """Spatial label v -> active line m = M - v (1-based)."""
        if not 0 <= label < self.m_lines:
            raise ValueError(f"label {label} outside 0..{self.m_lines - 1}")
        return self.m_lines - label

    def label_for_line(self, line: int) -> int:
        if not 1 <= line <= self.m_lines:
            raise ValueError(f"line {line} outside 1..{self.m_lines}")
        return self.m_lines - line

    def pattern(self, line: int) -> np.ndarray:
        u = np.zeros(self.m_lines)
        u[line - 1] = 1.0
        return u

    @property
    def patterns(self) -> np.ndarray:
        """Patterns indexed by spatial label."""
        return np.stack([self.pattern(self.line_for_label(v)) for v in range(self.m_lines)])


def map_group_bits(bits, act: ActivationSet, cons: Constellation) -> tuple[int, complex]:
    """(p+q) bits -> (active line m, constellation point s)."""
    p, q = act.p_bits, cons.bits_per_symbol
    bits = tuple(int(b) for b in bits)
    if len(bits) != p + q:
        raise ValueError(f"expected {p + q} bits, got {len(bits)}")
    m = act.line_for_label(bits_to_int(bits[:p]))
    s = cons.point_for_bits(bits[p:])
    return m, s


def demap_group(m: int, s: complex, act: ActivationSet, cons: Constellation) -> tuple[int, ...]:
    """Inverse of map_group_bits (nearest-point on the symbol)."""
    p = act.p_bits
    return int_to_bits(act.label_for_line(m), p) + cons.bits_for_point(s)


@dataclass(frozen=True)
class SmFrame:
    """One tone's grouped-SM transmission: per-group decisions plus the stacked x."""

    n_groups: int
    m_lines: int
    active_lines: tuple  # m_n per group, 1-based
    symbols: tuple  # s_n per group
    x: np.ndarray  # (L,) complex128

    def __post_init__(self):
        self.x.setflags(write=False)


def assemble_frame(groups, n_groups: int, m_lines: int) -> SmFrame:
    """Stack per-group (m_n, s_n) into the length-L transmit vector."""
    groups = list(groups)
    if len(groups) != n_groups:
        raise ValueError(f"expected {n_groups} groups, got {len(groups)}")
    x = np.zeros(n_groups * m_lines, dtype=np.complex128)
    lines, syms = [], []
    for n, (m, s) in enumerate(groups, start=1):
        if not 1 <= m <= m_lines:
            raise ValueError(f"group {n}: line {m} outside 1..{m_lines}")
        x[(n - 1) * m_lines + (m - 1)] = s
        lines.append(int(m))
        syms.append(complex(s))
    return SmFrame(
        n_groups=n_groups,
        m_lines=m_lines,
        active_lines=tuple(lines),
        symbols=tuple(syms),
        x=x,
    )


def demap_frame(decisions, act: ActivationSet, cons: Constellation) -> tuple[int, ...]:
    """Per-group (m_hat, s_hat) decisions -> recovered bit vector."""
    out = []
    for m, s in decisions:
        out.extend(demap_group(m, s, act, cons))
    return tuple(out)


@dataclass(frozen=True)
class PowerPlan:
    """Per-group power budget P_t^total and its per-line, per-tone split.

    SM puts the whole budget on the one active line; vectoring splits it
    evenly over the M always-active lines.  Either way each line's power is
    spread uniformly over the K tones.
    """

    p_total_per_group: float
    scheme: str  # "sm" | "vectoring"
    k_count: int
    m_lines: int

    def __post_init__(self):
        if self.scheme not in ("sm", "vectoring"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.p_total_per_group < 0:
            raise ValueError("p_total_per_group must be >= 0")
        if self.k_count < 1:
            raise ValueError("k_count must be >= 1")

    @property
    def per_line_power(self) -> float:
        if self.scheme == "sm":
            return self.p_total_per_group
        return self.p_total_per_group / self.m_lines

    @property
    def per_line_tone_power(self) -> float:
        return self.per_line_power / self.k_count
