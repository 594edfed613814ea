"""Synthetic crosstalk-coupled binder channels and CWDD diagnostics.

The binder holds N groups of M twisted pairs (L = N*M lines in total).
Each tone k carries an L x L complex frequency response H_k whose entry
[alpha, beta] couples transmit line beta into receive line alpha.  The
generator produces channels with column-wise diagonal dominance (CWDD):
the direct path dominates every crosstalk entry of its column.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ToneGrid",
    "BinderLayout",
    "ChannelParams",
    "Provenance",
    "BinderChannel",
    "CwddReport",
    "ChannelError",
    "ChannelFileError",
    "MalformedHeaderError",
    "DimensionMismatchError",
    "NonFiniteEntryError",
    "ChecksumError",
    "CwddEnforcementError",
    "synth_binder",
    "save_channel",
    "load_channel",
    "cwdd_margin",
    "validate_cwdd",
]

CHANNEL_MAGIC = b"XSMCH1\0"


class ChannelError(Exception):
    """Base error for channel construction problems."""


class CwddEnforcementError(ChannelError):
    """Raised when resampling cannot restore diagonal dominance."""


class ChannelFileError(ChannelError):
    """Base error for channel-file parsing problems."""


class MalformedHeaderError(ChannelFileError):
    pass


class DimensionMismatchError(ChannelFileError):
    pass


class NonFiniteEntryError(ChannelFileError):
    pass


class ChecksumError(ChannelFileError):
    pass


@dataclass(frozen=True)
class ToneGrid:
    """Uniform DMT tone grid; tone k (1-based) sits at f_start + (k-1)*delta_f."""

    k_count: int
    delta_f_hz: float
    f_start_hz: float

    def __post_init__(self):
        if self.k_count < 1:
            raise ValueError("k_count must be >= 1")
        if self.delta_f_hz <= 0:
            raise ValueError("delta_f_hz must be positive")

    def center_freq_hz(self, tone: int) -> float:
        if not 1 <= tone <= self.k_count:
            raise IndexError(f"tone {tone} outside 1..{self.k_count}")
        return self.f_start_hz + (tone - 1) * self.delta_f_hz

    def freqs_hz(self) -> np.ndarray:
        return self.f_start_hz + self.delta_f_hz * np.arange(self.k_count)


@dataclass(frozen=True)
class BinderLayout:
    """N groups of M lines each; M must be a power of two."""

    n_groups: int
    m_lines: int

    def __post_init__(self):
        if self.n_groups < 1:
            raise ValueError("n_groups must be >= 1")
        if self.m_lines < 1 or self.m_lines & (self.m_lines - 1):
            raise ValueError("m_lines must be a power of two")

    @property
    def l_total(self) -> int:
        return self.n_groups * self.m_lines

    def line_index(self, group: int, line: int) -> int:
        """1-based binder line index alpha for (group g, line m)."""
        if not 1 <= group <= self.n_groups:
            raise IndexError(f"group {group} outside 1..{self.n_groups}")
        if not 1 <= line <= self.m_lines:
            raise IndexError(f"line {line} outside 1..{self.m_lines}")
        return (group - 1) * self.m_lines + line

    def group_line(self, alpha: int) -> tuple[int, int]:
        """Inverse map: binder index alpha -> (group, line), all 1-based."""
        if not 1 <= alpha <= self.l_total:
            raise IndexError(f"alpha {alpha} outside 1..{self.l_total}")
        return (alpha - 1) // self.m_lines + 1, (alpha - 1) % self.m_lines + 1


@dataclass(frozen=True)
class ChannelParams:
    """Parametric binder model.

    Direct path: |H| = 10^(-A/20) with A_dB = (k1*sqrt(f_MHz) + k2*f_MHz)*(d/100 m)
    and linear phase exp(-j*2*pi*f*d/v).  Crosstalk magnitude relative to the
    co-row direct path: X_dB = x0 + 20*log10(f/f0) + 10*log10(d/d0) + G with
    G ~ Normal(0, shadow_sigma_db) per entry and uniform random phase.
    """

    k1: float = 2.1
    k2: float = 0.05
    velocity_mps: float = 2.0e8
    x0_db: float = -45.0
    f0_hz: float = 26.975e6
    d0_m: float = 200.0
    shadow_sigma_db: float = 3.0
    strict_cwdd: bool = True
    # None means the whole band is covered by the CWDD guarantee.
    cwdd_guarantee_hz: float | None = None
    max_retries: int = 100

    def direct_magnitude(self, f_hz, loop_length_m):
        f_mhz = np.asarray(f_hz, dtype=float) / 1e6
        a_db = (self.k1 * np.sqrt(f_mhz) + self.k2 * f_mhz) * (loop_length_m / 100.0)
        return 10.0 ** (-a_db / 20.0)

    def fext_rel_db(self, f_hz, loop_length_m):
        """Mean crosstalk magnitude in dB relative to the direct path."""
        f_hz = np.asarray(f_hz, dtype=float)
        return (
            self.x0_db
            + 20.0 * np.log10(f_hz / self.f0_hz)
            + 10.0 * np.log10(loop_length_m / self.d0_m)
        )


@dataclass(frozen=True)
class Provenance:
    kind: str  # "synthetic" | "loaded"
    seed: int | None = None
    params: ChannelParams | None = None
    path: str | None = None
    checksum: int | None = None


@dataclass(frozen=True)
class BinderChannel:
    """Per-tone L x L frequency response plus binder metadata (immutable)."""

    grid: ToneGrid
    layout: BinderLayout
    h: np.ndarray  # (K, L, L) complex128, read-only
    loop_length_m: float
    provenance: Provenance

    def __post_init__(self):
        k, l = self.grid.k_count, self.layout.l_total
        if self.h.shape != (k, l, l):
            raise DimensionMismatchError(
                f"channel array {self.h.shape} does not match (K={k}, L={l})"
            )
        if not np.all(np.isfinite(self.h)):
            raise NonFiniteEntryError("channel contains non-finite entries")
        self.h.setflags(write=False)

    def matrix(self, tone: int) -> np.ndarray:
        """H_k for 1-based tone index."""
        if not 1 <= tone <= self.grid.k_count:
            raise IndexError(f"tone {tone} outside 1..{self.grid.k_count}")
        return self.h[tone - 1]

    def group_block(self, tone: int, rx_group: int, tx_group: int) -> np.ndarray:
        """M x M sub-block coupling tx_group into rx_group on one tone."""
        m = self.layout.m_lines
        r = (rx_group - 1) * m
        c = (tx_group - 1) * m
        return self.matrix(tone)[r : r + m, c : c + m]


def _draw_fext_column(rng, n_rows, rel_db_mean, sigma_db):
    g = rng.normal(0.0, sigma_db, size=n_rows)
    mag = 10.0 ** ((rel_db_mean + g) / 20.0)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=n_rows)
    return mag * np.exp(1j * phase)


def synth_binder(
    grid: ToneGrid,
    layout: BinderLayout,
    loop_length_m: float,
    params: ChannelParams = ChannelParams(),
    seed: int = 0,
) -> BinderChannel:
    """Generate a synthetic FEXT-coupled binder channel.

    Deterministic for a fixed (grid, layout, loop_length, params, seed).  With
    strict_cwdd, any column whose drawn crosstalk reaches the diagonal
    magnitude is resampled (up to params.max_retries) for every tone whose
    center frequency is at or below the guarantee frequency.
    """
    if loop_length_m <= 0:
        raise ValueError("loop_length_m must be positive")
    l = layout.l_total
    if l == 0:
        raise ValueError("layout has no lines")

    rng = np.random.default_rng(seed)
    freqs = grid.freqs_hz()
    direct = params.direct_magnitude(freqs, loop_length_m) * np.exp(
        -2j * np.pi * freqs * loop_length_m / params.velocity_mps
    )
    rel_db = params.fext_rel_db(freqs, loop_length_m)
    guarantee = params.cwdd_guarantee_hz
    if guarantee is None:
        guarantee = math.inf

    h = np.empty((grid.k_count, l, l), dtype=np.complex128)
    off_mask = ~np.eye(l, dtype=bool)
    for k in range(grid.k_count):
        hk = np.empty((l, l), dtype=np.complex128)
        d_mag = abs(direct[k])
        for beta in range(l):
            col = _draw_fext_column(rng, l - 1, rel_db[k], params.shadow_sigma_db)
            if params.strict_cwdd and freqs[k] <= guarantee:
                retries = 0
                while np.any(np.abs(col) >= 1.0):
                    retries += 1
                    if retries > params.max_retries:
                        raise CwddEnforcementError(
                            f"tone {k + 1} column {beta + 1}: CWDD not attainable "
                            f"after {params.max_retries} resamples"
                        )
                    col = _draw_fext_column(
                        rng, l - 1, rel_db[k], params.shadow_sigma_db
                    )
            rows = np.flatnonzero(off_mask[:, beta])
            hk[rows, beta] = col * d_mag
            hk[beta, beta] = direct[k]
        h[k] = hk

    prov = Provenance(kind="synthetic", seed=seed, params=params)
    return BinderChannel(grid=grid, layout=layout, h=h, loop_length_m=loop_length_m, provenance=prov)


def cwdd_margin(ch: BinderChannel, tone: int) -> list[float]:
    """Per-column dominance margin in dB; math.inf when a column has no crosstalk.

    Positive margin on column beta means |H[beta,beta]| exceeds every
    off-diagonal magnitude in that column.
    """
    hk = ch.matrix(tone)
    l = hk.shape[0]
    margins = []
    for beta in range(l):
        col = np.abs(hk[:, beta])
        diag = col[beta]
        off = np.delete(col, beta)
        worst = off.max() if off.size else 0.0
        if worst == 0.0:
            margins.append(math.inf)
        else:
            margins.append(20.0 * math.log10(diag / worst))
    return margins


@dataclass(frozen=True)
class CwddReport:
    ok: bool
    f_max_hz: float
    violations: tuple  # (tone, column) pairs, 1-based

    def __bool__(self):
        return self.ok


def validate_cwdd(ch: BinderChannel, f_max_hz: float = math.inf) -> CwddReport:
    """Check dominance on every tone with center frequency <= f_max_hz."""
    violations = []
    for tone in range(1, ch.grid.k_count + 1):
        if ch.grid.center_freq_hz(tone) > f_max_hz:
            continue
        for beta, margin in enumerate(cwdd_margin(ch, tone), start=1):
            if margin <= 0.0:
                violations.append((tone, beta))
    return CwddReport(ok=not violations, f_max_hz=f_max_hz, violations=tuple(violations))


# ---------------------------------------------------------------------------
# Channel file format: magic, little-endian header, complex payload, CRC-32.
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<III ddd")


def save_channel(ch: BinderChannel, path) -> None:
    payload = np.ascontiguousarray(ch.h, dtype=np.complex128).tobytes()
    with open(path, "wb") as fh:
        fh.write(CHANNEL_MAGIC)
        fh.write(
            _HEADER.pack(
                ch.grid.k_count,
                ch.layout.n_groups,
                ch.layout.m_lines,
                ch.grid.f_start_hz,
                ch.grid.delta_f_hz,
                ch.loop_length_m,
            )
        )
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def load_channel(path) -> BinderChannel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(CHANNEL_MAGIC) + _HEADER.size + 4:
        raise MalformedHeaderError(f"{path}: file too short for header")
    if blob[: len(CHANNEL_MAGIC)] != CHANNEL_MAGIC:
        raise MalformedHeaderError(f"{path}: bad magic")
    k, n, m, f_start, delta_f, loop = _HEADER.unpack_from(blob, len(CHANNEL_MAGIC))
    if k < 1 or n < 1 or m < 1 or delta_f <= 0:
        raise MalformedHeaderError(f"{path}: invalid header values")
    l = n * m
    body = blob[len(CHANNEL_MAGIC) + _HEADER.size :]
    expected = k * l * l * 16
    if len(body) != expected + 4:
        raise DimensionMismatchError(
            f"{path}: payload is {len(body) - 4} bytes, header implies {expected}"
        )
    payload, (crc,) = body[:expected], struct.unpack("<I", body[expected:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ChecksumError(f"{path}: CRC mismatch")
    h = np.frombuffer(payload, dtype=np.complex128).reshape(k, l, l).copy()
    if not np.all(np.isfinite(h)):
        raise NonFiniteEntryError(f"{path}: non-finite channel entry")
    grid = ToneGrid(k_count=k, delta_f_hz=delta_f, f_start_hz=f_start)
    layout = BinderLayout(n_groups=n, m_lines=m)
    prov = Provenance(kind="loaded", path=str(path), checksum=crc)
    return BinderChannel(grid=grid, layout=layout, h=h, loop_length_m=loop, provenance=prov)
