"""Monte Carlo experiment runner: BER / capacity / energy-efficiency sweeps
with deterministic seeding and CSV + JSON result persistence.

Determinism contract: every random stream is derived from the master seed
plus a (point, trial) counter, trials are evaluated in fixed-size chunks and
reduced in index order, so results are byte-identical for any worker count.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .channel import BinderChannel, BinderLayout, ChannelParams, ToneGrid, synth_binder
from .smmod import (
    ActivationSet,
    Constellation,
    PowerPlan,
    assemble_frame,
    build_constellation,
    demap_frame,
    map_group_bits,
)
from .detect import (
    SingularChannelError,
    ToneObservation,
    line_detect,
    ml_detect,
    truncate,
    zf_cancel,
    zf_vectoring,
)
from .softdet import CodecConfig, RscCode, make_interleaver, turbo_loop
from .capacity import (
    aggregate_band,
    ccmc_sm_tone,
    ccmc_vectoring_tone,
    dcmc_tone,
    sm_alphabet,
    vectoring_alphabet,
)
from .energy import LdParams, energy_efficiency, group_ld_power

__all__ = [
    "SCHEMA_VERSION",
    "ConfigError",
    "SchemaError",
    "SimConfig",
    "RunResult",
    "psd_to_power",
    "dbm_to_watts",
    "wilson_interval",
    "run_ber",
    "run_capacity",
    "run_energy",
    "write_results",
    "read_results",
]

SCHEMA_VERSION = 1
CSV_HEADER = "swept_var,value,metric,std_err,n_trials,flags"
TRIAL_CHUNK = 32  # fixed stopping granularity, independent of worker count

HARD_DETECTORS = ("ml", "linezf", "vectoring-zf")
SOFT_DETECTORS = ("sosd1", "sosd2")


class ConfigError(Exception):
    pass


class SchemaError(Exception):
    pass


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def psd_to_power(psd_dbm_hz: float, bandwidth_hz: float) -> float:
    """Total power in dBm of a flat PSD over the given bandwidth."""
    if bandwidth_hz <= 0:
        raise ValueError("bandwidth must be positive")
    return psd_dbm_hz + 10.0 * math.log10(bandwidth_hz)


def wilson_interval(errors: int, n: int, z: float = 1.96) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = errors / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass
class SimConfig:
    """Experiment configuration; defaults follow the 2-104.4 MHz, K=2048 grid."""

    k_count: int = 2048
    delta_f_hz: float = 0.05e6
    f_start_hz: float = 2.025e6
    n_groups: int = 2
    m_lines: int = 2

    loop_lengths_m: list = field(default_factory=lambda: [100.0])
    schemes: list = field(default_factory=lambda: ["sm", "vectoring"])
    detectors: list = field(default_factory=lambda: ["sosd1"])

    sm_kind: str = "qam"
    sm_order: int = 8
    vec_kind: str = "qam"
    vec_order: int = 4

    power_dbm: list | None = None
    psd_dbm_hz: float | None = -70.0
    noise_psd_dbm_hz: float = -140.0

    capacity_kind: str = "dcmc"
    tones: list | None = None  # 1-based tone subset for ber/energy
    bandwidths_mhz: list | None = None
    ber_tones_per_point: int = 8

    n_frames: int = 200
    max_bit_errors: int = 200
    min_errors_confident: int = 10

    turbo_iterations: int = 4
    interleaver_seed: int = 7
    # desk-scale Monte Carlo budgets; raise for publication-grade error bars
    dcmc_draws_per_candidate: int = 16
    spatial_samples: int = 20000
    tone_step: int = 1

    strict_cwdd: bool = True
    channel_params: dict = field(default_factory=dict)
    channel_seed: int | None = None

    master_seed: int = 1234
    threads: int = 1
    out_dir: str = "results"

    def validate(self) -> None:
        if self.power_dbm is not None and self.psd_dbm_hz is not None:
            raise ConfigError("set either power_dbm or psd_dbm_hz, not both")
        if self.power_dbm is None and self.psd_dbm_hz is None:
            raise ConfigError("one of power_dbm / psd_dbm_hz is required")
        if self.n_frames < 1:
            raise ConfigError("n_frames must be >= 1")
        if self.tone_step < 1:
            raise ConfigError("tone_step must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.capacity_kind not in ("ccmc", "dcmc"):
            raise ConfigError(f"unknown capacity kind {self.capacity_kind!r}")
        for d in self.detectors:
            if d not in HARD_DETECTORS + SOFT_DETECTORS:
                raise ConfigError(f"unknown detector {d!r}")
        for s in self.schemes:
            if s not in ("sm", "vectoring"):
                raise ConfigError(f"unknown scheme {s!r}")
        if self.tones is not None:
            for t in self.tones:
                if not 1 <= t <= self.k_count:
                    raise ConfigError(f"tone {t} outside 1..{self.k_count}")

    # -- derived pieces -----------------------------------------------------

    def grid(self, k_count: int | None = None) -> ToneGrid:
        return ToneGrid(
            k_count=k_count or self.k_count,
            delta_f_hz=self.delta_f_hz,
            f_start_hz=self.f_start_hz,
        )

    def layout(self) -> BinderLayout:
        return BinderLayout(n_groups=self.n_groups, m_lines=self.m_lines)

    def params(self) -> ChannelParams:
        return ChannelParams(strict_cwdd=self.strict_cwdd, **self.channel_params)

    def sigma_w2(self) -> float:
        return dbm_to_watts(self.noise_psd_dbm_hz) * self.delta_f_hz

    def p_total_watts_list(self, bandwidth_hz: float | None = None) -> list:
        """Per-group total power grid in watts."""
        if self.power_dbm is not None:
            return [dbm_to_watts(p) for p in self.power_dbm]
        bw = bandwidth_hz if bandwidth_hz is not None else self.k_count * self.delta_f_hz
        return [dbm_to_watts(psd_to_power(self.psd_dbm_hz, bw))]

    def channel(self, loop_length_m: float, length_idx: int = 0, k_count: int | None = None) -> BinderChannel:
        seed = self.channel_seed
        if seed is None:
            seed = int(np.random.SeedSequence([self.master_seed, 9000 + length_idx]).generate_state(1)[0])
        return synth_binder(self.grid(k_count), self.layout(), loop_length_m, self.params(), seed)

    @classmethod
    def from_json(cls, path) -> "SimConfig":
        with open(path) as fh:
            data = json.load(fh)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class RunResult:
    kind: str  # "ber" | "capacity" | "energy"
    config: dict
    records: list
    master_seed: int
    code_version: str
    wall_time_s: float


def _parallel_map(fn, items, threads: int):
    """Order-preserving map; thread count never changes results."""
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _trial_rng(master_seed: int, point_id: int, trial: int) -> np.random.Generator:
    return np.random.default_rng([master_seed, point_id, trial])


# ---------------------------------------------------------------------------
# BER sweep
# ---------------------------------------------------------------------------


def _random_group_bits(rng, n_groups, bits_per_group):
    return rng.integers(0, 2, size=(n_groups, bits_per_group))


def _transmit_sm(rng, ch, tones, plan, sigma_w2, cons, act, bit_chunks=None):
    """Build observations for one SM frame; returns (obs list, sent bit rows)."""
    layout = ch.layout
    amp = math.sqrt(plan.per_line_tone_power)
    obs_list, sent = [], []
    for j, tone in enumerate(tones):
        if bit_chunks is None:
            rows = _random_group_bits(rng, layout.n_groups, act.p_bits + cons.bits_per_symbol)
        else:
            rows = bit_chunks[j]
        groups = [map_group_bits(r, act, cons) for r in rows]
        frame = assemble_frame(groups, layout.n_groups, layout.m_lines)
        noise = (rng.standard_normal(layout.l_total) + 1j * rng.standard_normal(layout.l_total)) * math.sqrt(sigma_w2 / 2)
        y = amp * ch.matrix(tone) @ frame.x + noise
        obs_list.append(ToneObservation(y=y, tone=tone, plan=plan, sigma_w2=sigma_w2))
        sent.append(rows)
    return obs_list, sent


def _hard_sm_trial(detector, rng, ch, tones, plan, sigma_w2, cons, act):
    obs_list, sent = _transmit_sm(rng, ch, tones, plan, sigma_w2, cons, act)
    errors = bits = 0
    for obs, rows in zip(obs_list, sent):
        if detector == "ml":
            dec = ml_detect(obs, ch, cons, act)
            decisions = list(zip(dec.active_lines, dec.symbols))
        else:  # linezf
            m_hat = line_detect(obs, ch.layout)
            y_t, h_t = truncate(obs, ch, m_hat)
            s_soft, _ = zf_cancel(y_t, h_t, plan, sigma_w2, obs.tone)
            near = [cons.points[int(np.argmin(np.abs(cons.points - s)))] for s in s_soft]
            decisions = list(zip(m_hat, near))
        got = demap_frame(decisions, act, cons)
        want = tuple(int(b) for r in rows for b in r)
        errors += sum(g != w for g, w in zip(got, want))
        bits += len(want)
    return errors, bits


def _vectoring_trial(rng, ch, tones, plan, sigma_w2, cons):
    layout = ch.layout
    amp = math.sqrt(plan.per_line_tone_power)
    q = cons.bits_per_symbol
    errors = bits = 0
    for tone in tones:
        labels = rng.integers(0, cons.order, size=layout.l_total)
        x = cons.points[labels]
        noise = (rng.standard_normal(layout.l_total) + 1j * rng.standard_normal(layout.l_total)) * math.sqrt(sigma_w2 / 2)
        y = amp * ch.matrix(tone) @ x + noise
        obs = ToneObservation(y=y, tone=tone, plan=plan, sigma_w2=sigma_w2)
        s_hat = zf_vectoring(obs, ch, plan, cons)
        for lab, sh in zip(labels, s_hat):
            wb = cons.labels[int(lab)]
            gb = cons.bits_for_point(sh)
            errors += sum(a != b for a, b in zip(wb, gb))
            bits += q
    return errors, bits


def _soft_trial(detector, rng, ch, tones, plan, sigma_w2, cons, act, codec):
    layout = ch.layout
    bits_per_group = act.p_bits + cons.bits_per_symbol
    n_coded = len(tones) * layout.n_groups * bits_per_group
    code = RscCode(codec.feedback_octal, codec.feedforward_octal)
    n_info = code.n_info(n_coded)
    info = rng.integers(0, 2, size=n_info)
    coded = code.encode(info)
    perm = make_interleaver(n_coded, codec.interleaver_seed)
    inter = coded[perm]
    chunks = inter.reshape(len(tones), layout.n_groups, bits_per_group)
    obs_list, _ = _transmit_sm(rng, ch, tones, plan, sigma_w2, cons, act, bit_chunks=chunks)
    res = turbo_loop(obs_list, ch, cons, act, codec, scheme=detector)
    errors = int(np.sum(res.info_bits != info))
    return errors, n_info


def _ber_point(cfg: SimConfig, ch, detector, tones, sigma_w2, p_total, point_id):
    layout = ch.layout
    if detector == "vectoring-zf":
        plan = PowerPlan(p_total, "vectoring", ch.grid.k_count, layout.m_lines)
        cons = build_constellation(cfg.vec_kind, cfg.vec_order)
        act = None
    else:
        plan = PowerPlan(p_total, "sm", ch.grid.k_count, layout.m_lines)
        cons = build_constellation(cfg.sm_kind, cfg.sm_order)
        act = ActivationSet(layout.m_lines)
    codec = CodecConfig(interleaver_seed=cfg.interleaver_seed, iterations=cfg.turbo_iterations)

    def one_trial(trial):
        rng = _trial_rng(cfg.master_seed, point_id, trial)
        try:
            if detector == "vectoring-zf":
                return _vectoring_trial(rng, ch, tones, plan, sigma_w2, cons)
            if detector in ("ml", "linezf"):
                return _hard_sm_trial(detector, rng, ch, tones, plan, sigma_w2, cons, act)
            return _soft_trial(detector, rng, ch, tones, plan, sigma_w2, cons, act, codec)
        except SingularChannelError:
            return None

    errors = bits = skipped = 0
    trial = 0
    while trial < cfg.n_frames:
        chunk = list(range(trial, min(trial + TRIAL_CHUNK, cfg.n_frames)))
        for out in _parallel_map(one_trial, chunk, cfg.threads):
            if out is None:
                skipped += 1
                continue
            errors += out[0]
            bits += out[1]
        trial = chunk[-1] + 1
        if errors >= cfg.max_bit_errors:
            break

    ber = errors / bits if bits else 0.0
    lo, hi = wilson_interval(errors, bits)
    flags = []
    if errors < cfg.min_errors_confident:
        flags.append("low-confidence")
    if skipped:
        flags.append(f"skipped={skipped}")
    return {
        "value": ber,
        "metric": f"ber:{detector}",
        "std_err": (hi - lo) / 2.0,
        "n_trials": bits,
        "flags": ";".join(flags),
    }


def _default_ber_tones(cfg: SimConfig, k_count: int) -> list:
    if cfg.tones is not None:
        return [t for t in cfg.tones if t <= k_count]
    n = min(cfg.ber_tones_per_point, k_count)
    return sorted(set(np.linspace(1, k_count, n, dtype=int).tolist()))


def run_ber(cfg: SimConfig) -> RunResult:
    cfg.validate()
    t0 = time.time()
    records = []
    point_id = 0
    sigma_w2 = cfg.sigma_w2()

    if cfg.bandwidths_mhz:
        # bandwidth sweep at the first loop length
        loop = cfg.loop_lengths_m[0]
        for bw in cfg.bandwidths_mhz:
            k_bw = max(1, int(round(bw * 1e6 / cfg.delta_f_hz)))
            k_bw = min(k_bw, cfg.k_count)
            ch = cfg.channel(loop, 0, k_count=k_bw)
            tones = _default_ber_tones(cfg, k_bw)
            p_total = cfg.p_total_watts_list(bandwidth_hz=k_bw * cfg.delta_f_hz)[0]
            for det in cfg.detectors:
                rec = _ber_point(cfg, ch, det, tones, sigma_w2, p_total, point_id)
                rec["swept_var"] = bw
                records.append(rec)
                point_id += 1
    else:
        sweep_power = cfg.power_dbm is not None and len(cfg.power_dbm) > 1 and len(cfg.loop_lengths_m) == 1
        p_list = cfg.p_total_watts_list()
        for li, loop in enumerate(cfg.loop_lengths_m):
            ch = cfg.channel(loop, li)
            tones = _default_ber_tones(cfg, cfg.k_count)
            for pi, p_total in enumerate(p_list):
                for det in cfg.detectors:
                    rec = _ber_point(cfg, ch, det, tones, sigma_w2, p_total, point_id)
                    rec["swept_var"] = cfg.power_dbm[pi] if sweep_power else loop
                    records.append(rec)
                    point_id += 1

    return RunResult(
        kind="ber",
        config=cfg.to_dict(),
        records=records,
        master_seed=cfg.master_seed,
        code_version=__version__,
        wall_time_s=time.time() - t0,
    )


# ---------------------------------------------------------------------------
# Capacity / energy sweeps
# ---------------------------------------------------------------------------


def _capacity_tone(cfg, ch, tone, plan, sigma_w2, alphabet):
    if cfg.capacity_kind == "ccmc":
        if plan.scheme == "vectoring":
            return ccmc_vectoring_tone(ch, tone, plan, sigma_w2)
        return ccmc_sm_tone(
            ch, tone, plan, sigma_w2, n_samples=cfg.spatial_samples, seed=cfg.master_seed
        )
    return dcmc_tone(
        ch,
        tone,
        plan,
        alphabet,
        sigma_w2,
        n_draws_per_candidate=cfg.dcmc_draws_per_candidate,
        seed=cfg.master_seed,
    )


def _scheme_alphabet(cfg, scheme):
    if cfg.capacity_kind != "dcmc":
        return None
    layout = cfg.layout()
    if scheme == "sm":
        cons = build_constellation(cfg.sm_kind, cfg.sm_order)
        return sm_alphabet(layout, cons, ActivationSet(layout.m_lines))
    cons = build_constellation(cfg.vec_kind, cfg.vec_order)
    return vectoring_alphabet(layout, cons)


def run_capacity(cfg: SimConfig) -> RunResult:
    cfg.validate()
    if cfg.power_dbm is None:
        power_dbm = [psd_to_power(cfg.psd_dbm_hz, cfg.k_count * cfg.delta_f_hz)]
    else:
        power_dbm = list(cfg.power_dbm)
    t0 = time.time()
    ld = LdParams()
    sigma_w2 = cfg.sigma_w2()
    ch = cfg.channel(cfg.loop_lengths_m[0], 0)
    tones = list(range(1, cfg.k_count + 1, cfg.tone_step))
    records = []
    for p_dbm in power_dbm:
        p_total = dbm_to_watts(p_dbm)
        for scheme in cfg.schemes:
            plan = PowerPlan(p_total, scheme, cfg.k_count, cfg.m_lines)
            alphabet = _scheme_alphabet(cfg, scheme)
            ests = _parallel_map(
                lambda t: _capacity_tone(cfg, ch, t, plan, sigma_w2, alphabet),
                tones,
                cfg.threads,
            )
            agg = aggregate_band(ests, expected_tones=len(tones))
            cap = agg.value * cfg.tone_step
            se = agg.std_err * cfg.tone_step
            records.append(
                {
                    "swept_var": p_dbm,
                    "value": cap,
                    "metric": f"capacity:{scheme}:{cfg.capacity_kind}",
                    "std_err": se,
                    "n_trials": agg.n_samples,
                    "flags": f"tone_step={cfg.tone_step}" if cfg.tone_step > 1 else "",
                }
            )
            g_ld = group_ld_power(p_total, scheme, cfg.m_lines, ld)
            ee = energy_efficiency(cap, cfg.n_groups, g_ld, scheme)
            records.append(
                {
                    "swept_var": p_dbm,
                    "value": ee.efficiency,
                    "metric": f"ee:{scheme}:{cfg.capacity_kind}",
                    "std_err": se / (cfg.n_groups * g_ld),
                    "n_trials": agg.n_samples,
                    "flags": "",
                }
            )
    return RunResult(
        kind="capacity",
        config=cfg.to_dict(),
        records=records,
        master_seed=cfg.master_seed,
        code_version=__version__,
        wall_time_s=time.time() - t0,
    )


def run_energy(cfg: SimConfig) -> RunResult:
    cfg.validate()
    tones = cfg.tones if cfg.tones is not None else [500, 1000, 1500, 2000]
    for t in tones:
        if not 1 <= t <= cfg.k_count:
            raise ConfigError(f"tone {t} outside 1..{cfg.k_count}")
    if cfg.power_dbm is None:
        power_dbm = [psd_to_power(cfg.psd_dbm_hz, cfg.k_count * cfg.delta_f_hz)]
    else:
        power_dbm = list(cfg.power_dbm)
    t0 = time.time()
    ld = LdParams()
    sigma_w2 = cfg.sigma_w2()
    ch = cfg.channel(cfg.loop_lengths_m[0], 0)
    records = []
    for p_dbm in power_dbm:
        p_total = dbm_to_watts(p_dbm)
        for scheme in cfg.schemes:
            plan = PowerPlan(p_total, scheme, cfg.k_count, cfg.m_lines)
            alphabet = _scheme_alphabet(cfg, scheme)
            g_ld = group_ld_power(p_total, scheme, cfg.m_lines, ld)
            ests = _parallel_map(
                lambda t: _capacity_tone(cfg, ch, t, plan, sigma_w2, alphabet),
                tones,
                cfg.threads,
            )
            for tone, est in zip(tones, ests):
                ee = energy_efficiency(
                    est.value, cfg.n_groups, g_ld, scheme, per_tone_count=cfg.k_count
                )
                records.append(
                    {
                        "swept_var": p_dbm,
                        "value": ee.efficiency,
                        "metric": f"ee:{scheme}:tone{tone}",
                        "std_err": est.std_err / (cfg.n_groups * ee.ld_power),
                        "n_trials": est.n_samples,
                        "flags": "",
                    }
                )
                records.append(
                    {
                        "swept_var": p_dbm,
                        "value": est.value,
                        "metric": f"capacity:{scheme}:tone{tone}",
                        "std_err": est.std_err,
                        "n_trials": est.n_samples,
                        "flags": "",
                    }
                )
    return RunResult(
        kind="energy",
        config=cfg.to_dict(),
        records=records,
        master_seed=cfg.master_seed,
        code_version=__version__,
        wall_time_s=time.time() - t0,
    )


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_results(result: RunResult, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    lines = [CSV_HEADER]
    for rec in result.records:
        lines.append(
            ",".join(
                [
                    _fmt(rec["swept_var"]),
                    _fmt(rec["value"]),
                    rec["metric"],
                    _fmt(rec["std_err"]),
                    _fmt(rec["n_trials"]),
                    rec.get("flags", ""),
                ]
            )
        )
    with open(os.path.join(out_dir, "result.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    sidecar = {
        "schema_version": SCHEMA_VERSION,
        "kind": result.kind,
        "config": result.config,
        "master_seed": result.master_seed,
        "code_version": result.code_version,
        "wall_time_s": result.wall_time_s,
    }
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_results(out_dir) -> RunResult:
    with open(os.path.join(out_dir, "config.json")) as fh:
        sidecar = json.load(fh)
    if sidecar.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(
            f"schema version {sidecar.get('schema_version')} != {SCHEMA_VERSION}"
        )
    records = []
    with open(os.path.join(out_dir, "result.csv")) as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise SchemaError(f"unexpected CSV header {header!r}")
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            sv, val, metric, se, nt, flags = line.split(",", 5)
            records.append(
                {
                    "swept_var": float(sv),
                    "value": float(val),
                    "metric": metric,
                    "std_err": float(se),
                    "n_trials": int(nt),
                    "flags": flags,
                }
            )
    return RunResult(
        kind=sidecar["kind"],
        config=sidecar["config"],
        records=records,
        master_seed=sidecar["master_seed"],
        code_version=sidecar["code_version"],
        wall_time_s=sidecar["wall_time_s"],
    )
