"""Batch CLI: channel generation/inspection and BER / capacity / energy
sweeps.  Sweeps write <out>/result.csv and <out>/config.json; --plot adds a
quick-look figure next to them.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import math
import sys

import click

from . import __version__
from .channel import (
    BinderLayout,
    ChannelFileError,
    ChannelParams,
    ToneGrid,
    cwdd_margin,
    load_channel,
    save_channel,
    synth_binder,
    validate_cwdd,
)
from .harness import (
    ConfigError,
    SimConfig,
    run_ber,
    run_capacity,
    run_energy,
    write_results,
)

CONFIG_EXIT = 2
RUNTIME_EXIT = 3


def _parse_list(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _load_config(config_path, seed, out, threads, scheme, detector, loop_m,
                 power_dbm, psd_dbm_hz, bandwidth_mhz, tones) -> SimConfig:
    cfg = SimConfig.from_json(config_path) if config_path else SimConfig()
    if seed is not None:
        cfg.master_seed = seed
    if out is not None:
        cfg.out_dir = out
    if threads is not None:
        cfg.threads = threads
    if scheme:
        cfg.schemes = list(scheme)
    if detector:
        cfg.detectors = list(detector)
    if loop_m is not None:
        cfg.loop_lengths_m = _parse_list(loop_m)
    if power_dbm is not None:
        cfg.power_dbm = _parse_list(power_dbm)
        cfg.psd_dbm_hz = None
    if psd_dbm_hz is not None:
        cfg.psd_dbm_hz = psd_dbm_hz
        cfg.power_dbm = None
    if bandwidth_mhz is not None:
        cfg.bandwidths_mhz = _parse_list(bandwidth_mhz)
    if tones is not None:
        cfg.tones = [int(t) for t in _parse_list(tones)]
    cfg.validate()
    return cfg


def _quicklook(result, path):
    """Minimal per-run figure: each metric as one series over the swept axis."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series = {}
    for rec in result.records:
        series.setdefault(rec["metric"], []).append((rec["swept_var"], rec["value"]))
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, pts in sorted(series.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=name)
    if result.kind == "ber":
        if any(rec["value"] > 0 for rec in result.records):
            ax.set_yscale("log")
        ax.set_ylabel("BER")
    ax.set_xlabel("swept variable")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=7)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


_sweep_options = [
    click.option("--config", "config_path", type=click.Path(exists=True), default=None),
    click.option("--seed", type=int, default=None),
    click.option("--out", type=click.Path(), default=None),
    click.option("--threads", type=int, default=None),
    click.option("--scheme", multiple=True, type=click.Choice(["sm", "vectoring"])),
    click.option(
        "--detector",
        multiple=True,
        type=click.Choice(["ml", "linezf", "sosd1", "sosd2", "vectoring-zf"]),
    ),
    click.option("--loop-m", default=None, help="comma list of loop lengths [m]"),
    click.option("--power-dbm", default=None, help="comma list of per-group powers"),
    click.option("--psd-dbm-hz", type=float, default=None),
    click.option("--bandwidth-mhz", default=None, help="comma list of bandwidths"),
    click.option("--tones", default=None, help="comma list of 1-based tone indices"),
    click.option("--plot/--no-plot", default=False),
]


def sweep_command(fn):
    for opt in reversed(_sweep_options):
        fn = opt(fn)
    return fn


def _run_sweep(runner, **kwargs):
    plot = kwargs.pop("plot")
    try:
        cfg = _load_config(**kwargs)
    except (ConfigError, ValueError, OSError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(CONFIG_EXIT)
    try:
        result = runner(cfg)
        write_results(result, cfg.out_dir)
        if plot:
            _quicklook(result, f"{cfg.out_dir}/figure.png")
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(CONFIG_EXIT)
    except Exception as exc:
        click.echo(f"runtime error: {exc}", err=True)
        sys.exit(RUNTIME_EXIT)
    click.echo(f"wrote {cfg.out_dir}/result.csv ({len(result.records)} records)")


@click.group()
def main():
    """Grouped-SM DSL link simulator."""


@main.group()
def channel():
    """Generate or inspect binder channel files."""


@channel.command("gen")
@click.option("--out", required=True, type=click.Path())
@click.option("--k", "k_count", type=int, default=2048)
@click.option("--delta-f-hz", type=float, default=0.05e6)
@click.option("--f-start-hz", type=float, default=2.025e6)
@click.option("--groups", type=int, default=2)
@click.option("--lines", type=int, default=2)
@click.option("--loop-m", type=float, default=100.0)
@click.option("--seed", type=int, default=0)
@click.option("--strict-cwdd/--no-strict-cwdd", default=True)
def channel_gen(out, k_count, delta_f_hz, f_start_hz, groups, lines, loop_m, seed, strict_cwdd):
    try:
        grid = ToneGrid(k_count=k_count, delta_f_hz=delta_f_hz, f_start_hz=f_start_hz)
        layout = BinderLayout(n_groups=groups, m_lines=lines)
        params = ChannelParams(strict_cwdd=strict_cwdd)
        ch = synth_binder(grid, layout, loop_m, params, seed)
        save_channel(ch, out)
    except ValueError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(CONFIG_EXIT)
    except Exception as exc:
        click.echo(f"runtime error: {exc}", err=True)
        sys.exit(RUNTIME_EXIT)
    click.echo(f"wrote {out}: K={k_count} L={layout.l_total} d={loop_m} m")


@channel.command("inspect")
@click.argument("path", type=click.Path(exists=True))
def channel_inspect(path):
    try:
        ch = load_channel(path)
    except ChannelFileError as exc:
        click.echo(f"parse error: {exc}", err=True)
        sys.exit(RUNTIME_EXIT)
    grid, layout = ch.grid, ch.layout
    click.echo(
        f"K={grid.k_count} tones, {grid.f_start_hz / 1e6:.3f}-"
        f"{grid.center_freq_hz(grid.k_count) / 1e6:.3f} MHz, "
        f"N={layout.n_groups} M={layout.m_lines}, loop {ch.loop_length_m} m"
    )
    report = validate_cwdd(ch)
    click.echo(f"CWDD: {'ok' if report.ok else f'{len(report.violations)} violations'}")
    for tone in (1, grid.k_count // 2 + 1, grid.k_count):
        margins = cwdd_margin(ch, tone)
        worst = min(margins)
        worst_txt = "unbounded" if math.isinf(worst) else f"{worst:.2f} dB"
        click.echo(f"  tone {tone}: worst column margin {worst_txt}")


@main.command()
@sweep_command
def ber(**kwargs):
    """BER sweep over loop length, power, or bandwidth."""
    _run_sweep(run_ber, **kwargs)


@main.command()
@sweep_command
def capacity(**kwargs):
    """Band-aggregate capacity and energy efficiency vs. transmit power."""
    _run_sweep(run_capacity, **kwargs)


@main.command()
@sweep_command
def energy(**kwargs):
    """Per-tone energy efficiency on representative tones."""
    _run_sweep(run_energy, **kwargs)


@main.command()
def version():
    click.echo(__version__)


if __name__ == "__main__":
    main()
