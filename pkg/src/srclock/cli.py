"""Scenario runner: reproduces each reference experiment from a config file.

Subcommands: pulse-scan, heterodyne, coherent, metrology, oracle-check.
Every run writes CSV time series / tables, a JSON summary, and a manifest
with config hash, seed, code version and per-file checksums.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, metrology, oracle
from .config import (SCENARIOS, ConfigError, ScenarioConfig, config_from_tree,
                     load_config_tree, _sweep_scaled)
from .cumulant import MOMENT_NAMES, DivergenceError, drift
from .observables import observable_series, pulse_metrics
from .params import SystemParams, desk_params
from .reporting import write_csv, write_json, write_manifest
from .sde import run_ensemble, run_trajectory

TWO_PI = 2.0 * math.pi
DEFAULT_ATOM_SWEEP = [10_000, 20_000, 30_000, 40_000, 50_000]
COHERENT_DT = 2.5e-11          # resolves the collective Rabi scale of the drive


def _obs_columns(rec, n_atoms: int) -> dict:
    obs = observable_series(rec.states, rec.times, n_atoms)
    n = float(n_atoms)
    cols = dict(obs)
    for key in ("j_bar", "m_bar", "a_x", "a_y", "a_z"):
        cols[key + "_per_atom"] = obs[key] / n
    return cols


def scenario_pulse_scan(cfg: ScenarioConfig) -> dict:
    """Deterministic pulses over the sweep; photon number, ladder path, spin."""
    field = cfg.sweep_field or "n_atoms"
    values = cfg.sweep_values or list(DEFAULT_ATOM_SWEEP)
    t_end = cfg.t_end or 1.5e-4
    base = cfg.params.with_(detection_efficiency=0.0)
    summary = {"sweep_field": field, "sweep_values": [], "pulses": []}
    for value in values:
        params = base.with_(**{field: value})
        rec = run_trajectory(params, t_end=t_end, dt=cfg.dt, seed=cfg.seed,
                             record_every=cfg.record_every)
        cols = _obs_columns(rec, params.n_atoms)
        tag = f"{field}_{value:g}" if field != "n_atoms" else f"N{int(value)}"
        write_csv(cfg.out_dir / f"pulse_{tag}.csv", cols)
        metrics = pulse_metrics(rec.times, cols["photon_number"])
        metrics[field] = value
        metrics["valid"] = rec.valid
        summary["sweep_values"].append(value)
        summary["pulses"].append(metrics)
    return summary


def scenario_heterodyne(cfg: ScenarioConfig) -> dict:
    """Backaction ensemble: per-trajectory samples plus mean/SE time series."""
    t_end = cfg.t_end or 1.5e-4
    ens = run_ensemble(cfg.params, t_end=t_end, dt=cfg.dt, n_traj=cfg.n_traj,
                       base_seed=cfg.seed, record_every=cfg.record_every)
    det = run_trajectory(cfg.params.with_(detection_efficiency=0.0),
                         t_end=t_end, dt=cfg.dt, record_every=cfg.record_every)
    a_idx = MOMENT_NAMES.index("a")
    cols = {
        "time": ens.times,
        "photon_mean": ens.moment_mean("ada").real,
        "photon_se": ens.moment_se("ada"),
        "photon_deterministic": det.moment("ada").real,
        # <adag> = conj(<a>): Re unchanged, Im flips sign
        "field_re_mean": ens.moment_mean("a").real,
        "field_re_se": ens.se_real[:, a_idx],
        "field_im_mean": -ens.moment_mean("a").imag,
        "field_im_se": ens.se_imag[:, a_idx],
    }
    write_csv(cfg.out_dir / "ensemble_mean.csv", cols)
    for i in range(min(3, cfg.n_traj)):
        rec = run_trajectory(cfg.params, t_end=t_end, dt=cfg.dt, seed=cfg.seed,
                             stream=i, record_every=cfg.record_every,
                             store_dws=False)
        write_csv(cfg.out_dir / f"trajectory_{i:03d}.csv",
                  _obs_columns(rec, cfg.params.n_atoms))
    dev = np.abs(cols["photon_mean"] - cols["photon_deterministic"])
    with np.errstate(invalid="ignore"):
        within = dev <= 3.0 * cols["photon_se"]
    frac_re = float(np.mean(np.abs(cols["field_re_mean"]) <= 3 * cols["field_re_se"]))
    frac_im = float(np.mean(np.abs(cols["field_im_mean"]) <= 3 * cols["field_im_se"]))
    return {
        "n_success": ens.n_success,
        "n_failed": ens.n_failed,
        "photon_mean_within_3se": float(np.mean(within)),
        "field_re_zero_within_3se": frac_re,
        "field_im_zero_within_3se": frac_im,
    }


def _cycle_task(args):
    params, seed, stream, span, dt, t_end = args
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = metrology.measurement_cycle(params, seed, span=span, dt=dt,
                                          t_end=t_end, stream=stream)
    fit = res.fit
    return {
        "stream": stream,
        "y": res.y,
        "accepted": res.accepted,
        "beat_freq_hz": fit.beat_freq_hz,
        "hwhm_hz": fit.hwhm / TWO_PI,
        "amplitude": fit.amplitude,
        "offset": fit.offset,
        "snr": fit.snr,
        "converged": fit.converged,
    }


def _run_cycles(cfg: ScenarioConfig, n_cycles: int) -> list[dict]:
    tasks = [(cfg.params, cfg.seed, i, cfg.span, cfg.dt, None)
             for i in range(n_cycles)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(_cycle_task, tasks, chunksize=4))
    return [_cycle_task(t) for t in tasks]


def scenario_metrology(cfg: ScenarioConfig) -> dict:
    """Cycles, spectra, fits, d_f vs span, and the Allan series."""
    if cfg.params.detection_efficiency <= 0:
        raise ConfigError("metrology scenario needs detection_efficiency > 0")
    rows = _run_cycles(cfg, cfg.n_cycles)
    write_csv(cfg.out_dir / "cycles.csv", {
        "cycle": np.array([r["stream"] for r in rows]),
        "accepted": np.array([int(r["accepted"]) for r in rows]),
        "beat_freq_hz": np.array([r["beat_freq_hz"] for r in rows]),
        "hwhm_hz": np.array([r["hwhm_hz"] for r in rows]),
        "snr": np.array([r["snr"] for r in rows]),
        "d_f": np.array([r["y"] if r["y"] is not None else np.nan for r in rows]),
    })
    samples = np.array([r["y"] for r in rows if r["accepted"]])
    rejection_rate = 1.0 - len(samples) / len(rows)
    if rejection_rate > 0.5:
        raise RuntimeError(
            f"fit failure rate {rejection_rate:.0%} exceeds 50%")

    # example spectrum of the first cycle
    traj = run_trajectory(cfg.params, t_end=cfg.span, dt=cfg.dt, seed=cfg.seed,
                          stream=0, record_every=100)
    spec = metrology.power_spectrum(metrology.photocurrent(traj, cfg.params),
                                    span=cfg.span)
    write_csv(cfg.out_dir / "spectrum_cycle000.csv",
              {"freq_hz": spec.freqs, "power": spec.power})

    # fit statistics versus transform span, over a reduced seed set
    n_span = min(20, cfg.n_cycles)
    t_long = max(cfg.spans)
    span_stats = []
    for i in range(n_span):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rec = run_trajectory(cfg.params, t_end=t_long, dt=cfg.dt,
                                 seed=cfg.seed + 1, stream=i, record_every=100)
            pc = metrology.photocurrent(rec, cfg.params)
            for span in cfg.spans:
                fit = metrology.lorentzian_fit(
                    metrology.power_spectrum(pc, span=span), cfg.params)
                if fit.converged:
                    span_stats.append((span, fit.beat_freq_hz,
                                       fit.hwhm / TWO_PI, fit.snr,
                                       fit.fractional_diff))
    span_stats = np.array(span_stats)
    write_csv(cfg.out_dir / "fit_vs_span.csv", {
        "span": span_stats[:, 0],
        "beat_freq_hz": span_stats[:, 1],
        "hwhm_hz": span_stats[:, 2],
        "snr": span_stats[:, 3],
        "d_f": span_stats[:, 4],
    })
    snr_by_span = {float(s): float(np.mean(span_stats[span_stats[:, 0] == s, 3]))
                   for s in cfg.spans}

    series = metrology.allan_deviation(samples, cfg.cycle_time, max_m=cfg.max_m)
    write_csv(cfg.out_dir / "allan.csv", {
        "tau_s": series.taus,
        "sigma": series.sigma,
        "n_pairs": series.n_pairs,
    })
    amp, slope = metrology.fit_allan_power_law(series)
    return {
        "n_cycles": cfg.n_cycles,
        "rejection_rate": rejection_rate,
        "mean_d_f": float(np.mean(samples)),
        "std_d_f": float(np.std(samples, ddof=1)),
        "mean_beat_freq_hz": float(np.mean(
            [r["beat_freq_hz"] for r in rows if r["accepted"]])),
        "mean_fwhm_hz": float(np.mean(
            [2 * r["hwhm_hz"] for r in rows if r["accepted"]])),
        "snr_vs_span": snr_by_span,
        "allan_amplitude_at_1s": amp,
        "allan_exponent": slope,
        "cycle_time_s": cfg.cycle_time,
        "cycle_time_note": "T_c is bookkeeping; dead time folded into it",
    }


def scenario_coherent(cfg: ScenarioConfig) -> dict:
    """Coherent-drive run plus its heterodyne spectroscopy, against the
    incoherent reference."""
    drive = cfg.params.drive_strength if cfg.params.drive_strength > 0 \
        else 2.9 * math.pi * 1e4
    dur = cfg.params.drive_duration if cfg.params.drive_duration > 0 else 1e-5
    params = cfg.params.with_(pump_rate=0.0, drive_strength=drive,
                              drive_duration=dur, drive_detuning=0.0)
    dt = min(cfg.dt, COHERENT_DT)
    t_end = cfg.t_end or 1e-4

    det = run_trajectory(params.with_(detection_efficiency=0.0), t_end=t_end,
                         dt=dt, record_every=max(cfg.record_every, 400))
    cols = _obs_columns(det, params.n_atoms)
    write_csv(cfg.out_dir / "coherent_pulse.csv", cols)
    n_half = params.n_atoms / 2.0
    in_drive = det.times <= dur
    spin_len = np.sqrt(cols["a_x"] ** 2 + cols["a_y"] ** 2 + cols["a_z"] ** 2)
    transverse = np.sqrt(cols["a_x"] ** 2 + cols["a_y"] ** 2)

    n_fit = min(20, cfg.n_traj)
    fits, ref_fits = [], []
    for i in range(n_fit):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rec = run_trajectory(params, t_end=cfg.span, dt=dt, seed=cfg.seed,
                                 stream=i, record_every=4000)
            fit = metrology.lorentzian_fit(metrology.power_spectrum(
                metrology.photocurrent(rec, params), span=cfg.span), params)
            ref = run_trajectory(cfg.params.with_(drive_strength=0.0),
                                 t_end=cfg.span, dt=cfg.dt, seed=cfg.seed,
                                 stream=i, record_every=100)
            rfit = metrology.lorentzian_fit(metrology.power_spectrum(
                metrology.photocurrent(ref, cfg.params), span=cfg.span), cfg.params)
        if fit.converged:
            fits.append(fit)
        if rfit.converged:
            ref_fits.append(rfit)
    write_csv(cfg.out_dir / "coherent_fits.csv", {
        "beat_freq_hz": np.array([f.beat_freq_hz for f in fits]),
        "fwhm_hz": np.array([f.fwhm / TWO_PI for f in fits]),
        "snr": np.array([f.snr for f in fits]),
        "d_f": np.array([f.fractional_diff for f in fits]),
    })
    bin_hz = 1.0 / cfg.span
    return {
        "min_spin_length_in_drive": float(spin_len[in_drive].min() / n_half),
        "max_transverse_spin_per_atom": float(transverse.max() / params.n_atoms),
        "max_ax_per_atom": float(np.max(np.abs(cols["a_x"])) / params.n_atoms),
        "max_ay_per_atom": float(np.max(np.abs(cols["a_y"])) / params.n_atoms),
        "mean_beat_freq_hz": float(np.mean([f.beat_freq_hz for f in fits])),
        "mean_fwhm_hz": float(np.mean([f.fwhm / TWO_PI for f in fits])),
        "reference_beat_freq_hz": float(np.mean([f.beat_freq_hz for f in ref_fits])),
        "reference_fwhm_hz": float(np.mean([f.fwhm / TWO_PI for f in ref_fits])),
        "bin_width_hz": bin_hz,
        "n_fits": len(fits),
    }


def scenario_oracle_check(cfg: ScenarioConfig) -> dict:
    """Closed equations against the exact solver for small atom numbers."""
    summary = {"cases": []}
    for n in (2, 3, 4):
        params = desk_params(n_atoms=n)
        n_max = 8
        t_grid = np.linspace(0.0, 1.0e-6, 41)
        states = oracle.evolve(oracle.ground_state(n, n_max), params, t_grid)
        ops = oracle.SystemOperators(n, n_max)
        rows = {"time": [], "moment": [], "exact_re": [], "exact_im": [],
                "cumulant_re": [], "cumulant_im": [], "abs_diff": []}
        window_end = 0.0
        max_rel_in_window = 0.0
        max_dev_full = 0.0
        third_ratio = []
        for t, st in zip(t_grid, states):
            mom = oracle.moments(st, ops)
            exact_d = oracle.derivative_moments(st, params, t, ops)
            cum_d = drift(mom, params, t)
            scale = max(abs(getattr(exact_d, nm)) for nm in MOMENT_NAMES)
            tc = max(oracle.third_cumulants(st, ops).values()) if t > 0 else 0.0
            s2 = oracle.second_moment_scale(mom)
            ratio = tc / s2 if s2 > 0 else 0.0
            third_ratio.append(ratio)
            gated = ratio < 1e-3
            for nm in MOMENT_NAMES:
                e = getattr(exact_d, nm)
                c = getattr(cum_d, nm)
                rows["time"].append(t)
                rows["moment"].append(nm)
                rows["exact_re"].append(e.real)
                rows["exact_im"].append(e.imag)
                rows["cumulant_re"].append(c.real)
                rows["cumulant_im"].append(c.imag)
                rows["abs_diff"].append(abs(e - c))
                rel = abs(e - c) / max(abs(e), 1e-3 * scale) if scale > 0 else 0.0
                max_dev_full = max(max_dev_full, rel)
                if gated and all(r < 1e-3 for r in third_ratio):
                    window_end = t
                    max_rel_in_window = max(max_rel_in_window, rel)
        cols = {k: (np.array(v) if k != "moment" else v)
                for k, v in rows.items()}
        path = cfg.out_dir / f"oracle_check_N{n}.csv"
        with path.open("w") as fh:
            fh.write("time,moment,exact_re,exact_im,cumulant_re,cumulant_im,abs_diff\n")
            for i in range(len(rows["time"])):
                fh.write(f"{rows['time'][i]:.17g},{rows['moment'][i]},"
                         f"{rows['exact_re'][i]:.17g},{rows['exact_im'][i]:.17g},"
                         f"{rows['cumulant_re'][i]:.17g},{rows['cumulant_im'][i]:.17g},"
                         f"{rows['abs_diff'][i]:.17g}\n")
        summary["cases"].append({
            "n_atoms": n,
            "gated_window_end_s": window_end,
            "max_rel_dev_in_window": max_rel_in_window,
            "max_rel_dev_full_run": max_dev_full,
        })
    return summary


_SCENARIO_FUNCS = {
    "pulse-scan": scenario_pulse_scan,
    "heterodyne": scenario_heterodyne,
    "coherent": scenario_coherent,
    "metrology": scenario_metrology,
    "oracle-check": scenario_oracle_check,
}


def run_scenario(cfg: ScenarioConfig) -> dict:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    summary = _SCENARIO_FUNCS[cfg.scenario](cfg)
    summary["scenario"] = cfg.scenario
    summary["frequency_sign_convention"] = (
        "atom_freq_estimate = lo_freq - beat_freq (lo above the line)")
    write_json(cfg.out_dir / "summary.json", summary)
    write_manifest(cfg.out_dir, cfg.config_hash(), cfg.seed,
                   extra={"scenario": cfg.scenario,
                          "cycle_time_s": cfg.cycle_time})
    return summary


def _apply_cli_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    if args.seed is not None:
        cfg.seed = args.seed
    if args.trajectories is not None:
        cfg.n_traj = args.trajectories
    if args.out_dir is not None:
        cfg.out_dir = Path(args.out_dir)
    if args.dt is not None:
        cfg.dt = args.dt
    if args.span is not None:
        cfg.span = args.span
    if args.sweep is not None:
        field, _, values = args.sweep.partition("=")
        if not values:
            raise ConfigError("--sweep expects field=v1,v2,...")
        field = field.strip()
        if field not in SystemParams.__dataclass_fields__:
            raise ConfigError(f"unknown sweep field '{field}'")
        vals = [float(v) for v in values.split(",") if v.strip()]
        cfg.sweep_field = field
        cfg.sweep_values = _sweep_scaled(field, vals, cfg.two_pi_applied)
    workers = os.environ.get("SRCLOCK_WORKERS")
    if workers:
        cfg.workers = max(1, int(workers))
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="srclock",
        description="Superradiant-pulse clock simulator and metrology runner")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="scenario", required=True)
    for name in SCENARIOS:
        p = sub.add_parser(name, help=f"run the {name} scenario")
        p.add_argument("--config", type=Path, help="config file (flat text or JSON)")
        p.add_argument("--seed", type=int)
        p.add_argument("--trajectories", type=int)
        p.add_argument("--out-dir", type=Path)
        p.add_argument("--dt", type=float)
        p.add_argument("--span", type=float)
        p.add_argument("--sweep", type=str, metavar="FIELD=V1,V2,...")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        tree = load_config_tree(args.config) if args.config else {}
        cfg = config_from_tree(tree, scenario=args.scenario)
        cfg = _apply_cli_overrides(cfg, args)
    except (ConfigError, OSError, json.JSONDecodeError) as err:
        print(json.dumps({"error": type(err).__name__, "message": str(err)}),
              file=sys.stderr)
        return 2
    try:
        summary = run_scenario(cfg)
    except (DivergenceError, RuntimeError, ValueError) as err:
        report = {"error": type(err).__name__, "message": str(err)}
        print(json.dumps(report), file=sys.stderr)
        try:
            write_json(cfg.out_dir / "error.json", report)
        except OSError:
            pass
        return 3
    print(json.dumps({k: summary[k] for k in sorted(summary)
                      if not isinstance(summary[k], (list, dict))}, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
