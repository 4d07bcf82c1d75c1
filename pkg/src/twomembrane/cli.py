"""Command-line front end producing plot-ready CSV artifacts.

Subcommands:

* derived         parameter report (text + CSV)
* limit-cycle     effective-damping roots, optional power scan
* response-sweep  tone amplitudes and calibration ratio curves over xi
* simulate        full stochastic run -> trajectory file (+ CSV slice)
* slowflow        amplitude-equation run -> slow trajectory + sync measure
* spectra         spectrogram and band variances of a stored run
* sync            synchronization measure of a stored slow run
* calibrate       displacement calibration from measured tone amplitudes

Exit codes: 0 success, 1 configuration error, 2 numerical failure, 3 I/O.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import detection, spectral
from .cavity_response import ToneId, sweep_csv
from .langevin import DriveSchedule, Trajectory, reflection_series, simulate_langevin
from .model import ConfigError, SystemParams, derived_params, load_config
from .slowflow import (SlowTrajectory, integrate_amplitude_eqs,
                       limit_cycle_solve, multistability_boundary,
                       second_mode_steady, sync_measure, threshold_power)

TWO_PI = 2.0 * math.pi


def _read_params(path: str) -> SystemParams:
    return load_config(Path(path).read_text())


def _parse_range(spec: str) -> np.ndarray:
    """'start:step:stop' inclusive grid."""
    try:
        start, step, stop = (float(s) for s in spec.split(":"))
    except ValueError:
        raise ConfigError(f"bad range {spec!r}; expected start:step:stop") from None
    if step <= 0 or stop < start:
        raise ConfigError(f"bad range {spec!r}")
    n = int(round((stop - start) / step))
    return start + step * np.arange(n + 1)


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_derived(args) -> int:
    params = _read_params(args.config)
    report = derived_params(params)
    out = _outdir(args)
    (out / "derived.txt").write_text(report.to_text())
    (out / "derived.csv").write_text(report.to_csv())
    sys.stdout.write(report.to_text())
    return 0


def _cmd_limit_cycle(args) -> int:
    params = _read_params(args.config)
    trunc = args.truncation
    sol = limit_cycle_solve(params, xi_max=args.xi_max, trunc=trunc)
    out = _outdir(args)
    lines = ["xi_root,stable"]
    for xi, stable in sol.roots:
        lines.append(f"{xi:.10g},{int(stable)}")
    (out / "limit_cycle_roots.csv").write_text("\n".join(lines) + "\n")
    if sol.has_cycle:
        sys.stdout.write(
            f"xi_st = {sol.chosen:.6g}\n"
            f"radius = {sol.radius:.6g}\n"
            f"displacement_m = {sol.displacement:.6g}\n"
            f"freq_shift_hz = {sol.freq_shift / TWO_PI:.6g}\n")
        second = second_mode_steady(params, sol, trunc=trunc)
        sys.stdout.write(
            f"gamma2_eff_hz = {second.gamma2_eff / TWO_PI:.6g}\n"
            f"softening_factor = "
            f"{math.sqrt(params.mech[1].gamma / second.gamma2_eff):.6g}\n")
    else:
        sys.stdout.write("no limit cycle (no stable positive root)\n")

    if args.power is not None:
        powers = _parse_range(args.power)
        rows = ["power_w,n_roots,roots"]
        for p in powers:
            s = limit_cycle_solve(params, xi_max=args.xi_max, trunc=trunc,
                                  pump_power=float(p))
            roots = ";".join(f"{xi:.8g}:{int(st)}" for xi, st in s.roots)
            rows.append(f"{p:.10g},{len(s.roots)},{roots}")
        (out / "power_scan.csv").write_text("\n".join(rows) + "\n")
    if args.thresholds:
        t1 = threshold_power(params, mode=0, trunc=trunc)
        t2 = threshold_power(params, mode=1, trunc=trunc)
        onset = multistability_boundary(params, 1e-5, 5e-3, trunc=trunc)
        onset_s = "absent" if onset is None else f"{onset:.6g}"
        (out / "thresholds.csv").write_text(
            "quantity,value_w\n"
            f"threshold_mode_1,{t1:.10g}\n"
            f"threshold_mode_2,{t2:.10g}\n"
            f"multistability_onset,{onset_s}\n")
        sys.stdout.write(f"threshold_mode_1_w = {t1:.6g}\n"
                         f"threshold_mode_2_w = {t2:.6g}\n"
                         f"multistability_onset_w = {onset_s}\n")
    return 0


def _cmd_response_sweep(args) -> int:
    params = _read_params(args.config)
    xi = _parse_range(args.xi)
    out = _outdir(args)
    (out / "tone_sweep.csv").write_text(
        sweep_csv(params, xi, g2a2=args.g2a2, trunc=args.truncation))
    (out / "ratio_sweep.csv").write_text(
        detection.ratio_sweep_csv(params, xi, trunc=args.truncation,
                                  g2a2=args.g2a2))
    return 0


def _cmd_simulate(args) -> int:
    params = _read_params(args.config)
    schedule = DriveSchedule.from_string(args.schedule) if args.schedule \
        else DriveSchedule.constant(params.pump.power)
    seed = args.seed if args.seed is not None else np.random.SeedSequence().entropy % 2**31
    if args.seed is None:
        sys.stderr.write(f"seed not given; using {seed}\n")
    traj = simulate_langevin(params, schedule, seed=int(seed), dt=args.dt,
                             duration=args.duration, decimation=args.decimation)
    out = _outdir(args)
    traj.save(out / "trajectory.tmc")
    refl = reflection_series(traj, params)
    volts = detection.voltage_signal(refl, params)
    from .datafiles import write_columnar
    write_columnar(out / "voltage.tmc",
                   {"kind": "voltage", "seed": int(seed),
                    "sample_rate": traj.sample_rate},
                   {"t": traj.t, "v_h": volts})
    np.savetxt(out / "voltage_head.csv",
               np.column_stack([traj.t[:args.csv_rows], volts[:args.csv_rows]]),
               delimiter=",", header="t,v_h", comments="")
    (out / "trajectory_head.csv").write_text(
        traj.to_csv(0, min(args.csv_rows, len(traj.t))))
    return 0


def _cmd_slowflow(args) -> int:
    params = _read_params(args.config)
    schedule = DriveSchedule.from_string(args.schedule) if args.schedule else None
    seed = args.seed if args.seed is not None else 0
    traj = integrate_amplitude_eqs(params, seed=int(seed), dt=args.dt,
                                   duration=args.duration, schedule=schedule,
                                   trunc=args.truncation)
    out = _outdir(args)
    traj.save(out / "slow_trajectory.tmc")
    window = max(10, int(args.sync_window / args.dt))
    if window <= traj.t.size:
        p_sync = sync_measure(np.angle(traj.a1), np.angle(traj.a2), window)
        t_sync = traj.t[window - 1:]
        np.savetxt(out / "sync_measure.csv",
                   np.column_stack([t_sync, p_sync]),
                   delimiter=",", header="t,p_theta", comments="")
    return 0


def _cmd_spectra(args) -> int:
    params = _read_params(args.config)
    traj = Trajectory.load(args.input)
    refl = reflection_series(traj, params, include_pump_beat=args.pump_beat)
    volts = detection.voltage_signal(refl, params)
    fs = traj.sample_rate
    seg = args.segment or int(fs)  # ~1 Hz resolution by default
    sg = spectral.spectrogram(volts, fs, segment=min(seg, volts.size),
                              hop=args.hop)
    out = _outdir(args)
    (out / "spectrogram.csv").write_text(sg.to_csv())
    if args.band:
        bands = []
        for spec in args.band:
            lo, hi = (float(s) for s in spec.split(":"))
            bands.append((lo, hi))
        (out / "band_variance.csv").write_text(
            spectral.band_variance_csv(sg, bands))
    return 0


def _cmd_sync(args) -> int:
    traj = SlowTrajectory.load(args.input)
    dt = float(traj.t[1] - traj.t[0])
    window = max(10, int(args.sync_window / dt))
    p_sync = sync_measure(np.angle(traj.a1), np.angle(traj.a2), window)
    out = _outdir(args)
    np.savetxt(out / "sync_measure.csv",
               np.column_stack([traj.t[window - 1:], p_sync]),
               delimiter=",", header="t,p_theta", comments="")
    return 0


def _cmd_calibrate(args) -> int:
    params = _read_params(args.config)
    tones: dict[ToneId, float] = {}
    for row in Path(args.tones).read_text().splitlines():
        row = row.strip()
        if not row or row.startswith("#") or row.startswith("tone"):
            continue
        name, value = (s.strip() for s in row.split(","))
        tones[ToneId(name)] = float(value)
    report = detection.calibrate(tones, params, trunc=args.truncation)
    out = _outdir(args)
    (out / "calibration.txt").write_text(report.to_text())
    (out / "calibration.csv").write_text(report.to_csv())
    sys.stdout.write(report.to_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twomembrane",
        description="two-membrane cavity optomechanics: simulation and "
                    "nonlinear displacement calibration")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="parameter file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--truncation", type=int, default=None,
                       help="Bessel sum truncation order")

    p = sub.add_parser("derived", help="derived parameter report")
    common(p)
    p.set_defaults(func=_cmd_derived)

    p = sub.add_parser("limit-cycle", help="limit-cycle roots and scans")
    common(p)
    p.add_argument("--xi-max", type=float, default=5.0)
    p.add_argument("--power", default=None, help="power scan start:step:stop [W]")
    p.add_argument("--thresholds", action="store_true",
                   help="compute both thresholds and the multistability onset")
    p.set_defaults(func=_cmd_limit_cycle)

    p = sub.add_parser("response-sweep", help="tone/ratio curves over xi")
    common(p)
    p.add_argument("--xi", default="0:0.01:2", help="xi grid start:step:stop")
    p.add_argument("--g2a2", type=float, default=1.0,
                   help="g_2 |A_2| product for the perturbative tones")
    p.set_defaults(func=_cmd_response_sweep)

    p = sub.add_parser("simulate", help="full stochastic simulation")
    common(p)
    p.add_argument("--schedule", default=None,
                   help="pump schedule, e.g. 'off:10,4.25uW:15,6uW:25'")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dt", type=float, default=2e-8)
    p.add_argument("--duration", type=float, default=1.0)
    p.add_argument("--decimation", type=int, default=None)
    p.add_argument("--csv-rows", type=int, default=2000)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("slowflow", help="slow amplitude-equation run")
    common(p)
    p.add_argument("--schedule", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--sync-window", type=float, default=0.5,
                   help="sync measure window [s]")
    p.set_defaults(func=_cmd_slowflow)

    p = sub.add_parser("spectra", help="spectrogram of a stored run")
    common(p)
    p.add_argument("--input", required=True, help="trajectory file")
    p.add_argument("--segment", type=int, default=None)
    p.add_argument("--hop", type=int, default=None)
    p.add_argument("--band", action="append", default=None,
                   help="variance band lo:hi [Hz]; repeatable")
    p.add_argument("--pump-beat", action="store_true",
                   help="include the pump-probe beat in the detected field")
    p.set_defaults(func=_cmd_spectra)

    p = sub.add_parser("sync", help="synchronization measure of a slow run")
    common(p, config=False)
    p.add_argument("--input", required=True, help="slow trajectory file")
    p.add_argument("--sync-window", type=float, default=0.5)
    p.set_defaults(func=_cmd_sync)

    p = sub.add_parser("calibrate", help="calibrate measured tone amplitudes")
    common(p)
    p.add_argument("--tones", required=True,
                   help="CSV of tone,amplitude_v rows (tone names: omega_1, "
                        "omega_2, omega_sm, omega_b, omega_sb)")
    p.set_defaults(func=_cmd_calibrate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        sys.stderr.write(f"configuration error: {exc}\n")
        return 1
    except (ValueError, RuntimeError, ZeroDivisionError) as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return 2
    except OSError as exc:
        sys.stderr.write(f"i/o error: {exc}\n")
        return 3


if __name__ == "__main__":
    sys.exit(main())
