"""Command-line surface: simulate, calibrate, montecarlo, analyze.

Exit codes: 0 success, 2 usage or configuration error, 3 input parse
error, 4 rank-deficient or otherwise failed solve, 5 degenerate
configuration when --fail-on-degenerate is set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import List, Optional

import numpy as np

from . import analysis, fileio
from .direct import (
    CalibrateOptions,
    CalibrationResult,
    ConfigKind,
    Configuration,
    Diagnostics,
    calibrate,
)
from .errors import CalibrationError, CsvParseError
from .geometry import rotation_error, scale_error, so3_exp, so3_log
from .iterative import iterate_calibrate
from .preprocess import (
    GyroStream,
    SelectionPolicy,
    align,
    center,
    compute_snr,
    select,
)
from .sim import FlexSpec, SensorModel, SumOfSinusoids, make_scenario

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_SOLVER = 4
EXIT_DEGENERATE = 5

_AXES = {"x": 0, "y": 1, "z": 2}
RAD_TO_MDEG = 180.0 / np.pi * 1000.0


def _floats(text: str, n: int, what: str) -> np.ndarray:
    parts = [p for p in text.replace(";", ",").split(",") if p.strip()]
    if len(parts) != n:
        raise argparse.ArgumentTypeError(f"{what}: expected {n} comma-separated values")
    return np.array([float(p) for p in parts])


def _parse_segments(text: str) -> List:
    segments = []
    for chunk in text.split(","):
        start, _, end = chunk.partition(":")
        segments.append((float(start), float(end)))
    return segments


def _sensor_model(args) -> SensorModel:
    C = so3_exp(np.deg2rad(_floats(args.rotvec_deg, 3, "--rotvec-deg")))
    S1 = np.diag(_floats(args.scales1, 3, "--scales1"))
    S2 = np.diag(_floats(args.scales2, 3, "--scales2"))
    return SensorModel(
        C=C, S1=S1, S2=S2,
        sigma_n=np.deg2rad(args.noise_sigma_deg),
        sigma_nu=np.deg2rad(args.bias_walk_udeg * 1e-6),
        rate_hz=args.rate,
    )


def cmd_simulate(args) -> int:
    if args.duration <= 0:
        print("error: --duration must be positive", file=sys.stderr)
        return EXIT_USAGE
    model = _sensor_model(args)
    profile = SumOfSinusoids(duration=args.duration)
    if args.amplitude_scale != 1.0:
        profile = SumOfSinusoids(
            duration=args.duration,
            amplitudes=profile.amplitudes * args.amplitude_scale,
            frequencies=profile.frequencies,
        )
    flex = None
    if args.flex:
        flex = FlexSpec(segments=_parse_segments(args.flex),
                        peak_rad=np.deg2rad(args.flex_peak_deg),
                        seed=args.seed)

    pairs, truth = make_scenario(model, profile, flex,
                                 skew_sigma_s=args.skew_sigma or None,
                                 seed=args.seed)
    out = args.out_dir.rstrip("/")
    os.makedirs(out, exist_ok=True)
    fileio.write_gyro_csv(f"{out}/gyro1.csv",
                          GyroStream(1, pairs.t, pairs.w1, args.rate))
    fileio.write_gyro_csv(f"{out}/gyro2.csv",
                          GyroStream(2, pairs.t, pairs.w2, args.rate))
    fileio.write_json(f"{out}/truth.json", fileio.truth_to_dict(truth))
    print(f"wrote {out}/gyro1.csv, {out}/gyro2.csv, {out}/truth.json")
    return EXIT_OK


def _result_report(result: CalibrationResult) -> dict:
    diag = result.diagnostics
    report = {
        "solver": result.solver,
        "config_class": result.config.kind.value,
        "rotation_matrix": [[float(x) for x in row] for row in result.C],
        "rotation_vector_mdeg": (so3_log(result.C) * RAD_TO_MDEG).tolist(),
        "scale_factors_1": result.s1.tolist(),
        "scale_factors_2": result.s2.tolist(),
        "scale_mode": result.scale_mode,
        "scale_ratio": result.scale_ratio,
        "combined_bias_rad_s": result.combined_bias.tolist(),
        "snr_total": diag.snr_total,
        "snr_per_axis": diag.snr_per_axis.tolist(),
        "n_pairs": diag.n_pairs,
        "residual_rms_rad_s": diag.residual_rms,
        "gram_cond": diag.gram_cond,
        "mitigation": {
            "applied": result.mitigation_applied,
            "fraction_removed": result.flex_fraction_removed,
            "sigma_r_rad_s": result.sigma_r,
        },
    }
    if result.iterations is not None:
        report["gn_iterations"] = result.iterations
    return report


def cmd_calibrate(args) -> int:
    try:
        a = fileio.read_gyro_csv(args.gyro1, gyro_id=1)
        b = fileio.read_gyro_csv(args.gyro2, gyro_id=2)
        truth = fileio.read_truth_json(args.truth) if args.truth else None
    except CsvParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE

    sigma = np.sqrt(2.0) * np.deg2rad(args.sigma_deg)
    options = CalibrateOptions(
        rank_tol=args.rank_tol,
        classify_tol=args.classify_tol,
        resolve_scale_axis=_AXES[args.resolve_scale_axis] if args.resolve_scale_axis else None,
        sigma=sigma,
    )
    try:
        pairs = align(a, b, max_lag=args.max_lag)
        if args.snr_target is not None:
            policy = SelectionPolicy(min_norm=args.min_norm, max_norm=args.max_norm,
                                     target_snr_per_axis=args.snr_target, sigma=sigma)
            pairs = select(pairs, policy)
        if args.mitigate_flex:
            result = analysis.mitigate_and_recalibrate(
                pairs, options, hysteresis_w=args.hysteresis,
                robust=not args.plain_std_sigma_r)
        else:
            result = calibrate(pairs, options)
        gn_result = None
        if args.solver in ("iterative", "both"):
            gn_result = iterate_calibrate(pairs, options=options)
        if args.solver == "iterative":
            result = gn_result
    except CalibrationError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    report = _result_report(result)
    report["solver"] = args.solver
    if args.solver == "both":
        report["solver_difference_rad"] = rotation_error(gn_result.C, result.C)
        report["gn_iterations"] = gn_result.iterations
    if truth is not None:
        theta = so3_log(result.C @ truth.C.T)
        report["error_vs_truth"] = {
            "rotation_mdeg_per_axis": (theta * RAD_TO_MDEG).tolist(),
            "rotation_mdeg": float(np.linalg.norm(theta)) * RAD_TO_MDEG,
            "scale_percent": 100.0 * scale_error(result.s1, result.s2,
                                                 truth.s1, truth.s2),
        }
    if args.fail_on_degenerate and report["config_class"] != "general":
        print(json.dumps(report, indent=2, sort_keys=True))
        print("error: degenerate gyroscope placement "
              f"({report['config_class']})", file=sys.stderr)
        return EXIT_DEGENERATE
    _emit(report, args.out)
    return EXIT_OK


def _emit(report: dict, out: Optional[str]) -> None:
    if out:
        fileio.write_json(out, report)
    else:
        print(json.dumps(report, indent=2, sort_keys=True))


def _fit_slope(snrs, rmses) -> Optional[float]:
    pts = [(s, r) for s, r in zip(snrs, rmses) if np.isfinite(r) and r > 0]
    if len(pts) < 2:
        return None
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])


def cmd_montecarlo(args) -> int:
    multipliers = [float(m) for m in args.multipliers.split(",")]
    base = _sensor_model(args)
    base_profile = SumOfSinusoids(duration=args.duration)

    rows = []
    for mult in multipliers:
        model, profile = base, base_profile
        if args.mechanism == "rate":
            profile = SumOfSinusoids(duration=args.duration,
                                     amplitudes=base_profile.amplitudes * mult,
                                     frequencies=base_profile.frequencies)
        elif args.mechanism == "noise":
            model = SensorModel(C=base.C, S1=base.S1, S2=base.S2,
                                sigma_n=base.sigma_n / mult,
                                sigma_nu=base.sigma_nu, rate_hz=base.rate_hz)
        else:  # samples: SNR grows with sqrt(N)
            profile = SumOfSinusoids(duration=args.duration * mult**2,
                                     amplitudes=base_profile.amplitudes,
                                     frequencies=base_profile.frequencies)
        scenario = analysis.McScenario(
            model=model, profile=profile,
            skew_sigma_s=args.skew_sigma or None,
            motion_seed=args.seed,
        )
        stats = analysis.mc_run(scenario, args.runs, seed=args.seed,
                                workers=args.workers)
        row = {
            "multiplier": mult,
            "snr": stats.snr,
            "rmse_rotation_mrad": stats.rmse_rotation * 1e3,
            "rmse_scale_percent": stats.rmse_scale * 100.0,
            "n_failed": stats.n_failed,
        }
        if stats.per_run_predicted is not None:
            pred = np.linalg.norm(stats.per_run_predicted, axis=1)
            row["predicted_rotation_mrad"] = float(np.sqrt(np.mean(pred**2))) * 1e3
        rows.append(row)

    out = {"mechanism": args.mechanism, "runs": args.runs, "rows": rows}
    if len(rows) > 1:
        out["rotation_slope"] = _fit_slope(
            [r["snr"] for r in rows], [r["rmse_rotation_mrad"] for r in rows])
        out["scale_slope"] = _fit_slope(
            [r["snr"] for r in rows], [r["rmse_scale_percent"] for r in rows])
    _emit(out, args.out)
    if args.plot_csv:
        cols = ["multiplier", "snr", "rmse_rotation_mrad", "rmse_scale_percent",
                "predicted_rotation_mrad", "n_failed"]
        lines = [",".join(cols)]
        for r in rows:
            lines.append(",".join(
                f"{r[c]:.9g}" if c in r and r[c] is not None else "" for c in cols))
        fileio._atomic_write(args.plot_csv, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_analyze(args) -> int:
    try:
        a = fileio.read_gyro_csv(args.gyro1, gyro_id=1)
        b = fileio.read_gyro_csv(args.gyro2, gyro_id=2)
    except CsvParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE

    sigma = np.sqrt(2.0) * np.deg2rad(args.sigma_deg)
    try:
        pairs = align(a, b, max_lag=args.max_lag)
        centered = center(pairs)
        if args.report:
            with open(args.report, encoding="utf-8") as fh:
                rep = json.load(fh)
            result = CalibrationResult(
                C=np.asarray(rep["rotation_matrix"], float),
                s1=np.asarray(rep["scale_factors_1"], float),
                s2=np.asarray(rep["scale_factors_2"], float),
                combined_bias=np.asarray(rep["combined_bias_rad_s"], float),
                config=Configuration(kind=ConfigKind(rep["config_class"])),
                scale_mode=rep["scale_mode"],
                diagnostics=Diagnostics(0, 0.0, 0.0, 0.0, np.zeros(3)),
            )
        else:
            result = calibrate(centered, CalibrateOptions(sigma=sigma))
        residuals = analysis.compute_residuals(centered, result)
        mask = analysis.detect_flex(residuals, hysteresis_w=args.hysteresis)
    except CalibrationError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    rnorm = np.linalg.norm(residuals, axis=1)
    wnorm = np.linalg.norm(centered.w1, axis=1)
    corr = float(np.corrcoef(rnorm, wnorm)[0, 1])
    flagged = ~mask.keep
    corr_flagged = (float(np.corrcoef(rnorm[flagged], wnorm[flagged])[0, 1])
                    if flagged.sum() >= 3 else None)
    counts, edges = np.histogram(rnorm, bins=50)
    snr_total, snr_axis = compute_snr(centered, sigma)

    out = {
        "n_pairs": int(pairs.n),
        "sigma_r_rad_s": mask.sigma_r,
        "fraction_flagged": float(flagged.mean()),
        "residual_rate_correlation": corr,
        "residual_rate_correlation_flagged": corr_flagged,
        "residual_norm_histogram": {
            "counts": counts.tolist(),
            "bin_edges_rad_s": edges.tolist(),
        },
        "snr_total": snr_total,
        "snr_per_axis": snr_axis.tolist(),
        "rotation_cov_trace_lower_bound": analysis.covariance_lower_bound(snr_total**2),
    }
    _emit(out, args.out)
    return EXIT_OK


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rotvec-deg", default="20,30,40",
                   help="mount rotation vector, degrees (default 20,30,40)")
    p.add_argument("--scales1", default="1,1,1", help="gyro-1 scale factors")
    p.add_argument("--scales2", default="1,1,1", help="gyro-2 scale factors")
    p.add_argument("--noise-sigma-deg", type=float, default=0.1,
                   help="white-noise std per gyro, deg/s (default 0.1)")
    p.add_argument("--bias-walk-udeg", type=float, default=57.3,
                   help="bias random-walk std per sample, microdeg/s (default 57.3)")
    p.add_argument("--rate", type=float, default=100.0, help="sample rate, Hz")
    p.add_argument("--skew-sigma", type=float, default=0.0,
                   help="draw skew entries from N(0, sigma^2) when nonzero")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gyrocal",
        description="Dual-gyroscope extrinsic rotation and scale-factor "
                    "calibration from angular-velocity streams.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write synthetic gyro CSVs plus truth JSON")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--duration", type=float, default=60.0, help="seconds")
    p.add_argument("--amplitude-scale", type=float, default=1.0)
    p.add_argument("--flex", default="",
                   help="flex segments as start:end[,start:end...] seconds")
    p.add_argument("--flex-peak-deg", type=float, default=0.5)
    _add_model_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="calibrate two recorded gyro CSVs")
    p.add_argument("--gyro1", required=True)
    p.add_argument("--gyro2", required=True)
    p.add_argument("--truth", default=None, help="truth JSON for error reporting")
    p.add_argument("--out", default=None, help="report JSON path (default: stdout)")
    p.add_argument("--solver", choices=("direct", "iterative", "both"),
                   default="direct")
    p.add_argument("--sigma-deg", type=float, default=0.1,
                   help="per-gyro noise std for SNR accounting, deg/s")
    p.add_argument("--max-lag", type=float, default=0.5)
    p.add_argument("--min-norm", type=float, default=0.0)
    p.add_argument("--max-norm", type=float, default=np.inf)
    p.add_argument("--snr-target", type=float, default=None,
                   help="per-axis SNR target enabling sample selection")
    p.add_argument("--mitigate-flex", action="store_true")
    p.add_argument("--hysteresis", type=int, default=5)
    p.add_argument("--plain-std-sigma-r", action="store_true",
                   help="plain std instead of MAD for the flex threshold")
    p.add_argument("--resolve-scale-axis", choices=tuple(_AXES), default=None)
    p.add_argument("--classify-tol", type=float, default=0.05)
    p.add_argument("--rank-tol", type=float, default=1e-8)
    p.add_argument("--fail-on-degenerate", action="store_true")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("montecarlo", help="RMSE-vs-SNR sweeps over a scenario")
    p.add_argument("--out", default=None)
    p.add_argument("--plot-csv", default=None)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--multipliers", default="0.5,1,2,4")
    p.add_argument("--mechanism", choices=("rate", "noise", "samples"),
                   default="rate")
    p.add_argument("--duration", type=float, default=20.0)
    p.add_argument("--workers", type=int, default=1)
    _add_model_flags(p)
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("analyze", help="residual diagnostics and flex detection")
    p.add_argument("--gyro1", required=True)
    p.add_argument("--gyro2", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--report", default=None,
                   help="reuse a prior calibration report instead of refitting")
    p.add_argument("--sigma-deg", type=float, default=0.1)
    p.add_argument("--max-lag", type=float, default=0.5)
    p.add_argument("--hysteresis", type=int, default=5)
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except argparse.ArgumentTypeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
