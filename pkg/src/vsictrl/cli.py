"""Command-line pipeline: synthesize, calibrate, simulate, compare, bode.

Every command reads one JSON config (defaults apply when omitted), writes
its artifacts under the output directory, and exits with a documented
code: 0 success, 2 config error, 3 synthesis infeasible, 4 simulation
divergence, 5 comparison verdict failure.  Outputs are deterministic for
identical configs (fixed seeds and iteration orders, no timestamps).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .baseline import baseline_controller_ss, design_baseline
from .config import (
    ConfigError,
    ProjectConfig,
    calibrated_scales,
    config_to_dict,
    controller_from_dict,
    controller_to_dict,
    load_config,
)
from .metrics import bode_export, compare_controllers
from .sim import SimulationDiverged, default_event_schedule, simulate
from .synthesis import SynthesisError, close_lower, hinf_norm
from .vsi import (
    WeightConfig,
    assemble_generalized_plant,
    build_plant,
    build_weights,
    closed_loop_targets,
    design_voltage_controller,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_DIVERGED = 4
EXIT_VERDICT = 5


def _write_atomic(path, text: str):
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _write_json(path, obj):
    _write_atomic(path, json.dumps(obj, indent=2, sort_keys=True,
                                   default=_json_default) + "\n")


def _ensure_outdir(cfg: ProjectConfig, override=None) -> str:
    out = override or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    return out


def _history_csv(history) -> str:
    lines = ["gamma,feasible,note"]
    for step in history:
        note = step.note.replace(",", ";")
        lines.append(f"{step.gamma:.12g},{int(step.feasible)},{note}")
    return "\n".join(lines) + "\n"


def run_synthesis(cfg: ProjectConfig):
    p = cfg.vsi
    return design_voltage_controller(
        p, cfg.resolved_load(), cfg.resolved_weights(), scales=cfg.resolved_scales(),
        gamma_range=(cfg.synthesis.gamma_min, cfg.synthesis.gamma_max),
        tol=cfg.synthesis.tol,
        reduction_band_max=2 * np.pi * cfg.synthesis.reduction_f_max_hz,
        reduction_rel_tol=cfg.synthesis.reduction_rel_tol,
        reduction_norm_cap=cfg.synthesis.reduction_norm_cap,
        g_tolerance=cfg.synthesis.g_tolerance,
        z_tolerance=cfg.synthesis.z_tolerance)


def cmd_synth(cfg: ProjectConfig, out_dir=None) -> int:
    """Synthesize, reduce, and certify; write controller and report files."""
    out = _ensure_outdir(cfg, out_dir)
    try:
        report = run_synthesis(cfg)
    except (SynthesisError, ValueError) as exc:
        _write_json(os.path.join(out, "synthesis_summary.json"),
                    {"status": "infeasible", "error": str(exc)})
        print(f"synthesis infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE

    _write_json(os.path.join(out, "controller_full.json"),
                controller_to_dict(report.controller))
    _write_json(os.path.join(out, "controller_reduced.json"),
                controller_to_dict(report.reduced_controller))
    _write_atomic(os.path.join(out, "gamma_iterations.csv"),
                  _history_csv(report.history))
    hsv_lines = ["index,hsv"] + [f"{i},{v:.12g}" for i, v in enumerate(report.hsv)]
    _write_atomic(os.path.join(out, "hankel_singular_values.csv"),
                  "\n".join(hsv_lines) + "\n")
    summary = {
        "status": "ok",
        "gamma": report.gamma,
        "closed_loop_norm": report.closed_loop_norm,
        "controller_order": report.controller.n_states,
        "reduced_order": report.reduced_controller.n_states,
        "truncation_error_bound": report.truncation_error_bound,
        "truncation_error_measured": report.truncation_error_measured,
        "robust_stable": report.robust_stable,
        "robust_margin": report.robust_margin,
        "targets": report.targets,
        "regularized": report.regularized,
    }
    _write_json(os.path.join(out, "synthesis_summary.json"), summary)
    _write_json(os.path.join(out, "closed_loop_targets.json"), report.targets)
    _write_json(os.path.join(out, "robust_stability.json"),
                {"robust_stable": report.robust_stable, "margin": report.robust_margin})
    ok = report.gamma < 1.0 and report.targets["passed"]
    print(f"gamma = {report.gamma:.6f} (closed-loop norm {report.closed_loop_norm:.6f}); "
          f"controller order {report.controller.n_states} -> {report.reduced_controller.n_states}; "
          f"targets {'met' if report.targets['passed'] else 'NOT met'}; "
          f"robustly stable: {report.robust_stable}")
    return EXIT_OK if ok else EXIT_INFEASIBLE


def _calibration_merit(cfg: ProjectConfig, weights: WeightConfig):
    p = cfg.vsi
    plant = assemble_generalized_plant(p, cfg.resolved_load(), weights,
                                       scales=cfg.resolved_scales())
    from .synthesis import hinfsyn
    rep = hinfsyn(plant, gamma_range=(cfg.synthesis.gamma_min, cfg.synthesis.gamma_max),
                  tol=cfg.synthesis.tol)
    targets = closed_loop_targets(plant, rep.controller, p.omega0,
                                  g_tolerance=cfg.synthesis.g_tolerance,
                                  z_tolerance=cfg.synthesis.z_tolerance,
                                  scales=cfg.resolved_scales())
    max_z = max(targets.z_harmonics.values())
    merit = max(rep.gamma / 0.95,
                max_z / cfg.synthesis.z_tolerance,
                targets.g_error / cfg.synthesis.g_tolerance)
    return merit, rep.gamma, max_z, targets.g_error


def cmd_calibrate(cfg: ProjectConfig, out_dir=None, max_evals: int = 200) -> int:
    """Coordinate search over weight gains until gamma < 0.95 and targets pass.

    Deterministic given the config: fixed coordinate order (k_s1, k_s2,
    k_s3, then the k_d vector) and a fixed multiplicative step ladder.
    Writes the tuned weights and a search log; already-feasible configs
    come back unchanged.
    """
    out = _ensure_outdir(cfg, out_dir)
    weights = cfg.resolved_weights()
    log = []

    def attempt(w):
        try:
            return _calibration_merit(cfg, w)
        except (SynthesisError, ValueError):
            return (np.inf, np.inf, np.inf, np.inf)

    merit, gamma, max_z, g_err = attempt(weights)
    log.append({"step": "start", "merit": merit, "gamma": gamma,
                "max_z": max_z, "g_error": g_err})
    if merit <= 1.0:
        _write_json(os.path.join(out, "calibrated_weights.json"),
                    _weights_dict(weights))
        _write_json(os.path.join(out, "calibration_log.json"), log)
        print(f"already feasible (gamma={gamma:.4f}); weights unchanged")
        return EXIT_OK

    harmonics = sorted(weights.k_d)
    coords = ["k_s1", "k_s2", "k_s3"] + [f"k_d{h}" for h in harmonics]
    steps = (2.0, 1.4, 1.15)
    evals = 0
    improved = True
    while improved and evals < max_evals and merit > 1.0:
        improved = False
        for coord in coords:
            for st in steps:
                done = False
                for fac in (1.0 / st, st):
                    cand = _perturb(weights, coord, fac)
                    if cand is None:
                        continue
                    m, g, z, e = attempt(cand)
                    evals += 1
                    if m < merit - 1e-12:
                        weights, merit, gamma, max_z, g_err = cand, m, g, z, e
                        log.append({"step": coord, "factor": fac, "merit": m,
                                    "gamma": g, "max_z": z, "g_error": e})
                        improved = done = True
                        break
                    if evals >= max_evals:
                        break
                if done or evals >= max_evals:
                    break
            if evals >= max_evals:
                break

    _write_json(os.path.join(out, "calibrated_weights.json"), _weights_dict(weights))
    _write_json(os.path.join(out, "calibration_log.json"), log)
    if merit <= 1.0:
        print(f"calibrated: gamma={gamma:.4f}, max|Z|={max_z:.4f}, |G-1|={g_err:.5f}")
        return EXIT_OK
    print(f"calibration exhausted the budget; best merit {merit:.3f} "
          f"(gamma={gamma:.4f}, max|Z|={max_z:.4f})", file=sys.stderr)
    return EXIT_INFEASIBLE


def _weights_dict(w: WeightConfig) -> dict:
    from dataclasses import asdict
    d = asdict(w)
    d["k_d"] = {str(k): v for k, v in d["k_d"].items()}
    return d


def _perturb(w: WeightConfig, coord: str, factor: float) -> WeightConfig | None:
    from dataclasses import replace
    try:
        if coord.startswith("k_d"):
            h = int(coord[3:])
            k_d = dict(w.k_d)
            k_d[h] = min(max(k_d[h] * factor, 1.0), 800.0)
            return replace(w, k_d=k_d)
        value = getattr(w, coord) * factor
        bounds = {"k_s1": (0.05, 1.0), "k_s2": (50.0, 5e4), "k_s3": (2.0, 500.0)}
        lo, hi = bounds[coord]
        return replace(w, **{coord: min(max(value, lo), hi)})
    except ValueError:
        return None


def _obtain_controller(cfg: ProjectConfig, selection: str, controller_path=None):
    if selection == "external":
        if not controller_path:
            raise ConfigError("--controller path required for the external selection")
        with open(controller_path) as fh:
            return controller_from_dict(json.load(fh)), "external"
    if selection == "baseline":
        des = design_baseline(cfg.vsi, cfg.resolved_load(),
                              pm_inner=cfg.baseline.pm_inner_deg,
                              pm_outer=cfg.baseline.pm_outer_deg,
                              gm_min_db=cfg.baseline.gm_min_db,
                              bw_min=2 * np.pi * cfg.baseline.bw_min_hz,
                              hold_aware=cfg.baseline.hold_aware)
        return baseline_controller_ss(des.controller, cfg.vsi.omega0), "baseline"
    report = run_synthesis(cfg)
    return report.reduced_controller, "hinf"


def _scenario(cfg: ProjectConfig):
    from .vsi import nominal_load_values
    opts = cfg.scenario
    r_n, l_n = nominal_load_values(cfg.vsi)
    second = (opts.second_load_r if opts.second_load_r is not None else r_n / 2.0,
              opts.second_load_l if opts.second_load_l is not None else l_n)
    return default_event_schedule(cfg.vsi, vref_dip=opts.vref_dip,
                                  second_load=second, t_end=opts.t_end,
                                  oversample=opts.oversample)


def cmd_simulate(cfg: ProjectConfig, selection: str = "hinf",
                 controller_path=None, out_dir=None) -> int:
    """Run the event schedule with the selected controller; write CSV and metrics."""
    out = _ensure_outdir(cfg, out_dir)
    try:
        controller, name = _obtain_controller(cfg, selection, controller_path)
    except (SynthesisError, ValueError) as exc:
        print(f"controller unavailable: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    scenario = _scenario(cfg)
    try:
        series = simulate(scenario, controller)
    except SimulationDiverged as exc:
        _write_json(os.path.join(out, f"simulation_{name}.json"),
                    {"status": "diverged", "t_last": exc.t_last})
        print(str(exc), file=sys.stderr)
        return EXIT_DIVERGED
    series.to_csv(os.path.join(out, f"timeseries_{name}.csv"))

    from .metrics import steady_state_windows, window_metrics
    f0 = cfg.vsi.omega0 / (2 * np.pi)
    windows = steady_state_windows(scenario, f0, cfg.scenario.analysis_cycles)
    reports = [window_metrics(series, f0, w, min_cycles=cfg.scenario.analysis_cycles)
               for w in windows]
    payload = {"status": "ok", "controller": name,
               "windows": [r.as_dict() for r in reports],
               "worst_thd_pct": max(r.thd_pct for r in reports),
               "worst_mag_err_pct": max(abs(r.mag_err_pct) for r in reports),
               "worst_phase_err_pct": max(abs(r.phase_err_pct) for r in reports)}
    _write_json(os.path.join(out, f"simulation_{name}.json"), payload)
    print(f"{name}: worst THD {payload['worst_thd_pct']:.4f}%, "
          f"mag {payload['worst_mag_err_pct']:.4f}%, "
          f"phase {payload['worst_phase_err_pct']:.4f}%")
    return EXIT_OK


def cmd_compare(cfg: ProjectConfig, out_dir=None) -> int:
    """Simulate both controllers on the identical scenario and tabulate."""
    out = _ensure_outdir(cfg, out_dir)
    try:
        report = run_synthesis(cfg)
        des = design_baseline(cfg.vsi, cfg.resolved_load(),
                              pm_inner=cfg.baseline.pm_inner_deg,
                              pm_outer=cfg.baseline.pm_outer_deg,
                              gm_min_db=cfg.baseline.gm_min_db,
                              bw_min=2 * np.pi * cfg.baseline.bw_min_hz,
                              hold_aware=cfg.baseline.hold_aware)
    except (SynthesisError, ValueError) as exc:
        print(f"design failed: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    controllers = {
        "hinf": report.reduced_controller,
        "baseline": baseline_controller_ss(des.controller, cfg.vsi.omega0),
    }
    scenario = _scenario(cfg)
    try:
        comp = compare_controllers(scenario, controllers,
                                   cycles=cfg.scenario.analysis_cycles)
    except RuntimeError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_DIVERGED

    _write_atomic(os.path.join(out, "comparison.txt"), comp.table_text())
    payload = {
        "worst": comp.worst,
        "winners": comp.winners,
        "baseline_margins": {
            "inner_pm_deg": des.inner_margins.pm_deg,
            "inner_gm_db": des.inner_margins.gm_db,
            "inner_bw_rad_s": des.inner_margins.bandwidth,
            "outer_pm_deg": des.outer_margins.pm_deg,
            "outer_gm_db": des.outer_margins.gm_db,
            "outer_bw_rad_s": des.outer_margins.bandwidth,
            "spec_met": des.spec_met,
        },
        "gamma": report.gamma,
    }
    _write_json(os.path.join(out, "comparison.json"), payload)
    print(comp.table_text())
    hinf_wins = all(comp.winners[k] == "hinf"
                    for k in ("thd_pct", "mag_err_pct", "phase_err_pct"))
    return EXIT_OK if hinf_wins else EXIT_VERDICT


def cmd_bode(cfg: ProjectConfig, out_dir=None, controller_path=None) -> int:
    """Export weight/plant (and optional controller) responses as CSV."""
    out = _ensure_outdir(cfg, out_dir)
    p = cfg.vsi
    w_s, w_cs, w_d, t_des = build_weights(p, cfg.resolved_weights())
    g_inv, g_i = build_plant(p)
    systems = {"W_S": w_s, "W_CS": w_cs, "W_d": w_d, "T_des": t_des,
               "G_inv": g_inv, "G_i": g_i}
    if controller_path:
        with open(controller_path) as fh:
            systems["K"] = controller_from_dict(json.load(fh))
    omega = np.logspace(0, 6, 800)
    _write_atomic(os.path.join(out, "bode.csv"), bode_export(systems, omega))
    print(f"wrote {os.path.join(out, 'bode.csv')}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="vsictrl",
        description="Robust single-loop voltage controller toolkit for "
                    "grid-forming inverters")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--config", help="JSON config path (defaults apply if omitted)")
        sp.add_argument("--out", help="output directory (overrides config)")
        sp.add_argument("--seed", type=int, help="override the config seed")

    sp = sub.add_parser("synth", help="synthesize, reduce, and certify the controller")
    add_common(sp)
    sp = sub.add_parser("calibrate", help="tune weight gains until gamma < 0.95")
    add_common(sp)
    sp.add_argument("--max-evals", type=int, default=200)
    sp = sub.add_parser("simulate", help="run the event schedule with one controller")
    add_common(sp)
    sp.add_argument("--controller", help="external controller JSON, or use --select")
    sp.add_argument("--select", choices=["hinf", "baseline", "external"], default="hinf")
    sp = sub.add_parser("compare", help="head-to-head metrics of both controllers")
    add_common(sp)
    sp = sub.add_parser("bode", help="export weight/plant frequency responses")
    add_common(sp)
    sp.add_argument("--controller", help="include this controller JSON in the export")

    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else ProjectConfig()
        if args.seed is not None:
            cfg.seed = args.seed
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "synth":
            return cmd_synth(cfg, args.out)
        if args.command == "calibrate":
            return cmd_calibrate(cfg, args.out, max_evals=args.max_evals)
        if args.command == "simulate":
            selection = "external" if args.controller else args.select
            return cmd_simulate(cfg, selection, args.controller, args.out)
        if args.command == "compare":
            return cmd_compare(cfg, args.out)
        if args.command == "bode":
            return cmd_bode(cfg, args.out, args.controller)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
