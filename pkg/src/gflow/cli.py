"""Command-line entry point: ``gflow <scenario> --config <path>``."""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis
from .config import SCENARIOS, ConfigError, ExperimentConfig, parse_config
from .flow import Background, FlowError, FlowState, StepControl, run, volume_rate_residual
from .geometry import curvature, tensor_norm_sq
from .grid import GridError, MetricField, NotPositiveDefinite, ScalarField, field_reduce
from .monitors import MonitorSet
from .presets import cigar_potential, cigar_scalar_curvature, make_metric, make_phi
from .report import write_artifacts
from .verify import check_lemma, prop21_residuals, soliton_residual

EXIT_OK, EXIT_CHECK, EXIT_NUMERIC, EXIT_CONFIG = 0, 2, 3, 4


def max_workers() -> int:
    raw = os.environ.get("GFLOW_THREADS")
    if raw is None:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def initial_state(cfg: ExperimentConfig, grid=None) -> FlowState:
    grid = grid or cfg.grid
    ini = cfg.values["initial"]
    if ini["file"]:
        data = np.load(ini["file"])
        return FlowState(MetricField(grid, np.asarray(data["g"], dtype=float)),
                         ScalarField(grid, np.asarray(data["phi"], dtype=float)))
    g = make_metric(ini["metric"], grid, ini["metric_amplitude"], ini["metric_frequency"])
    phi = make_phi(ini["phi"], grid, ini["phi_amplitude"], ini["phi_frequency"])
    return FlowState(g, phi)


def step_control(cfg: ExperimentConfig) -> StepControl:
    c = cfg.values["control"]
    return StepControl(dt=c["dt"], cfl_safety=c["cfl_safety"], scheme=c["scheme"])


def _monitors(cfg: ExperimentConfig, extra=()) -> MonitorSet:
    c = cfg.values["control"]
    return MonitorSet(list(c["monitors"]) + list(extra), u_power=c["u_power"], tau=cfg["checks.tau"])


def _run(cfg: ExperimentConfig, params=None, extra_monitors=()):
    c = cfg.values["control"]
    return run(initial_state(cfg), params or cfg.params, step_control(cfg), c["t_end"],
               monitors=_monitors(cfg, extra_monitors), stride=c["monitor_stride"], mode=c["mode"])


def _termination_code(series) -> int | None:
    return None if series.metadata.get("termination") == "completed" else EXIT_NUMERIC


# ------------------------------------------------------------------ scenarios


def scenario_evolve(cfg):
    extra = ["decay"] if cfg["checks.decay"] else []
    series = _run(cfg, extra_monitors=extra)
    checks = [{"name": "run_completed", "passed": series.metadata["termination"] == "completed"}]
    if cfg["checks.volume"]:
        st0 = initial_state(cfg)
        bg = Background.from_metric(st0.g) if cfg["control.mode"] == "deturck" else None
        # checked at both ends of the run
        states = [st0] + ([series.final_state] if series.final_state is not None else [])
        res = max(volume_rate_residual(s, cfg.params, step_control(cfg), cfg["control.mode"], bg) for s in states)
        checks.append({"name": "volume_rate", "residual": res, "tolerance": cfg["checks.volume_tolerance"],
                       "passed": res <= cfg["checks.volume_tolerance"]})
    if cfg["checks.decay"] and series.metadata["termination"] == "completed":
        rep = analysis.decay_monitor(series, cfg.grid.h)
        checks.append({"name": "decay", **rep.to_dict()})
    return series, {"checks": checks}


def scenario_check_lemmas(cfg):
    grid = cfg.grid
    params = cfg.params
    thr = cfg["checks.order_threshold"]

    def one(lem):
        t = min(thr, 1.5) if (grid.dim == 3 and lem == "riemann") else thr
        rep = check_lemma(lambda g: initial_state(cfg, g), params, lem, grid=grid,
                          dt=cfg["control.dt"], refinements=cfg["checks.refinements"], threshold=t)
        d = rep.to_dict()
        d["name"] = f"lemma:{lem}"
        d["passed"] = d.pop("pass")
        return d

    with ThreadPoolExecutor(max_workers=max_workers()) as ex:
        checks = list(ex.map(one, cfg["checks.lemmas"]))
    return None, {"checks": checks}


def scenario_classify(cfg):
    rep = analysis.classify(cfg.params, cfg["checks.c_tilde"])
    return None, {"classification": rep.to_dict(), "checks": []}


def scenario_envelope(cfg):
    st = initial_state(cfg)
    c_tilde = cfg["checks.c_tilde"]
    if c_tilde is None:
        c_tilde = analysis.initial_c_tilde(st.g, st.phi)
    env = analysis.envelope(cfg.params, c_tilde)
    if cfg["control.t_end"] >= env.valid_until:
        raise ConfigError(f"t_end reaches the envelope pole at t={env.valid_until:.6g}", "control.t_end")
    series = _run(cfg, extra_monitors=["max_grad_phi_sq"])
    verdict = analysis.verify_envelope(series, env, cfg["checks.slack"])
    info = {"case_id": env.case_id, "c_tilde": c_tilde, "valid_until": env.valid_until}
    checks = [{"name": "envelope", **info, **verdict.to_dict()}]
    return series, {"checks": checks, "envelope": info}


def _cigar_errors(grid):
    g = make_metric("cigar", grid)
    f = cigar_potential(grid)
    b = curvature(g)
    ric_norm = field_reduce(tensor_norm_sq(b.ric, g, b.ginv).values ** 0.5, "max", grid=grid)
    res = soliton_residual(g, f)
    sol = field_reduce(tensor_norm_sq(res, g, b.ginv).values ** 0.5, "max", grid=grid)
    r_err = field_reduce(np.abs(b.scal.values - cigar_scalar_curvature(grid)) / 4.0, "max", grid=grid)
    return g, f, sol, ric_norm, r_err


def scenario_soliton(cfg):
    grid = cfg.grid
    thr = cfg["checks.order_threshold"]
    g, f, sol, ric, r_err = _cigar_errors(grid)
    _, _, sol2, _, r_err2 = _cigar_errors(grid.refined())
    alpha, beta = cfg["checks.alpha"], cfg["checks.beta"]
    r1, r2, t1, t2 = prop21_residuals(g, f, alpha, beta)
    b = curvature(g)
    order = math.log2(sol / sol2)
    checks = [
        {"name": "soliton_identity", "max_residual": sol, "max_ric": ric, "relative": sol / ric,
         "refined_max_residual": sol2, "order": order, "threshold": thr, "passed": order >= thr},
        {"name": "cigar_scalar_curvature", "max_relative_error": r_err, "refined_error": r_err2,
         "ratio": r_err / r_err2, "passed": r_err / r_err2 >= 3.5},
        {"name": "static_system", "alpha": alpha, "beta": beta,
         "r1_max": field_reduce(tensor_norm_sq(r1, g, b.ginv).values ** 0.5, "max", grid=grid),
         "r2_max": field_reduce(np.abs(r2.values), "max", grid=grid),
         "trace1_max": field_reduce(t1, "max"), "trace2_max": field_reduce(t2, "max"),
         "passed": True},
    ]
    return None, {"checks": checks}


_COMPARE = ("max_R", "min_R", "max_grad_phi_sq", "int_R", "W")


def compare_series(a, b, tolerance: float) -> dict:
    """Sample-by-sample relative deviation of invariant columns."""
    if len(a) != len(b):
        return {"passed": False, "reason": "runs recorded different sample counts"}
    cols = {}
    for c in _COMPARE:
        if c not in a.columns:
            continue
        x, y = a.column(c), b.column(c)
        if c == "int_R":
            scale = max(np.max(np.abs(a.column("int_abs_R"))), np.max(np.abs(b.column("int_abs_R"))))
        else:
            scale = max(np.max(np.abs(x)), np.max(np.abs(y)))
        dev = float(np.max(np.abs(x - y)) / scale) if scale > 0 else 0.0
        cols[c] = {"max_relative_deviation": dev, "passed": dev <= tolerance}
    return {"passed": all(v["passed"] for v in cols.values()), "columns": cols, "tolerance": tolerance}


def scenario_deturck_compare(cfg):
    params = cfg.params
    with ThreadPoolExecutor(max_workers=min(2, max_workers())) as ex:
        fa = ex.submit(_run, cfg, params, ["basic", "entropy"])
        fb = ex.submit(_run, cfg, params.associated(), ["basic", "entropy"])
        a, b = fa.result(), fb.result()
    checks = []
    for s, label in ((a, "full"), (b, "reduced")):
        checks.append({"name": f"run_{label}", "passed": s.metadata["termination"] == "completed",
                       "termination": s.metadata["termination"]})
    cmp = compare_series(a, b, cfg["checks.tolerance"])
    checks.append({"name": "invariant_columns", **cmp})
    extra = {"reduced_params": list(params.associated().astuple()),
             "reduced_termination": b.metadata["termination"]}
    return a, {"checks": checks, **extra, "_abort": _termination_code(a) or _termination_code(b)}


def deturck_compare(cfg) -> dict:
    """Full-versus-reduced comparison report without writing artifacts."""
    _, result = scenario_deturck_compare(cfg)
    result.pop("_abort", None)
    return result


def scenario_entropy(cfg):
    st = initial_state(cfg)
    tau = cfg["checks.tau"]
    W = analysis.perelman_entropy(st.g, st.phi, tau)
    axes = tuple(range(-st.grid.dim, 0))
    shift = [1] * st.grid.dim
    g2 = MetricField(st.grid, np.roll(st.g.packed, shift, axis=axes))
    f2 = ScalarField(st.grid, np.roll(st.phi.values, shift, axis=axes))
    W2 = analysis.perelman_entropy(g2, f2, tau)
    checks = [{"name": "finite", "W": W, "passed": math.isfinite(W)},
              {"name": "translation_invariance", "W_shifted": W2, "passed": W2 == W}]
    return None, {"checks": checks, "W": W, "tau": tau}


SCENARIO_FUNCS = {
    "evolve": scenario_evolve,
    "check-lemmas": scenario_check_lemmas,
    "classify": scenario_classify,
    "envelope": scenario_envelope,
    "soliton": scenario_soliton,
    "deturck-compare": scenario_deturck_compare,
    "entropy": scenario_entropy,
}


def run_scenario(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> int:
    """Execute a validated config and write its artifacts. Returns the exit code."""
    out = Path(out_dir or cfg["output.directory"])
    t0 = time.perf_counter()
    series = None
    doc = {"scenario": cfg.scenario, "config": cfg.echo()}
    code = EXIT_OK
    try:
        series, result = SCENARIO_FUNCS[cfg.scenario](cfg)
        abort = result.pop("_abort", None)
        doc.update(result)
        if series is not None:
            doc["termination"] = series.metadata.get("termination")
            if "error" in series.metadata:
                doc["error"] = series.metadata["error"]
            doc["run"] = {k: v for k, v in series.metadata.items() if k not in ("termination", "error")}
            doc["samples"] = len(series)
            abort = abort or _termination_code(series)
        passed = all(c.get("passed", True) for c in doc.get("checks", []))
        doc["passed"] = bool(passed and not abort)
        code = abort or (EXIT_OK if passed else EXIT_CHECK)
    except ConfigError as exc:
        doc.update({"termination": "ConfigError", "error": str(exc), "passed": False})
        code = EXIT_CONFIG
    except (FlowError, NotPositiveDefinite, FloatingPointError) as exc:
        doc.update({"termination": type(exc).__name__, "error": str(exc), "passed": False})
        code = EXIT_NUMERIC
    doc["exit_code"] = code
    o = cfg.values["output"]
    write_artifacts(out, doc, series, emit_csv=o["emit_csv"], emit_json=o["emit_json"] or code != EXIT_OK,
                    emit_svg=o["emit_svg"], plot_columns=o["plot_columns"],
                    wall_time=time.perf_counter() - t0)
    return code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gflow", description="Simulate and check the coupled metric/scalar flow.")
    p.add_argument("scenario", help=f"one of: {', '.join(SCENARIOS)}")
    p.add_argument("--config", required=True, help="INI experiment file")
    p.add_argument("--out", default=None, help="output directory (overrides output.directory)")
    p.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config entry; repeatable")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config, args.scenario, args.override)
    except (ConfigError, GridError) as exc:
        print(f"gflow: config error: {exc}", file=sys.stderr)
        if args.out:
            from .report import atomic_write, report_json
            atomic_write(Path(args.out) / "report.json",
                         report_json({"scenario": args.scenario, "termination": "ConfigError",
                                      "error": str(exc), "passed": False, "exit_code": EXIT_CONFIG}))
        return EXIT_CONFIG
    code = run_scenario(cfg, args.out)
    print(f"gflow {cfg.scenario}: exit {code}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
