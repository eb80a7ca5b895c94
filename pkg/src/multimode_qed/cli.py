"""Command-line entry point: one subcommand per pipeline stage.

Exit codes: 0 success, 2 config error, 3 numerical precondition, 4 bound state.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from dataclasses import asdict
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import analysis
from .dynamics import cross_check
from .model import (BoundStateError, ConfigError, NumericalPreconditionError, config_to_dict,
                    load_config, preset)
from .response import inverse_moment, build_response, critical_gamma, find_resonances, lamb_shift_table
from .spectral import build_spectral_table

log = logging.getLogger("multimode_qed")

EXIT_OK, EXIT_CONFIG, EXIT_PRECONDITION, EXIT_BOUND_STATE = 0, 2, 3, 4


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _trace_rows(trace):
    c = trace.c
    return zip(trace.times, c.real, c.imag, trace.abs2, [trace.solver_tag] * c.size)


TRACE_HEADER = ("t", "re_c", "im_c", "abs2_c", "solver")


class Run:
    """Collects outputs and writes the manifest on exit."""

    def __init__(self, args, configs):
        self.args = args
        self.cavity, self.emitter, self.numerics = configs
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs: list[str] = []
        self.start = time.perf_counter()
        self.extra: dict = {}

    def path(self, name: str) -> Path:
        p = self.out / name
        self.outputs.append(str(p))
        return p

    def manifest(self, status: str) -> None:
        data = {
            "command": self.args.command,
            "argv": sys.argv[1:],
            "status": status,
            "config": config_to_dict(self.cavity, self.emitter, self.numerics),
            "numerics": asdict(self.numerics),
            "outputs": [p for p in self.outputs if Path(p).exists()],
            "wall_time_s": time.perf_counter() - self.start,
            "versions": _versions(),
        }
        data.update(self.extra)
        (self.out / "manifest.json").write_text(json.dumps(data, indent=2, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"not serialisable: {type(obj).__name__}")


def _versions() -> dict:
    try:
        own = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"artifact": own, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def _configs(args):
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both")
    if args.config:
        return load_config(args.config)
    name = args.preset or "multimode"
    return preset(name, gamma=args.gamma)


# --------------------------------------------------------------------------
# subcommands

def cmd_spectrum(run: Run) -> None:
    sp = build_spectral_table(run.cavity, run.emitter, run.numerics)
    write_csv(run.path("spectrum.csv"), ("omega", "F"), zip(sp.omega, sp.F))


def cmd_lamb(run: Run) -> None:
    sp = build_spectral_table(run.cavity, run.emitter, run.numerics)
    write_csv(run.path("lamb.csv"), ("omega", "delta"), zip(sp.omega, lamb_shift_table(sp)))


def cmd_kernel(run: Run) -> None:
    sp = build_spectral_table(run.cavity, run.emitter, run.numerics)
    resp = build_response(sp, peak_points=run.numerics.peak_points, eps_reg=run.numerics.eps_reg)
    write_csv(run.path("kernel.csv"), ("omega", "delta", "U"), zip(resp.omega, resp.delta, resp.U))
    run.extra["sum_rule"] = resp.sum_rule()


def cmd_resonances(run: Run) -> None:
    sp = build_spectral_table(run.cavity, run.emitter, run.numerics)
    res = find_resonances(sp, eps_reg=run.numerics.eps_reg)
    records = [{"omega_r": float(w), "kind": str(k), "width": float(wd), "height": float(h),
                "marginal": bool(m)}
               for w, k, wd, h, m in zip(res.omega, res.kind, res.width, res.height, res.marginal)]
    run.path("resonances.json").write_text(json.dumps(records, indent=2) + "\n")
    print(f"{len(res)} roots, {res.n_resonant} resonant")


def cmd_evolve(run: Run) -> None:
    solvers = analysis.SOLVERS if run.args.solver == "all" else (run.args.solver,)
    sp = None
    if any(s != "systembath" for s in solvers):
        sp = build_spectral_table(run.cavity, run.emitter, run.numerics)
    traces = {}
    for s in solvers:
        if s == "systembath":
            from .systembath import build_mode_basis, evolve_bath
            bath = evolve_bath(build_mode_basis(run.cavity, run.emitter, run.numerics), run.emitter,
                               run.numerics.t_end, run.numerics.dt)
            write_csv(run.path("bath.csv"), ("t", "abs2_c", "norm"),
                      zip(bath.times, bath.abs2, bath.norm))
            traces[s] = bath.amplitude_trace()
        else:
            traces[s] = analysis.evolve(s, run.cavity, run.emitter, run.numerics, sp)
        write_csv(run.path(f"trace_{s}.csv"), TRACE_HEADER, _trace_rows(traces[s]))
    if len(solvers) > 1:
        from .systembath import compare_with_primary
        summary = {
            "sup_norm": {"laplace_volterra": cross_check(traces["laplace"], traces["volterra"]),
                         "laplace_systembath": cross_check(traces["laplace"], traces["systembath"])},
            "peaks_systembath_vs_laplace":
                compare_with_primary(traces["systembath"], traces["laplace"]).as_dict(),
        }
        run.path("crosscheck.json").write_text(
            json.dumps(summary, indent=2, default=_json_default) + "\n")


def cmd_analyze(run: Run) -> None:
    solver = "laplace" if run.args.solver == "all" else run.args.solver
    result = analysis.run_pipeline(run.cavity, run.emitter, run.numerics, solver)
    run.path("report.json").write_text(json.dumps(result.report.as_dict(), indent=2) + "\n")
    print(result.report.regime)


def _parse_values(text: str | None) -> list[float]:
    if text is None:
        raise ConfigError("sweep needs --values")
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse --values {text!r}") from None


def cmd_sweep(run: Run) -> None:
    if run.args.param not in analysis.SWEEP_PARAMETERS:
        raise ConfigError(f"--param must be one of {analysis.SWEEP_PARAMETERS}")
    solver = "laplace" if run.args.solver == "all" else run.args.solver
    values = _parse_values(run.args.values)
    rows = analysis.sweep(run.args.param, values, run.cavity, run.emitter, run.numerics,
                          solver, workers=run.args.workers)
    analysis.write_sweep_csv(rows, run.path("sweep.csv"))
    run.extra["failures"] = [{"param_value": r.param_value, "error": r.error}
                             for r in rows if r.error is not None]


def cmd_critical_gamma(run: Run) -> None:
    sp = build_spectral_table(run.cavity, run.emitter, run.numerics)
    g_crit = critical_gamma(sp)
    moment = inverse_moment(sp, 0.0)
    run.extra.update(gamma_crit=g_crit, integral_F_over_omega=moment)
    print(f"gamma_crit = {g_crit:.10g}  (integral of F/omega = {moment:.10g})")


COMMANDS = {
    "spectrum": cmd_spectrum,
    "lamb": cmd_lamb,
    "kernel": cmd_kernel,
    "resonances": cmd_resonances,
    "evolve": cmd_evolve,
    "analyze": cmd_analyze,
    "sweep": cmd_sweep,
    "critical-gamma": cmd_critical_gamma,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmqed", description="Emitter decay in an open multimode cavity.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--preset", choices=["weak", "strong", "multimode", "fig5"])
    p.add_argument("--gamma", type=float, help="override gamma of a preset")
    p.add_argument("--solver", default="laplace", choices=[*analysis.SOLVERS, "all"])
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--param", help="sweep parameter: gamma, eta or x_a")
    p.add_argument("--values", help="comma-separated sweep values")
    p.add_argument("--workers", type=int, default=1, help="processes for sweep points")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run = None
    try:
        run = Run(args, _configs(args))
        COMMANDS[args.command](run)
    except ConfigError as exc:
        return _fail(run, "config error", exc, EXIT_CONFIG)
    except NumericalPreconditionError as exc:
        return _fail(run, "numerical precondition", exc, EXIT_PRECONDITION)
    except BoundStateError as exc:
        return _fail(run, "bound state", exc, EXIT_BOUND_STATE)
    run.manifest("ok")
    return EXIT_OK


def _fail(run, label, exc, code) -> int:
    print(f"error ({label}): {exc}", file=sys.stderr)
    if run is not None:
        run.manifest(f"error: {label}")
    return code


if __name__ == "__main__":
    sys.exit(main())
