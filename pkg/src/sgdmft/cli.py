"""Command-line experiment runner.

    sgdmft simulate|dmft|compare|oracle|sweep --config FILE --out DIR [--workers N] [--seed S]

Every run writes ``manifest.txt``: the resolved configuration followed by
``#`` metadata lines. Feeding a manifest back as ``--config`` reproduces the
CSV outputs exactly. Exit status: 0 ok, 2 bad config, 3 solver did not
converge or diverged, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__, analysis
from ._backend import USE_NUMBA
from .config import MODES, ConfigError, parse_config, to_text
from .dmft import DivergenceError, solve_dmft
from .simulator import average_series, run_seeds
from .storage import read_curves, read_kernels, write_curves, write_kernels

log = logging.getLogger("sgdmft")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4
COMPARED = ("gen_err", "m", "q", "train_loss", "train_acc")


class SolverFailure(RuntimeError):
    pass


def _simulate(cfg, out: Path, diag: dict):
    runs = run_seeds(cfg.mixture_spec(), cfg.run_params(), cfg.n_seeds, cfg.workers, cfg.n_test)
    for k, run in enumerate(runs):
        write_curves(out / f"curves_seed{k}.csv", run)
    mean = average_series(runs)
    write_curves(out / "curves.csv", mean, with_stderr=True)
    diag["n_seeds"] = len(runs)
    return mean


def _dmft(cfg, out: Path, diag: dict, name="curves.csv"):
    init = None
    if cfg.warm_start:
        init, _ = read_kernels(cfg.warm_start)
    res = solve_dmft(cfg.mixture_spec(), cfg.run_params(), cfg.solver_config(), init=init)
    write_curves(out / name, res.metrics)
    write_kernels(
        out / "kernels.csv",
        res.kernels,
        {"iterations": res.iterations, "residual": f"{res.residual:.17g}", "converged": res.converged},
    )
    diag.update(iterations=res.iterations, residual=f"{res.residual:.6e}", converged=res.converged)
    if not res.converged:
        raise SolverFailure(f"no convergence after {res.iterations} iterations (residual {res.residual:.3e})")
    return res.metrics


def _compare(cfg, out: Path, diag: dict):
    sim = _simulate(cfg, out, diag)
    (out / "curves.csv").rename(out / "curves_sim.csv")
    failure = None
    try:
        theory = _dmft(cfg, out, diag)
    except SolverFailure as exc:
        failure = exc
        theory = None
    if theory is None:
        theory = read_curves(out / "curves.csv")
    lines = [f"# dmft vs simulation ({cfg.n_seeds} seeds, d = {cfg.d})", "column,max_abs_dev,mean_abs_dev,t_at_max"]
    for col in COMPARED:
        pair = analysis.CurvePair(theory.times, getattr(theory, col), getattr(sim, col), col, times_b=sim.times)
        mx, mean, t_max = analysis.curve_compare(pair)
        lines.append(f"{col},{mx:.6g},{mean:.6g},{t_max:.6g}")
        if col == "gen_err":
            diag["max_abs_dev_gen_err"] = f"{mx:.6g}"
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    if failure:
        raise failure


def _oracle(cfg, out: Path, diag: dict):
    try:
        eps = analysis.oracle_error(cfg.delta, cfg.rho)
    except ValueError as exc:
        raise ConfigError(f"oracle undefined for delta = {cfg.delta}, rho = {cfg.rho}: {exc}") from None
    lines = [f"oracle_error = {eps:.17g}"]
    if cfg.reference_error is not None:
        lines.append(f"reference_error = {cfg.reference_error:.17g}")
        lines.append(f"difference = {cfg.reference_error - eps:.17g}")
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    print(lines[0])


def _sweep(cfg, out: Path, diag: dict):
    worst = EXIT_OK
    for value in cfg.sweep_values:
        sub = out / f"{cfg.sweep_key}={value:g}"
        point = parse_config(to_text(cfg), {"mode": cfg.sweep_mode, cfg.sweep_key: repr(value)})
        point = replace(point, sweep_key="", sweep_values=())
        status = run(point, sub)
        print(f"{sub.name}: exit {status}")
        worst = max(worst, status)
    diag["points"] = len(cfg.sweep_values)
    if worst == EXIT_IO:
        raise OSError("a sweep point failed to write its outputs")
    if worst != EXIT_OK:
        raise SolverFailure("at least one sweep point did not converge")


DISPATCH = {"simulate": _simulate, "dmft": _dmft, "compare": _compare, "oracle": _oracle, "sweep": _sweep}


def write_manifest(cfg, out: Path, diag: dict):
    meta = {"code_version": __version__, "backend": "numba" if USE_NUMBA else "numpy", "seed": cfg.seed}
    meta.update(diag)
    text = to_text(cfg) + "".join(f"# {k} = {v}\n" for k, v in meta.items())
    (out / "manifest.txt").write_text(text)


def run(cfg, out) -> int:
    """Run one configuration into ``out``; returns the exit status."""
    out = Path(out)
    diag = {}
    status = EXIT_OK
    start = time.perf_counter()
    try:
        out.mkdir(parents=True, exist_ok=True)
        try:
            DISPATCH[cfg.mode](cfg, out, diag)
        except (SolverFailure, DivergenceError, FloatingPointError) as exc:
            status = EXIT_SOLVER
            diag["error"] = str(exc)
            log.error("%s", exc)
        diag["wall_time_s"] = f"{time.perf_counter() - start:.3f}"
        diag["status"] = status
        write_manifest(cfg, out, diag)
    except OSError as exc:
        log.error("I/O failure: %s", exc)
        return EXIT_IO
    return status


def build_parser():
    p = argparse.ArgumentParser(prog="sgdmft", description="SGD dynamics on Gaussian mixtures: simulation and DMFT.")
    p.add_argument("mode", choices=MODES)
    p.add_argument("--config", required=True, help="key = value file (a manifest.txt works too)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = {"mode": args.mode}
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"sgdmft: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        cfg = parse_config(text, overrides)
        return run(cfg, args.out)
    except ConfigError as exc:
        print(f"sgdmft: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
