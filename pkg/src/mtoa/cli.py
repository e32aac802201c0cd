"""Command-line front end: ``mtoa run | verify-gradients | presets | export``.

Exit codes: 0 feasible result, 1 gradient check failed, 2 configuration
error, 3 finite-element failure, 4 infeasible at the iteration limit.
Set ``MTOA_NUM_THREADS`` to cap BLAS/OpenMP threads.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import export
from .adjoint import GRADIENT_TOLERANCES, Evaluator, Schedule, gradient_check
from .fem import FESolveError
from .model import (ConfigError, DesignState, JointSpec, MaterialSpec, OptimizationConfig,
                    build_problem, initialize_state, resolve_document)
from .optimizer import multi_start
from .presets import PRESETS, describe, unknown_preset

logger = logging.getLogger("mtoa")

EXIT_OK, EXIT_GRADIENT, EXIT_CONFIG, EXIT_FE, EXIT_INFEASIBLE = 0, 1, 2, 3, 4
THREADS_ENV = "MTOA_NUM_THREADS"

_SECTION_KEYS = {
    "material": {f.name for f in fields(MaterialSpec)},
    "joint": {f.name for f in fields(JointSpec)},
    "optimization": {f.name for f in fields(OptimizationConfig)},
}


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, assignments) -> dict:
    """Apply ``key=value`` strings; bare keys resolve to the unique section defining them."""
    doc = json.loads(json.dumps(doc))
    for item in assignments or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value", item)
        key, raw = item.split("=", 1)
        key = key.strip()
        path = key.split(".")
        if len(path) == 1:
            owners = [s for s, keys in _SECTION_KEYS.items() if key in keys]
            if len(owners) != 1:
                where = "several sections" if owners else "no section"
                raise ConfigError(f"bare key matches {where}; use section.key", key)
            path = [owners[0], key]
        node = doc
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError("cannot descend into a non-object", key)
        node[path[-1]] = _parse_value(raw)
    return doc


def load_document(target: str, overrides=()) -> dict:
    """Preset name or JSON file path, plus overrides, resolved to a full document."""
    path = Path(target)
    if path.suffix == ".json" or path.exists():
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}", "config") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"parse error: {exc}", "config") from exc
    elif target in PRESETS:
        doc = {"preset": target}
    else:
        raise unknown_preset(target)
    return resolve_document(apply_overrides(doc, overrides))


def _limit_threads():
    n = os.environ.get(THREADS_ENV)
    if not n:
        return None
    try:
        count = int(n)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer", THREADS_ENV) from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(count, 1))


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def cmd_run(args) -> int:
    doc = load_document(args.target, args.set)
    if args.seed is not None:
        doc.setdefault("optimization", {})["rng_seed"] = args.seed
    output = doc.get("output", {}) or {}
    problem = build_problem(doc)
    cfg = problem.config
    starts = args.starts if args.starts is not None else cfg.n_starts
    name = Path(args.target).stem
    out = Path(args.out or output.get("dir") or f"runs/{name}-seed{cfg.rng_seed}")

    def progress(seed, it, row, ev):
        if args.verbose or it % 25 == 0:
            logger.info("seed %d iter %d F=%s g1=%s g2=%s beta=%g", seed, it, _fmt(row["F"]),
                        _fmt(row["g1"]), _fmt(row["g2"]), row["beta"])

    try:
        result = multi_start(problem, starts, cfg.rng_seed, progress)
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FE
    best = result.best
    evaluator = Evaluator(problem)
    ev = evaluator.evaluate(best.final_state, Schedule.from_config(cfg, best.final_beta),
                            gradients=False)
    starts_info = [{"seed": r.seed, "status": r.status, "F": r.final.get("F"),
                    "feasible": r.feasible, "iterations": len(r.history)} for r in result.records]
    export.write_bundle(out, problem, evaluator, ev, best, {"starts": starts_info})
    (out / "starts").mkdir(exist_ok=True)
    for r in result.records:
        (out / "starts" / f"seed{r.seed}.csv").write_text(r.to_csv())
    print(f"status={best.status} seed={best.seed} F={_fmt(ev.F)} g1={_fmt(ev.g1)} g2={_fmt(ev.g2)} "
          f"iterations={len(best.history)} out={out}")
    if best.status == "fe_failure":
        return EXIT_FE
    return EXIT_OK if best.feasible else EXIT_INFEASIBLE


def gradient_state(problem, seed: int) -> DesignState:
    """Random interior design so that every term of the pipeline is exercised."""
    rng = np.random.default_rng(seed)
    st = initialize_state(problem.mesh, problem.config, seed)
    st.rho[:] = np.where(problem.mesh.domain_mask, rng.uniform(0.2, 0.9, st.rho.shape), 0.0)
    st.memberships[:] = rng.uniform(0.1, 0.9, st.memberships.shape)
    K = st.orientation_vars.shape[0]
    st.orientation_vars[:, :3] = np.where(st.orientation_vars[:, :3] > 0,
                                          rng.uniform(0.2, 0.8, (K, 3)), st.orientation_vars[:, :3])
    free_off = [s for s in (3, 4, 5) if problem.mesh.dim == 3 or s == 3]
    st.orientation_vars[:, free_off] = rng.uniform(-0.8, 0.8, (K, len(free_off)))
    return st


def verify_gradients(preset: str = "cantilever2d", nelx: int = 12, nely: int = 8, samples: int = 30,
                     seed: int = 0, beta: float = 8.0, step: float = 1e-5, sigma_bar: float | None = None,
                     overrides=()) -> tuple[dict, object, Schedule]:
    """Adjoint vs central differences on a random interior design; returns (report, problem, schedule)."""
    if preset not in PRESETS:
        raise unknown_preset(preset)
    base = {"preset": preset, "mesh": {"nelx": nelx, "nely": nely}, "optimization": {"K": 2}}
    doc = resolve_document(apply_overrides(base, overrides))
    problem = build_problem(doc)
    state = gradient_state(problem, seed)
    schedule = Schedule.from_config(problem.config, beta)
    if sigma_bar is None and not any(o.split("=")[0].endswith("sigma_bar") for o in overrides or ()):
        # half the median stress of the sample state puts the aggregate on its active branch
        ev = Evaluator(problem).evaluate(state, schedule, gradients=False)
        sigma_bar = 0.5 * float(np.median(ev.von_mises[ev.von_mises > 0]))
    if sigma_bar is not None:
        doc["optimization"]["sigma_bar"] = sigma_bar
        problem = build_problem(doc)
    report = gradient_check(Evaluator(problem), state, samples, seed, step, schedule)
    return report, problem, schedule


def cmd_verify_gradients(args) -> int:
    report, problem, schedule = verify_gradients(args.preset, args.nelx, args.nely, args.samples, args.seed,
                                                 args.beta, args.step, args.sigma_bar, args.set or ())
    ok = True
    print(f"{'functional':<10} {'class':<5} {'worst rel. error':>16} {'tolerance':>9}")
    for (fn, cls), err in report.items():
        tol = GRADIENT_TOLERANCES[fn]
        ok &= err <= tol
        print(f"{fn:<10} {cls:<5} {err:>16.3e} {tol:>9.0e} {'ok' if err <= tol else 'FAIL'}")
    print(f"sigma_bar={_fmt(problem.config.sigma_bar)} beta={_fmt(schedule.beta)} step={args.step:g}")
    return EXIT_OK if ok else EXIT_GRADIENT


def cmd_presets(args) -> int:
    for name in PRESETS:
        print(f"{name:<14} {describe(name)}")
    return EXIT_OK


def cmd_export(args) -> int:
    path = Path(args.snapshot)
    if path.is_dir():
        path = path / "state.json"
    try:
        snap = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read snapshot: {exc}", "snapshot") from exc
    problem = build_problem(snap["problem"])
    state = DesignState.from_dict(snap["state"])
    state.check(problem.mesh, problem.config.K)
    evaluator = Evaluator(problem)
    ev = evaluator.evaluate(state, Schedule.from_config(problem.config, snap.get("beta")),
                            gradients=False)
    out = Path(args.out or path.parent / "export")
    export.write_bundle(out, problem, evaluator, ev, extra={"seed": snap.get("seed", 0)},
                        previews=not args.no_previews)
    print(f"F={_fmt(ev.F)} g1={_fmt(ev.g1)} g2={_fmt(ev.g2)} out={out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtoa", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="optimise a preset or JSON config")
    run.add_argument("target", help="preset name or path to a JSON config")
    run.add_argument("--seed", type=int, help="first multi-start seed")
    run.add_argument("--starts", type=int, help="number of multi-start runs")
    run.add_argument("--out", help="output directory")
    run.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="config override, e.g. joint.Ej=16 or sigma_bar=15")
    run.set_defaults(func=cmd_run)

    vg = sub.add_parser("verify-gradients", help="adjoint vs central differences")
    vg.add_argument("preset", nargs="?", default="cantilever2d")
    vg.add_argument("--samples", type=int, default=30, help="variables per class")
    vg.add_argument("--seed", type=int, default=0)
    vg.add_argument("--nelx", type=int, default=12)
    vg.add_argument("--nely", type=int, default=8)
    vg.add_argument("--beta", type=float, default=8.0)
    vg.add_argument("--step", type=float, default=1e-5)
    vg.add_argument("--sigma-bar", type=float, help="default: half the median stress")
    vg.add_argument("--set", action="append", metavar="KEY=VALUE")
    vg.set_defaults(func=cmd_verify_gradients)

    pr = sub.add_parser("presets", help="list built-in problems")
    pr.set_defaults(func=cmd_presets)

    ex = sub.add_parser("export", help="re-export fields from a state snapshot")
    ex.add_argument("snapshot", help="state.json or a run directory")
    ex.add_argument("--out", help="output directory (default: <snapshot dir>/export)")
    ex.add_argument("--no-previews", action="store_true")
    ex.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        limits = _limit_threads()
        try:
            return args.func(args)
        finally:
            if limits is not None:
                limits.restore_original_limits()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FESolveError as exc:
        print(f"finite-element failure: {exc}", file=sys.stderr)
        return EXIT_FE
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
