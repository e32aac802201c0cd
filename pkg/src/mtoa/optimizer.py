"""MMA-driven optimisation loop with Heaviside continuation and multi-start."""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .adjoint import Evaluator, Schedule
from .fem import FESolveError
from .mma import MmaState, mma_step
from .model import DesignState, Problem, free_orientation_slots, initialize_state
from .orientation import Q_LOWER, Q_UPPER

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-3
HISTORY_COLUMNS = ("iter", "F", "g1", "g2", "max_interface_stress", "gray_level",
                   "membership_discreteness", "beta", "beta_interface", "stress_active")


class DesignLayout:
    """Packs the active part of a DesignState into one MMA vector ``[rho; m; q]``."""

    def __init__(self, mesh, K: int, move_rho: float = 0.2, move_q: float = 0.1,
                 asy_min: float = 0.01, asy_min_q: float = 0.001):
        self.active = mesh.active
        self.K = K
        self.q_slots = np.array(free_orientation_slots(mesh.dim))
        na = self.active.size
        nq = K * self.q_slots.size
        self.sizes = (na, na * K, nq)
        self.n = sum(self.sizes)
        self.xmin = np.concatenate([np.zeros(na * (K + 1)), np.tile(Q_LOWER[self.q_slots], K)])
        self.xmax = np.concatenate([np.ones(na * (K + 1)), np.tile(Q_UPPER[self.q_slots], K)])
        self.move = np.concatenate([np.full(na * (K + 1), move_rho), np.full(nq, move_q)])
        self.asy_min = np.concatenate([np.full(na * (K + 1), asy_min), np.full(nq, asy_min_q)])

    def block_changes(self, x, x_prev) -> dict:
        out, start = {}, 0
        for name, size in zip(("rho", "m", "q"), self.sizes):
            d = np.abs(x[start:start + size] - x_prev[start:start + size])
            out[name] = float(d.max()) if size else 0.0
            start += size
        return out

    def pack(self, s: DesignState) -> np.ndarray:
        return np.concatenate([s.rho[self.active], s.memberships[self.active].ravel(),
                               s.orientation_vars[:, self.q_slots].ravel()])

    def unpack(self, x: np.ndarray, template: DesignState) -> DesignState:
        na, nm, _ = self.sizes
        s = template.copy()
        s.rho[self.active] = x[:na]
        s.memberships[self.active] = x[na:na + nm].reshape(-1, self.K)
        s.orientation_vars[:, self.q_slots] = x[na + nm:].reshape(self.K, -1)
        return s


@dataclass
class RunRecord:
    seed: int
    history: list = field(default_factory=list)
    timings: list = field(default_factory=list)
    final_state: DesignState | None = None
    status: str = "running"
    message: str = ""
    diagnostics: dict = field(default_factory=dict)
    build_vectors: list = field(default_factory=list)
    selected: int = -1  # history index of final_state

    @property
    def final(self) -> dict:
        return self.history[self.selected] if self.history else {}

    @property
    def feasible(self) -> bool:
        f = self.final
        return bool(f) and f["g1"] <= FEASIBILITY_TOL and f["g2"] <= FEASIBILITY_TOL

    @property
    def final_beta(self) -> float:
        return self.final.get("beta", 0.0)

    @property
    def wall_time(self) -> float:
        return float(sum(self.timings))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for row in self.history:
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in HISTORY_COLUMNS])
        return buf.getvalue()


def _converged(history, tol: float, window: int) -> bool:
    if len(history) <= window:
        return False
    F = [h["F"] for h in history[-(window + 1):]]
    return all(abs(b - a) / max(abs(b), 1e-300) < tol for a, b in zip(F[:-1], F[1:]))


def run_optimization(problem: Problem, seed: int | None = None, evaluator: Evaluator | None = None,
                     callback=None, initial: DesignState | None = None) -> RunRecord:
    """Minimise compliance under the volume and interface-stress constraints."""
    mesh, _, _, cfg = problem
    seed = cfg.rng_seed if seed is None else seed
    evaluator = evaluator or Evaluator(problem)
    state = initial.copy() if initial is not None else initialize_state(mesh, cfg, seed)
    layout = DesignLayout(mesh, cfg.K, cfg.move_rho, cfg.move_q, cfg.asy_min, cfg.asy_min_q)
    x = layout.pack(state)
    mma = MmaState.new(x, layout.move)
    mma.asy_min = layout.asy_min
    record = RunRecord(seed)
    beta = cfg.beta_start
    last_raise = 0
    ev = None
    best = None  # (F, index, state, diagnostics): best feasible iterate at the final beta
    for it in range(cfg.max_iter):
        t0 = time.perf_counter()
        schedule = Schedule.from_config(cfg, beta)
        stress_on = beta >= cfg.beta_max if cfg.stress_start is None else it >= cfg.stress_start
        try:
            ev = evaluator.evaluate(state, schedule, gradients=True, stress_gradient=stress_on)
        except FESolveError as exc:
            record.status, record.message = "fe_failure", str(exc)
            logger.error("FE failure at iteration %d: %s", it, exc)
            break
        diag = evaluator.diagnostics(ev)
        row = {"iter": it, "F": ev.F, "g1": ev.g1, "g2": ev.g2,
               "max_interface_stress": diag["max_interface_stress"],
               "gray_level": diag["gray_level"],
               "membership_discreteness": diag["membership_discreteness"],
               "beta": float(schedule.beta), "beta_interface": float(schedule.beta_interface),
               "stress_active": int(stress_on)}
        record.history.append(row)
        record.final_state = state
        record.diagnostics = diag
        if callback is not None:
            callback(it, row, ev)
        feasible = ev.g1 <= FEASIBILITY_TOL and (ev.g2 <= FEASIBILITY_TOL or not stress_on)
        at_final_beta = beta >= cfg.beta_max
        if at_final_beta and ev.g1 <= FEASIBILITY_TOL and ev.g2 <= FEASIBILITY_TOL \
                and (best is None or ev.F < best[0]):
            best = (ev.F, it, state, diag)
        if (at_final_beta and feasible and ev.g2 <= FEASIBILITY_TOL
                and _converged(record.history, cfg.obj_tol, cfg.obj_tol_window)):
            record.status = "converged"
            record.timings.append(time.perf_counter() - t0)
            break
        if it == cfg.max_iter - 1:
            record.timings.append(time.perf_counter() - t0)
            break
        # per-iteration normalisation keeps the objective O(1); asymptotes do not depend on it
        f_scale = abs(ev.F) if ev.F != 0 else 1.0
        sens = ev.sensitivities
        df0 = layout.pack(sens.dF) / f_scale
        g = np.array([ev.g1, ev.g2 if stress_on else -1.0])
        dg = np.vstack([layout.pack(sens.dg1), layout.pack(sens.dg2) if stress_on else np.zeros(layout.n)])
        x_prev = x
        x = mma_step(x, ev.F / f_scale, df0, g, dg, mma, layout.xmin, layout.xmax)
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug("iteration %d: max change per block %s", it, layout.block_changes(x, x_prev))
        state = layout.unpack(x, state)
        state.clamp(mesh)
        if it + 1 - last_raise >= cfg.beta_period and beta < cfg.beta_max and feasible:
            beta = min(beta * cfg.beta_factor, cfg.beta_max)
            last_raise = it + 1
            # a sharper projection turns the same raw step into a larger jump in rho~
            mma.move = layout.move * (cfg.beta_start / beta) ** cfg.move_decay
            logger.info("iteration %d: beta -> %g", it + 1, beta)
        record.timings.append(time.perf_counter() - t0)
    if record.status == "running" and best is not None and best[1] != it:
        # stress-constrained runs can oscillate around the limit; keep the best feasible iterate
        _, record.selected, record.final_state, record.diagnostics = best
        ev = evaluator.evaluate(record.final_state, Schedule.from_config(cfg, beta), gradients=False)
    if record.status == "running":
        record.status = "max_iter" if record.feasible else "infeasible"
    if ev is not None:
        record.build_vectors = evaluator.build_vectors(ev)
    return record


@dataclass
class MultiStartResult:
    best: RunRecord
    records: list


def multi_start(problem: Problem, n_starts: int | None = None, seed0: int | None = None,
                callback=None) -> MultiStartResult:
    """Independent runs with seeds ``seed0 .. seed0 + n - 1``; best feasible F wins."""
    cfg = problem.config
    n_starts = cfg.n_starts if n_starts is None else n_starts
    seed0 = cfg.rng_seed if seed0 is None else seed0
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    evaluator = Evaluator(problem)
    records = []
    for i in range(n_starts):
        cb = None if callback is None else (lambda it, row, ev, s=seed0 + i: callback(s, it, row, ev))
        records.append(run_optimization(problem, seed0 + i, evaluator, cb))
    done = [r for r in records if r.status != "fe_failure"]
    if not done:
        raise RuntimeError("all runs failed: " + "; ".join(r.message for r in records))
    feasible = [r for r in done if r.feasible]
    pool = feasible or done
    best = min(pool, key=lambda r: r.final["F"])
    return MultiStartResult(best, records)
