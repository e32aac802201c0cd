"""Method of Moving Asymptotes (Svanberg, 1987) with a primal-dual subproblem solver.

Solves ``min f0(x)  s.t.  f_i(x) <= 0,  xmin <= x <= xmax`` with the usual
artificial variables (a0 = 1, a_i = 0, c_i = 1000, d_i = 1), so every
subproblem is feasible; a positive artificial ``y_i`` means constraint ``i``
had to be relaxed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

ASY_INIT = 0.5
ASY_INCR = 1.2
ASY_DECR = 0.7
ALBEFA = 0.1
RAA0 = 1e-5


@dataclass
class MmaState:
    low: np.ndarray
    upp: np.ndarray
    xold1: np.ndarray
    xold2: np.ndarray
    move: np.ndarray
    iteration: int = 0
    kkt_tol: float = 1e-9
    c: float = 1000.0
    asy_min: float | np.ndarray = 0.01  # closest asymptote distance, fraction of the box
    relaxation: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def new(cls, x: np.ndarray, move=0.2, kkt_tol: float = 1e-9) -> "MmaState":
        x = np.asarray(x, dtype=float)
        return cls(x.copy(), x.copy(), x.copy(), x.copy(), np.broadcast_to(move, x.shape).astype(float),
                   0, kkt_tol)

    def reset(self) -> None:
        """Forget the asymptote history (used after a continuation step)."""
        self.iteration = 0


def _asymptotes(x, xmin, xmax, st: MmaState):
    rng = xmax - xmin
    if st.iteration < 2:
        low = x - ASY_INIT * rng
        upp = x + ASY_INIT * rng
    else:
        zzz = (x - st.xold1) * (st.xold1 - st.xold2)
        factor = np.ones_like(x)
        factor[zzz > 0] = ASY_INCR
        factor[zzz < 0] = ASY_DECR
        low = x - factor * (st.xold1 - st.low)
        upp = x + factor * (st.upp - st.xold1)
        low = np.clip(low, x - 10.0 * rng, x - st.asy_min * rng)
        upp = np.clip(upp, x + st.asy_min * rng, x + 10.0 * rng)
    return low, upp


def mma_step(x, f0val, df0dx, fval, dfdx, state: MmaState, xmin, xmax) -> np.ndarray:
    """One MMA iteration; returns the new design and updates ``state`` in place."""
    x = np.asarray(x, dtype=float)
    xmin = np.broadcast_to(xmin, x.shape).astype(float)
    xmax = np.broadcast_to(xmax, x.shape).astype(float)
    fval = np.atleast_1d(np.asarray(fval, dtype=float))
    dfdx = np.atleast_2d(np.asarray(dfdx, dtype=float))
    df0dx = np.asarray(df0dx, dtype=float)
    if not (np.all(np.isfinite(df0dx)) and np.all(np.isfinite(dfdx)) and np.all(np.isfinite(fval))):
        raise FloatingPointError("non-finite values passed to MMA")
    m = fval.size
    low, upp = _asymptotes(x, xmin, xmax, state)
    rng = xmax - xmin
    alfa = np.maximum.reduce([low + ALBEFA * (x - low), x - state.move * rng, xmin])
    beta = np.minimum.reduce([upp - ALBEFA * (upp - x), x + state.move * rng, xmax])
    ux2 = (upp - x) ** 2
    xl2 = (x - low) ** 2
    inv_rng = 1.0 / np.maximum(rng, 1e-5)
    p0 = np.maximum(df0dx, 0.0)
    q0 = np.maximum(-df0dx, 0.0)
    pq0 = 0.001 * (p0 + q0) + RAA0 * inv_rng
    p0 = (p0 + pq0) * ux2
    q0 = (q0 + pq0) * xl2
    P = np.maximum(dfdx, 0.0)
    Q = np.maximum(-dfdx, 0.0)
    PQ = 0.001 * (P + Q) + RAA0 * inv_rng[None, :]
    P = (P + PQ) * ux2[None, :]
    Q = (Q + PQ) * xl2[None, :]
    b = P @ (1.0 / (upp - x)) + Q @ (1.0 / (x - low)) - fval
    a0, a = 1.0, np.zeros(m)
    c, d = np.full(m, state.c), np.ones(m)
    xnew, y = subsolv(m, x.size, state.kkt_tol, low, upp, alfa, beta, p0, q0, P, Q, a0, a, b, c, d)
    state.xold2 = state.xold1
    state.xold1 = x.copy()
    state.low, state.upp = low, upp
    state.iteration += 1
    state.relaxation = y
    if np.any(y > 1e-6):
        logger.info("MMA relaxed constraints %s by %s", np.flatnonzero(y > 1e-6), y[y > 1e-6])
    return np.clip(xnew, xmin, xmax)


def subsolv(m, n, epsimin, low, upp, alfa, beta, p0, q0, P, Q, a0, a, b, c, d):
    """Primal-dual Newton method for the separable MMA subproblem."""
    een, eem = np.ones(n), np.ones(m)
    epsi = 1.0
    x = 0.5 * (alfa + beta)
    y = eem.copy()
    z = 1.0
    lam = eem.copy()
    xsi = np.maximum(1.0 / (x - alfa), 1.0)
    eta = np.maximum(1.0 / (beta - x), 1.0)
    mu = np.maximum(eem, 0.5 * c)
    zet = 1.0
    s = eem.copy()

    def residual(x, y, z, lam, xsi, eta, mu, zet, s, epsi):
        ux1, xl1 = upp - x, x - low
        plam = p0 + P.T @ lam
        qlam = q0 + Q.T @ lam
        gvec = P @ (1.0 / ux1) + Q @ (1.0 / xl1)
        dpsidx = plam / ux1**2 - qlam / xl1**2
        return np.concatenate([
            dpsidx - xsi + eta,
            c + d * y - mu - lam,
            [a0 - zet - a @ lam],
            gvec - a * z - y + s - b,
            xsi * (x - alfa) - epsi,
            eta * (beta - x) - epsi,
            mu * y - epsi,
            [zet * z - epsi],
            lam * s - epsi,
        ])

    while epsi > epsimin:
        res = residual(x, y, z, lam, xsi, eta, mu, zet, s, epsi)
        resnorm, resmax = np.linalg.norm(res), np.max(np.abs(res))
        inner = 0
        while resmax > 0.9 * epsi and inner < 200:
            inner += 1
            ux1, xl1 = upp - x, x - low
            ux2, xl2 = ux1**2, xl1**2
            plam = p0 + P.T @ lam
            qlam = q0 + Q.T @ lam
            gvec = P @ (1.0 / ux1) + Q @ (1.0 / xl1)
            GG = P / ux2[None, :] - Q / xl2[None, :]
            dpsidx = plam / ux2 - qlam / xl2
            delx = dpsidx - epsi / (x - alfa) + epsi / (beta - x)
            dely = c + d * y - lam - epsi / y
            delz = a0 - a @ lam - epsi / z
            dellam = gvec - a * z - y - b + epsi / lam
            diagx = 2.0 * (plam / (ux2 * ux1) + qlam / (xl2 * xl1)) + xsi / (x - alfa) + eta / (beta - x)
            diagy = d + mu / y
            diaglamyi = s / lam + 1.0 / diagy
            blam = dellam + dely / diagy - GG @ (delx / diagx)
            Alam = np.diag(diaglamyi) + (GG / diagx[None, :]) @ GG.T
            AA = np.block([[Alam, a[:, None]], [a[None, :], np.array([[-zet / z]])]])
            sol = np.linalg.solve(AA, np.concatenate([blam, [delz]]))
            dlam, dz = sol[:m], sol[m]
            dx = -delx / diagx - (GG.T @ dlam) / diagx
            dy = -dely / diagy + dlam / diagy
            dxsi = -xsi + epsi / (x - alfa) - xsi * dx / (x - alfa)
            deta = -eta + epsi / (beta - x) + eta * dx / (beta - x)
            dmu = -mu + epsi / y - mu * dy / y
            dzet = -zet + epsi / z - zet * dz / z
            ds = -s + epsi / lam - s * dlam / lam
            xx = np.concatenate([y, [z], lam, xsi, eta, mu, [zet], s])
            dxx = np.concatenate([dy, [dz], dlam, dxsi, deta, dmu, [dzet], ds])
            stmxx = np.max(-1.01 * dxx / xx)
            stmalbe = max(np.max(-1.01 * dx / (x - alfa)), np.max(1.01 * dx / (beta - x)))
            steg = 1.0 / max(stmalbe, stmxx, 1.0)
            old = (x, y, z, lam, xsi, eta, mu, zet, s)
            step = (dx, dy, dz, dlam, dxsi, deta, dmu, dzet, ds)
            itto = 0
            resinew = 2.0 * resnorm
            while resinew > resnorm and itto < 50:
                itto += 1
                x, y, z, lam, xsi, eta, mu, zet, s = (o + steg * dd for o, dd in zip(old, step))
                res = residual(x, y, z, lam, xsi, eta, mu, zet, s, epsi)
                resinew = np.linalg.norm(res)
                steg /= 2.0
            resnorm, resmax = resinew, np.max(np.abs(res))
        epsi *= 0.1
    return x, y
