"""Adjoint sensitivities, MMA design update and per-cycle stopping rule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .analysis import AnalysisSystem, simp_derivative
from .design import Projection
from .errors import InfeasibleError, StateError

ASYMPTOTE_INIT = 0.1
ASYMPTOTE_SHRINK = 0.7
ASYMPTOTE_GROW = 1.2
ALBEFA = 0.1
RAA0 = 1e-5


@dataclass
class OptimizerState:
    cycle: int = 1
    dJ1: float = 0.04
    gamma: float = 0.6
    move: float = 0.2
    max_iter: int = 300
    relative: bool = False
    iteration: int = 0
    history: list[float] = field(default_factory=list)
    low: np.ndarray | None = None
    upp: np.ndarray | None = None
    xold1: np.ndarray | None = None
    xold2: np.ndarray | None = None

    @property
    def threshold(self) -> float:
        return self.dJ1 * self.gamma ** (self.cycle - 1)


def sensitivities(system: AnalysisSystem, projection: Projection) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the objective ``z^T u`` and of the volume fraction w.r.t. the design vector."""
    if system.factor is None:
        raise StateError("system has not been solved")
    model = system.model
    dm = model.dofmap
    off = model.point_offsets
    u = system.u
    lam = system.adjoint()
    dE = simp_derivative(system.rho_tilde, system.mat)
    g = np.zeros_like(system.rho_tilde)
    for ker, idx in model.groups:
        dofs = np.array([dm.element_dofs[i] for i in idx])
        dens = ker.energy_density(u[dofs], lam[dofs])  # (ne, ng)
        pts = off[idx][:, None] + np.arange(len(ker.rule))[None, :]
        g[pts] = -dens
    for i in model.constrained:
        ker = model.kernels[i]
        g[off[i] : off[i + 1]] = -ker.energy_density(dm.gather(i, u), dm.gather(i, lam))
    g *= dE
    return projection.W.T @ g, projection.volume_gradient.copy()


def _stationary_point(lam, p0, q0, a, low, upp, alpha, beta, y0=None, tol: float = 1e-13,
                      max_sweeps: int = 100):
    """Minimiser over ``[alpha, beta]`` of ``p0/(U-y) + q0/(y-L) + lam*a*y`` for every variable.

    The derivative is increasing in ``y``, so a bracketed Newton iteration converges to its root
    (or to the bound where it does not change sign).
    """
    la = lam * a * np.ones_like(p0)

    def slope(y):
        return p0 / (upp - y) ** 2 - q0 / (y - low) ** 2 + la

    at_lo = slope(alpha) >= 0.0
    at_hi = slope(beta) <= 0.0
    lo = np.where(at_hi, beta, alpha)
    hi = np.where(at_lo, alpha, beta)
    y = 0.5 * (lo + hi) if y0 is None else np.clip(y0, lo, hi)
    act = np.nonzero(lo < hi)[0]
    yy, lo, hi, P, Q, U, Lo, A = y[act], lo[act], hi[act], p0[act], q0[act], upp[act], low[act], la[act]
    for _ in range(max_sweeps):
        du, dl = U - yy, yy - Lo
        g = P / du**2 - Q / dl**2 + A
        h = 2.0 * P / du**3 + 2.0 * Q / dl**3
        lo = np.where(g < 0.0, yy, lo)
        hi = np.where(g > 0.0, yy, hi)
        step = yy - g / h
        step = np.where((step > lo) & (step < hi), step, 0.5 * (lo + hi))
        done = (np.abs(step - yy) <= tol) | (g == 0.0)
        y[act] = step
        if done.all():
            break
        keep = ~done
        act = act[keep]
        yy, lo, hi, P, Q, U, Lo, A = step[keep], lo[keep], hi[keep], P[keep], Q[keep], U[keep], Lo[keep], A[keep]
    return y


def design_update(rho, gradient, volume_gradient, V0: float, state: OptimizerState) -> np.ndarray:
    """One MMA step for ``min J`` subject to the linear volume constraint ``a^T rho <= V0``.

    The objective gets the usual moving-asymptote approximation; the volume constraint is
    linear and kept exact in the subproblem, whose dual is solved for the single multiplier.
    """
    x = np.asarray(rho, dtype=float)
    g0 = np.asarray(gradient, dtype=float)
    a = np.asarray(volume_gradient, dtype=float)
    if len(g0) != len(x) or len(a) != len(x):
        raise ValueError("gradient length does not match design vector")
    state.iteration += 1
    volume = float(a @ x)
    if not np.any(g0) and volume <= V0:
        return x.copy()

    if state.low is None or state.xold2 is None or len(state.low) != len(x):
        low = x - ASYMPTOTE_INIT
        upp = x + ASYMPTOTE_INIT
    else:
        zz = (x - state.xold1) * (state.xold1 - state.xold2)
        fac = np.where(zz < 0, ASYMPTOTE_SHRINK, np.where(zz > 0, ASYMPTOTE_GROW, 1.0))
        low = x - fac * (state.xold1 - state.low)
        upp = x + fac * (state.upp - state.xold1)
        low = np.clip(low, x - 10.0, x - 0.01)
        upp = np.clip(upp, x + 0.01, x + 10.0)

    alpha = np.maximum.reduce([np.zeros_like(x), low + ALBEFA * (x - low), x - state.move])
    beta = np.minimum.reduce([np.ones_like(x), upp - ALBEFA * (upp - x), x + state.move])

    ux, xl = upp - x, x - low
    gp, gm = np.maximum(g0, 0.0), np.maximum(-g0, 0.0)
    p0 = ux**2 * (1.001 * gp + 0.001 * gm + RAA0)
    q0 = xl**2 * (0.001 * gp + 1.001 * gm + RAA0)

    if float(a @ alpha) > V0 + 1e-12:
        if float(a @ np.zeros_like(x)) > V0 + 1e-12:
            raise InfeasibleError(f"volume bound {V0} is below the attainable minimum")
        y = alpha.copy()  # largest decrease the move limit allows
    else:
        y = _stationary_point(0.0, p0, q0, a, low, upp, alpha, beta)
        if float(a @ y) > V0:
            # volume is decreasing in the multiplier: bracket it, then Brent in log space
            warm = [y]

            def excess(log_lam):
                warm[0] = _stationary_point(np.exp(log_lam), p0, q0, a, low, upp, alpha, beta, warm[0])
                return float(a @ warm[0]) - V0

            lo_l, hi_l = -30.0, 0.0
            while excess(hi_l) > 0.0:
                lo_l, hi_l = hi_l, hi_l + 5.0
                if hi_l > 700.0:
                    break
            log_lam = brentq(excess, lo_l, hi_l, xtol=1e-14, rtol=1e-14) if excess(lo_l) > 0.0 else lo_l
            y = _stationary_point(np.exp(log_lam), p0, q0, a, low, upp, alpha, beta, warm[0])
            # land on the feasible side of the root
            bump = 1e-12
            while float(a @ y) > V0 and bump < 1.0:
                log_lam += bump
                bump *= 10.0
                y = _stationary_point(np.exp(log_lam), p0, q0, a, low, upp, alpha, beta, y)

    state.xold2 = state.xold1 if state.xold1 is not None else x.copy()
    state.xold1 = x.copy()
    state.low, state.upp = low, upp
    return y


def should_stop(history, state: OptimizerState) -> bool:
    if len(history) >= state.max_iter:
        return True
    if len(history) < 2:
        return False
    change = abs(history[-1] - history[-2])
    if state.relative:
        change /= max(abs(history[-2]), 1e-300)
    return change < state.threshold


def continuation_q(cycle: int, schedule: str = "off", q0: float = 3.0) -> float:
    """Penalization exponent for an adaptive cycle under the continuation schedule."""
    if cycle < 1:
        raise ValueError("cycle index starts at 1")
    step = {"off": 0, "+1": 1, "+2": 2}.get(str(schedule))
    if step is None:
        raise ValueError(f"unknown q schedule {schedule!r}")
    return q0 + step * (cycle - 1)
