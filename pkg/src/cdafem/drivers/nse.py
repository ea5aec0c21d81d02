"""
Linearly implicit BDF2 for the nudged Navier-Stokes equations.

Each step solves the Taylor-Hood saddle system

    [3/(2dt) M + nu A + K(a) + mu N   B^T] [w]   [M (4 w^n - w^{n-1}) / (2dt) + F + mu C^T u_bar]
    [B                                 0 ] [p] = [0]

with ``a = 2 w^n - w^{n-1}`` and ``K`` the skew-symmetric convection. ``K``
changes every step, so the system is refactorized each time. Free-slip
walls pin the normal (y) velocity component.
"""
from __future__ import annotations

import time

import numpy as np

from ..assembly import divergence_matrix, load_vector, mass_matrix, nse_convection_matrix, pressure_mean_vector
from ..assembly import stiffness_matrix
from ..fem import FeSpace
from ..harness.series import ErrorSeries
from ..observation import ObservationOperator
from .base import RunConfig, StateHistory, ZeroTruth
from .scalar import Constraints
from .stokes import SaddleSystem


def nse_run(vspace: FeSpace, pspace: FeSpace, obs: ObservationOperator | None, dt: float, n_steps: int,
            nu: float, truth=None, forcing=None, w0=None, w1=None, free_slip=("bottom", "top"),
            mean_zero: bool = True, t0: float = 0.0, sink=None, on_step=None) -> ErrorSeries:
    """Nudged (or, with ``obs=None``, plain) BDF2 Navier-Stokes run.

    Without ``w1`` the first step is backward Euler with ``K(w0)``.
    ``sink`` receives the velocity of every step from ``w0`` on.
    """
    truth = ZeroTruth() if truth is None else truth
    truth.check(vspace, dt, n_steps)
    M = mass_matrix(vspace)
    A = stiffness_matrix(vspace, nu)
    B = divergence_matrix(vspace, pspace)
    m = pressure_mean_vector(pspace) if mean_zero else None
    nudge = obs is not None and obs.mode != "direct" and obs.mu > 0
    if nudge:
        A = A + obs.mu * obs.nudging_matrix
    wall = vspace.marked_dofs(free_slip, components=[1]) if free_slip else None
    cons = Constraints(vspace, fixed=wall, obs=obs if obs is not None and obs.mode == "direct" else None)

    def rhs_extra(n, t):
        b = np.zeros(vspace.n_dofs)
        if forcing is not None:
            b += load_vector(vspace, forcing, t)
        if nudge:
            b += obs.mu * obs.nudging_rhs(obs.observations(truth, n, t))
        return b

    def step(mass_coeff, a, rhs, n, t):
        system = SaddleSystem(mass_coeff * M + A + nse_convection_matrix(vspace, a), B, cons.dofs, m)
        w, _ = system.solve(rhs, cons.values(t, truth, obs, n))
        if not np.all(np.isfinite(w)):
            raise FloatingPointError(f"non-finite velocity at step {n}")
        return w

    series = ErrorSeries()
    started = time.perf_counter()

    def record(n, t, w):
        if sink is not None:
            sink.write(w)
        if on_step is not None:
            on_step(n, t, w)
        series.append(n, t, *truth.errors(vspace, w, n, t))

    w = np.zeros(vspace.n_dofs) if w0 is None else np.asarray(w0, dtype=float).copy()
    record(0, t0, w)
    t1 = t0 + dt
    if w1 is None:
        w1 = step(1.0 / dt, w, M @ w / dt + rhs_extra(1, t1), 1, t1)
    else:
        w1 = np.asarray(w1, dtype=float).copy()
    hist = StateHistory(w, w1, t1, 1, dt, t0)
    record(1, t1, w1)
    for n in range(2, n_steps + 1):
        t = t0 + n * dt
        a = 2 * hist.w_curr - hist.w_prev
        rhs = M @ (4 * hist.w_curr - hist.w_prev) / (2 * dt) + rhs_extra(n, t)
        hist.advance(step(1.5 / dt, a, rhs, n, t))
        record(n, hist.t, hist.w_curr)

    series.meta.update(n_dofs=vspace.n_dofs, wall_clock=time.perf_counter() - started, final_state=hist.w_curr)
    return series


def nse_cda_run(cfg: RunConfig, obs: ObservationOperator, truth, pspace: FeSpace, w0=None, w1=None,
                **kw) -> ErrorSeries:
    """Nudged run from ``w0 = w1 = 0`` unless given, against a trajectory truth."""
    vspace = obs.space
    w0 = np.zeros(vspace.n_dofs) if w0 is None else w0
    w1 = np.zeros(vspace.n_dofs) if w1 is None else w1
    return nse_run(vspace, pspace, obs, cfg.dt, cfg.n_steps, cfg.nu, truth=truth, w0=w0, w1=w1, **kw)
