"""
BDF2 nudged solvers for scalar parabolic problems (heat, transport).

Each step solves

    [3/(2dt) M + kappa A + K + mu N] w^{n+1}
        = M (4 w^n - w^{n-1}) / (2 dt) + F^{n+1} + mu C^T u_bar^{n+1}

with Dirichlet data, or with the measurement DOFs pinned to the truth in
direct mode. The step matrix does not change, so it is factorized once;
``w^1`` comes from one backward-Euler step with the same nudging.
"""
from __future__ import annotations

import time

import numpy as np

from ..assembly import Elimination, convection_matrix, load_vector, mass_matrix, stiffness_matrix
from ..fem import FeSpace
from ..harness.series import ErrorSeries
from ..linalg import factorize
from ..observation import ObservationOperator
from .base import AnalyticTruth, RunConfig, StateHistory, ZeroTruth


class Constraints:
    """Fixed DOFs from boundary data and, in direct mode, measurement nodes.

    Boundary data take precedence where both apply.
    """

    def __init__(self, space: FeSpace, markers=(), boundary=None, obs: ObservationOperator | None = None,
                 fixed=None):
        self.space = space
        self.boundary = boundary
        bdofs = space.marked_dofs(markers) if markers else np.zeros(0, dtype=np.int64)
        if fixed is not None:
            bdofs = np.union1d(bdofs, fixed)
        self.bdofs = np.unique(bdofs)
        self.direct = obs is not None and obs.mode == "direct"
        if self.direct:
            meas = obs.measurement_dofs
            self.mask = ~np.isin(meas, self.bdofs)
            mdofs = meas[self.mask]
        else:
            self.mask = None
            mdofs = np.zeros(0, dtype=np.int64)
        dofs = np.concatenate([self.bdofs, mdofs])
        self.order = np.argsort(dofs, kind="stable")
        self.dofs = dofs[self.order]

    def values(self, t, truth=None, obs=None, n=None) -> np.ndarray:
        if self.boundary is None:
            bvals = np.zeros(len(self.bdofs))
        else:
            x, y = self.space.dof_coords[:, 0], self.space.dof_coords[:, 1]
            g = self.boundary(x, y, t)
            comps = [g] if self.space.components == 1 else list(g)
            full = np.concatenate([np.broadcast_to(np.asarray(c, dtype=float), x.shape) for c in comps])
            bvals = full[self.bdofs]
        parts = [bvals]
        if self.direct:
            parts.append(truth.nodal(obs, n, t)[self.mask])
        return np.concatenate(parts)[self.order]


class _SteppedSystem:
    """Eliminated and factorized step matrix for one time-derivative weight."""

    def __init__(self, matrix, cons: Constraints):
        self.elim = Elimination(matrix, cons.dofs)
        self.lu = factorize(self.elim.matrix)

    def solve(self, rhs, values):
        return self.lu.solve(self.elim.rhs(rhs, values))


def scalar_cda_run(space: FeSpace, obs: ObservationOperator | None, dt: float, n_steps: int,
                   kappa: float, truth=None, forcing=None, velocity=None, markers=(),
                   boundary=None, w0=None, t0: float = 0.0, sink=None, on_step=None,
                   refactor: bool = False, record_every: int = 1) -> ErrorSeries:
    """Run the nudged BDF2 scheme and return the error history.

    Parameters
    ----------
    obs : ObservationOperator or None
        ``None`` or ``mu = 0`` switches nudging off.
    truth : AnalyticTruth, TrajectoryTruth or ZeroTruth
        Provides observations and the reference for errors.
    forcing : callable ``f(x, y, t)`` or None
    velocity : (vspace, coefficients) or None
        Advecting field; the transport term is taken in skew form.
    markers, boundary
        Dirichlet markers and data ``g(x, y, t)`` (zero when ``None``).
    sink : SnapshotWriter or None
        Receives every state, starting with ``w0``.
    on_step : callable ``(n, t, w)`` or None
    refactor : bool
        Refactorize every step instead of reusing the factors.
    """
    truth = ZeroTruth() if truth is None else truth
    truth.check(space, dt, n_steps)
    M = mass_matrix(space)
    L = stiffness_matrix(space, kappa)
    if velocity is not None:
        L = L + convection_matrix(space, velocity, skew=True)
    nudge = obs is not None and obs.mode != "direct" and obs.mu > 0
    if nudge:
        L = L + obs.mu * obs.nudging_matrix
    cons = Constraints(space, markers, boundary, obs if obs is not None and obs.mode == "direct" else None)

    def rhs_extra(n, t):
        b = np.zeros(space.n_dofs)
        if forcing is not None:
            b += load_vector(space, forcing, t)
        if nudge:
            b += obs.mu * obs.nudging_rhs(obs.observations(truth, n, t))
        return b

    def values(n, t):
        return cons.values(t, truth, obs, n)

    series = ErrorSeries()
    started = time.perf_counter()
    w = np.zeros(space.n_dofs) if w0 is None else np.asarray(w0, dtype=float).copy()

    def record(n, t, wn):
        if sink is not None:
            sink.write(wn)
        if on_step is not None:
            on_step(n, t, wn)
        if n % record_every == 0 or n == n_steps:
            series.append(n, t, *truth.errors(space, wn, n, t))

    record(0, t0, w)
    be = _SteppedSystem(M / dt + L, cons)
    t1 = t0 + dt
    w1 = be.solve(M @ w / dt + rhs_extra(1, t1), values(1, t1))
    hist = StateHistory(w, w1, t1, 1, dt, t0)
    record(1, t1, w1)

    bdf = _SteppedSystem(1.5 / dt * M + L, cons)
    for n in range(2, n_steps + 1):
        t = t0 + n * dt
        rhs = M @ (4 * hist.w_curr - hist.w_prev) / (2 * dt) + rhs_extra(n, t)
        if refactor:
            bdf = _SteppedSystem(1.5 / dt * M + L, cons)
        w_next = bdf.solve(rhs, values(n, t))
        if not np.all(np.isfinite(w_next)):
            raise FloatingPointError(f"non-finite state at step {n}")
        hist.advance(w_next)
        record(n, hist.t, w_next)

    series.meta.update(n_dofs=space.n_dofs, wall_clock=time.perf_counter() - started, final_state=hist.w_curr)
    return series


def _unit_square_dirichlet(space):
    return [m for m in ("bottom", "right", "top", "left") if m in space.boundary_dofs]


def heat_cda_run(cfg: RunConfig, obs: ObservationOperator, truth, w0=None, **kw) -> ErrorSeries:
    """Nudged heat equation with Dirichlet data equal to the analytic truth.

    ``truth`` is an analytic field with ``value``, ``grad`` and ``forcing``.
    """
    space = obs.space
    markers = kw.pop("markers", _unit_square_dirichlet(space))
    return scalar_cda_run(
        space, obs, cfg.dt, cfg.n_steps, cfg.kappa, truth=AnalyticTruth(truth),
        forcing=truth.forcing, markers=markers, boundary=truth.value, w0=w0, **kw)


def transport_cda_run(cfg: RunConfig, obs: ObservationOperator, velocity, truth, w0=None, **kw) -> ErrorSeries:
    """Nudged advection-diffusion with zero inflow data and natural outflow.

    ``velocity`` is ``(vspace, coefficients)``; ``truth`` a trajectory source.
    """
    return scalar_cda_run(
        obs.space, obs, cfg.dt, cfg.n_steps, cfg.kappa, truth=truth, velocity=velocity,
        markers=kw.pop("markers", ("inflow",)), w0=w0, **kw)


def g_norm_sq(M, w_curr, w_prev) -> float:
    """Composite BDF2 energy ``||[w_curr; w_prev]||_G^2`` in the ``M`` inner product.

    The newest level carries the weight ``5/2``, the older one ``1/2``;
    this is the pairing under which the BDF2 energy identity holds.
    """
    a = float(w_curr @ (M @ w_curr))
    b = float(w_curr @ (M @ w_prev))
    c = float(w_prev @ (M @ w_prev))
    return 2.5 * a - 2.0 * b + 0.5 * c
