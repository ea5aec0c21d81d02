"""Run configuration, two-level time state, and truth sources."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..harness.norms import DiscreteNorms, analytic_error
from .snapshot import SnapshotError, Trajectory

PROBLEMS = ("heat", "transport", "nse", "stokes", "poisson_proj", "stokes_proj")


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


@dataclass(frozen=True)
class RunConfig:
    """Everything a driver needs besides the discrete spaces.

    ``n`` is the number of uniform cells per unit length (``h = 1/n``
    before an optional barycentric split); ``mu = inf`` selects direct
    enforcement.
    """

    problem: str
    dt: float = 1e-3
    T: float = 1.0
    kappa: float = 1.0
    nu: float = 1.0
    mu: float = math.inf
    mode: str | None = None
    H: float = 1.0 / 9.0
    n: int = 32
    barycentric: bool = False
    degree: int = 2
    allow_unaligned: bool = False
    truth: str = "analytic"  # or a snapshot path
    initial: str = "zero"
    extra: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def validate(self) -> "RunConfig":
        def bad(name, msg):
            raise ConfigError(f"{name}: {msg}")

        if self.problem not in PROBLEMS:
            bad("problem", f"unknown kind {self.problem!r}; expected one of {PROBLEMS}")
        timed = self.problem in ("heat", "transport", "nse")
        if timed:
            if not (self.dt > 0 and math.isfinite(self.dt)):
                bad("dt", f"must be positive, got {self.dt}")
            if not self.T >= self.dt:
                bad("T", f"must be at least dt={self.dt}, got {self.T}")
            if abs(self.n_steps * self.dt - self.T) > 1e-9 * max(1.0, self.T):
                bad("T", f"T={self.T} is not a whole number of steps of dt={self.dt}")
        if self.problem in ("heat", "transport", "poisson_proj") and not self.kappa > 0:
            bad("kappa", f"must be positive, got {self.kappa}")
        if self.problem in ("nse", "stokes", "stokes_proj") and not self.nu > 0:
            bad("nu", f"must be positive, got {self.nu}")
        if not (self.mu >= 0):
            bad("mu", f"must be >= 0 or inf, got {self.mu}")
        if self.mode is not None and self.mode not in ("galerkin", "lumped", "nodal", "direct"):
            bad("mode", f"unknown nudging mode {self.mode!r}")
        if self.mode == "direct" and not math.isinf(self.mu):
            bad("mode", "direct mode requires mu = inf")
        if not self.H > 0:
            bad("H", f"must be positive, got {self.H}")
        if self.n < 1:
            bad("n", f"must be a positive cell count, got {self.n}")
        if self.degree not in (1, 2):
            bad("degree", f"must be 1 or 2, got {self.degree}")
        if not self.allow_unaligned and self.mu > 0:
            # coarse boxes must be unions of uniform cells
            k = self.H * self.n
            if abs(k - round(k)) > 1e-9 or round(k) < 1:
                bad("H", f"H={self.H:.6g} must be a multiple of h=1/{self.n} "
                         "(set allow_unaligned to clip boxes and snap nodes)")
        return self


@dataclass
class StateHistory:
    """The two BDF2 levels ``w^{n-1}, w^n`` at time ``t = t0 + n dt``."""

    w_prev: np.ndarray
    w_curr: np.ndarray
    t: float
    step_index: int
    dt: float
    t0: float = 0.0

    def __post_init__(self):
        if self.w_prev.shape != self.w_curr.shape:
            raise ValueError("BDF2 levels must share the space dimension")

    def advance(self, w_next: np.ndarray) -> None:
        self.w_prev, self.w_curr = self.w_curr, w_next
        self.step_index += 1
        self.t = self.t0 + self.step_index * self.dt


class AnalyticTruth:
    """Truth given by closed-form value/gradient (and forcing) callables."""

    def __init__(self, field):
        self.field = field

    def check(self, space, dt, n_steps):
        pass

    def averages(self, obs, n, t):
        return obs.truth_averages(self.field.value, t)

    def nodal(self, obs, n, t):
        return obs.nodal_values(self.field.value, t)

    def errors(self, space, w, n, t):
        return analytic_error(w, self.field, space, t)


class TrajectoryTruth:
    """Truth read step by step from a stored trajectory on the same space."""

    def __init__(self, traj: Trajectory):
        self.traj = traj
        self._norms = None

    def check(self, space, dt, n_steps):
        if self.traj.n_dofs != space.n_dofs or self.traj.mesh != space.mesh.fingerprint:
            raise SnapshotError("truth trajectory does not live on the run's space")
        if abs(self.traj.dt - dt) > 1e-12 * dt:
            raise SnapshotError(f"truth trajectory has dt={self.traj.dt}, run uses dt={dt}")
        if self.traj.steps < n_steps:
            raise SnapshotError(f"truth trajectory exhausted: {self.traj.steps} steps stored, {n_steps} needed")

    def state(self, n):
        return self.traj.state(n)

    def averages(self, obs, n, t):
        return obs.apply_IH(self.state(n))

    def nodal(self, obs, n, t):
        return self.state(n)[obs.measurement_dofs]

    def errors(self, space, w, n, t):
        if self._norms is None:
            self._norms = DiscreteNorms(space)
        return self._norms(w - self.state(n))


class ZeroTruth:
    """The zero field; errors are the solution's own norms."""

    def __init__(self):
        self._norms = None

    def check(self, space, dt, n_steps):
        pass

    def averages(self, obs, n, t):
        return np.zeros(len(obs.D_full))

    def nodal(self, obs, n, t):
        return np.zeros(len(obs.measurement_dofs))

    def errors(self, space, w, n, t):
        if self._norms is None:
            self._norms = DiscreteNorms(space)
        return self._norms(w)
