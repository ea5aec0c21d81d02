"""Closed-form fields used by the experiments."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

pi = np.pi


@dataclass(frozen=True)
class AnalyticField:
    """A field ``value(x, y, t)`` with optional gradient and PDE forcing.

    Vector fields return tuples: ``value -> (u1, u2)`` and
    ``grad -> ((u1x, u1y), (u2x, u2y))``.
    """

    value: Callable
    grad: Callable | None = None
    forcing: Callable | None = None
    components: int = 1

    def __call__(self, x, y, t=0.0):
        return self.value(x, y, t)


def heat_manufactured(kappa: float = 1.0) -> AnalyticField:
    """``u = sin(t + 2 pi x + pi y)`` with forcing ``f = u_t - kappa lap u``."""

    def value(x, y, t):
        return np.sin(t + 2 * pi * x + pi * y)

    def grad(x, y, t):
        c = np.cos(t + 2 * pi * x + pi * y)
        return 2 * pi * c, pi * c

    def forcing(x, y, t):
        s = t + 2 * pi * x + pi * y
        return np.cos(s) + 5 * pi ** 2 * kappa * np.sin(s)

    return AnalyticField(value, grad, forcing)


def poisson_bump() -> AnalyticField:
    """``sin(pi x) sin(pi y)``, vanishing on the unit square boundary."""

    def value(x, y, t=0.0):
        return np.sin(pi * x) * np.sin(pi * y)

    def grad(x, y, t=0.0):
        return pi * np.cos(pi * x) * np.sin(pi * y), pi * np.sin(pi * x) * np.cos(pi * y)

    return AnalyticField(value, grad)


def curl_bump() -> AnalyticField:
    """Divergence-free ``curl psi`` for ``psi = sin^2(pi x) sin^2(pi y)``."""

    def value(x, y, t=0.0):
        u1 = pi * np.sin(pi * x) ** 2 * np.sin(2 * pi * y)
        u2 = -pi * np.sin(2 * pi * x) * np.sin(pi * y) ** 2
        return u1, u2

    def grad(x, y, t=0.0):
        s2 = np.sin(2 * pi * x) * np.sin(2 * pi * y)
        u1x = pi ** 2 * s2
        u1y = 2 * pi ** 2 * np.sin(pi * x) ** 2 * np.cos(2 * pi * y)
        u2x = -2 * pi ** 2 * np.cos(2 * pi * x) * np.sin(pi * y) ** 2
        u2y = -pi ** 2 * s2
        return (u1x, u1y), (u2x, u2y)

    return AnalyticField(value, grad, components=2)


def rigid_rotation() -> AnalyticField:
    def value(x, y, t=0.0):
        return -y + 0.0 * x, x + 0.0 * y

    def grad(x, y, t=0.0):
        z = np.zeros_like(np.asarray(x, dtype=float))
        return (z, z - 1.0), (z + 1.0, z)

    return AnalyticField(value, grad, components=2)


KH_DELTA0 = 1.0 / 28.0
KH_UINF = 1.0
KH_NOISE = 1e-3


def kh_initial(x, y, delta0: float = KH_DELTA0, u_inf: float = KH_UINF, c_n: float = KH_NOISE):
    """Kelvin-Helmholtz shear layer with a small streamfunction perturbation."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    env = u_inf * np.exp(-((y - 0.5) ** 2) / delta0 ** 2)
    modes = np.cos(8 * pi * x) + np.cos(20 * pi * x)
    psi_y = -2.0 * (y - 0.5) / delta0 ** 2 * env * modes
    psi_x = env * (-8 * pi * np.sin(8 * pi * x) - 20 * pi * np.sin(20 * pi * x))
    u1 = u_inf * np.tanh((2 * y - 1) / delta0) + c_n * psi_y
    u2 = -c_n * psi_x
    return u1, u2


def kh_viscosity(reynolds: float, delta0: float = KH_DELTA0, u_inf: float = KH_UINF) -> float:
    return delta0 * u_inf / reynolds


BLOB_CENTERS = ((1.0, 1.5), (5.0, -0.5))
BLOB_RADIUS = 0.1
BLOB_VALUE = 3.0


def blobs(x, y, t=0.0):
    """Contaminant concentration: 3 inside two small discs, 0 elsewhere."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.zeros(np.broadcast(x, y).shape)
    for cx, cy in BLOB_CENTERS:
        out[(x - cx) ** 2 + (y - cy) ** 2 < BLOB_RADIUS ** 2] = BLOB_VALUE
    return out
