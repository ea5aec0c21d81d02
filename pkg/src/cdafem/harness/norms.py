"""L2 and H1-seminorm errors against analytic or discrete truth."""
from __future__ import annotations

import numpy as np

from ..assembly import mass_matrix, stiffness_matrix
from ..fem import FeSpace, quadrature


def _as_list(vals, ncomp):
    return [vals] if ncomp == 1 else list(vals)


def analytic_error(w: np.ndarray, field, space: FeSpace, t: float = 0.0):
    """Errors of ``w`` against ``field`` by quadrature of exactness ``2k + 2``.

    ``field`` provides ``value(x, y, t)`` and, for the H1 part,
    ``grad(x, y, t)``; without a gradient the seminorm error is ``nan``.
    """
    rule = quadrature(2 * space.degree + 2)
    X = space.geometry.map_points(rule.points)
    x, y = X[..., 0], X[..., 1]
    wq = rule.weights[None, :] * np.abs(space.geometry.det)[:, None]
    wh = _as_list(space.eval(w, rule), space.components)
    uh = _as_list(field.value(x, y, t), space.components)
    l2 = sum(float(np.sum(wq * (a - b) ** 2)) for a, b in zip(wh, uh))
    grad = getattr(field, "grad", None)
    if grad is None:
        return np.sqrt(l2), float("nan")
    gh = _as_list(space.eval_grad(w, rule), space.components)
    gu = _as_list(grad(x, y, t), space.components)
    h1 = 0.0
    for a, g in zip(gh, gu):
        h1 += float(np.sum(wq * ((a[..., 0] - g[0]) ** 2 + (a[..., 1] - g[1]) ** 2)))
    return np.sqrt(l2), np.sqrt(h1)


class DiscreteNorms:
    """Mass and stiffness norms on one space, assembled once."""

    def __init__(self, space: FeSpace):
        self.space = space
        self.M = mass_matrix(space)
        self.A = stiffness_matrix(space)

    def __call__(self, d: np.ndarray):
        d = np.asarray(d, dtype=float)
        if d.shape != (self.space.n_dofs,):
            raise ValueError(f"vector has shape {d.shape}, expected ({self.space.n_dofs},)")
        l2 = float(d @ (self.M @ d))
        h1 = float(d @ (self.A @ d))
        return np.sqrt(max(l2, 0.0)), np.sqrt(max(h1, 0.0))


def error_norms(w: np.ndarray, truth, space: FeSpace, t: float = 0.0, norms: DiscreteNorms | None = None):
    """``(L2, H1-seminorm)`` of ``w - truth``.

    ``truth`` is either an object with ``value``/``grad`` callables or a
    coefficient vector in ``space``.

    Raises
    ------
    ValueError
        If a coefficient truth does not match the space dimension.
    """
    if hasattr(truth, "value"):
        return analytic_error(w, truth, space, t)
    truth = np.asarray(truth, dtype=float)
    if truth.shape != (space.n_dofs,):
        raise ValueError(f"truth vector has shape {truth.shape}, expected ({space.n_dofs},)")
    norms = DiscreteNorms(space) if norms is None else norms
    return norms(np.asarray(w, dtype=float) - truth)
