"""Nudged elliptic projections of a known field.

Both solve ``k (grad u_h, grad v) + mu (I_H u_h, I_H v) = k (grad u, grad v)
+ mu (I_H u, I_H v)`` with the boundary values of ``u``; the Stokes
version adds the discrete divergence constraint.
"""
from __future__ import annotations

import math

import numpy as np

from ..assembly import (Elimination, divergence_matrix, gradient_load_vector, pressure_mean_vector,
                        stiffness_matrix)
from ..fem import FeSpace, interpolate_nodal
from ..linalg import factorize
from ..observation import ObservationOperator
from .stokes import SaddleSystem


def _nudging(obs, space):
    if obs is None or obs.mu == 0:
        return None
    if obs.mode == "direct" or math.isinf(obs.mu):
        raise ValueError("projections take finite mu; direct enforcement is not a projection")
    if obs.space.n_dofs != space.n_dofs:
        raise ValueError("observation operator belongs to a different space")
    return obs


def _data(u_truth, space: FeSpace, coeff: float, obs):
    """Step matrix, right-hand side and nodal values for analytic or discrete truth."""
    A = stiffness_matrix(space, coeff)
    if isinstance(u_truth, np.ndarray):
        if u_truth.shape != (space.n_dofs,):
            raise ValueError(f"truth vector has shape {u_truth.shape}, expected ({space.n_dofs},)")
        rhs = A @ u_truth
        nodal = u_truth
        truth = u_truth
    else:
        rhs = gradient_load_vector(space, u_truth.grad, coeff=coeff)
        nodal = interpolate_nodal(u_truth.value, space)
        truth = u_truth.value
    if obs is not None:
        observed = obs.nodal_values(truth) if obs.mode == "nodal" else obs.truth_averages(truth)
        A = A + obs.mu * obs.nudging_matrix
        rhs = rhs + obs.mu * obs.nudging_rhs(observed)
    return A, rhs, nodal


def _boundary(space: FeSpace):
    return space.marked_dofs(space.mesh.markers) if space.mesh.markers else np.zeros(0, dtype=np.int64)


def cda_poisson_projection(u_truth, space: FeSpace, obs: ObservationOperator | None, kappa: float = 1.0):
    """Nudged Ritz projection of ``u_truth``.

    Parameters
    ----------
    u_truth : AnalyticField or ndarray
        Analytic field with ``value`` and ``grad``, or coefficients in ``space``.
    obs : ObservationOperator or None
        Finite ``mu``; ``None`` or ``mu = 0`` gives the plain Ritz projection.
    """
    obs = _nudging(obs, space)
    A, rhs, nodal = _data(u_truth, space, kappa, obs)
    dofs = _boundary(space)
    elim = Elimination(A, dofs)
    return factorize(elim.matrix).solve(elim.rhs(rhs, nodal[elim.dofs]))


def cda_stokes_projection(u_truth, vspace: FeSpace, pspace: FeSpace, obs: ObservationOperator | None,
                          nu: float = 1.0):
    """Nudged Stokes projection of a divergence-free field.

    Returns ``(velocity, pressure)``; the pressure has zero mean.
    """
    obs = _nudging(obs, vspace)
    A, rhs, nodal = _data(u_truth, vspace, nu, obs)
    dofs = np.unique(_boundary(vspace))
    system = SaddleSystem(A, divergence_matrix(vspace, pspace), dofs, pressure_mean_vector(pspace))
    return system.solve(rhs, nodal[dofs])
