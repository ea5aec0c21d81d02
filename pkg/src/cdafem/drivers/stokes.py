"""Saddle-point assembly and the steady Stokes solve."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..assembly import Elimination, divergence_matrix, pressure_mean_vector, stiffness_matrix
from ..fem import FeSpace
from ..linalg import factorize


def saddle_matrix(Avel, B, m=None) -> sp.csr_matrix:
    """``[[Avel, B^T, 0], [B, 0, m], [0, m^T, 0]]``; the multiplier block only with ``m``."""
    if m is None:
        return sp.bmat([[Avel, B.T], [B, None]], format="csr")
    m = sp.csr_matrix(np.asarray(m, dtype=float)[:, None])
    return sp.bmat([[Avel, B.T, None], [B, None, m], [None, m.T, None]], format="csr")


class SaddleSystem:
    """Velocity/pressure system with fixed velocity DOFs.

    Parameters
    ----------
    Avel : sparse matrix
        Velocity block.
    B : sparse matrix
        Divergence block from :func:`divergence_matrix`.
    dofs : int array
        Constrained velocity DOFs (sorted, unique).
    m : ndarray or None
        Pressure mean row; pins the pressure constant when no natural
        boundary is present.
    """

    def __init__(self, Avel, B, dofs, m=None):
        self.nu_dofs = Avel.shape[0]
        self.np_dofs = B.shape[0]
        self.extra = 0 if m is None else 1
        self.elim = Elimination(saddle_matrix(Avel, B, m), dofs)
        self.lu = factorize(self.elim.matrix)

    def solve(self, rhs_u, values, rhs_p=None):
        b = np.zeros(self.nu_dofs + self.np_dofs + self.extra)
        b[:self.nu_dofs] = rhs_u
        if rhs_p is not None:
            b[self.nu_dofs:self.nu_dofs + self.np_dofs] = rhs_p
        x = self.lu.solve(self.elim.rhs(b, values))
        return x[:self.nu_dofs], x[self.nu_dofs:self.nu_dofs + self.np_dofs]


def velocity_bc(vspace: FeSpace, bc):
    """Constrained DOFs and values for a list of ``(markers, value)`` entries.

    ``value`` is a constant pair or a callable ``g(x, y) -> (g1, g2)``.
    Later entries win where markers share DOFs, so walls listed last take
    the corners.
    """
    vals = {}
    for markers, value in bc:
        scalar = vspace.marked_dofs(markers, components=[0])
        xy = vspace.dof_coords[scalar]
        g = value(xy[:, 0], xy[:, 1]) if callable(value) else value
        for c in range(2):
            gc = np.broadcast_to(np.asarray(g[c], dtype=float), scalar.shape)
            vals.update(zip(vspace.component_dofs(scalar, c).tolist(), gc.tolist()))
    dofs = np.array(sorted(vals), dtype=np.int64)
    return dofs, np.array([vals[d] for d in dofs.tolist()])


def steady_stokes_solve(vspace: FeSpace, pspace: FeSpace, nu: float, bc, mean_zero: bool | None = None):
    """``nu A u + B^T p = 0``, ``B u = 0`` with velocity Dirichlet data ``bc``.

    Boundaries not named in ``bc`` carry the natural (do-nothing)
    condition. The pressure mean is pinned only when every boundary marker
    is constrained, unless ``mean_zero`` says otherwise.

    Returns
    -------
    (velocity, pressure) coefficient vectors
    """
    named = {mk for markers, _ in bc for mk in ([markers] if isinstance(markers, str) else markers)}
    if mean_zero is None:
        mean_zero = named >= set(vspace.mesh.markers) and not vspace.mesh.is_periodic
    dofs, vals = velocity_bc(vspace, bc)
    B = divergence_matrix(vspace, pspace)
    m = pressure_mean_vector(pspace) if mean_zero else None
    system = SaddleSystem(stiffness_matrix(vspace, nu), B, dofs, m)
    return system.solve(np.zeros(vspace.n_dofs), vals)


def channel_bc(inflow_speed: float = 3.0):
    """Plug inflow, no-slip walls (walls take the inflow corners), free outflow."""
    return [("inflow", (inflow_speed, 0.0)), (("bottom", "top"), (0.0, 0.0))]
