"""
Sparse operator assembly.

All element loops are vectorized over cells; element matrices are
scattered as triplets into a COO matrix and compressed to CSR (duplicate
triplets sum). Affine cells make mass and stiffness element matrices
exact with the default rules, so assembly contributes no error.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fem import FeSpace, basis, quadrature
from .linalg import cg_solve


def _scatter(space_rows: FeSpace, space_cols: FeSpace, elem: np.ndarray,
             rows=None, cols=None) -> sp.csr_matrix:
    rows = space_rows.scalar_cell_dofs if rows is None else rows
    cols = space_cols.scalar_cell_dofs if cols is None else cols
    nr, nc = rows.shape[1], cols.shape[1]
    I = np.broadcast_to(rows[:, :, None], (len(rows), nr, nc))
    J = np.broadcast_to(cols[:, None, :], (len(cols), nr, nc))
    shape = (space_rows.n_scalar, space_cols.n_scalar)
    A = sp.coo_matrix((elem.ravel(), (I.ravel(), J.ravel())), shape=shape).tocsr()
    A.sum_duplicates()
    A.eliminate_zeros()
    return A


def _blocked(A: sp.spmatrix, components: int) -> sp.csr_matrix:
    if components == 1:
        return A.tocsr()
    return sp.block_diag([A] * components, format="csr")


def _velocity_at(velocity, space: FeSpace, rule):
    vspace, coeffs = velocity
    if vspace.mesh is not space.mesh and vspace.mesh.fingerprint != space.mesh.fingerprint:
        raise ValueError("velocity field lives on an incompatible mesh")
    if vspace.components != 2:
        raise ValueError("velocity must be a two-component field")
    U = vspace.eval(coeffs, rule)  # (2, nc, nq)
    dU = vspace.eval_grad(coeffs, rule)  # (2, nc, nq, 2)
    return np.moveaxis(U, 0, -1), dU[0, ..., 0] + dU[1, ..., 1]


def mass_matrix(space: FeSpace, exactness: int | None = None) -> sp.csr_matrix:
    """Consistent mass matrix ``M_ij = (phi_j, phi_i)``."""
    rule = quadrature(exactness if exactness is not None else 2 * space.degree)
    phi, _ = basis(space.degree, rule.points)
    ref = np.einsum("q,qa,qb->ab", rule.weights, phi, phi)
    elem = np.abs(space.geometry.det)[:, None, None] * ref[None]
    return _blocked(_scatter(space, space, elem), space.components)


def stiffness_matrix(space: FeSpace, coeff: float = 1.0) -> sp.csr_matrix:
    """``A_ij = coeff (grad phi_j, grad phi_i)``."""
    if not coeff > 0:
        raise ValueError("diffusion coefficient must be positive")
    rule = quadrature(max(2 * space.degree - 2, 1))
    G = space.physical_grads(rule)
    w = rule.weights[None, :] * np.abs(space.geometry.det)[:, None]
    elem = coeff * np.einsum("cq,cqai,cqbi->cab", w, G, G)
    return _blocked(_scatter(space, space, elem), space.components)


def convection_matrix(space: FeSpace, velocity, skew: bool = False) -> sp.csr_matrix:
    """Scalar transport operator ``(U . grad phi_j, phi_i)``.

    With ``skew`` the term ``1/2 ((div U) phi_j, phi_i)`` is added.

    Parameters
    ----------
    velocity : (FeSpace, ndarray)
        Two-component discrete field on the same mesh.
    """
    if space.components != 1:
        raise ValueError("convection_matrix acts on scalar spaces")
    rule = quadrature(min(2 * space.degree + velocity[0].degree - 1, 10))
    U, divU = _velocity_at(velocity, space, rule)
    phi, _ = basis(space.degree, rule.points)
    G = space.physical_grads(rule)
    w = rule.weights[None, :] * np.abs(space.geometry.det)[:, None]
    ugrad = np.einsum("cqi,cqbi->cqb", U, G)
    elem = np.einsum("cq,qa,cqb->cab", w, phi, ugrad)
    if skew:
        elem += 0.5 * np.einsum("cq,cq,qa,qb->cab", w, divU, phi, phi)
    return _scatter(space, space, elem)


def nse_convection_matrix(vspace: FeSpace, a: np.ndarray) -> sp.csr_matrix:
    """Skew-symmetric linearized convection for a vector space.

    Represents ``1/2 [b(a, w, v) - b(a, v, w)]`` with advecting field ``a``
    given as coefficients in ``vspace``; ``v^T K v = 0`` for every ``v``.
    """
    if vspace.components != 2:
        raise ValueError("nse_convection_matrix needs a two-component space")
    a = np.asarray(a, dtype=float)
    if a.shape != (vspace.n_dofs,):
        raise ValueError(f"advecting field has shape {a.shape}, expected ({vspace.n_dofs},)")
    C = convection_matrix(vspace.scalar(), (vspace, a), skew=False)
    Ks = 0.5 * (C - C.T)
    return _blocked(Ks.tocsr(), 2)


def divergence_matrix(vspace: FeSpace, pspace: FeSpace) -> sp.csr_matrix:
    """``B_ij = (q_i, div phi_j)`` for vector velocity and scalar pressure spaces."""
    if vspace.mesh is not pspace.mesh and vspace.mesh.fingerprint != pspace.mesh.fingerprint:
        raise ValueError("velocity and pressure spaces live on incompatible meshes")
    if vspace.components != 2 or pspace.components != 1:
        raise ValueError("divergence_matrix needs a vector velocity and scalar pressure space")
    rule = quadrature(vspace.degree - 1 + pspace.degree)
    q, _ = basis(pspace.degree, rule.points)
    G = vspace.physical_grads(rule)
    w = rule.weights[None, :] * np.abs(vspace.geometry.det)[:, None]
    blocks = []
    for k in range(2):
        elem = np.einsum("cq,qa,cqb->cab", w, q, G[..., k])
        blocks.append(_scatter(pspace, vspace, elem, pspace.scalar_cell_dofs, vspace.scalar_cell_dofs))
    return sp.hstack(blocks, format="csr")


def pressure_mean_vector(pspace: FeSpace) -> np.ndarray:
    """``m_i = integral of q_i``; the mean-zero row."""
    return load_vector(pspace, lambda x, y, t: np.ones_like(x))


def _check_finite(vals):
    for v in vals:
        if not np.all(np.isfinite(v)):
            raise ValueError("load function is not finite at every quadrature point")


def load_vector(space: FeSpace, f, t: float = 0.0, exactness: int | None = None, rule=None) -> np.ndarray:
    """``F_i = (f, phi_i)``; ``f(x, y, t)`` returns a tuple for vector spaces.

    An explicit ``rule`` (e.g. a composite one) overrides ``exactness``.
    """
    if rule is None:
        rule = quadrature(exactness if exactness is not None else 2 * space.degree + 1)
    phi, _ = basis(space.degree, rule.points)
    X = space.geometry.map_points(rule.points)
    vals = f(X[..., 0], X[..., 1], t)
    vals = [vals] if space.components == 1 else list(vals)
    vals = [np.broadcast_to(np.asarray(v, dtype=float), X.shape[:2]) for v in vals]
    _check_finite(vals)
    w = rule.weights[None, :] * np.abs(space.geometry.det)[:, None]
    out = np.zeros(space.n_dofs)
    for k, v in enumerate(vals):
        elem = np.einsum("cq,qa->ca", w * v, phi)
        out[k * space.n_scalar:(k + 1) * space.n_scalar] += np.bincount(
            space.scalar_cell_dofs.ravel(), elem.ravel(), minlength=space.n_scalar)
    return out


def gradient_load_vector(space: FeSpace, grad, t: float = 0.0, coeff: float = 1.0,
                         exactness: int | None = None) -> np.ndarray:
    """``F_i = coeff (grad u, grad phi_i)`` for an analytic gradient.

    ``grad(x, y, t)`` returns ``(ux, uy)`` for scalar spaces and
    ``((u1x, u1y), (u2x, u2y))`` for vector spaces.
    """
    rule = quadrature(exactness if exactness is not None else 2 * space.degree + 2)
    G = space.physical_grads(rule)
    X = space.geometry.map_points(rule.points)
    g = grad(X[..., 0], X[..., 1], t)
    comps = [g] if space.components == 1 else list(g)
    w = rule.weights[None, :] * np.abs(space.geometry.det)[:, None]
    out = np.zeros(space.n_dofs)
    for k, gk in enumerate(comps):
        gx = np.broadcast_to(np.asarray(gk[0], dtype=float), X.shape[:2])
        gy = np.broadcast_to(np.asarray(gk[1], dtype=float), X.shape[:2])
        _check_finite([gx, gy])
        elem = np.einsum("cq,cqa->ca", w * gx, G[..., 0]) + np.einsum("cq,cqa->ca", w * gy, G[..., 1])
        out[k * space.n_scalar:(k + 1) * space.n_scalar] += coeff * np.bincount(
            space.scalar_cell_dofs.ravel(), elem.ravel(), minlength=space.n_scalar)
    return out


def l2_projection(space: FeSpace, f, t: float = 0.0, rule=None) -> np.ndarray:
    """Coefficients of the L2 projection of ``f`` onto ``space``."""
    M = mass_matrix(space)
    return cg_solve(M, load_vector(space, f, t, rule=rule), tol=1e-13)


@dataclass
class LinearSystem:
    """A square sparse system with optional prescribed DOF values."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    constrained: dict = field(default_factory=dict)  # DOF -> value


class Elimination:
    """Symmetric elimination of a fixed DOF set.

    The reduced matrix keeps identity rows/columns at constrained DOFs;
    the coupling block moves prescribed values to the right-hand side.
    Build once, reuse :meth:`rhs` every step.
    """

    def __init__(self, matrix: sp.spmatrix, dofs: np.ndarray):
        n = matrix.shape[0]
        self.dofs = np.unique(np.asarray(dofs, dtype=np.int64))
        keep = np.ones(n)
        keep[self.dofs] = 0.0
        Dk = sp.diags(keep)
        A = sp.csr_matrix(matrix)
        self.matrix = (Dk @ A @ Dk + sp.diags(1.0 - keep)).tocsr()
        self.matrix.eliminate_zeros()
        self.coupling = (Dk @ A.tocsc()[:, self.dofs]).tocsr()

    def rhs(self, b: np.ndarray, values) -> np.ndarray:
        values = np.broadcast_to(np.asarray(values, dtype=float), self.dofs.shape)
        out = b - self.coupling @ values if len(self.dofs) else np.array(b, dtype=float)
        out[self.dofs] = values
        return out


def constrain(sys: LinearSystem, dofs, values) -> LinearSystem:
    """Apply prescribed values by symmetric elimination."""
    con = dict(sys.constrained)
    con.update(zip(np.asarray(dofs).tolist(), np.broadcast_to(values, np.shape(dofs)).tolist()))
    idx = np.fromiter(con.keys(), dtype=np.int64, count=len(con))
    vals = np.fromiter(con.values(), dtype=float, count=len(con))
    # previously eliminated columns carry no coupling, so re-elimination composes
    elim = Elimination(sys.matrix, idx)
    return LinearSystem(elim.matrix, elim.rhs(sys.rhs, vals[np.argsort(idx)]), con)


def apply_dirichlet(sys: LinearSystem, space: FeSpace, markers, g, t: float = 0.0) -> LinearSystem:
    """Constrain DOFs on ``markers`` to ``g(x, y, t)`` at their coordinates.

    Raises
    ------
    KeyError
        If a marker is not present in the space.
    """
    dofs = space.marked_dofs(markers)
    x = space.dof_coords[:, 0]
    y = space.dof_coords[:, 1]
    vals = g(x, y, t)
    if space.components == 1:
        full = np.broadcast_to(np.asarray(vals, dtype=float), x.shape)
    else:
        full = np.concatenate([np.broadcast_to(np.asarray(v, dtype=float), x.shape) for v in vals])
    return constrain(sys, dofs, full[dofs])
