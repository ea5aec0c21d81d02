"""
Lagrange P1/P2 spaces on triangles.

Reference triangle: vertices (0,0), (1,0), (0,1); a point is given by its
barycentric triple ``(l0, l1, l2)`` with reference coordinates
``(xi, eta) = (l1, l2)``. P2 local DOFs are the three vertices followed by
the midpoints of local edges (0,1), (1,2), (2,0).

Vector spaces are component-blocked: all x-component DOFs, then all
y-component DOFs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .mesh import LOCAL_EDGES, Mesh

MAX_EXACTNESS = 10

# d(lambda_i)/d(xi, eta)
_DLAMBDA = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, 3) barycentric
    weights: np.ndarray  # (nq,), sum to 1/2
    exactness: int

    def __len__(self):
        return len(self.weights)


def _conical_rule(degree: int) -> QuadratureRule:
    # collapsed Gauss-Jacobi x Gauss-Legendre product rule
    n = max(1, math.ceil((degree + 1) / 2))
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    xl, wl = roots_legendre(n)
    u = 0.5 * (xj + 1.0)
    v = 0.5 * (xl + 1.0)
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wj / 4.0, wl / 2.0)
    xi = U.ravel()
    eta = (V * (1.0 - U)).ravel()
    pts = np.column_stack([1.0 - xi - eta, xi, eta])
    return QuadratureRule(pts, W.ravel(), 2 * n - 1)


def _seven_point_rule() -> QuadratureRule:
    s15 = math.sqrt(15.0)
    a1 = (6.0 - s15) / 21.0
    a2 = (6.0 + s15) / 21.0
    w1 = (155.0 - s15) / 2400.0
    w2 = (155.0 + s15) / 2400.0
    b1 = 1.0 - 2.0 * a1
    b2 = 1.0 - 2.0 * a2
    pts = [
        (1 / 3, 1 / 3, 1 / 3),
        (b1, a1, a1), (a1, b1, a1), (a1, a1, b1),
        (b2, a2, a2), (a2, b2, a2), (a2, a2, b2),
    ]
    w = [9.0 / 80.0] + [w1] * 3 + [w2] * 3
    return QuadratureRule(np.array(pts), np.array(w), 5)


@lru_cache(maxsize=None)
def quadrature(min_exactness: int) -> QuadratureRule:
    """Rule on the reference triangle exact for polynomials of the given degree.

    Raises
    ------
    ValueError
        If ``min_exactness`` is negative or above 10.
    """
    d = int(min_exactness)
    if d < 0 or d > MAX_EXACTNESS:
        raise ValueError(f"no quadrature rule of exactness {min_exactness} (max {MAX_EXACTNESS})")
    if d <= 1:
        return QuadratureRule(np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([0.5]), 1)
    if d == 2:
        pts = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
        return QuadratureRule(pts, np.full(3, 1 / 6), 2)
    if d <= 5:
        return _seven_point_rule()
    return _conical_rule(d)


def composite_rule(exactness: int, levels: int) -> QuadratureRule:
    """``quadrature(exactness)`` on each of the ``4**levels`` congruent subtriangles.

    Used to integrate non-smooth data (indicator functions) accurately.
    """
    base = quadrature(exactness)
    tris = [np.eye(3)]
    for _ in range(levels):
        nxt = []
        for T in tris:
            m01, m12, m20 = (T[0] + T[1]) / 2, (T[1] + T[2]) / 2, (T[2] + T[0]) / 2
            nxt += [np.array([T[0], m01, m20]), np.array([m01, T[1], m12]),
                    np.array([m20, m12, T[2]]), np.array([m12, m20, m01])]
        tris = nxt
    pts = np.vstack([base.points @ T for T in tris])
    w = np.tile(base.weights / len(tris), len(tris))
    return QuadratureRule(pts, w, base.exactness)


def n_local_dofs(degree: int) -> int:
    if degree == 1:
        return 3
    if degree == 2:
        return 6
    raise ValueError(f"unsupported polynomial degree {degree}")


def basis(degree: int, points: np.ndarray):
    """Basis values and reference gradients at barycentric points.

    Returns
    -------
    values : ndarray, shape (nq, nb)
    grads : ndarray, shape (nq, nb, 2)
        Derivatives with respect to ``(xi, eta)``.
    """
    lam = np.atleast_2d(np.asarray(points, dtype=float))
    nq = len(lam)
    nb = n_local_dofs(degree)
    vals = np.empty((nq, nb))
    grads = np.empty((nq, nb, 2))
    if degree == 1:
        vals[:] = lam
        grads[:] = _DLAMBDA[None]
        return vals, grads
    for i in range(3):
        vals[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
        grads[:, i] = (4.0 * lam[:, i] - 1.0)[:, None] * _DLAMBDA[i]
    for k, (i, j) in enumerate(LOCAL_EDGES):
        vals[:, 3 + k] = 4.0 * lam[:, i] * lam[:, j]
        grads[:, 3 + k] = 4.0 * (lam[:, j, None] * _DLAMBDA[i] + lam[:, i, None] * _DLAMBDA[j])
    return vals, grads


def eval_basis(degree: int, point):
    """Basis values and reference gradients at a single barycentric point."""
    lam = np.asarray(point, dtype=float)
    if abs(lam.sum() - 1.0) > 1e-12:
        raise ValueError("barycentric coordinates must sum to 1")
    vals, grads = basis(degree, lam[None])
    return vals[0], grads[0]


def reference_nodes(degree: int) -> np.ndarray:
    """Barycentric coordinates of the local nodes."""
    nodes = np.eye(3)
    if degree == 1:
        return nodes
    mids = [(nodes[i] + nodes[j]) / 2 for i, j in LOCAL_EDGES]
    return np.vstack([nodes, mids])


@dataclass(frozen=True)
class Geometry:
    """Affine maps of all cells: ``x = p0 + J (xi, eta)``."""

    origin: np.ndarray  # (nc, 2)
    jac: np.ndarray  # (nc, 2, 2)
    det: np.ndarray  # (nc,)
    inv_t: np.ndarray  # (nc, 2, 2) inverse transpose

    @classmethod
    def of(cls, mesh: Mesh) -> "Geometry":
        p = mesh.vertices[mesh.cells]
        jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        inv_t = np.empty_like(jac)
        inv_t[:, 0, 0] = jac[:, 1, 1] / det
        inv_t[:, 0, 1] = -jac[:, 1, 0] / det
        inv_t[:, 1, 0] = -jac[:, 0, 1] / det
        inv_t[:, 1, 1] = jac[:, 0, 0] / det
        return cls(p[:, 0].copy(), jac, det, inv_t)

    _mapped: dict = field(default_factory=dict, repr=False, compare=False)

    def map_points(self, bary: np.ndarray) -> np.ndarray:
        """Physical points, shape (nc, nq, 2); cached per point set, read-only."""
        bary = np.atleast_2d(np.asarray(bary, dtype=float))
        key = bary.tobytes()
        X = self._mapped.get(key)
        if X is None:
            X = self.origin[:, None, :] + bary[:, 1:] @ self.jac.transpose(0, 2, 1)
            X.flags.writeable = False
            if len(self._mapped) < 8:
                self._mapped[key] = X
        return X

    def to_reference(self, cells: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of points ``x`` in the given cells."""
        r = x - self.origin[cells]
        # J^{-1} r = inv_t^T r
        ref = np.einsum("nji,nj->ni", self.inv_t[cells], r)
        return np.column_stack([1.0 - ref[:, 0] - ref[:, 1], ref[:, 0], ref[:, 1]])


@dataclass(frozen=True, eq=False)
class FeSpace:
    """Continuous Lagrange space of degree 1 or 2 with 1 or 2 components.

    ``scalar_cell_dofs`` and ``dof_coords`` describe one component;
    component ``c`` of a vector space owns DOFs ``c*n_scalar + j``.
    """

    mesh: Mesh
    degree: int
    components: int
    scalar_cell_dofs: np.ndarray  # (nc, nb)
    dof_coords: np.ndarray  # (n_scalar, 2)
    boundary_dofs: dict  # marker -> scalar DOF indices

    @property
    def n_scalar(self) -> int:
        return len(self.dof_coords)

    @property
    def n_dofs(self) -> int:
        return self.components * self.n_scalar

    @property
    def n_local(self) -> int:
        return self.scalar_cell_dofs.shape[1]

    @cached_property
    def cell_dofs(self) -> np.ndarray:
        """Global DOFs per cell, components concatenated."""
        return np.hstack([self.scalar_cell_dofs + c * self.n_scalar for c in range(self.components)])

    @cached_property
    def geometry(self) -> Geometry:
        return Geometry.of(self.mesh)

    def component_dofs(self, dofs, component: int) -> np.ndarray:
        return np.asarray(dofs) + component * self.n_scalar

    def marked_dofs(self, markers, components=None) -> np.ndarray:
        """Global DOFs on the union of the given boundary markers."""
        if isinstance(markers, str):
            markers = [markers]
        scalar = []
        for mk in markers:
            if mk not in self.boundary_dofs:
                raise KeyError(f"unknown boundary marker {mk!r}; have {sorted(self.boundary_dofs)}")
            scalar.append(self.boundary_dofs[mk])
        scalar = np.unique(np.concatenate(scalar)) if scalar else np.array([], dtype=np.int64)
        if components is None:
            components = range(self.components)
        return np.concatenate([self.component_dofs(scalar, c) for c in components])

    def scalar(self) -> "FeSpace":
        """The one-component space sharing this DOF map."""
        if self.components == 1:
            return self
        return FeSpace(self.mesh, self.degree, 1, self.scalar_cell_dofs, self.dof_coords, self.boundary_dofs)

    def eval(self, coeffs: np.ndarray, rule: QuadratureRule) -> np.ndarray:
        """Values at quadrature points: (nc, nq), or (ncomp, nc, nq)."""
        phi, _ = basis(self.degree, rule.points)
        u = self._split(coeffs)
        out = u[:, self.scalar_cell_dofs] @ phi.T
        return out[0] if self.components == 1 else out

    def eval_grad(self, coeffs: np.ndarray, rule: QuadratureRule) -> np.ndarray:
        """Physical gradients at quadrature points: (nc, nq, 2) or (ncomp, nc, nq, 2)."""
        _, dphi = basis(self.degree, rule.points)
        u = self._split(coeffs)[:, self.scalar_cell_dofs]  # (k, nc, nb)
        # reference gradients first, then the cell Jacobians
        ref = np.stack([u @ dphi[..., 0].T, u @ dphi[..., 1].T], axis=-1)  # (k, nc, nq, 2)
        out = ref @ self.geometry.inv_t.transpose(0, 2, 1)[None]
        return out[0] if self.components == 1 else out

    def physical_grads(self, rule: QuadratureRule) -> np.ndarray:
        """Basis gradients, shape (nc, nq, nb, 2)."""
        _, dphi = basis(self.degree, rule.points)
        nq, nb, _ = dphi.shape
        G = dphi.reshape(nq * nb, 2) @ self.geometry.inv_t.transpose(0, 2, 1)
        return G.reshape(-1, nq, nb, 2)

    def _split(self, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (self.n_dofs,):
            raise ValueError(f"coefficient vector has shape {coeffs.shape}, expected ({self.n_dofs},)")
        return coeffs.reshape(self.components, self.n_scalar)

    def eval_at(self, coeffs: np.ndarray, cells: np.ndarray, bary: np.ndarray) -> np.ndarray:
        """Values at points given by (cell, barycentric) pairs."""
        phi, _ = basis(self.degree, bary)
        u = self._split(coeffs)
        vals = np.einsum("knb,nb->kn", u[:, self.scalar_cell_dofs[cells]], phi)
        return vals[0] if self.components == 1 else vals


def build_space(mesh: Mesh, degree: int, components: int = 1) -> FeSpace:
    """Lagrange space on ``mesh``, merging periodic DOF classes.

    Raises
    ------
    ValueError
        For degrees other than 1 and 2 or component counts other than 1, 2.
    """
    n_local_dofs(degree)
    if components not in (1, 2):
        raise ValueError(f"unsupported component count {components}")
    vcls = mesh.vertex_classes
    nvc = mesh.n_vertex_classes
    # representative coordinate of each vertex class: first member
    _, first = np.unique(vcls, return_index=True)
    coords = [mesh.vertices[first]]
    cell_dofs = [vcls[mesh.cells]]

    edge_cls = None
    if degree == 2:
        e = mesh.edges
        a, b = vcls[e[:, 0]], vcls[e[:, 1]]
        codes = np.minimum(a, b).astype(np.int64) * nvc + np.maximum(a, b)
        _, first_edge, edge_cls = np.unique(codes, return_index=True, return_inverse=True)
        mid = 0.5 * (mesh.vertices[e[first_edge, 0]] + mesh.vertices[e[first_edge, 1]])
        coords.append(mid)
        cell_dofs.append(nvc + edge_cls[mesh.cell_edges])

    bdofs = {}
    for mk in mesh.markers:
        be = mesh.marked_edges(mk)
        parts = [np.unique(vcls[be])]
        if degree == 2:
            parts.append(nvc + edge_cls[mesh.edge_index(be)])
        bdofs[mk] = np.unique(np.concatenate(parts))

    return FeSpace(
        mesh=mesh,
        degree=degree,
        components=components,
        scalar_cell_dofs=np.hstack(cell_dofs),
        dof_coords=np.vstack(coords),
        boundary_dofs=bdofs,
    )


def _as_components(vals, ncomp):
    if ncomp == 1:
        return [np.asarray(vals, dtype=float)]
    return [np.asarray(v, dtype=float) for v in vals]


def interpolate_nodal(f, space: FeSpace, t: float = 0.0) -> np.ndarray:
    """Coefficients ``f(dof_coords, t)``; ``f(x, y, t)`` returns a tuple for vector spaces.

    Raises
    ------
    ValueError
        If ``f`` is not finite at some DOF.
    """
    x, y = space.dof_coords[:, 0], space.dof_coords[:, 1]
    parts = [np.broadcast_to(v, x.shape) for v in _as_components(f(x, y, t), space.components)]
    out = np.concatenate(parts).astype(float)
    if not np.all(np.isfinite(out)):
        raise ValueError("interpolated function is not finite at every DOF")
    return out
