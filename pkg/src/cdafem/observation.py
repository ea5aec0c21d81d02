"""
Coarse observations and the nudging term.

``I_H`` is the L2 projection onto piecewise constants over a uniform grid
of square boxes of width ``H``. Its building block is the matrix
``C[c, j] = integral over box c of phi_j`` with box measures ``D``; then

* cell averages of a discrete field are ``D^-1 C v``,
* the nudging matrix is ``N = C^T D^-1 C`` (``galerkin``) or its row-sum
  diagonal (``lumped``),
* ``nodal`` nudges the values at the coarse grid vertices, each weighted by
  its share of the adjacent box measures (algebraic nudging); its
  ``mu -> inf`` limit is
* ``direct`` (``mu = inf``), which pins the fine DOFs at those vertices.

Box integrals are computed by clipping each fine cell against the boxes
it overlaps, so they are exact whether or not box edges follow fine edges.
Unaligned grids must be requested explicitly with ``allow_unaligned``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .assembly import LinearSystem, constrain, mass_matrix, stiffness_matrix
from .fem import FeSpace, basis, interpolate_nodal, quadrature
from .mesh import Mesh, locate_points

MODES = ("galerkin", "lumped", "nodal", "direct")


class AlignmentError(ValueError):
    """Coarse grid does not align with the fine mesh."""


def _clip(poly, axis, bound, keep_below):
    out = []
    n = len(poly)
    for k in range(n):
        p, q = poly[k], poly[(k + 1) % n]
        fp = p[axis] - bound if keep_below else bound - p[axis]
        fq = q[axis] - bound if keep_below else bound - q[axis]
        if fp <= 0:
            out.append(p)
        if fp * fq < 0:
            s = fp / (fp - fq)
            out.append(p + s * (q - p))
    return out


def clip_triangle(tri: np.ndarray, box) -> list:
    """Intersection of a triangle with an axis-aligned box as a fan of triangles."""
    x0, x1, y0, y1 = box
    poly = [np.asarray(p, dtype=float) for p in tri]
    for axis, bound, below in ((0, x0, False), (0, x1, True), (1, y0, False), (1, y1, True)):
        poly = _clip(poly, axis, bound, below)
        if len(poly) < 3:
            return []
    return [np.array([poly[0], poly[k], poly[k + 1]]) for k in range(1, len(poly) - 1)]


def _tri_area(tri):
    d1 = tri[..., 1, :] - tri[..., 0, :]
    d2 = tri[..., 2, :] - tri[..., 0, :]
    return 0.5 * np.abs(d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0])


@dataclass(frozen=True, eq=False)
class CoarseGrid:
    """Uniform box grid of width ``H`` anchored at ``origin``.

    ``boxes`` lists only boxes meeting the domain, as ``(x0, x1, y0, y1)``.
    ``vertex_nodes`` are the grid vertices inside the domain and
    ``node_vertices`` the fine-mesh vertex matched to each.
    """

    mesh: Mesh
    H: float
    origin: tuple
    boxes: np.ndarray
    measures: np.ndarray
    vertex_nodes: np.ndarray
    node_vertices: np.ndarray
    aligned: bool
    # sub-triangles of fine cells, one coarse box each
    piece_cells: np.ndarray
    piece_boxes: np.ndarray
    piece_tris: np.ndarray

    @property
    def n_cells(self) -> int:
        return len(self.boxes)

    @cached_property
    def node_weights(self) -> np.ndarray:
        """Quarter of the measure of each box touching a measurement node."""
        x0, y0 = self.origin
        corner = {}
        ij = np.rint((self.boxes[:, [0, 2]] - (x0, y0)) / self.H).astype(int)
        for b, (i, j) in enumerate(ij.tolist()):
            corner[(i, j)] = self.measures[b]
        nij = np.rint((self.vertex_nodes - (x0, y0)) / self.H).astype(int)
        w = np.zeros(len(nij))
        for k, (i, j) in enumerate(nij.tolist()):
            w[k] = 0.25 * sum(corner.get((i - a, j - b), 0.0) for a in (0, 1) for b in (0, 1))
        return w

    @lru_cache(maxsize=4)
    def piece_quadrature(self, exactness: int):
        """Points, weights, fine cells and boxes of a composite rule over the pieces."""
        rule = quadrature(exactness)
        tri = self.piece_tris
        pts = np.einsum("qk,pki->pqi", rule.points, tri).reshape(-1, 2)
        w = (2.0 * _tri_area(tri)[:, None] * rule.weights[None, :]).ravel()
        nq = len(rule)
        return pts, w, np.repeat(self.piece_cells, nq), np.repeat(self.piece_boxes, nq)

    def averages_of(self, f, t: float = 0.0, exactness: int = 6) -> np.ndarray:
        """Exact-to-quadrature box averages of ``f(x, y, t)`` (tuple for vector fields)."""
        pts, w, _, box = self.piece_quadrature(exactness)
        vals = f(pts[:, 0], pts[:, 1], t)
        comps = vals if isinstance(vals, tuple) else (vals,)
        out = [np.bincount(box, w * np.broadcast_to(v, w.shape), minlength=self.n_cells) / self.measures
               for v in comps]
        return np.concatenate(out)


def build_coarse_grid(mesh: Mesh, H: float, allow_unaligned: bool = False, bbox=None) -> CoarseGrid:
    """Coarse box grid over the bounding box of ``mesh``.

    Raises
    ------
    AlignmentError
        If a fine cell straddles a box edge or a grid vertex inside the
        domain is not a fine vertex, unless ``allow_unaligned``; then cells
        are clipped and grid vertices snap to the nearest fine vertex.
    """
    H = float(H)
    if not H > 0:
        raise ValueError("coarse width H must be positive")
    x0, x1, y0, y1 = mesh.bounding_box() if bbox is None else bbox
    scale = max(x1 - x0, y1 - y0)
    ncx = max(1, math.ceil((x1 - x0) / H - 1e-9))
    ncy = max(1, math.ceil((y1 - y0) / H - 1e-9))

    tri = mesh.vertices[mesh.cells]
    eps = 1e-9
    lo = (tri.min(axis=1) - (x0, y0)) / H
    hi = (tri.max(axis=1) - (x0, y0)) / H
    ilo = np.clip(np.floor(lo + eps).astype(int), 0, [ncx - 1, ncy - 1])
    ihi = np.clip(np.ceil(hi - eps).astype(int) - 1, 0, [ncx - 1, ncy - 1])
    inside = np.all(ilo == ihi, axis=1)
    aligned = bool(inside.all())
    if not aligned and not allow_unaligned:
        raise AlignmentError(
            f"coarse width H={H:.6g} is not an integer multiple of the fine lattice width: "
            f"{int((~inside).sum())} fine cells straddle coarse box edges"
        )

    cells = [np.nonzero(inside)[0]]
    boxes = [ilo[inside, 1] * ncx + ilo[inside, 0]]
    tris = [tri[inside]]
    extra_c, extra_b, extra_t = [], [], []
    for c in np.nonzero(~inside)[0]:
        for j in range(ilo[c, 1], ihi[c, 1] + 1):
            for i in range(ilo[c, 0], ihi[c, 0] + 1):
                box = (x0 + i * H, x0 + (i + 1) * H, y0 + j * H, y0 + (j + 1) * H)
                for piece in clip_triangle(tri[c], box):
                    if _tri_area(piece) > 1e-15 * H * H:
                        extra_c.append(c)
                        extra_b.append(j * ncx + i)
                        extra_t.append(piece)
    if extra_c:
        cells.append(np.array(extra_c))
        boxes.append(np.array(extra_b))
        tris.append(np.array(extra_t))
    piece_cells = np.concatenate(cells)
    piece_flat = np.concatenate(boxes)
    piece_tris = np.concatenate(tris)

    meas = np.bincount(piece_flat, _tri_area(piece_tris), minlength=ncx * ncy)
    used = np.nonzero(meas > 1e-12 * H * H)[0]
    remap = np.full(ncx * ncy, -1)
    remap[used] = np.arange(len(used))
    keep = remap[piece_flat] >= 0
    bi, bj = used % ncx, used // ncx
    box_arr = np.column_stack([x0 + bi * H, x0 + (bi + 1) * H, y0 + bj * H, y0 + (bj + 1) * H])

    # measurement nodes: grid vertices inside the domain
    gx = x0 + H * np.arange(ncx + 1)
    gy = y0 + H * np.arange(ncy + 1)
    GX, GY = np.meshgrid(gx, gy)
    gpts = np.column_stack([GX.ravel(), GY.ravel()])
    gpts = gpts[locate_points(mesh, gpts, tol=1e-9 * scale) >= 0]
    nodes, verts = _match_nodes(mesh, gpts, allow_unaligned, scale)

    return CoarseGrid(
        mesh=mesh, H=H, origin=(x0, y0), boxes=box_arr, measures=meas[used],
        vertex_nodes=nodes, node_vertices=verts, aligned=aligned,
        piece_cells=piece_cells[keep], piece_boxes=remap[piece_flat[keep]],
        piece_tris=piece_tris[keep],
    )


def _match_nodes(mesh, gpts, allow_unaligned, scale):
    if len(gpts) == 0:
        return gpts.reshape(0, 2), np.zeros(0, dtype=np.int64)
    dist, idx = cKDTree(mesh.vertices).query(gpts)
    off = dist > 1e-12 * max(scale, 1.0)
    if np.any(off) and not allow_unaligned:
        k = int(np.argmax(dist))
        raise AlignmentError(
            f"coarse grid vertex {tuple(gpts[k])} is not a fine-mesh vertex (nearest at {dist[k]:.3g})"
        )
    # one measurement per vertex class
    cls = mesh.vertex_classes[idx]
    _, first = np.unique(cls, return_index=True)
    first = np.sort(first)
    return gpts[first], idx[first]


@dataclass(frozen=True, eq=False)
class ObservationOperator:
    """``I_H`` on a fine space plus the nudging parameter and mode."""

    space: FeSpace
    grid: CoarseGrid
    C: sp.csr_matrix  # (n_cells, n_scalar) for one component
    D: np.ndarray  # box measures
    mu: float
    mode: str

    @property
    def components(self) -> int:
        return self.space.components

    @property
    def n_cells(self) -> int:
        return len(self.D)

    @cached_property
    def C_full(self) -> sp.csr_matrix:
        if self.components == 1:
            return self.C
        return sp.block_diag([self.C] * self.components, format="csr")

    @cached_property
    def D_full(self) -> np.ndarray:
        return np.tile(self.D, self.components)

    @cached_property
    def node_weights_full(self) -> np.ndarray:
        return np.tile(self.grid.node_weights, self.components)

    @cached_property
    def nudging_matrix(self) -> sp.csr_matrix:
        """``N`` without the factor ``mu``."""
        if self.mode == "nodal":
            n = self.space.n_dofs
            dofs = self.measurement_dofs
            return sp.csr_matrix((self.node_weights_full, (dofs, dofs)), shape=(n, n))
        if self.mode == "lumped":
            return sp.diags(np.asarray(self.C_full.sum(axis=0)).ravel(), format="csr")
        Cf = self.C_full
        return (Cf.T @ sp.diags(1.0 / self.D_full) @ Cf).tocsr()

    @cached_property
    def measurement_dofs(self) -> np.ndarray:
        """Fine DOFs at the measurement nodes, all components."""
        scalar = self.space.mesh.vertex_classes[self.grid.node_vertices]
        return np.concatenate([self.space.component_dofs(scalar, c) for c in range(self.components)])

    def apply_IH(self, v: np.ndarray) -> np.ndarray:
        """Box averages ``D^-1 C v`` (components stacked)."""
        v = np.asarray(v, dtype=float)
        if v.shape != (self.space.n_dofs,):
            raise ValueError(f"vector has shape {v.shape}, expected ({self.space.n_dofs},)")
        return (self.C_full @ v) / self.D_full

    def truth_averages(self, truth, t: float = 0.0) -> np.ndarray:
        """Box averages of an analytic field ``truth(x, y, t)`` or a coefficient vector."""
        if callable(truth):
            return self.grid.averages_of(truth, t)
        return self.apply_IH(truth)

    def nodal_values(self, truth, t: float = 0.0) -> np.ndarray:
        """Truth at the measurement DOFs."""
        dofs = self.measurement_dofs
        if not callable(truth):
            return np.asarray(truth, dtype=float)[dofs]
        xy = self.space.dof_coords[self.space.mesh.vertex_classes[self.grid.node_vertices]]
        vals = truth(xy[:, 0], xy[:, 1], t)
        comps = vals if self.components > 1 else (vals,)
        return np.concatenate([np.broadcast_to(np.asarray(v, dtype=float), xy[:, 0].shape) for v in comps])

    def observations(self, source, n: int, t: float) -> np.ndarray:
        """What this mode observes of a truth source: nodal values or box averages."""
        if self.mode in ("nodal", "direct"):
            return source.nodal(self, n, t)
        return source.averages(self, n, t)

    def nudging_rhs(self, observed: np.ndarray) -> np.ndarray:
        """Right-hand side ``C^T u_bar`` (or its nodal analogue) without ``mu``."""
        if self.mode == "nodal":
            b = np.zeros(self.space.n_dofs)
            b[self.measurement_dofs] = self.node_weights_full * observed
            return b
        return self.C_full.T @ observed

    def lifted_norm(self, averages: np.ndarray) -> float:
        """L2 norm of the piecewise-constant field with the given box values."""
        return float(np.sqrt(np.sum(self.D_full * np.asarray(averages) ** 2)))


def build_observation(space: FeSpace, H: float, mu: float = math.inf, mode: str | None = None,
                      allow_unaligned: bool = False, grid: CoarseGrid | None = None) -> ObservationOperator:
    """Observation operator for ``space`` on a grid of width ``H``.

    ``mu = inf`` implies ``mode="direct"``; otherwise the default mode is
    ``galerkin``.

    Raises
    ------
    AlignmentError
        See :func:`build_coarse_grid`.
    ValueError
        For negative ``mu`` or an inconsistent ``mode``.
    """
    mu = float(mu)
    if mode is None:
        mode = "direct" if math.isinf(mu) else "galerkin"
    if mode not in MODES:
        raise ValueError(f"unknown nudging mode {mode!r}; expected one of {MODES}")
    if mu < 0 or math.isnan(mu):
        raise ValueError("nudging parameter must be >= 0")
    if (mode == "direct") != math.isinf(mu):
        raise ValueError("mu = inf and mode 'direct' go together")
    if grid is None:
        grid = build_coarse_grid(space.mesh, H, allow_unaligned=allow_unaligned)
    pts, w, cells, box = grid.piece_quadrature(2 * space.degree)
    bary = space.geometry.to_reference(cells, pts)
    phi, _ = basis(space.degree, bary)
    rows = np.repeat(box, space.n_local)
    cols = space.scalar_cell_dofs[cells].ravel()
    C = sp.coo_matrix(((w[:, None] * phi).ravel(), (rows, cols)),
                      shape=(grid.n_cells, space.n_scalar)).tocsr()
    C.sum_duplicates()
    if mode == "direct" and len(grid.vertex_nodes) == 0:
        raise ValueError("direct enforcement needs at least one measurement node")
    return ObservationOperator(space=space, grid=grid, C=C, D=grid.measures.copy(), mu=mu, mode=mode)


def apply_IH(obs: ObservationOperator, v: np.ndarray) -> np.ndarray:
    return obs.apply_IH(v)


def nudging_contribution(obs: ObservationOperator, truth_averages: np.ndarray):
    """Matrix and right-hand-side addends ``mu N`` and ``mu C^T u_bar``.

    The lumped mode uses the same right-hand side, which keeps the
    addends exact for piecewise-constant truth. In nodal mode the second
    argument holds truth values at the measurement DOFs instead.

    Raises
    ------
    ValueError
        For ``mu = inf``; use :func:`direct_enforce`.
    """
    if obs.mode == "direct" or math.isinf(obs.mu):
        raise ValueError("mu = inf has no nudging addend; use direct_enforce")
    ubar = np.asarray(truth_averages, dtype=float)
    n_obs = len(obs.measurement_dofs) if obs.mode == "nodal" else len(obs.D_full)
    if ubar.shape != (n_obs,):
        raise ValueError(f"observations have shape {ubar.shape}, expected ({n_obs},)")
    return obs.mu * obs.nudging_matrix, obs.mu * obs.nudging_rhs(ubar)


def direct_enforce(sys: LinearSystem, obs: ObservationOperator, truth, t: float = 0.0) -> LinearSystem:
    """Pin the DOFs at measurement nodes to the truth there."""
    if obs.mode != "direct":
        raise ValueError("direct_enforce requires mode 'direct'")
    return constrain(sys, obs.measurement_dofs, obs.nodal_values(truth, t))


def _default_battery():
    pi = np.pi
    return [
        ("x", lambda x, y, t: x),
        ("y", lambda x, y, t: y),
        ("x+2y", lambda x, y, t: x + 2 * y),
        ("sin*cos", lambda x, y, t: np.sin(pi * x) * np.cos(pi * y)),
        ("exp", lambda x, y, t: np.exp(x - y)),
        ("xy", lambda x, y, t: x * y),
    ]


def estimate_interp_constant(space: FeSpace, obs: ObservationOperator, battery=None) -> float:
    """Largest ``||I_H v - v|| / (H ||grad v||)`` over a battery of smooth functions.

    Raises
    ------
    ValueError
        If a battery function has a vanishing gradient.
    """
    battery = _default_battery() if battery is None else battery
    M = mass_matrix(space)
    A = stiffness_matrix(space)
    worst = 0.0
    for name, f in battery:
        v = interpolate_nodal(f, space)
        g2 = float(v @ (A @ v))
        if g2 <= 1e-24 * max(1.0, float(v @ (M @ v))):
            raise ValueError(f"battery function {name!r} has zero gradient")
        avg = obs.apply_IH(v)
        # I_H is an orthogonal projection, so the defect norm is a difference of squares
        err2 = max(float(v @ (M @ v)) - obs.lifted_norm(avg) ** 2, 0.0)
        worst = max(worst, math.sqrt(err2) / (obs.grid.H * math.sqrt(g2)))
    return worst
