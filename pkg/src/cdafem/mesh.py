"""
Conforming 2D triangulations.

Meshes are immutable: vertex coordinates, counter-clockwise cells, marked
boundary edges and an optional x-periodic vertex pairing. Generators cover
uniform rectangles, barycentric refinement and the sine-sheared river
channel; :func:`identify_periodic_x` adds the periodic pairing.

Example
-------

.. code-block:: python

    from cdafem.mesh import uniform_rect_mesh, barycentric_refine

    m = barycentric_refine(uniform_rect_mesh(32, 32))
    print(m.n_cells, m.h)
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

# local edge k of a cell joins local vertices LOCAL_EDGES[k]
LOCAL_EDGES = np.array([[0, 1], [1, 2], [2, 0]])

WALLS = ("bottom", "top")


class MeshError(ValueError):
    """Raised for malformed meshes or impossible mesh operations."""


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation.

    Parameters
    ----------
    vertices : ndarray, shape (nv, 2)
    cells : ndarray of int, shape (nc, 3)
        Counter-clockwise vertex triples.
    boundary_edges : ndarray of int, shape (nb, 2)
    edge_markers : ndarray of str, shape (nb,)
        Marker for each boundary edge.
    periodic_pairs : ndarray of int, shape (npair, 2), optional
        (left vertex, right vertex) identifications.
    period : float, optional
        Domain width in x for periodic meshes.
    """

    vertices: np.ndarray
    cells: np.ndarray
    boundary_edges: np.ndarray
    edge_markers: np.ndarray
    periodic_pairs: np.ndarray | None = None
    period: float | None = None
    # bounding box used by the generator; (xmin, xmax, ymin, ymax)
    rect: tuple = field(default=None)

    def __post_init__(self):
        for name in ("vertices", "cells", "boundary_edges", "edge_markers"):
            getattr(self, name).setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def markers(self) -> tuple:
        return tuple(sorted(set(self.edge_markers.tolist())))

    @property
    def is_periodic(self) -> bool:
        return self.periodic_pairs is not None and len(self.periodic_pairs) > 0

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.cells]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def area(self) -> float:
        return float(self.signed_areas.sum())

    @cached_property
    def _edge_data(self):
        nv = self.n_vertices
        local = self.cells[:, LOCAL_EDGES]  # (nc, 3, 2)
        lo = local.min(axis=2)
        hi = local.max(axis=2)
        codes = (lo.astype(np.int64) * nv + hi).ravel()
        uniq, inverse, counts = np.unique(codes, return_inverse=True, return_counts=True)
        edges = np.column_stack([uniq // nv, uniq % nv])
        return edges, inverse.reshape(-1, 3), counts

    @property
    def edges(self) -> np.ndarray:
        """Unique edges as sorted vertex pairs."""
        return self._edge_data[0]

    @property
    def cell_edges(self) -> np.ndarray:
        """Edge index of each local edge, shape (nc, 3)."""
        return self._edge_data[1]

    @property
    def edge_cell_counts(self) -> np.ndarray:
        return self._edge_data[2]

    def edge_index(self, pairs: np.ndarray) -> np.ndarray:
        """Indices into :attr:`edges` of the given vertex pairs."""
        pairs = np.asarray(pairs)
        nv = self.n_vertices
        codes = pairs.min(axis=1).astype(np.int64) * nv + pairs.max(axis=1)
        ref = self.edges[:, 0].astype(np.int64) * nv + self.edges[:, 1]
        idx = np.searchsorted(ref, codes)
        if np.any(idx >= len(ref)) or np.any(ref[np.minimum(idx, len(ref) - 1)] != codes):
            raise MeshError("edge not present in mesh")
        return idx

    @cached_property
    def h(self) -> float:
        """Longest edge length."""
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return float(np.sqrt((d ** 2).sum(axis=1)).max())

    @cached_property
    def vertex_classes(self) -> np.ndarray:
        """Consecutive class id per vertex after periodic merging."""
        parent = np.arange(self.n_vertices)
        if self.is_periodic:
            left, right = self.periodic_pairs[:, 0], self.periodic_pairs[:, 1]
            parent[right] = left
        _, cls = np.unique(parent, return_inverse=True)
        return cls

    @property
    def n_vertex_classes(self) -> int:
        return int(self.vertex_classes.max()) + 1

    def marked_edges(self, marker: str) -> np.ndarray:
        if marker not in self.markers:
            raise KeyError(f"unknown boundary marker {marker!r}; have {self.markers}")
        return self.boundary_edges[self.edge_markers == marker]

    @cached_property
    def fingerprint(self) -> str:
        """Short content hash used to tag snapshot files."""
        sha = hashlib.sha256()
        sha.update(np.ascontiguousarray(self.vertices, dtype="<f8").tobytes())
        sha.update(np.ascontiguousarray(self.cells, dtype="<i8").tobytes())
        if self.is_periodic:
            sha.update(np.ascontiguousarray(self.periodic_pairs, dtype="<i8").tobytes())
        return sha.hexdigest()[:16]

    def bounding_box(self) -> tuple:
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1])


def _make(vertices, cells, bedges, markers, **kw) -> Mesh:
    return Mesh(
        vertices=np.ascontiguousarray(vertices, dtype=float),
        cells=np.ascontiguousarray(cells, dtype=np.int64),
        boundary_edges=np.ascontiguousarray(bedges, dtype=np.int64).reshape(-1, 2),
        edge_markers=np.asarray(markers, dtype="<U16"),
        **kw,
    )


def uniform_rect_mesh(nx: int, ny: int, rect=(0.0, 1.0, 0.0, 1.0)) -> Mesh:
    """Structured triangulation of ``rect = (x0, x1, y0, y1)``.

    Every sub-rectangle is split along its lower-left to upper-right
    diagonal, giving ``(nx+1)(ny+1)`` vertices and ``2 nx ny`` cells.
    """
    nx, ny = int(nx), int(ny)
    if nx < 1 or ny < 1:
        raise MeshError("nx and ny must be positive")
    x0, x1, y0, y1 = map(float, rect)
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    v00 = idx[:-1, :-1].ravel()
    v10 = idx[:-1, 1:].ravel()
    v01 = idx[1:, :-1].ravel()
    v11 = idx[1:, 1:].ravel()
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    cells = np.empty((2 * nx * ny, 3), dtype=np.int64)
    cells[0::2] = lower
    cells[1::2] = upper

    # counter-clockwise around the domain
    bottom = np.column_stack([idx[0, :-1], idx[0, 1:]])
    right = np.column_stack([idx[:-1, -1], idx[1:, -1]])
    top = np.column_stack([idx[-1, 1:], idx[-1, :-1]])
    left = np.column_stack([idx[1:, 0], idx[:-1, 0]])
    bedges = np.vstack([bottom, right, top, left])
    markers = ["bottom"] * nx + ["right"] * ny + ["top"] * nx + ["left"] * ny
    return _make(vertices, cells, bedges, markers, rect=(x0, x1, y0, y1))


def barycentric_refine(m: Mesh) -> Mesh:
    """Split each cell into three at its barycenter."""
    nv, nc = m.n_vertices, m.n_cells
    centers = m.vertices[m.cells].mean(axis=1)
    g = nv + np.arange(nc)
    a, b, c = m.cells.T
    cells = np.empty((3 * nc, 3), dtype=np.int64)
    cells[0::3] = np.column_stack([a, b, g])
    cells[1::3] = np.column_stack([b, c, g])
    cells[2::3] = np.column_stack([c, a, g])
    return replace(
        m,
        vertices=np.vstack([m.vertices, centers]),
        cells=cells,
        boundary_edges=m.boundary_edges.copy(),
        edge_markers=m.edge_markers.copy(),
    )


def shear_channel_mesh(nx: int, ny: int, length: float = 4 * np.pi) -> Mesh:
    """River channel between ``y = sin x`` and ``y = 1 + sin x``.

    A uniform strip mesh on ``[0, length] x [0, 1]`` is sheared by
    ``(x, y) -> (x, y + sin x)``. Markers: ``inflow`` (x = 0), ``outflow``
    (x = length), ``bottom`` and ``top`` for the two walls.
    """
    base = uniform_rect_mesh(nx, ny, (0.0, length, 0.0, 1.0))
    v = base.vertices.copy()
    v[:, 1] += np.sin(v[:, 0])
    rename = {"left": "inflow", "right": "outflow", "bottom": "bottom", "top": "top"}
    markers = np.array([rename[s] for s in base.edge_markers.tolist()], dtype="<U16")
    return replace(base, vertices=v, edge_markers=markers, rect=None)


def identify_periodic_x(m: Mesh, tol: float = 1e-12) -> Mesh:
    """Pair the ``left`` and ``right`` boundary vertices of a rectangle mesh.

    Raises
    ------
    MeshError
        If some left vertex has no right partner at the same height.
    """
    left = np.unique(m.marked_edges("left"))
    right = np.unique(m.marked_edges("right"))
    if len(left) != len(right):
        raise MeshError(
            f"periodic mismatch: {len(left)} left vs {len(right)} right boundary vertices"
        )
    xl = m.vertices[left, 0]
    xr = m.vertices[right, 0]
    width = float(xr.max() - xl.min())
    left = left[np.argsort(m.vertices[left, 1], kind="stable")]
    right = right[np.argsort(m.vertices[right, 1], kind="stable")]
    dy = np.abs(m.vertices[left, 1] - m.vertices[right, 1])
    dx = np.abs(m.vertices[right, 0] - m.vertices[left, 0] - width)
    if np.any(dy > tol) or np.any(dx > tol):
        bad = int(np.argmax(np.maximum(dy, dx)))
        raise MeshError(
            f"periodic mismatch: left vertex {left[bad]} at y={m.vertices[left[bad], 1]:.17g} "
            "has no matching right partner"
        )
    return replace(m, periodic_pairs=np.column_stack([left, right]), period=width)


def check_mesh(m: Mesh, area: float | None = None, tol: float = 1e-12) -> None:
    """Verify the structural invariants, raising :class:`MeshError`.

    Checks positive orientation, the edge-manifold property, that the
    marked edges are exactly the topological boundary and, if given, the
    total area.
    """
    if np.any(m.signed_areas <= 0):
        raise MeshError("cell with non-positive signed area")
    counts = m.edge_cell_counts
    if np.any(counts > 2):
        raise MeshError("non-manifold edge shared by more than two cells")
    topo = m.edges[counts == 1]
    marked = np.sort(m.boundary_edges, axis=1)
    nv = m.n_vertices
    a = np.sort(topo[:, 0].astype(np.int64) * nv + topo[:, 1])
    b = np.sort(marked[:, 0].astype(np.int64) * nv + marked[:, 1])
    if len(a) != len(b) or np.any(a != b):
        raise MeshError("marked boundary edges differ from the topological boundary")
    if area is not None and abs(m.area - area) > tol * max(1.0, abs(area)):
        raise MeshError(f"area {m.area!r} differs from expected {area!r}")


def write_mesh(m: Mesh, path) -> None:
    """Plain-text export: header, ``x y`` lines, then ``i j k`` lines."""
    with open(path, "w") as fh:
        fh.write(f"vertices {m.n_vertices} cells {m.n_cells}\n")
        for x, y in m.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        for i, j, k in m.cells:
            fh.write(f"{i} {j} {k}\n")


def read_mesh_arrays(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 4 or head[0] != "vertices" or head[2] != "cells":
            raise MeshError(f"bad mesh header in {path}")
        nv, nc = int(head[1]), int(head[3])
        vertices = np.loadtxt(fh, max_rows=nv, ndmin=2)
        cells = np.loadtxt(fh, max_rows=nc, dtype=np.int64, ndmin=2)
    return vertices, cells


def locate_points(m: Mesh, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Index of a cell containing each point, or -1 if outside."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    p = m.vertices[m.cells]
    lo = p.min(axis=1) - tol
    hi = p.max(axis=1) + tol
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    out = np.full(len(points), -1, dtype=np.int64)
    for k, x in enumerate(points):
        cand = np.nonzero(np.all((x >= lo) & (x <= hi), axis=1))[0]
        if len(cand) == 0:
            continue
        r = x - p[cand, 0]
        s = (r[:, 0] * d2[cand, 1] - r[:, 1] * d2[cand, 0]) / det[cand]
        t = (d1[cand, 0] * r[:, 1] - d1[cand, 1] * r[:, 0]) / det[cand]
        ok = (s >= -1e-10) & (t >= -1e-10) & (s + t <= 1 + 1e-10)
        if np.any(ok):
            out[k] = cand[np.argmax(ok)]
    return out
