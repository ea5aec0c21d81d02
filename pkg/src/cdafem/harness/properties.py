"""
Exact identities and structural properties checked on random data.

Each check returns a :class:`PropertyResult`; :func:`run_all` runs the
whole suite. Element matrices are compared against an exact oracle that
integrates products of barycentric monomials with rational arithmetic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import product

import numpy as np

from ..assembly import convection_matrix, mass_matrix, nse_convection_matrix, stiffness_matrix
from ..fem import build_space
from ..mesh import _make, uniform_rect_mesh
from ..observation import build_observation

# symmetric BDF2 energy matrix
G = np.array([[0.5, -1.0], [-1.0, 2.5]])


@dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    value: float  # worst observed deviation (or ratio) for the property
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.value:.3e} (tol {self.tolerance:.1e}) {self.detail}"


def g_norm_sq(new, old, ip=np.dot) -> float:
    """``||[new; old]||_G^2`` for two time levels under the inner product ``ip``.

    The newer level pairs with the ``5/2`` entry of ``G``.
    """
    return G[1, 1] * ip(new, new) + 2 * G[0, 1] * ip(new, old) + G[0, 0] * ip(old, old)


def bdf2_identity_residual(v2, v1, v0) -> float:
    """Relative residual of the BDF2 energy identity for one triple."""
    lhs = 0.5 * np.dot(3 * v2 - 4 * v1 + v0, v2)
    d = v2 - 2 * v1 + v0
    rhs = 0.5 * (g_norm_sq(v2, v1) - g_norm_sq(v1, v0)) + 0.25 * np.dot(d, d)
    scale = max(abs(lhs), np.dot(v2, v2) + np.dot(v1, v1) + np.dot(v0, v0))
    return abs(lhs - rhs) / scale if scale > 0 else 0.0


def check_bdf2_identity(rng, trials: int = 200, tol: float = 1e-12) -> PropertyResult:
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, 50))
        scale = 10.0 ** rng.uniform(-3, 3)
        v = scale * rng.standard_normal((3, n))
        worst = max(worst, bdf2_identity_residual(*v))
    return PropertyResult("BDF2 energy identity", worst <= tol, worst, tol, f"{trials} random triples")


def g_norm_constants():
    """Sharp constants ``c, C`` with ``c ||x||_G <= ||x|| <= C ||x||_G``.

    They are ``1/sqrt(lambda_max(G))`` and ``1/sqrt(lambda_min(G))``,
    i.e. ``2 - sqrt(2)`` and ``2 + sqrt(2)``.
    """
    lam = np.linalg.eigvalsh(G)
    return 1 / math.sqrt(lam[1]), 1 / math.sqrt(lam[0])


def check_g_norm_equivalence(rng, trials: int = 200, tol: float = 1e-12) -> PropertyResult:
    """The bounds ``(3 - 2 sqrt 2) ||x||_G <= ||x|| <= (3 + 2 sqrt 2) ||x||_G``.

    Also checks that the sharp constants from :func:`g_norm_constants`
    hold on random pairs and are attained on the eigenvectors of ``G``.
    """
    lo, hi = 3 - 2 * math.sqrt(2), 3 + 2 * math.sqrt(2)
    c_sharp, C_sharp = g_norm_constants()
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, 50))
        x, y = rng.standard_normal((2, n))
        plain = math.sqrt(np.dot(x, x) + np.dot(y, y))
        gn = math.sqrt(g_norm_sq(x, y))
        for bound in (lo * gn - plain, plain - hi * gn, c_sharp * gn - plain, plain - C_sharp * gn):
            worst = max(worst, bound / plain)
    _, vecs = np.linalg.eigh(G)
    attained = 0.0
    for k, c in ((1, c_sharp), (0, C_sharp)):
        # the newer level pairs with G[1, 1]
        x, y = vecs[1, k] * np.ones(1), vecs[0, k] * np.ones(1)
        ratio = math.sqrt(x @ x + y @ y) / math.sqrt(g_norm_sq(x, y))
        attained = max(attained, abs(ratio - c) / c)
    value = max(worst, attained)
    return PropertyResult("G-norm equivalence", value <= tol, value, tol,
                          f"sharp constants {c_sharp:.6f}, {C_sharp:.6f}")


# --- exact element matrices -------------------------------------------------

def _poly_mul(p, q):
    out = {}
    for (ea, ca), (eb, cb) in product(p.items(), q.items()):
        e = tuple(a + b for a, b in zip(ea, eb))
        out[e] = out.get(e, 0) + ca * cb
    return out


def _poly_diff(p, k):
    out = {}
    for e, c in p.items():
        if e[k]:
            f = list(e)
            f[k] -= 1
            out[tuple(f)] = out.get(tuple(f), 0) + c * e[k]
    return out


def _integral(p) -> Fraction:
    """Integral over the triangle divided by twice its area."""
    total = Fraction(0)
    for (a, b, c), coef in p.items():
        total += coef * Fraction(math.factorial(a) * math.factorial(b) * math.factorial(c),
                                 math.factorial(a + b + c + 2))
    return total


def barycentric_basis(degree: int) -> list:
    """Lagrange basis as ``{exponents of (l0, l1, l2): coefficient}`` dicts."""
    unit = [(1, 0, 0), (0, 1, 0), (0, 0, 1)]
    if degree == 1:
        return [{e: Fraction(1)} for e in unit]
    out = []
    for i in range(3):
        sq = tuple(2 * u for u in unit[i])
        out.append({sq: Fraction(2), unit[i]: Fraction(-1)})
    for i, j in ((0, 1), (1, 2), (2, 0)):
        out.append({tuple(a + b for a, b in zip(unit[i], unit[j])): Fraction(4)})
    return out


def exact_element_matrices(vertices: np.ndarray, degree: int):
    """Mass and stiffness matrices of one triangle from exact monomial integrals."""
    basis = barycentric_basis(degree)
    nb = len(basis)
    area = 0.5 * abs(np.linalg.det(np.column_stack([vertices[1] - vertices[0], vertices[2] - vertices[0]])))
    M = np.array([[float(_integral(_poly_mul(p, q))) for q in basis] for p in basis]) * 2 * area
    # physical gradients of the barycentric coordinates
    T = np.column_stack([vertices[1] - vertices[0], vertices[2] - vertices[0]])
    dl = np.zeros((3, 2))
    dl[1:] = np.linalg.inv(T)
    dl[0] = -dl[1] - dl[2]
    dots = dl @ dl.T
    D = [[_poly_diff(p, k) for k in range(3)] for p in basis]
    K = np.zeros((nb, nb))
    for a, b in product(range(nb), repeat=2):
        for k, l in product(range(3), repeat=2):
            K[a, b] += dots[k, l] * float(_integral(_poly_mul(D[a][k], D[b][l])))
    return M, K * 2 * area


def single_triangle_space(vertices, degree: int):
    bedges = np.array([[0, 1], [1, 2], [2, 0]])
    mesh = _make(vertices, np.array([[0, 1, 2]]), bedges, ["bottom", "right", "left"])
    return build_space(mesh, degree)


def check_element_matrices(rng, trials: int = 5, tol: float = 1e-13) -> PropertyResult:
    worst = 0.0
    for degree in (1, 2):
        for _ in range(trials):
            while True:
                v = rng.uniform(-1, 1, (3, 2))
                cross = (v[1, 0] - v[0, 0]) * (v[2, 1] - v[0, 1]) - (v[1, 1] - v[0, 1]) * (v[2, 0] - v[0, 0])
                if cross > 0.1:
                    break
            space = single_triangle_space(v, degree)
            Mx, Kx = exact_element_matrices(v, degree)
            idx = np.ix_(space.cell_dofs[0], space.cell_dofs[0])
            Ma = mass_matrix(space).toarray()[idx]
            Ka = stiffness_matrix(space).toarray()[idx]
            worst = max(worst, np.abs(Ma - Mx).max() / np.abs(Mx).max(),
                        np.abs(Ka - Kx).max() / np.abs(Kx).max())
    return PropertyResult("element matrices vs exact integrals", worst <= tol, worst, tol, "P1 and P2")


def check_skew_forms(rng, n: int = 6, trials: int = 10, tol: float = 1e-11) -> PropertyResult:
    """``v^T K v = 0`` for the skew convection forms.

    The scalar transport form is skew only up to the outflow boundary
    term, so its test vectors vanish on the boundary.
    """
    mesh = uniform_rect_mesh(n, n)
    V = build_space(mesh, 2, 2)
    S = V.scalar()
    interior = np.ones(S.n_dofs, dtype=bool)
    interior[S.marked_dofs(mesh.markers)] = False
    worst = 0.0
    for _ in range(trials):
        a = rng.standard_normal(V.n_dofs)
        K = nse_convection_matrix(V, a)
        v = rng.standard_normal(V.n_dofs)
        worst = max(worst, abs(v @ (K @ v)) / (abs(K).sum() * (v @ v) / V.n_dofs))
        Kt = convection_matrix(S, (V, a), skew=True)
        s = rng.standard_normal(S.n_dofs) * interior
        worst = max(worst, abs(s @ (Kt @ s)) / (abs(Kt).sum() * (s @ s) / S.n_dofs))
    return PropertyResult("skew convection annihilates its argument", worst <= tol, worst, tol)


def _obs_cases(n: int = 8):
    m = uniform_rect_mesh(n, n)
    for degree, comps in ((1, 1), (2, 1), (2, 2)):
        space = build_space(m, degree, comps)
        for mode in ("galerkin", "lumped", "nodal"):
            yield space, build_observation(space, 0.25, mu=1.0, mode=mode)
        yield space, build_observation(space, 0.3, mu=1.0, mode="galerkin", allow_unaligned=True)


def check_nudging_psd(tol: float = 1e-12) -> PropertyResult:
    worst = 0.0
    for _, obs in _obs_cases():
        N = obs.nudging_matrix.toarray()
        scale = np.abs(N).max()
        asym = np.abs(N - N.T).max() / scale
        lam_min = np.linalg.eigvalsh(0.5 * (N + N.T)).min()
        worst = max(worst, asym, max(0.0, -lam_min) / scale)
    return PropertyResult("nudging matrix symmetric PSD", worst <= tol, worst, tol)


def check_IH_contraction(rng, trials: int = 20, tol: float = 1e-12) -> PropertyResult:
    """``||I_H v|| <= ||v||`` in L2, and ``I_H`` fixes box-wise constants."""
    worst = 0.0
    for space, obs in _obs_cases():
        M = mass_matrix(space)
        for _ in range(trials):
            v = rng.standard_normal(space.n_dofs)
            ratio = obs.lifted_norm(obs.apply_IH(v)) / math.sqrt(v @ (M @ v))
            worst = max(worst, ratio - 1.0)
        ones = np.ones(space.n_dofs)
        worst = max(worst, np.abs(obs.apply_IH(ones) - 1.0).max())
    return PropertyResult("I_H is an L2 contraction", worst <= tol, max(worst, 0.0), tol)


def run_all(seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    return [
        check_bdf2_identity(rng),
        check_g_norm_equivalence(rng),
        check_element_matrices(rng),
        check_skew_forms(rng),
        check_nudging_psd(),
        check_IH_contraction(rng),
    ]
