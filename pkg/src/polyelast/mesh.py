"""Uniform Kuhn-split tetrahedral mesh of the unit 3-torus, plus tet quadrature."""

from dataclasses import dataclass
from itertools import permutations
from math import factorial

import numpy as np
from scipy.special import roots_jacobi

REF_VERTICES = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
REF_VOLUME = 1.0 / 6.0
MAX_QUAD_ORDER = 6


@dataclass(frozen=True)
class QuadratureRule:
    """Rule on the reference tetrahedron.

    ``points`` are barycentric coordinates (n, 4); ``weights`` sum to 1/6.
    """

    points: np.ndarray
    weights: np.ndarray
    order: int

    @property
    def ref_points(self):
        """Cartesian reference coordinates (n, 3)."""
        return self.points[:, 1:]


def _conical_product(m):
    # Stroud collapsed-coordinate rule, exact to degree 2m - 1, positive weights.
    x1, w1 = roots_jacobi(m, 2.0, 0.0)
    x2, w2 = roots_jacobi(m, 1.0, 0.0)
    x3, w3 = roots_jacobi(m, 0.0, 0.0)
    a, b, c = (x1 + 1) / 2, (x2 + 1) / 2, (x3 + 1) / 2
    wa, wb, wc = w1 / 8, w2 / 4, w3 / 2
    pts, wts = [], []
    for i in range(m):
        for j in range(m):
            for k in range(m):
                x = a[i]
                y = (1 - a[i]) * b[j]
                z = (1 - a[i]) * (1 - b[j]) * c[k]
                pts.append((x, y, z))
                wts.append(wa[i] * wb[j] * wc[k])
    return np.array(pts), np.array(wts)


def quadrature(order):
    """Quadrature on the reference tetrahedron exact for polynomials of ``order``.

    Orders 1 and 2 use the symmetric 1- and 4-point Gauss rules; higher
    orders use a conical product Gauss-Jacobi rule (positive weights).
    """
    if not isinstance(order, (int, np.integer)) or not 1 <= order <= MAX_QUAD_ORDER:
        raise ValueError(f"unsupported quadrature order {order!r} (need 1..{MAX_QUAD_ORDER})")
    if order == 1:
        xyz = np.array([[0.25, 0.25, 0.25]])
        w = np.array([REF_VOLUME])
    elif order == 2:
        a, b = 0.5854101966249685, 0.1381966011250105
        bary = np.array([[a, b, b, b], [b, a, b, b], [b, b, a, b], [b, b, b, a]])
        xyz = bary[:, 1:]
        w = np.full(4, REF_VOLUME / 4)
    else:
        xyz, w = _conical_product((order + 2) // 2)
    bary = np.column_stack([1.0 - xyz.sum(axis=1), xyz])
    return QuadratureRule(bary, w, int(order))


def monomial_integral(a, b, c):
    """Exact ``int x^a y^b z^c`` over the reference tetrahedron."""
    return factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 3)


@dataclass(frozen=True)
class TorusMesh:
    """Uniform periodic mesh with ``6 n^3`` tetrahedra.

    ``coords`` holds each element's vertices unwrapped (ne, 4, 3), so an
    element never straddles the periodic seam in its own coordinates;
    ``elements`` holds the periodic vertex indices (ne, 4).
    """

    n: int
    vertices: np.ndarray
    elements: np.ndarray
    coords: np.ndarray
    jacobians: np.ndarray
    volumes: np.ndarray

    @property
    def h(self):
        return 1.0 / self.n

    @property
    def n_elements(self):
        return len(self.elements)

    def map_points(self, ref_points):
        """Physical coordinates (ne, nq, 3) of reference points (nq, 3)."""
        return self.coords[:, 0, None, :] + np.einsum("eij,qj->eqi", self.jacobians, ref_points)

    def face_keys(self):
        """Per-element face identifiers (ne, 4) tuples, periodic-aware."""
        keys = []
        for e in range(self.n_elements):
            row = []
            for drop in range(4):
                idx = [i for i in range(4) if i != drop]
                centroid = np.mod(self.coords[e, idx].mean(axis=0), 1.0)
                row.append(tuple(np.round(centroid * 6 * self.n).astype(int) % (6 * self.n)))
            keys.append(row)
        return keys

    def dump(self, path):
        """Plain-text vertex/element listing for debugging."""
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# torus mesh n={self.n}\n")
            fh.write(f"vertices {len(self.vertices)}\n")
            for i, x in enumerate(self.vertices):
                fh.write(f"{i} {float(x[0])!r} {float(x[1])!r} {float(x[2])!r}\n")
            fh.write(f"elements {self.n_elements}\n")
            for e, tet in enumerate(self.elements):
                fh.write(f"{e} {' '.join(str(int(v)) for v in tet)}\n")


def build_uniform(n):
    """Kuhn triangulation of an ``n^3`` cube grid on ``[0, 1)^3``."""
    if not isinstance(n, (int, np.integer)) or n < 2:
        raise ValueError(f"mesh resolution n must be an integer >= 2, got {n!r}")
    n = int(n)
    h = 1.0 / n
    grid = np.array([(i, j, k) for i in range(n) for j in range(n) for k in range(n)])
    vertices = grid * h
    unit = np.eye(3, dtype=int)

    def vid(p):
        p = np.mod(p, n)
        return (p[0] * n + p[1]) * n + p[2]

    elements, coords = [], []
    for corner in grid:
        for perm in permutations(range(3)):
            path = [corner.copy()]
            for axis in perm:
                path.append(path[-1] + unit[axis])
            path = np.array(path)
            edges = path[1:] - path[0]
            if np.linalg.det(edges.T.astype(float)) < 0:
                path[[2, 3]] = path[[3, 2]]
            elements.append([vid(p) for p in path])
            coords.append(path * h)
    elements = np.array(elements, dtype=np.int64)
    coords = np.array(coords)
    jac = np.transpose(coords[:, 1:] - coords[:, :1], (0, 2, 1))
    volumes = np.linalg.det(jac) * REF_VOLUME
    return TorusMesh(n, vertices, elements, coords, jac, volumes)
