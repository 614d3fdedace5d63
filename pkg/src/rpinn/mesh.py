"""Regular diagonal triangulation of a rectangle.

Vertices are numbered row-major, ``v = j * (nx + 1) + i`` for the vertex at
column ``i`` and row ``j``. Each cell ``(i, j)`` is split along its
lower-left to upper-right diagonal into a lower triangle (index
``2 * (j * nx + i)``) and an upper triangle (the next index), both
counter-clockwise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class RectDomain:
    lo: tuple[float, float]
    hi: tuple[float, float]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 2 or len(hi) != 2 or not (lo[0] < hi[0] and lo[1] < hi[1]):
            raise MeshError(f"invalid rectangle lo={self.lo} hi={self.hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def area(self) -> float:
        return (self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1])

    def scale(self, unit_points: np.ndarray) -> np.ndarray:
        """Map points from [0, 1]^2 onto the rectangle."""
        lo = np.asarray(self.lo)
        return lo + np.asarray(unit_points) * (np.asarray(self.hi) - lo)

    def contains(self, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        p = np.atleast_2d(points)
        span = np.asarray(self.hi) - np.asarray(self.lo)
        lo = np.asarray(self.lo) - tol * span
        hi = np.asarray(self.hi) + tol * span
        return np.all((p >= lo) & (p <= hi), axis=1)


@dataclass(frozen=True, eq=False)
class TriMesh:
    domain: RectDomain
    nx: int
    ny: int
    vertices: np.ndarray = field(repr=False)
    triangles: np.ndarray = field(repr=False)
    areas: np.ndarray = field(repr=False)
    barycenters: np.ndarray = field(repr=False)
    # CSR adjacency: triangles incident to vertex v are
    # patch_tris[patch_ptr[v]:patch_ptr[v + 1]], in increasing index order
    patch_ptr: np.ndarray = field(repr=False)
    patch_tris: np.ndarray = field(repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def hx(self) -> float:
        return (self.domain.hi[0] - self.domain.lo[0]) / self.nx

    @property
    def hy(self) -> float:
        return (self.domain.hi[1] - self.domain.lo[1]) / self.ny

    def patch(self, v: int) -> np.ndarray:
        return self.patch_tris[self.patch_ptr[v] : self.patch_ptr[v + 1]]

    def patch_sizes(self) -> np.ndarray:
        return np.diff(self.patch_ptr)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def build_diagonal_mesh(domain: RectDomain, nx: int, ny: int | None = None) -> TriMesh:
    ny = nx if ny is None else ny
    if nx < 1 or ny < 1:
        raise MeshError(f"cell counts must be positive, got nx={nx} ny={ny}")
    xs = np.linspace(domain.lo[0], domain.hi[0], nx + 1)
    ys = np.linspace(domain.lo[1], domain.hi[1], ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    j, i = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    v00 = (j * (nx + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([v00, v10, v11])
    triangles[1::2] = np.column_stack([v00, v11, v01])

    p = vertices[triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    areas = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    barycenters = p.mean(axis=1)

    owners = triangles.ravel()
    tri_ids = np.repeat(np.arange(len(triangles)), 3)
    order = np.lexsort((tri_ids, owners))
    counts = np.bincount(owners, minlength=len(vertices))
    patch_ptr = np.concatenate([[0], np.cumsum(counts)])
    patch_tris = tri_ids[order]

    return TriMesh(domain, nx, ny, vertices, triangles, areas, barycenters, patch_ptr, patch_tris)


def interpolate_nodal(mesh: TriMesh, f) -> np.ndarray:
    """Vertex values of ``f`` (a function of an ``(n, 2)`` point array)."""
    values = np.asarray(f(mesh.vertices), dtype=float)
    if values.ndim == 0:
        values = np.full(mesh.n_vertices, float(values))
    if values.shape[0] != mesh.n_vertices:
        raise MeshError(f"expected {mesh.n_vertices} vertex values, got {values.shape}")
    bad = np.flatnonzero(~np.all(np.isfinite(values.reshape(len(values), -1)), axis=1))
    if bad.size:
        raise MeshError(f"non-finite value at vertex {bad[0]} {mesh.vertices[bad[0]]}")
    return values


def element_gradients(mesh: TriMesh, u: np.ndarray) -> np.ndarray:
    """Constant gradient of the linear interpolant on every triangle."""
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.n_vertices,):
        raise MeshError(f"nodal field must have shape ({mesh.n_vertices},)")
    p = mesh.vertices[mesh.triangles]
    uv = u[mesh.triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    if np.any(det == 0):
        raise MeshError(f"degenerate triangle {int(np.flatnonzero(det == 0)[0])}")
    du1 = uv[:, 1] - uv[:, 0]
    du2 = uv[:, 2] - uv[:, 0]
    gx = (du1 * e2[:, 1] - du2 * e1[:, 1]) / det
    gy = (du2 * e1[:, 0] - du1 * e2[:, 0]) / det
    return np.column_stack([gx, gy])


def locate(mesh: TriMesh, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Containing triangle and barycentric coordinates of each point.

    Points on a shared edge or vertex go to the lowest-index triangle that
    contains them.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    inside = mesh.domain.contains(pts)
    if not np.all(inside):
        k = int(np.flatnonzero(~inside)[0])
        raise MeshError(f"point {pts[k]} lies outside the domain")
    lo = np.asarray(mesh.domain.lo)
    fx = (pts[:, 0] - lo[0]) / mesh.hx
    fy = (pts[:, 1] - lo[1]) / mesh.hy
    # ceil - 1 sends grid-line points to the lower-index cell
    ci = np.clip(np.ceil(fx).astype(np.int64) - 1, 0, mesh.nx - 1)
    cj = np.clip(np.ceil(fy).astype(np.int64) - 1, 0, mesh.ny - 1)
    s = fx - ci
    t = fy - cj
    upper = t > s
    tri = 2 * (cj * mesh.nx + ci) + upper
    # lower: (v00, v10, v11) -> weights (1 - s, s - t, t)
    # upper: (v00, v11, v01) -> weights (1 - t, s, t - s)
    bary = np.where(
        upper[:, None],
        np.column_stack([1.0 - t, s, t - s]),
        np.column_stack([1.0 - s, s - t, t]),
    )
    return tri, bary


def interpolate_linear(mesh: TriMesh, field: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Piecewise-linear interpolation of a nodal scalar or vector field."""
    field = np.asarray(field, dtype=float)
    tri, bary = locate(mesh, points)
    vals = field[mesh.triangles[tri]]
    if field.ndim == 1:
        out = np.einsum("nk,nk->n", bary, vals)
    else:
        out = np.einsum("nk,nkc->nc", bary, vals)
    return out[0] if np.ndim(points) == 1 else out


def sample_in_triangles(mesh: TriMesh, tri_indices: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One uniform point inside each listed triangle (square-root map)."""
    tri_indices = np.asarray(tri_indices, dtype=np.int64)
    n = len(tri_indices)
    r = rng.random((n, 2))
    sq = np.sqrt(r[:, 0])
    w = np.column_stack([1.0 - sq, sq * (1.0 - r[:, 1]), sq * r[:, 1]])
    p = mesh.vertices[mesh.triangles[tri_indices]]
    return np.einsum("nk,nkc->nc", w, p)


def sample_in_triangle(mesh: TriMesh, tri_index: int, rng: np.random.Generator) -> np.ndarray:
    return sample_in_triangles(mesh, np.array([tri_index]), rng)[0]


def barycentric(mesh: TriMesh, tri_indices: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of ``points`` relative to given triangles."""
    p = mesh.vertices[mesh.triangles[np.asarray(tri_indices)]]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    r = np.asarray(points) - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    l1 = (r[:, 0] * e2[:, 1] - r[:, 1] * e2[:, 0]) / det
    l2 = (e1[:, 0] * r[:, 1] - e1[:, 1] * r[:, 0]) / det
    return np.column_stack([1.0 - l1 - l2, l1, l2])


def write_mesh_csv(mesh: TriMesh, directory) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    vpath = directory / "mesh_vertices.csv"
    tpath = directory / "mesh_triangles.csv"
    with open(vpath, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "x", "y"])
        for k, (x, y) in enumerate(mesh.vertices):
            w.writerow([k, f"{x:.17g}", f"{y:.17g}"])
    with open(tpath, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "v0", "v1", "v2"])
        for k, (a, b, c) in enumerate(mesh.triangles):
            w.writerow([k, a, b, c])
    return vpath, tpath
