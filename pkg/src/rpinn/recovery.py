"""Gradient recovery on vertex patches and the element-wise recovery estimator."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh import TriMesh, element_gradients

# normal systems with a larger condition number count as singular
SINGULAR_COND = 1e12

# edge-midpoint rule: midpoints of edges (0,1), (1,2), (2,0) in barycentric form
_MIDPOINTS = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])


class RecoveryMethod(str, enum.Enum):
    WeightedAveraging = "weighted_averaging"
    LocalL2Projection = "local_l2_projection"
    LeastSquaresFit = "least_squares_fit"

    @classmethod
    def parse(cls, value) -> "RecoveryMethod":
        if isinstance(value, cls):
            return value
        for m in cls:
            if value in (m.value, m.name):
                return m
        raise ValueError(f"unknown recovery method {value!r}; choose from {[m.value for m in cls]}")


@dataclass
class RecoveredGradient:
    values: np.ndarray  # (n_vertices, 2)
    fallback_count: int = 0
    fallback_vertices: np.ndarray | None = None


@dataclass
class ErrorIndicator:
    eta: np.ndarray  # (n_triangles,)
    mesh: TriMesh
    method: RecoveryMethod
    fallback_count: int = 0

    def __post_init__(self):
        if self.eta.shape != (self.mesh.n_triangles,):
            raise ValueError("one indicator value per triangle expected")
        if not np.all(np.isfinite(self.eta)) or np.any(self.eta < 0):
            raise ValueError("indicator values must be finite and nonnegative")

    @property
    def global_estimate(self) -> float:
        return float(np.sqrt(np.sum(self.eta**2)))


def _weighted_average(mesh: TriMesh, grads: np.ndarray) -> np.ndarray:
    owners = np.repeat(np.arange(mesh.n_vertices), mesh.patch_sizes())
    w = mesh.areas[mesh.patch_tris]
    num = np.zeros((mesh.n_vertices, 2))
    for c in range(2):
        num[:, c] = np.bincount(owners, weights=w * grads[mesh.patch_tris, c], minlength=mesh.n_vertices)
    den = np.bincount(owners, weights=w, minlength=mesh.n_vertices)
    return num / den[:, None]


def _patch_groups(mesh: TriMesh):
    """Vertices grouped by patch size, with their (n_v, k) triangle tables."""
    sizes = mesh.patch_sizes()
    for k in np.unique(sizes):
        verts = np.flatnonzero(sizes == k)
        tris = mesh.patch_tris[mesh.patch_ptr[verts][:, None] + np.arange(k)]
        yield int(k), verts, tris


def _local_frame(mesh: TriMesh, verts, pts):
    # coordinates relative to the patch centre vertex, scaled by the cell size
    scale = np.array([mesh.hx, mesh.hy])
    return (pts - mesh.vertices[verts][:, None, :]) / scale


def _l2_projection_system(mesh, verts, tris, grads):
    p = mesh.vertices[mesh.triangles[tris]]  # (n, k, 3, 2)
    mids = np.einsum("qa,nkac->nkqc", _MIDPOINTS, p)
    loc = _local_frame(mesh, verts, mids.reshape(len(verts), -1, 2)).reshape(mids.shape)
    phi = np.concatenate([np.ones(loc.shape[:-1] + (1,)), loc], axis=-1)  # (n, k, q, 3)
    w = mesh.areas[tris][:, :, None] / 3.0
    gram = np.einsum("nkq,nkqa,nkqb->nab", w, phi, phi)
    rhs = np.einsum("nkq,nkqa,nkc->nac", w, phi, grads[tris])
    return gram, rhs


def _least_squares_system(mesh, verts, tris, grads):
    loc = _local_frame(mesh, verts, mesh.barycenters[tris])
    A = np.concatenate([np.ones(loc.shape[:-1] + (1,)), loc], axis=-1)  # (n, k, 3)
    return np.einsum("nka,nkb->nab", A, A), np.einsum("nka,nkc->nac", A, grads[tris])


def recover_gradient(mesh: TriMesh, u: np.ndarray, method=RecoveryMethod.WeightedAveraging) -> RecoveredGradient:
    """Nodal recovered gradient of the linear interpolant of ``u``.

    For the projection and least-squares methods a linear polynomial is fitted
    per component over the vertex patch and evaluated at the vertex. Vertices
    whose local system is singular use the weighted average instead and are
    counted in ``fallback_count``.
    """
    method = RecoveryMethod.parse(method)
    grads = element_gradients(mesh, u)
    averaged = _weighted_average(mesh, grads)
    if method is RecoveryMethod.WeightedAveraging:
        return RecoveredGradient(averaged, 0, np.zeros(0, dtype=np.int64))

    build = _l2_projection_system if method is RecoveryMethod.LocalL2Projection else _least_squares_system
    out = averaged.copy()
    fallback = []
    for k, verts, tris in _patch_groups(mesh):
        gram, rhs = build(mesh, verts, tris, grads)
        if k < 3 and method is RecoveryMethod.LeastSquaresFit:
            # fewer than three barycenters cannot determine a plane
            ok = np.zeros(len(verts), dtype=bool)
        else:
            ok = np.linalg.cond(gram) < SINGULAR_COND
        if np.any(ok):
            coef = np.linalg.solve(gram[ok], rhs[ok])
            out[verts[ok]] = coef[:, 0, :]
        fallback.append(verts[~ok])
    fallback = np.sort(np.concatenate(fallback)) if fallback else np.zeros(0, dtype=np.int64)
    return RecoveredGradient(out, int(fallback.size), fallback)


def estimate_from_recovered(mesh: TriMesh, grads: np.ndarray, recovered: np.ndarray) -> np.ndarray:
    """eta_K = L2 norm over K of (element gradient - interpolated recovered gradient)."""
    G = recovered[mesh.triangles]  # (n_t, 3, 2)
    at_mid = np.einsum("qa,tac->tqc", _MIDPOINTS, G)
    diff = grads[:, None, :] - at_mid
    sq = np.sum(diff * diff, axis=(1, 2)) * mesh.areas / 3.0
    return np.sqrt(sq)


def estimate(mesh: TriMesh, u: np.ndarray, method=RecoveryMethod.WeightedAveraging) -> ErrorIndicator:
    method = RecoveryMethod.parse(method)
    rec = recover_gradient(mesh, u, method)
    eta = estimate_from_recovered(mesh, element_gradients(mesh, u), rec.values)
    return ErrorIndicator(eta, mesh, method, rec.fallback_count)


def write_indicator_csv(path, indicator: ErrorIndicator) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["triangle_id", "eta"])
        for k, v in enumerate(indicator.eta):
            w.writerow([k, f"{v:.17g}"])
    return path


def read_indicator_csv(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 1]
