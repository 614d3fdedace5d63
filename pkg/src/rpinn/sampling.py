"""Collocation point generators and the error-driven adaptive allocator."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mesh import RectDomain, TriMesh, sample_in_triangles

# slack for comparisons of eps * m against integers
_EPS_SLACK = 1e-9


class NoErrorSignal(ValueError):
    """Raised when every indicator value is zero."""


# ---------------------------------------------------------------------------
# uniform background samplers

_SOBOL_BITS = 52


def _sobol_directions(bits: int = _SOBOL_BITS) -> np.ndarray:
    # dim 1: van der Corput; dim 2: primitive polynomial x + 1 with m_1 = 1,
    # giving v_k = v_{k-1} ^ (v_{k-1} >> 1) in left-aligned form
    v = np.zeros((2, bits), dtype=np.uint64)
    for k in range(bits):
        v[0, k] = np.uint64(1) << np.uint64(bits - 1 - k)
    v[1, 0] = np.uint64(1) << np.uint64(bits - 1)
    for k in range(1, bits):
        v[1, k] = v[1, k - 1] ^ (v[1, k - 1] >> np.uint64(1))
    return v


_DIRECTIONS = _sobol_directions()


def sobol_2d(n: int, skip: int = 1) -> np.ndarray:
    """First ``n`` points of the unscrambled 2-D Sobol sequence in [0, 1)^2,
    after dropping the first ``skip`` points (``skip=1`` drops the origin)."""
    if n < 0 or skip < 0:
        raise ValueError("n and skip must be nonnegative")
    idx = np.arange(skip, skip + n, dtype=np.uint64)
    gray = idx ^ (idx >> np.uint64(1))
    out = np.zeros((n, 2), dtype=np.uint64)
    for k in range(_SOBOL_BITS):
        bit = ((gray >> np.uint64(k)) & np.uint64(1)).astype(bool)
        out[bit] ^= _DIRECTIONS[:, k]
    return out.astype(float) / float(2**_SOBOL_BITS)


def random_points(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.random((n, 2))


def grid_points(n: int) -> np.ndarray:
    """Cell-centred ``k x k`` grid with ``k = ceil(sqrt(n))``, truncated to ``n``."""
    k = int(np.ceil(np.sqrt(n))) if n else 0
    c = (np.arange(k) + 0.5) / max(k, 1)
    X, Y = np.meshgrid(c, c)
    return np.column_stack([X.ravel(), Y.ravel()])[:n]


def background_points(domain: RectDomain, n: int, method: str = "sobol", rng=None) -> np.ndarray:
    if method == "sobol":
        unit = sobol_2d(n)
    elif method == "random":
        unit = random_points(n, rng if rng is not None else np.random.default_rng())
    elif method == "grid":
        unit = grid_points(n)
    else:
        raise ValueError(f"unknown sampler {method!r}; choose sobol, random or grid")
    return domain.scale(unit)


# ---------------------------------------------------------------------------
# boundary points


@dataclass
class BoundarySet:
    points: np.ndarray  # (n, 2), one row per (point, constraint) pair
    constraint_ids: np.ndarray  # (n,) index into problem.constraints

    def __len__(self):
        return len(self.points)


def _largest_remainder(weights: np.ndarray, n: int) -> np.ndarray:
    quota = n * weights / weights.sum()
    counts = np.floor(quota + _EPS_SLACK).astype(np.int64)
    rest = n - counts.sum()
    if rest > 0:
        order = np.argsort(-(quota - counts), kind="stable")
        counts[order[:rest]] += 1
    return counts


def boundary_points(problem, n: int) -> BoundarySet:
    """``n`` distinct boundary points split over the problem's boundary segments
    in proportion to length (largest remainder), equispaced on each segment.

    A point on a segment carrying several constraints appears once per
    constraint.
    """
    if n < 1:
        raise ValueError("need at least one boundary point")
    segments = problem.segments
    counts = _largest_remainder(np.array([s.length for s in segments]), n)
    pts, ids = [], []
    for seg, k in zip(segments, counts):
        p = seg.points(int(k))
        for cid, c in enumerate(problem.constraints):
            if c.segment == seg:
                pts.append(p)
                ids.append(np.full(len(p), cid, dtype=np.int64))
    return BoundarySet(np.concatenate(pts), np.concatenate(ids))


# ---------------------------------------------------------------------------
# adaptive allocation


@dataclass(frozen=True)
class RecadConfig:
    n_adaptive: int
    epsilon: float = 0.02

    def __post_init__(self):
        if self.n_adaptive < 0:
            raise ValueError("n_adaptive must be nonnegative")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")

    def validate_for(self, n_elements: int) -> None:
        if n_elements < 1:
            raise ValueError("mesh has no elements")
        if not (self.epsilon * n_elements > 1.0 + _EPS_SLACK and self.epsilon < 1.0):
            raise ValueError(f"epsilon must lie in (1/{n_elements}, 1), got {self.epsilon}")


def recad_counts(eta: np.ndarray, n_adaptive: int, epsilon: float) -> np.ndarray:
    """Per-element point counts from the shrinking top-subset allocation.

    Elements are ranked by descending indicator (ties by index). Each round
    keeps the top ``floor(epsilon * m)`` of the previous ``m`` elements and
    hands out the still-unassigned points in proportion to their indicators,
    rounding down. Once the kept subset is smaller than ``1 / epsilon`` the
    leftover goes to the top-ranked element.
    """
    eta = np.asarray(eta, dtype=float)
    n_e = eta.size
    RecadConfig(n_adaptive, epsilon).validate_for(n_e)
    if not np.all(np.isfinite(eta)) or np.any(eta < 0):
        raise ValueError("indicator values must be finite and nonnegative")
    counts = np.zeros(n_e, dtype=np.int64)
    if n_adaptive == 0:
        return counts
    if not np.any(eta > 0):
        raise NoErrorSignal("no error signal: all indicator values are zero")

    order = np.argsort(-eta, kind="stable")
    ranked = eta[order]
    assigned = np.zeros(n_e, dtype=np.int64)
    remaining = n_adaptive
    m = n_e
    while remaining != 0:
        m = int(np.floor(epsilon * m + _EPS_SLACK))
        top = ranked[:m]
        share = np.floor(remaining * top / top.sum() + _EPS_SLACK).astype(np.int64)
        assigned[:m] += share
        remaining = n_adaptive - int(assigned.sum())
        if epsilon * m < 1.0 - _EPS_SLACK:
            assigned[0] += remaining
            remaining = 0
            break
    counts[order] = assigned
    return counts


def recad(eta, mesh: TriMesh, cfg: RecadConfig, rng: np.random.Generator):
    """Adaptive counts per triangle and the points drawn uniformly inside them.

    Points are listed triangle by triangle in increasing triangle index.
    """
    eta = getattr(eta, "eta", eta)
    if len(eta) != mesh.n_triangles:
        raise ValueError("one indicator value per triangle expected")
    counts = recad_counts(eta, cfg.n_adaptive, cfg.epsilon)
    tri = np.repeat(np.arange(mesh.n_triangles), counts)
    return counts, sample_in_triangles(mesh, tri, rng)


# ---------------------------------------------------------------------------
# residual-proportional baseline


def probe_grid(domain: RectDomain, nx: int, ny: int | None = None) -> np.ndarray:
    """Cell centres of an ``nx x ny`` grid, row-major in y then x."""
    ny = nx if ny is None else ny
    cx = domain.lo[0] + (np.arange(nx) + 0.5) / nx * (domain.hi[0] - domain.lo[0])
    cy = domain.lo[1] + (np.arange(ny) + 0.5) / ny * (domain.hi[1] - domain.lo[1])
    X, Y = np.meshgrid(cx, cy)
    return np.column_stack([X.ravel(), Y.ravel()])


def residual_pdf_sample(residuals, domain: RectDomain, nx: int, ny: int, n: int, rng) -> np.ndarray:
    """Draw ``n`` points with density proportional to ``|residual|`` per probe cell.

    ``residuals`` holds one value per cell of :func:`probe_grid`. A cell is
    chosen categorically, then the point is uniform inside it. All-zero
    residuals give uniform sampling.
    """
    r = np.abs(np.asarray(residuals, dtype=float)).ravel()
    if r.size != nx * ny:
        raise ValueError(f"expected {nx * ny} probe residuals, got {r.size}")
    if n == 0:
        return np.zeros((0, 2))
    p = r / r.sum() if r.sum() > 0 else np.full(r.size, 1.0 / r.size)
    cells = rng.choice(r.size, size=n, p=p)
    ci, cj = cells % nx, cells // nx
    off = rng.random((n, 2))
    unit = np.column_stack([(ci + off[:, 0]) / nx, (cj + off[:, 1]) / ny])
    return domain.scale(unit)


# ---------------------------------------------------------------------------
# collocation set and dumps


@dataclass
class CollocationSet:
    background: np.ndarray
    boundary: BoundarySet
    adaptive: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    @property
    def interior(self) -> np.ndarray:
        if len(self.adaptive) == 0:
            return self.background
        return np.concatenate([self.background, self.adaptive])

    def with_adaptive(self, points: np.ndarray) -> "CollocationSet":
        return CollocationSet(self.background, self.boundary, np.asarray(points, dtype=float).reshape(-1, 2))


def write_points_csv(path, iteration: int, colloc: CollocationSet) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    boundary = np.unique(colloc.boundary.points, axis=0) if len(colloc.boundary) else np.zeros((0, 2))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "role", "x", "y"])
        for role, pts in (("background", colloc.background), ("adaptive", colloc.adaptive), ("boundary", boundary)):
            for x, y in pts:
                w.writerow([iteration, role, f"{x:.17g}", f"{y:.17g}"])
    return path


def read_points_csv(path) -> dict:
    out: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["role"], []).append((float(row["x"]), float(row["y"])))
    return {k: np.array(v) for k, v in out.items()}
