"""Benchmark PDE problems.

Every problem works on 2-D points. Residuals and constraint operators take a
:class:`~rpinn.autodiff.Jet2` of the network output together with the point
array, so the same definition serves training (tape-valued jets) and
checking (plain jets). Exact solutions are written with the dispatching
elementwise functions and can be differentiated by :func:`eval_jet`.

Coordinate order per problem:

* ``poisson_peak``, ``two_peaks``: ``(x, y)``
* ``burgers``: ``(x, t)``
* ``wave``: ``(t, x)``
"""

from __future__ import annotations

import gzip
import io
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np

from .autodiff import cosh, exp, sin
from .mesh import RectDomain

BURGERS_NU = 0.001 / np.pi
SQRT3 = np.sqrt(3.0)


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class Segment:
    """Boundary piece where coordinate ``axis`` equals ``value``."""

    name: str
    axis: int
    value: float
    lo: float
    hi: float

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def points(self, k: int) -> np.ndarray:
        """``k`` cell-centred equispaced points along the segment."""
        s = self.lo + (np.arange(k) + 0.5) / k * (self.hi - self.lo) if k else np.zeros(0)
        pts = np.empty((k, 2))
        pts[:, self.axis] = self.value
        pts[:, 1 - self.axis] = s
        return pts


@dataclass(frozen=True)
class Constraint:
    """``operator(jet, points)`` is the violation; ``order`` is the highest
    input derivative it reads."""

    name: str
    segment: Segment
    operator: Callable
    order: int = 0


@dataclass(frozen=True, eq=False)
class PdeProblem:
    name: str
    domain: RectDomain
    residual_fn: Callable
    constraints: tuple
    exact_fn: Callable | None = None
    source: Callable | None = None
    lam0: np.ndarray = field(default_factory=lambda: np.zeros(0))
    coords: tuple = ("x", "y")
    reference: "ReferenceGrid | None" = None
    description: str = ""

    @property
    def n_lambda(self) -> int:
        return len(self.lam0)

    @property
    def segments(self) -> list[Segment]:
        out = []
        for c in self.constraints:
            if c.segment not in out:
                out.append(c.segment)
        return out

    @property
    def constraint_order(self) -> int:
        return max((c.order for c in self.constraints), default=0)

    def check_points(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        inside = self.domain.contains(pts, tol=1e-12)
        if not np.all(inside):
            k = int(np.flatnonzero(~inside)[0])
            raise DomainError(f"{self.name}: point {pts[k]} lies outside {self.domain}")
        return pts

    def residual(self, jet, points, lam=None):
        pts = self.check_points(points)
        return self.residual_fn(jet, pts, self.lam0 if lam is None else lam)

    def exact(self, points) -> np.ndarray:
        pts = self.check_points(points)
        if self.exact_fn is not None:
            return np.asarray(self.exact_fn(pts), dtype=float)
        if self.reference is not None:
            return self.reference(pts)
        raise ValueError(f"{self.name} has no exact or reference solution")

    def has_closed_form(self) -> bool:
        return self.exact_fn is not None


# ---------------------------------------------------------------------------
# helpers on point-like inputs (arrays or jets)


def _coord(p, i):
    return p[..., i]


def _gauss(p, cx, cy):
    dx = _coord(p, 0) - cx
    dy = _coord(p, 1) - cy
    return exp(-1000.0 * (dx * dx + dy * dy))


def _sech(z):
    return 1.0 / cosh(z)


def _unit_square_segments(lo, hi, axis_names=("x", "y")):
    (a1, a2), (b1, b2) = lo, hi
    n0, n1 = axis_names
    return [
        Segment(f"{n1}={a2:g}", 1, a2, a1, b1),
        Segment(f"{n0}={b1:g}", 0, b1, a2, b2),
        Segment(f"{n1}={b2:g}", 1, b2, a1, b1),
        Segment(f"{n0}={a1:g}", 0, a1, a2, b2),
    ]


def _dirichlet(exact):
    def op(jet, pts):
        return jet.value - exact(pts)

    return op


# ---------------------------------------------------------------------------
# Poisson with a sharp peak


def poisson_exact(p):
    return _gauss(p, 0.5, 0.5)


def poisson_source(pts):
    """-Laplacian of the peak solution."""
    pts = np.atleast_2d(pts)
    r2 = (pts[:, 0] - 0.5) ** 2 + (pts[:, 1] - 0.5) ** 2
    return (4000.0 - 4.0e6 * r2) * np.exp(-1000.0 * r2)


def _poisson_residual(jet, pts, lam):
    return -(jet.second[0][0] + jet.second[1][1]) - poisson_source(pts)


def poisson_peak() -> PdeProblem:
    dom = RectDomain((0.0, 0.0), (1.0, 1.0))
    cons = tuple(Constraint(f"dirichlet {s.name}", s, _dirichlet(poisson_exact)) for s in _unit_square_segments(dom.lo, dom.hi))
    return PdeProblem("poisson_peak", dom, _poisson_residual, cons, poisson_exact, poisson_source,
                      description="-lap u = f on [0,1]^2 with a Gaussian peak at (0.5, 0.5)")


# ---------------------------------------------------------------------------
# two peaks with a drift term


def two_peaks_exact(p):
    return _gauss(p, 0.5, 0.5) + _gauss(p, -0.5, -0.5)


def two_peaks_source(pts):
    pts = np.atleast_2d(pts)
    x, y = pts[:, 0], pts[:, 1]
    out = np.zeros(len(pts))
    for a in (0.5, -0.5):
        r2 = (x - a) ** 2 + (y - a) ** 2
        g = np.exp(-1000.0 * r2)
        out += (4000.0 * (x * (x - a) + y * (y - a)) - 4.0 - 4000.0 + 4.0e6 * r2) * g
    return out


def _two_peaks_residual(jet, pts, lam):
    x, y = pts[:, 0], pts[:, 1]
    u = jet.value
    drift = 2.0 * x * jet.first[0] + 2.0 * y * jet.first[1] + 4.0 * u
    return (jet.second[0][0] + jet.second[1][1]) - drift - two_peaks_source(pts)


def two_peaks() -> PdeProblem:
    dom = RectDomain((-1.0, -1.0), (1.0, 1.0))
    cons = tuple(Constraint(f"dirichlet {s.name}", s, _dirichlet(two_peaks_exact)) for s in _unit_square_segments(dom.lo, dom.hi))
    return PdeProblem("two_peaks", dom, _two_peaks_residual, cons, two_peaks_exact, two_peaks_source,
                      description="-div(u grad(x^2+y^2)) + lap u = f on [-1,1]^2, peaks at +-(0.5, 0.5)")


# ---------------------------------------------------------------------------
# wave equation, points are (t, x)


def wave_initial(x):
    return _sech(2.0 * x) - 0.5 * _sech(2.0 * (x - 10.0)) - 0.5 * _sech(2.0 * (x + 10.0))


def wave_exact(p):
    t, x = _coord(p, 0), _coord(p, 1)
    c = SQRT3 * t
    return (
        0.5 * _sech(2.0 * (x - c))
        - 0.5 * _sech(2.0 * (x - 10.0 + c))
        + 0.5 * _sech(2.0 * (x + c))
        - 0.5 * _sech(2.0 * (x + 10.0 - c))
    )


def _wave_residual(jet, pts, lam):
    return jet.second[0][0] - 3.0 * jet.second[1][1]


def wave() -> PdeProblem:
    dom = RectDomain((0.0, -5.0), (6.0, 5.0))
    t0 = Segment("t=0", 0, 0.0, -5.0, 5.0)
    left = Segment("x=-5", 1, -5.0, 0.0, 6.0)
    right = Segment("x=5", 1, 5.0, 0.0, 6.0)
    cons = (
        Constraint("initial value", t0, lambda jet, pts: jet.value - wave_initial(pts[:, 1])),
        Constraint("initial velocity", t0, lambda jet, pts: jet.first[0], order=1),
        Constraint("dirichlet x=-5", left, lambda jet, pts: jet.value),
        Constraint("dirichlet x=5", right, lambda jet, pts: jet.value),
    )
    return PdeProblem("wave", dom, _wave_residual, cons, wave_exact, None, coords=("t", "x"),
                      description="u_tt - 3 u_xx = 0 on [0,6]x[-5,5]")


# ---------------------------------------------------------------------------
# Burgers, points are (x, t)


def _burgers_residual(jet, pts, lam):
    u = jet.value
    return jet.first[1] + u * jet.first[0] - BURGERS_NU * jet.second[0][0]


def burgers(reference: "ReferenceGrid | None" = None) -> PdeProblem:
    dom = RectDomain((-1.0, 0.0), (1.0, 1.0))
    left = Segment("x=-1", 0, -1.0, 0.0, 1.0)
    right = Segment("x=1", 0, 1.0, 0.0, 1.0)
    t0 = Segment("t=0", 1, 0.0, -1.0, 1.0)
    cons = (
        Constraint("dirichlet x=-1", left, lambda jet, pts: jet.value),
        Constraint("dirichlet x=1", right, lambda jet, pts: jet.value),
        Constraint("initial value", t0, lambda jet, pts: jet.value + np.sin(np.pi * pts[:, 0])),
    )
    ref = reference if reference is not None else load_burgers_reference()
    return PdeProblem("burgers", dom, _burgers_residual, cons, None, None, coords=("x", "t"), reference=ref,
                      description="u_t + u u_x = (0.001/pi) u_xx on [-1,1]x[0,1]")


def cole_hopf(x, t, nu: float = BURGERS_NU, ds: float = 0.02, chunk: int = 4096) -> np.ndarray:
    """Burgers solution for u(x, 0) = -sin(pi x) from the Cole-Hopf integral.

    With eta = sqrt(4 nu t) s the solution is a ratio of two Gaussian-weighted
    integrals in s; both are evaluated with the trapezoid rule in
    log-sum-exp form so that the large exponents near the shock stay finite.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    t = np.broadcast_to(np.asarray(t, dtype=float), x.shape)
    out = np.empty_like(x)
    k = 1.0 / (2.0 * np.pi * nu)
    # exponents are bounded by s^2 and 2k, so |s| <= sqrt(2k + 40) covers all mass
    smax = np.sqrt(2.0 * k + 40.0)
    s = np.arange(-smax, smax + ds / 2, ds)
    zero_t = t == 0
    out[zero_t] = -np.sin(np.pi * x[zero_t])
    idx = np.flatnonzero(~zero_t)
    for start in range(0, idx.size, chunk):
        sel = idx[start : start + chunk]
        xs, ts = x[sel, None], t[sel, None]
        arg = np.pi * (xs - np.sqrt(4.0 * nu * ts) * s[None, :])
        expo = -k * np.cos(arg) - s[None, :] ** 2
        expo -= expo.max(axis=1, keepdims=True)
        w = np.exp(expo)
        w[:, [0, -1]] *= 0.5
        out[sel] = -np.sum(np.sin(arg) * w, axis=1) / np.sum(w, axis=1)
    return out


@dataclass(frozen=True, eq=False)
class ReferenceGrid:
    """Solution values on a tensor grid, ``values[j, i]`` at ``(x_i, t_j)``."""

    x: np.ndarray
    t: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (len(self.t), len(self.x)):
            raise ValueError("reference values must have shape (nt, nx)")

    @property
    def points(self) -> np.ndarray:
        X, T = np.meshgrid(self.x, self.t)
        return np.column_stack([X.ravel(), T.ravel()])

    def __call__(self, pts) -> np.ndarray:
        from scipy.interpolate import RegularGridInterpolator

        interp = RegularGridInterpolator((self.t, self.x), self.values, method="linear")
        pts = np.atleast_2d(pts)
        return interp(pts[:, ::-1])


def generate_burgers_reference(nx: int = 1024, nt: int = 1024) -> ReferenceGrid:
    x = np.linspace(-1.0, 1.0, nx)
    t = np.linspace(0.0, 1.0, nt)
    X, T = np.meshgrid(x, t)
    u = cole_hopf(X.ravel(), T.ravel()).reshape(nt, nx)
    return ReferenceGrid(x, t, u)


def write_reference(path, ref: ReferenceGrid) -> Path:
    """Header row ``nx,nt,x_lo,x_hi,t_lo,t_hi`` then one row of ``nx`` values
    per time level, earliest first. Gzipped when the name ends in ``.gz``."""
    path = Path(path)
    buf = io.StringIO()
    buf.write("nx,nt,x_lo,x_hi,t_lo,t_hi\n")
    buf.write(f"{len(ref.x)},{len(ref.t)},{ref.x[0]:.17g},{ref.x[-1]:.17g},{ref.t[0]:.17g},{ref.t[-1]:.17g}\n")
    for row in ref.values:
        buf.write(",".join(f"{v:.17g}" for v in row) + "\n")
    data = buf.getvalue().encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".gz":
        # fixed mtime keeps the file byte-reproducible
        with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as fh:
            fh.write(data)
    else:
        path.write_bytes(data)
    return path


def read_reference(path_or_file) -> ReferenceGrid:
    if hasattr(path_or_file, "read"):
        raw = path_or_file.read()
    else:
        raw = Path(path_or_file).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    lines = raw.decode().splitlines()
    nx, nt, xlo, xhi, tlo, thi = lines[1].split(",")
    nx, nt = int(nx), int(nt)
    values = np.loadtxt(lines[2:], delimiter=",", ndmin=2)
    if values.shape != (nt, nx):
        raise ValueError(f"reference grid has shape {values.shape}, header says ({nt}, {nx})")
    return ReferenceGrid(np.linspace(float(xlo), float(xhi), nx), np.linspace(float(tlo), float(thi), nt), values)


BURGERS_REFERENCE_FILE = "burgers_reference.csv.gz"


@lru_cache(maxsize=1)
def load_burgers_reference() -> ReferenceGrid:
    with resources.files("rpinn.data").joinpath(BURGERS_REFERENCE_FILE).open("rb") as fh:
        return read_reference(fh)


# ---------------------------------------------------------------------------
# inverse toy: -k lap u = f with unknown scalar k


INVERSE_TRUE_K = 1.5


def inverse_exact(p):
    return sin(np.pi * _coord(p, 0)) * sin(np.pi * _coord(p, 1))


def _inverse_residual(jet, pts, lam):
    f = INVERSE_TRUE_K * 2.0 * np.pi**2 * np.sin(np.pi * pts[:, 0]) * np.sin(np.pi * pts[:, 1])
    return -lam[0] * (jet.second[0][0] + jet.second[1][1]) - f


def poisson_inverse(k0: float = 1.0) -> PdeProblem:
    """Poisson problem with an unknown diffusion coefficient (true value 1.5)."""
    dom = RectDomain((0.0, 0.0), (1.0, 1.0))
    cons = tuple(Constraint(f"dirichlet {s.name}", s, _dirichlet(inverse_exact)) for s in _unit_square_segments(dom.lo, dom.hi))
    return PdeProblem("poisson_inverse", dom, _inverse_residual, cons, inverse_exact, None,
                      lam0=np.array([k0]), description="-k lap u = f, k unknown")


PROBLEMS = {
    "poisson_peak": poisson_peak,
    "burgers": burgers,
    "two_peaks": two_peaks,
    "wave": wave,
}


def get_problem(name: str) -> PdeProblem:
    if name == "poisson_inverse":
        return poisson_inverse()
    try:
        return PROBLEMS[name]()
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; valid names: {', '.join(PROBLEMS)}") from None
