"""Grid and point-cloud measures, convolution kernels and geometric helpers.

A grid measure stores per-cell *masses* (not densities) on a regular
axis-aligned grid.  Cell ``i`` along an axis covers
``[origin + i*h, origin + (i+1)*h)`` and is represented by its center.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage, signal

from otlab.errors import OtlabError

GRID_BUDGET = 2 ** 22
MASS_TOL = 1e-9


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class GridSpec:
    origin: tuple
    h: float
    shape: tuple
    budget: int = GRID_BUDGET

    def __post_init__(self):
        origin = tuple(float(o) for o in np.atleast_1d(self.origin))
        shape = tuple(int(s) for s in np.atleast_1d(self.shape))
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "h", float(self.h))
        if len(origin) != len(shape) or not shape:
            raise OtlabError("bad-grid", "origin and extents must have the same positive length")
        if not (self.h > 0 and math.isfinite(self.h)):
            raise OtlabError("bad-grid", f"spacing must be positive, got {self.h}")
        if min(shape) < 1:
            raise OtlabError("bad-grid", f"extents must be >= 1, got {shape}")
        if int(np.prod(shape, dtype=np.int64)) > self.budget:
            raise OtlabError("grid-budget", f"{np.prod(shape)} cells exceed budget {self.budget}")

    @property
    def n(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return self.h ** self.n

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.origin) + self.h * np.asarray(self.shape)

    def axes(self) -> list[np.ndarray]:
        """Cell-center coordinates along each axis."""
        return [o + (np.arange(s) + 0.5) * self.h for o, s in zip(self.origin, self.shape)]

    def centers(self) -> np.ndarray:
        """All cell centers, shape (size, n), row-major order."""
        grids = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def index_of(self, x) -> np.ndarray:
        """Integer cell index (per axis) containing each point of ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.floor((x - np.asarray(self.origin)) / self.h).astype(np.int64)

    def offset_cells(self, other: "GridSpec") -> np.ndarray:
        """Integer cell offset of ``other``'s origin relative to ours (same h required)."""
        if other.n != self.n or not math.isclose(other.h, self.h, rel_tol=1e-12):
            raise OtlabError("incompatible-grids", "grids differ in dimension or spacing")
        off = (np.asarray(other.origin) - np.asarray(self.origin)) / self.h
        r = np.round(off)
        if np.max(np.abs(off - r), initial=0.0) > 1e-6:
            raise OtlabError("incompatible-grids", "grid origins are not aligned")
        return r.astype(np.int64)

    @staticmethod
    def box(lo, hi, h: float) -> "GridSpec":
        """Grid covering [lo, hi] (per axis) with spacing h."""
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        shape = np.maximum(1, np.round((hi - lo) / h).astype(np.int64))
        return GridSpec(tuple(lo), h, tuple(shape))


def union_spec(a: GridSpec, b: GridSpec) -> GridSpec:
    """Smallest aligned grid containing both ``a`` and ``b``."""
    off = a.offset_cells(b)
    lo = np.minimum(0, off)
    hi = np.maximum(np.asarray(a.shape), off + np.asarray(b.shape))
    origin = np.asarray(a.origin) + lo * a.h
    return GridSpec(tuple(origin), a.h, tuple(hi - lo))


# ---------------------------------------------------------------------------
# measures


class GridMeasure:
    """Nonnegative cell masses on a :class:`GridSpec`. Immutable."""

    __slots__ = ("spec", "weights")

    def __init__(self, spec: GridSpec, weights):
        w = np.array(weights, dtype=float).reshape(spec.shape)
        if not np.all(np.isfinite(w)):
            raise OtlabError("bad-weights", "weights must be finite")
        if np.any(w < 0):
            raise OtlabError("bad-weights", "weights must be nonnegative")
        if not w.sum() > 0:
            raise OtlabError("empty-support", "measure has zero total mass")
        w.setflags(write=False)
        object.__setattr__(self, "spec", spec)
        object.__setattr__(self, "weights", w)

    def __setattr__(self, name, value):
        raise AttributeError("GridMeasure is immutable")

    def __repr__(self):
        return f"GridMeasure(n={self.n}, shape={self.spec.shape}, h={self.spec.h}, mass={self.mass:.6g})"

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def h(self) -> float:
        return self.spec.h

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def is_probability(self, tol: float = MASS_TOL) -> bool:
        return abs(self.mass - 1.0) <= tol

    def normalized(self) -> "GridMeasure":
        return GridMeasure(self.spec, self.weights / self.mass)

    def density(self) -> np.ndarray:
        return self.weights / self.spec.cell_volume

    def support_mask(self) -> np.ndarray:
        return self.weights > 0

    def mean(self) -> np.ndarray:
        c = self.spec.centers()
        w = self.weights.ravel()
        return (w @ c) / w.sum()

    def embed(self, spec: GridSpec) -> "GridMeasure":
        """Re-express on a larger aligned grid (mass outside ``spec`` is an error)."""
        off = spec.offset_cells(self.spec)
        if np.any(off < 0) or np.any(off + np.asarray(self.spec.shape) > np.asarray(spec.shape)):
            raise OtlabError("grid-too-small", "target grid does not contain the measure's grid")
        out = np.zeros(spec.shape)
        sl = tuple(slice(o, o + s) for o, s in zip(off, self.spec.shape))
        out[sl] = self.weights
        return GridMeasure(spec, out)

    def to_discrete(self) -> "DiscreteMeasure":
        """Lower to a point cloud of the occupied cell centers (row-major order)."""
        w = self.weights.ravel()
        keep = np.flatnonzero(w > 0)
        return DiscreteMeasure(self.spec.centers()[keep], w[keep])

    def support_cells(self) -> np.ndarray:
        """Flat indices of occupied cells, matching :meth:`to_discrete` order."""
        return np.flatnonzero(self.weights.ravel() > 0)


def align(a: GridMeasure, b: GridMeasure) -> tuple[GridMeasure, GridMeasure]:
    """Embed two measures into their common grid."""
    spec = union_spec(a.spec, b.spec)
    return a.embed(spec), b.embed(spec)


class DiscreteMeasure:
    """Weighted point cloud with strictly positive weights. Immutable."""

    __slots__ = ("points", "weights")

    def __init__(self, points, weights):
        w = np.array(weights, dtype=float).ravel()
        x = np.array(points, dtype=float)
        if x.ndim == 1:
            x = x[:, None] if len(w) == len(x) else x[None, :]
        if x.shape[0] != w.shape[0]:
            raise OtlabError("bad-weights", f"{x.shape[0]} points but {w.shape[0]} weights")
        if w.size == 0 or not w.sum() > 0:
            raise OtlabError("empty-support", "measure has no atoms")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise OtlabError("bad-weights", "weights must be positive and finite")
        x.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", x)
        object.__setattr__(self, "weights", w)

    def __setattr__(self, name, value):
        raise AttributeError("DiscreteMeasure is immutable")

    def __len__(self):
        return len(self.weights)

    def __repr__(self):
        return f"DiscreteMeasure(n={self.n}, atoms={len(self)}, mass={self.mass:.6g})"

    @property
    def n(self) -> int:
        return self.points.shape[1]

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def is_probability(self, tol: float = MASS_TOL) -> bool:
        return abs(self.mass - 1.0) <= tol

    def normalized(self) -> "DiscreteMeasure":
        return DiscreteMeasure(self.points, self.weights / self.mass)

    def mean(self) -> np.ndarray:
        return (self.weights @ self.points) / self.mass


def as_discrete(m) -> DiscreteMeasure:
    return m.to_discrete() if isinstance(m, GridMeasure) else m


def check_mass(a, b, tol: float = MASS_TOL):
    if abs(a.mass - b.mass) > tol * max(1.0, a.mass):
        raise OtlabError("mass-mismatch", f"masses {a.mass!r} and {b.mass!r} differ")


@dataclass(frozen=True)
class GridField:
    """Vector field sampled at cell centers; NaN marks undefined cells."""

    spec: GridSpec
    values: np.ndarray  # spec.shape + (d,)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape == self.spec.shape:
            v = v[..., None]
        if v.shape[:-1] != self.spec.shape:
            raise OtlabError("bad-grid", f"field shape {v.shape} does not match grid {self.spec.shape}")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[-1]

    def at_cells(self, idx: np.ndarray) -> np.ndarray:
        """Values at integer cell indices (rows of ``idx``); NaN outside the grid."""
        idx = np.atleast_2d(idx)
        shape = np.asarray(self.spec.shape)
        inside = np.all((idx >= 0) & (idx < shape), axis=1)
        out = np.full((len(idx), self.dim), np.nan)
        flat = np.ravel_multi_index(tuple(idx[inside].T), self.spec.shape)
        out[inside] = self.values.reshape(-1, self.dim)[flat]
        return out

    def at(self, points: np.ndarray) -> np.ndarray:
        return self.at_cells(self.spec.index_of(points))

    @staticmethod
    def from_function(spec: GridSpec, f: Callable[[np.ndarray], np.ndarray]) -> "GridField":
        v = np.asarray(f(spec.centers()), dtype=float)
        return GridField(spec, v.reshape(spec.shape + (-1,)))

    @staticmethod
    def scatter(spec: GridSpec, cells: np.ndarray, vals: np.ndarray) -> "GridField":
        """Field defined on the given flat cell indices and NaN elsewhere."""
        vals = np.asarray(vals, dtype=float).reshape(len(cells), -1)
        out = np.full((spec.size, vals.shape[1]), np.nan)
        out[cells] = vals
        return GridField(spec, out.reshape(spec.shape + (vals.shape[1],)))


# ---------------------------------------------------------------------------
# generators


def from_density(spec: GridSpec, f: Callable[[np.ndarray], np.ndarray], normalize: bool = True) -> GridMeasure:
    """Sample a density at cell centers, times the cell volume."""
    vals = np.asarray(f(spec.centers()), dtype=float).reshape(spec.shape)
    m = GridMeasure(spec, np.clip(vals, 0, None) * spec.cell_volume)
    return m.normalized() if normalize else m


def uniform_box(spec: GridSpec, lo, hi) -> GridMeasure:
    """Uniform probability on the cells whose centers lie in the box [lo, hi]."""
    lo = np.atleast_1d(lo)
    hi = np.atleast_1d(hi)
    eps = 1e-12 * spec.h
    return from_density(spec, lambda c: np.all((c >= lo - eps) & (c <= hi + eps), axis=1).astype(float))


# ---------------------------------------------------------------------------
# kernels

PROFILES = ("uniform-ball", "tent", "heat")


@dataclass(frozen=True)
class Kernel:
    """Radial mollifier ``rho_eps``.

    ``uniform-ball``: normalized indicator of the ball of radius eps.
    ``tent``: proportional to (1 - |x|/(2 eps))_+, supported on B_{2 eps}; it
    stays bounded away from zero on B_eps.
    ``heat``: heat kernel p_t with t = sqrt(eps), i.e. a centered Gaussian of
    per-axis variance 2t.
    """

    profile: str
    eps: float

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise OtlabError("bad-kernel", f"unknown profile {self.profile!r}")
        if not self.eps > 0:
            raise OtlabError("bad-kernel", "kernel scale must be positive")

    @property
    def t(self) -> float:
        """Heat time for the heat profile."""
        return math.sqrt(self.eps)

    @property
    def radius(self) -> float:
        """Support radius (compact profiles) or truncation radius (heat)."""
        if self.profile == "uniform-ball":
            return self.eps
        if self.profile == "tent":
            return 2.0 * self.eps
        return 8.0 * math.sqrt(2.0 * self.t)

    def profile_values(self, x: np.ndarray) -> np.ndarray:
        """Unnormalized profile at points ``x`` (shape (..., n))."""
        r = np.linalg.norm(np.atleast_2d(x), axis=-1)
        if self.profile == "uniform-ball":
            return (r <= self.eps * (1 + 1e-9)).astype(float)
        if self.profile == "tent":
            return np.clip(1.0 - r / (2.0 * self.eps), 0.0, None)
        return np.exp(-(r ** 2) / (4.0 * self.t))

    def density(self, x: np.ndarray) -> np.ndarray:
        """Continuum density rho_eps(x), integrating to one on R^n."""
        x = np.atleast_2d(x)
        n = x.shape[-1]
        vals = self.profile_values(x)
        if self.profile == "heat":
            return vals / (4.0 * math.pi * self.t) ** (n / 2)
        unit_ball = math.pi ** (n / 2) / math.gamma(n / 2 + 1)
        if self.profile == "uniform-ball":
            return vals / (unit_ball * self.eps ** n)
        # integral of (1 - r/R)_+ over R^n is |B_1| R^n / (n + 1)
        R = 2.0 * self.eps
        return vals * (n + 1) / (unit_ball * R ** n)

    def resolution(self) -> float:
        """Smallest length the kernel must resolve on the grid."""
        if self.profile == "heat":
            return min(self.eps, math.sqrt(2.0 * self.t))
        return self.eps

    def discretize(self, h: float, n: int) -> np.ndarray:
        """Kernel weights at integer offsets k*h, renormalized to sum 1.

        Returns an array of odd side length 2R+1 centered on offset 0.
        """
        if self.resolution() < h * (1 - 1e-12):
            raise OtlabError("kernel-under-resolved", f"kernel scale {self.eps} below grid spacing {h}")
        R = int(math.floor(self.radius / h + 1e-9))
        if (2 * R + 1) ** n > GRID_BUDGET:
            raise OtlabError("grid-budget", "kernel stencil exceeds the cell budget")
        ax = np.arange(-R, R + 1) * h
        grids = np.meshgrid(*([ax] * n), indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
        w = self.profile_values(pts).reshape((2 * R + 1,) * n)
        return w / w.sum()


def convolve(m: GridMeasure, k: Kernel) -> GridMeasure:
    """rho_eps * m on an enlarged grid that holds the full convolved support."""
    kw = k.discretize(m.h, m.n)
    R = (kw.shape[0] - 1) // 2
    out_shape = tuple(s + 2 * R for s in m.spec.shape)
    if int(np.prod(out_shape)) > m.spec.budget:
        raise OtlabError("grid-budget", f"convolved grid {out_shape} exceeds the cell budget")
    spec = GridSpec(tuple(np.asarray(m.spec.origin) - R * m.h), m.h, out_shape, m.spec.budget)
    w = signal.convolve(m.weights, kw, mode="full", method="direct")
    w = np.clip(w, 0.0, None)
    return GridMeasure(spec, w)


# ---------------------------------------------------------------------------
# translations and projections


def translate(m, z):
    """Push ``m`` forward by x -> x + z.

    Grid measures are shifted by the nearest whole number of cells; the
    return value is then ``(measure, residual)`` with ``residual`` the
    rounding error vector.  Discrete measures are shifted exactly and
    returned alone.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if isinstance(m, DiscreteMeasure):
        return DiscreteMeasure(m.points + z, m.weights)
    k = np.round(z / m.h)
    residual = z - k * m.h
    if not np.any(k):
        return m, residual
    origin = np.asarray(m.spec.origin) + k * m.h
    return GridMeasure(GridSpec(tuple(origin), m.h, m.spec.shape, m.spec.budget), m.weights), residual


def _unit(e, n: int) -> np.ndarray:
    e = np.atleast_1d(np.asarray(e, dtype=float))
    if e.shape != (n,) or abs(np.linalg.norm(e) - 1.0) > 1e-12:
        raise OtlabError("bad-direction", f"direction must be a unit vector in R^{n}")
    return e


def perp_basis(e: np.ndarray) -> np.ndarray:
    """Orthonormal basis of e-perp as rows; in 2D the row is e rotated by +90 degrees."""
    n = e.shape[0]
    if n == 1:
        return np.zeros((0, 1))
    if n == 2:
        return np.array([[-e[1], e[0]]])
    q, _ = np.linalg.qr(np.column_stack([e, np.eye(n)]))
    return q[:, 1:n].T


def project(m, e, kind: str = "perp") -> DiscreteMeasure:
    """Pushforward under x -> p_e(x) (``perp``, coordinates in e-perp) or x -> <x, e> (``scalar``)."""
    d = as_discrete(m)
    e = _unit(e, d.n)
    if kind == "scalar":
        return DiscreteMeasure((d.points @ e)[:, None], d.weights)
    if kind != "perp":
        raise OtlabError("bad-direction", f"unknown projection kind {kind!r}")
    B = perp_basis(e)
    if B.shape[0] == 0:
        return DiscreteMeasure(np.zeros((len(d), 1)), d.weights)
    return DiscreteMeasure(d.points @ B.T, d.weights)


# ---------------------------------------------------------------------------
# erosion


def boundary_distance(mask: np.ndarray, h: float) -> np.ndarray:
    """Distance from each cell center to the boundary of the union of masked cells.

    Exact Euclidean distance transform between cell centers, minus h/2 so a
    boundary cell sits at h/2 from the boundary.  Zero outside the mask.
    """
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1, constant_values=False)
    edt = ndimage.distance_transform_edt(padded, sampling=h)
    inner = tuple(slice(1, -1) for _ in range(mask.ndim))
    d = edt[inner] - 0.5 * h
    return np.where(mask, np.maximum(d, 0.5 * h), 0.0)


def erosion_integral(mask, alpha: float, h: float | None = None) -> float:
    """Midpoint value of the boundary-singularity integral of d(x, dX)^(-alpha) over X.

    ``mask`` is a boolean cell array (spacing ``h``) or a GridMeasure whose
    support is used.  Cells closer than h/2 to the boundary are clamped to
    h/2.
    """
    if isinstance(mask, GridMeasure):
        h = mask.h
        mask = mask.support_mask()
    if h is None:
        raise OtlabError("bad-grid", "spacing h required for a raw mask")
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise OtlabError("empty-support", "erosion integral of an empty set")
    d = boundary_distance(mask, h)[mask]
    return float(np.sum(d ** (-alpha)) * h ** mask.ndim)


# ---------------------------------------------------------------------------
# one-dimensional order


def _as_1d(m) -> tuple[np.ndarray, np.ndarray]:
    d = as_discrete(m)
    if d.n != 1:
        raise OtlabError("bad-dimension", "expected a one-dimensional measure")
    return d.points[:, 0], d.weights


def cdf_pair(a, b) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Right-continuous CDFs of two 1D measures on their merged breakpoints."""
    xa, wa = _as_1d(a)
    xb, wb = _as_1d(b)
    t = np.union1d(xa, xb)
    oa = np.argsort(xa, kind="stable")
    ob = np.argsort(xb, kind="stable")
    ca = np.concatenate([[0.0], np.cumsum(wa[oa])])
    cb = np.concatenate([[0.0], np.cumsum(wb[ob])])
    Fa = ca[np.searchsorted(xa[oa], t, side="right")]
    Fb = cb[np.searchsorted(xb[ob], t, side="right")]
    return t, Fa, Fb


def stochastic_dominance_1d(a, b, tol: float = MASS_TOL) -> tuple[bool, float]:
    """Whether ``b`` stochastically dominates ``a`` (CDF_b <= CDF_a), and the worst violation."""
    check_mass(as_discrete(a), as_discrete(b))
    _, Fa, Fb = cdf_pair(a, b)
    viol = float(max(0.0, np.max(Fb - Fa)))
    return viol <= tol, viol


# ---------------------------------------------------------------------------
# monotone test functions


@dataclass(frozen=True)
class MonotoneRamp:
    """phi(x) = mean_j clamp(<x, e> - a_j, 0, b_j); 1-Lipschitz and nondecreasing along e."""

    e: np.ndarray
    a: np.ndarray = field(default_factory=lambda: np.zeros(0))
    b: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        s = np.atleast_2d(x) @ self.e
        if self.a.size == 0:
            return s
        return np.mean(np.clip(s[:, None] - self.a[None, :], 0.0, self.b[None, :]), axis=1)


def monotone_family(e, lo: float, hi: float, K: int, seed: int, terms: int = 8) -> list[MonotoneRamp]:
    """<x, e> followed by K-1 random averaged ramps with thresholds in [lo, hi]."""
    if K < 1:
        raise OtlabError("bad-family", "family size must be at least 1")
    e = np.asarray(e, dtype=float)
    rng = np.random.Generator(np.random.Philox(seed))
    span = max(hi - lo, 1e-12)
    fam = [MonotoneRamp(e)]
    for _ in range(K - 1):
        a = rng.uniform(lo, hi, size=terms)
        b = rng.uniform(0.0, span, size=terms)
        fam.append(MonotoneRamp(e, a, b))
    return fam


def monotone_gap(lam, mu, e, K: int = 32, seed: int = 0) -> tuple[float, np.ndarray]:
    """Largest value of int phi d(lam) - int phi d(mu) over the monotone family.

    Returns ``(max_gap, gaps)`` where ``gaps[0]`` belongs to phi = <x, e>.
    """
    a, b = as_discrete(lam), as_discrete(mu)
    e = _unit(e, a.n)
    s = np.concatenate([a.points @ e, b.points @ e])
    fam = monotone_family(e, float(s.min()), float(s.max()), K, seed)
    gaps = np.array([a.weights @ phi(a.points) - b.weights @ phi(b.points) for phi in fam])
    return float(gaps.max()), gaps


# ---------------------------------------------------------------------------
# file formats


def _fmt(v: float) -> str:
    return "%.17g" % v


def save_grid(m: GridMeasure, path, comment: str | None = None) -> None:
    s = m.spec
    lines = []
    if comment:
        lines += ["# " + c for c in comment.splitlines()]
    lines.append(
        "grid n=%d origin=%s h=%s dims=%s"
        % (s.n, ",".join(_fmt(o) for o in s.origin), _fmt(s.h), ",".join(str(d) for d in s.shape))
    )
    w = m.weights.ravel()
    for i in range(0, w.size, 8):
        lines.append(" ".join(_fmt(v) for v in w[i:i + 8]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_grid(path) -> GridMeasure:
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines or not lines[0].startswith("grid"):
        raise OtlabError("bad-file", f"{path}: missing grid header")
    hdr = dict(tok.split("=", 1) for tok in lines[0].split()[1:])
    try:
        n = int(hdr["n"])
        origin = tuple(float(v) for v in hdr["origin"].split(","))
        h = float(hdr["h"])
        dims = tuple(int(v) for v in hdr["dims"].split(","))
    except (KeyError, ValueError) as exc:
        raise OtlabError("bad-file", f"{path}: malformed header ({exc})") from exc
    if len(origin) != n or len(dims) != n:
        raise OtlabError("bad-file", f"{path}: header dimension mismatch")
    w = np.array(" ".join(lines[1:]).split(), dtype=float)
    if w.size != int(np.prod(dims)):
        raise OtlabError("bad-file", f"{path}: expected {np.prod(dims)} weights, found {w.size}")
    return GridMeasure(GridSpec(origin, h, dims), w)


def save_discrete(m: DiscreteMeasure, path) -> None:
    with open(path, "w") as fh:
        for x, w in zip(m.points, m.weights):
            fh.write(" ".join(_fmt(v) for v in x) + " " + _fmt(w) + "\n")


def load_discrete(path) -> DiscreteMeasure:
    with open(path) as fh:
        rows = [ln.split() for ln in fh.read().splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not rows or len({len(r) for r in rows}) != 1 or len(rows[0]) < 2:
        raise OtlabError("bad-file", f"{path}: rows must all have n+1 columns")
    a = np.array(rows, dtype=float)
    return DiscreteMeasure(a[:, :-1], a[:, -1])


def point_mass(x: Sequence[float]) -> DiscreteMeasure:
    return DiscreteMeasure(np.atleast_2d(np.asarray(x, dtype=float)), [1.0])
