"""Stability of Kantorovich potentials: test functions, gaps, gradient distances, exponent fits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from otlab.errors import OtlabError
from otlab.measures import DiscreteMeasure, GridMeasure, GridSpec, as_discrete
from otlab.ot_core import (
    CostConvention,
    TransportSolution,
    c_transform,
    kantorovich_value,
    solve_discrete,
)

# ---------------------------------------------------------------------------
# 1-Lipschitz functions


class LipschitzFunction:
    """Vectorized scalar function with a certified Lipschitz constant."""

    lip: float = 1.0

    def __call__(self, x: np.ndarray) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError


@dataclass
class Cones(LipschitzFunction):
    """phi(x) = min_k a_k + |x - p_k|."""

    a: np.ndarray
    centers: np.ndarray

    def __post_init__(self):
        self.a = np.atleast_1d(np.asarray(self.a, dtype=float))
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        if self.centers.shape[0] != self.a.shape[0]:
            self.centers = self.centers.T

    def __call__(self, x):
        x = np.atleast_2d(x)
        d = np.linalg.norm(x[:, None, :] - self.centers[None, :, :], axis=2)
        return np.min(self.a[None, :] + d, axis=1)


@dataclass
class Linear(LipschitzFunction):
    """phi(x) = <g, x> + c with |g| <= 1."""

    g: np.ndarray
    c: float = 0.0

    def __post_init__(self):
        self.g = np.atleast_1d(np.asarray(self.g, dtype=float))
        self.lip = float(np.linalg.norm(self.g))

    def __call__(self, x):
        return np.atleast_2d(x) @ self.g + self.c


@dataclass
class Min(LipschitzFunction):
    parts: Sequence[Callable]

    def __call__(self, x):
        return np.min(np.stack([f(x) for f in self.parts]), axis=0)


@dataclass
class Scaled(LipschitzFunction):
    """s * f + c for a 1-Lipschitz f and |s| <= 1."""

    f: Callable
    s: float = 1.0
    c: float = 0.0

    def __call__(self, x):
        return self.s * self.f(x) + self.c


@dataclass
class DualPotential(LipschitzFunction):
    """Extension of a W_1 potential from target atoms: max_j psi_j - |x - y_j|."""

    targets: np.ndarray
    psi: np.ndarray

    def __call__(self, x):
        x = np.atleast_2d(x)
        out = np.full(len(x), -np.inf)
        step = max(1, 2_000_000 // max(len(self.targets), 1))
        for lo in range(0, len(x), step):
            d = np.linalg.norm(x[lo:lo + step, None, :] - self.targets[None, :, :], axis=2)
            out[lo:lo + step] = np.max(self.psi[None, :] - d, axis=1)
        return out

    @staticmethod
    def from_solution(sol: TransportSolution) -> "DualPotential":
        if sol.conv.p != 1:
            raise OtlabError("bad-exponent", "W_1 potential requires p = 1")
        return DualPotential(sol.targets, sol.psi)


def lipschitz_audit(phi: Callable, spec: GridSpec, mask: np.ndarray | None = None) -> float:
    """Largest finite-difference slope of ``phi`` between neighbouring cells (axis and diagonal)."""
    c = spec.centers()
    v = phi(c).reshape(spec.shape)
    worst = 0.0
    n = spec.n
    offsets = [o for o in np.ndindex(*(3,) * n) if any(k == 2 for k in o) or sum(o) > n]
    for o in offsets:
        o = np.array(o) - 1
        if not np.any(o) or o[np.flatnonzero(o)[0]] < 0:
            continue
        a = tuple(slice(max(0, -k), s - max(0, k)) for k, s in zip(o, spec.shape))
        b = tuple(slice(max(0, k), s - max(0, -k)) for k, s in zip(o, spec.shape))
        d = np.abs(v[b] - v[a]) / (np.linalg.norm(o) * spec.h)
        if mask is not None:
            d = d[mask[a] | mask[b]]
        if d.size:
            worst = max(worst, float(d.max()))
    return worst


def certify(phi: Callable, spec: GridSpec, mask=None) -> float:
    s = lipschitz_audit(phi, spec, mask)
    if s > 1 + 10 * spec.h:
        raise OtlabError("not-1-lipschitz", f"finite-difference slope {s:.6g} exceeds 1 + 10h")
    return s


# ---------------------------------------------------------------------------
# gaps and gradient distances


def _eval_on(phi, d: DiscreteMeasure) -> np.ndarray:
    if callable(phi):
        return np.asarray(phi(d.points), dtype=float)
    return np.asarray(phi, dtype=float)


def kantorovich_gap(psi, phi, lam, mu, w1: float | None = None, tol: float = 1e-8) -> float:
    """int (psi - phi) d(mu - lam), cross-checked against W_1(lam, mu) - int phi d(mu - lam)."""
    a, b = as_discrete(lam), as_discrete(mu)
    if w1 is None:
        w1 = solve_discrete(a, b, CostConvention(1.0)).cost
    ipsi = b.weights @ _eval_on(psi, b) - a.weights @ _eval_on(psi, a)
    iphi = b.weights @ _eval_on(phi, b) - a.weights @ _eval_on(phi, a)
    g1 = float(ipsi - iphi)
    g2 = float(w1 - iphi)
    if abs(g1 - g2) > tol * (1.0 + abs(w1)):
        raise OtlabError("inconsistent-dual", f"gap {g1!r} vs {g2!r}: psi is not optimal")
    return g1


def face_gradient(phi: Callable, lam: GridMeasure) -> np.ndarray:
    """Gradient at occupied cells from differences across opposite cell faces."""
    cells = lam.support_cells()
    c = lam.spec.centers()[cells]
    h = lam.h
    g = np.empty_like(c)
    for k in range(lam.n):
        e = np.zeros(lam.n)
        e[k] = 0.5 * h
        g[:, k] = (phi(c + e) - phi(c - e)) / h
    return g


def grad_l1_distance(psi: Callable, phi: Callable, lam: GridMeasure) -> float:
    """lam-weighted L^1 norm of grad psi - grad phi."""
    w = lam.weights.ravel()[lam.support_cells()]
    d = face_gradient(psi, lam) - face_gradient(phi, lam)
    return float(w @ np.linalg.norm(d, axis=1))


# ---------------------------------------------------------------------------
# exponent fits


@dataclass
class StabilityReport:
    lhs: np.ndarray
    rhs: np.ndarray
    slope: float
    slope_band: tuple[float, float]
    c_inverse: float  # min over trials of RHS / LHS^alpha
    alpha: float
    audits: np.ndarray = field(default_factory=lambda: np.zeros(0))
    validation_ok: bool | None = None
    validation_worst: float = math.nan
    seeds: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def constant(self) -> float:
        return math.inf if self.c_inverse <= 0 else 1.0 / self.c_inverse


def fit_slope(x: np.ndarray, y: np.ndarray) -> tuple[float, tuple[float, float]]:
    """Least-squares slope of log y on log x with a two-standard-error band."""
    lx, ly = np.log(x), np.log(y)
    if len(lx) < 2 or np.ptp(lx) == 0:
        return math.nan, (math.nan, math.nan)
    A = np.column_stack([lx, np.ones_like(lx)])
    coef, res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    s = coef[0]
    if len(lx) > 2:
        sigma2 = float(np.sum((ly - A @ coef) ** 2)) / (len(lx) - 2)
        se = math.sqrt(sigma2 / np.sum((lx - lx.mean()) ** 2))
    else:
        se = 0.0
    return float(s), (float(s - 2 * se), float(s + 2 * se))


def exponent_report(lhs, rhs, alpha: float, window=(1e-6, 1e-1)) -> StabilityReport:
    """Slope of log LHS against log RHS on the window, and min RHS / LHS^alpha."""
    lhs = np.asarray(lhs, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    sel = (rhs >= window[0]) & (rhs <= window[1]) & (lhs > 0)
    if not np.any(sel):
        raise OtlabError("family-degenerate", "no trial has RHS inside the regression window")
    slope, band = fit_slope(rhs[sel], lhs[sel])
    pos = lhs > 0
    cinv = float(np.min(rhs[pos] / lhs[pos] ** alpha)) if np.any(pos) else math.inf
    return StabilityReport(lhs, rhs, slope, band, cinv, alpha)


# ---------------------------------------------------------------------------
# the one-dimensional optimality configuration


def optimality_pair(eps: float, h: float | None = None) -> tuple[GridMeasure, GridMeasure, Linear, Cones]:
    """lam = unif(0,1), mu = unif(1,2), psi(x) = x and the folded competitor |x - eps| - eps."""
    from otlab.measures import uniform_box

    h = eps / 100 if h is None else h
    spec = GridSpec.box([0.0], [2.0], h)
    lam = uniform_box(spec, 0.0, 1.0)
    mu = uniform_box(spec, 1.0, 2.0)
    return lam, mu, Linear([1.0]), Cones([-eps], [[eps]])


def optimality_family(eps_values: Sequence[float], h_ratio: float = 100.0) -> StabilityReport:
    lhs, rhs = [], []
    for eps in eps_values:
        lam, mu, psi, phi = optimality_pair(eps, eps / h_ratio)
        lhs.append(grad_l1_distance(psi, phi, lam))
        rhs.append(kantorovich_gap(psi, phi, lam, mu))
    return exponent_report(lhs, rhs, alpha=2.0)


# ---------------------------------------------------------------------------
# p = 1 random families


def random_competitor(psi: DualPotential, lam: GridMeasure, rng: np.random.Generator, kind: str | None = None) -> LipschitzFunction:
    """A 1-Lipschitz competitor near psi.

    ``dent``: min(psi, a + |x - q|) with q in the support of lam, which
    lowers psi inside a cone; ``cones``: a random min of cones; ``tilt``:
    convex combination of psi and a random unit linear function.
    """
    kind = kind or rng.choice(["dent", "dent", "cones", "tilt"])
    cells = lam.support_cells()
    pts = lam.spec.centers()[cells]
    if kind == "dent":
        q = pts[rng.integers(len(pts))]
        depth = 10 ** rng.uniform(-3.5, -0.5)
        a = float(psi(q[None, :])[0]) - depth
        return Min([psi, Cones([a], [q])])
    if kind == "tilt":
        g = rng.normal(size=lam.n)
        g /= np.linalg.norm(g)
        s = 10 ** rng.uniform(-3, -0.3)
        lin = Linear(g)
        return _Blend(psi, lin, s)
    k = int(rng.integers(2, 6))
    qs = pts[rng.integers(len(pts), size=k)]
    a = psi(qs) - 10 ** rng.uniform(-3, -0.5, size=k)
    return Min([psi, Cones(a, qs)])


@dataclass
class _Blend(LipschitzFunction):
    f: Callable
    g: Callable
    s: float

    def __call__(self, x):
        return (1 - self.s) * self.f(x) + self.s * self.g(x)


def thm1_family_check(
    lam: GridMeasure,
    mu: GridMeasure,
    seed: int,
    trials: int,
    alpha: float,
    validate: int = 0,
    safety: float = 2.0,
    include_psi: bool = True,
) -> StabilityReport:
    """LHS = ||grad psi - grad phi||_{L^1(lam)}, RHS = int (psi - phi) d(mu - lam) over random phi.

    With ``validate > 0`` a fresh family (seed + 1) is checked against the
    calibrated constant times ``safety``.
    """
    if alpha <= 3:
        raise OtlabError("bad-parameter", "the exponent must exceed 3")
    sol = solve_discrete(lam, mu, CostConvention(1.0))
    psi = DualPotential.from_solution(sol)
    spec = lam.spec

    def run(s, count):
        rng = np.random.Generator(np.random.Philox(s))
        L, Rr, aud = [], [], []
        fams = [psi] if include_psi else []
        fams += [random_competitor(psi, lam, rng) for _ in range(count)]
        for phi in fams:
            aud.append(certify(phi, spec))
            L.append(grad_l1_distance(psi, phi, lam))
            Rr.append(kantorovich_gap(psi, phi, lam, mu, w1=sol.cost))
        return np.array(L), np.array(Rr), np.array(aud)

    L, Rr, aud = run(seed, trials)
    rep = exponent_report(L, Rr, alpha)
    rep.audits = aud
    if validate:
        L2, R2, _ = run(seed + 1, validate)
        pos = L2 > 0
        worst = float(np.max(L2[pos] ** alpha / np.maximum(R2[pos], 1e-300))) if np.any(pos) else 0.0
        rep.validation_worst = worst
        rep.validation_ok = worst <= safety * rep.constant
    return rep


# ---------------------------------------------------------------------------
# quadratic cost


@dataclass
class QuadraticReport:
    gaps: np.ndarray  # F(psi) - F(phi)
    dists: np.ndarray  # int |grad psi^c - grad phi^c|^2 d(lam)
    mode: str
    slope: float = math.nan
    slope_band: tuple[float, float] = (math.nan, math.nan)
    constant: float = math.nan  # cubic: min gap / dist^3; linear: min gap / dist
    lipschitz: np.ndarray = field(default_factory=lambda: np.zeros(0))
    candidates: dict = field(default_factory=dict)


def secant_lipschitz(x: np.ndarray, Tx: np.ndarray, stride: int, w: np.ndarray | None = None, core: float = 1e-9) -> float:
    """Max secant slope of a 1D map over index strides, robust to atom quantization.

    With weights ``w`` only atoms whose cumulative mass lies in
    [core, 1 - core] are audited; beyond that the map is fixed by masses
    below floating-point resolution of the cumulative sums.
    """
    o = np.argsort(x[:, 0])
    xs, ts = x[o, 0], Tx[o, 0]
    if w is not None:
        F = np.cumsum(w[o]) / np.sum(w)
        keep = (F >= core) & (F <= 1 - core)
        xs, ts = xs[keep], ts[keep]
    if len(xs) <= stride:
        return 0.0
    return float(np.max(np.abs(ts[stride:] - ts[:-stride]) / (xs[stride:] - xs[:-stride])))


def quadratic_convexity_check(
    lam: GridMeasure,
    mu: GridMeasure,
    perturbed: Sequence[np.ndarray],
    mode: str = "A",
    K: float | None = None,
    stride: int | None = None,
    lip_tol: float = 0.10,
) -> QuadraticReport:
    """F-gap versus squared gradient distance for competitors phi = optimal potentials of perturbed targets.

    ``perturbed`` holds target weight vectors on the atoms of ``mu`` (or grid
    measures restricted to the support of a grid ``mu``); each
    competitor is the repaired optimal potential for that target.  Mode B
    audits the competitor map x - grad phi^c against ``K``.
    """
    conv = CostConvention(2.0, "paper")
    a, b = as_discrete(lam), as_discrete(mu)
    sol = solve_discrete(a, b, conv)
    _, arg_psi = c_transform(sol.psi, b.points, a.points, conv, prefer=sol.partner())
    gaps, dists, lips = [], [], []
    for wts in perturbed:
        if isinstance(wts, GridMeasure):
            wts = wts.embed(mu.spec).weights.ravel()[mu.support_cells()]
        bw = DiscreteMeasure(b.points, np.asarray(wts, dtype=float))
        s2 = solve_discrete(a, bw.normalized(), conv)
        phi = s2.psi
        _, arg_phi = c_transform(phi, b.points, a.points, conv, prefer=s2.partner())
        F = kantorovich_value(phi, a, b, conv)
        gaps.append(sol.dual_value - F)
        diff = b.points[arg_psi] - b.points[arg_phi]
        dists.append(float(a.weights @ np.sum(diff ** 2, axis=1)))
        if mode == "B":
            st = stride or max(1, len(a) // 50)
            lips.append(secant_lipschitz(a.points, b.points[arg_phi], st, a.weights))
    gaps = np.array(gaps)
    dists = np.array(dists)
    rep = QuadraticReport(gaps, dists, mode)
    pos = dists > 0
    if mode == "A":
        sel = pos & (gaps > 0)
        rep.slope, rep.slope_band = fit_slope(dists[sel], gaps[sel])
        rep.constant = float(np.min(gaps[sel] / dists[sel] ** 3)) if np.any(sel) else math.nan
    elif mode == "B":
        if K is None:
            raise OtlabError("bad-parameter", "mode B needs the Lipschitz constant K")
        rep.lipschitz = np.array(lips)
        if np.any(rep.lipschitz > K * (1 + lip_tol)):
            raise OtlabError("competitor-not-lipschitz", f"map slope {rep.lipschitz.max():.4g} exceeds K = {K:.4g}")
        rep.constant = float(np.min(gaps[pos] / dists[pos])) if np.any(pos) else math.nan
        rep.candidates = {"2K": 2 * K, "1/(2K)": 1 / (2 * K)}
    else:
        raise OtlabError("bad-parameter", f"unknown mode {mode!r}")
    return rep
