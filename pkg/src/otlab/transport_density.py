"""Transport density of a W_1 plan, Renyi comparison with lam, and the sigma-weighted stability check."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from otlab.errors import OtlabError
from otlab.measures import GridMeasure, GridSpec, erosion_integral, save_grid, union_spec
from otlab.ot_core import CostConvention, TransportSolution, solve_discrete
from otlab.stability import DualPotential, certify, kantorovich_gap


@dataclass
class TransportDensity:
    """Line measure sum_ij m_ij |x_i - y_j| H^1 on [x_i, y_j], rasterized on a grid.

    ``pieces`` holds one row per segment-cell intersection: arc index, flat
    cell index, t0, t1 and deposited mass.
    """

    spec: GridSpec
    weights: np.ndarray
    pieces: np.ndarray = field(repr=False)
    sol: TransportSolution = field(repr=False)
    mode: str = "exact-intersection"

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def measure(self) -> GridMeasure:
        return GridMeasure(self.spec, self.weights)

    def density(self) -> np.ndarray:
        return self.weights / self.spec.cell_volume

    def save(self, path) -> None:
        note = "transport density: arcs=%d mode=%s mass=%.17g" % (len(self.sol.plan), self.mode, self.mass)
        save_grid(self.measure(), path, comment=note)


def _crossings(x: np.ndarray, y: np.ndarray, spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Arc ids and parameters t where segments x -> y cross cell faces, plus t = 0, 1."""
    K = len(x)
    ids = [np.arange(K), np.arange(K)]
    ts = [np.zeros(K), np.ones(K)]
    for d in range(spec.n):
        a = (x[:, d] - spec.origin[d]) / spec.h
        b = (y[:, d] - spec.origin[d]) / spec.h
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        first = np.floor(lo) + 1
        count = np.maximum(np.ceil(hi) - first, 0).astype(np.int64)
        if count.sum() == 0:
            continue
        arc = np.repeat(np.arange(K), count)
        start = np.repeat(np.cumsum(count) - count, count)
        k = first[arc] + (np.arange(count.sum()) - start)
        ts.append((k - a[arc]) / (b[arc] - a[arc]))
        ids.append(arc)
    return np.concatenate(ids), np.concatenate(ts)


def compute_sigma(sol: TransportSolution, spec: GridSpec, min_piece: float = 1e-14) -> TransportDensity:
    """Deposit m |x - y| along every plan arc, split by exact segment-cell intersection length."""
    if sol.conv.p != 1:
        raise OtlabError("bad-exponent", "transport density needs a p = 1 solution")
    x = sol.sources[sol.rows]
    y = sol.targets[sol.cols]
    m = sol.masses
    L = np.linalg.norm(y - x, axis=1)
    moving = (L > 0) & (m > 0)
    arcs = np.flatnonzero(moving)
    if arcs.size == 0:
        return TransportDensity(spec, np.zeros(spec.shape), np.zeros((0, 5)), sol)
    ids, ts = _crossings(x[arcs], y[arcs], spec)
    o = np.lexsort((ts, ids))
    ids, ts = ids[o], ts[o]
    same = ids[1:] == ids[:-1]
    t0, t1, arc = ts[:-1][same], ts[1:][same], ids[:-1][same]
    keep = (t1 - t0) > min_piece
    t0, t1, arc = t0[keep], t1[keep], arc[keep]
    xa, ya = x[arcs][arc], y[arcs][arc]
    mid = xa + 0.5 * (t0 + t1)[:, None] * (ya - xa)
    idx = np.floor((mid - spec.origin) / spec.h).astype(np.int64)
    if np.any(idx < 0) or np.any(idx >= np.array(spec.shape)):
        raise OtlabError("grid-too-small", "a transport segment leaves the grid")
    cell = np.ravel_multi_index(tuple(idx.T), spec.shape)
    val = m[arcs][arc] * L[arcs][arc] * (t1 - t0)
    w = np.bincount(cell, val, minlength=spec.size).reshape(spec.shape)
    pieces = np.column_stack([arcs[arc], cell, t0, t1, val])
    return TransportDensity(spec, w, pieces, sol)


def sigma_for(lam: GridMeasure, mu: GridMeasure, method: str = "auto") -> TransportDensity:
    """Solve W_1(lam, mu) and rasterize sigma on the union grid."""
    spec = union_spec(lam.spec, mu.spec)
    sol = solve_discrete(lam, mu, CostConvention(1.0), method)
    return compute_sigma(sol, spec)


def _lam_on(lam: GridMeasure, td: TransportDensity) -> np.ndarray:
    if lam.spec == td.spec:
        return lam.weights
    return lam.embed(td.spec).weights


def support_inclusion(lam: GridMeasure, td: TransportDensity) -> float:
    """lam-mass of cells outside the one-cell dilation of supp sigma."""
    w = _lam_on(lam, td)
    s = ndimage.binary_dilation(td.weights > 0, structure=np.ones((3,) * td.spec.n, bool))
    return float(w[~s].sum())


def renyi(lam: GridMeasure, td: TransportDensity, alpha: float) -> float:
    """D_alpha(lam || sigma) = ln(sum lam (lam/sigma)^(alpha-1)) / (alpha - 1), +inf if lam charges sigma = 0."""
    if alpha <= 1:
        raise OtlabError("alpha-out-of-range", "Renyi order must exceed 1")
    w = _lam_on(lam, td).ravel()
    s = td.weights.ravel()
    on = w > 0
    if np.any(s[on] <= 0):
        return math.inf
    beta = alpha - 1.0
    return float(np.log(np.sum(w[on] * (w[on] / s[on]) ** beta)) / beta)


@dataclass
class RenyiBound:
    value: float
    c1: float
    c2: float
    volume: float
    erosion: float


def renyi_constants(alpha: float, R: float, n: int) -> tuple[float, float]:
    beta = alpha - 1.0
    return 2 * beta / (1 - 2 * beta) * n + 1, (2 * R + 1) ** (2 * beta)


def renyi_bound(mask, alpha: float, R: float, m: float, M: float, h: float | None = None) -> RenyiBound:
    """(1/b) ln(c1 |X| + c2 I_{2b}(X)) + (alpha/b) ln M - ln m with b = alpha - 1."""
    if not 1 < alpha < 1.5:
        raise OtlabError("alpha-out-of-range", f"alpha = {alpha} not in (1, 3/2)")
    if isinstance(mask, GridMeasure):
        h = mask.h
        mask = mask.support_mask()
    mask = np.asarray(mask, dtype=bool)
    beta = alpha - 1.0
    c1, c2 = renyi_constants(alpha, R, mask.ndim)
    vol = float(mask.sum()) * h ** mask.ndim
    ero = erosion_integral(mask, 2 * beta, h)
    val = math.log(c1 * vol + c2 * ero) / beta + alpha / beta * math.log(M) - math.log(m)
    return RenyiBound(val, c1, c2, vol, ero)


# ---------------------------------------------------------------------------
# sigma-weighted stability


def _complement(u: np.ndarray) -> np.ndarray:
    """Orthonormal basis of u-perp per row of u (shape (K, n-1, n)), via Householder reflections."""
    K, n = u.shape
    e1 = np.zeros(n)
    e1[0] = 1.0
    s = np.where(u[:, 0] >= 0, 1.0, -1.0)
    v = u + s[:, None] * e1
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    H = np.eye(n)[None] - 2 * v[:, :, None] * v[:, None, :]
    return np.transpose(H[:, :, 1:], (0, 2, 1))


@dataclass
class StabSigmaResult:
    lhs: float
    rhs: float
    slack: float
    clamped: int = 0  # pieces whose finite-difference gradient was pulled back into the unit ball
    audit: float = math.nan


def stab_sigma_check(td: TransportDensity, lam: GridMeasure, mu: GridMeasure, phi, psi=None,
                     h_fd: float | None = None, audit: bool = True) -> StabSigmaResult:
    """LHS = int |grad psi - grad phi|^2 d(sigma), RHS = 2 int (psi - phi) d(mu - lam).

    grad psi is the ray direction of each arc.  On every deposited piece the
    component of grad phi along the ray is the exact difference quotient of
    phi between the piece endpoints; transverse components come from centered
    differences of step ``h_fd`` at the piece midpoint.  The pair is
    projected into the closed unit ball, which a 1-Lipschitz phi never leaves.
    """
    sol = td.sol
    spec = td.spec
    h_fd = spec.h if h_fd is None else h_fd
    aud = certify(phi, spec, td.weights > 0) if audit else math.nan
    if psi is None:
        psi = DualPotential.from_solution(sol)
    rhs = 2.0 * kantorovich_gap(psi, phi, lam, mu, w1=sol.cost)
    if len(td.pieces) == 0:
        return StabSigmaResult(0.0, rhs, rhs, 0, aud)
    arc = td.pieces[:, 0].astype(np.int64)
    t0, t1, val = td.pieces[:, 2], td.pieces[:, 3], td.pieces[:, 4]
    x = sol.sources[sol.rows[arc]]
    y = sol.targets[sol.cols[arc]]
    d = y - x
    L = np.linalg.norm(d, axis=1)
    u = d / L[:, None]
    p0 = x + t0[:, None] * d
    p1 = x + t1[:, None] * d
    a = (phi(p1) - phi(p0)) / (L * (t1 - t0))
    a = np.clip(a, -1.0, 1.0)
    b2 = np.zeros_like(a)
    clamped = 0
    if spec.n > 1:
        mid = 0.5 * (p0 + p1)
        W = _complement(u)
        b = np.empty((len(a), spec.n - 1))
        for k in range(spec.n - 1):
            w = W[:, k, :]
            b[:, k] = (phi(mid + h_fd * w) - phi(mid - h_fd * w)) / (2 * h_fd)
        b2 = np.sum(b ** 2, axis=1)
        cap = 1.0 - a ** 2
        over = b2 > cap
        clamped = int(over.sum())
        b2 = np.where(over, cap, b2)
    lhs = float(np.sum(val * ((1.0 - a) ** 2 + b2)))
    return StabSigmaResult(lhs, rhs, rhs - lhs, clamped, aud)


# ---------------------------------------------------------------------------
# Hoelder transfer from sigma to lam


def _abs_values(f, spec: GridSpec) -> np.ndarray:
    if callable(f):
        v = np.asarray(f(spec.centers()), dtype=float)
    else:
        v = np.asarray(getattr(f, "values", f), dtype=float)
    v = v.reshape(spec.size, -1)
    return np.linalg.norm(v, axis=1)


@dataclass
class HolderResult:
    l1_lam: float
    lp_sigma: float
    ratio: float
    exact_constant: float  # exp(D_{p'}(lam || sigma) / p), the Hoelder constant itself
    bound_constant: float  # exp(renyi_bound(p') / p)


def holder_transfer_check(f, lam: GridMeasure, td: TransportDensity, p: float, m: float, M: float, R: float) -> HolderResult:
    """||f||_{L^1(lam)}, ||f||_{L^p(sigma)} and the Renyi-assembled transfer constant."""
    if p <= 3:
        raise OtlabError("bad-exponent", "the transfer needs p > 3")
    pc = p / (p - 1)
    w = _lam_on(lam, td).ravel()
    v = _abs_values(f, td.spec)
    l1 = float(w @ v)
    lp = float(td.weights.ravel() @ v ** p) ** (1.0 / p)
    ratio = l1 / lp if lp > 0 else (math.inf if l1 > 0 else 0.0)
    exact = math.exp(renyi(lam, td, pc) / p)
    bound = math.exp(renyi_bound(lam.support_mask(), pc, R, m, M, lam.h).value / p)
    return HolderResult(l1, lp, ratio, exact, bound)
