"""Exact optimal transport for |x - y|^p costs at desk scale.

Two solver paths share one output type: a network simplex on the complete
bipartite graph (POT's ``emd``) and, in one dimension, the monotone
quantile coupling.  Dual potentials from either path are made exactly
c-concave by a double c-transform before they are returned.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from otlab.errors import OtlabError
from otlab.measures import DiscreteMeasure, GridMeasure, GridSpec, as_discrete, check_mass

# POT probes optional array backends at import time; only numpy is used here.
for _b in ("TENSORFLOW", "PYTORCH", "JAX", "CUPY"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_b}", "1")
import ot  # noqa: E402

PAIR_BUDGET = 40_000_000
CHUNK_PAIRS = 4_000_000


@dataclass(frozen=True)
class CostConvention:
    """Ground cost |x - y|^p, divided by p under the ``paper`` scale."""

    p: float = 2.0
    scale: str = "paper"

    def __post_init__(self):
        if not self.p >= 1:
            raise OtlabError("bad-cost", f"p must be >= 1, got {self.p}")
        if self.scale not in ("paper", "standard"):
            raise OtlabError("bad-cost", f"unknown scale {self.scale!r}")

    @property
    def factor(self) -> float:
        return 1.0 / self.p if self.scale == "paper" else 1.0

    @property
    def p_conj(self) -> float:
        return math.inf if self.p == 1 else self.p / (self.p - 1)

    def of_distance(self, d: np.ndarray) -> np.ndarray:
        d = np.asarray(d, dtype=float)
        return self.factor * (d if self.p == 1 else d ** self.p)

    def matrix(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.of_distance(_dist(x, y))

    def label(self) -> str:
        return f"p={self.p:g},{self.scale}"


def _dist(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # coordinate differences rather than the expanded |x|^2 + |y|^2 - 2 x.y:
    # exact under dyadic translations, so degenerate plans are reproduced
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)
    if x.shape[1] == 1:
        return np.abs(x[:, 0][:, None] - y[:, 0][None, :])
    sq = np.zeros((len(x), len(y)))
    for d in range(x.shape[1]):
        sq += (x[:, d][:, None] - y[:, d][None, :]) ** 2
    return np.sqrt(sq)


# ---------------------------------------------------------------------------
# solutions


@dataclass
class TransportSolution:
    """Optimal plan with repaired dual potentials.

    ``psi`` lives on the target atoms, ``psic`` on the source atoms; they
    satisfy psic[i] + psi[j] <= c(x_i, y_j) and ``gap`` is the primal cost
    minus the dual value.
    """

    plan: np.ndarray  # (K, 3): source index, target index, mass
    cost: float
    psi: np.ndarray
    psic: np.ndarray
    gap: float
    sources: np.ndarray
    targets: np.ndarray
    conv: CostConvention
    method: str = "network_simplex"
    source_weights: np.ndarray = field(default=None, repr=False)
    target_weights: np.ndarray = field(default=None, repr=False)

    @property
    def rows(self) -> np.ndarray:
        return self.plan[:, 0].astype(np.int64)

    @property
    def cols(self) -> np.ndarray:
        return self.plan[:, 1].astype(np.int64)

    @property
    def masses(self) -> np.ndarray:
        return self.plan[:, 2]

    @property
    def dual_value(self) -> float:
        return float(self.source_weights @ self.psic + self.target_weights @ self.psi)

    def marginals(self) -> tuple[np.ndarray, np.ndarray]:
        a = np.bincount(self.rows, self.masses, minlength=len(self.sources))
        b = np.bincount(self.cols, self.masses, minlength=len(self.targets))
        return a, b

    def max_infeasibility(self) -> float:
        """max over all pairs of psic[i] + psi[j] - c(x_i, y_j)."""
        worst = -math.inf
        for lo, hi in _chunks(len(self.sources), len(self.targets)):
            c = self.conv.matrix(self.sources[lo:hi], self.targets)
            worst = max(worst, float(np.max(self.psic[lo:hi, None] + self.psi[None, :] - c)))
        return worst

    def partner(self) -> np.ndarray:
        """Heaviest plan target for each source atom."""
        order = np.lexsort((-self.masses, self.rows))
        first = np.ones(len(order), bool)
        first[1:] = self.rows[order][1:] != self.rows[order][:-1]
        out = np.full(len(self.sources), -1, dtype=np.int64)
        out[self.rows[order][first]] = self.cols[order][first]
        return out

    def save(self, path) -> None:
        f = "%.17g"
        with open(path, "w") as fh:
            fh.write(f"CONV {self.conv.p!r} {self.conv.scale} {self.method}\n")
            fh.write(f"SRC {len(self.sources)} {self.sources.shape[1]}\n")
            for x, w in zip(self.sources, self.source_weights):
                fh.write(" ".join(f % v for v in x) + " " + f % w + "\n")
            fh.write(f"TGT {len(self.targets)} {self.targets.shape[1]}\n")
            for y, w in zip(self.targets, self.target_weights):
                fh.write(" ".join(f % v for v in y) + " " + f % w + "\n")
            fh.write(f"PLAN {len(self.plan)}\n")
            for i, j, m in self.plan:
                fh.write(f"{int(i)} {int(j)} {f % m}\n")
            fh.write(f"PSI {len(self.psi)}\n" + "".join(f % v + "\n" for v in self.psi))
            fh.write(f"PSIC {len(self.psic)}\n" + "".join(f % v + "\n" for v in self.psic))
            fh.write(f"COST\n{f % self.cost}\n")
            fh.write(f"GAP\n{f % self.gap}\n")

    @staticmethod
    def load(path) -> "TransportSolution":
        with open(path) as fh:
            lines = fh.read().splitlines()
        pos = 0

        def block(tag):
            nonlocal pos
            head = lines[pos].split()
            if head[0] != tag:
                raise OtlabError("bad-file", f"{path}: expected section {tag}, got {head[0]}")
            count = int(head[1]) if len(head) > 1 else 1
            body = lines[pos + 1:pos + 1 + count]
            pos += 1 + count
            return head, body

        try:
            head = lines[0].split()
            conv = CostConvention(float(head[1]), head[2])
            method = head[3]
            pos = 1
            _, src = block("SRC")
            _, tgt = block("TGT")
            _, plan = block("PLAN")
            _, psi = block("PSI")
            _, psic = block("PSIC")
            _, cost = block("COST")
            _, gap = block("GAP")
        except (IndexError, ValueError) as exc:
            raise OtlabError("bad-file", f"{path}: malformed solution ({exc})") from exc
        s = np.array([r.split() for r in src], dtype=float)
        t = np.array([r.split() for r in tgt], dtype=float)
        pl = np.array([r.split() for r in plan], dtype=float).reshape(-1, 3)
        return TransportSolution(
            plan=pl,
            cost=float(cost[0]),
            psi=np.array(psi, dtype=float),
            psic=np.array(psic, dtype=float),
            gap=float(gap[0]),
            sources=s[:, :-1],
            targets=t[:, :-1],
            conv=conv,
            method=method,
            source_weights=s[:, -1],
            target_weights=t[:, -1],
        )


def _chunks(n_rows: int, n_cols: int):
    step = max(1, CHUNK_PAIRS // max(n_cols, 1))
    for lo in range(0, n_rows, step):
        yield lo, min(n_rows, lo + step)


# ---------------------------------------------------------------------------
# c-transforms


def c_transform(psi, targets, points, conv: CostConvention, prefer=None, tol: float = 1e-9):
    """psi^c(x) = min_j c(x, y_j) - psi_j at each point, with the minimizing atom.

    ``points`` may be an array of points or a GridSpec (cell centers).  Ties
    within ``tol * (1 + |min|)`` resolve to ``prefer[i]`` when that atom is
    among the minimizers, else to the lowest atom index.
    """
    if isinstance(points, GridSpec):
        points = points.centers()
    points = np.atleast_2d(np.asarray(points, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    psi = np.asarray(psi, dtype=float)
    if not np.all(np.isfinite(psi)):
        raise OtlabError("bad-potential", "psi must be finite")
    vals = np.empty(len(points))
    arg = np.empty(len(points), dtype=np.int64)
    for lo, hi in _chunks(len(points), len(targets)):
        g = conv.matrix(points[lo:hi], targets) - psi[None, :]
        mn = g.min(axis=1)
        thr = mn + tol * (1.0 + np.abs(mn))
        a = np.argmax(g <= thr[:, None], axis=1)
        if prefer is not None:
            pr = np.asarray(prefer[lo:hi])
            ok = pr >= 0
            rows = np.flatnonzero(ok)
            ok[rows] = g[rows, pr[rows]] <= thr[rows]
            a = np.where(ok, pr, a)
        vals[lo:hi] = mn
        arg[lo:hi] = a
    return vals, arg


def lipschitz_bound(values: np.ndarray, points: np.ndarray, R: float | None = None) -> float:
    """Largest difference quotient of a sampled function over pairs within radius R of the origin."""
    points = np.atleast_2d(points)
    keep = np.ones(len(points), bool) if R is None else np.linalg.norm(points, axis=1) <= R
    v, x = values[keep], points[keep]
    worst = 0.0
    for lo, hi in _chunks(len(x), len(x)):
        d = _dist(x[lo:hi], x)
        dv = np.abs(v[lo:hi, None] - v[None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(d > 0, dv / d, 0.0)
        worst = max(worst, float(q.max(initial=0.0)))
    return worst


# ---------------------------------------------------------------------------
# solvers


def _repair(psi, x, y, conv):
    """psi -> psi^{cc} on the targets and its c-transform on the sources."""
    u1, _ = c_transform(psi, y, x, conv)
    v2, _ = c_transform(u1, x, y, conv)
    u2, _ = c_transform(v2, y, x, conv)
    return v2, u2


def _prepare(lam, mu, budget):
    a, b = as_discrete(lam), as_discrete(mu)
    if a.n != b.n:
        raise OtlabError("dimension-mismatch", f"dimensions {a.n} and {b.n} differ")
    check_mass(a, b)
    if budget is not None and len(a) * len(b) > budget:
        raise OtlabError("problem-too-large", f"{len(a)} x {len(b)} pairs exceed the budget {budget}")
    wb = b.weights * (a.mass / b.mass)
    return a.points, a.weights.copy(), b.points, wb


def quantile_plan(xa, wa, xb, wb):
    """Monotone coupling of two 1D atom lists as a staircase of arcs.

    Returns (rows, cols, masses) in the original atom indexing.  Whenever
    both sides are exhausted at the same quantile a zero-mass arc links the
    steps, so the arcs always form a connected path.
    """
    oa = np.argsort(xa, kind="stable")
    ob = np.argsort(xb, kind="stable")
    ca = np.concatenate([[0.0], np.cumsum(wa[oa])])
    cb = np.concatenate([[0.0], np.cumsum(wb[ob])])
    cb[-1] = ca[-1]
    t = np.union1d(ca, cb)
    t = t[t <= ca[-1]]
    mid = 0.5 * (t[:-1] + t[1:])
    mass = np.diff(t)
    keep = mass > 0
    mid, mass = mid[keep], mass[keep]
    i = np.clip(np.searchsorted(ca, mid, side="right") - 1, 0, len(oa) - 1)
    j = np.clip(np.searchsorted(cb, mid, side="right") - 1, 0, len(ob) - 1)
    both = np.flatnonzero((np.diff(i) > 0) & (np.diff(j) > 0))
    if both.size:
        i = np.insert(i, both + 1, i[both + 1])
        j = np.insert(j, both + 1, j[both])
        mass = np.insert(mass, both + 1, 0.0)
    return oa[i], ob[j], mass


def _staircase_duals(rows, cols, c, na, nb):
    """Potentials with u_i + v_j = c on every arc of a connected staircase."""
    u = np.full(na, np.nan)
    v = np.full(nb, np.nan)
    u[rows[0]] = 0.0
    for i, j, cij in zip(rows.tolist(), cols.tolist(), c.tolist()):
        if math.isnan(v[j]):
            v[j] = cij - u[i]
        elif math.isnan(u[i]):
            u[i] = cij - v[j]
    return u, v


def _fill_duals(u, v, x, y, conv):
    """Atoms lost to rounding in the cumulative sums carry no arc; give them c-transform values."""
    ku, kv = np.isnan(u), np.isnan(v)
    if ku.any():
        u[ku] = c_transform(v[~kv], y[~kv], x[ku], conv)[0]
    if kv.any():
        v[kv] = c_transform(u, x, y[kv], conv)[0]
    return u, v


def solve_discrete(lam, mu, conv: CostConvention, method: str = "auto", budget: int = PAIR_BUDGET) -> TransportSolution:
    """Exact optimal transport between two measures of equal mass.

    ``method``: ``network_simplex``, ``quantile`` (1D only) or ``auto``
    (quantile in 1D, network simplex otherwise).
    """
    n = as_discrete(lam).n
    if method == "auto":
        method = "quantile" if n == 1 else "network_simplex"
    x, wa, y, wb = _prepare(lam, mu, None if method == "quantile" else budget)
    if method == "quantile":
        if n != 1:
            raise OtlabError("bad-method", "the quantile solver is one-dimensional")
        rows, cols, m = quantile_plan(x[:, 0], wa, y[:, 0], wb)
        c_arc = conv.of_distance(np.abs(x[rows, 0] - y[cols, 0]))
        u, v = _fill_duals(*_staircase_duals(rows, cols, c_arc, len(wa), len(wb)), x, y, conv)
        plan = np.column_stack([rows, cols, m])[m > 0]
        cost = float(np.sum(m * c_arc))
    elif method == "network_simplex":
        M = conv.matrix(x, y)
        G, log = ot.emd(wa, wb, M, numItermax=10 ** 7, log=True)
        if log.get("warning"):
            raise OtlabError("solver-failed", str(log["warning"]))
        i, j = np.nonzero(G > 0)
        plan = np.column_stack([i, j, G[i, j]])
        cost = float(np.sum(G[i, j] * M[i, j]))
        v = np.asarray(log["v"], dtype=float)
    else:
        raise OtlabError("bad-method", f"unknown method {method!r}")
    psi, psic = _repair(v, x, y, conv)
    dual = float(wa @ psic + wb @ psi)
    return TransportSolution(
        plan=plan,
        cost=cost,
        psi=psi,
        psic=psic,
        gap=cost - dual,
        sources=x,
        targets=y,
        conv=conv,
        method=method,
        source_weights=wa,
        target_weights=wb,
    )


# ---------------------------------------------------------------------------
# one-dimensional closed form


def _antideriv_abs_pow(d: np.ndarray, p: float) -> np.ndarray:
    return np.sign(d) * np.abs(d) ** (p + 1) / (p + 1)


def _cells_1d(m):
    if isinstance(m, GridMeasure):
        if m.n != 1:
            raise OtlabError("bad-dimension", "expected a one-dimensional measure")
        w = m.weights
        lo = m.spec.origin[0] + np.arange(w.size) * m.h
        keep = w > 0
        return lo[keep], np.full(keep.sum(), m.h), w[keep]
    d = as_discrete(m)
    o = np.argsort(d.points[:, 0], kind="stable")
    return d.points[o, 0], np.zeros(len(d)), d.weights[o]


def wp_1d(a, b, conv: CostConvention, mode: str = "atoms") -> float:
    """Cost of the monotone coupling of two 1D measures.

    ``atoms`` treats grid cells as point masses at their centers.
    ``density`` treats grid cells as uniform densities and integrates the
    difference of the piecewise-linear quantile functions exactly.
    """
    da, db = as_discrete(a), as_discrete(b)
    check_mass(da, db)
    if da.n != 1 or db.n != 1:
        raise OtlabError("bad-dimension", "expected one-dimensional measures")
    if mode == "atoms":
        wb = db.weights * (da.mass / db.mass)
        rows, cols, m = quantile_plan(da.points[:, 0], da.weights, db.points[:, 0], wb)
        return float(np.sum(m * conv.of_distance(np.abs(da.points[rows, 0] - db.points[cols, 0]))))
    if mode != "density":
        raise OtlabError("bad-method", f"unknown mode {mode!r}")
    la, wda, ma = _cells_1d(a)
    lb, wdb, mb = _cells_1d(b)
    mb = mb * (ma.sum() / mb.sum())
    ca = np.concatenate([[0.0], np.cumsum(ma)])
    cb = np.concatenate([[0.0], np.cumsum(mb)])
    cb[-1] = ca[-1]
    t = np.union1d(ca, cb)
    t = t[t <= ca[-1]]
    s0, s1 = t[:-1], t[1:]
    keep = s1 > s0
    s0, s1 = s0[keep], s1[keep]
    mid = 0.5 * (s0 + s1)
    i = np.clip(np.searchsorted(ca, mid, side="right") - 1, 0, len(ma) - 1)
    j = np.clip(np.searchsorted(cb, mid, side="right") - 1, 0, len(mb) - 1)

    def q(lo, width, mass, cum, idx, s):
        return lo[idx] + width[idx] * (s - cum[idx]) / mass[idx]

    d0 = q(la, wda, ma, ca, i, s0) - q(lb, wdb, mb, cb, j, s0)
    d1 = q(la, wda, ma, ca, i, s1) - q(lb, wdb, mb, cb, j, s1)
    L = s1 - s0
    slope = d1 - d0
    p = conv.p
    flat = np.abs(slope) <= 1e-14 * (1.0 + np.abs(d0))
    with np.errstate(divide="ignore", invalid="ignore"):
        curved = (_antideriv_abs_pow(d1, p) - _antideriv_abs_pow(d0, p)) / slope * L
    avg = np.abs(0.5 * (d0 + d1)) ** p * L
    total = np.where(flat, avg, curved)
    return float(conv.factor * np.sum(total))


# ---------------------------------------------------------------------------
# displacement fields


@dataclass
class DisplacementField:
    """Displacement xi(x) = x - T(x) at the source points.

    For p > 1 this is Phi_p applied to grad psi^c, i.e. exactly x - y* for
    the minimizing atom y*.  For p = 1 it is the unit vector
    (x - y*)/|x - y*| = grad psi^c = -grad psi; points that coincide with
    their atom are marked undefined.
    """

    points: np.ndarray
    xi: np.ndarray
    p: float
    weights: np.ndarray
    defined: np.ndarray
    grad_psic: np.ndarray
    sign: str = "xi = x - T(x)"

    @property
    def grad_psi(self) -> np.ndarray:
        """grad psi = -grad psi^c (meaningful for p = 1, where psi^c = -psi)."""
        return -self.grad_psic

    @property
    def undefined_mass(self) -> float:
        return float(self.weights[~self.defined].sum())


def phi_p(z: np.ndarray, p: float) -> np.ndarray:
    """|z|^{p'-2} z with p' the conjugate exponent; identity for p = 1."""
    if p == 1:
        return np.array(z, dtype=float)
    q = p / (p - 1)
    r = np.linalg.norm(z, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(r > 0, r ** (q - 2), 0.0)
    return f * z


def gradient_field(points, atoms, argmin, conv: CostConvention, weights=None, tol: float = 1e-12) -> DisplacementField:
    """Displacement field from the c-transform's minimizing atoms.

    The gradient of psi^c is that of x -> c(x, y*) in the 1/p-normalized
    cost, so the field does not depend on the scale flag.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    y = np.atleast_2d(atoms)[np.asarray(argmin)]
    d = points - y
    r = np.linalg.norm(d, axis=1)
    w = np.ones(len(points)) if weights is None else np.asarray(weights, dtype=float)
    if conv.p == 1:
        defined = r > tol * (1.0 + np.linalg.norm(points, axis=1))
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(defined[:, None], d / r[:, None], 0.0)
        return DisplacementField(points, g, 1.0, w, defined, g)
    g = (r ** (conv.p - 2))[:, None] * d if conv.p != 2 else d.copy()
    g[r == 0] = 0.0
    xi = phi_p(g, conv.p)
    xi[r == 0] = 0.0
    return DisplacementField(points, xi, conv.p, w, np.ones(len(points), bool), g)


def displacement_from_solution(sol: TransportSolution) -> DisplacementField:
    """Field on the source atoms, preferring each atom's plan partner on ties."""
    _, arg = c_transform(sol.psi, sol.targets, sol.sources, sol.conv, prefer=sol.partner())
    return gradient_field(sol.sources, sol.targets, arg, sol.conv, sol.source_weights)


def barycentric_displacement(sol: TransportSolution) -> np.ndarray:
    """x_i minus the plan's barycenter of targets for x_i."""
    a, _ = sol.marginals()
    bary = np.zeros_like(sol.sources)
    for k in range(sol.sources.shape[1]):
        bary[:, k] = np.bincount(sol.rows, sol.masses * sol.targets[sol.cols, k], minlength=len(a))
    with np.errstate(divide="ignore", invalid="ignore"):
        bary = bary / a[:, None]
    return sol.sources - bary


def kantorovich_value(psi, lam, mu, conv: CostConvention) -> float:
    """F(psi) = int psi^c d(lam) + int psi d(mu), with a fresh c-transform."""
    a, b = as_discrete(lam), as_discrete(mu)
    psic, _ = c_transform(psi, b.points, a.points, conv)
    return float(a.weights @ psic + b.weights @ np.asarray(psi, dtype=float))
