"""Two-point functional, lattice graphs with ball masses, M0 and tau."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.spatial import cKDTree

from otlab.errors import OtlabError
from otlab.measures import GridField, GridMeasure, Kernel

# LHS values below this are rounding residue of a constant field
ZERO_LHS = 1e-14

FieldLike = GridField | Callable[[np.ndarray], np.ndarray] | np.ndarray


def _eval(fld: FieldLike, pts: np.ndarray, lam: GridMeasure | None = None, cells=None) -> np.ndarray:
    if isinstance(fld, GridField):
        v = fld.at(pts)
    elif callable(fld):
        v = np.asarray(fld(pts), dtype=float)
    else:
        arr = np.asarray(fld, dtype=float)
        v = arr.reshape(lam.spec.size, -1)[cells] if lam is not None else arr
    return v.reshape(len(pts), -1)


# ---------------------------------------------------------------------------
# Lambda_eps


def lambda_eps(xi: FieldLike, f: FieldLike, k: Kernel, lam: GridMeasure, p: float) -> float:
    """int int |xi(y) - f(x)|^p rho_eps(x - y) dx d(lam)(y) with the discretized kernel.

    ``xi`` is evaluated on the support cells of ``lam`` and ``f`` at those
    cells shifted by every kernel offset.  Either may be a GridField, a
    callable on points, or (for ``xi``) an array over ``lam``'s grid.
    """
    cells = lam.support_cells()
    y = lam.spec.centers()[cells]
    wy = lam.weights.ravel()[cells]
    xy = _eval(xi, y, lam, cells)
    kw = k.discretize(lam.h, lam.n)
    R = (kw.shape[0] - 1) // 2
    offs = np.stack(np.meshgrid(*([np.arange(-R, R + 1)] * lam.n), indexing="ij"), -1).reshape(-1, lam.n)
    rho = kw.ravel()
    total = 0.0
    for o, r in zip(offs, rho):
        if r <= 0:
            continue
        fx = _eval(f, y + o * lam.h)
        if np.any(np.isnan(fx)):
            raise OtlabError("field-undefined", "f is undefined on part of the kernel neighbourhood")
        total += r * float(wy @ (np.linalg.norm(xy - fx, axis=1) ** p))
    return total


# ---------------------------------------------------------------------------
# lattice graphs


@dataclass
class GridGraph:
    r: float
    eta: float
    anchor: np.ndarray
    nodes: np.ndarray  # (N, n) node coordinates
    keys: np.ndarray  # (N, n) integer lattice indices
    ball_mass: np.ndarray  # lam(B_r(x)) per node
    edges: np.ndarray  # (E, 2) adjacent node index pairs, i < j
    connected: bool
    adjacency: sparse.csr_matrix = field(repr=False)
    balls: list = field(default_factory=list, repr=False)  # support-cell indices within r of each node
    cell_centers: np.ndarray | None = field(default=None, repr=False)
    cell_weights: np.ndarray | None = field(default=None, repr=False)

    @property
    def rhat(self) -> float:
        return self.eta * self.r

    def __len__(self):
        return len(self.nodes)


def _overlap_matrix(grid_lo: float, h: float, G: int, lat_lo: int, L: int, rhat: float, zbar: float) -> sparse.csr_matrix:
    """Lattice cube i (centered at zbar + (lat_lo+i) rhat) versus grid cell j: positive-length overlap."""
    rows, cols = [], []
    cl = grid_lo + np.arange(G) * h
    cu = cl + h
    # lattice indices whose cube [x - rhat/2, x + rhat/2) meets (cl, cu)
    first = np.ceil((cl - zbar) / rhat - 0.5 + 1e-12).astype(np.int64)
    last = np.floor((cu - zbar) / rhat + 0.5 - 1e-12).astype(np.int64)
    for j in range(G):
        ks = np.arange(first[j], last[j] + 1) - lat_lo
        ks = ks[(ks >= 0) & (ks < L)]
        rows.append(ks)
        cols.append(np.full(ks.size, j))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    return sparse.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(L, G))


def build_grid_graph(lam: GridMeasure, r: float, eta: float = 0.1, anchor=None) -> GridGraph:
    """Lattice X_zbar = nearest-lattice-point images of supp(lam), with ball masses."""
    if not (0 < eta <= 0.25):
        raise OtlabError("bad-parameter", f"eta must lie in (0, 1/4], got {eta}")
    if r < 2 * lam.h * (1 - 1e-12):
        raise OtlabError("kernel-under-resolved", f"radius {r} below two grid cells")
    n = lam.n
    rhat = eta * r
    zbar = np.zeros(n) if anchor is None else np.broadcast_to(np.asarray(anchor, dtype=float), (n,))
    spec = lam.spec
    lo = np.asarray(spec.origin)
    hi = spec.upper
    lat_lo = np.floor((lo - zbar) / rhat - 0.5).astype(np.int64)
    lat_hi = np.ceil((hi - zbar) / rhat + 0.5).astype(np.int64)
    L = lat_hi - lat_lo + 1
    if int(np.prod(L)) > spec.budget:
        raise OtlabError("grid-budget", "lattice exceeds the cell budget")
    occ = lam.support_mask().astype(float)
    for ax in range(n):
        A = _overlap_matrix(lo[ax], spec.h, spec.shape[ax], int(lat_lo[ax]), int(L[ax]), rhat, float(zbar[ax]))
        occ = np.moveaxis(_sparse_axis(A, occ, ax), 0, ax)
    keys = np.argwhere(occ > 0)
    if keys.size == 0:
        raise OtlabError("empty-support", "no lattice node meets the support")
    keys = keys + lat_lo
    nodes = zbar + keys * rhat

    cells = lam.support_cells()
    centers = spec.centers()[cells]
    w = lam.weights.ravel()[cells]
    tree = cKDTree(centers)
    balls = tree.query_ball_point(nodes, r * (1 + 1e-12))
    ball_mass = np.array([w[b].sum() for b in balls])

    index = {tuple(k): i for i, k in enumerate(keys.tolist())}
    edges = []
    for i, kk in enumerate(keys.tolist()):
        for ax in range(n):
            nb = list(kk)
            nb[ax] += 1
            j = index.get(tuple(nb))
            if j is not None:
                edges.append((i, j))
    edges = np.array(edges, dtype=np.int64).reshape(-1, 2)
    N = len(nodes)
    adj = sparse.coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(N, N))
    adj = (adj + adj.T).tocsr()
    ncomp = csgraph.connected_components(adj, directed=False)[0] if N > 1 else 1
    return GridGraph(r, eta, zbar, nodes, keys, ball_mass, edges, ncomp == 1, adj, balls, centers, w)


def _sparse_axis(A: sparse.csr_matrix, occ: np.ndarray, ax: int) -> np.ndarray:
    moved = np.moveaxis(occ, ax, 0)
    flat = moved.reshape(moved.shape[0], -1)
    out = A @ flat
    return out.reshape((A.shape[0],) + moved.shape[1:])


def _overlap_mass(g: GridGraph, i: int, j: int) -> float:
    b = g.balls[i]
    inside = np.linalg.norm(g.cell_centers[b] - g.nodes[j], axis=1) <= g.r * (1 + 1e-12)
    return float(g.cell_weights[b][inside].sum())


def pair_overlap_ratio(g: GridGraph, i: int, j: int) -> float:
    """max(lam(B_r(x_i)), lam(B_r(x_j))) / lam(B_r(x_i) & B_r(x_j))."""
    ov = _overlap_mass(g, i, j)
    top = max(g.ball_mass[i], g.ball_mass[j])
    return math.inf if ov <= 0 else top / ov


def m0(g: GridGraph) -> float:
    """Worst adjacent-pair ratio of ball mass to overlap mass (1 for an edgeless graph)."""
    if len(g.edges) == 0:
        return 1.0
    return max(pair_overlap_ratio(g, int(i), int(j)) for i, j in g.edges)


def lens_ratio(d: float, r: float, n: int = 2) -> float:
    """Disc area over the area of the lens of two radius-r discs at distance d (n = 2)."""
    if n != 2:
        raise OtlabError("bad-dimension", "lens formula implemented for n = 2")
    lens = 2 * r * r * math.acos(d / (2 * r)) - 0.5 * d * math.sqrt(4 * r * r - d * d)
    return math.pi * r * r / lens


# ---------------------------------------------------------------------------
# tau


@dataclass
class TauResult:
    tau: float
    argmax_node: int
    nodes: int
    pairs_used: int
    exact: bool
    std_error: float
    kappa_geo: float
    per_node: np.ndarray = field(repr=False)


def _bfs_levels(adj: sparse.csr_matrix, src: int):
    """Breadth-first tree from ``src``: predecessors and nodes grouped by depth."""
    _, pred = csgraph.breadth_first_order(adj, src, directed=False, return_predecessors=True)
    depth = csgraph.shortest_path(adj, unweighted=True, directed=False, indices=src).astype(np.int64)
    order = np.argsort(depth, kind="stable")
    bounds = np.searchsorted(depth[order], np.arange(depth.max() + 2))
    levels = [order[bounds[d]:bounds[d + 1]] for d in range(depth.max() + 1)]
    return pred, depth, levels


def _source_contrib(g: GridGraph, src: int, p: float, adj) -> tuple[np.ndarray, float]:
    """Per-node sum over targets x' of chain incidence times the pair weight, for one source."""
    pred, depth, levels = _bfs_levels(adj, src)
    lam = g.ball_mass
    if p > 1:
        inv = lam ** (-1.0 / (p - 1.0))
    else:
        inv = 1.0 / lam
    S = np.empty_like(lam)
    S[src] = inv[src]
    maxd = len(levels) - 1
    for d in range(1, maxd + 1):
        v = levels[d]
        S[v] = (S[pred[v]] + inv[v]) if p > 1 else np.maximum(S[pred[v]], inv[v])
    wgt = lam * (S ** (p - 1.0) if p > 1 else S)
    sub = wgt.copy()
    for d in range(maxd, 0, -1):
        v = levels[d]
        np.add.at(sub, pred[v], sub[v])
    dist = np.linalg.norm(g.nodes - g.nodes[src], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        kap = np.where(dist > 0, g.rhat * depth / dist, 0.0)
    return lam[src] * sub, float(kap.max(initial=0.0))


def tau(g: GridGraph, p: float, max_exact_nodes: int = 4096, samples: int = 1024, seed: int = 0) -> TauResult:
    """sup over nodes z of the chain-weighted pair sum.

    Chains are the paths of a breadth-first tree from each source node, so
    every chain is a lattice shortest path.  Above ``max_exact_nodes`` a
    uniform sample of sources is used and the sum is rescaled; the
    standard error of the maximizing node's estimate is reported.
    """
    N = len(g)
    if N == 1:
        return TauResult(0.0, 0, 1, 0, True, 0.0, 0.0, np.zeros(1))
    if not g.connected:
        raise OtlabError("graph-disconnected", "lattice graph is not connected")
    adj = g.adjacency
    exact = N <= max_exact_nodes
    if exact:
        sources = np.arange(N)
    else:
        rng = np.random.Generator(np.random.Philox(seed))
        sources = np.sort(rng.choice(N, size=min(samples, N), replace=False))
    acc = np.zeros(N)
    acc2 = np.zeros(N)
    kap = 0.0
    for s in sources:
        c, k = _source_contrib(g, int(s), p, adj)
        acc += c
        if not exact:
            acc2 += c * c
        kap = max(kap, k)
    if exact:
        per = acc
        se = 0.0
    else:
        m = len(sources)
        mean = acc / m
        var = np.maximum(acc2 / m - mean ** 2, 0.0)
        per = N * mean
        se_all = N * np.sqrt(var / m) * math.sqrt(max(N - m, 0) / max(N - 1, 1))
    i = int(np.argmax(per))
    if not exact:
        se = float(se_all[i])
    return TauResult(float(per[i]), i, N, int(len(sources) * N), exact, se, kap, per)


def tau_sup(lam: GridMeasure, r: float, p: float, eta: float = 0.1, **kw) -> tuple[TauResult, list[TauResult], float]:
    """tau and M0 maximized over the anchors 0 and (rhat/2, ..., rhat/2)."""
    out = []
    m0s = []
    for a in (0.0, 0.5 * eta * r):
        g = build_grid_graph(lam, r, eta, np.full(lam.n, a))
        out.append(tau(g, p, **kw))
        m0s.append(m0(g))
    best = max(out, key=lambda t: t.tau)
    return best, out, max(m0s)


# ---------------------------------------------------------------------------
# inequalities


@dataclass
class TwoPointResult:
    lhs: float
    z: np.ndarray
    m0: float
    tau: float
    lam_eps: float
    bound: float
    ratio: float


def two_point_check(lam: GridMeasure, xi: FieldLike, f: FieldLike, k: Kernel, r: float, p: float, eta: float = 0.1,
                    hyp: tuple[float, float] | None = None, **kw) -> TwoPointResult:
    """int |xi - z|^p d(lam) against M0 (eps/r)^n tau Lambda_eps.

    ``hyp`` may supply precomputed (M0, tau) for ``lam`` at (r, eta).
    """
    cells = lam.support_cells()
    y = lam.spec.centers()[cells]
    w = lam.weights.ravel()[cells]
    w = w / w.sum()
    xv = _eval(xi, y, lam, cells)
    z = w @ xv
    lhs = float(w @ np.linalg.norm(xv - z, axis=1) ** p)
    if hyp is None:
        best, _, M0 = tau_sup(lam, r, p, eta, **kw)
        T = best.tau
    else:
        M0, T = hyp
    L = lambda_eps(xi, f, k, lam.normalized(), p)
    bound = M0 * (k.eps / r) ** lam.n * T * L
    ratio = lhs / bound if bound > 0 else (math.inf if lhs > ZERO_LHS else 0.0)
    return TwoPointResult(lhs, z, M0, T, L, bound, ratio)


@dataclass
class PoincareResult:
    lhs: float
    rhs: float
    ratio: float


def nonlocal_poincare(f: FieldLike, X: GridMeasure, k: Kernel, p: float) -> PoincareResult:
    """int_X |f - z|^p dx versus int int_{X x X} rho_eps(x-y) |f(x)-f(y)|^p / |x-y|^p dx dy."""
    spec = X.spec
    mask = X.support_mask().ravel()
    cells = np.flatnonzero(mask)
    pts = spec.centers()[cells]
    vol = spec.cell_volume
    fv = _eval(f, pts)
    z = fv.mean(axis=0)
    lhs = float(vol * np.sum(np.linalg.norm(fv - z, axis=1) ** p))
    full = np.full((spec.size, fv.shape[1]), np.nan)
    full[cells] = fv
    full = full.reshape(spec.shape + (fv.shape[1],))
    idx = np.array(np.unravel_index(cells, spec.shape)).T
    kw = k.discretize(spec.h, spec.n)
    R = (kw.shape[0] - 1) // 2
    offs = np.stack(np.meshgrid(*([np.arange(-R, R + 1)] * spec.n), indexing="ij"), -1).reshape(-1, spec.n)
    rhs = 0.0
    shape = np.asarray(spec.shape)
    for o, wgt in zip(offs, kw.ravel()):
        if wgt <= 0 or not np.any(o):
            continue
        tgt = idx + o
        ok = np.all((tgt >= 0) & (tgt < shape), axis=1)
        fx = full[tuple(tgt[ok].T)]
        good = ~np.isnan(fx[:, 0])
        d = np.linalg.norm(fx[good] - fv[ok][good], axis=1)
        rhs += wgt * vol * float(np.sum(d ** p)) / (np.linalg.norm(o) * spec.h) ** p
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
    return PoincareResult(lhs, rhs, ratio)


# ---------------------------------------------------------------------------
# domains


STAR_VERTICES = np.array(
    [[0, 2.2], [0.5, 0.5], [2.2, 0], [0.5, -0.5], [0, -2.2], [-0.5, -0.5], [-2.2, 0], [-0.5, 0.5]]
)


def star_mask(spec) -> np.ndarray:
    """Four-pointed star (tips at distance 2.2, inner corners at (+-0.5, +-0.5)) scaled into [0, 1]^2."""
    from matplotlib.path import Path

    verts = STAR_VERTICES / 4.4 + 0.5
    return Path(verts).contains_points(spec.centers()).reshape(spec.shape)
