"""Convolution deficit, rigidity recovery and the deficit/two-point chain."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from otlab.errors import OtlabError
from otlab.measures import GridField, GridMeasure, GridSpec, Kernel, align, as_discrete, convolve, from_density, project, translate
from otlab.ot_core import (
    CostConvention,
    DisplacementField,
    TransportSolution,
    c_transform,
    displacement_from_solution,
    solve_discrete,
    wp_1d,
)


@dataclass
class ContractionReport:
    p: float
    scale: str
    kernel: str
    eps: float
    wp: float
    wp_eps: float
    delta: float
    error_bar: float
    vector: np.ndarray | None = None  # z for p > 1, e for p = 1
    residual: float = math.nan
    marginal_w1: float = math.nan
    disjoint: bool | None = None
    undefined_mass: float = 0.0
    sol: TransportSolution | None = field(default=None, repr=False)
    sol_eps: TransportSolution | None = field(default=None, repr=False)

    def csv_header(self, n: int) -> list[str]:
        tag = "z" if self.p > 1 else "e"
        return ["p", "eps", "kernel", "wp", "wp_eps", "delta"] + [f"{tag}{k + 1}" for k in range(n)] + [
            "residual",
            "gap",
        ]

    def csv_row(self, n: int) -> list[str]:
        vec = self.vector if self.vector is not None else np.full(n, math.nan)
        vals = [self.p, self.eps, self.kernel, self.wp, self.wp_eps, self.delta, *vec, self.residual, self.error_bar]
        return [v if isinstance(v, str) else repr(float(v)) for v in vals]


def delta_eps(lam: GridMeasure, mu: GridMeasure, k: Kernel, conv: CostConvention, method: str = "auto") -> ContractionReport:
    """W_p^p(lam, mu) - W_p^p(lam_eps, mu_eps), error bar = sum of the two duality gaps."""
    for m in (lam, mu):
        if not m.is_probability():
            raise OtlabError("mass-mismatch", "deficit requires probability measures")
    lam, mu = align(lam, mu)
    sol = solve_discrete(lam, mu, conv, method)
    lam_e, mu_e = convolve(lam, k), convolve(mu, k)
    sol_e = solve_discrete(lam_e, mu_e, conv, method)
    return ContractionReport(
        p=conv.p,
        scale=conv.scale,
        kernel=k.profile,
        eps=k.eps,
        wp=sol.cost,
        wp_eps=sol_e.cost,
        delta=sol.cost - sol_e.cost,
        error_bar=abs(sol.gap) + abs(sol_e.gap),
        sol=sol,
        sol_eps=sol_e,
    )


def recover_translation(fld: DisplacementField) -> tuple[np.ndarray, float]:
    """z = lam-mean of xi and the residual int |xi - z|^p d(lam)."""
    if fld.p <= 1:
        raise OtlabError("bad-exponent", "translation recovery needs p > 1")
    w = fld.weights
    z = (w @ fld.xi) / w.sum()
    res = float(w @ np.linalg.norm(fld.xi - z, axis=1) ** fld.p)
    return z, res


def recover_direction(fld: DisplacementField) -> tuple[np.ndarray, float]:
    """e = normalized lam-mean of grad psi on moved mass, residual int |grad psi - e| d(lam)."""
    if fld.p != 1:
        raise OtlabError("bad-exponent", "direction recovery needs p = 1")
    w = fld.weights * fld.defined
    g = fld.grad_psi
    z = (w @ g) / fld.weights.sum()
    nz = float(np.linalg.norm(z))
    if nz < 1e-9:
        raise OtlabError("degenerate-direction", f"mean gradient has norm {nz:.3g}")
    e = z / nz
    return e, float(w @ np.linalg.norm(g - e, axis=1))


def marginal_stability(lam, mu, e) -> float:
    """W_1 between the projections onto e-perp (n = 2) or along e (other n)."""
    n = np.atleast_1d(e).shape[0]
    kind = "perp" if n == 2 else "scalar"
    return wp_1d(project(lam, e, kind), project(mu, e, kind), CostConvention(1.0, "standard"))


def supports_disjoint(lam: GridMeasure, mu: GridMeasure) -> bool:
    a, b = align(lam, mu)
    return not np.any(a.support_mask() & b.support_mask())


def contraction_report(lam: GridMeasure, mu: GridMeasure, k: Kernel, conv: CostConvention, method: str = "auto") -> ContractionReport:
    """Deficit plus rigidity data: z and its residual (p > 1), or e, residual and marginal W_1 (p = 1)."""
    rep = delta_eps(lam, mu, k, conv, method)
    fld = displacement_from_solution(rep.sol)
    rep.undefined_mass = fld.undefined_mass
    if conv.p > 1:
        rep.vector, rep.residual = recover_translation(fld)
        return rep
    rep.disjoint = supports_disjoint(lam, mu)
    try:
        rep.vector, rep.residual = recover_direction(fld)
        rep.marginal_w1 = marginal_stability(lam, mu, rep.vector)
    except OtlabError as exc:
        if exc.code != "degenerate-direction":
            raise
    return rep


# ---------------------------------------------------------------------------
# deficit versus two-point functional


@dataclass
class ChainReport:
    delta: float
    error_bar: float
    lam_eps: float  # Lambda_eps(xi, xi_eps)
    alpha: float
    ratio: float  # delta^(1/alpha) / Lambda_eps
    offsets: np.ndarray  # kernel offsets z (physical units)
    rho: np.ndarray  # kernel weight per offset
    gaps: np.ndarray  # F_{lam^z,mu^z}(psi^z) - F_{lam^z,mu^z}(psi_eps)
    integrals: np.ndarray  # int |xi(. - z) - xi_eps|^p d(lam^z)
    weighted_gap: float  # sum rho * gaps, equals the dual-value deficit
    weighted_integral: float  # sum rho * integrals, equals lam_eps
    per_z_constant: float  # min over z of gaps / integrals^alpha
    violation: bool | None = None


def fields_on_grid(lam: GridMeasure, sol: TransportSolution) -> GridField:
    fld = displacement_from_solution(sol)
    return GridField.scatter(lam.spec, lam.support_cells(), fld.xi)


def lambda_delta_chain(
    lam: GridMeasure,
    mu: GridMeasure,
    k: Kernel,
    conv: CostConvention,
    alpha: float,
    C: float | None = None,
    method: str = "auto",
) -> ChainReport:
    """Decompose the deficit over kernel offsets and compare it with Lambda_eps.

    For each offset z of the discretized kernel the per-shift gap
    F(psi^z) - F(psi_eps) against (lam^z, mu^z) and the integrand of the
    strong-convexity hypothesis are recorded.  Their rho-weighted sums
    reproduce the dual deficit and Lambda_eps respectively.
    """
    from otlab.two_point import lambda_eps

    lam, mu = align(lam, mu)
    rep = delta_eps(lam, mu, k, conv, method)
    sol, sol_e = rep.sol, rep.sol_eps
    lam_e, mu_e = convolve(lam, k), convolve(mu, k)
    spec_e = lam_e.spec
    p = conv.p

    xi = fields_on_grid(lam, sol)
    xi_e = fields_on_grid(lam_e, sol_e)

    psic_e = np.full(spec_e.size, np.nan)
    psic_e[lam_e.support_cells()] = sol_e.psic
    psi_e = np.full(spec_e.size, np.nan)
    psi_e[mu_e.support_cells()] = sol_e.psi

    kw = k.discretize(lam.h, lam.n)
    R = (kw.shape[0] - 1) // 2
    offs = np.stack(np.meshgrid(*([np.arange(-R, R + 1)] * lam.n), indexing="ij"), -1).reshape(-1, lam.n)
    rho = kw.ravel()
    keep = rho > 0
    offs, rho = offs[keep], rho[keep]

    lam_cells = np.array(np.unravel_index(lam.support_cells(), lam.spec.shape)).T
    mu_cells = np.array(np.unravel_index(mu.support_cells(), mu.spec.shape)).T
    wl = lam.weights.ravel()[lam.support_cells()]
    wm = mu.weights.ravel()[mu.support_cells()]
    xi_l = xi.values.reshape(-1, xi.dim)[lam.support_cells()]
    base = sol.dual_value

    gaps = np.empty(len(offs))
    ints = np.empty(len(offs))
    for t, o in enumerate(offs):
        li = np.ravel_multi_index(tuple((lam_cells + R + o).T), spec_e.shape)
        mi = np.ravel_multi_index(tuple((mu_cells + R + o).T), spec_e.shape)
        vc = psic_e[li]
        if np.any(np.isnan(vc)):
            miss = np.isnan(vc)
            pts = spec_e.centers()[li[miss]]
            vc = vc.copy()
            vc[miss] = c_transform(sol_e.psi, sol_e.targets, pts, conv)[0]
        vp = psi_e[mi]
        if np.any(np.isnan(vp)):
            # psi_eps off its support: use the c-concave extension (psi_eps^c)^c
            miss = np.isnan(vp)
            pts = spec_e.centers()[mi[miss]]
            vp = vp.copy()
            vp[miss] = c_transform(sol_e.psic, sol_e.sources, pts, conv)[0]
        gaps[t] = base - (wl @ vc + wm @ vp)
        diff = xi_l - xi_e.values.reshape(-1, xi_e.dim)[li]
        ints[t] = wl @ np.linalg.norm(diff, axis=1) ** p

    lam_val = lambda_eps(xi, xi_e, k, lam, p)
    delta = max(rep.delta, 0.0)
    root = delta ** (1.0 / alpha)
    ratio = root / lam_val if lam_val > 0 else (math.inf if root > 0 else math.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        cz = np.where(ints > 0, np.maximum(gaps, 0.0) / ints ** alpha, np.inf)
    out = ChainReport(
        delta=rep.delta,
        error_bar=rep.error_bar,
        lam_eps=lam_val,
        alpha=alpha,
        ratio=ratio,
        offsets=offs * lam.h,
        rho=rho,
        gaps=gaps,
        integrals=ints,
        weighted_gap=float(rho @ gaps),
        weighted_integral=float(rho @ ints),
        per_z_constant=float(cz.min()) if cz.size else math.inf,
    )
    if C is not None and lam_val > 0:
        out.violation = bool(ratio < C ** (1.0 / alpha) * (1 - 1e-3))
    return out


# ---------------------------------------------------------------------------
# near-translate families


def min_translate_w2(lam, mu) -> tuple[float, np.ndarray]:
    """min_z W_2^2(lam, mu^z), standard convention: the minimizing shift matches the means."""
    a, b = as_discrete(lam), as_discrete(mu)
    z = a.mean() - b.mean()
    b = translate(b, z)
    conv = CostConvention(2.0, "standard")
    if a.n == 1:
        return wp_1d(a, b, conv), z
    return solve_discrete(a, b, conv).cost, z


def smooth_density(spec: GridSpec, rng: np.random.Generator, lo=0.25, hi=0.75, bumps: int = 3) -> GridMeasure:
    """Random positive density on the box [lo, hi]^n: a floor plus Gaussian bumps."""
    n = spec.n
    c = rng.uniform(lo, hi, size=(bumps, n))
    s = rng.uniform(0.05, 0.15, size=bumps)
    a = rng.uniform(0.5, 1.5, size=bumps)

    def f(x):
        inside = np.all((x >= lo) & (x <= hi), axis=1)
        d2 = np.sum((x[:, None, :] - c[None]) ** 2, axis=2)
        return inside * (0.3 + np.exp(-d2 / (2 * s ** 2)) @ a)

    return from_density(spec, f)


def near_translate_pair(spec: GridSpec, shift_cells, s: float, seed: int) -> tuple[GridMeasure, GridMeasure]:
    """lam smooth and mu = (1 - s) lam^z + s nu with z a grid offset and nu another smooth density."""
    rng = np.random.Generator(np.random.Philox(seed))
    lam = smooth_density(spec, rng)
    nu = smooth_density(spec, rng)
    shift = tuple(int(k) for k in shift_cells)
    idx = np.nonzero(lam.weights)
    for d, k in enumerate(shift):
        if np.any(idx[d] + k < 0) or np.any(idx[d] + k >= spec.shape[d]):
            raise OtlabError("grid-too-small", "the shift moves mass off the grid")
    w = np.roll(lam.weights, shift, axis=tuple(range(spec.n)))
    return lam, GridMeasure(spec, (1 - s) * w + s * nu.weights)
