"""Gaussian closed forms, heat-semigroup parameters and the unbounded-support experiments."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from otlab.contraction import delta_eps, fields_on_grid, min_translate_w2, recover_translation
from otlab.errors import OtlabError
from otlab.measures import GridMeasure, GridSpec, Kernel, convolve
from otlab.ot_core import CostConvention, displacement_from_solution

TRUNCATION_TOL = 1e-6


@dataclass(frozen=True)
class IsotropicGaussian:
    n: int
    s: float
    mean: tuple = ()

    def __post_init__(self):
        if not self.s > 0:
            raise OtlabError("bad-parameter", "standard deviation must be positive")
        m = tuple(float(v) for v in self.mean) if len(self.mean) else (0.0,) * self.n
        if len(m) != self.n:
            raise OtlabError("bad-dimension", "mean length differs from n")
        object.__setattr__(self, "mean", m)

    @property
    def var(self) -> float:
        return self.s ** 2


def w2_gaussians(a: IsotropicGaussian, b: IsotropicGaussian) -> float:
    """Squared W_2, standard convention: |m_a - m_b|^2 + n (s_a - s_b)^2."""
    if a.n != b.n:
        raise OtlabError("bad-dimension", "Gaussians live in different dimensions")
    dm = np.subtract(a.mean, b.mean)
    return float(dm @ dm + a.n * (a.s - b.s) ** 2)


def heat_step(g: IsotropicGaussian, t: float) -> IsotropicGaussian:
    """Convolution with the heat kernel p_t (variance 2t per axis)."""
    if t < 0:
        raise OtlabError("bad-parameter", "heat time must be nonnegative")
    return IsotropicGaussian(g.n, math.sqrt(g.var + 2 * t), g.mean)


def heat_time(eps: float) -> float:
    return math.sqrt(eps)


@dataclass
class GaussianDelta:
    delta: float
    f: float
    sigma_eps: float
    kappa_eps: float
    t: float


def delta_eps_gaussian_closed_form(kappa: float, eps: float, n: int = 1) -> GaussianDelta:
    """Deficit between gamma_1 and gamma_kappa under the heat kernel at time sqrt(eps).

    Returns both printed forms; their agreement is checked to 1e-12.
    """
    t = heat_time(eps)
    se = math.sqrt(1 + 2 * t)
    ke = math.sqrt(kappa ** 2 + 2 * t)
    delta = n * ((1 - kappa) ** 2 - (se - ke) ** 2)
    f = 1 - (1 + kappa) ** 2 / (se + ke) ** 2 if eps > 0 else 0.0
    if kappa != 1:
        other = f * n * (1 - kappa) ** 2
        if abs(other - delta) > 1e-12 * max(1.0, abs(delta)):
            raise OtlabError("identity-failed", f"closed forms disagree: {delta!r} vs {other!r}")
    return GaussianDelta(delta, f, se, ke, t)


def caffarelli_bound(kappa: float, sigma: float) -> float:
    """Lipschitz bound sqrt(kappa / sigma) for the map into a (1/kappa)-convex target from a (1/sigma)-smooth source."""
    if kappa <= 0 or sigma <= 0:
        raise OtlabError("bad-parameter", "both parameters must be positive")
    return math.sqrt(kappa / sigma)


def log_concavity_step(kappa: float, t: float) -> float:
    """Inverse log-concavity parameter after convolution with p_t."""
    if kappa < 0 or t < 0:
        raise OtlabError("bad-parameter", "parameters must be nonnegative")
    return kappa + 2 * t


# ---------------------------------------------------------------------------
# discretization


def discretize(g: IsotropicGaussian, spec: GridSpec) -> tuple[GridMeasure, float]:
    """Exact cell masses of a Gaussian (product of 1D CDF differences), renormalized; returns the truncated mass."""
    if spec.n != g.n:
        raise OtlabError("bad-dimension", "grid and Gaussian dimensions differ")
    w = np.ones(())
    for d, ax in enumerate(spec.axes()):
        edges = np.concatenate([ax - 0.5 * spec.h, [ax[-1] + 0.5 * spec.h]])
        lo = np.diff(stats.norm.cdf(edges, loc=g.mean[d], scale=g.s))
        hi = -np.diff(stats.norm.sf(edges, loc=g.mean[d], scale=g.s))
        # upper tail from the survival function, which avoids cancellation near 1
        w = np.multiply.outer(w, np.where(edges[:-1] >= g.mean[d], hi, lo))
    total = float(w.sum())
    trunc = 1.0 - total
    if trunc > TRUNCATION_TOL:
        raise OtlabError("domain-too-small", f"truncated mass {trunc:.3g} exceeds {TRUNCATION_TOL}")
    return GridMeasure(spec, w / total), trunc


def gaussian_grid(h: float, radius: float, n: int = 1) -> GridSpec:
    return GridSpec.box([-radius] * n, [radius] * n, h)


def gaussian_pair(kappa: float, h: float, R: float = 8.0, shift: float = 0.0):
    """Discretized gamma_1 and gamma_kappa (mean ``shift``) on a common 1D grid covering R standard deviations."""
    radius = R * max(1.0, kappa) + abs(shift)
    spec = gaussian_grid(h, radius)
    lam, t1 = discretize(IsotropicGaussian(1, 1.0), spec)
    mu, t2 = discretize(IsotropicGaussian(1, kappa, (shift,)), spec)
    return lam, mu, max(t1, t2)


# ---------------------------------------------------------------------------
# experiments


@dataclass
class StabGaussReport:
    kappa: float
    eps: float
    shift: float
    delta_closed: float
    delta_numeric: float
    error_bar: float
    w2min: float
    w2min_closed: float
    ratios: dict
    trunc_mass: float

    csv_columns = ("kappa", "eps", "delta_closed", "delta_numeric", "w2min", "ratio_beta01", "ratio_beta025", "trunc_mass")

    def csv_row(self) -> list[str]:
        vals = [self.kappa, self.eps, self.delta_closed, self.delta_numeric, self.w2min,
                self.ratios.get(0.1, math.nan), self.ratios.get(0.25, math.nan), self.trunc_mass]
        return [repr(float(v)) for v in vals]


def stabgauss_experiment(kappa: float, eps: float, R: float = 8.0, h: float = 5e-3, shift: float = 0.0,
                         betas=(0.1, 0.25)) -> StabGaussReport:
    """Full 1D pipeline on gamma_1 versus a (shifted) gamma_kappa with the heat kernel."""
    if not 0.25 <= kappa <= 4:
        raise OtlabError("bad-parameter", "kappa must lie in [1/4, 4]")
    lam, mu, trunc = gaussian_pair(kappa, h, R, shift)
    k = Kernel("heat", eps)
    rep = delta_eps(lam, mu, k, CostConvention(2.0, "standard"))
    closed = delta_eps_gaussian_closed_form(kappa, eps, 1).delta
    w2min, _ = min_translate_w2(lam, mu)
    d = max(rep.delta, 0.0)
    ratios = {}
    for b in betas:
        denom = eps ** -2 * d ** (1 - b)
        ratios[b] = w2min / denom if denom > 0 else (math.inf if w2min > 0 else 0.0)
    return StabGaussReport(kappa, eps, shift, closed, rep.delta, rep.error_bar, w2min, (1 - kappa) ** 2, ratios, trunc)


@dataclass
class TwoPointGaussReport:
    magnitudes: np.ndarray
    lam_eps: np.ndarray
    residual: np.ndarray
    spearman: float
    rows: list = field(default_factory=list)


def twopoint_gauss_sweep(magnitudes, eps: float = 0.04, h: float = 1e-2, R: float = 8.0, shift: float = 0.5) -> TwoPointGaussReport:
    """Lambda_eps(xi, xi_eps) and the rigidity residual along gamma_1 -> gamma_{1+s} shifted, s in ``magnitudes``."""
    from otlab.two_point import lambda_eps

    k = Kernel("heat", eps)
    conv = CostConvention(2.0, "standard")
    L, res = [], []
    for s in magnitudes:
        lam, mu, _ = gaussian_pair(1.0 + s, h, R, shift)
        rep = delta_eps(lam, mu, k, conv)
        xi = fields_on_grid(lam, rep.sol)
        xi_e = fields_on_grid(convolve(lam, k), rep.sol_eps)
        L.append(lambda_eps(xi, xi_e, k, lam, 2.0))
        res.append(recover_translation(displacement_from_solution(rep.sol))[1])
    L, res = np.array(L), np.array(res)
    rho = float(stats.spearmanr(L, res).statistic) if len(L) > 2 else math.nan
    return TwoPointGaussReport(np.asarray(magnitudes, dtype=float), L, res, rho)


def quantile_map_lipschitz(lam: GridMeasure, mu: GridMeasure, cut: float = 1e-9) -> float:
    """Max difference quotient of the monotone map between the piecewise-constant 1D densities.

    The map F_mu^{-1}(F_lam(x)) is evaluated on the cell edges of lam;
    edges with F_lam outside [cut, 1 - cut] are skipped.
    """
    if lam.n != 1 or mu.n != 1:
        raise OtlabError("bad-dimension", "quantile maps are one-dimensional")
    def edges_cdf(m):
        ax = m.spec.axes()[0]
        e = np.concatenate([ax - 0.5 * m.h, [ax[-1] + 0.5 * m.h]])
        F = np.concatenate([[0.0], np.cumsum(m.weights.ravel())]) / m.mass
        return e, F

    xe, Fl = edges_cdf(lam)
    ye, Fm = edges_cdf(mu)
    keep = np.concatenate([[True], np.diff(Fm) > 0])
    T = np.interp(Fl, Fm[keep], ye[keep])
    ok = (Fl >= cut) & (Fl <= 1 - cut)
    x, T = xe[ok], T[ok]
    return float(np.max(np.diff(T) / np.diff(x)))
