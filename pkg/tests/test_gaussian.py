import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from otlab.errors import OtlabError
from otlab.gaussian import (
    IsotropicGaussian,
    StabGaussReport,
    caffarelli_bound,
    delta_eps_gaussian_closed_form,
    discretize,
    gaussian_grid,
    gaussian_pair,
    heat_step,
    heat_time,
    log_concavity_step,
    quantile_map_lipschitz,
    stabgauss_experiment,
    twopoint_gauss_sweep,
    w2_gaussians,
)


def test_closed_form_example():
    g = delta_eps_gaussian_closed_form(2.0, 0.04)
    assert g.t == pytest.approx(0.2)
    assert g.sigma_eps == pytest.approx(math.sqrt(1.4))
    assert g.kappa_eps == pytest.approx(math.sqrt(4.4))
    f = 1 - 9 / (math.sqrt(1.4) + math.sqrt(4.4)) ** 2
    assert g.f == pytest.approx(f, rel=1e-14)
    assert g.delta == pytest.approx(f, rel=1e-12)
    assert g.delta == pytest.approx(0.1639, abs=1e-4)


@given(st.floats(0.25, 4.0), st.floats(1e-4, 1.0), st.integers(1, 3))
def test_closed_form_identity(kappa, eps, n):
    g = delta_eps_gaussian_closed_form(kappa, eps, n)
    assert g.delta == pytest.approx(g.f * n * (1 - kappa) ** 2, rel=1e-12, abs=1e-12)
    assert 0 <= g.f < 1
    assert g.delta >= -1e-15


def test_closed_form_equal_variances():
    assert delta_eps_gaussian_closed_form(1.0, 0.1).delta == 0.0


@given(st.floats(0.25, 4.0), st.floats(1e-4, 0.5), st.floats(1e-4, 0.5))
def test_closed_form_monotone_in_eps(kappa, e1, e2):
    e1, e2 = sorted((e1, e2))
    a = delta_eps_gaussian_closed_form(kappa, e1).delta
    b = delta_eps_gaussian_closed_form(kappa, e2).delta
    assert a <= b + 1e-14


def test_w2_and_heat_step():
    a = IsotropicGaussian(2, 1.0, (0.0, 0.0))
    b = IsotropicGaussian(2, 3.0, (3.0, 4.0))
    assert w2_gaussians(a, b) == pytest.approx(25 + 2 * 4)
    assert heat_step(a, 0.5).var == pytest.approx(2.0)
    assert heat_time(0.04) == pytest.approx(0.2)
    with pytest.raises(OtlabError):
        IsotropicGaussian(1, 0.0)
    with pytest.raises(OtlabError):
        w2_gaussians(a, IsotropicGaussian(1, 1.0))
    with pytest.raises(OtlabError):
        heat_step(a, -1.0)


def test_heat_step_matches_closed_form_variances():
    g = delta_eps_gaussian_closed_form(2.0, 0.04)
    assert heat_step(IsotropicGaussian(1, 1.0), g.t).s == pytest.approx(g.sigma_eps)
    assert heat_step(IsotropicGaussian(1, 2.0), g.t).s == pytest.approx(g.kappa_eps)
    assert log_concavity_step(4.0, g.t) == pytest.approx(g.kappa_eps ** 2)


def test_caffarelli_bound():
    assert caffarelli_bound(4.0, 1.0) == pytest.approx(2.0)
    assert caffarelli_bound(0.25, 1.0) == pytest.approx(0.5)
    with pytest.raises(OtlabError):
        caffarelli_bound(0.0, 1.0)


def test_discretize_exact_cells_and_truncation():
    spec = gaussian_grid(0.01, 8.0)
    m, trunc = discretize(IsotropicGaussian(1, 1.0), spec)
    assert 0 <= trunc < 1e-12
    assert m.mass == pytest.approx(1.0, abs=1e-14)
    assert float(m.weights.ravel() @ spec.centers()[:, 0] ** 2) == pytest.approx(1.0 + 1e-4 / 12, rel=1e-6)
    with pytest.raises(OtlabError) as e:
        discretize(IsotropicGaussian(1, 1.0), gaussian_grid(0.01, 3.0))
    assert e.value.code == "domain-too-small"
    m2, _ = discretize(IsotropicGaussian(2, 1.0, (0.1, -0.2)), gaussian_grid(0.05, 7.0, 2))
    assert np.allclose(m2.mean(), [0.1, -0.2], atol=1e-10)


def test_gaussian_pair_shift():
    lam, mu, trunc = gaussian_pair(2.0, 0.01, 8.0, shift=0.5)
    assert lam.spec == mu.spec
    assert mu.mean()[0] == pytest.approx(0.5, abs=1e-9)
    assert trunc < 1e-6


@pytest.mark.parametrize("kappa", [0.5, 2.0])
def test_pipeline_matches_closed_form(kappa):
    rep = stabgauss_experiment(kappa, 0.04, h=5e-3)
    assert rep.delta_numeric == pytest.approx(rep.delta_closed, rel=0.01)
    assert rep.w2min == pytest.approx(rep.w2min_closed, rel=0.01)
    assert len(rep.csv_row()) == len(StabGaussReport.csv_columns)


def test_pipeline_shift_and_translate():
    rep = stabgauss_experiment(2.0, 0.04, h=1e-2, shift=0.7)
    assert rep.delta_numeric == pytest.approx(rep.delta_closed, rel=0.01)
    rep = stabgauss_experiment(1.0, 0.04, h=1e-2, shift=0.7)
    assert abs(rep.delta_numeric) <= 1e-10
    with pytest.raises(OtlabError):
        stabgauss_experiment(8.0, 0.04)


@pytest.mark.parametrize("kappa", [0.5, 2.0])
def test_quantile_map_slope_near_bound(kappa):
    lam, mu, _ = gaussian_pair(kappa, 5e-3, 8.0)
    L = quantile_map_lipschitz(lam, mu)
    assert L == pytest.approx(caffarelli_bound(kappa ** 2, 1.0), rel=0.05)


def test_twopoint_sweep_rank_correlation():
    rep = twopoint_gauss_sweep(np.logspace(-2, -0.5, 5), h=2e-2)
    assert rep.spearman >= 0.9
    assert np.all(np.diff(rep.lam_eps) > 0)


def test_heat_convolution_matches_heat_step():
    from otlab.measures import Kernel, convolve

    lam, _, _ = gaussian_pair(1.0, 1e-2, 8.0)
    out = convolve(lam, Kernel("heat", 0.04))
    x = out.spec.centers()[:, 0]
    # second moment of the cell masses carries the h^2/12 quantization term
    var = float(out.weights.ravel() @ x ** 2) - 1e-4 / 12
    expected = heat_step(IsotropicGaussian(1, 1.0), heat_time(0.04)).var
    assert var == pytest.approx(expected, abs=1e-3)


@pytest.mark.parametrize("kappa", [0.5, 2.0, 4.0])
def test_prefactor_ratio_bounded_as_eps_vanishes(kappa):
    # delta / (t W_2^2) = f / t stays bounded as eps -> 0
    vals = []
    for eps in (1e-2, 1e-4, 1e-6, 1e-8):
        g = delta_eps_gaussian_closed_form(kappa, eps)
        vals.append(g.delta / (g.t * (1 - kappa) ** 2))
    assert max(vals) < 10 and min(vals) > 0
    assert vals[-1] == pytest.approx(vals[-2], rel=1e-2)
