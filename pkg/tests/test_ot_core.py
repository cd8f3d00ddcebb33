import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import rng
from otlab.errors import OtlabError
from otlab.measures import DiscreteMeasure, GridMeasure, GridSpec, point_mass, uniform_box
from otlab.ot_core import (
    CostConvention,
    TransportSolution,
    barycentric_displacement,
    c_transform,
    displacement_from_solution,
    gradient_field,
    kantorovich_value,
    lipschitz_bound,
    phi_p,
    solve_discrete,
    wp_1d,
)


def perm_oracle(x, y, conv):
    # uniform weights: the optimum is attained at a permutation
    C = conv.matrix(x, y)
    n = len(x)
    best = min(sum(C[i, s[i]] for i in range(n)) for s in itertools.permutations(range(n)))
    return best / n


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 3.0])
@pytest.mark.parametrize("seed", range(4))
def test_network_simplex_matches_permutation_oracle(p, seed):
    g = rng(seed)
    n = 3 + seed + (seed > 1) * 2  # 3, 4, 7, 8
    x, y = g.uniform(size=(n, 2)), g.uniform(size=(n, 2))
    conv = CostConvention(p, "standard")
    sol = solve_discrete(DiscreteMeasure(x, np.ones(n) / n), DiscreteMeasure(y, np.ones(n) / n), conv)
    assert sol.cost == pytest.approx(perm_oracle(x, y, conv), rel=1e-10, abs=1e-14)


@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 6))
def test_quantile_matches_permutation_oracle(seed, n):
    g = rng(seed)
    x, y = g.normal(size=(n, 1)), g.normal(size=(n, 1))
    conv = CostConvention(2.0, "paper")
    sol = solve_discrete(DiscreteMeasure(x, np.ones(n) / n), DiscreteMeasure(y, np.ones(n) / n), conv, "quantile")
    assert sol.cost == pytest.approx(perm_oracle(x, y, conv), rel=1e-10, abs=1e-14)


def test_point_mass_and_interval_examples():
    conv = CostConvention(2.0, "standard")
    sol = solve_discrete(point_mass([0.0]), point_mass([1.0]), conv)
    assert sol.cost == pytest.approx(1.0)
    assert sol.gap == pytest.approx(0.0, abs=1e-12)
    spec = GridSpec.box([0.0], [2.0], 1e-3)
    lam, mu = uniform_box(spec, 0, 1), uniform_box(spec, 1, 2)
    assert wp_1d(lam, mu, CostConvention(1.0, "standard"), "atoms") == pytest.approx(1.0, abs=1e-9)
    assert wp_1d(lam, mu, CostConvention(2.0, "standard"), "atoms") == pytest.approx(1.0, abs=1e-9)


def test_scale_convention():
    x = DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5])
    y = DiscreteMeasure([[2.0], [3.0]], [0.5, 0.5])
    for p in (1.0, 2.0, 3.0):
        a = solve_discrete(x, y, CostConvention(p, "paper")).cost
        b = solve_discrete(x, y, CostConvention(p, "standard")).cost
        assert a == pytest.approx(b / p, rel=1e-12)


def test_density_mode_closed_form():
    # unif(0,1) vs unif(0,2): T(x) = 2x, W_2^2 = int_0^1 x^2 = 1/3
    spec = GridSpec.box([0.0], [2.0], 0.1)
    a = uniform_box(spec, 0, 1)
    b = uniform_box(spec, 0, 2)
    assert wp_1d(a, b, CostConvention(2.0, "standard"), "density") == pytest.approx(1 / 3, rel=1e-12)
    assert wp_1d(a, b, CostConvention(1.0, "standard"), "density") == pytest.approx(0.5, rel=1e-12)
    assert wp_1d(a, b, CostConvention(3.0, "standard"), "density") == pytest.approx(0.25, rel=1e-12)


@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([1.0, 2.0]), st.sampled_from(["paper", "standard"]))
def test_solution_invariants(seed, p, scale):
    g = rng(seed)
    na, nb = g.integers(2, 15, size=2)
    a = DiscreteMeasure(g.uniform(size=(na, 2)), g.uniform(0.1, 1, na))
    b = DiscreteMeasure(g.uniform(size=(nb, 2)), g.uniform(0.1, 1, nb))
    b = DiscreteMeasure(b.points, b.weights * a.mass / b.mass)
    conv = CostConvention(p, scale)
    sol = solve_discrete(a, b, conv)
    ma, mb = sol.marginals()
    assert np.allclose(ma, a.weights, atol=1e-12)
    assert np.allclose(mb, b.weights, atol=1e-12)
    assert sol.max_infeasibility() <= 1e-9
    assert abs(sol.gap) <= 1e-9 * (1 + sol.cost)
    # the dual value does not depend on the c-transform route
    assert kantorovich_value(sol.psi, a, b, conv) == pytest.approx(sol.dual_value, abs=1e-10)
    # plan cost dominates the dual for a random admissible pair
    psi = g.normal(size=nb)
    assert kantorovich_value(psi, a, b, conv) <= sol.cost + 1e-10


@given(st.integers(0, 2 ** 32 - 1))
def test_quantile_and_simplex_agree(seed):
    g = rng(seed)
    n = int(g.integers(3, 30))
    a = DiscreteMeasure(g.normal(size=(n, 1)), g.uniform(0.1, 1, n))
    b = DiscreteMeasure(g.normal(size=(n + 3, 1)) + 1, g.uniform(0.1, 1, n + 3))
    b = DiscreteMeasure(b.points, b.weights * a.mass / b.mass)
    for p in (1.0, 2.0):
        conv = CostConvention(p, "standard")
        s1 = solve_discrete(a, b, conv, "quantile")
        s2 = solve_discrete(a, b, conv, "network_simplex")
        assert s1.cost == pytest.approx(s2.cost, rel=1e-9, abs=1e-12)
        assert abs(s1.gap) <= 1e-9 * (1 + s1.cost)


def test_mass_and_dimension_errors():
    with pytest.raises(OtlabError) as e:
        solve_discrete(point_mass([0.0]), DiscreteMeasure([[1.0]], [2.0]), CostConvention())
    assert e.value.code == "mass-mismatch"
    with pytest.raises(OtlabError) as e:
        solve_discrete(point_mass([0.0]), point_mass([0.0, 1.0]), CostConvention())
    assert e.value.code == "dimension-mismatch"
    with pytest.raises(OtlabError) as e:
        CostConvention(0.5)
    assert e.value.code == "bad-cost"
    with pytest.raises(OtlabError) as e:
        solve_discrete(point_mass([0.0, 0.0]), point_mass([1.0, 0.0]), CostConvention(), "quantile")
    assert e.value.code == "bad-method"


def test_problem_too_large():
    a = DiscreteMeasure(np.zeros((50, 2)) + np.arange(50)[:, None], np.ones(50))
    with pytest.raises(OtlabError) as e:
        solve_discrete(a, a, CostConvention(), budget=100)
    assert e.value.code == "problem-too-large"


def test_c_transform_tie_break():
    y = np.array([[-1.0], [1.0]])
    conv = CostConvention(2.0)
    v, arg = c_transform(np.zeros(2), y, np.array([[0.0]]), conv)
    assert v[0] == pytest.approx(0.5) and arg[0] == 0
    v, arg = c_transform(np.zeros(2), y, np.array([[0.0]]), conv, prefer=[1])
    assert arg[0] == 1
    with pytest.raises(OtlabError):
        c_transform(np.array([0.0, np.nan]), y, np.array([[0.0]]), conv)


@given(st.integers(0, 2 ** 32 - 1))
def test_c_transform_is_c_concave(seed):
    # psi^{ccc} = psi^c
    g = rng(seed)
    x, y = g.uniform(size=(12, 2)), g.uniform(size=(9, 2))
    conv = CostConvention(2.0)
    psi = g.normal(size=9)
    u, _ = c_transform(psi, y, x, conv)
    v, _ = c_transform(u, x, y, conv)
    u2, _ = c_transform(v, y, x, conv)
    assert np.allclose(u, u2, atol=1e-12)
    assert np.all(v >= psi - 1e-12)


def test_p1_potential_is_lipschitz():
    g = rng(3)
    a = DiscreteMeasure(g.uniform(size=(30, 2)), np.ones(30))
    b = DiscreteMeasure(g.uniform(size=(30, 2)) + 0.5, np.ones(30))
    sol = solve_discrete(a, b, CostConvention(1.0))
    assert lipschitz_bound(sol.psi, sol.targets) <= 1 + 1e-9
    assert lipschitz_bound(sol.psic, sol.sources) <= 1 + 1e-9


def test_solution_roundtrip(tmp_path):
    g = rng(8)
    a = DiscreteMeasure(g.uniform(size=(6, 2)), np.ones(6))
    b = DiscreteMeasure(g.uniform(size=(4, 2)), np.ones(4) * 1.5)
    sol = solve_discrete(a, b, CostConvention(2.0, "standard"))
    sol.save(tmp_path / "s.txt")
    back = TransportSolution.load(tmp_path / "s.txt")
    assert np.array_equal(back.plan, sol.plan)
    assert np.array_equal(back.psi, sol.psi) and np.array_equal(back.psic, sol.psic)
    assert back.cost == sol.cost and back.conv == sol.conv


# ---------------------------------------------------------------------------
# displacement fields


def test_phi_p_inverts_conjugate():
    z = rng(1).normal(size=(20, 3))
    for p in (1.5, 2.0, 3.0):
        q = p / (p - 1)
        w = phi_p(z, p)
        back = np.linalg.norm(w, axis=1, keepdims=True) ** (p - 2) * w
        assert np.allclose(back, z, atol=1e-12)
        assert q > 1


def test_translate_field_p2():
    g = rng(2)
    x = g.uniform(size=(40, 2))
    z = np.array([0.3, -0.2])
    a = DiscreteMeasure(x, np.ones(40))
    b = DiscreteMeasure(x + z, np.ones(40))
    sol = solve_discrete(a, b, CostConvention(2.0))
    fld = displacement_from_solution(sol)
    assert np.allclose(fld.xi, -z, atol=1e-12)
    assert np.allclose(barycentric_displacement(sol), -z, atol=1e-12)


def test_p1_field_is_unit_and_flags_fixed_points():
    x = np.array([[0.0, 0.0], [1.0, 0.0]])
    fld = gradient_field(x, np.array([[0.0, 0.0], [0.0, 1.0]]), [0, 1], CostConvention(1.0))
    assert not fld.defined[0] and fld.defined[1]
    assert np.linalg.norm(fld.xi[1]) == pytest.approx(1.0)
    assert np.allclose(fld.grad_psi[1], -fld.xi[1])
    assert fld.undefined_mass == 1.0


def test_field_independent_of_scale():
    x = rng(4).uniform(size=(10, 2))
    y = rng(5).uniform(size=(10, 2))
    arg = np.arange(10)
    for p in (1.5, 3.0):
        f1 = gradient_field(x, y, arg, CostConvention(p, "paper"))
        f2 = gradient_field(x, y, arg, CostConvention(p, "standard"))
        assert np.array_equal(f1.xi, f2.xi)
        assert np.allclose(f1.xi, x - y, atol=1e-12)
