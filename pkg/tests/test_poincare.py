import numpy as np
import pytest

from landau_lab.coefficients import build_coefficients
from landau_lab.errors import IterationError, NonNegativityError
from landau_lab.grid import ScalarField, counterexample_profile, make_grid, maxwellian
from landau_lab.poincare import (
    dense_top_eigenvalue,
    gks_check,
    lambda_curve,
    lambda_f,
    verify_eps_poincare,
    verify_weighted_sobolev,
)


@pytest.fixture(scope="module")
def grid12():
    return make_grid(3, 6.0, 12)


@pytest.fixture(scope="module")
def bundle12(grid12):
    return build_coefficients(maxwellian(grid12), -1.0)


def test_lambda_of_zero_density(grid12):
    zero = ScalarField(grid12, np.zeros(grid12.shape))
    assert lambda_f(zero, gamma=-1.0, epsilon=0.5) == 0.0


def test_lambda_monotone_in_epsilon(bundle12):
    curve = lambda_curve(bundle12, epsilons=[1e-3, 1e-2, 1e-1, 1.0], tol=1e-8)
    lams = curve.lambdas
    assert all(lams[i] >= lams[i + 1] - 1e-10 for i in range(len(lams) - 1))
    assert min(lams) > -1e-8


def test_lambda_scaling_in_density(grid12, bundle12):
    c = 3.7
    f2 = ScalarField(grid12, c * bundle12.f.values)
    b2 = build_coefficients(f2, -1.0)
    for eps in (0.01, 0.3):
        l1 = lambda_f(bundle12, epsilon=eps, tol=1e-10)
        l2 = lambda_f(b2, epsilon=eps, tol=1e-10)
        assert l2 == pytest.approx(c * l1, rel=1e-7)


def test_lambda_matches_dense_oracle(bundle12):
    for eps in (0.01, 0.3):
        lam = lambda_f(bundle12, epsilon=eps, tol=1e-10)
        dense = dense_top_eigenvalue(bundle12, eps)
        assert lam == pytest.approx(dense, rel=1e-6)


def test_lambda_refinement_stability():
    vals = []
    for n in (12, 24):
        g = make_grid(3, 6.0, n)
        b = build_coefficients(maxwellian(g), -1.0)
        vals.append(lambda_f(b, epsilon=0.1))
    assert abs(vals[1] - vals[0]) / vals[1] < 0.05


def test_lambda_iteration_cap(bundle12):
    with pytest.raises(IterationError):
        lambda_f(bundle12, epsilon=0.3, maxiter=1, tol=1e-14)


def test_verify_eps_poincare_structure(grid12):
    M = maxwellian(grid12)
    with pytest.raises(ValueError):
        verify_eps_poincare(M, -1.0, epsilons=[0.1, 0.5])
    rep = verify_eps_poincare(M, 0.0, epsilons=np.logspace(-3, 0, 5))
    assert rep["predicted_slope"] == 0.0
    assert -0.15 <= rep["slope"] <= 0.05
    assert rep["lambda_max"] <= 1.0 + 1e-6  # gamma = 0 reaction is the mass
    assert len(rep["weighted_curve"].lambdas) == 5


def test_verify_eps_poincare_slope_invariant_under_scaling(grid12):
    M = maxwellian(grid12)
    f2 = ScalarField(grid12, 2.5 * M.values)
    eps = np.logspace(-3, 0, 5)
    r1 = verify_eps_poincare(M, -1.0, epsilons=eps)
    r2 = verify_eps_poincare(f2, -1.0, epsilons=eps)
    assert r1["slope"] == pytest.approx(r2["slope"], abs=1e-4)


def test_counterexample_lambda_floor(grid12):
    f = counterexample_profile(grid12, 2.9)
    rep = verify_eps_poincare(f, -3.0, epsilons=np.logspace(-3, 0, 5))
    assert rep["predicted_slope"] is None
    assert rep["lambda_floor"] > 0.1 * rep["lambda_max"]  # no decay to zero


def test_weighted_sobolev_reports(grid12):
    M = maxwellian(grid12)
    rep = verify_weighted_sobolev(M, -1.0, trials=8, seed=2)
    assert rep["exponent_m"] == pytest.approx(3.0)
    assert 0 < rep["stationary_constant"] < 10.0
    assert 0 < rep["space_time_constant"] < 10.0
    rep3 = verify_weighted_sobolev(M, -3.0, trials=4, seed=2, m_coulomb=2.0)
    assert rep3["exponent_m"] == 2.0
    assert "doubling_constant" in rep3
    assert np.isfinite(rep3["stationary_constant"])


def test_gks_basics(grid12):
    zero = ScalarField(grid12, np.zeros(grid12.shape))
    rep = gks_check(zero, 1.0)
    assert rep["degenerate"] and np.isnan(rep["ratio"])
    with pytest.raises(NonNegativityError):
        gks_check(ScalarField(grid12, -np.ones(grid12.shape)), 1.0)
    with pytest.raises(ValueError):
        gks_check(maxwellian(grid12), 0.0)


def test_gks_constant_p1():
    # at p = 1 the prefactor is ((p+1)/p)^2 = 4 and the inequality is the
    # entropy-production sign: check the assembled rhs uses exactly 4x
    g = make_grid(3, 6.0, 12)
    M = maxwellian(g)
    b = build_coefficients(M, -3.0)
    from landau_lab.operators import energy_form

    rep = gks_check(M, 1.0, b)
    energy = energy_form(b.A, np.sqrt(M.values))
    assert rep["rhs"] == pytest.approx(4.0 * energy, rel=1e-12)


def test_gks_ratio_decreases_with_resolution():
    ratios = []
    for n in (16, 24, 32):
        g = make_grid(3, 8.0, n)
        M = maxwellian(g)
        ratios.append(gks_check(M, 2.0)["ratio"])
    assert ratios[0] > ratios[1] > ratios[2]
    assert ratios[2] < 1.15


def test_lambda_curve_serialization(tmp_path, bundle12):
    from landau_lab.poincare import lambda_curve

    curve = lambda_curve(bundle12, epsilons=[0.01, 0.1, 1.0], tol=1e-6)
    curve.to_csv(tmp_path / "lc.csv")
    lines = (tmp_path / "lc.csv").read_text().splitlines()
    assert lines[0] == "epsilon,lambda,iterations,residual"
    assert len(lines) == 4
    man = curve.manifest()
    assert man["gamma"] == -1.0 and len(man["lambdas"]) == 3
