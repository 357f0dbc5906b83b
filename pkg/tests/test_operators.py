import numpy as np
import pytest

from landau_lab.coefficients import MatrixField
from landau_lab.grid import make_grid
from landau_lab.operators import (
    DiffusionOperator,
    boundary_drift_flux,
    centered_gradient,
    drift_divergence,
    second_derivatives,
    smoothstep_cutoff,
)


def _smooth_setup(n):
    g = make_grid(3, 1.0, n)
    X, Y, Z = [np.broadcast_to(c, g.shape) for c in g.coords()]
    comps = np.stack(
        [
            2.0 + np.sin(X) * np.cos(Y),
            0.3 * np.sin(X + Y),
            0.2 * np.cos(Z),
            2.0 + 0.5 * np.cos(Y + Z),
            0.25 * np.sin(Y * Z),
            2.0 + 0.4 * np.sin(Z),
        ]
    )
    phi = np.cos(np.pi * X / 2) * np.cos(np.pi * Y / 2) * np.cos(np.pi * Z / 2) * np.exp(0.3 * X)
    return g, MatrixField(g, comps), phi


def test_diffusion_operator_symmetric_nsd_conservative(rng):
    g, A, _ = _smooth_setup(12)
    L = DiffusionOperator(A, bc="flux")
    x = rng.normal(size=g.shape)
    y = rng.normal(size=g.shape)
    assert abs(np.sum(L.apply(x))) < 1e-9 * np.max(np.abs(x))  # node sum preserved
    assert abs(np.sum(y * L.apply(x)) - np.sum(x * L.apply(y))) < 1e-8
    assert np.sum(x * L.apply(x)) <= 0
    LD = DiffusionOperator(A, bc="dirichlet")
    assert abs(np.sum(y * LD.apply(x)) - np.sum(x * LD.apply(y))) < 1e-8
    assert np.sum(x * LD.apply(x)) <= 0


def test_diffusion_operator_second_order():
    import math

    errs = []
    for n in (16, 32):
        g, A, phi = _smooth_setup(n)
        L = DiffusionOperator(A, bc="flux")
        out = L.apply(phi)
        # reference by fine finite differences of the analytic flux
        h = 1e-5
        X, Y, Z = [np.broadcast_to(c, g.shape).copy() for c in g.coords()]

        def phif(X, Y, Z):
            return (
                np.cos(np.pi * X / 2)
                * np.cos(np.pi * Y / 2)
                * np.cos(np.pi * Z / 2)
                * np.exp(0.3 * X)
            )

        def afun(X, Y, Z):
            return [
                2.0 + np.sin(X) * np.cos(Y),
                0.3 * np.sin(X + Y),
                0.2 * np.cos(Z),
                2.0 + 0.5 * np.cos(Y + Z),
                0.25 * np.sin(Y * Z),
                2.0 + 0.4 * np.sin(Z),
            ]

        pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]
        steps = [(h, 0, 0), (0, h, 0), (0, 0, h)]

        def flux(i, X, Y, Z):
            comp = {}
            for k, (a, b) in enumerate(pairs):
                comp[(a, b)] = comp[(b, a)] = afun(X, Y, Z)[k]
            tot = 0
            for j, (dX, dY, dZ) in enumerate(steps):
                dphi = (phif(X + dX, Y + dY, Z + dZ) - phif(X - dX, Y - dY, Z - dZ)) / (2 * h)
                tot = tot + comp[(i, j)] * dphi
            return tot

        ref = 0
        for i, (dX, dY, dZ) in enumerate(steps):
            ref = ref + (flux(i, X + dX, Y + dY, Z + dZ) - flux(i, X - dX, Y - dY, Z - dZ)) / (2 * h)
        core = (slice(2, -2),) * 3
        errs.append(np.max(np.abs(out[core] - ref[core])))
    order = math.log(errs[0] / errs[1]) / math.log(2)
    assert order > 1.8


def test_diagonal_matches_operator(rng):
    g, A, _ = _smooth_setup(8)
    for bc in ("flux", "dirichlet"):
        L = DiffusionOperator(A, bc=bc)
        d = L.diagonal()
        for idx in [(0, 0, 0), (3, 5, 2), (7, 7, 7)]:
            e = np.zeros(g.shape)
            e[idx] = 1.0
            assert L.apply(e)[idx] == pytest.approx(d[idx], rel=1e-12, abs=1e-12)


def test_quadratic_form_matches_operator(rng):
    g, A, _ = _smooth_setup(8)
    L = DiffusionOperator(A, bc="flux")
    x = rng.normal(size=g.shape)
    assert L.quadratic_form(x) == pytest.approx(-np.sum(x * L.apply(x)) * g.spacing**3, rel=1e-12)


def test_cell_weight_scales_form(rng):
    g, A, _ = _smooth_setup(8)
    w = np.full((7, 7, 7), 2.0)
    L1 = DiffusionOperator(A, bc="flux")
    L2 = DiffusionOperator(A, bc="flux", cell_weight=w)
    x = rng.normal(size=g.shape)
    assert np.allclose(L2.apply(x), 2.0 * L1.apply(x))


def test_drift_divergence_conservative_and_consistent(rng):
    g = make_grid(3, 1.0, 16)
    X, Y, Z = [np.broadcast_to(c, g.shape).copy() for c in g.coords()]
    f = np.exp(-(X**2 + Y**2 + Z**2))
    b = [np.sin(X), Y**2, np.cos(Z)]
    for mean in ("geometric", "arithmetic"):
        dd = drift_divergence(f, b, g.spacing, face_mean=mean)
        assert abs(np.sum(dd)) < 1e-12 * np.max(np.abs(dd))
    # consistency against the analytic divergence
    exact = (
        np.cos(X) * f + np.sin(X) * (-2 * X * f)
        + 2 * Y * f + Y**2 * (-2 * Y * f)
        + -np.sin(Z) * f + np.cos(Z) * (-2 * Z * f)
    )
    dd = drift_divergence(f, b, g.spacing)
    core = (slice(2, -2),) * 3
    assert np.max(np.abs(dd[core] - exact[core])) < 0.02 * np.max(np.abs(exact))


def test_boundary_drift_flux_nonnegative(rng):
    g = make_grid(3, 1.0, 8)
    f = np.abs(rng.normal(size=g.shape))
    b = [rng.normal(size=g.shape) for _ in range(3)]
    assert boundary_drift_flux(f, b, g.spacing) >= 0


def test_second_derivatives_consistency():
    g = make_grid(3, 1.0, 24)
    X, Y, Z = [np.broadcast_to(c, g.shape) for c in g.coords()]
    f = np.sin(X) * np.cos(Y) * np.exp(0.2 * Z)
    d2 = second_derivatives(f, g.spacing)
    core = (slice(2, -2),) * 3
    exact_xx = -f
    exact_xy = -np.cos(X) * np.sin(Y) * np.exp(0.2 * Z) * -1.0
    assert np.max(np.abs(d2[(0, 0)][core] - exact_xx[core])) < 5e-3
    exact_xy = np.cos(X) * (-np.sin(Y)) * np.exp(0.2 * Z)
    assert np.max(np.abs(d2[(0, 1)][core] - exact_xy[core])) < 5e-3


def test_centered_gradient_consistency():
    g = make_grid(3, 1.0, 24)
    X, _, _ = [np.broadcast_to(c, g.shape) for c in g.coords()]
    f = np.sin(2 * X)
    gx = centered_gradient(f, g.spacing)[0]
    core = (slice(1, -1),) * 3
    err = np.max(np.abs(gx[core] - 2 * np.cos(2 * X)[core]))
    assert err < 1.1 * (2.0**3 * g.spacing**2 / 6.0)  # centered-difference bound


def test_smoothstep_cutoff_bounds():
    g = make_grid(3, 8.0, 32)
    eta = smoothstep_cutoff(g, 2.0, 4.0)
    r = g.radius()
    assert np.all(eta.values[r <= 2.0] == 1.0)
    assert np.all(eta.values[r >= 4.0] == 0.0)
    grad = centered_gradient(eta.values, g.spacing)
    gmax = max(np.max(np.abs(gg)) for gg in grad)
    assert gmax <= 1.875 / 2.0 + 0.05  # quintic smoothstep slope bound
    with pytest.raises(ValueError):
        smoothstep_cutoff(g, 4.0, 2.0)
