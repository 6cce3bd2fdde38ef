"""Constitutive functions, spline parameters, energy/mass, scaling."""

import numpy as np
import pytest
from scipy.interpolate import CubicSpline

from chident.meshbasis import build_mesh, cubic_spline_basis, interpolate, eval_field
from chident.model import (
    ModelError,
    NaturalSplineGrid,
    ParameterError,
    SplineParameter,
    assemble_param_gram,
    check_mobility,
    default_params,
    energy,
    mass,
    mobility_floor,
    param_grid,
    scale_params,
)


def test_default_potential_values():
    params = default_params(0.003)
    # F(s) = (s - 0.99)^2 (s + 0.99)^4
    assert params.F(0.0) == pytest.approx(0.99**6, rel=1e-14)
    assert params.F(0.99) == pytest.approx(0.0, abs=1e-14)
    assert params.F(-0.99) == pytest.approx(0.0, abs=1e-14)
    # F'(0) = 2 * 0.99^5
    assert params.F(0.0, 1) == pytest.approx(2.0 * 0.99**5, rel=1e-13)
    # f(s, k) is the (k+1)-th derivative of the potential
    s = np.linspace(-0.9, 0.9, 7)
    assert np.allclose(params.f(s, 0), params.F(s, 1), atol=1e-14)
    assert np.allclose(params.f(s, 1), params.F(s, 2), atol=1e-14)


def test_default_mobility_values():
    params = default_params(0.003)
    # b(s) = (1 - s)^4 (1 + s)^2 + 0.2
    assert params.b(0.0) == pytest.approx(1.2, rel=1e-14)
    assert params.b(1.0) == pytest.approx(0.2, rel=1e-14)
    assert params.b(-1.0) == pytest.approx(0.2, rel=1e-14)
    assert params.b(0.5) == pytest.approx(0.5**4 * 1.5**2 + 0.2, rel=1e-14)
    assert mobility_floor(params.b) == pytest.approx(0.2, rel=1e-6)
    assert check_mobility(params.b) > 0.19


@pytest.mark.parametrize("which", ["F", "b"])
def test_closed_form_derivatives_consistent(which):
    params = default_params(0.003)
    p = getattr(params, which)
    s = np.linspace(-0.8, 0.8, 9)
    h = 1e-6
    fd1 = (p(s + h) - p(s - h)) / (2 * h)
    assert np.max(np.abs(fd1 - p(s, 1))) < 1e-6 * max(1.0, np.max(np.abs(fd1)))
    fd2 = (p(s + h, 1) - p(s - h, 1)) / (2 * h)
    assert np.max(np.abs(fd2 - p(s, 2))) < 1e-5 * max(1.0, np.max(np.abs(fd2)))


def test_natural_spline_grid_matches_reference():
    grid = NaturalSplineGrid(-1.0, 1.0, 0.25)
    assert grid.n_knots == 9
    rng = np.random.default_rng(3)
    vals = rng.standard_normal(grid.n_knots)
    ref = CubicSpline(grid.knots, vals, bc_type="natural")
    s = np.linspace(-1.0, 1.0, 157)
    for order in (0, 1, 2):
        ours = grid.eval_matrix(s, order) @ vals
        assert np.max(np.abs(ours - ref(s, order))) < 1e-10


def test_natural_spline_reproduces_linears():
    grid = param_grid()  # [-1, 1] at spacing 0.1
    assert grid.n_knots == 21
    s = np.linspace(-1.0, 1.0, 101)
    line = SplineParameter(grid, 2.0 * grid.knots + 0.5)
    assert np.max(np.abs(line(s) - (2.0 * s + 0.5))) < 1e-12
    assert np.max(np.abs(line(s, 1) - 2.0)) < 1e-10
    # partition of unity in the evaluation matrix
    e0 = grid.eval_matrix(s, 0)
    assert np.allclose(np.asarray(e0).sum(axis=1), 1.0, atol=1e-12)


def test_spline_parameter_validation():
    grid = param_grid()
    with pytest.raises(ParameterError):
        SplineParameter(grid, np.ones(5))


def test_mass_and_energy_of_constant():
    basis = cubic_spline_basis(build_mesh(32))
    params = default_params(0.003)
    c = 0.3
    phi = interpolate(basis, lambda x: np.full_like(x, c))
    assert mass(phi) == pytest.approx(c, abs=1e-14)
    # gradient term vanishes, so the energy is just F(c)
    assert energy(phi, params) == pytest.approx(params.F(c), rel=1e-12)


def test_mass_of_profile():
    basis = cubic_spline_basis(build_mesh(200))
    from chident.model import default_initial_profile

    phi = interpolate(basis, default_initial_profile)
    assert mass(phi) == pytest.approx(0.1, abs=1e-10)


def test_scale_params_relations():
    params = default_params(0.003)
    d, c = 2.0, 1.0
    scaled = scale_params(params, d, c)
    s = np.linspace(-0.9, 0.9, 11)
    assert scaled.gamma == pytest.approx(params.gamma / d, rel=1e-14)
    assert np.allclose(scaled.b(s), d * params.b(s), rtol=1e-13)
    assert np.allclose(scaled.F(s, 1), params.F(s, 1) / d + c, rtol=1e-13)
    assert np.allclose(scaled.F(s, 2), params.F(s, 2) / d, rtol=1e-13)
    with pytest.raises(ModelError):
        scale_params(params, 0.0)


def test_scale_params_spline_branch():
    grid = param_grid()
    params = default_params(0.003)
    b_spline = SplineParameter(grid, params.b(grid.knots), name="b")
    from chident.model import ModelParams

    p2 = ModelParams(gamma=0.003, b=b_spline, F=params.F)
    scaled = scale_params(p2, 2.0, 1.0)
    s = np.linspace(-1.0, 1.0, 41)
    assert np.allclose(scaled.b(s), 2.0 * b_spline(s), rtol=1e-12)


def test_check_mobility_rejects_sign_change():
    grid = param_grid()
    bad = SplineParameter(grid, grid.knots.copy(), name="b")  # b(s) = s
    with pytest.raises(ModelError):
        check_mobility(bad)


def test_param_gram_is_spd_h2():
    grid = NaturalSplineGrid(-1.0, 1.0, 0.25)
    reg = assemble_param_gram(grid)
    r = reg.R
    assert np.allclose(r, r.T, atol=1e-12)
    w = np.linalg.eigvalsh(r)
    assert w.min() > 0.0
    rng = np.random.default_rng(5)
    v = rng.standard_normal(grid.n_knots)
    assert np.allclose(reg.solve(reg.apply(v)), v, atol=1e-9)
    assert reg.norm(v) == pytest.approx(np.sqrt(v @ (r @ v)), rel=1e-12)
    # the squared-H2 norm of a linear function has no curvature part:
    # it must equal the L2 + H1 pieces alone, computed on [-1, 1]
    line = 2.0 * grid.knots + 0.5
    # integral of (2s + 0.5)^2 over [-1, 1] = 8/3 + 0.5; of 2^2 = 8
    expect = 8.0 / 3.0 + 0.5 + 8.0
    assert line @ (r @ line) == pytest.approx(expect, rel=1e-10)
