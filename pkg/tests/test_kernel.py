import math
import numpy as np
import pytest
from scipy import integrate
from conftest import scalar_kernel, rotation_kernel
from kernel import (KernelModel, AdmissibilityError, PoleError, TransformDomainError, eval_kernel, laplace_transform,
        laplace_derivative, shifted_transform, tail, check_admissibility, cubic_functional, zero_nonlinearity, nonlinearities)
from phasespace import Grid, check_nonlinearity

def test_transform_of_exponential():
    kernel = scalar_kernel()
    assert laplace_transform(kernel, 0.0)[0, 0] == pytest.approx(1.0, abs = 1e-14)
    assert abs(laplace_transform(kernel, 1e6)[0, 0]) < 1e-5
    assert laplace_transform(scalar_kernel(nu = 2.0), 1.0)[0, 0] == pytest.approx(1.0, abs = 1e-14)

def test_transform_matches_quadrature(rng):
    kernel = KernelModel(2, [(np.array([[1.0, 0.5], [0.0, 2.0]]), 0, 1.0), (np.array([[0.3, 0.0], [1.0, 0.2]]), 2, 2.0 + 1.0j)], 0.5)
    t = np.linspace(0.0, 80.0, 400001)

    for _ in range(10):
        lam = complex(rng.uniform(-0.4, 2.0), rng.uniform(-3.0, 3.0))
        samples = np.stack([np.exp(-a * t)[:, None, None] * t[:, None, None] ** p * c for c, p, a in kernel.terms]).sum(axis = 0)
        integrand = samples * np.exp(-lam * t)[:, None, None]
        expected = integrate.trapezoid(integrand, t, axis = 0)
        assert np.max(np.abs(laplace_transform(kernel, lam) - expected)) < 1e-6

def test_transform_domain_and_poles():
    with pytest.raises(TransformDomainError):
        laplace_transform(scalar_kernel(), -0.6)

    # rho = 2 puts the pole at -1 inside the half plane
    with pytest.raises(PoleError):
        laplace_transform(KernelModel(1, [(1.0, 0, 1.0)], 2.0), -1.0)

def test_derivative_matches_difference_quotient():
    kernel = rotation_kernel()
    lam = 0.3 + 0.7j
    step = 1e-6
    quotient = (laplace_transform(kernel, lam + step) - laplace_transform(kernel, lam - step)) / (2.0 * step)
    assert np.max(np.abs(laplace_derivative(kernel, lam) - quotient)) < 1e-7

def test_eval_kernel_examples():
    assert eval_kernel(scalar_kernel(), 0.0)[0, 0] == pytest.approx(1.0)
    assert eval_kernel(scalar_kernel(), math.log(2.0))[0, 0] == pytest.approx(0.5)
    assert eval_kernel(scalar_kernel(power = 1, rate = 2.0), 1.0)[0, 0].real == pytest.approx(0.135335, abs = 1e-6)

    with pytest.raises(ValueError):
        eval_kernel(scalar_kernel(), -1.0)

def test_admissibility_norms():
    norm_1, norm_inf = check_admissibility(scalar_kernel())
    assert norm_1 == pytest.approx(2.0, abs = 1e-8)
    assert norm_inf == pytest.approx(1.0, abs = 1e-6)

    with pytest.raises(AdmissibilityError):
        check_admissibility(scalar_kernel(rate = 0.5))

def test_constructor_rejects_bad_terms():
    with pytest.raises(ValueError):
        KernelModel(2, [(np.ones((3, 3)), 0, 1.0)], 0.5)

    with pytest.raises(ValueError):
        KernelModel(1, [(1.0, -1, 1.0)], 0.5)

    with pytest.raises(ValueError):
        KernelModel(1, [(1.0, 0, 1.0)], 0.0)

def test_tail_is_closed_form_integral():
    kernel = scalar_kernel(power = 2, rate = 1.5)
    remainder = tail(kernel)

    for t in (0.0, 0.7, 3.0):
        s = np.linspace(t, t + 60.0, 600001)
        expected = integrate.trapezoid(s ** 2 * np.exp(-1.5 * s), s)
        assert eval_kernel(remainder, t)[0, 0].real == pytest.approx(expected, rel = 1e-7)

def test_shifted_transform_matches_quadrature():
    kernel = scalar_kernel(power = 1, rate = 1.0)
    lam = 0.2 - 0.5j
    v = np.linspace(0.0, 80.0, 400001)

    for s, value in zip((0.0, 1.5), shifted_transform(kernel, lam, [0.0, 1.5])):
        expected = integrate.trapezoid((s + v) * np.exp(-(s + v)) * np.exp(-lam * v), v)
        assert value[0, 0] == pytest.approx(expected, abs = 1e-7)

    assert shifted_transform(kernel, lam, [0.0])[0] == pytest.approx(laplace_transform(kernel, lam))

def test_cubic_functional_on_constants():
    kernel = scalar_kernel()
    grid = Grid(0.05, 0.5, 40.0)
    f = cubic_functional(kernel, {"eps_cubic": 2.0})
    check_nonlinearity(f, grid, 1)

    # l(c 1) = c int_0^40 exp(-u) du
    for c in (0.1, -0.3):
        assert f(grid.constant(c))[0].real == pytest.approx(2.0 * c ** 3, rel = 1e-6)

def test_cubic_derivative_agrees_with_differences(rng):
    kernel = scalar_kernel()
    grid = Grid(0.1, 0.5, 40.0)
    analytic = cubic_functional(kernel, {"eps_cubic": -1.0, "g_coeff": 0.5})
    numeric = cubic_functional(kernel, {"eps_cubic": -1.0, "g_coeff": 0.5, "analytic_derivative": "false"})
    phi = grid.constant(0.2)
    direction = grid.from_function(lambda theta: np.cos(theta) * np.exp(0.1 * theta)).values

    assert analytic.analytic and not numeric.analytic
    assert analytic.directional(phi, direction) == pytest.approx(numeric.directional(phi, direction), rel = 1e-6)

def test_nonlinearity_registry():
    assert set(nonlinearities) == {"zero", "cubic_functional"}
    f = zero_nonlinearity(scalar_kernel(), {})
    grid = Grid(0.5, 0.5, 40.0)
    assert f.form_tag == "zero"
    assert np.all(f(grid.constant(1.0)) == 0.0)
