import dataclasses
import math
import numpy as np
import pytest
from conftest import scalar_kernel
from kernel import cubic_functional
from phasespace import Grid, random_segment, solve_nonlinear
from spectral import find_characteristic_roots, spectral_gap_constants
from decomposition import decompose, estimate_decomposition_constants, project_su
from manifold import (chi, chi_prime, cutoff_apply, cutoff_directional, select_delta, WeightedPath, initial_center_path,
        contraction_step, solve_center_fixed_point, center_map, tangent_map, hyperbolic_map, ManifoldMap,
        sampled_lipschitz, attractivity_constants, attractivity_diagnostics, solution_check,
        FixedPointNonconvergenceError, HyperbolicityError, AttractivityHypothesisError, CHI_SLOPE)

def _coordinate(reduced, size):
    # center coordinate whose segment has norm size
    return np.array([size / reduced.basis.columns[0].norm()], dtype = complex)

def test_chi_profile():
    assert chi(0.0) == 1.0 and chi(2.0) == 1.0 and chi(3.0) == 0.0 and chi(7.0) == 0.0
    assert 0.0 < chi(2.5) < 1.0
    t = np.linspace(2.0, 3.0, 10001)
    assert np.max(np.abs(chi_prime(t))) == pytest.approx(CHI_SLOPE, rel = 1e-6)
    assert np.allclose(np.gradient(chi(t), t)[1:-1], chi_prime(t)[1:-1], atol = 1e-6)

def test_cutoff_regions(critical_cutoff, critical_reduced, stable_cubic, critical_grid):
    delta = critical_cutoff.delta
    column = critical_reduced.basis.columns[0]
    assert np.all(cutoff_apply(critical_cutoff, critical_reduced, stable_cubic, critical_grid.zeros(1)) == 0.0)

    far = column * (4.0 * delta / column.norm())
    assert np.all(cutoff_apply(critical_cutoff, critical_reduced, stable_cubic, far) == 0.0)

    near = column * (1.5 * delta / column.norm())
    assert cutoff_apply(critical_cutoff, critical_reduced, stable_cubic, near) == pytest.approx(stable_cubic.evaluate(near))

def test_cutoff_directional_matches_differences(critical_cutoff, critical_reduced, stable_cubic):
    column = critical_reduced.basis.columns[0]
    phi = column * (2.5 * critical_cutoff.delta / column.norm())
    direction = column.values / column.norm()
    step = 1e-7
    forward = cutoff_apply(critical_cutoff, critical_reduced, stable_cubic, phi.replace(phi.values + step * direction))
    backward = cutoff_apply(critical_cutoff, critical_reduced, stable_cubic, phi.replace(phi.values - step * direction))
    expected = (forward - backward) / (2.0 * step)
    assert cutoff_directional(critical_cutoff, critical_reduced, stable_cubic, phi, direction) == pytest.approx(expected, rel = 1e-4, abs = 1e-12)

def test_selected_delta_is_admissible(critical_cutoff):
    assert 0.0 < critical_cutoff.delta <= 0.05
    assert critical_cutoff.lipschitz <= 1.0
    assert critical_cutoff.smallness < 0.5
    assert critical_cutoff.bound_violations == 0
    assert critical_cutoff.tail_bound <= critical_cutoff.path_tail_tol * 1.0001

def test_zero_nonlinearity_keeps_ceiling(critical_reduced, critical_gap, zero_f):
    alpha, eps_gap = critical_gap
    cfg = select_delta({"C": 3.0, "C1": 2.0, "alpha": alpha, "eps_gap": eps_gap}, zero_f, critical_reduced, np.random.default_rng(1), samples = 6)
    assert cfg.delta == 0.05
    assert cfg.zeta == 0.0

def test_smaller_constants_never_shrink_delta(critical_reduced, critical_gap, critical_constants, stable_cubic):
    alpha, eps_gap = critical_gap
    results = []

    for scale in (1.0, 0.5):
        constants = {"C": scale * critical_constants.C, "C1": critical_constants.C1, "alpha": alpha, "eps_gap": eps_gap}
        results.append(select_delta(constants, stable_cubic, critical_reduced, np.random.default_rng(1234), samples = 12).delta)

    assert results[1] >= results[0]

def test_eta_must_lie_in_gap(critical_reduced, critical_gap, stable_cubic):
    alpha, eps_gap = critical_gap

    with pytest.raises(ValueError):
        select_delta({"C": 1.0, "C1": 1.0, "alpha": alpha, "eps_gap": eps_gap, "eta": alpha}, stable_cubic, critical_reduced, np.random.default_rng(1))

def test_contraction_step_trivial_paths(critical_cutoff, critical_reduced, stable_cubic):
    times = initial_center_path(critical_cutoff, critical_reduced, [0.0]).times
    zero = WeightedPath.zeros(critical_reduced, times, critical_cutoff.eta)
    assert contraction_step(critical_cutoff, critical_reduced, stable_cubic, [0.0], zero).weighted_norm() == 0.0

    psi = _coordinate(critical_reduced, critical_cutoff.delta)
    path = contraction_step(critical_cutoff, critical_reduced, stable_cubic, psi, zero)
    assert np.allclose(path.center_coordinates()[:, 0], psi[0], atol = 1e-6 * abs(psi[0]))

def test_contraction_ratio(critical_cutoff, critical_reduced, stable_cubic, rng):
    psi = _coordinate(critical_reduced, critical_cutoff.delta)

    for _ in range(10):
        paths = [initial_center_path(critical_cutoff, critical_reduced, _coordinate(critical_reduced, rng.uniform(-2.5, 2.5) * critical_cutoff.delta))
                for _ in range(2)]
        images = [contraction_step(critical_cutoff, critical_reduced, stable_cubic, psi, y) for y in paths]
        gap = (paths[0] - paths[1]).weighted_norm()

        if gap > 0.0:
            assert (images[0] - images[1]).weighted_norm() <= 0.55 * gap

def test_fixed_point_at_zero_and_geometric_increments(critical_cutoff, critical_reduced, stable_cubic):
    assert solve_center_fixed_point(critical_cutoff, critical_reduced, stable_cubic, [0.0]).weighted_norm() == 0.0
    assert center_map(critical_cutoff, critical_reduced, stable_cubic, [0.0]).norm() <= critical_cutoff.fp_tol

    path = solve_center_fixed_point(critical_cutoff, critical_reduced, stable_cubic, _coordinate(critical_reduced, 1.5 * critical_cutoff.delta))
    assert path.iterations >= 3
    assert all(r <= 0.6 for r in path.ratios)

def test_fixed_point_lipschitz_in_psi(critical_cutoff, critical_reduced, stable_cubic, rng):
    for _ in range(3):
        a, b = (_coordinate(critical_reduced, rng.uniform(-2.0, 2.0) * critical_cutoff.delta) for _ in range(2))
        gap = (critical_reduced.basis.combine(a - b)).norm()
        paths = [solve_center_fixed_point(critical_cutoff, critical_reduced, stable_cubic, psi) for psi in (a, b)]
        assert (paths[0] - paths[1]).weighted_norm() <= 2.0 * critical_cutoff.C * gap + 2.0 * critical_cutoff.fp_tol

def test_translation_identity(critical_cutoff, critical_reduced, stable_cubic):
    path = solve_center_fixed_point(critical_cutoff, critical_reduced, stable_cubic, _coordinate(critical_reduced, critical_cutoff.delta))
    tau = 1.0
    shifted = solve_center_fixed_point(critical_cutoff, critical_reduced, stable_cubic, path.center_coordinates()[path.index_of(tau)])
    gap = (path.at(tau) - shifted.at(0.0)).norm()
    assert gap <= 1e-4 * path.at(tau).norm() + 10.0 * critical_cutoff.fp_tol

def test_manifold_tangency(critical_cutoff, critical_reduced, stable_cubic):
    unit = _coordinate(critical_reduced, 10.0 * critical_cutoff.delta)
    scales = np.array([0.1, 0.05, 0.025])
    sizes = np.array([center_map(critical_cutoff, critical_reduced, stable_cubic, s * unit).norm() for s in scales])
    slope = np.polyfit(np.log(scales), np.log(sizes), 1)[0]
    assert slope >= 1.5

def test_graph_bounded_by_lipschitz(critical_cutoff, critical_reduced, stable_cubic):
    for size in (0.5, 1.0, 2.0):
        psi = _coordinate(critical_reduced, size * critical_cutoff.delta)
        value = center_map(critical_cutoff, critical_reduced, stable_cubic, psi)
        assert value.norm() <= critical_cutoff.lipschitz * size * critical_cutoff.delta + critical_cutoff.fp_tol

def test_tangent_map_at_zero(critical_cutoff, critical_reduced, stable_cubic):
    tangent = tangent_map(critical_cutoff, critical_reduced, stable_cubic, [0.0])
    column = tangent.columns[0]
    assert np.allclose(column.center_coordinates()[:, 0], 1.0, atol = 1e-8)
    assert tangent.graph_derivative([1.0]).norm() <= 1e-6

def test_tangent_map_matches_one_sided_differences(critical_cutoff, critical_reduced, stable_cubic):
    cfg = dataclasses.replace(critical_cutoff, fp_tol = 1e-14)
    psi = _coordinate(critical_reduced, critical_cutoff.delta)
    base = solve_center_fixed_point(cfg, critical_reduced, stable_cubic, psi)
    tangent = tangent_map(cfg, critical_reduced, stable_cubic, psi, path = base)
    errors = []

    for s in (0.1 * abs(psi[0]), 0.01 * abs(psi[0])):
        moved = solve_center_fixed_point(cfg, critical_reduced, stable_cubic, psi + s)
        quotient = (moved - base) * (1.0 / s)
        errors.append((quotient - tangent.columns[0]).weighted_norm(tangent.eta))

    assert 5.0 <= errors[0] / errors[1] <= 20.0

def test_solution_check(critical_cutoff, critical_reduced, stable_cubic):
    path = solve_center_fixed_point(critical_cutoff, critical_reduced, stable_cubic, _coordinate(critical_reduced, critical_cutoff.delta))
    assert solution_check(critical_cutoff, critical_reduced, stable_cubic, path, t_span = 5.0) <= 1e-6

def test_manifold_map_lattice(critical_map, critical_cutoff, critical_radius, rng):
    assert critical_map(np.zeros(1)).norm() <= critical_cutoff.fp_tol
    assert 0.0 < critical_radius < critical_cutoff.delta
    assert sampled_lipschitz(critical_map, rng, pairs = 50) <= critical_cutoff.lipschitz + 1e-6

    rows = critical_map.axis_lattice()
    assert len(rows) == 2 * critical_map.divisions + 1
    assert all(value.norm() < critical_cutoff.delta for _, _, _, value in rows)

def test_attractivity_constants(critical_cutoff):
    constants = attractivity_constants(critical_cutoff)
    assert constants.beta0 > 0.0
    assert constants.mu_prime < critical_cutoff.alpha
    assert constants.valid

def test_on_manifold_start_stays_on_manifold(critical_cutoff, critical_reduced, critical_map, critical_radius, critical_kernel, stable_cubic):
    psi = _coordinate(critical_reduced, 0.5 * critical_radius)
    start = critical_reduced.basis.combine(psi) + critical_map(psi)
    trajectory = solve_nonlinear(critical_kernel, 0.0, start, stable_cubic, 10.0)
    report = attractivity_diagnostics(critical_cutoff, critical_reduced, critical_map, trajectory)
    assert np.max(report.distances) <= 10.0 * critical_cutoff.fp_tol

def test_off_manifold_start_is_attracted(critical_cutoff, critical_reduced, critical_map, critical_radius, critical_kernel, critical_grid, stable_cubic):
    size = 0.25 * critical_radius
    kick = project_su(critical_reduced, random_segment(critical_grid, 1, np.random.default_rng(5)))
    start = critical_reduced.basis.combine(_coordinate(critical_reduced, size)) + kick * (size / kick.norm())
    trajectory = solve_nonlinear(critical_kernel, 0.0, start, stable_cubic, 20.0)
    report = attractivity_diagnostics(critical_cutoff, critical_reduced, critical_map, trajectory)
    assert report.rate < 0.0
    assert report.satisfied
    assert report.exit_time is None

def test_linear_equation_attracts_at_gap_rate(critical_reduced, critical_gap, critical_kernel, critical_grid, zero_f):
    alpha, eps_gap = critical_gap
    cfg = select_delta({"C": 2.0, "C1": 2.0, "alpha": alpha, "eps_gap": eps_gap}, zero_f, critical_reduced, np.random.default_rng(1), samples = 6)
    manifold_map = ManifoldMap(cfg, critical_reduced, zero_f, divisions = 4)
    kick = project_su(critical_reduced, random_segment(critical_grid, 1, np.random.default_rng(9)))
    trajectory = solve_nonlinear(critical_kernel, 0.0, kick * (0.01 / kick.norm()), zero_f, 20.0)
    report = attractivity_diagnostics(cfg, critical_reduced, manifold_map, trajectory)
    assert report.rate <= -(alpha - 0.15)

def test_iteration_limit_raises(critical_cutoff, critical_reduced, stable_cubic):
    cfg = dataclasses.replace(critical_cutoff, max_iterations = 2)

    with pytest.raises(FixedPointNonconvergenceError):
        solve_center_fixed_point(cfg, critical_reduced, stable_cubic, _coordinate(critical_reduced, critical_cutoff.delta))

def _hyperbolic_setup(nu, rho):
    kernel = scalar_kernel(nu = nu, rho = rho)
    grid = Grid(0.05, rho, 40.0)
    summary = find_characteristic_roots(kernel)
    reduced = decompose(kernel, grid, summary)
    alpha, eps_gap = spectral_gap_constants(summary, kernel)
    constants = estimate_decomposition_constants(reduced, kernel, alpha, eps_gap, np.random.default_rng(1234), samples = 6)
    f = cubic_functional(kernel, {"eps_cubic": -1.0, "nu": nu})
    cfg = select_delta({"C": constants.C, "C1": constants.C1, "alpha": alpha, "eps_gap": eps_gap}, f, reduced, np.random.default_rng(1234), samples = 6)
    return kernel, grid, reduced, f, cfg

def test_hyperbolic_map_requires_hyperbolicity(critical_cutoff, critical_reduced, stable_cubic, critical_grid):
    with pytest.raises(HyperbolicityError):
        hyperbolic_map(critical_cutoff, critical_reduced, stable_cubic, "stable", critical_grid.zeros(1))

def test_stable_map_for_sink():
    kernel, grid, reduced, f, cfg = _hyperbolic_setup(0.5, 0.75)
    start = grid.constant(1.0) * (0.5 * cfg.delta / grid.constant(1.0).norm())
    result = hyperbolic_map(cfg, reduced, f, "stable", start, t_fit = 40.0)
    assert result.graph_value.norm() == 0.0
    assert result.rate == pytest.approx(0.5, abs = 0.05)

def test_unstable_map_is_tangent():
    kernel, grid, reduced, f, cfg = _hyperbolic_setup(2.0, 0.5)
    column = reduced.unstable.basis.columns[0]
    ratios = []

    for size in (0.4, 0.2):
        psi = np.array([size * cfg.delta / column.norm()], dtype = complex)
        value = hyperbolic_map(cfg, reduced, f, "unstable", psi).graph_value
        ratios.append(value.norm() / (size * cfg.delta))

    assert ratios[1] < ratios[0]

def test_attractivity_requires_gap_above_mu_prime(critical_cutoff, critical_reduced, critical_map, critical_kernel, critical_grid, stable_cubic):
    cfg = critical_cutoff
    cfg = dataclasses.replace(cfg, zeta = 2.0 * cfg.alpha / (cfg.C * cfg.C1))
    assert attractivity_constants(cfg).mu_prime >= cfg.alpha

    trajectory = solve_nonlinear(critical_kernel, 0.0, critical_grid.zeros(1), stable_cubic, 1.0)

    with pytest.raises(AttractivityHypothesisError):
        attractivity_diagnostics(cfg, critical_reduced, critical_map, trajectory)

def test_attractivity_requires_empty_unstable_spectrum():
    kernel, grid, reduced, f, cfg = _hyperbolic_setup(2.0, 0.5)
    assert reduced.d_u == 1
    trajectory = solve_nonlinear(kernel, 0.0, grid.zeros(1), f, 1.0)

    with pytest.raises(AttractivityHypothesisError):
        attractivity_diagnostics(cfg, reduced, None, trajectory)

def test_fixed_point_residual_within_tolerance(critical_cutoff, critical_reduced, stable_cubic):
    psi = _coordinate(critical_reduced, 0.5 * critical_cutoff.delta)
    path = solve_center_fixed_point(critical_cutoff, critical_reduced, stable_cubic, psi)
    step = contraction_step(critical_cutoff, critical_reduced, stable_cubic, psi, path)
    assert (step - path).weighted_norm() <= critical_cutoff.fp_tol
