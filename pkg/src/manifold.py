import itertools
import logging
import math
from dataclasses import dataclass, field
import numpy as np
from kernel import NonlinearityModel
from phasespace import Segment, functional_norm, linear_trajectory, window_norms, sample_segments, solve_nonlinear, fit_exponential_rate
from decomposition import project_center, buffer_coordinates, trajectory_coordinates

logger = logging.getLogger(__name__)

CHI_SLOPE = 1.875 # max |chi'| of the quintic smoothstep
RADIUS_FRACTIONS = (1.0, 2.0 / 3.0, 1.0 / 3.0)

class ManifoldError(RuntimeError):
    pass

class NoAdmissibleDeltaError(ManifoldError):
    pass

class FixedPointNonconvergenceError(ManifoldError):
    pass

class SeriesStallError(ManifoldError):
    pass

class HyperbolicityError(ManifoldError):
    pass

class AttractivityHypothesisError(ManifoldError):
    pass

def chi(t):
    # 1 on [0, 2], 0 on [3, inf), quintic smoothstep in between
    s = np.clip(np.abs(np.asarray(t, dtype = float)) - 2.0, 0.0, 1.0)
    return 1.0 - s ** 3 * (10.0 - 15.0 * s + 6.0 * s ** 2)

def chi_prime(t):
    t = np.asarray(t, dtype = float)
    s = np.clip(np.abs(t) - 2.0, 0.0, 1.0)
    return -30.0 * s ** 2 * (1.0 - s) ** 2 * np.sign(t)

class ZetaEstimator:
    # zeta_*(delta) = (1 + 3 sup|chi'|) sup_{||phi|| <= 3 delta} ||Df(phi)|| over a sampled ball
    def __init__(self, grid, f, directions):
        self.grid = grid
        self.f = f
        self.directions = [d * (1.0 / d.norm()) for d in directions if d.norm() > 0.0]
        self._cache = {}

    def points(self, delta):
        return [(3.0 * delta * frac) * d for d in self.directions for frac in RADIUS_FRACTIONS]

    def slope(self, delta):
        if self.f.form_tag == "zero":
            return 0.0

        return max(functional_norm(self.grid, self.f.derivative(phi)) for phi in self.points(delta))

    def __call__(self, delta):
        if delta not in self._cache:
            self._cache[delta] = (1.0 + 3.0 * CHI_SLOPE) * self.slope(delta)

        return self._cache[delta]

@dataclass
class CutoffConfig:
    delta: float
    delta1: float
    eta: float
    alpha: float
    eps_gap: float
    C: float
    C1: float
    zeta: float
    zeta_star: object = field(repr = False)
    lipschitz: float = 0.0
    smallness: float = 0.0
    M1: float = 0.0
    path_steps: int = 0
    h: float = 0.0
    path_tail_tol: float = 1e-8
    fp_tol: float = 1e-8
    max_iterations: int = 200
    bound_violations: int = 0

    @property
    def path_time(self):
        return self.path_steps * self.h

    @property
    def tail_bound(self):
        return math.exp((self.eta - self.alpha) * self.path_time)

    @property
    def tangent_eta(self):
        return 0.5 * (self.eta + self.alpha)

    def as_dict(self):
        return {"delta": self.delta, "delta1": self.delta1, "eta": self.eta, "zeta": self.zeta, "L": self.lipschitz,
                "smallness": self.smallness, "M1": self.M1, "T_path": self.path_time, "tail_bound": self.tail_bound}

def _gap_sum(alpha, eps_gap, eta):
    return 1.0 / (eta - eps_gap) + 2.0 / (alpha + eta) + 2.0 / (alpha - eta)

def _norm_directional(grid, values, direction):
    # one sided derivative of ||phi||_X at phi along direction
    size = np.linalg.norm(values, axis = 1)
    inner = np.real(np.sum(values.conj() * direction, axis = 1))
    rate = np.where(size > 0.0, inner / np.where(size > 0.0, size, 1.0), np.linalg.norm(direction, axis = 1))
    return float(np.sum(grid.norm_weights * rate))

def cutoff_factor(cfg, reduced, phi):
    _, center_part = project_center(reduced, phi)
    rest = phi - center_part
    return float(chi(rest.norm() / cfg.delta) * chi(center_part.norm() / cfg.delta))

def cutoff_apply(cfg, reduced, f, phi):
    # f_delta(phi) = chi(||Pi^su phi|| / delta) chi(||Pi^c phi|| / delta) f(phi)
    factor = cutoff_factor(cfg, reduced, phi)

    if factor == 0.0:
        return np.zeros(phi.dim, dtype = complex)

    return factor * f.evaluate(phi)

def cutoff_directional(cfg, reduced, f, phi, direction):
    direction = np.asarray(direction, dtype = complex).reshape(phi.values.shape)
    grid = phi.grid
    _, center_part = project_center(reduced, phi)
    rest = phi - center_part
    d_center = reduced.basis.combine(reduced.dual.pair(direction)).values
    d_rest = direction - d_center

    s_center = center_part.norm() / cfg.delta
    s_rest = rest.norm() / cfg.delta
    chi_center = float(chi(s_center))
    chi_rest = float(chi(s_rest))
    slope_center = float(chi_prime(s_center))
    slope_rest = float(chi_prime(s_rest))

    value = np.zeros(phi.dim, dtype = complex)

    if chi_center * chi_rest != 0.0:
        value += chi_center * chi_rest * f.directional(phi, direction)

    if slope_center != 0.0 or slope_rest != 0.0:
        rate = slope_rest * chi_center * _norm_directional(grid, rest.values, d_rest) + chi_rest * slope_center * _norm_directional(grid, center_part.values, d_center)
        value += f.evaluate(phi) * rate / cfg.delta

    return value

def cutoff_nonlinearity(cfg, reduced, f):
    return NonlinearityModel(
            lambda phi: cutoff_apply(cfg, reduced, f, phi),
            directional = lambda phi, direction: cutoff_directional(cfg, reduced, f, phi, direction),
            form_tag = "custom",
            real = f.real,
            params = {"delta": cfg.delta})

def _sample_directions(reduced, f, rng, samples):
    grid = reduced.grid
    directions = sample_segments(grid, reduced.kernel.dim, samples, rng, real = f.real)

    for column in reduced.basis.columns:
        directions.append(column.replace(column.values.real))

        if np.any(column.values.imag != 0.0):
            directions.append(column.replace(column.values.imag))

    return directions

def select_delta(constants, f, reduced, rng, delta_ceiling = 0.05, samples = 24, path_tail_tol = 1e-8, fp_tol = 1e-8, max_iterations = 200):
    C = float(constants["C"])
    C1 = float(constants["C1"])
    alpha = float(constants["alpha"])
    eps_gap = float(constants["eps_gap"])
    eta = constants.get("eta")
    eta = 0.5 * (eps_gap + alpha) if eta is None else float(eta)

    if not eps_gap < eta < alpha:
        raise ValueError("require eps_gap < eta < alpha, got %g, %g, %g" % (eps_gap, eta, alpha))

    grid = reduced.grid
    zeta_star = ZetaEstimator(grid, f, _sample_directions(reduced, f, rng, samples))
    gaps = _gap_sum(alpha, eps_gap, eta)

    def measures(delta):
        zeta = zeta_star(delta)
        return zeta * C * C1 * gaps, 4.0 * C ** 2 * C1 * zeta / (alpha - eta)

    def admissible(delta):
        smallness, lipschitz = measures(delta)
        return smallness < 0.5 and lipschitz <= 1.0

    hi = float(delta_ceiling)
    lo = hi

    if not admissible(lo):
        while not admissible(lo):
            hi = lo
            lo *= 0.5

            if lo < 1e-12:
                raise NoAdmissibleDeltaError("no admissible delta above 1e-12; f is too steep for C = %g, C1 = %g" % (C, C1))

        for _ in range(20):
            mid = 0.5 * (lo + hi)

            if admissible(mid):
                lo = mid
            else:
                hi = mid

    delta = lo
    smallness, lipschitz = measures(delta)
    cfg = CutoffConfig(delta, delta, eta, alpha, eps_gap, C, C1, zeta_star(delta), zeta_star,
            lipschitz = lipschitz, smallness = smallness, h = grid.h,
            path_steps = int(math.ceil(math.log(1.0 / path_tail_tol) / (alpha - eta) / grid.h)),
            path_tail_tol = path_tail_tol, fp_tol = fp_tol, max_iterations = max_iterations)

    # M1 = sup ||D f_delta|| on the sampled ball, and the bound ||f_delta|| <= delta zeta
    points = zeta_star.points(delta)
    tangents = zeta_star.directions[:6]

    for phi in points:
        if np.linalg.norm(cutoff_apply(cfg, reduced, f, phi)) > delta * cfg.zeta * (1.0 + 1e-9):
            cfg.bound_violations += 1

        for tangent in tangents:
            cfg.M1 = max(cfg.M1, float(np.linalg.norm(cutoff_directional(cfg, reduced, f, phi, tangent.values))))

    if cfg.bound_violations:
        logger.warning("||f_delta|| exceeded delta zeta at %d sampled points", cfg.bound_violations)

    logger.info("delta = %g, zeta = %g, L = %g, smallness = %g", delta, cfg.zeta, lipschitz, smallness)

    return cfg

class WeightedPath:
    # y(t_j) = window j of buffer + Phi_c C_j + Phi_u U_j on the uniform times t_j
    def __init__(self, reduced, times, buffer, center_coeffs, unstable_coeffs, eta):
        self.reduced = reduced
        self.grid = reduced.grid
        self.times = times
        self.buffer = buffer
        self.center_coeffs = center_coeffs
        self.unstable_coeffs = unstable_coeffs
        self.eta = eta
        self._window_coords = None

    @classmethod
    def zeros(cls, reduced, times, eta):
        count = len(times)
        return cls(reduced, times, np.zeros((reduced.grid.n + count, reduced.kernel.dim), dtype = complex),
                np.zeros((count, reduced.d_c), dtype = complex), np.zeros((count, reduced.d_u), dtype = complex), eta)

    @property
    def count(self):
        return len(self.times)

    def index_of(self, t):
        j = int(round((t - self.times[0]) / self.grid.h))

        if j < 0 or j >= self.count or abs(self.times[j] - t) > 1e-9:
            raise ValueError("require a path grid time, got %g" % t)

        return j

    def window_coordinates(self):
        # (a, b): center and unstable coordinates of the raw buffer windows
        if self._window_coords is None:
            self._window_coords = (buffer_coordinates(self.reduced.center, self.buffer, self.count),
                    buffer_coordinates(self.reduced.unstable, self.buffer, self.count))

        return self._window_coords

    def center_coordinates(self):
        return self.window_coordinates()[0] + self.center_coeffs

    def unstable_coordinates(self):
        return self.window_coordinates()[1] + self.unstable_coeffs

    def segment(self, j):
        n = self.grid.n
        values = np.array(self.buffer[j:j + n + 1][::-1])

        if self.reduced.d_c:
            values += np.einsum("d,dkm->km", self.center_coeffs[j], self.reduced.basis.values)

        if self.reduced.d_u:
            values += np.einsum("d,dkm->km", self.unstable_coeffs[j], self.reduced.unstable.basis.values)

        return Segment(self.grid, values)

    def at(self, t):
        return self.segment(self.index_of(t))

    def _basis(self):
        values = [b.basis.values for b in (self.reduced.center, self.reduced.unstable) if b.d > 0]
        return np.concatenate(values) if values else None

    def norms(self):
        coeffs = np.concatenate([self.center_coeffs, self.unstable_coeffs], axis = 1)
        return window_norms(self.grid, self.buffer, self.count, self._basis(), coeffs)

    def projected_norms(self):
        # ||Pi^c y(t_j)|| and ||Pi^su y(t_j)||
        a, _ = self.window_coordinates()
        zeros = np.zeros_like(self.buffer)
        center_values = self.reduced.basis.values if self.reduced.d_c else None
        center = window_norms(self.grid, zeros, self.count, center_values, self.center_coordinates())
        rest_coeffs = np.concatenate([-a, self.unstable_coeffs], axis = 1)
        rest = window_norms(self.grid, self.buffer, self.count, self._basis(), rest_coeffs)
        return center, rest

    def weighted_norm(self, eta = None):
        eta = self.eta if eta is None else eta
        return float(np.max(self.norms() * np.exp(-eta * np.abs(self.times))))

    def _combine(self, other, sign):
        return WeightedPath(self.reduced, self.times, self.buffer + sign * other.buffer,
                self.center_coeffs + sign * other.center_coeffs, self.unstable_coeffs + sign * other.unstable_coeffs, self.eta)

    def __add__(self, other):
        return self._combine(other, 1.0)

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __mul__(self, scalar):
        return WeightedPath(self.reduced, self.times, scalar * self.buffer, scalar * self.center_coeffs, scalar * self.unstable_coeffs, self.eta)

    __rmul__ = __mul__

class PathLayout:
    # time grid of a path problem and where each finite dimensional coordinate is anchored
    def __init__(self, grid, first, last, center_anchor = None, unstable_anchor = None):
        self.grid = grid
        self.times = grid.h * np.arange(first, last + 1)
        self.center_anchor = center_anchor
        self.unstable_anchor = unstable_anchor

    @property
    def count(self):
        return len(self.times)

    @property
    def zero_index(self):
        return int(np.argmin(np.abs(self.times)))

def center_layout(cfg, grid):
    # [-T, T]; the center flow is anchored at t = 0, the unstable integral at +T
    J = cfg.path_steps
    return PathLayout(grid, -J, J, center_anchor = J, unstable_anchor = 2 * J)

def _coefficient_path(block, h, forcing, anchor, start):
    # c(t_j) = exp((t_j - t_a) G) start + int_{t_a}^{t_j} exp((t_j - s) G) H g(s) ds, trapezoid in s
    count = len(forcing)
    coeffs = np.zeros((count, block.d), dtype = complex)

    if block.d == 0:
        return coeffs

    lam = np.diag(block.G)
    q = forcing @ block.H.T
    ahead = np.exp(lam * h)
    behind = np.exp(-lam * h)
    coeffs[anchor] = start

    for j in range(anchor, count - 1):
        coeffs[j + 1] = ahead * coeffs[j] + 0.5 * h * (ahead * q[j] + q[j + 1])

    for j in range(anchor, 0, -1):
        coeffs[j - 1] = behind * coeffs[j] - 0.5 * h * (q[j - 1] + behind * q[j])

    return coeffs

def _integral_terms(reduced, layout, forcing, eta, center_start = None, unstable_start = None, history = None):
    # center and unstable terms by their reduced flows, stable term as the forced solution minus its other parts
    kernel = reduced.kernel
    grid = reduced.grid
    zero_c = np.zeros(reduced.d_c, dtype = complex)
    zero_u = np.zeros(reduced.d_u, dtype = complex)

    if history is None:
        history = grid.zeros(kernel.dim)

    trajectory = linear_trajectory(kernel, history, forcing[1:], t0 = layout.times[0])
    a = buffer_coordinates(reduced.center, trajectory.buffer, layout.count)
    b = buffer_coordinates(reduced.unstable, trajectory.buffer, layout.count)
    c = _coefficient_path(reduced.center, grid.h, forcing, layout.center_anchor or 0, zero_c if center_start is None else center_start)
    u = _coefficient_path(reduced.unstable, grid.h, forcing, layout.unstable_anchor or 0, zero_u if unstable_start is None else unstable_start)

    path = WeightedPath(reduced, layout.times, trajectory.buffer, c - a, u - b, eta)
    path._window_coords = (a, b)

    return path

def cutoff_along(cfg, reduced, f, path):
    # f_delta(y(t_j)) for every path point, evaluating f only where the cutoff factor is positive
    center, rest = path.projected_norms()
    factors = chi(rest / cfg.delta) * chi(center / cfg.delta)
    forcing = np.zeros((path.count, reduced.kernel.dim), dtype = complex)

    for j in np.nonzero(factors > 0.0)[0]:
        forcing[j] = factors[j] * f.evaluate(path.segment(j))

    return forcing

def initial_center_path(cfg, reduced, psi):
    # t -> T^c(t) psi = Phi_c exp(t G_c) psi
    layout = center_layout(cfg, reduced.grid)
    path = WeightedPath.zeros(reduced, layout.times, cfg.eta)
    path.center_coeffs = np.exp(layout.times[:, np.newaxis] * np.diag(reduced.G_c)[np.newaxis, :]) * np.asarray(psi, dtype = complex)[np.newaxis, :]
    return path

def contraction_step(cfg, reduced, f, psi, path):
    layout = center_layout(cfg, reduced.grid)
    forcing = cutoff_along(cfg, reduced, f, path)
    return _integral_terms(reduced, layout, forcing, cfg.eta, center_start = np.asarray(psi, dtype = complex))

def _picard(step, start, cfg, label):
    path = start
    increments = []

    for iteration in range(1, cfg.max_iterations + 1):
        new = step(path)
        increment = (new - path).weighted_norm()
        increments.append(increment)
        path = new

        logger.debug("%s iteration %d: increment %g", label, iteration, increment)

        if iteration >= 3 and increment <= cfg.fp_tol:
            break
    else:
        raise FixedPointNonconvergenceError("%s fixed point not reached in %d iterations (last increment %g); enlarge C or C1" % (label, cfg.max_iterations, increments[-1]))

    # geometric decay is only meaningful above the rounding floor
    floor = 1e-12 * max(1.0, path.weighted_norm())
    ratios = [b / a for a, b in zip(increments, increments[1:]) if a > 100.0 * floor]

    path.iterations = len(increments)
    path.increments = increments
    path.ratios = ratios
    path.geometric = all(r <= 0.6 for r in ratios)

    if not path.geometric:
        logger.warning("%s Picard increments not geometric (ratios %s)", label, ratios)

    return path

def solve_center_fixed_point(cfg, reduced, f, psi):
    psi = np.asarray(psi, dtype = complex).reshape(reduced.d_c)
    return _picard(lambda y: contraction_step(cfg, reduced, f, psi, y), initial_center_path(cfg, reduced, psi), cfg, "center")

def _hyperbolic_part(path, j):
    # y(t_j) - Phi_c <<Psi_c, y(t_j)>>
    a, _ = path.window_coordinates()
    values = np.array(path.buffer[j:j + path.grid.n + 1][::-1])
    reduced = path.reduced

    if reduced.d_c:
        values -= np.einsum("d,dkm->km", a[j], reduced.basis.values)

    if reduced.d_u:
        values += np.einsum("d,dkm->km", path.unstable_coeffs[j], reduced.unstable.basis.values)

    return Segment(path.grid, values)

def center_map(cfg, reduced, f, psi, path = None):
    # F_{*,delta}(psi) = Pi^su Lambda(psi)(0)
    if path is None:
        path = solve_center_fixed_point(cfg, reduced, f, psi)

    return _hyperbolic_part(path, path.index_of(0.0))

def cutoff_directional_along(cfg, reduced, f, base, direction):
    forcing = np.zeros((base.count, reduced.kernel.dim), dtype = complex)
    center, rest = base.projected_norms()
    active = chi(rest / (1.5 * cfg.delta)) * chi(center / (1.5 * cfg.delta)) > 0.0 # support of f_delta, widened by half

    for j in np.nonzero(active)[0]:
        forcing[j] = cutoff_directional(cfg, reduced, f, base.segment(j), direction.segment(j).values)

    return forcing

class TangentMap:
    # columns A_1(psi) e_j as paths, summed as Neumann series in Y_eta'
    def __init__(self, psi, columns, eta, terms):
        self.psi = psi
        self.columns = columns
        self.eta = eta
        self.terms = terms

    def apply(self, direction):
        direction = np.asarray(direction, dtype = complex)
        result = direction[0] * self.columns[0]

        for coeff, column in zip(direction[1:], self.columns[1:]):
            result = result + coeff * column

        return result

    def graph_derivative(self, direction):
        # DF(psi) direction = Pi^su ev_0 A_1(psi) direction
        path = self.apply(direction)
        return _hyperbolic_part(path, path.index_of(0.0))

def tangent_map(cfg, reduced, f, psi, path = None, tol = 1e-10, stall = 0.9):
    psi = np.asarray(psi, dtype = complex).reshape(reduced.d_c)

    if path is None:
        path = solve_center_fixed_point(cfg, reduced, f, psi)

    layout = center_layout(cfg, reduced.grid)
    eta_prime = cfg.tangent_eta
    columns = []
    counts = []

    for e in np.eye(reduced.d_c, dtype = complex):
        term = initial_center_path(cfg, reduced, e)
        term.eta = eta_prime
        total = term
        size = term.weighted_norm()
        count = 0

        while size >= tol:
            forcing = cutoff_directional_along(cfg, reduced, f, path, term)
            term = _integral_terms(reduced, layout, forcing, eta_prime)
            new_size = term.weighted_norm()
            count += 1

            if new_size > stall * size:
                raise SeriesStallError("Neumann term ratio %g exceeds %g" % (new_size / size, stall))

            total = total + term
            size = new_size

        total.eta = eta_prime
        columns.append(total)
        counts.append(count)

    return TangentMap(psi, columns, eta_prime, counts)

@dataclass
class HyperbolicResult:
    kind: str
    graph_value: Segment
    path: WeightedPath
    rate: float
    iterations: int

def _fitted_rate(reduced, f, start, t_fit, sign):
    # exponential rate of ||x_t|| over the second half of [0, t_fit] for the full equation
    size = start.norm()

    if size == 0.0:
        return float("nan")

    if sign > 0.0 and reduced.d_u:
        # growing solutions are fitted before they reach the nonlinear range
        growth = float(np.max(np.diag(reduced.G_u).real))
        t_fit = min(t_fit, max(2.0, math.log(1e-2 / size) / growth))

    trajectory = solve_nonlinear(reduced.kernel, 0.0, start, f, reduced.grid.snap(t_fit) * reduced.grid.h)
    half = trajectory.steps // 2
    norms = trajectory.norms()
    return sign * fit_exponential_rate(trajectory.times[half:], norms[half:], floor = 1e-300)

def hyperbolic_map(cfg, reduced, f, kind, psi, t_fit = 20.0):
    if reduced.d_c > 0:
        raise HyperbolicityError("require a hyperbolic equilibrium, found %d center roots" % reduced.d_c)

    grid = reduced.grid
    J = cfg.path_steps
    zero_u = np.zeros(reduced.d_u, dtype = complex)

    if kind == "stable":
        # [0, T]: stable part starts from the projected history, unstable integral anchored at +T
        history = psi - reduced.unstable.basis.combine(reduced.unstable.coordinates(psi)) if reduced.d_u else psi
        layout = PathLayout(grid, 0, J, unstable_anchor = J)
        start = _integral_terms(reduced, layout, np.zeros((layout.count, reduced.kernel.dim)), cfg.eta, history = history)
        step = lambda y: _integral_terms(reduced, layout, cutoff_along(cfg, reduced, f, y), cfg.eta, unstable_start = zero_u, history = history)
        path = _picard(step, start, cfg, "stable")
        value = reduced.unstable.basis.combine(path.unstable_coordinates()[0]) if reduced.d_u else grid.zeros(reduced.kernel.dim)
        rate = _fitted_rate(reduced, f, history + value, t_fit, -1.0)
    elif kind == "unstable":
        # [-T, 0]: unstable flow anchored at 0 with value psi, stable integral from -T
        psi = np.asarray(psi, dtype = complex).reshape(reduced.d_u)
        layout = PathLayout(grid, -J, 0, unstable_anchor = J)
        start = WeightedPath.zeros(reduced, layout.times, cfg.eta)
        start.unstable_coeffs = np.exp(layout.times[:, np.newaxis] * np.diag(reduced.G_u)[np.newaxis, :]) * psi[np.newaxis, :]
        step = lambda y: _integral_terms(reduced, layout, cutoff_along(cfg, reduced, f, y), cfg.eta, unstable_start = psi)
        path = _picard(step, start, cfg, "unstable")
        value = _hyperbolic_part(path, J) - reduced.unstable.basis.combine(path.unstable_coordinates()[J])
        rate = _fitted_rate(reduced, f, reduced.unstable.basis.combine(psi) + value, t_fit, 1.0)
    else:
        raise ValueError("require kind in stable, unstable")

    return HyperbolicResult(kind, value, path, rate, path.iterations)

class ManifoldMap:
    # graph map over finite dimensional coordinates, memoized on a lattice with multilinear interpolation
    def __init__(self, cfg, reduced, f, kind = "center", radius = None, divisions = 20):
        if kind not in ("center", "unstable"):
            raise ValueError("require kind in center, unstable")

        self.cfg = cfg
        self.reduced = reduced
        self.f = f
        self.kind = kind
        self.block = reduced.center if kind == "center" else reduced.unstable
        self.delta = cfg.delta
        self.lipschitz_estimate = cfg.lipschitz
        self.radius = cfg.delta if radius is None else float(radius)
        self.real = f.real and reduced.kernel.is_real and bool(np.all(self.block.basis.lambdas.imag == 0.0))
        self.divisions = int(divisions)
        sizes = [c.norm() for c in self.block.basis.columns]
        self.coordinate_radius = self.radius / min(sizes) if sizes else 0.0
        self.spacing = self.coordinate_radius / self.divisions if sizes else 0.0
        self._cache = {}
        self.solves = 0

    @property
    def domain_dim(self):
        return self.block.d

    def _to_real(self, psi):
        psi = np.asarray(psi, dtype = complex).reshape(self.domain_dim)
        return psi.real.copy() if self.real else np.concatenate([psi.real, psi.imag])

    def _to_complex(self, x):
        d = self.domain_dim
        return x.astype(complex) if self.real else x[:d] + 1j * x[d:]

    def solve(self, psi):
        psi = np.asarray(psi, dtype = complex).reshape(self.domain_dim)
        self.solves += 1

        if self.kind == "unstable":
            return hyperbolic_map(self.cfg, self.reduced, self.f, "unstable", psi).graph_value

        if self._outside_support(psi):
            return self.reduced.grid.zeros(self.reduced.kernel.dim)

        return center_map(self.cfg, self.reduced, self.f, psi)

    def _outside_support(self, psi):
        # f_delta vanishes along T^c(t) psi, which is then the fixed point itself
        path = initial_center_path(self.cfg, self.reduced, psi)
        center, _ = path.projected_norms()
        return bool(np.all(center >= 3.0 * self.cfg.delta))

    def node(self, index):
        if index not in self._cache:
            self._cache.setdefault(index, self.solve(self._to_complex(np.array(index, dtype = float) * self.spacing)))

        return self._cache[index]

    def __call__(self, psi):
        grid = self.reduced.grid

        if self.domain_dim == 0:
            return grid.zeros(self.reduced.kernel.dim)

        x = self._to_real(psi)

        if np.max(np.abs(x)) > self.coordinate_radius:
            return self.solve(psi)

        scaled = x / self.spacing
        base = np.floor(scaled).astype(int)
        frac = scaled - base
        values = np.zeros((grid.n + 1, self.reduced.kernel.dim), dtype = complex)

        for corner in itertools.product((0, 1), repeat = len(x)):
            weight = float(np.prod([fr if c else 1.0 - fr for fr, c in zip(frac, corner)]))

            if weight == 0.0:
                continue

            values += weight * self.node(tuple(int(b + c) for b, c in zip(base, corner))).values

        return Segment(grid, values)

    def lattice(self):
        return sorted(self._cache.items())

    def axis_lattice(self):
        # (axis, index, psi, F(psi)) for the nodes along every real coordinate axis
        width = self.domain_dim if self.real else 2 * self.domain_dim
        rows = []

        for axis in range(width):
            for k in range(-self.divisions, self.divisions + 1):
                index = tuple(k if a == axis else 0 for a in range(width))
                psi = self._to_complex(np.array(index, dtype = float) * self.spacing)
                rows.append((axis, index, psi, self.node(index)))

        return rows

def sampled_lipschitz(manifold_map, rng, pairs = 50):
    # max ||F(psi1) - F(psi2)|| / ||Phi (psi1 - psi2)|| over pairs inside the radius
    basis = manifold_map.block.basis
    worst = 0.0

    for _ in range(pairs):
        points = []

        for _ in range(2):
            z = rng.normal(size = manifold_map.domain_dim) + (0.0 if manifold_map.real else 1j * rng.normal(size = manifold_map.domain_dim))
            z = z * (rng.uniform(0.0, 1.0) * manifold_map.radius / basis.combine(z).norm())
            points.append(z)

        gap = basis.combine(points[0] - points[1]).norm()

        if gap > 0.0:
            worst = max(worst, (manifold_map(points[0]) - manifold_map(points[1])).norm() / gap)

    return worst

def validity_radius(manifold_map, rng, directions = 8):
    # largest r in delta {0.9, 0.75, 0.5, 0.25, ...} with ||F(psi)|| < delta for ||Phi psi|| <= r
    basis = manifold_map.block.basis
    d = manifold_map.domain_dim

    if d == 0:
        return 0.9 * manifold_map.delta

    units = [e for e in np.eye(d, dtype = complex)]
    units += [-e for e in units]
    units += [rng.normal(size = d) + (0.0 if manifold_map.real else 1j * rng.normal(size = d)) for _ in range(directions)]
    units = [u / basis.combine(u).norm() for u in units]

    fraction = 0.9

    for fraction in (0.9, 0.75, 0.5) + tuple(0.25 * 0.5 ** k for k in range(8)):
        r = fraction * manifold_map.delta

        if all(manifold_map.solve(s * r * u).norm() < manifold_map.delta for u in units for s in (1.0, 0.5)):
            return r

    return fraction * manifold_map.delta

@dataclass
class AttractivityConstants:
    K_const: float
    mu: float
    mu_prime: float
    beta0: float
    K_hat: float
    alpha: float
    eps_gap: float

    @property
    def valid(self):
        if self.mu_prime >= self.alpha:
            return False

        return self.beta0 > 0.0 and self.K_const * (self.alpha - self.eps_gap) / (self.alpha - self.mu_prime) < self.alpha

def attractivity_constants(cfg):
    K = cfg.C * cfg.C1 * cfg.zeta
    mu = K + cfg.eps_gap
    mu_prime = mu + K * cfg.lipschitz

    if mu_prime >= cfg.alpha:
        logger.warning("mu' = %g is not below alpha = %g; enlarge the gap or shrink C C1 zeta", mu_prime, cfg.alpha)
        return AttractivityConstants(K, mu, mu_prime, float("-inf"), float("inf"), cfg.alpha, cfg.eps_gap)

    beta0 = cfg.alpha - K * (cfg.alpha - cfg.eps_gap) / (cfg.alpha - mu_prime)
    K_hat = K + K ** 2 * (1.0 + cfg.lipschitz) / (cfg.alpha - mu_prime)
    constants = AttractivityConstants(K, mu, mu_prime, beta0, K_hat, cfg.alpha, cfg.eps_gap)

    if not constants.valid:
        logger.warning("attractivity hypothesis fails (beta0 = %g, mu' = %g); reduce delta or enlarge alpha", beta0, mu_prime)

    return constants

@dataclass
class AttractivityReport:
    rate: float
    constants: AttractivityConstants
    satisfied: bool
    distances: np.ndarray
    times: np.ndarray
    exit_time: float = None

def attractivity_diagnostics(cfg, reduced, manifold_map, trajectory, radius = None, slack = 0.5, stride = None):
    # xi(t) = Pi^s x_t - F_*(Pi^c x_t) along the trajectory against C ||xi(0)|| exp(-beta0 t)
    if reduced.d_u > 0:
        raise AttractivityHypothesisError("require an empty unstable spectrum, found %d unstable roots" % reduced.d_u)

    constants = attractivity_constants(cfg)

    if constants.mu_prime >= constants.alpha:
        raise AttractivityHypothesisError("require mu' < alpha, got mu' = %g and alpha = %g; shrink C C1 zeta" % (constants.mu_prime, constants.alpha))

    radius = manifold_map.radius if radius is None else radius
    z = trajectory_coordinates(reduced.center, trajectory)
    stride = max(1, trajectory.steps // 400) if stride is None else stride
    indices = np.arange(0, trajectory.steps + 1, stride)
    distances = []
    exit_time = None

    for j in indices:
        segment = trajectory.segment_index(j)
        center_part = reduced.basis.combine(z[j]) if reduced.d_c else segment.grid.zeros(segment.dim)
        rest = segment - center_part
        distances.append((rest - manifold_map(z[j])).norm())

        if exit_time is None and (rest.norm() >= cfg.delta or center_part.norm() >= radius):
            exit_time = float(trajectory.times[j])

    distances = np.array(distances)
    times = trajectory.times[indices] - trajectory.t0

    if exit_time is not None:
        logger.warning("trajectory leaves the neighborhood covered by the manifold at t = %g", exit_time)

    floor = 10.0 * cfg.fp_tol
    bound = cfg.C * distances[0] * np.exp(-constants.beta0 * times) * (1.0 + slack) + floor
    satisfied = bool(np.all(distances <= bound))
    rate = fit_exponential_rate(times, distances, floor = max(1e-14, 1e-10 * distances[0]))

    return AttractivityReport(rate, constants, satisfied, distances, times, exit_time)

def solution_check(cfg, reduced, f, path, t_span = 5.0):
    # the path from t = 0 on is a solution of the cutoff equation started at y(0)
    J = path.index_of(0.0)
    steps = min(reduced.grid.snap(t_span), path.count - 1 - J)
    f_delta = cutoff_nonlinearity(cfg, reduced, f)
    trajectory = solve_nonlinear(reduced.kernel, 0.0, path.segment(J), f_delta, steps * reduced.grid.h)
    return max((trajectory.segment_index(j) - path.segment(J + j)).norm() for j in range(steps + 1))
