import logging
import numpy as np
from numba import jit
from scipy import stats
from kernel import kernel_values, NonlinearityError

logger = logging.getLogger(__name__)

class BlowupError(RuntimeError):
    # carries the solution computed up to the last step inside the bound
    def __init__(self, message, time = None, trajectory = None):
        super().__init__(message)
        self.time = time
        self.trajectory = trajectory

def interval_weights(func, h, n, order = 8):
    # per interval [i h, (i + 1) h]: int func(u) (1 - s) du and int func(u) s du, s the local coordinate
    nodes, weights = np.polynomial.legendre.leggauss(order)
    frac = 0.5 * (nodes + 1.0)
    u = h * (np.arange(n)[:, np.newaxis] + frac[np.newaxis, :])
    values = np.asarray(func(u.ravel()))
    values = values.reshape((n, order) + values.shape[1:])
    w = 0.5 * h * weights

    left = np.tensordot(values, w * (1.0 - frac), axes = ([1], [0]))
    right = np.tensordot(values, w * frac, axes = ([1], [0]))

    return left, right

def hat_weights(func, h, n, order = 8):
    # int func(u) hat_k(u) du over [0, n h] for k = 0..n, hat_k the nodal piecewise linear functions
    left, right = interval_weights(func, h, n, order)
    result = np.zeros((n + 1,) + left.shape[1:], dtype = np.result_type(left, right))
    result[:-1] += left
    result[1:] += right

    return result

class Grid:
    # uniform history grid theta_k = -k h on [-window, 0]
    def __init__(self, h, rho, window = None):
        self.h = float(h)
        self.rho = float(rho)

        if self.h <= 0.0:
            raise ValueError("require h > 0")

        if window is None:
            window = max(20.0 / self.rho, 40.0)

        self.n = int(round(float(window) / self.h))

        if self.n < 2:
            raise ValueError("require at least two grid intervals in the history window")

        self.window = self.n * self.h
        self.theta = -self.h * np.arange(self.n + 1)
        self.trapezoid = np.full(self.n + 1, self.h)
        self.trapezoid[0] = self.trapezoid[-1] = 0.5 * self.h
        self.norm_weights = self.trapezoid * np.exp(self.rho * self.theta)
        self._intervals = {}
        self._weights = {}
        self._solvers = {}

    def kernel_interval_weights(self, kernel):
        key = kernel.key

        if key not in self._intervals:
            left, right = interval_weights(lambda u: kernel_values(kernel, u), self.h, self.n)
            left.setflags(write = False)
            right.setflags(write = False)
            self._intervals[key] = (left, right)

        return self._intervals[key]

    def kernel_weights(self, kernel):
        # product integration weights W_k = int K(u) hat_k(u) du, exact for piecewise linear segments
        key = kernel.key

        if key not in self._weights:
            left, right = self.kernel_interval_weights(kernel)
            weights = np.zeros((self.n + 1, kernel.dim, kernel.dim), dtype = complex)
            weights[:-1] += left
            weights[1:] += right
            weights.setflags(write = False)
            self._weights.setdefault(key, weights)

        return self._weights[key]

    def solve_matrix(self, kernel):
        # (I - W_0)^-1, the one implicit element of each step
        key = kernel.key

        if key not in self._solvers:
            weights = self.kernel_weights(kernel)
            self._solvers.setdefault(key, np.linalg.inv(np.eye(kernel.dim) - weights[0]))

        return self._solvers[key]

    def integrate_kernel(self, kernel, values):
        return np.einsum("kij,kj->i", self.kernel_weights(kernel), values)

    def zeros(self, dim):
        return Segment(self, np.zeros((self.n + 1, dim), dtype = complex))

    def constant(self, value):
        value = np.atleast_1d(np.asarray(value, dtype = complex))
        return Segment(self, np.tile(value, (self.n + 1, 1)))

    def from_function(self, func, dim = 1):
        # func maps the array of theta values to an array of shape (N + 1,) or (N + 1, dim)
        values = np.asarray(func(self.theta), dtype = complex).reshape(self.n + 1, dim)
        return Segment(self, values)

    def truncation_bound(self, sup):
        # weighted mass of a function bounded by sup beyond the window
        return np.exp(-self.rho * self.window) * sup / self.rho

    def snap(self, duration):
        steps = duration / self.h
        snapped = int(np.floor(steps + 1e-9))

        if abs(steps - snapped) > 1e-9:
            logger.warning("time %g is not a multiple of h = %g, snapped down to %g", duration, self.h, snapped * self.h)

        return snapped

    def __repr__(self):
        return "Grid(h = %g, window = %g, rho = %g)" % (self.h, self.window, self.rho)

class Segment:
    # element of L^1_rho(R^-; C^m) sampled at theta_k = -k h, read as piecewise linear
    def __init__(self, grid, values, has_point_value = True):
        values = np.array(values, dtype = complex)

        if values.ndim == 1:
            values = values[:, np.newaxis]

        if values.shape[0] != grid.n + 1:
            raise ValueError("require %d grid values, got %d" % (grid.n + 1, values.shape[0]))

        values.setflags(write = False)
        self.grid = grid
        self.values = values
        self.has_point_value = has_point_value

    @property
    def dim(self):
        return self.values.shape[1]

    @property
    def rho(self):
        return self.grid.rho

    @property
    def window(self):
        return self.grid.window

    def point_value(self):
        if not self.has_point_value:
            raise ValueError("require a segment carrying a point value at theta = 0")

        return self.values[0]

    def norm(self):
        return segment_norm(self)

    def replace(self, values):
        return Segment(self.grid, values, self.has_point_value)

    def __add__(self, other):
        return self.replace(self.values + other.values)

    def __sub__(self, other):
        return self.replace(self.values - other.values)

    def __neg__(self):
        return self.replace(-self.values)

    def __mul__(self, scalar):
        return self.replace(scalar * self.values)

    __rmul__ = __mul__

    def __repr__(self):
        return "Segment(dim = %d, norm = %g)" % (self.dim, self.norm())

def segment_norm(phi):
    return float(np.sum(phi.grid.norm_weights * np.linalg.norm(phi.values, axis = 1)))

def functional_L(kernel, phi):
    # L(phi) = int K(-theta) phi(theta) dtheta
    return phi.grid.integrate_kernel(kernel, phi.values)

def functional_norm(grid, functional):
    # operator norm X -> C^m of psi -> sum_k D_k psi_k
    return float(np.max(np.linalg.norm(functional, 2, axis = (1, 2)) / grid.norm_weights))

def check_nonlinearity(f, grid, dim, tol = 1e-12):
    zero = grid.zeros(dim)
    value = np.linalg.norm(f.evaluate(zero))
    slope = functional_norm(grid, f.derivative(zero))

    if value > tol or slope > tol:
        raise NonlinearityError("require f(0) = 0 and Df(0) = 0, got |f(0)| = %g, ||Df(0)|| = %g" % (value, slope))

@jit(nopython = True)
def _history_sum(buffer, weights, idx):
    # sum_{k >= 1} W_k x(t - k h) for the point stored at buffer[idx]
    n = weights.shape[0] - 1
    m = weights.shape[1]
    total = np.zeros(m, dtype = np.complex128)

    for k in range(1, n + 1):
        for i in range(m):
            for l in range(m):
                total[i] += weights[k, i, l] * buffer[idx - k, l]

    return total

@jit(nopython = True)
def _step_linear(buffer, weights, solve_matrix, forcing, start):
    m = weights.shape[1]

    for j in range(forcing.shape[0]):
        idx = start + j
        rest = _history_sum(buffer, weights, idx)

        for i in range(m):
            value = 0j

            for l in range(m):
                value += solve_matrix[i, l] * (rest[l] + forcing[j, l])

            buffer[idx, i] = value

@jit(nopython = True)
def _window_norms(buffer, count, basis_values, coeffs, norm_weights):
    # norms of the windows buffer[j..j+n] (reversed) plus sum_i coeffs[j, i] basis_values[i]
    n = norm_weights.shape[0] - 1
    m = buffer.shape[1]
    d = basis_values.shape[0]
    norms = np.zeros(count)

    for j in range(count):
        total = 0.0

        for k in range(n + 1):
            s = 0.0

            for c in range(m):
                v = buffer[j + n - k, c]

                for i in range(d):
                    v += basis_values[i, k, c] * coeffs[j, i]

                s += v.real ** 2 + v.imag ** 2

            total += norm_weights[k] * np.sqrt(s)

        norms[j] = total

    return norms

def window_norms(grid, buffer, count, basis_values = None, coeffs = None):
    m = buffer.shape[1]

    if basis_values is None or basis_values.shape[0] == 0:
        basis_values = np.zeros((0, grid.n + 1, m), dtype = complex)
        coeffs = np.zeros((count, 0), dtype = complex)

    return _window_norms(np.ascontiguousarray(buffer, dtype = complex), count,
            np.ascontiguousarray(basis_values, dtype = complex), np.ascontiguousarray(coeffs, dtype = complex), grid.norm_weights)

def history_buffer(phi, steps):
    # chronological storage: buffer[n - k] = phi(-k h), buffer[n + j] = x(t0 + j h)
    n = phi.grid.n
    buffer = np.zeros((n + 1 + steps, phi.dim), dtype = complex)
    buffer[:n + 1] = phi.values[::-1]

    return buffer

class Trajectory:
    def __init__(self, grid, t0, buffer, initial_segment):
        self.grid = grid
        self.t0 = float(t0)
        self.buffer = buffer
        self.initial_segment = initial_segment
        self.steps = len(buffer) - grid.n - 1

    @property
    def step(self):
        return self.grid.h

    @property
    def times(self):
        return self.t0 + self.grid.h * np.arange(self.steps + 1)

    @property
    def states(self):
        return self.buffer[self.grid.n:]

    def index(self, t):
        return self.grid.snap(t - self.t0)

    def segment_index(self, j):
        if j < 0 or j > self.steps:
            raise ValueError("require 0 <= j <= %d" % self.steps)

        return Segment(self.grid, self.buffer[j:j + self.grid.n + 1][::-1])

    def segment_at(self, t):
        return self.segment_index(self.index(t))

    def windows(self):
        # all segments as an array of shape (steps + 1, N + 1, m), a view into the buffer
        view = np.lib.stride_tricks.sliding_window_view(self.buffer, self.grid.n + 1, axis = 0)
        return np.transpose(view, (0, 2, 1))[:, ::-1, :]

    def norms(self):
        return window_norms(self.grid, self.buffer, self.steps + 1)

def linear_trajectory(kernel, phi, forcing, t0 = 0.0):
    # steps (I - W_0) x_j = sum_{k >= 1} W_k x_{j-k} + p_j for the rows of forcing
    grid = phi.grid
    forcing = np.ascontiguousarray(np.asarray(forcing, dtype = complex).reshape(-1, kernel.dim))
    buffer = history_buffer(phi, len(forcing))
    _step_linear(buffer, grid.kernel_weights(kernel), grid.solve_matrix(kernel), forcing, grid.n + 1)

    return Trajectory(grid, t0, buffer, phi)

def _sample_forcing(p, times, dim):
    return np.array([np.broadcast_to(np.asarray(p(s), dtype = complex), (dim,)) for s in times]).reshape(len(times), dim)

def homogeneous_trajectory(kernel, phi, t, t0 = 0.0):
    steps = phi.grid.snap(t)
    return linear_trajectory(kernel, phi, np.zeros((steps, kernel.dim)), t0 = t0)

def solve_homogeneous(kernel, phi, t):
    if t < 0.0:
        raise ValueError("require t >= 0")

    trajectory = homogeneous_trajectory(kernel, phi, t)
    return trajectory.segment_index(trajectory.steps)

def forced_trajectory(kernel, sigma, phi, p, t):
    if t < sigma:
        raise ValueError("require t >= sigma")

    grid = phi.grid
    steps = grid.snap(t - sigma)
    times = sigma + grid.h * np.arange(1, steps + 1)

    return linear_trajectory(kernel, phi, _sample_forcing(p, times, kernel.dim), t0 = sigma)

def solve_forced(kernel, sigma, phi, p, t):
    trajectory = forced_trajectory(kernel, sigma, phi, p, t)
    return trajectory.segment_index(trajectory.steps)

def solve_nonlinear(kernel, sigma, phi, f, t_end, bound = 1e6):
    # f sees the segment whose point value is extrapolated linearly from the two previous points
    grid = phi.grid
    n = grid.n
    steps = grid.snap(t_end - sigma)
    buffer = history_buffer(phi, steps)
    weights = grid.kernel_weights(kernel)
    solve_matrix = grid.solve_matrix(kernel)

    for j in range(1, steps + 1):
        idx = n + j
        buffer[idx] = 2.0 * buffer[idx - 1] - buffer[idx - 2]
        value = f.evaluate(Segment(grid, buffer[idx - n:idx + 1][::-1]))
        buffer[idx] = solve_matrix @ (_history_sum(buffer, weights, idx) + value)

        if not np.all(np.isfinite(buffer[idx])) or np.max(np.abs(buffer[idx])) > bound:
            partial = Trajectory(grid, sigma, buffer[:idx], phi)
            raise BlowupError("solution left the bound %g at t = %g" % (bound, sigma + j * grid.h), sigma + j * grid.h, partial)

    return Trajectory(grid, sigma, buffer, phi)

class Mollifier:
    # Gamma^n(theta) = 2 n (1 + n theta) on [-1/n, 0], zero elsewhere
    def __init__(self, n):
        self.n = int(n)

        if self.n < 1:
            raise ValueError("require n >= 1")

    @property
    def support(self):
        return (-1.0 / self.n, 0.0)

    def profile(self, theta):
        theta = np.asarray(theta, dtype = float)
        return np.where(theta >= -1.0 / self.n, 2.0 * self.n * (1.0 + self.n * theta), 0.0)

    def on_grid(self, grid):
        cells = 1.0 / (self.n * grid.h)

        if self.n * grid.h > 1.0 + 1e-12 or abs(cells - round(cells)) > 1e-9:
            raise ValueError("require 1 / (n h) to be a positive integer, got n = %d, h = %g" % (self.n, grid.h))

        return self.profile(grid.theta)

    def mass(self, grid):
        return float(np.sum(grid.trapezoid * self.on_grid(grid)))

def vcf_segment(kernel, sigma, phi, p, t, mollifier_n):
    # T(t - sigma) phi + int_sigma^t T(t - s) Gamma^n p(s) ds with trapezoid quadrature in s
    grid = phi.grid
    steps = grid.snap(t - sigma)
    base = solve_homogeneous(kernel, phi, steps * grid.h)
    bump = Mollifier(mollifier_n).on_grid(grid)

    times = sigma + grid.h * np.arange(steps + 1)
    forcing = _sample_forcing(p, times, kernel.dim)
    quadrature = np.full(steps + 1, grid.h)
    quadrature[0] = quadrature[-1] = 0.5 * grid.h

    if steps == 0:
        return base

    values = np.array(base.values)

    for c in range(kernel.dim):
        pulse = np.zeros((grid.n + 1, kernel.dim), dtype = complex)
        pulse[:, c] = bump
        response = homogeneous_trajectory(kernel, Segment(grid, pulse), steps * grid.h).windows()
        # the pulse injected at s_i has been transported for t - s_i = (steps - i) h
        values += np.tensordot((quadrature * forcing[:, c])[::-1], response, axes = 1)

    return Segment(grid, values)

def vcf_gaps(kernel, sigma, phi, p, t, ns = (4, 8, 16, 32)):
    # distance of the mollified formula to the forced solution for each n
    reference = solve_forced(kernel, sigma, phi, p, t)
    return [(vcf_segment(kernel, sigma, phi, p, t, n) - reference).norm() for n in ns]

def random_segment(grid, dim, rng, real = True, modes = 3):
    # sum of damped oscillations with random amplitudes, smooth on the window
    theta = grid.theta[:, np.newaxis]
    values = np.zeros((grid.n + 1, dim), dtype = complex)

    for _ in range(modes):
        amplitude = rng.normal(size = dim)

        if not real:
            amplitude = amplitude + 1j * rng.normal(size = dim)

        decay = rng.uniform(0.0, 1.0)
        frequency = rng.uniform(0.0, 3.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        values += amplitude[np.newaxis, :] * np.exp(decay * theta) * np.cos(frequency * theta + phase)

    return Segment(grid, values)

def sample_segments(grid, dim, count, rng, real = True):
    # fixed members first, then random ones; a longer sample always extends a shorter one
    members = []

    for theta0 in (0.0, -1.0, -0.5 * grid.window):
        values = np.zeros((grid.n + 1, dim), dtype = complex)
        values[min(grid.n, int(round(-theta0 / grid.h))), :] = 1.0
        members.append(Segment(grid, values))

    for c in range(dim):
        members.append(grid.constant(np.eye(dim)[c]))

    if dim > 1:
        members.append(grid.constant(np.ones(dim)))

    members = members[:count]

    while len(members) < count:
        members.append(random_segment(grid, dim, rng, real))

    return members

def write_trajectory_csv(trajectory, path):
    states = trajectory.states
    dim = states.shape[1]
    header = ["t"] + ["re_x%d" % (i + 1) for i in range(dim)] + ["im_x%d" % (i + 1) for i in range(dim)] + ["norm"]
    data = np.column_stack([trajectory.times, states.real, states.imag, trajectory.norms()])
    np.savetxt(path, data, delimiter = ",", header = ",".join(header), comments = "", fmt = "%.17g")

def fit_exponential_rate(times, values, floor = 1e-300):
    # slope of log(values) against time by least squares, ignoring values at or below floor
    times = np.asarray(times, dtype = float)
    values = np.asarray(values, dtype = float)
    mask = values > floor

    if np.count_nonzero(mask) < 2:
        return float("nan")

    return float(stats.linregress(times[mask], np.log(values[mask])).slope)
