import math
import numpy as np
from scipy import optimize

# K(t) = sum_j C_j t^p_j exp(-a_j t), the delay kernels with closed form Laplace transforms

class KernelError(ValueError):
    pass

class PoleError(KernelError):
    pass

class TransformDomainError(KernelError):
    pass

class AdmissibilityError(KernelError):
    pass

class NonlinearityError(KernelError):
    pass

class KernelModel:
    def __init__(self, dim, terms, rho):
        self.dim = int(dim)
        self.rho = float(rho)

        if self.dim < 1:
            raise ValueError("require dim >= 1")

        if self.rho <= 0.0:
            raise ValueError("require rho > 0")

        coefficients = []
        powers = []
        rates = []

        for coefficient, power, rate in terms:
            coefficient = np.array(coefficient, dtype = complex)

            if coefficient.ndim == 0:
                coefficient = coefficient * np.eye(self.dim)

            if coefficient.shape != (self.dim, self.dim):
                raise ValueError("require every coefficient to be a %d x %d matrix" % (self.dim, self.dim))

            if int(power) < 0:
                raise ValueError("require nonnegative powers")

            if complex(rate).real <= 0.0:
                raise ValueError("require Re a_j > 0 for every term")

            coefficient.setflags(write = False)
            coefficients.append(coefficient)
            powers.append(int(power))
            rates.append(complex(rate))

        self.coefficients = tuple(coefficients)
        self.powers = tuple(powers)
        self.rates = tuple(rates)

    @property
    def terms(self):
        return list(zip(self.coefficients, self.powers, self.rates))

    @property
    def key(self):
        # hashable identity, used to cache quadrature weights per grid
        return (self.dim, self.rho, tuple((c.tobytes(), p, a) for c, p, a in self.terms))

    @property
    def is_real(self):
        return all(np.all(c.imag == 0.0) and a.imag == 0.0 for c, _, a in self.terms)

    def scaled(self, factor):
        return KernelModel(self.dim, [(factor * c, p, a) for c, p, a in self.terms], self.rho)

    def __repr__(self):
        return "KernelModel(dim = %d, rho = %g, terms = %d)" % (self.dim, self.rho, len(self.coefficients))

def eval_kernel(kernel, t):
    if t < 0.0:
        raise ValueError("require t >= 0")

    return kernel_values(kernel, np.array([float(t)]))[0]

def kernel_values(kernel, t):
    # K evaluated at every entry of the 1D array t, shape (len(t), m, m)
    t = np.asarray(t, dtype = float)
    values = np.zeros((len(t), kernel.dim, kernel.dim), dtype = complex)

    for c, p, a in kernel.terms:
        values += (t ** p * np.exp(-a * t))[:, np.newaxis, np.newaxis] * c

    return values

def _check_transform_argument(kernel, lam):
    lam = complex(lam)

    if lam.real <= -kernel.rho:
        raise TransformDomainError("require Re lambda > -rho, got %s" % lam)

    for a in kernel.rates:
        if abs(lam + a) == 0.0:
            raise PoleError("lambda = %s is a pole of the transform" % lam)

    return lam

def laplace_transform(kernel, lam):
    # int_0^inf K(t) exp(-lam t) dt = sum_j C_j p_j! / (lam + a_j)^(p_j + 1)
    lam = _check_transform_argument(kernel, lam)
    total = np.zeros((kernel.dim, kernel.dim), dtype = complex)

    for c, p, a in kernel.terms:
        total += c * (math.factorial(p) / (lam + a) ** (p + 1))

    return total

def laplace_derivative(kernel, lam):
    lam = _check_transform_argument(kernel, lam)
    total = np.zeros((kernel.dim, kernel.dim), dtype = complex)

    for c, p, a in kernel.terms:
        total -= c * (math.factorial(p + 1) / (lam + a) ** (p + 2))

    return total

def shifted_transform(kernel, lam, s):
    # int_0^inf K(s + v) exp(-lam v) dv for every entry of s >= 0, shape (len(s), m, m)
    lam = complex(lam)
    s = np.asarray(s, dtype = float)
    values = np.zeros((len(s), kernel.dim, kernel.dim), dtype = complex)

    for c, p, a in kernel.terms:
        b = lam + a

        if b.real <= 0.0:
            raise TransformDomainError("require Re(lambda + a_j) > 0, got %s" % b)

        poly = np.zeros(len(s), dtype = complex)

        for i in range(p + 1):
            poly += math.comb(p, i) * s ** (p - i) * math.factorial(i) / b ** (i + 1)

        values += (np.exp(-a * s) * poly)[:, np.newaxis, np.newaxis] * c

    return values

def tail(kernel):
    # the kernel t -> int_t^inf K(s) ds, again a sum of exponential polynomial terms
    terms = []

    for c, p, a in kernel.terms:
        for i in range(p + 1):
            terms.append((c * (math.factorial(p) / math.factorial(i) / a ** (p - i + 1)), i, a))

    return KernelModel(kernel.dim, terms, kernel.rho)

def _matrix_norm(c):
    return float(np.linalg.norm(c, 2))

def weighted_norm_bound(kernel):
    # triangle inequality bound on ||K||_{1,rho}
    bound = 0.0

    for c, p, a in kernel.terms:
        bound += _matrix_norm(c) * math.factorial(p) / (a.real - kernel.rho) ** (p + 1)

    return bound

def _tail_horizon(kernel, tol):
    horizon = 1.0

    for c, p, a in kernel.terms:
        gap = a.real - kernel.rho
        t = max(1.0, p / gap)

        # weighted tail of the term beyond t is about ||C|| t^p exp(-gap t) / gap
        while _matrix_norm(c) * t ** p * math.exp(-gap * t) / gap > tol:
            t *= 1.5

        horizon = max(horizon, t)

    return horizon

def check_admissibility(kernel, quad_order = 8, panels = 400):
    for a in kernel.rates:
        if a.real <= kernel.rho:
            raise AdmissibilityError("require Re a_j > rho, got a_j = %s with rho = %g" % (a, kernel.rho))

    if len(kernel.coefficients) == 0:
        return 0.0, 0.0

    horizon = _tail_horizon(kernel, 1e-14)
    nodes, weights = np.polynomial.legendre.leggauss(quad_order)
    edges = np.linspace(0.0, horizon, panels + 1)
    width = edges[1] - edges[0]
    t = (edges[:-1, np.newaxis] + 0.5 * width * (nodes[np.newaxis, :] + 1.0)).ravel()
    w = np.tile(0.5 * width * weights, panels)

    weighted = np.linalg.norm(kernel_values(kernel, t), 2, axis = (1, 2)) * np.exp(kernel.rho * t)
    norm_1_rho = min(float(np.sum(w * weighted)), weighted_norm_bound(kernel))

    # the sup is refined around the best sampled point
    samples = np.linspace(0.0, horizon, 20 * panels + 1)
    sampled = np.linalg.norm(kernel_values(kernel, samples), 2, axis = (1, 2)) * np.exp(kernel.rho * samples)
    best = int(np.argmax(sampled))
    norm_inf_rho = float(sampled[best])

    if 0 < best < len(samples) - 1:
        objective = lambda t: -float(np.linalg.norm(eval_kernel(kernel, t), 2)) * math.exp(kernel.rho * t)
        refined = optimize.minimize_scalar(objective, bounds = (samples[best - 1], samples[best + 1]), method = "bounded")
        norm_inf_rho = max(norm_inf_rho, -float(refined.fun))

    return norm_1_rho, norm_inf_rho

class NonlinearityModel:
    # f acts on Segments (see phasespace); values in C^m
    def __init__(self, evaluate, derivative = None, directional = None, form_tag = "custom", real = True, params = None):
        if form_tag not in ("cubic_functional", "zero", "custom"):
            raise ValueError("require form_tag in cubic_functional, zero, custom")

        self._evaluate = evaluate
        self._derivative = derivative
        self._directional = directional
        self.form_tag = form_tag
        self.real = real
        self.params = dict(params or {})

    @property
    def analytic(self):
        return self._derivative is not None

    def evaluate(self, segment):
        return np.asarray(self._evaluate(segment), dtype = complex).reshape(segment.dim)

    def __call__(self, segment):
        return self.evaluate(segment)

    def derivative(self, segment):
        # Df(phi) as an array D of shape (N + 1, m, m) with Df(phi) psi = sum_k D_k psi_k
        if self._derivative is not None:
            return self._derivative(segment)

        step = 1e-6 * (1.0 + segment.norm())
        values = segment.values
        functional = np.zeros((values.shape[0], segment.dim, segment.dim), dtype = complex)

        for k in range(values.shape[0]):
            for c in range(segment.dim):
                shift = np.zeros_like(values)
                shift[k, c] = step
                forward = self.evaluate(segment.replace(values + shift))
                backward = self.evaluate(segment.replace(values - shift))
                functional[k, :, c] = (forward - backward) / (2.0 * step)

        return functional

    def directional(self, segment, direction):
        # Df(phi) psi for a single direction psi (values array)
        direction = np.asarray(direction, dtype = complex).reshape(segment.values.shape)

        if self._directional is not None:
            return np.asarray(self._directional(segment, direction), dtype = complex).reshape(segment.dim)

        if self._derivative is not None:
            return np.einsum("kij,kj->i", self._derivative(segment), direction)

        scale = segment.replace(direction).norm()

        if scale == 0.0:
            return np.zeros(segment.dim, dtype = complex)

        step = 1e-6 * (1.0 + segment.norm()) / scale
        forward = self.evaluate(segment.replace(segment.values + step * direction))
        backward = self.evaluate(segment.replace(segment.values - step * direction))

        return (forward - backward) / (2.0 * step)

def zero_nonlinearity(kernel, params):
    return NonlinearityModel(
            lambda segment: np.zeros(segment.dim, dtype = complex),
            derivative = lambda segment: np.zeros(segment.values.shape + (segment.dim,), dtype = complex),
            directional = lambda segment, direction: np.zeros(segment.dim, dtype = complex),
            form_tag = "zero",
            params = params)

def cubic_functional(kernel, params):
    # f(phi) = eps_cubic l(phi)^3 + g_coeff l(phi)^4 with l(phi) = int Phat(-theta) phi(theta) dtheta,
    # Phat the tail of P = K / nu
    eps_cubic = float(params.get("eps_cubic", 0.0))
    g_coeff = float(params.get("g_coeff", 0.0))
    nu = float(params.get("nu", 1.0))
    analytic = str(params.get("analytic_derivative", "true")).lower() in ("1", "true", "yes", "on")

    if nu == 0.0:
        raise ValueError("require nu != 0")

    weight = tail(kernel.scaled(1.0 / nu))

    def _ell(segment, values = None):
        return segment.grid.integrate_kernel(weight, segment.values if values is None else values)

    def evaluate(segment):
        ell = _ell(segment)
        return eps_cubic * ell ** 3 + g_coeff * ell ** 4

    def _slope(segment):
        ell = _ell(segment)
        return 3.0 * eps_cubic * ell ** 2 + 4.0 * g_coeff * ell ** 3

    def derivative(segment):
        return _slope(segment)[np.newaxis, :, np.newaxis] * segment.grid.kernel_weights(weight)

    def directional(segment, direction):
        return _slope(segment) * _ell(segment, direction)

    return NonlinearityModel(
            evaluate,
            derivative = derivative if analytic else None,
            directional = directional if analytic else None,
            form_tag = "cubic_functional",
            real = kernel.is_real,
            params = {"eps_cubic": eps_cubic, "g_coeff": g_coeff, "nu": nu, "weight": weight})

nonlinearities = {
        "zero": zero_nonlinearity,
        "cubic_functional": cubic_functional
}
