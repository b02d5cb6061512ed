import logging
from dataclasses import dataclass
import numpy as np
from numba import jit
from scipy import signal
from kernel import shifted_transform
from phasespace import Segment, hat_weights, homogeneous_trajectory, window_norms, sample_segments
from spectral import characteristic_matrix, null_vectors

logger = logging.getLogger(__name__)

class DecompositionError(RuntimeError):
    pass

class MultiplicityError(DecompositionError):
    pass

class SingularGramError(DecompositionError):
    pass

class ExtrapolationError(DecompositionError):
    pass

MOLLIFIER_LEVELS = (8, 16, 32)

class DualFunction:
    # psi(tau) = w exp(-lam tau) on tau >= 0, a row vector in the forward space
    def __init__(self, kernel, row, lam):
        self.kernel = kernel
        self.row = np.asarray(row, dtype = complex).reshape(kernel.dim)
        self.lam = complex(lam)

    def __call__(self, tau):
        tau = np.asarray(tau, dtype = float)
        return np.exp(-self.lam * tau)[:, np.newaxis] * self.row[np.newaxis, :]

    def density(self, s):
        # int_s^inf psi(u - s) K(u) du at the history point theta = -s
        return np.einsum("i,sij->sj", self.row, shifted_transform(self.kernel, self.lam, s))

    def pairing_row(self, grid):
        # R_k with <<psi, phi>> = sum_k R_k . phi_k for piecewise linear phi
        return hat_weights(self.density, grid.h, grid.n)

    def mollified(self, n, order = 16):
        # <<psi, Gamma^n e_c>> for every component c
        nodes, weights = np.polynomial.legendre.leggauss(order)
        s = 0.5 / n * (nodes + 1.0)
        profile = 2.0 * n * (1.0 - n * s)

        return (0.5 / n * weights * profile) @ self.density(s)

@jit(nopython = True)
def _pairing_density(psi, left, right):
    # int_{j h}^{N h} psi(u - j h) K(u) du with psi piecewise linear between its samples
    n = left.shape[0]
    m = psi.shape[1]
    density = np.zeros((n + 1, m), dtype = np.complex128)

    for j in range(n):
        for i in range(j, n):
            for a in range(m):
                for b in range(m):
                    density[j, b] += psi[i - j, a] * left[i, a, b] + psi[i - j + 1, a] * right[i, a, b]

    return density

def bilinear_form(kernel, psi, phi):
    # <<psi, phi>> = int_{-inf}^0 int_theta^0 psi(xi - theta) K(-theta) phi(xi) dxi dtheta
    grid = phi.grid

    if isinstance(psi, DualFunction):
        return complex(np.sum(psi.pairing_row(grid) * phi.values))

    if callable(psi):
        sampled = np.asarray(psi(-grid.theta), dtype = complex).reshape(grid.n + 1, kernel.dim)
    else:
        sampled = np.asarray(psi, dtype = complex).reshape(grid.n + 1, kernel.dim)

    left, right = grid.kernel_interval_weights(kernel)
    density = _pairing_density(np.ascontiguousarray(sampled), np.ascontiguousarray(left), np.ascontiguousarray(right))

    return complex(np.sum(grid.trapezoid[:, np.newaxis] * density * phi.values))

class ModalBasis:
    # columns phi_i(theta) = exp(lam_i theta) v_i on the grid
    def __init__(self, grid, dim, lambdas, vectors, residuals = ()):
        self.grid = grid
        self.dim = dim
        self.lambdas = np.array(lambdas, dtype = complex).reshape(-1)
        self.vectors = np.array(vectors, dtype = complex).reshape(len(self.lambdas), dim)
        self.residuals = tuple(residuals)
        self.values = np.exp(self.lambdas[:, np.newaxis] * grid.theta[np.newaxis, :])[:, :, np.newaxis] * self.vectors[:, np.newaxis, :]
        self.values.setflags(write = False)

    @property
    def d(self):
        return len(self.lambdas)

    @property
    def columns(self):
        return [Segment(self.grid, v) for v in self.values]

    def combine(self, z):
        z = np.asarray(z, dtype = complex).reshape(self.d)
        return Segment(self.grid, np.einsum("d,dkm->km", z, self.values))

    def gram_determinant(self):
        if self.d == 0:
            return 1.0

        weighted = self.values * np.sqrt(self.grid.norm_weights)[np.newaxis, :, np.newaxis]
        flat = weighted.reshape(self.d, -1)
        gram = flat.conj() @ flat.T
        scale = np.sqrt(np.real(np.diag(gram)))

        return float(abs(np.linalg.det(gram / np.outer(scale, scale))))

def _normalize_vector(v):
    # unit length, largest entry real and positive
    v = v / np.linalg.norm(v)
    pivot = v[np.argmax(np.abs(v))]
    return v * (abs(pivot) / pivot)

def modal_basis(kernel, roots, grid, kind = "center"):
    lambdas = []
    vectors = []
    residuals = []

    for root in roots:
        if root.multiplicity > 1:
            raise MultiplicityError("%s root %s has multiplicity %d, Jordan chains are not supported" % (kind, root.value, root.multiplicity))

        v, _ = null_vectors(kernel, root.value)
        v = _normalize_vector(v)
        residual = float(np.linalg.norm(characteristic_matrix(kernel, root.value) @ v))

        if residual > 1e-8:
            raise DecompositionError("null vector residual %g at %s root %s" % (residual, kind, root.value))

        lambdas.append(root.value)
        vectors.append(v)
        residuals.append(residual)

    basis = ModalBasis(grid, kernel.dim, lambdas, np.array(vectors).reshape(len(lambdas), kernel.dim), residuals)

    if basis.gram_determinant() < 1e-8:
        raise DecompositionError("%s basis columns are numerically dependent" % kind)

    return basis

def center_basis(kernel, summary, grid):
    return modal_basis(kernel, summary.roots_of("center"), grid, "center")

def unstable_basis(kernel, summary, grid):
    return modal_basis(kernel, summary.roots_of("unstable"), grid, "unstable")

class DualBasis:
    # normalized rows psi_i = sum_j mix_ij w_j exp(-lam_j tau), stored through their pairing rows
    def __init__(self, grid, candidates, mix, rows, residual):
        self.grid = grid
        self.candidates = candidates
        self.mix = mix
        self.rows = rows
        self.rows.setflags(write = False)
        self.residual = residual

    @property
    def d(self):
        return len(self.candidates)

    def __call__(self, tau):
        if self.d == 0:
            return np.zeros((0, len(np.atleast_1d(tau)), self.rows.shape[2]), dtype = complex)

        return np.einsum("ij,jtm->itm", self.mix, np.array([c(tau) for c in self.candidates]))

    def pair(self, values):
        return np.einsum("dkm,km->d", self.rows, values)

    def norms(self):
        # ||psi_i|| = int |psi_i(tau)| exp(-rho tau) dtau over the window
        tau = -self.grid.theta
        values = np.linalg.norm(self(tau), axis = 2) * np.exp(-self.grid.rho * tau)[np.newaxis, :]
        return values @ self.grid.trapezoid

def dual_basis(kernel, basis):
    grid = basis.grid

    if basis.d == 0:
        return DualBasis(grid, [], np.zeros((0, 0), dtype = complex), np.zeros((0, grid.n + 1, kernel.dim), dtype = complex), 0.0)

    candidates = []

    for lam in basis.lambdas:
        _, w = null_vectors(kernel, lam)
        candidates.append(DualFunction(kernel, w, lam))

    rows = np.array([c.pairing_row(grid) for c in candidates])
    gram = np.einsum("ikm,jkm->ij", rows, basis.values)

    if np.linalg.cond(gram) > 1e10:
        raise SingularGramError("pairing Gram matrix is singular (cond %g)" % np.linalg.cond(gram))

    mix = np.linalg.inv(gram)
    rows = np.einsum("ij,jkm->ikm", mix, rows)
    residual = float(np.max(np.abs(np.einsum("ikm,jkm->ij", rows, basis.values) - np.eye(basis.d))))

    logger.debug("dual basis of dimension %d, duality residual %g", basis.d, residual)

    return DualBasis(grid, candidates, mix, rows, residual)

@dataclass
class SpectralBlock:
    basis: ModalBasis
    dual: DualBasis
    G: np.ndarray
    H: np.ndarray
    extrapolation_gap: float = 0.0

    @property
    def d(self):
        return self.basis.d

    def coordinates(self, phi):
        return self.dual.pair(phi.values)

    def flow(self, t, z):
        # exp(t G) z for the diagonal G of simple roots
        return np.exp(t * np.diag(self.G)) * z

def reduced_matrices(kernel, basis, dual):
    # G = diag(lam); H = lim <<Psi, Gamma^n e_k>>, Richardson extrapolated twice over the mollifier levels
    d = basis.d
    G = np.diag(basis.lambdas).astype(complex)

    if d == 0:
        return SpectralBlock(basis, dual, G.reshape(0, 0), np.zeros((0, kernel.dim), dtype = complex))

    levels = [dual.mix @ np.array([c.mollified(n) for c in dual.candidates]) for n in MOLLIFIER_LEVELS]
    first = 2.0 * levels[1] - levels[0]
    second = 2.0 * levels[2] - levels[1]
    gap = float(np.max(np.abs(second - first)))

    if gap > 1e-3:
        raise ExtrapolationError("H estimates differ by %g across mollifier levels" % gap)

    return SpectralBlock(basis, dual, G, (4.0 * second - first) / 3.0, gap)

class ReducedSystem:
    def __init__(self, kernel, grid, center, unstable, summary = None):
        self.kernel = kernel
        self.grid = grid
        self.center = center
        self.unstable = unstable
        self.summary = summary

    @property
    def G_c(self):
        return self.center.G

    @property
    def H_c(self):
        return self.center.H

    @property
    def basis(self):
        return self.center.basis

    @property
    def dual(self):
        return self.center.dual

    @property
    def G_u(self):
        return self.unstable.G

    @property
    def H_u(self):
        return self.unstable.H

    @property
    def d_c(self):
        return self.center.d

    @property
    def d_u(self):
        return self.unstable.d

    def duality_residuals(self):
        return {"center": self.center.dual.residual, "unstable": self.unstable.dual.residual}

def decompose(kernel, grid, summary):
    blocks = []

    for build in (center_basis, unstable_basis):
        basis = build(kernel, summary, grid)
        blocks.append(reduced_matrices(kernel, basis, dual_basis(kernel, basis)))

    logger.info("decomposition with d_c = %d, d_u = %d", blocks[0].d, blocks[1].d)

    return ReducedSystem(kernel, grid, blocks[0], blocks[1], summary)

def project_center(reduced, phi):
    # exact for piecewise linear phi; a jump in phi is spread over one grid step and biases z by O(h),
    # z = 0.641 against 1 - 1/e = 0.632 for the indicator of [-1, 0] at h = 0.05
    z = reduced.center.coordinates(phi)
    return z, reduced.center.basis.combine(z)

def project_unstable(reduced, phi):
    u = reduced.unstable.coordinates(phi)
    return u, reduced.unstable.basis.combine(u)

def project_su(reduced, phi):
    # stable part phi - Pi^c phi - Pi^u phi
    _, center_part = project_center(reduced, phi)
    _, unstable_part = project_unstable(reduced, phi)
    return phi - center_part - unstable_part

def project_hyperbolic(reduced, phi):
    # Pi^su phi = phi - Pi^c phi, the complement of the center space
    _, center_part = project_center(reduced, phi)
    return phi - center_part

def buffer_coordinates(block, buffer, count):
    # <<Psi, x_{t_j}>> for the windows buffer[j .. j + N] of a chronological buffer, shape (count, d)
    n = block.dual.rows.shape[1] - 1
    coords = np.zeros((count, block.d), dtype = complex)

    for i in range(block.d):
        for c in range(buffer.shape[1]):
            coords[:, i] += signal.fftconvolve(buffer[:n + count, c], block.dual.rows[i, :, c])[n:n + count]

    return coords

def trajectory_coordinates(block, trajectory):
    return buffer_coordinates(block, trajectory.buffer, trajectory.steps + 1)

def stable_norms(reduced, buffer, count):
    # ||Pi^s x_{t_j}|| along a chronological buffer
    blocks = [b for b in (reduced.center, reduced.unstable) if b.d > 0]

    if not blocks:
        return window_norms(reduced.grid, buffer, count)

    basis_values = np.concatenate([b.basis.values for b in blocks])
    coeffs = -np.concatenate([buffer_coordinates(b, buffer, count) for b in blocks], axis = 1)

    return window_norms(reduced.grid, buffer, count, basis_values, coeffs)

@dataclass
class DecompositionConstants:
    C: float
    C1: float
    sample_size: int
    fit_window: float
    flagged: bool = False

def estimate_decomposition_constants(reduced, kernel, alpha, eps_gap, rng, samples = 24, fit_window = 20.0):
    # empirical lower bounds used as working values for C and C1
    grid = reduced.grid
    members = sample_segments(grid, kernel.dim, samples, rng, real = kernel.is_real)
    C1 = 1.0
    C = 1.0
    flagged = False
    last = grid.snap(fit_window)
    times = grid.h * np.arange(last + 1)

    for phi in members:
        size = phi.norm()

        if size == 0.0:
            continue

        z, center_part = project_center(reduced, phi)
        u, unstable_part = project_unstable(reduced, phi)
        stable_part = phi - center_part - unstable_part
        stable_size = stable_part.norm()
        C1 = max(C1, (stable_size + center_part.norm() + unstable_part.norm()) / size)

        if stable_size > 1e-12 * size:
            trajectory = homogeneous_trajectory(kernel, stable_part, last * grid.h)
            ratios = stable_norms(reduced, trajectory.buffer, last + 1) * np.exp(alpha * times) / stable_size
            best = int(np.argmax(ratios))

            if best == last and ratios[best] > 1.0 + 1e-9:
                flagged = True

            C = max(C, float(ratios[best]))

        coarse = times[::max(1, len(times) // 50)]

        # ||T^c(t)|| <= C exp(eps |t|) for all t, ||T^u(t)|| <= C exp(alpha t) for t <= 0
        if reduced.center.d > 0 and center_part.norm() > 1e-12 * size:
            for t in np.concatenate([coarse, -coarse]):
                moved = reduced.center.basis.combine(reduced.center.flow(t, z)).norm()
                C = max(C, moved * np.exp(-eps_gap * abs(t)) / center_part.norm())

        if reduced.unstable.d > 0 and unstable_part.norm() > 1e-12 * size:
            for t in coarse:
                moved = reduced.unstable.basis.combine(reduced.unstable.flow(-t, u)).norm()
                C = max(C, moved * np.exp(alpha * t) / unstable_part.norm())

    if flagged:
        logger.warning("decay constant C attained at the end of the fit window %g", fit_window)

    logger.info("constants C = %g, C1 = %g from %d segments", C, C1, len(members))

    return DecompositionConstants(C, C1, len(members), fit_window, flagged)
