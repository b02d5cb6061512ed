import logging
import math
from dataclasses import dataclass, field
import numpy as np
from scipy import optimize
from kernel import laplace_transform, laplace_derivative

logger = logging.getLogger(__name__)

SPLIT_FRACTIONS = (0.4987, 0.5331) # off-center so that symmetric roots never sit on a cut

class SpectralError(RuntimeError):
    pass

class BoundaryRootError(SpectralError):
    pass

class RootNonconvergenceError(SpectralError):
    pass

class DegenerateGapError(SpectralError):
    pass

@dataclass(frozen = True)
class Rectangle:
    re_min: float
    re_max: float
    im_min: float
    im_max: float

    def __post_init__(self):
        if not (self.re_min < self.re_max and self.im_min < self.im_max):
            raise ValueError("require re_min < re_max and im_min < im_max")

    @property
    def width(self):
        return self.re_max - self.re_min

    @property
    def height(self):
        return self.im_max - self.im_min

    @property
    def center(self):
        return complex(0.5 * (self.re_min + self.re_max), 0.5 * (self.im_min + self.im_max))

    @property
    def diameter(self):
        return math.hypot(self.width, self.height)

    def corners(self):
        # counterclockwise from the lower left corner
        return [complex(self.re_min, self.im_min), complex(self.re_max, self.im_min),
                complex(self.re_max, self.im_max), complex(self.re_min, self.im_max)]

    def contains(self, lam):
        return self.re_min <= lam.real <= self.re_max and self.im_min <= lam.imag <= self.im_max

    def split(self, fraction):
        if self.width >= self.height:
            cut = self.re_min + fraction * self.width
            return (Rectangle(self.re_min, cut, self.im_min, self.im_max),
                    Rectangle(cut, self.re_max, self.im_min, self.im_max))
        else:
            cut = self.im_min + fraction * self.height
            return (Rectangle(self.re_min, self.re_max, self.im_min, cut),
                    Rectangle(self.re_min, self.re_max, cut, self.im_max))

    @classmethod
    def around(cls, lam, radius):
        return cls(lam.real - radius, lam.real + radius, lam.imag - radius, lam.imag + radius)

    def as_dict(self):
        return {"re_min": self.re_min, "re_max": self.re_max, "im_min": self.im_min, "im_max": self.im_max}

@dataclass(frozen = True)
class CharacteristicRoot:
    value: complex
    multiplicity: int
    det_residual: float
    classification: str

@dataclass
class SpectralSummary:
    roots: list
    region: Rectangle
    center_tol: float = 1e-8
    counts: dict = field(default_factory = dict)

    def __post_init__(self):
        self.roots = sorted(self.roots, key = lambda r: (r.value.real, r.value.imag))
        self.counts = {kind: sum(r.multiplicity for r in self.roots if r.classification == kind)
                for kind in ("unstable", "center", "stable")}

    @property
    def hyperbolic(self):
        return self.counts["center"] == 0

    @property
    def n_u(self):
        return self.counts["unstable"]

    @property
    def n_c(self):
        return self.counts["center"]

    @property
    def n_s(self):
        return self.counts["stable"]

    def roots_of(self, classification):
        return [r for r in self.roots if r.classification == classification]

def characteristic_matrix(kernel, lam):
    return np.eye(kernel.dim, dtype = complex) - laplace_transform(kernel, lam)

def det_characteristic(kernel, lam):
    return complex(np.linalg.det(characteristic_matrix(kernel, lam)))

def det_derivative(kernel, lam):
    # d/dlam det Delta as the sum over rows of determinants with one row differentiated
    delta = characteristic_matrix(kernel, lam)
    slope = -laplace_derivative(kernel, lam)
    total = 0j

    for i in range(kernel.dim):
        replaced = delta.copy()
        replaced[i] = slope[i]
        total += np.linalg.det(replaced)

    return complex(total)

def null_vectors(kernel, lam):
    # unit right vector v with Delta v = 0 and unit left row w with w Delta = 0
    u, _, vh = np.linalg.svd(characteristic_matrix(kernel, lam))
    return vh[-1].conj(), u[:, -1].conj()

def classify(lam, center_tol):
    if abs(lam.real) <= center_tol:
        return "center"

    return "unstable" if lam.real > 0.0 else "stable"

def _checked_det(kernel, lam, boundary_tol):
    value = det_characteristic(kernel, lam)

    if abs(value) < boundary_tol:
        raise BoundaryRootError("det Delta vanishes near the contour point %s" % lam)

    return value

def _edge_phase(kernel, a, b, fa, fb, boundary_tol, depth = 0):
    # phase increment of det Delta along [a, b], refined until every jump is below pi / 3
    jump = np.angle(fb / fa)

    if abs(jump) < math.pi / 3.0:
        return jump

    if depth >= 40:
        raise BoundaryRootError("phase of det Delta does not resolve between %s and %s" % (a, b))

    mid = 0.5 * (a + b)
    fm = _checked_det(kernel, mid, boundary_tol)

    return _edge_phase(kernel, a, mid, fa, fm, boundary_tol, depth + 1) + _edge_phase(kernel, mid, b, fm, fb, boundary_tol, depth + 1)

def count_roots(kernel, rect, boundary_tol = 1e-12, points_per_side = 32):
    if rect.re_min <= -kernel.rho:
        raise ValueError("require rect inside Re lambda > -rho")

    corners = rect.corners()
    path = []

    for start, end in zip(corners, corners[1:] + corners[:1]):
        path.extend(start + (end - start) * np.arange(points_per_side) / points_per_side)

    path.append(path[0])
    values = [_checked_det(kernel, lam, boundary_tol) for lam in path]
    total = 0.0

    for i in range(len(path) - 1):
        total += _edge_phase(kernel, path[i], path[i + 1], values[i], values[i + 1], boundary_tol)

    winding = total / (2.0 * math.pi)

    if abs(winding - round(winding)) > 0.1:
        raise BoundaryRootError("winding number %g is not an integer on %s" % (winding, rect))

    return int(round(winding))

def _transform_bound(kernel, distance):
    # sum ||C_j|| p_j! / d_j^(p_j + 1) with d_j a lower bound on |lam + a_j|
    total = 0.0

    for (c, p, a), d in zip(kernel.terms, distance):
        total += float(np.linalg.norm(c, 2)) * math.factorial(p) / d ** (p + 1)

    return total

def default_rectangle(kernel, margin = 0.05):
    # no root where the transform bound drops below one
    re_min = -kernel.rho + margin
    real_bound = lambda x: _transform_bound(kernel, [x + a.real for a in kernel.rates]) - 1.0

    if len(kernel.rates) == 0 or real_bound(re_min) < 0.0:
        x0 = re_min
    else:
        upper = re_min + 1.0

        while real_bound(upper) > 0.0:
            upper = re_min + 2.0 * (upper - re_min)

        x0 = optimize.brentq(real_bound, re_min, upper)

    def imag_bound(y):
        return _transform_bound(kernel, [max(y - abs(a.imag), re_min + a.real) for a in kernel.rates]) - 1.0

    if len(kernel.rates) == 0 or imag_bound(0.0) < 0.0:
        y0 = 0.0
    else:
        upper = 1.0 + max(abs(a.imag) for a in kernel.rates)

        while imag_bound(upper) > 0.0:
            upper *= 2.0

        y0 = optimize.brentq(imag_bound, 0.0, upper)

    return Rectangle(re_min, max(x0, re_min) + 1.0, -(y0 + 1.0), y0 + 1.0)

def _polish(kernel, start, multiplicity, tol = 1e-14):
    try:
        if multiplicity == 1:
            return complex(optimize.newton(lambda z: det_characteristic(kernel, z), start,
                    fprime = lambda z: det_derivative(kernel, z), tol = tol, maxiter = 100))

        # det / det' has only simple zeros; the secant start must be given for complex iterates
        ratio = lambda z: det_characteristic(kernel, z) / det_derivative(kernel, z)
        return complex(optimize.newton(ratio, start, x1 = start + 1e-4, tol = tol, maxiter = 200))
    except (RuntimeError, ZeroDivisionError, ValueError):
        return None

def _split_counts(kernel, rect, count, boundary_tol):
    for fraction in SPLIT_FRACTIONS:
        try:
            children = rect.split(fraction)
            counts = [count_roots(kernel, child, boundary_tol) for child in children]
        except BoundaryRootError:
            continue

        if sum(counts) == count:
            return list(zip(children, counts))

        logger.debug("split of %s lost roots (%d != %d)", rect, sum(counts), count)

    raise RootNonconvergenceError("no clean split of %s holding %d roots" % (rect, count))

def _isolate(kernel, rect, count, depth, options):
    if count == 0:
        return []

    if depth > options["max_depth"]:
        raise RootNonconvergenceError("subdivision depth %d exceeded near %s" % (options["max_depth"], rect.center))

    root = _polish(kernel, rect.center, count)

    if root is not None and rect.contains(root):
        residual = abs(det_characteristic(kernel, root))
        accepted = residual <= options["root_tol"]

        if accepted and count > 1:
            # a cluster is one multiple root only if a tiny box around it holds all of it
            try:
                accepted = count_roots(kernel, Rectangle.around(root, 1e-4), options["boundary_tol"] * 1e-6) == count
            except BoundaryRootError:
                accepted = False

        if accepted:
            if count > 1:
                logger.warning("multiple root %s with multiplicity %d", root, count)

            return [CharacteristicRoot(root, count, residual, classify(root, options["center_tol"]))]

    logger.debug("depth %d: splitting %s with %d roots", depth, rect, count)
    roots = []

    for child, child_count in _split_counts(kernel, rect, count, options["boundary_tol"]):
        roots.extend(_isolate(kernel, child, child_count, depth + 1, options))

    return roots

def find_characteristic_roots(kernel, rect = None, center_tol = 1e-8, root_tol = 1e-10, boundary_tol = 1e-12, max_depth = 40, margin = 0.05):
    if rect is None:
        rect = default_rectangle(kernel, margin)

    options = {"center_tol": center_tol, "root_tol": root_tol, "boundary_tol": boundary_tol, "max_depth": max_depth}
    total = count_roots(kernel, rect, boundary_tol)
    roots = _isolate(kernel, rect, total, 0, options)
    summary = SpectralSummary(roots, rect, center_tol)

    logger.info("%d characteristic roots in %s: %s", total, rect, summary.counts)

    return summary

def spectral_gap_constants(summary, kernel, margin = 0.05, safety = 0.01):
    bounds = [kernel.rho - margin]

    for root in summary.roots:
        if root.classification == "center":
            continue

        if abs(root.value.real) < 10.0 * summary.center_tol:
            raise DegenerateGapError("root %s is neither central nor separated from the imaginary axis" % root.value)

        bounds.append(abs(root.value.real))

    alpha = min(bounds) - safety

    if alpha <= 0.0:
        raise DegenerateGapError("no positive spectral gap, alpha = %g" % alpha)

    return alpha, alpha / 10.0
