import functools
import logging
import math
from multiprocessing.pool import ThreadPool
from dataclasses import dataclass, field
import numpy as np
from phasespace import BlowupError, solve_nonlinear, random_segment, fit_exponential_rate
from manifold import cutoff_apply

logger = logging.getLogger(__name__)

# sample points for the cubic fit, as fractions of the validity radius
CUBIC_FRACTIONS = (0.2, 0.4, 0.6, 0.8)
SPHERE_FRACTIONS = (1.0 / 50.0, 1.0 / 20.0, 1.0 / 10.0)

STABLE_CLASSES = ("uniformly_asymptotically_stable", "exponentially_stable", "stable")

class DimensionError(ValueError):
    pass

class CentralSystem:
    # z' = G_c z + H_c f(Phi_c z + F_*(Phi_c z)) on the center coordinates
    def __init__(self, reduced, manifold_map, f, radius_r):
        if reduced.d_c < 1:
            raise DimensionError("require at least one center root")

        self.reduced = reduced
        self.map = manifold_map
        self.f = f
        self.radius_r = float(radius_r)

    @property
    def d_c(self):
        return self.reduced.d_c

    @property
    def cfg(self):
        return self.map.cfg

    def amplitude(self, z):
        return self.reduced.basis.combine(z).norm()

def central_rhs(system, z, cutoff = False):
    # the central equation inside the validity radius, its cutoff version beyond it or with cutoff = True
    reduced = system.reduced
    z = np.asarray(z, dtype = complex).reshape(system.d_c)
    phi = reduced.basis.combine(z) + system.map(z)

    if cutoff or system.amplitude(z) > system.radius_r:
        value = cutoff_apply(system.cfg, reduced, system.f, phi)
    else:
        value = system.f.evaluate(phi)

    return reduced.G_c @ z + reduced.H_c @ value

def cubic_points(system):
    # real coordinates z with ||Phi_c z|| = fraction * r
    size = system.reduced.basis.columns[0].norm()
    return tuple(fraction * system.radius_r / size for fraction in CUBIC_FRACTIONS)

def fit_cubic_coefficient(system, points = None):
    # least squares of rhs(z) - G_c z against c z^3
    if system.d_c != 1:
        raise DimensionError("require d_c = 1, got %d" % system.d_c)

    z = np.array(cubic_points(system) if points is None else points, dtype = float)
    nonlinear = np.array([central_rhs(system, [s])[0] - system.reduced.G_c[0, 0] * s for s in z])
    design = (z ** 3).astype(complex)[:, np.newaxis]
    solution, _, _, _ = np.linalg.lstsq(design, nonlinear, rcond = None)
    coefficient = complex(solution[0])
    residual = float(np.max(np.abs(nonlinear - coefficient * z ** 3)))

    return coefficient, residual

@dataclass
class CentralOrbit:
    times: np.ndarray
    states: np.ndarray
    amplitudes: np.ndarray
    exit_time: float = None
    stopped: bool = False

def integrate_central(system, z0, t_end, step = None, stop_radius = None, cutoff = False):
    # classical RK4 with fixed step, flagging the exit from the validity radius
    h = min(system.reduced.grid.h, 0.01) if step is None else float(step)
    steps = max(1, int(math.ceil(t_end / h - 1e-9)))
    rhs = lambda z: central_rhs(system, z, cutoff)

    z = np.asarray(z0, dtype = complex).reshape(system.d_c)
    times = [0.0]
    states = [z]
    amplitudes = [system.amplitude(z)]
    exit_time = None
    stopped = False

    for j in range(1, steps + 1):
        k1 = rhs(z)
        k2 = rhs(z + 0.5 * h * k1)
        k3 = rhs(z + 0.5 * h * k2)
        k4 = rhs(z + h * k3)
        z = z + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        size = system.amplitude(z)

        times.append(j * h)
        states.append(z)
        amplitudes.append(size)

        if exit_time is None and size > system.radius_r:
            exit_time = j * h
            logger.debug("central orbit leaves the validity radius at t = %g", exit_time)

        if stop_radius is not None and size > stop_radius:
            stopped = True
            break

    return CentralOrbit(np.array(times), np.array(states), np.array(amplitudes), exit_time, stopped)

@dataclass
class StabilityVerdict:
    classification: str
    evidence: dict = field(default_factory = dict)
    orbits: list = field(default_factory = list, repr = False)

def sphere_directions(system, count):
    # real directions for real systems, conjugate symmetric ones for conjugate pairs
    d = system.d_c
    lambdas = system.reduced.basis.lambdas
    real_system = system.f.real and system.reduced.kernel.is_real
    angles = 2.0 * np.pi * np.arange(count) / count

    if d == 1 and real_system and lambdas[0].imag == 0.0:
        return [np.array([1.0 + 0j]), np.array([-1.0 + 0j])]

    if d == 1:
        return [np.array([np.exp(1j * a)]) for a in angles]

    if d == 2 and real_system and abs(lambdas[0] - lambdas[1].conjugate()) < 1e-8:
        return [np.array([np.exp(1j * a), np.exp(-1j * a)]) for a in angles]

    rng = np.random.default_rng(0)
    return [rng.normal(size = d) + 1j * rng.normal(size = d) for _ in range(count)]

def _leading_order(system, radius, direction):
    # |rhs(z) - G_c z| ~ a |z|^q from two radii
    samples = []

    for fraction in (0.5, 1.0):
        z = direction * (fraction * radius / system.amplitude(direction))
        value = np.linalg.norm(central_rhs(system, z) - system.reduced.G_c @ z)
        samples.append((np.linalg.norm(z), value))

    (s1, v1), (s2, v2) = samples

    if v1 <= 0.0 or v2 <= 0.0:
        return 0.0, 1.0

    q = math.log(v2 / v1) / math.log(s2 / s1)
    return v2 / s2 ** q, q

def classify_zero_stability(system, horizon_factor = 100.0, max_steps = 20000, min_steps = 100, directions = 8):
    radius = system.radius_r
    evidence = {"radii": [], "decay_ratios": [], "escaped": [], "horizons": []}
    orbits = []
    stable = True
    unstable = False

    for fraction in SPHERE_FRACTIONS:
        sphere = fraction * radius

        for direction in sphere_directions(system, directions):
            z0 = direction * (sphere / system.amplitude(direction))
            a, q = _leading_order(system, sphere, direction)

            if a > 0.0:
                horizon = horizon_factor / (a * np.linalg.norm(z0) ** (q - 1.0))
            else:
                horizon = horizon_factor * 100.0

            fine = min(system.reduced.grid.h, 0.01)
            steps = int(np.clip(math.ceil(horizon / fine), min_steps, max_steps))
            orbit = integrate_central(system, z0, horizon, step = horizon / steps, stop_radius = radius)
            orbits.append(orbit)

            start = orbit.amplitudes[0]
            ratio = orbit.amplitudes[-1] / start
            escaped = orbit.stopped or orbit.exit_time is not None

            evidence["radii"].append(sphere)
            evidence["decay_ratios"].append(float(ratio))
            evidence["escaped"].append(bool(escaped))
            evidence["horizons"].append(float(horizon))

            if escaped:
                unstable = True

            if ratio > 0.5 or np.max(orbit.amplitudes) > 2.0 * start:
                stable = False

    if system.d_c == 1:
        evidence["cubic_coefficient"] = fit_cubic_coefficient(system)[0]

    if unstable:
        classification = "unstable"
    elif stable:
        classification = "uniformly_asymptotically_stable"
    else:
        classification = "inconclusive"

    logger.info("central equation verdict: %s", classification)

    return StabilityVerdict(classification, evidence, orbits)

@dataclass
class EnsembleResult:
    classification: str
    members: list
    dominant_rate: float

def _ensemble_members(kernel, reduced, amplitudes, random_members, rng):
    grid = reduced.grid
    directions = []

    for block in (reduced.center, reduced.unstable):
        for column in block.basis.columns:
            directions.append(column.replace(column.values.real))

            if np.any(column.values.imag != 0.0):
                directions.append(column.replace(column.values.imag))

    if not directions:
        directions.append(grid.constant(np.ones(kernel.dim)))

    directions = [d * (1.0 / d.norm()) for d in directions if d.norm() > 0.0]
    directions += [-d for d in directions]

    for _ in range(random_members):
        segment = random_segment(grid, kernel.dim, rng, real = kernel.is_real)
        directions.append(segment * (1.0 / segment.norm()))

    return [(a, a * d) for a in amplitudes for d in directions]

def _run_member(kernel, f, t_end, escape_radius, member):
    amplitude, phi = member
    start = phi.norm()

    try:
        trajectory = solve_nonlinear(kernel, 0.0, phi, f, t_end, bound = escape_radius)
        blowup = False
    except BlowupError as error:
        logger.debug("ensemble member escaped: %s", error)
        trajectory = error.trajectory
        blowup = True

    norms = trajectory.norms()
    times = trajectory.times

    crossed = np.nonzero(norms > escape_radius)[0]
    escaped = blowup or len(crossed) > 0
    end = max(1, crossed[0]) if len(crossed) else len(times)

    if escaped:
        window = slice(end // 3, max(end // 3 + 2, 2 * end // 3))
    else:
        window = slice(len(times) // 2, len(times))

    rate = fit_exponential_rate(times[window], norms[window])
    decayed = (not escaped) and norms[-1] <= 0.5 * start

    return {"amplitude": float(amplitude), "initial_norm": float(start), "final_norm": float(norms[end - 1]),
            "escaped": bool(escaped), "decayed": bool(decayed), "rate": rate,
            "escape_time": float(times[end - 1]) if escaped else None}

def simulate_ensemble(kernel, f, reduced, rng, amplitudes = (0.1,), t_end = 100.0, random_members = 2, escape_radius = 1.0, workers = 1):
    # members are drawn from rng before any of them runs, and the pool keeps their order
    grid = reduced.grid
    t_end = grid.snap(t_end) * grid.h
    ensemble = _ensemble_members(kernel, reduced, amplitudes, random_members, rng)
    run = functools.partial(_run_member, kernel, f, t_end, escape_radius)

    if workers <= 1 or len(ensemble) <= 1:
        members = [run(member) for member in ensemble]
    else:
        with ThreadPool(min(workers, len(ensemble))) as pool:
            members = pool.map(run, ensemble)

    if any(m["escaped"] for m in members):
        classification = "unstable"
    elif all(m["decayed"] for m in members):
        classification = "stable"
    else:
        classification = "inconclusive"

    rates = [m["rate"] for m in members if not math.isnan(m["rate"])]
    dominant = max(rates) if rates else float("nan")

    logger.info("full equation ensemble of %d members: %s, dominant rate %g", len(members), classification, dominant)

    return EnsembleResult(classification, members, dominant)

def linearized_verdict(summary):
    # unstable roots decide instability; without center roots the linearization decides stability
    if summary.n_u > 0:
        return "unstable"

    if summary.hyperbolic:
        return "exponentially_stable"

    return None

def normalize_verdict(classification):
    if classification in STABLE_CLASSES:
        return "stable"

    return classification

@dataclass
class ReductionReport:
    branch: str
    central: StabilityVerdict
    full: EnsembleResult
    agreement: bool

def reduction_report(system, kernel, f, summary, reduced, rng, **ensemble):
    linear = linearized_verdict(summary)

    if linear is not None:
        central = StabilityVerdict(linear, {"n_u": summary.n_u, "n_c": summary.n_c, "n_s": summary.n_s})
        branch = "linearized"
    else:
        if system is None:
            raise ValueError("require a central system when center roots are present")

        central = classify_zero_stability(system)
        branch = "center"

    full = simulate_ensemble(kernel, f, reduced, rng, **ensemble)
    agreement = normalize_verdict(central.classification) == normalize_verdict(full.classification)

    if not agreement:
        logger.warning("reduced verdict %s disagrees with full equation verdict %s", central.classification, full.classification)

    return ReductionReport(branch, central, full, agreement)
