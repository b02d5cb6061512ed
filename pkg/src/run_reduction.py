import argparse
import logging
import os
import sys
import time
import numpy as np
from kernel import KernelError, check_admissibility
from spectral import SpectralError, find_characteristic_roots, spectral_gap_constants
from phasespace import BlowupError, check_nonlinearity, random_segment, solve_nonlinear, write_trajectory_csv
from decomposition import DecompositionError, decompose, estimate_decomposition_constants, project_su
from manifold import (ManifoldError, ManifoldMap, select_delta, validity_radius, sampled_lipschitz,
        attractivity_constants, attractivity_diagnostics, AttractivityHypothesisError)
from central import (CentralSystem, classify_zero_stability, linearized_verdict, normalize_verdict,
        reduction_report, sphere_directions)
from config import ConfigError, load_config
import report

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SPECTRUM = 2
EXIT_MANIFOLD = 3
EXIT_DISAGREEMENT = 4

class Pipeline:
    # stages computed on demand and shared between the commands
    def __init__(self, config, rng):
        self.config = config
        self.rng = rng
        self.kernel = config.kernel()
        self.norms = check_admissibility(self.kernel)
        self.f = config.nonlinearity(self.kernel)
        self.grid = config.grid(self.kernel)
        check_nonlinearity(self.f, self.grid, self.kernel.dim)
        self._summary = None
        self._reduced = None
        self._constants = None
        self._cutoff = None
        self._map = None
        self._radius = None

    @property
    def summary(self):
        if self._summary is None:
            values = self.config["spectrum"]
            self._summary = find_characteristic_roots(self.kernel, self.config.search_rectangle(self.kernel),
                    center_tol = values["center_tol"], root_tol = values["root_tol"], boundary_tol = values["boundary_tol"],
                    max_depth = values["max_depth"], margin = values["margin"])
            self.alpha, self.eps_gap = spectral_gap_constants(self._summary, self.kernel, values["margin"], values["safety"])

        return self._summary

    @property
    def reduced(self):
        if self._reduced is None:
            self._reduced = decompose(self.kernel, self.grid, self.summary)

        return self._reduced

    @property
    def constants(self):
        if self._constants is None:
            values = self.config["manifold"]
            self._constants = estimate_decomposition_constants(self.reduced, self.kernel, self.alpha, self.eps_gap, self.rng,
                    samples = values["constant_samples"], fit_window = values["fit_window"])

        return self._constants

    @property
    def cutoff(self):
        if self._cutoff is None:
            values = self.config["manifold"]
            constants = {"C": self.constants.C, "C1": self.constants.C1, "alpha": self.alpha, "eps_gap": self.eps_gap, "eta": values["eta"]}
            self._cutoff = select_delta(constants, self.f, self.reduced, self.rng, delta_ceiling = values["delta_ceiling"],
                    samples = values["constant_samples"], path_tail_tol = self.config["grid"]["path_tail_tol"],
                    fp_tol = values["fp_tol"], max_iterations = values["max_iterations"])

        return self._cutoff

    @property
    def manifold_map(self):
        # the center manifold when there are center roots, otherwise the unstable one
        if self._map is None:
            kind = "center" if self.reduced.d_c else "unstable"
            self._map = ManifoldMap(self.cutoff, self.reduced, self.f, kind, divisions = self.config["manifold"]["lattice_points"])

        return self._map

    @property
    def radius(self):
        if self._radius is None:
            self._radius = validity_radius(self.manifold_map, self.rng)

        return self._radius

    def central_system(self):
        return CentralSystem(self.reduced, self.manifold_map, self.f, self.radius)

    def ensemble_settings(self):
        values = self.config["ensemble"]
        return {"amplitudes": values["amplitudes"], "t_end": values["t_end"], "random_members": values["random_members"],
                "escape_radius": values["escape_radius"], "workers": values["workers"]}

    def ledger(self, attractivity = None):
        alpha = getattr(self, "alpha", None)
        eps_gap = getattr(self, "eps_gap", None)
        return report.constants_ledger(alpha, eps_gap, self._constants, self._cutoff, attractivity)

def _root_entry(root):
    return {"value": root.value, "multiplicity": root.multiplicity, "det_residual": root.det_residual,
            "classification": root.classification}

def _spectrum_section(pipeline):
    summary = pipeline.summary
    return {"roots": [_root_entry(r) for r in summary.roots], "counts": summary.counts, "hyperbolic": summary.hyperbolic,
            "region": summary.region.as_dict(), "norm_1_rho": pipeline.norms[0], "norm_inf_rho": pipeline.norms[1]}

def _base_report(pipeline, command):
    return {"command": command, "config": os.path.basename(pipeline.config.path), "config_sha256": pipeline.config.sha256,
            "seed": pipeline.config.seed, "rng": report.RNG_ALGORITHM, "settings": pipeline.config.as_dict()}

def _finish(pipeline, command, args, body, attractivity = None):
    result = _base_report(pipeline, command)
    result.update(body)
    result["constants"] = pipeline.ledger(attractivity)
    path = report.output_path(args.out, pipeline.config.path, "%s.json" % command)
    report.write_json(path, result)
    _print(args, "Report saved in\t%s" % path)
    return result

def _print(args, line):
    if not args.quiet:
        print(line)

def cmd_spectrum(pipeline, args):
    body = {"spectrum": _spectrum_section(pipeline), "alpha": pipeline.alpha, "eps_gap": pipeline.eps_gap}
    summary = pipeline.summary

    _print(args, "Characteristic roots\t%d" % len(summary.roots))

    for root in summary.roots:
        _print(args, "Root\t%s\t%d\t%s" % (root.value, root.multiplicity, root.classification))

    _print(args, "Hyperbolic\t%s" % summary.hyperbolic)
    _finish(pipeline, "spectrum", args, body)
    return EXIT_OK

def _block_section(block):
    return {"lambdas": block.basis.lambdas, "vectors": block.basis.vectors, "G": block.G, "H": block.H,
            "extrapolation_gap": block.extrapolation_gap, "gram_determinant": block.basis.gram_determinant(),
            "dual_residual": block.dual.residual}

def cmd_decompose(pipeline, args):
    reduced = pipeline.reduced
    constants = pipeline.constants
    body = {"spectrum": _spectrum_section(pipeline), "d_c": reduced.d_c, "d_u": reduced.d_u,
            "center": _block_section(reduced.center), "unstable": _block_section(reduced.unstable),
            "constant_fit": {"sample_size": constants.sample_size, "fit_window": constants.fit_window, "flagged": constants.flagged}}

    columns = [reduced.grid.theta]
    header = ["theta"]

    for name, block in (("phi_c", reduced.center), ("phi_u", reduced.unstable)):
        for i, values in enumerate(block.basis.values):
            for c in range(reduced.kernel.dim):
                columns += [values[:, c].real, values[:, c].imag]
                header += ["re_%s%d_%d" % (name, i + 1, c + 1), "im_%s%d_%d" % (name, i + 1, c + 1)]

    path = report.output_path(args.out, pipeline.config.path, "basis.csv")
    report.write_columns(path, header, columns)

    _print(args, "Center dimension\t%d" % reduced.d_c)
    _print(args, "Unstable dimension\t%d" % reduced.d_u)
    _print(args, "C\t%f" % constants.C)
    _print(args, "C1\t%f" % constants.C1)
    _print(args, "Basis saved in\t%s" % path)
    _finish(pipeline, "decompose", args, body)
    return EXIT_OK

def cmd_manifold(pipeline, args):
    if pipeline.reduced.d_c == 0 and pipeline.reduced.d_u == 0:
        # the stable manifold of a hyperbolic sink is a neighborhood of zero; only constants are reported
        cutoff = pipeline.cutoff
        body = {"spectrum": _spectrum_section(pipeline), "cutoff": cutoff.as_dict(), "kind": "stable", "lattice": []}
        _print(args, "Delta\t%f" % cutoff.delta)
        _finish(pipeline, "manifold", args, body, attractivity_constants(cutoff))
        return EXIT_OK

    manifold_map = pipeline.manifold_map
    cutoff = pipeline.cutoff
    basis = manifold_map.block.basis
    rows = manifold_map.axis_lattice()
    d = manifold_map.domain_dim
    header = ["axis"] + ["re_z%d" % (i + 1) for i in range(d)] + ["im_z%d" % (i + 1) for i in range(d)] + ["norm_F", "lipschitz"]
    data = []
    previous = None
    worst = 0.0

    for axis, index, psi, value in rows:
        slope = 0.0

        if previous is not None and previous[0] == axis:
            gap = basis.combine(psi - previous[1]).norm()
            slope = (value - previous[2]).norm() / gap if gap > 0.0 else 0.0

        worst = max(worst, slope)
        data.append([axis] + list(psi.real) + list(psi.imag) + [value.norm(), slope])
        previous = (axis, psi, value)

    path = report.output_path(args.out, pipeline.config.path, "lattice.csv")
    report.write_columns(path, header, [np.array(column) for column in zip(*data)])

    attractivity = attractivity_constants(cutoff)
    body = {"spectrum": _spectrum_section(pipeline), "cutoff": cutoff.as_dict(), "kind": manifold_map.kind,
            "validity_radius": pipeline.radius, "lattice_lipschitz": worst,
            "sampled_lipschitz": sampled_lipschitz(manifold_map, pipeline.rng, pairs = 20),
            "solves": manifold_map.solves,
            "attractivity": {"K": attractivity.K_const, "mu": attractivity.mu, "mu_prime": attractivity.mu_prime,
                    "beta0": attractivity.beta0, "K_hat": attractivity.K_hat, "valid": attractivity.valid}}

    _print(args, "Delta\t%f" % cutoff.delta)
    _print(args, "Lipschitz constant\t%f" % cutoff.lipschitz)
    _print(args, "Validity radius\t%f" % pipeline.radius)
    _print(args, "Lattice saved in\t%s" % path)
    _finish(pipeline, "manifold", args, body, attractivity)
    return EXIT_OK

def _verdict_section(verdict):
    return {"classification": verdict.classification, "evidence": verdict.evidence}

def cmd_central(pipeline, args):
    linear = linearized_verdict(pipeline.summary)

    if linear is not None:
        body = {"spectrum": _spectrum_section(pipeline), "branch": "linearized", "verdict": {"classification": linear, "evidence": {}}}
        _print(args, "Verdict\t%s" % linear)
        _finish(pipeline, "central", args, body)
        return EXIT_OK

    values = pipeline.config["central"]
    system = pipeline.central_system()
    verdict = classify_zero_stability(system, horizon_factor = values["horizon_factor"], max_steps = values["max_steps"],
            directions = values["ensemble_directions"])

    d = system.d_c
    header = ["orbit", "t"] + ["re_z%d" % (i + 1) for i in range(d)] + ["im_z%d" % (i + 1) for i in range(d)] + ["amplitude"]
    blocks = []

    for k, orbit in enumerate(verdict.orbits):
        keep = np.unique(np.linspace(0, len(orbit.times) - 1, min(len(orbit.times), 500)).astype(int))
        blocks.append(np.column_stack([np.full(len(keep), k), orbit.times[keep], orbit.states[keep].real,
                orbit.states[keep].imag, orbit.amplitudes[keep]]))

    path = report.output_path(args.out, pipeline.config.path, "central.csv")
    report.write_columns(path, header, list(np.concatenate(blocks).T))

    body = {"spectrum": _spectrum_section(pipeline), "branch": "center", "verdict": _verdict_section(verdict),
            "G_c": system.reduced.G_c, "H_c": system.reduced.H_c, "validity_radius": system.radius_r}

    _print(args, "Verdict\t%s" % verdict.classification)
    _print(args, "Orbits saved in\t%s" % path)
    _finish(pipeline, "central", args, body)
    return EXIT_OK

def _initial_segment(pipeline, values):
    grid = pipeline.grid
    dim = pipeline.kernel.dim

    if values["initial"] == "basis":
        columns = pipeline.reduced.center.basis.columns + pipeline.reduced.unstable.basis.columns

        if columns:
            phi = columns[0].replace(columns[0].values.real)
        else:
            logger.warning("no center or unstable basis; starting from a constant history")
            phi = grid.constant(np.ones(dim))
    elif values["initial"] == "random":
        phi = random_segment(grid, dim, pipeline.rng, real = pipeline.kernel.is_real)
    else:
        phi = grid.constant(np.ones(dim))

    return phi * (values["amplitude"] / phi.norm())

def cmd_simulate(pipeline, args):
    values = pipeline.config["simulate"]
    phi = _initial_segment(pipeline, values)
    start_time = time.time()

    try:
        trajectory = solve_nonlinear(pipeline.kernel, 0.0, phi, pipeline.f, values["t_end"], bound = values["escape_radius"])
        escape_time = None
    except BlowupError as error:
        trajectory = error.trajectory
        escape_time = error.time

    csv_path = report.output_path(args.out, pipeline.config.path, "trajectory.csv")
    npz_path = report.output_path(args.out, pipeline.config.path, "trajectory.npz")
    write_trajectory_csv(trajectory, csv_path)
    np.savez_compressed(npz_path, t = trajectory.times, x = trajectory.states, norm = trajectory.norms())

    norms = trajectory.norms()
    body = {"initial": values["initial"], "amplitude": values["amplitude"], "steps": trajectory.steps,
            "final_norm": norms[-1], "max_norm": float(np.max(norms)), "escape_time": escape_time,
            "truncation_bound": pipeline.grid.truncation_bound(float(np.max(np.abs(trajectory.states))))}

    _print(args, "Elapsed time\t%f" % (time.time() - start_time))
    _print(args, "Final norm\t%f" % norms[-1])
    _print(args, "Trajectory saved in\t%s" % csv_path)
    _finish(pipeline, "simulate", args, body)
    return EXIT_OK

def _attractivity_check(pipeline, system):
    # start off the manifold next to the origin and follow the distance to the graph
    reduced = pipeline.reduced
    cutoff = pipeline.cutoff
    size = 0.25 * min(pipeline.radius, cutoff.delta)
    kick = random_segment(pipeline.grid, pipeline.kernel.dim, pipeline.rng, real = pipeline.kernel.is_real)
    kick = project_su(reduced, kick)
    z0 = sphere_directions(system, 8)[0]
    phi = reduced.basis.combine(z0) * (size / reduced.basis.combine(z0).norm()) + kick * (size / kick.norm())
    trajectory = solve_nonlinear(pipeline.kernel, 0.0, phi, pipeline.f, pipeline.config["manifold"]["fit_window"])
    return attractivity_diagnostics(cutoff, reduced, pipeline.manifold_map, trajectory)

def cmd_verify(pipeline, args):
    system = None
    attractivity = None
    body = {"spectrum": _spectrum_section(pipeline)}

    if linearized_verdict(pipeline.summary) is None:
        system = pipeline.central_system()
        try:
            diagnostics = _attractivity_check(pipeline, system)
            attractivity = diagnostics.constants
            body["attractivity"] = {"rate": diagnostics.rate, "satisfied": diagnostics.satisfied, "exit_time": diagnostics.exit_time,
                    "beta0": attractivity.beta0, "valid": attractivity.valid}
        except AttractivityHypothesisError as error:
            logger.warning("attractivity diagnostics skipped: %s", error)
            attractivity = attractivity_constants(pipeline.cutoff)
            body["attractivity"] = {"rate": None, "satisfied": False, "exit_time": None, "beta0": None, "valid": False,
                    "error": str(error)}

        body["validity_radius"] = pipeline.radius

    result = reduction_report(system, pipeline.kernel, pipeline.f, pipeline.summary, pipeline.reduced, pipeline.rng,
            **pipeline.ensemble_settings())

    expect = pipeline.config["verify"]["expect"]
    body.update({"branch": result.branch, "central": _verdict_section(result.central),
            "full": {"classification": result.full.classification, "dominant_rate": result.full.dominant_rate,
                    "members": result.full.members},
            "agreement": result.agreement, "expect": expect})

    passed = result.agreement

    if expect is not None:
        passed = passed and normalize_verdict(result.full.classification) == expect \
                and normalize_verdict(result.central.classification) == expect

    body["passed"] = passed

    _print(args, "Reduced verdict\t%s" % result.central.classification)
    _print(args, "Full equation verdict\t%s" % result.full.classification)
    _print(args, "Dominant rate\t%f" % result.full.dominant_rate)
    _print(args, "Agreement\t%s" % result.agreement)
    _finish(pipeline, "verify", args, body, attractivity)

    return EXIT_OK if passed else EXIT_DISAGREEMENT

commands = {
        "spectrum": cmd_spectrum,
        "decompose": cmd_decompose,
        "manifold": cmd_manifold,
        "central": cmd_central,
        "simulate": cmd_simulate,
        "verify": cmd_verify
}

def build_parser():
    parser = argparse.ArgumentParser(description = "Center manifold reduction for Volterra integral equations with infinite delay.")
    parser.add_argument("command", choices = commands)
    parser.add_argument("--config", required = True)
    parser.add_argument("--out", default = "output_save")
    parser.add_argument("--seed", type = int, default = None)
    parser.add_argument("--grid-h", type = float, default = None)
    parser.add_argument("--quiet", action = "store_true")
    parser.add_argument("--verbose", action = "store_true")
    return parser

def main(argv = None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose else logging.INFO)
    logging.basicConfig(level = level, format = "%(levelname)s %(name)s: %(message)s")
    start_time = time.time()

    try:
        os.makedirs(args.out)
    except OSError:
        pass

    try:
        config = load_config(args.config, {("run", "seed"): args.seed, ("grid", "h"): args.grid_h})
        pipeline = Pipeline(config, np.random.default_rng(config.seed))
        _print(args, "Command\t%s" % args.command)
        _print(args, "Config\t%s" % args.config)
        code = commands[args.command](pipeline, args)
    except (ConfigError, KernelError) as error:
        logger.error("configuration error: %s", error)
        return EXIT_CONFIG
    except (SpectralError, DecompositionError) as error:
        logger.error("spectral computation failed: %s", error)
        return EXIT_SPECTRUM
    except ManifoldError as error:
        logger.error("manifold computation failed: %s", error)
        return EXIT_MANIFOLD

    _print(args, "Total elapsed time\t%f" % (time.time() - start_time))
    return code

if __name__ == "__main__":
    sys.exit(main())
