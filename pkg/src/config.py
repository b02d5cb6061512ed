import configparser
import hashlib
import logging
import re
import numpy as np
from kernel import KernelModel, KernelError, nonlinearities
from phasespace import Grid
from spectral import Rectangle, default_rectangle

logger = logging.getLogger(__name__)

class ConfigError(ValueError):
    def __init__(self, message, line = None):
        super().__init__(message if line is None else "line %d: %s" % (line, message))
        self.line = line

def _optional(cast):
    return lambda text: None if text.strip().lower() in ("", "none") else cast(text)

def _boolean(text):
    value = text.strip().lower()

    if value in ("1", "true", "yes", "on"):
        return True

    if value in ("0", "false", "no", "off"):
        return False

    raise ValueError("expected a boolean, got %r" % text)

def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())

def _complex(text):
    return complex(text.replace(" ", ""))

def _matrix(text):
    # "1" or rows separated by ';' with entries separated by ','
    rows = [[_complex(v) for v in row.split(",")] for row in text.split(";")]

    if len(rows) == 1 and len(rows[0]) == 1:
        return rows[0][0]

    if len(set(len(row) for row in rows)) != 1:
        raise ValueError("matrix rows have different lengths")

    return np.array(rows, dtype = complex)

# section -> key -> (parser, default, positive)
schema = {
        "kernel": {"dim": (int, 1, True), "rho": (float, None, True), "nu": (float, 1.0, False)},
        "nonlinearity": {"form": (str, "zero", False), "eps_cubic": (float, 0.0, False), "g_coeff": (float, 0.0, False),
                "analytic_derivative": (_boolean, True, False)},
        "grid": {"h": (float, 0.05, True), "window": (_optional(float), None, True), "path_tail_tol": (float, 1e-8, True),
                "mollifier_n": (_optional(int), None, True)},
        "spectrum": {"re_min": (_optional(float), None, False), "re_max": (_optional(float), None, False),
                "im_max": (_optional(float), None, True), "margin": (float, 0.05, True), "safety": (float, 0.01, True),
                "center_tol": (float, 1e-8, True), "root_tol": (float, 1e-10, True), "boundary_tol": (float, 1e-12, True),
                "max_depth": (int, 40, True)},
        "manifold": {"delta_ceiling": (float, 0.05, True), "eta": (_optional(float), None, True), "fp_tol": (float, 1e-8, True),
                "max_iterations": (int, 200, True), "lattice_points": (int, 20, True), "constant_samples": (int, 24, True),
                "fit_window": (float, 20.0, True)},
        "central": {"horizon_factor": (float, 100.0, True), "max_steps": (int, 20000, True), "ensemble_directions": (int, 8, True)},
        "simulate": {"amplitude": (float, 0.1, True), "t_end": (float, 100.0, True), "escape_radius": (float, 1.0, True),
                "initial": (str, "constant", False)},
        "ensemble": {"amplitudes": (_floats, (0.1,), True), "t_end": (float, 100.0, True), "random_members": (int, 2, False),
                "escape_radius": (float, 1.0, True), "workers": (int, 1, True)},
        "verify": {"expect": (_optional(str), None, False)},
        "run": {"seed": (int, 1234, False)}
}

term_schema = {"coefficient": (_matrix, None, False), "power": (int, 0, False), "rate": (_complex, None, False)}

choices = {
        ("nonlinearity", "form"): tuple(nonlinearities),
        ("simulate", "initial"): ("constant", "basis", "random"),
        ("verify", "expect"): (None, "stable", "unstable")
}

def _line_numbers(text):
    # (section, key) -> line, and section -> header line
    lines = {}
    section = None

    for number, line in enumerate(text.splitlines(), start = 1):
        stripped = line.strip()
        header = re.match(r"^\[([^\]]+)\]", stripped)

        if header:
            section = header.group(1).strip()
            lines[(section, None)] = number
        elif section is not None and stripped and stripped[0] not in "#;" and ("=" in stripped or ":" in stripped):
            key = re.split(r"[=:]", stripped, maxsplit = 1)[0].strip().lower()
            lines[(section, key)] = number

    return lines

class ProblemConfig:
    def __init__(self, path, raw, overrides = None):
        self.path = path
        self.raw = raw
        self.overrides = dict(overrides or {})
        text = raw.decode("utf-8")
        self.lines = _line_numbers(text)
        parser = configparser.ConfigParser(interpolation = None, inline_comment_prefixes = ("#",))

        try:
            parser.read_string(text, source = path)
        except configparser.Error as error:
            line = getattr(error, "lineno", None)

            if line is None and getattr(error, "errors", None):
                line = error.errors[0][0]

            raise ConfigError(str(error).splitlines()[0], line)

        self.values = {}
        self.term_values = []

        for section in parser.sections():
            if section.startswith("term."):
                self.term_values.append((self._term_index(section), self._read(parser, section, term_schema)))
            elif section in schema:
                self.values[section] = self._read(parser, section, schema[section])
            else:
                raise ConfigError("unknown section [%s]" % section, self.lines.get((section, None)))

        for section in schema:
            if section not in self.values:
                self.values[section] = {key: default for key, (_, default, _) in schema[section].items()}

        for (section, key), value in self.overrides.items():
            if value is not None:
                self.values[section][key] = value

        self.term_values.sort(key = lambda item: item[0])
        self._validate()

    def _term_index(self, section):
        try:
            return int(section.split(".", 1)[1])
        except ValueError:
            raise ConfigError("term sections are named [term.N], got [%s]" % section, self.lines.get((section, None)))

    def _read(self, parser, section, fields):
        values = {}

        for key in parser[section]:
            if key not in fields:
                raise ConfigError("unknown key %r in [%s]" % (key, section), self.lines.get((section, key)))

        for key, (cast, default, positive) in fields.items():
            line = self.lines.get((section, key), self.lines.get((section, None)))

            if key not in parser[section]:
                if default is None and cast in (float, _complex, _matrix):
                    raise ConfigError("missing key %r in [%s]" % (key, section), line)

                values[key] = default
                continue

            try:
                value = cast(parser[section][key])
            except ValueError as error:
                raise ConfigError("bad value for %s.%s: %s" % (section, key, error), line)

            if positive and value is not None and np.any(np.asarray(value) <= 0):
                raise ConfigError("require %s.%s > 0, got %s" % (section, key, parser[section][key]), line)

            if (section, key) in choices and value not in choices[(section, key)]:
                raise ConfigError("%s.%s must be one of %s" % (section, key, [c for c in choices[(section, key)] if c]), line)

            values[key] = value

        return values

    def line(self, section, key = None):
        return self.lines.get((section, key), self.lines.get((section, None)))

    def _validate(self):
        if self.values["kernel"]["rho"] is None:
            raise ConfigError("missing section [kernel] with key 'rho'", self.line("kernel"))

        n = self.values["grid"]["mollifier_n"]

        if n is not None and n * self.values["grid"]["h"] > 1.0:
            raise ConfigError("require mollifier_n * h <= 1, got %g" % (n * self.values["grid"]["h"]), self.line("grid", "mollifier_n"))

        manifold = self.values["manifold"]

        if manifold["lattice_points"] < 2:
            raise ConfigError("require manifold.lattice_points >= 2", self.line("manifold", "lattice_points"))

    def __getitem__(self, section):
        return self.values[section]

    @property
    def seed(self):
        return self.values["run"]["seed"]

    @property
    def sha256(self):
        digest = hashlib.sha256(self.raw)

        for (section, key), value in sorted(self.overrides.items()):
            if value is not None:
                digest.update(("%s.%s=%r" % (section, key, value)).encode("utf-8"))

        return digest.hexdigest()

    def kernel(self):
        # K = nu P with P given by the [term.N] sections
        values = self.values["kernel"]
        nu = values["nu"]
        terms = [(nu * np.asarray(t["coefficient"]), t["power"], t["rate"]) for _, t in self.term_values]

        try:
            return KernelModel(values["dim"], terms, values["rho"])
        except (KernelError, ValueError) as error:
            line = self.line("term.%d" % self.term_values[0][0]) if self.term_values else self.line("kernel")
            raise ConfigError(str(error), line)

    def nonlinearity(self, kernel):
        values = dict(self.values["nonlinearity"])
        form = values.pop("form")
        values["nu"] = self.values["kernel"]["nu"]

        try:
            return nonlinearities[form](kernel, values)
        except ValueError as error:
            raise ConfigError(str(error), self.line("nonlinearity"))

    def grid(self, kernel):
        values = self.values["grid"]

        try:
            return Grid(values["h"], kernel.rho, values["window"])
        except ValueError as error:
            raise ConfigError(str(error), self.line("grid"))

    def search_rectangle(self, kernel):
        # configured edges override the ones derived from the kernel bound
        values = self.values["spectrum"]
        base = default_rectangle(kernel, values["margin"])
        re_min = base.re_min if values["re_min"] is None else values["re_min"]
        re_max = base.re_max if values["re_max"] is None else values["re_max"]
        im_max = base.im_max if values["im_max"] is None else values["im_max"]

        if re_min <= -kernel.rho:
            raise ConfigError("require spectrum.re_min > -rho", self.line("spectrum", "re_min"))

        try:
            return Rectangle(re_min, re_max, -im_max, im_max)
        except ValueError as error:
            raise ConfigError(str(error), self.line("spectrum"))

    def as_dict(self):
        resolved = {section: dict(values) for section, values in self.values.items()}
        resolved["terms"] = [dict(t) for _, t in self.term_values]
        return resolved

def load_config(path, overrides = None):
    try:
        with open(path, "rb") as file:
            raw = file.read()
    except OSError as error:
        raise ConfigError("cannot read %s: %s" % (path, error))

    config = ProblemConfig(path, raw, overrides)
    logger.info("loaded %s (%d kernel terms, sha256 %s)", path, len(config.term_values), config.sha256[:12])

    return config
