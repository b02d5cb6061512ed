import json
import math
import os
import numpy as np

RNG_ALGORITHM = "PCG64"

def _number(value):
    # JSON has no nan or inf
    if math.isnan(value) or math.isinf(value):
        return "null"

    return "%.17g" % value

def encode(value, indent = 0):
    # deterministic JSON: sorted keys, '%.17g' floats, complex numbers as [re, im]
    pad = "  " * (indent + 1)
    end = "  " * indent

    if value is None:
        return "null"

    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"

    if isinstance(value, (int, np.integer)):
        return str(int(value))

    if isinstance(value, (float, np.floating)):
        return _number(float(value))

    if isinstance(value, (complex, np.complexfloating)):
        return encode([float(value.real), float(value.imag)], indent)

    if isinstance(value, str):
        return json.dumps(value)

    if isinstance(value, np.ndarray):
        return encode(value.tolist(), indent)

    if isinstance(value, dict):
        if not value:
            return "{}"

        items = ["%s%s: %s" % (pad, json.dumps(str(k)), encode(value[k], indent + 1)) for k in sorted(value, key = str)]
        return "{\n%s\n%s}" % (",\n".join(items), end)

    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"

        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in value):
            return "[%s]" % ", ".join(encode(v, indent + 1) for v in value)

        return "[\n%s\n%s]" % (",\n".join(pad + encode(v, indent + 1) for v in value), end)

    raise TypeError("cannot encode %r" % type(value))

def write_json(path, report):
    with open(path, "w") as file:
        file.write(encode(report))
        file.write("\n")

def constants_ledger(alpha = None, eps_gap = None, decomposition = None, cutoff = None, attractivity = None):
    # every report carries the same keys, null where the stage did not run
    ledger = {"alpha": alpha, "eps_gap": eps_gap, "C": None, "C1": None, "eta": None, "delta": None, "L": None, "beta0": None}

    if decomposition is not None:
        ledger["C"] = decomposition.C
        ledger["C1"] = decomposition.C1

    if cutoff is not None:
        ledger["eta"] = cutoff.eta
        ledger["delta"] = cutoff.delta
        ledger["L"] = cutoff.lipschitz

    if attractivity is not None:
        ledger["beta0"] = attractivity.beta0

    return ledger

def output_path(out_dir, config_path, suffix):
    stem = os.path.splitext(os.path.basename(config_path))[0]
    return os.path.join(out_dir, "%s_%s" % (stem, suffix))

def write_columns(path, header, columns):
    data = np.column_stack(columns) if columns else np.zeros((0, len(header)))
    np.savetxt(path, data, delimiter = ",", header = ",".join(header), comments = "", fmt = "%.17g")
