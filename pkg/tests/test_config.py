import os
import numpy as np
import pytest
from config import ConfigError, load_config

ROTATION = """
[kernel]
dim = 2
rho = 0.5

[term.1]
coefficient = 1, 1; -1, 1
rate = 1
"""

def _write(tmp_path, text, name = "problem.cfg"):
    path = os.path.join(str(tmp_path), name)

    with open(path, "w") as file:
        file.write(text)

    return path

def test_shipped_critical_config(data_dir):
    config = load_config(os.path.join(data_dir, "critical_scalar.cfg"))
    kernel = config.kernel()
    assert kernel.dim == 1 and kernel.rho == 0.5
    assert config.seed == 1234
    assert config.grid(kernel).h == 0.05
    assert config.nonlinearity(kernel).form_tag == "cubic_functional"
    assert config["ensemble"]["amplitudes"] == (0.2, 0.4)
    assert config["verify"]["expect"] is None

def test_nu_scales_every_term(data_dir):
    kernel = load_config(os.path.join(data_dir, "nu_two.cfg")).kernel()
    assert kernel.coefficients[0][0, 0] == pytest.approx(2.0)

def test_matrix_coefficients(tmp_path):
    kernel = load_config(_write(tmp_path, ROTATION)).kernel()
    assert kernel.dim == 2
    assert np.allclose(kernel.coefficients[0], [[1.0, 1.0], [-1.0, 1.0]])

def test_overrides_change_digest(data_dir):
    path = os.path.join(data_dir, "critical_scalar.cfg")
    plain = load_config(path)
    same = load_config(path, {("run", "seed"): None})
    seeded = load_config(path, {("run", "seed"): 7})
    assert plain.sha256 == same.sha256
    assert seeded.sha256 != plain.sha256
    assert seeded.seed == 7

@pytest.mark.parametrize("text, line", [
        ("[kernel]\nrho = 0.5\nspeed = 3\n", 3),
        ("[kernel]\ndim = 1\n\n[kernel]\nrho = 0.5\n", 4),
        ("[kernel]\nrho = 0.5\n[grid]\nh = -0.1\n", 4),
        ("[kernel]\nrho = 0.5\n[nonlinearity]\nform = quartic\n", 4),
        ("[kernel]\nrho = 0.5\n[grid]\nh = 0.05\nmollifier_n = 40\n", 5),
        ("[kernel]\nrho = 0.5\n[flow]\nspeed = 1\n", 3)])
def test_errors_carry_line_numbers(tmp_path, text, line):
    with pytest.raises(ConfigError) as info:
        load_config(_write(tmp_path, text))

    assert info.value.line == line
    assert str(info.value).startswith("line %d:" % line)

def test_missing_rho(tmp_path):
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, "[kernel]\ndim = 1\n"))

def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(os.path.join(str(tmp_path), "absent.cfg"))

def test_kernel_errors_become_config_errors(tmp_path):
    # rates need a positive real part
    config = load_config(_write(tmp_path, "[kernel]\nrho = 0.5\n\n[term.1]\ncoefficient = 1\nrate = -1\n"))

    with pytest.raises(ConfigError) as info:
        config.kernel()

    assert info.value.line == 4
