import os
import sys
import numpy as np
import pytest

SRC_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "src")
DATA_DIR = os.path.join(os.path.dirname(SRC_DIR), "data")

if SRC_DIR not in sys.path:
    sys.path.insert(0, SRC_DIR)

from kernel import KernelModel, cubic_functional, zero_nonlinearity
from phasespace import Grid
from spectral import find_characteristic_roots, spectral_gap_constants
from decomposition import decompose, estimate_decomposition_constants
from manifold import ManifoldMap, select_delta, validity_radius

def scalar_kernel(nu = 1.0, rho = 0.5, power = 0, rate = 1.0):
    return KernelModel(1, [(nu, power, rate)], rho)

def rotation_kernel():
    # K(t) = [[1, 1], [-1, 1]] exp(-t): characteristic roots at +i and -i
    return KernelModel(2, [(np.array([[1.0, 1.0], [-1.0, 1.0]]), 0, 1.0)], 0.5)

@pytest.fixture
def rng():
    return np.random.default_rng(1234)

@pytest.fixture(scope = "session")
def data_dir():
    return DATA_DIR

@pytest.fixture(scope = "session")
def critical_kernel():
    return scalar_kernel()

@pytest.fixture(scope = "session")
def critical_grid():
    return Grid(0.05, 0.5, 40.0)

@pytest.fixture(scope = "session")
def critical_summary(critical_kernel):
    return find_characteristic_roots(critical_kernel)

@pytest.fixture(scope = "session")
def critical_reduced(critical_kernel, critical_grid, critical_summary):
    return decompose(critical_kernel, critical_grid, critical_summary)

@pytest.fixture(scope = "session")
def critical_gap(critical_kernel, critical_summary):
    return spectral_gap_constants(critical_summary, critical_kernel)

@pytest.fixture(scope = "session")
def critical_constants(critical_kernel, critical_reduced, critical_gap):
    alpha, eps_gap = critical_gap
    return estimate_decomposition_constants(critical_reduced, critical_kernel, alpha, eps_gap, np.random.default_rng(1234), samples = 12)

@pytest.fixture(scope = "session")
def stable_cubic(critical_kernel):
    return cubic_functional(critical_kernel, {"eps_cubic": -1.0})

@pytest.fixture(scope = "session")
def critical_cutoff(critical_reduced, critical_gap, critical_constants, stable_cubic):
    alpha, eps_gap = critical_gap
    constants = {"C": critical_constants.C, "C1": critical_constants.C1, "alpha": alpha, "eps_gap": eps_gap}
    return select_delta(constants, stable_cubic, critical_reduced, np.random.default_rng(1234), samples = 12)

@pytest.fixture(scope = "session")
def critical_map(critical_cutoff, critical_reduced, stable_cubic):
    return ManifoldMap(critical_cutoff, critical_reduced, stable_cubic, "center", divisions = 20)

@pytest.fixture(scope = "session")
def critical_radius(critical_map):
    return validity_radius(critical_map, np.random.default_rng(1234))

@pytest.fixture(scope = "session")
def zero_f(critical_kernel):
    return zero_nonlinearity(critical_kernel, {})
