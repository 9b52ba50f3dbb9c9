from dataclasses import dataclass

import numpy as np
import pytest

from lqcd_dd.lattice import GaugeField, LatticeGeometry, Rng, generate_gauge
from lqcd_dd.wilson import CloverField, OperatorParams, build_clover


@dataclass
class Problem:
    gauge: GaugeField
    clover: CloverField
    params: OperatorParams
    b: np.ndarray

    @property
    def geometry(self):
        return self.gauge.geometry


def make_problem(dims, eps=0.1, seed=1, rhs_seed=2, mass=0.1, csw=1.0, boundary=(1, 1, 1, 1)):
    geo = LatticeGeometry(dims, boundary)
    gauge = generate_gauge("weak", geo, Rng(seed), eps=eps)
    params = OperatorParams(mass, csw)
    b = Rng(rhs_seed).complex_normal((geo.volume, 4, 3))
    return Problem(gauge, build_clover(gauge, params), params, b)


@pytest.fixture(scope="session")
def acceptance_problem():
    """8^4, weak(0.1) seed 1, m = 0.1, c_sw = 1, rhs seed 2."""
    return make_problem((8, 8, 8, 8))


@pytest.fixture(scope="session")
def small_problem():
    """4x4x8x8 weak(0.1): two 4^4 domains along z and t."""
    return make_problem((4, 4, 8, 8), seed=5, rhs_seed=6)
