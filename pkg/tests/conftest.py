import numpy as np
import pytest

from advisor import driver as drv
from advisor import scenario as scn
from advisor.dynamics import VehicleParams


@pytest.fixture(scope="session")
def params():
    return VehicleParams()


@pytest.fixture(scope="session")
def synth():
    return drv.synthetic_default()


@pytest.fixture(scope="session")
def ident_cfg():
    return scn.identification_scenario(speed=15.0, seed=3)


@pytest.fixture(scope="session")
def ident_log(ident_cfg):
    return scn.run_closed_loop(ident_cfg)


@pytest.fixture(scope="session")
def default_log():
    return scn.run_closed_loop(scn.default_scenario(seed=0))


def random_stable_params(rng: np.random.Generator) -> drv.GeneralizedSteeringParams:
    """Random (2,3,0,1) coefficient set with a stable AR polynomial."""
    r1 = rng.uniform(-0.95, 0.95)
    r2 = rng.uniform(-0.95, 0.95)
    return drv.GeneralizedSteeringParams(
        a=(r1 + r2, -r1 * r2),
        b=tuple(rng.uniform(-2.0, 2.0, size=4)),
        c=(rng.uniform(-2.0, 2.0),),
        d=tuple(rng.uniform(-2.0, 2.0, size=2)),
    )
