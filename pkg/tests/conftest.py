import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from leofim.channel_fim import OffsetConfig
from leofim.efim_engine import Scenario
from leofim.feasibility import random_geometry
from leofim.signal_model import SignalSpec

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def make_scenario(seed=0, n_sats=3, n_slots=3, n_antennas=4, offsets="none", dt=0.1,
                  f_c=2e9, snr_db=0.0, alpha1=1e6, alpha2=0.0, T=1e-3, t2_eff=None,
                  cone_deg=60.0, eps=0.0):
    """Generic scenario on the orbit shell with a reproducible geometry."""
    rng = np.random.default_rng(seed)
    rx, cs = random_geometry(rng, n_sats, n_slots, n_antennas, dt, f_c, cone_deg=cone_deg)
    spec = SignalSpec.from_db(snr_db, f_c=f_c, alpha1=alpha1, alpha2=alpha2, T=T, t2_eff=t2_eff)
    return Scenario(rx, cs, spec, OffsetConfig.from_name(offsets, eps=eps))


@pytest.fixture
def scenario_factory():
    return make_scenario


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.max(np.abs(b)), 1e-300)
    return float(np.max(np.abs(a - b)) / scale)
