import os
import pathlib

import pytest
from hypothesis import HealthCheck, settings

from defect_homog.config import load_config
from defect_homog.operators import make_instance

ROOT = pathlib.Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE_LINES = []


def config_path(name):
    return str(CONFIGS / f"{name}.json")


def instance_from(name, eps, N_target=None, B=None):
    cfg = load_config(config_path(name))
    return make_instance(
        cfg.field_A(),
        cfg.field_B() if B is None else B,
        cfg.model(),
        eps,
        r=cfg.r,
        N_target=cfg.mesh.N_target if N_target is None else N_target,
        cap=cfg.mesh.cap,
    )


@pytest.fixture(scope="session")
def cubic_cfg():
    return load_config(config_path("cubic"))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
