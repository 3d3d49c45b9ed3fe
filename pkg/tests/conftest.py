import numpy as np
import pytest
from hypothesis import settings

from helioaim.plant import EQUINOX_DAY, PlantConfig, desk_scale, generate_field, solar_position

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_config() -> PlantConfig:
    """A tiny 4-panel plant that keeps flux evaluations in the millisecond range."""
    return PlantConfig(
        receiver_height=4.0, receiver_diameter=2.5, panel_count=4, panel_width=1.75,
        tower_optical_height=60.0, mirror_area=40.0, heliostat_count=48,
        mesh_vertical=11, mesh_horizontal=3, azimuthal_spacing=12.0, radial_spacing=12.0,
    )


@pytest.fixture(scope="session")
def small_field(small_config):
    return generate_field(small_config, seed=0)


@pytest.fixture(scope="session")
def noon(small_config):
    return solar_position(small_config.latitude, EQUINOX_DAY, 12.0)


@pytest.fixture(scope="session")
def desk():
    return desk_scale()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance summary -------------------------------------------------------
_acceptance: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        detail = "; ".join(f"{k}={v}" for k, v in report.user_properties)
        _acceptance[name] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance, key=lambda n: int(n.split("_")[2])):
        status, detail = _acceptance[name]
        terminalreporter.write_line(f"{status} {name}" + (f"  [{detail}]" if detail else ""))
