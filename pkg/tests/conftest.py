import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bathscatter import fdfd
from bathscatter.emitter import fit_lorentzians
from bathscatter.media import CylinderLattice, Grid, build_crystal, build_homogeneous, emitter_site

import report

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

OMEGA0 = 0.35 * 2 * np.pi


def pytest_terminal_summary(terminalreporter):
    if report.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in report.lines():
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def omega0():
    return OMEGA0


@pytest.fixture(scope="session")
def small_homogeneous():
    """Coarse uniform map, cheap enough for property tests."""
    return build_homogeneous(Grid.centered(3.0, resolution=16))


@pytest.fixture(scope="session")
def crystal():
    pmap = build_crystal(CylinderLattice(), Grid.centered(11.5, resolution=16))
    with warnings.catch_warnings():
        # the emitter sits inside the defect rod
        warnings.simplefilter("ignore")
        return pmap, emitter_site(pmap, (0.0, 0.5))


@pytest.fixture(scope="session")
def crystal_spectrum(crystal):
    """Refined -Im G sweep over [0.33, 0.37] (2 pi / a) and its Lorentzian fit."""
    pmap, idx = crystal
    w, J = fdfd.refined_im_green_spectrum(pmap, idx, 0.33 * 2 * np.pi, 0.37 * 2 * np.pi)
    return w, J, fit_lorentzians(w, J)
