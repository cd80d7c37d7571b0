import numpy as np
import pytest

from beamaid.geometry import Scenario


def random_scene(rng, n_tx=8, n_rx=8, n_scat=1, min_sep=1.0, **kw):
    """Scene with receiver, orientation and scatterers drawn at random, points kept apart."""
    while True:
        p = rng.uniform([-30, -30], [30, 30])
        scat = [rng.uniform([-20, -20], [20, 20]) for _ in range(n_scat)]
        pts = [np.zeros(2), p] + scat
        if all(np.linalg.norm(a - b) > min_sep for i, a in enumerate(pts) for b in pts[i + 1 :]):
            break
    return Scenario(
        rx_pos=tuple(p),
        rx_orientation=float(rng.uniform(0, 2 * np.pi)),
        scatterers=tuple(tuple(s) for s in scat),
        n_tx=n_tx,
        n_rx=n_rx,
        **kw,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.REPORT):
        terminalreporter.write_line(mod.REPORT[key])
