import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lggp import model as M
from lggp.schemes import simulate_lggp

settings.register_profile(
    "default",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def spec():
    return M.PRESETS["synthetic"]


@pytest.fixture(scope="session")
def small_dataset():
    """K=8 synthetic problem on a uniform grid."""
    grid = np.linspace(0.0, 1.0, 8)
    dataset, _, _ = simulate_lggp(grid, rng=np.random.default_rng(7))
    return dataset


def prior_draw_state(dataset, spec, rng):
    """Packed state with hypers and latents drawn from the prior."""
    from lggp.linearization import _gp_draw, sample_hypers

    blocks, latents = [], []
    for prior in (spec.alpha, spec.beta):
        mu, se, ss, ls = (v[0] for v in sample_hypers(prior, dataset.D, 1, rng))
        draw, _ = _gp_draw(dataset.grid, mu, se, ss, ls, rng)
        latents.append(draw)
        blocks.append(M.to_unconstrained(M.KernelParams(mu, se, ss, ls), prior.bound))
    return np.concatenate(latents + blocks)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance PASS/FAIL lines at the end of the run."""
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
