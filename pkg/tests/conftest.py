import numpy as np
import pytest

from spac.core import Frame, rgb_to_ycbcr
from spac.synth import RainParams, procedural_scene, synth_translating_sequence

# Lines recorded by the acceptance module, echoed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def textured_frame(h, w, seed=0):
    """Random-but-smooth colour frame built from 8-bit RGB."""
    return procedural_scene(h, w, seed=seed)


def column_texture_frame(h, w, seed=0):
    """Frame whose luma varies only along x (every row identical).

    Vertical shifts of such a frame are exact matches even across the top and
    bottom borders, which gives the matcher more than n_t - 1 zero-cost
    candidates.
    """
    rng = np.random.default_rng(seed)
    row = rng.uniform(0.15, 0.85, w)
    y = np.repeat(row[None, :], h, axis=0)
    rgb_rows = rng.integers(40, 220, size=(w, 3))
    chroma = rgb_to_ycbcr(np.repeat(rgb_rows[None].astype(np.uint8), h, axis=0))
    return Frame(y, chroma.cb, chroma.cr)


def static_rain_scene(h, w, n, coverage=0.02, amplitude=0.1, seed=0, rain_seed=1):
    base = procedural_scene(h + 8, w + 8, seed=seed)
    rain = RainParams.for_coverage(coverage, amplitude=amplitude, seed=rain_seed)
    return synth_translating_sequence(base, n, (0, 0), (w, h), rain=rain)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
