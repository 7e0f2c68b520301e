"""Shared fixtures and the acceptance summary printed at the end of a run."""

from __future__ import annotations

import numpy as np
import pytest

from splab.spectral import SpectralField, forward_transform, make_grid

# name -> (passed, detail), filled by tests/test_acceptance.py
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def random_field(grid, seed=0, components=1, decay=1.0):
    """Real mean-free field with algebraically decaying random coefficients."""
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal((components,) + grid.shape)
    f = forward_transform(vals, grid)
    k = np.where(grid.index_sq > 0, grid.kabs, 1.0)
    c = f.coeffs * k ** (-decay) * (grid.index_sq > 0)
    return SpectralField(grid, c, real=True)


@pytest.fixture
def grid1d():
    return make_grid(1, 64)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda n: int(n.split(".")[0])):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
