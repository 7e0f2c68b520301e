import warnings

import numpy as np
import pytest

from conftest import random_field
from splab.initial_data import InitialDataLaw, divergence, generate_initial_data
from splab.models import (ScalingHypothesisError, ScalingHypothesisWarning, builtin_burgers,
                          SystemSpec, builtin_cubic_heat, builtin_navier_stokes, check_homogeneity,
                          evaluate_nonlinearity, scaling_data, spec_from_config, spec_to_config)
from splab.spectral import SpectralField, forward_transform, inverse_transform, make_grid, zeros


@pytest.mark.parametrize("spec,alpha,s_crit,admissible", [
    (builtin_navier_stokes(3), 1.0, 0.5, True),
    (builtin_cubic_heat(3), 1.0, 0.5, True),
    (builtin_burgers(), 1.0, -0.5, False),
])
def test_scaling_data(spec, alpha, s_crit, admissible):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sd = scaling_data(spec)
    assert sd.alpha == pytest.approx(alpha)
    assert sd.s_crit == pytest.approx(s_crit)
    assert sd.admissible == admissible
    assert any(issubclass(w.category, ScalingHypothesisWarning) for w in caught) != admissible


def test_strict_scaling_hypothesis():
    with pytest.raises(ScalingHypothesisError):
        scaling_data(builtin_burgers(), strict=True)
    assert scaling_data(builtin_navier_stokes(3), strict=True).admissible


def test_burgers_metadata_and_homogeneity():
    b = builtin_burgers()
    assert (b.k, b.beta, b.N, b.d) == (2, 1.0, 1, 1)
    for spec in (b, builtin_navier_stokes(3), builtin_cubic_heat(1)):
        assert check_homogeneity(spec) <= 1e-13


def test_zero_field_gives_zero():
    g = make_grid(1, 32)
    assert not np.any(evaluate_nonlinearity(builtin_burgers(), zeros(g)).coeffs)


def test_burgers_sine():
    g = make_grid(1, 64)
    x, = g.coordinates()
    u = forward_transform(np.sin(x), g)
    out = evaluate_nonlinearity(builtin_burgers(), u).coeffs[0]
    # -sin(2x)/2 has coefficients +-i/4 at xi = +-2
    assert out[2] == pytest.approx(0.25j, abs=1e-15)
    assert out[-2] == pytest.approx(-0.25j, abs=1e-15)
    out[[2, -2]] = 0
    assert np.max(np.abs(out)) <= 1e-15


def _leray(coeffs, grid):
    xi = grid.wavenumbers
    k2 = np.where(grid.index_sq > 0, grid.k2, 1.0)
    dot = sum(x * c for x, c in zip(xi, coeffs))
    return np.stack([c - x * dot / k2 for x, c in zip(xi, coeffs)])


def test_navier_stokes_matches_physical_space():
    # Taylor-Green velocity on a 16^3 grid; products of trigonometric
    # polynomials of degree 1 are exact on this grid without padding
    g = make_grid(3, 16)
    x, y, z = np.meshgrid(*[c.ravel() for c in g.coordinates()], indexing="ij")
    u = np.stack([np.sin(x) * np.cos(y) * np.cos(z), -np.cos(x) * np.sin(y) * np.cos(z), np.zeros_like(x)])
    U = forward_transform(u, g)
    grads = [[inverse_transform(SpectralField(g, 1j * xi * U.coeffs[a]))[0] for xi in g.wavenumbers]
             for a in range(3)]
    adv = np.stack([sum(u[b] * grads[a][b] for b in range(3)) for a in range(3)])
    want = -_leray(forward_transform(adv, g, truncate=False).coeffs, g) * g.mask
    got = evaluate_nonlinearity(builtin_navier_stokes(3), U).coeffs
    assert np.max(np.abs(got - want)) <= 1e-12 * np.max(np.abs(want))


def test_navier_stokes_output_divergence_free():
    g = make_grid(3, 32)
    law = InitialDataLaw(s=0.5, norm=1.0, divergence_free=True)
    u = generate_initial_data(law, g, seed=5, components=3)
    out = evaluate_nonlinearity(builtin_navier_stokes(3), u)
    assert np.max(np.abs(divergence(out))) <= 1e-13 * np.max(np.abs(out.coeffs))


def test_incompatible_field_rejected():
    g = make_grid(1, 32)
    with pytest.raises(ValueError, match="components"):
        evaluate_nonlinearity(builtin_burgers(), SpectralField(g, np.zeros((2, 32), complex)))


def test_config_roundtrip():
    inline = {"name": "my_burgers", "d": 1, "N": 1, "k": 2, "beta": 1,
              "table": [{"j": 0, "l": [2], "symbol": {"kind": "derivative", "axis": 0, "coef": -0.5}}]}
    spec = spec_from_config(inline)
    again = spec_from_config(spec_to_config(spec))
    g = make_grid(1, 64)
    u = random_field(g, seed=7)
    ref = evaluate_nonlinearity(builtin_burgers(), u).coeffs
    for s in (spec, again):
        assert np.allclose(evaluate_nonlinearity(s, u).coeffs, ref, rtol=0, atol=1e-15)
    ns = spec_from_config(spec_to_config(builtin_navier_stokes(3)))
    assert (ns.name, ns.d, ns.N) == ("navier_stokes", 3, 3)
    assert spec_from_config({"builtin": "heat", "d": 2}).multipliers == {}


def test_bad_configs():
    with pytest.raises(ValueError, match="unknown builtin"):
        spec_from_config({"builtin": "kdv"})
    with pytest.raises(ValueError, match="degree"):
        spec_from_config({"d": 1, "N": 1, "k": 2, "beta": 0.5,
                          "table": [{"j": 0, "l": [2], "symbol": {"kind": "derivative", "axis": 0}}]})
    with pytest.raises(ValueError, match="multi-index"):
        SystemSpec("x", 1, 1, 2, 1.0, {(0, (3,)): None})
