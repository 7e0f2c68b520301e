import itertools

import numpy as np
import pytest

from conftest import random_field
from splab.spectral import (SpectralField, apply_multiplier, dealiased_product, forward_transform,
                            inverse_transform, leray_symbol, make_grid, shell_decompose, zeros)


def brute_force_product(fields):
    """Lattice convolution of the factors, restricted to the Galerkin ball."""
    g = fields[0].grid
    idx = [m.ravel() for m in np.meshgrid(*g.index_axes, indexing="ij")]
    modes = [tuple(int(a[i]) for a in idx) for i in range(len(idx[0]))]
    kept = [m for m in modes if g.mask[tuple(x % g.points for x in m)]]
    out = np.zeros(g.shape, dtype=complex)
    acc = {m: fields[0].coeffs[0][tuple(x % g.points for x in m)] for m in kept}
    for f in fields[1:]:
        new = {}
        for (m1, c1), m2 in itertools.product(acc.items(), kept):
            c2 = f.coeffs[0][tuple(x % g.points for x in m2)]
            if c1 == 0 or c2 == 0:
                continue
            m = tuple(a + b for a, b in zip(m1, m2))
            new[m] = new.get(m, 0) + c1 * c2
        acc = new
    for m, c in acc.items():
        if all(abs(x) < g.points // 2 for x in m):
            key = tuple(x % g.points for x in m)
            if g.mask[key]:
                out[key] = c
    return out


def test_grid_examples():
    g = make_grid(1, 64, truncation_radius=21)
    assert g.dk == pytest.approx(1.0)
    assert np.array_equal(np.sort(g.index_axes[0]), np.arange(-32, 32))
    assert g.max_index == 21
    assert make_grid(3, 32, truncation_radius=10).shape == (32, 32, 32)
    with pytest.raises(ValueError, match="power of two"):
        make_grid(1, 48)
    with pytest.raises(ValueError, match="Nyquist"):
        make_grid(1, 16, truncation_radius=9)


def test_constant_and_cosine_coefficients(grid1d):
    g = grid1d
    f = forward_transform(np.full(g.shape, 3.0), g)
    assert f.coeffs[0, 0] == pytest.approx(3.0)
    assert np.count_nonzero(np.abs(f.coeffs) > 1e-14) == 1
    x, = g.coordinates()
    c = forward_transform(np.cos(x), g).coeffs[0]
    assert c[1] == pytest.approx(0.5) and c[-1] == pytest.approx(0.5)


def test_roundtrip(grid1d):
    f = random_field(make_grid(2, 32), seed=3)
    back = forward_transform(inverse_transform(f), f.grid)
    assert np.max(np.abs(back.coeffs - f.coeffs)) <= 1e-13 * np.max(np.abs(f.coeffs))


def test_multiplier_examples(grid1d):
    g = grid1d
    x, = g.coordinates()
    f = forward_transform(np.cos(x), g)
    same = apply_multiplier(f, lambda xi: np.ones_like(xi[0]), at_zero=1.0)
    assert np.allclose(same.coeffs, f.coeffs, rtol=0, atol=1e-15)
    heat = apply_multiplier(f, lambda xi: np.exp(-xi[0] ** 2), at_zero=1.0)
    assert heat.coeffs[0, 1] == pytest.approx(np.exp(-1) / 2, rel=1e-14)


def test_leray_annihilates_gradients():
    g = make_grid(3, 16)
    phi = random_field(g, seed=1)
    grad = SpectralField(g, np.stack([1j * xi * phi.coeffs[0] for xi in g.wavenumbers]))
    proj = apply_multiplier(grad, leray_symbol, at_zero=np.zeros((3, 3)))
    assert np.max(np.abs(proj.coeffs)) <= 1e-14 * np.max(np.abs(grad.coeffs))


def test_products_of_cosine(grid1d):
    g = grid1d
    x, = g.coordinates()
    u = forward_transform(np.cos(x), g)
    sq = dealiased_product([u, u]).coeffs[0]
    assert sq[0] == pytest.approx(0.5) and sq[2] == pytest.approx(0.25) and sq[-2] == pytest.approx(0.25)
    cube = dealiased_product([u, u, u]).coeffs[0]
    assert cube[1] == pytest.approx(3 / 8) and cube[3] == pytest.approx(1 / 8)


@pytest.mark.parametrize("d,points,k", [(1, 32, 2), (1, 32, 3), (2, 16, 2), (2, 16, 3)])
def test_product_matches_convolution(d, points, k):
    g = make_grid(d, points)
    fields = [random_field(g, seed=10 + i) for i in range(k)]
    got = dealiased_product(fields).coeffs[0]
    want = brute_force_product(fields)
    assert np.max(np.abs(got - want)) <= 1e-12 * np.max(np.abs(want))


def test_product_keeps_ball():
    g = make_grid(1, 64, truncation_radius=10)
    f = random_field(g, seed=2)
    dealiased_product([f, f]).check()


def test_shell_examples(grid1d):
    g = grid1d
    f = zeros(g)
    c = f.coeffs.copy()
    c[0, 5] = c[0, -5] = 0.7
    sh = shell_decompose(f.with_coeffs(c))
    j = np.searchsorted(sh.shell_edges, 5.0, side="right") - 1
    assert sh.shell_max[j] == pytest.approx(0.7)
    assert np.count_nonzero(sh.shell_max) == 1
    white = f.with_coeffs(g.mask.astype(complex)[None])
    sh = shell_decompose(white)
    assert np.allclose(sh.shell_max[sh.shell_count > 0], 1.0)
    r = random_field(make_grid(2, 32), seed=4)
    sh = shell_decompose(r)
    assert np.sum(sh.shell_energy) == pytest.approx(np.sum(np.abs(r.coeffs) ** 2), rel=1e-13)
    dy = shell_decompose(r, policy="dyadic")
    assert np.sum(dy.shell_energy) == pytest.approx(np.sum(np.abs(r.coeffs) ** 2), rel=1e-13)
