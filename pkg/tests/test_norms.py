import csv
import math
import warnings

import numpy as np
import pytest
from scipy.integrate import trapezoid

from conftest import random_field
from splab.initial_data import InitialDataLaw, generate_initial_data
from splab.integrator import IntegratorOptions, Trace, integrate, rescale_solution
from splab.models import builtin_burgers, builtin_heat
from splab.norms import (MeanNotZeroError, ResolutionWarning, dyadic_eq_norm, gevrey_norm,
                         heat_flow_kato_norm, heat_flow_subcritical_bound_constant, kato_norm,
                         kato_norm_series, product_law_ratio, sobolev_norm, sobolev_norm_direct)
from splab.spectral import forward_transform, inverse_transform, make_grid, zeros


def cosine_mode(grid, xi0, a):
    """Real field with coefficient ``a`` at ``+-xi0`` along the first axis."""
    f = zeros(grid)
    c = f.coeffs.copy()
    idx = [0] * grid.d
    idx[0] = xi0
    c[(0,) + tuple(idx)] = a
    idx[0] = -xi0
    c[(0,) + tuple(idx)] = a
    return f.with_coeffs(c)


def mode_factor(grid, a):
    """``H^0`` norm of a cosine mode with coefficient ``a`` (Hermitian pair)."""
    return a * math.sqrt(2 * grid.norm_factor)


@pytest.mark.parametrize("s", [-0.5, 0.0, 0.7, 2.0])
def test_single_mode_closed_form(grid1d, s):
    f = cosine_mode(grid1d, 2, 0.3)
    assert sobolev_norm(f, s) == pytest.approx(2**s * mode_factor(grid1d, 0.3), rel=1e-14)


def test_l2_norm_is_parseval():
    g = make_grid(2, 32)
    f = random_field(g, seed=0)
    vals = inverse_transform(f)
    l2_sq = np.mean(vals**2) * g.period**2
    # the norm convention carries (2 pi)^d relative to the physical L^2 norm
    assert sobolev_norm(f, 0.0) ** 2 == pytest.approx((2 * math.pi) ** 2 * l2_sq, rel=1e-13)


@pytest.mark.parametrize("d,points", [(1, 64), (2, 32), (3, 16)])
def test_norm_matches_direct_sum(d, points):
    f = random_field(make_grid(d, points), seed=d)
    for s in (-0.4, 0.5, 1.3):
        assert sobolev_norm(f, s) == pytest.approx(sobolev_norm_direct(f, s), rel=1e-13)


def test_mean_required_for_nonpositive_s(grid1d):
    f = forward_transform(np.ones(grid1d.shape), grid1d)
    with pytest.raises(MeanNotZeroError):
        sobolev_norm(f, -0.5)
    assert sobolev_norm(f, 0.5) == 0.0


def test_gevrey_examples(grid1d):
    f = random_field(grid1d, seed=1)
    assert gevrey_norm(f, 0.0, 0.5) == pytest.approx(sobolev_norm(f, 0.5), rel=1e-14)
    mode = cosine_mode(grid1d, 7, 1.0)
    unit = mode * (1.0 / sobolev_norm(mode, 0.5))
    assert gevrey_norm(unit, 0.3, 0.5) == pytest.approx(math.exp(0.3 * 7), rel=1e-13)
    # coefficients e^{-sigma0 |xi|}: finite below sigma0 and increasing in sigma
    c = np.exp(-0.8 * grid1d.kabs) * grid1d.mask * (grid1d.index_sq > 0)
    g = f.with_coeffs(c[None])
    vals = [gevrey_norm(g, s, 0.0) for s in np.linspace(0, 0.75, 16)]
    assert np.all(np.isfinite(vals)) and np.all(np.diff(vals) > 0)
    with pytest.raises(OverflowError, match="shell"):
        gevrey_norm(random_field(make_grid(1, 2048), seed=2), 800.0, 0.0)
    with pytest.raises(ValueError):
        gevrey_norm(f, -1.0, 0.0)


def test_kato_single_mode_closed_form():
    g = make_grid(1, 64)
    xi0, a, p = 5, 0.2, 4.0
    U0 = cosine_mode(g, xi0, a)
    t_star = 1 / (p * xi0**2)
    tr = integrate(builtin_heat(), U0, IntegratorOptions(horizon=1.0, snapshots_per_decade=400,
                                                         extra_times=(t_star,)))
    s_crit = -0.5
    want = mode_factor(g, a) * xi0**s_crit * (p * math.e) ** (-1 / p)
    k = kato_norm(tr, p, s_crit + 2 / p)
    assert k.value == pytest.approx(want, rel=1e-12)
    assert k.argmax_time == pytest.approx(t_star)
    eps = 0.3
    want_eps = mode_factor(g, a) * xi0 ** (s_crit + 2 / p) * (p * eps * xi0**2 * math.e) ** (-1 / p)
    assert heat_flow_kato_norm(U0, eps, p, s_crit + 2 / p, math.inf) == pytest.approx(want_eps, rel=1e-10)


def test_kato_of_zero_and_series(tmp_path):
    g = make_grid(1, 32)
    tr = integrate(builtin_heat(), zeros(g), IntegratorOptions(horizon=1.0))
    assert kato_norm(tr, 4.0, 0.0).value == 0.0
    U0 = random_field(g, seed=3)
    tr = integrate(builtin_heat(), U0, IntegratorOptions(horizon=1.0, t_min=1e-6))
    ser = kato_norm_series(tr, 4.0, 0.0)
    assert np.all(np.diff(ser.values) >= 0)
    path = ser.to_csv(tmp_path / "n.csv")
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["time", "value", "norm_id"] and len(rows) == len(tr) + 1
    assert float(rows[-1][1]) == ser.values[-1]


def test_resolution_warning_at_first_snapshot():
    g = make_grid(1, 64)
    U0 = cosine_mode(g, 30, 1.0)
    tr = integrate(builtin_heat(), U0, IntegratorOptions(horizon=1.0, t_min=1e-2))
    with pytest.warns(ResolutionWarning):
        k = kato_norm(tr, 4.0, 0.0)
    assert k.at_lower_endpoint


def test_kato_norm_scaling_invariance():
    U0 = generate_initial_data(InitialDataLaw(s=-0.5, norm=0.5), make_grid(1, 128), seed=4)
    tr = integrate(builtin_burgers(), U0, IntegratorOptions(horizon=0.5, dt=1e-3, t_min=1e-5))
    resc = rescale_solution(tr, 2.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a, b = kato_norm(tr, 4.0).value, kato_norm(resc, 4.0).value
    assert abs(a - b) <= 1e-6 * a


def test_heat_flow_norm_monotone_and_vanishing():
    g = make_grid(1, 256)
    U0 = generate_initial_data(InitialDataLaw(s=-0.5, norm=1.0), g, seed=5)
    Ts = np.logspace(-8, 1, 37)
    H = np.array([heat_flow_kato_norm(U0, 0.1, 4.0, 0.0, T) for T in Ts])
    assert np.all(np.diff(H) >= -1e-15 * H.max())
    # four decades of decrease toward zero, bounded by T^{1/p} ||U0||_{H^s}
    small = Ts <= 1e-4
    assert np.all(H[small] <= Ts[small] ** 0.25 * sobolev_norm(U0, 0.0) * (1 + 1e-12))
    assert np.all(np.diff(H[small]) > 0)
    assert H[0] <= 0.2 * H[small][-1]


def test_subcritical_constant_single_mode():
    g = make_grid(1, 64)
    xi0, eps, delta = 6, 0.1, 0.5
    p = 2 / delta
    U0 = cosine_mode(g, xi0, 1.0)
    T_list = np.logspace(-4, 0, 9)
    got = heat_flow_subcritical_bound_constant(U0, delta, p, T_list, -0.5, eps)
    # the ratio is sup_{t<=T} (t/T)^{1/p} e^{-eps t xi0^2}, largest at the smallest T
    assert got == pytest.approx(math.exp(-eps * T_list[0] * xi0**2), rel=1e-2)
    with pytest.raises(ValueError):
        heat_flow_subcritical_bound_constant(U0, 0.0, p, T_list, -0.5, eps)


def test_subcritical_ratio_bounded_over_four_decades():
    g = make_grid(1, 256)
    U0 = generate_initial_data(InitialDataLaw(s=0.0, norm=1.0), g, seed=6)
    ratios = [heat_flow_subcritical_bound_constant(U0, 0.5, 4.0, [T], -0.5, 0.1) for T in np.logspace(-4, 0, 9)]
    assert max(ratios) <= 1.0 + 1e-12
    assert max(ratios) / min(ratios) < 10


def test_dyadic_norm_examples():
    g = make_grid(1, 64)
    times = np.linspace(0, 0.5, 11)
    assert dyadic_eq_norm(Trace(builtin_heat(), g, times, np.zeros((11, 1, 64), complex)), 2.0) == 0.0
    U0 = cosine_mode(g, 5, 0.4)
    const = Trace(builtin_heat(), g, times, np.repeat(U0.coeffs[None], 11, axis=0))
    for q in (1.0, 2.0, 4.0):
        want = 0.5 ** (1 / q) * 2 ** (2 * (0.5 + 2 / q)) * mode_factor(g, 0.4)
        assert dyadic_eq_norm(const, q) == pytest.approx(want, rel=1e-13)


def test_dyadic_norm_heat_flow_oracle():
    g = make_grid(1, 64, truncation_radius=10)
    U0 = random_field(g, seed=7)
    T = 0.1
    times = np.linspace(0, T, 40001)
    tr = integrate(builtin_heat(), U0, IntegratorOptions(horizon=T, times=times))
    # exact time integral per dyadic shell for q = 2
    total = 0.0
    for j in range(0, 4):
        sel = g.mask & (g.kabs >= 2**j) & (g.kabs < 2 ** (j + 1))
        k2 = g.k2[sel]
        c2 = np.abs(U0.coeffs[0][sel]) ** 2
        integral = np.sum(c2 * (1 - np.exp(-2 * T * k2)) / (2 * k2)) * g.norm_factor
        total += 2 ** (2 * j * 1.5) * integral
    assert dyadic_eq_norm(tr, 2.0) == pytest.approx(math.sqrt(total), rel=1e-6)
    # re-summation on the same time grid
    resum = 0.0
    for j in range(0, 4):
        sel = g.mask & (g.kabs >= 2**j) & (g.kabs < 2 ** (j + 1))
        l2 = np.sqrt(np.sum(np.abs(tr.coeffs[:, 0][:, sel]) ** 2, axis=1) * g.norm_factor)
        resum += 2 ** (2 * j * 1.5) * trapezoid(l2**2, times)
    assert dyadic_eq_norm(tr, 2.0) == pytest.approx(math.sqrt(resum), rel=1e-12)


def test_product_law_single_mode():
    g = make_grid(1, 64)
    xi0, s = 3, 0.25
    u = cosine_mode(g, xi0, 0.5)
    r = 2 * s - 0.5
    want = (2 * xi0) ** r / (xi0 ** (2 * s) * math.sqrt(2 * g.norm_factor))
    assert product_law_ratio(s, 2, [u, u]) == pytest.approx(want, rel=1e-13)
    with pytest.raises(ValueError, match="outside"):
        product_law_ratio(0.6, 2, [u, u])
    with pytest.raises(ValueError, match="exactly"):
        product_law_ratio(0.25, 3, [u, u])


def test_product_law_resolution_stability():
    law = InitialDataLaw(s=0.25, norm=1.0)
    maxima = []
    for points in (32, 64, 128):
        g = make_grid(1, points)
        vals = [product_law_ratio(0.25, 2, [generate_initial_data(law, g, 2 * t),
                                            generate_initial_data(law, g, 2 * t + 1)]) for t in range(5)]
        assert np.all(np.isfinite(vals))
        maxima.append(max(vals))
    assert max(maxima) / min(maxima) < 2
