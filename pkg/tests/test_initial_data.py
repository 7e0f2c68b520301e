import numpy as np
import pytest

from splab.initial_data import Ensemble, InitialDataLaw, divergence, generate_initial_data
from splab.models import builtin_burgers
from splab.norms import sobolev_norm
from splab.spectral import make_grid


def test_seed_determinism():
    g = make_grid(2, 32)
    law = InitialDataLaw(s=0.0, norm=1.0)
    a = generate_initial_data(law, g, seed=11)
    b = generate_initial_data(law, g, seed=11)
    c = generate_initial_data(law, g, seed=12)
    assert a.coeffs.tobytes() == b.coeffs.tobytes()
    assert not np.allclose(a.coeffs, c.coeffs)
    a.check()


@pytest.mark.parametrize("d,coarse", [(1, 64), (2, 32)])
def test_draws_do_not_depend_on_resolution(d, coarse):
    law = InitialDataLaw(s=0.0, amplitude=1.0, cutoff=10.0)
    f = generate_initial_data(law, make_grid(d, coarse), seed=3)
    F = generate_initial_data(law, make_grid(d, 2 * coarse), seed=3)
    K = 10
    idx = np.concatenate([np.arange(0, K + 1), np.arange(-K, 0)])
    sub_f = f.coeffs[0][np.ix_(*([idx % coarse] * d))]
    sub_F = F.coeffs[0][np.ix_(*([idx % (2 * coarse)] * d))]
    assert np.array_equal(sub_f, sub_F)


def test_envelope_and_target_norm():
    g = make_grid(1, 256)
    law = InitialDataLaw(s=-0.5, amplitude=2.0, margin=0.1)
    f = generate_initial_data(law, g, seed=0)
    assert sobolev_norm(f, -0.5) == pytest.approx(law.target_norm(g), rel=0.05)
    k = g.kabs[law.active(g)]
    mods = np.abs(f.coeffs[0][law.active(g)])
    assert np.allclose(mods, 2.0 * k ** (-law.exponent(1)), rtol=1e-13)
    normed = generate_initial_data(InitialDataLaw(s=-0.5, norm=0.3), g, seed=0)
    assert sobolev_norm(normed, -0.5) == pytest.approx(0.3, rel=1e-13)
    assert abs(normed.mean()[0]) == 0.0


def test_cutoff_and_kmin():
    g = make_grid(1, 128)
    f = generate_initial_data(InitialDataLaw(s=0.0, cutoff=20.0, kmin=3.0), g, seed=1)
    live = g.kabs[np.abs(f.coeffs[0]) > 0]
    assert live.min() == 3.0 and live.max() == 20.0


def test_navier_stokes_law_is_divergence_free():
    g = make_grid(3, 32)
    u = generate_initial_data(InitialDataLaw(s=0.5, norm=1.0, divergence_free=True), g, seed=4, components=3)
    assert np.max(np.abs(divergence(u))) <= 1e-14
    u.check()


def test_roughness_witnessed_by_resolution_scan():
    # s = s_crit + 1/2 for Burgers; the next norm up grows with the cutoff
    law = InitialDataLaw(s=0.0, norm=1.0, margin=0.1)
    finite, rough = [], []
    for points in (128, 256, 512, 1024):
        f = generate_initial_data(law, make_grid(1, points), seed=5)
        finite.append(sobolev_norm(f, 0.0))
        rough.append(sobolev_norm(f, 0.6 + law.margin))
    assert np.allclose(finite, 1.0)
    assert np.all(np.diff(rough) > 0) and rough[-1] > 2 * rough[0]


def test_unrepresentable_envelope():
    with pytest.raises(ValueError, match="representable"):
        generate_initial_data(InitialDataLaw(s=0.0), make_grid(1, 16), seed=0)
    with pytest.raises(ValueError, match="no active"):
        generate_initial_data(InitialDataLaw(s=0.0, kmin=100.0), make_grid(1, 64), seed=0)
    with pytest.raises(ValueError, match="margin"):
        InitialDataLaw(s=0.0, margin=0.0)


def test_ensemble_runs_are_reproducible():
    ens = Ensemble(InitialDataLaw(s=-0.5, norm=0.5), {"d": 1, "points": 64}, seeds=[0, 1], horizon=0.1,
                   dt=1e-2, per_decade=4)
    first = [tr.coeffs.tobytes() for _, tr in ens.traces(builtin_burgers())]
    again = [tr.coeffs.tobytes() for _, tr in ens.traces(builtin_burgers())]
    assert first == again and first[0] != first[1]
    threaded = Ensemble(**{**ens.__dict__, "workers": 2})
    assert [tr.coeffs.tobytes() for _, tr in threaded.traces(builtin_burgers())] == first
    desc = ens.describe()
    assert desc["seeds"] == [0, 1] and "Philox" in desc["rng"]
