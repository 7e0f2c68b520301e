"""Norm functionals on fields and traces.

All Sobolev-type norms are homogeneous: the zero mode is excluded and the
weight is ``|xi|^{2s}``.  Lattice sums carry :attr:`Grid.norm_factor`, so for
a field ``f`` with coefficients ``c``::

    ||f||_{H^s}^2 = norm_factor * sum_{xi != 0} |xi|^{2s} |c(xi)|^2
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import minimize_scalar

from .integrator import Trace, radial_energy
from .models import scaling_data
from .spectral import SpectralField, dealiased_product, shell_decompose


class ResolutionWarning(UserWarning):
    """A supremum over time was attained at the first positive snapshot."""


class MeanNotZeroError(ValueError):
    pass


@dataclass
class NormSeries:
    times: np.ndarray
    values: np.ndarray
    norm_id: str

    def to_csv(self, path: str | Path) -> Path:
        """Write ``time,value,norm_id`` rows (header included)."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "value", "norm_id"])
            for t, v in zip(self.times, self.values):
                w.writerow([repr(float(t)), repr(float(v)), self.norm_id])
        return path


@dataclass
class KatoNorm:
    """``sup_i t_i^{1/p} ||U(t_i)||_{H^s}`` with its location."""

    value: float
    argmax_time: float
    p: float
    s: float
    at_lower_endpoint: bool = False

    def __float__(self) -> float:
        return self.value


def _require_mean_free(f: SpectralField, s: float, tol: float = 1e-12) -> None:
    if s > 0:
        return
    scale = max(float(np.max(np.abs(f.coeffs))), 1e-300)
    if np.max(np.abs(f.mean())) > tol * scale:
        raise MeanNotZeroError(f"homogeneous H^{s:g} norm needs a mean-free field")


def _weighted_sum(kr: np.ndarray, E: np.ndarray, s: float) -> np.ndarray:
    return np.sum(kr ** (2.0 * s) * E, axis=-1)


def sobolev_norm(f: SpectralField, s: float) -> float:
    """Homogeneous ``H^s`` norm (zero mode excluded)."""
    _require_mean_free(f, s)
    kr, E = radial_energy(f)
    return float(np.sqrt(_weighted_sum(kr, E, s) * f.grid.norm_factor))


def sobolev_norm_direct(f: SpectralField, s: float) -> float:
    """Mode-by-mode summation of :func:`sobolev_norm`, kept as an oracle."""
    g = f.grid
    total = 0.0
    flat_k = g.kabs.ravel()
    for c in f.coeffs:
        flat = c.ravel()
        for i in np.flatnonzero((g.index_sq.ravel() > 0) & g.mask.ravel()):
            total += flat_k[i] ** (2 * s) * abs(flat[i]) ** 2
    return math.sqrt(total * g.norm_factor)


def gevrey_norm(f: SpectralField, sigma: float, s: float) -> float:
    """``||exp(sigma |D|) f||_{H^s}``, summed in log space.

    Raises :class:`OverflowError` naming the dominant shell if the value is not
    representable.
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    _require_mean_free(f, s)
    kr, E = radial_energy(f)
    nz = E > 0
    if not np.any(nz):
        return 0.0
    logs = 2 * sigma * kr[nz] + 2 * s * np.log(kr[nz]) + np.log(E[nz])
    top = float(np.max(logs))
    total = top + math.log(float(np.sum(np.exp(logs - top)))) + math.log(f.grid.norm_factor)
    if 0.5 * total > math.log(np.finfo(float).max):
        worst = float(kr[nz][np.argmax(logs)])
        raise OverflowError(f"Gevrey norm overflows; dominant shell |xi| = {worst:g}")
    return math.exp(0.5 * total)


def _default_s(trace: Trace, p: float) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return scaling_data(trace.spec).s_p(p)


def sobolev_series(trace: Trace, s: float) -> np.ndarray:
    kr, E = trace.radial_energy
    return np.sqrt(_weighted_sum(kr, E, s) * trace.grid.norm_factor)


def _time_weight(times: np.ndarray, p: float) -> np.ndarray:
    if math.isinf(p):
        return np.ones_like(times)
    return times ** (1.0 / p)


def kato_norm(trace: Trace, p: float, s: float | None = None, T: float | None = None) -> KatoNorm:
    """Kato norm over the snapshots with ``t <= T`` (all by default).

    ``s`` defaults to ``s_crit + 2/p``.  ``p = inf`` gives ``sup_t ||U(t)||_{H^s}``
    (with ``s = s_crit``).  A :class:`ResolutionWarning` is issued when the
    maximum sits at the first positive snapshot.
    """
    s = _default_s(trace, p) if s is None else s
    tr = trace if T is None else trace.restrict(T)
    vals = _time_weight(tr.times, p) * sobolev_series(tr, s)
    i = int(np.argmax(vals))
    lower = bool(i == 1 and len(tr) > 2 and vals[i] > 0 and not math.isinf(p))
    if lower:
        warnings.warn(f"Kato norm attained at the first positive snapshot t={tr.times[i]:.3e}; "
                      "refine the time grid near 0", ResolutionWarning, stacklevel=2)
    return KatoNorm(float(vals[i]), float(tr.times[i]), p, s, lower)


def kato_norm_series(trace: Trace, p: float, s: float | None = None) -> NormSeries:
    """Running Kato norm ``T -> ||U||_{K^p_T}`` on the snapshot times."""
    s = _default_s(trace, p) if s is None else s
    vals = np.maximum.accumulate(_time_weight(trace.times, p) * sobolev_series(trace, s))
    return NormSeries(trace.times.copy(), vals, f"kato(p={p:g},s={s:g})")


def _heat_profile(U0: SpectralField):
    kr, E = radial_energy(U0)
    nz = E > 0
    return kr[nz], E[nz]


def heat_flow_kato_profile(U0: SpectralField, eps: float, p: float, s: float):
    """Return ``f(t) = t^{1/p} ||exp(eps t Lap) U0||_{H^s}`` as a vectorized callable."""
    kr, E = _heat_profile(U0)
    w = kr ** (2 * s) * E * U0.grid.norm_factor
    k2 = kr**2

    def f(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        vals = np.sqrt(np.exp(-2 * eps * np.outer(t, k2)) @ w)
        return _time_weight(t, p) * vals

    return f, kr


def heat_flow_kato_norm(U0: SpectralField, eps: float, p: float, s: float, T: float,
                        per_decade: int = 64) -> float:
    """``sup_{0 < t <= T} t^{1/p} ||exp(eps t Lap) U0||_{H^s}``.

    Dense log-grid sampling followed by a bounded golden-section refinement
    around the discrete maximum.  ``T = inf`` is allowed.
    """
    if not 0 < eps:
        raise ValueError("eps must be positive")
    f, kr = heat_flow_kato_profile(U0, eps, p, s)
    if len(kr) == 0:
        return 0.0
    if math.isinf(p):
        return float(f(np.array([0.0]))[0])
    # f increases on (0, 1/(p eps kmax^2)) and decreases after 1/(p eps kmin^2)
    t_lo = 1.0 / (p * eps * kr.max() ** 2)
    t_hi = 1.0 / (p * eps * kr.min() ** 2)
    if T <= t_lo:
        return float(f(T)[0])
    upper = min(T, t_hi)
    n = max(int(math.ceil(math.log10(upper / t_lo) * per_decade)), 2)
    ts = t_lo * (upper / t_lo) ** (np.arange(n + 1) / n)
    vals = f(ts)
    i = int(np.argmax(vals))
    a = ts[max(i - 1, 0)]
    b = ts[min(i + 1, n)]
    best = float(vals[i])
    if b > a:
        res = minimize_scalar(lambda lt: -float(f(math.exp(lt))[0]), bounds=(math.log(a), math.log(b)),
                              method="bounded", options={"xatol": 1e-10})
        best = max(best, -float(res.fun))
    return best


def heat_flow_subcritical_bound_constant(U0: SpectralField, delta: float, p: float,
                                         T_list: Sequence[float], s_crit: float,
                                         eps: float = 0.1, alpha: float | None = None) -> float:
    """Empirical ``C`` in ``||exp(eps t Lap) U0||_{K^p_T} <= C T^{delta/2} ||U0||_{H^{s_crit+delta}}``.

    The maximum of the ratio over ``T_list``.
    """
    if not delta > 1e-6:
        raise ValueError("delta must be positive")
    if alpha is not None and not delta < alpha:
        raise ValueError(f"delta must lie in (0, alpha={alpha})")
    s = s_crit + 2.0 / p
    denom0 = sobolev_norm(U0, s_crit + delta)
    if denom0 == 0:
        return 0.0
    ratios = [heat_flow_kato_norm(U0, eps, p, s, T) / (T ** (delta / 2) * denom0) for T in T_list]
    return float(max(ratios))


def dyadic_eq_norm(trace: Trace, q: float, regularity: float = 0.5) -> float:
    """``|| 2^{j(regularity + 2/q)} ||Delta_j U||_{L^q(0,T; L^2)} ||_{l^2(j)}``.

    Time integrals use the trapezoid rule on the snapshot times; ``q = inf``
    takes the maximum.
    """
    g = trace.grid
    if len(trace) == 0:
        return 0.0
    specs = [shell_decompose(trace.snapshot(i), policy="dyadic") for i in range(len(trace))]
    nsh = min(len(s.shell_energy) for s in specs)
    energy = np.stack([s.shell_energy[:nsh] for s in specs]) * g.norm_factor
    l2 = np.sqrt(energy)
    j = np.log2(specs[0].shell_edges[:nsh])
    if math.isinf(q):
        tnorm = np.max(l2, axis=0)
        expo = regularity
    else:
        tnorm = trapezoid(l2**q, trace.times, axis=0) ** (1.0 / q)
        expo = regularity + 2.0 / q
    return float(np.sqrt(np.sum((2.0 ** (j * expo) * tnorm) ** 2)))


def product_law_ratio(s: float, k: int, fields: Sequence[SpectralField]) -> float:
    """``||prod a_i||_{H^{ks-(k-1)d/2}} / prod ||a_i||_{H^s}``.

    The mean of the product is discarded (the homogeneous norm ignores the
    zero mode).
    """
    if len(fields) != k:
        raise ValueError(f"need exactly k={k} fields")
    d = fields[0].grid.d
    if not d / 2 - d / k < s < d / 2:
        raise ValueError(f"s={s} outside the admissible range ({d / 2 - d / k}, {d / 2})")
    for f in fields:
        _require_mean_free(f, 0.0)
    prod = dealiased_product(list(fields))
    c = prod.coeffs.copy()
    c[(slice(None),) + (0,) * d] = 0.0
    r = k * s - (k - 1) * d / 2
    num = sobolev_norm(prod.with_coeffs(c), r)
    den = math.prod(sobolev_norm(f, s) for f in fields)
    return num / den
