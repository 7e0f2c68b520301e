"""Gevrey comparison function, bootstrap checks, radius bounds and estimates.

The comparison function of a solution ``U`` with parameters
``(lam, eps, T)`` is::

    U_a(t)^(xi) = exp(-lam^2 t / (4 (1 - eps) T) + lam t |xi| / sqrt(T)) |U^(t, xi)|

Its Kato norm controls ``exp(lam sqrt(T) |D|) U(T)``, i.e. an analyticity
strip of width ``lam sqrt(T)`` at time ``T``.  The existential constants of
the a priori estimates are replaced by empirical values calibrated on
seeded ensembles (:class:`CalibratedConstants`).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .initial_data import Ensemble
from .integrator import IntegratorOptions, Trace, integrate, radial_energy
from .models import SystemSpec, scaling_data
from .norms import heat_flow_kato_norm, heat_flow_kato_profile, sobolev_norm, sobolev_series
from .spectral import SpectralField, shell_decompose

_REL = 1e-12
# Relative amplitude below which radial bins are treated as roundoff in
# weighted norms; the Gevrey weight would otherwise amplify it.
NOISE_FLOOR = 1e-13


class AdmissibilityError(ValueError):
    """A threshold time was exceeded, so the logarithm in a bound is negative."""


def _scaling(spec: SystemSpec):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return scaling_data(spec)


@dataclass(frozen=True)
class GevreyParams:
    """Weight strength ``lam``, viscosity split ``eps``, horizon ``T`` and Kato exponent ``p``."""

    lam: float
    eps: float
    T: float
    p: float

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if not self.T > 0:
            raise ValueError("T must be positive")

    def check_exponent(self, alpha: float, k: int) -> None:
        """Require ``0 < 2/p < alpha`` and ``p > k``."""
        if not (0 < 2.0 / self.p < alpha and self.p > k):
            raise ValueError(f"p={self.p} must satisfy 2/p < alpha={alpha} and p > k={k}")

    @property
    def decay(self) -> float:
        """``lam^2 / (4 (1 - eps))``."""
        return self.lam**2 / (4.0 * (1.0 - self.eps))

    def log_weight(self, t, kr):
        """Exponent of the weight at time ``t`` (relative to the start)."""
        t = np.asarray(t, dtype=float)
        return -self.decay * t / self.T + self.lam * t * kr / math.sqrt(self.T)


def gevrey_weight_field(U: SpectralField, params: GevreyParams, t: float) -> SpectralField:
    """``U_a(t)``: nonnegative real coefficients, weight applied to ``|U^|``.

    Evaluated in log space; raises :class:`OverflowError` if a retained mode
    is not representable.
    """
    if not -1e-15 <= t <= params.T * (1 + 1e-12):
        raise ValueError(f"t={t} outside [0, T={params.T}]")
    g = U.grid
    amp = np.abs(U.coeffs)
    logw = params.log_weight(t, g.kabs)
    with np.errstate(divide="ignore"):
        loga = np.log(amp) + logw
    if np.any(loga[:, g.mask] > 709.0):
        raise OverflowError("weighted coefficient overflows")
    return SpectralField(g, np.exp(loga) * g.mask, real=False)


def _log_norm_sq(kr, E, s, logw, norm_factor):
    """``log(norm_factor * sum_r kr^2s exp(2 logw) E)`` row-wise, overflow safe."""
    with np.errstate(divide="ignore"):
        terms = 2 * s * np.log(kr) + 2 * logw + np.log(E)
    top = np.max(terms, axis=-1, keepdims=True)
    finite = np.isfinite(top)
    top = np.where(finite, top, 0.0)
    with np.errstate(divide="ignore"):
        out = top[..., 0] + np.log(np.sum(np.exp(terms - top), axis=-1)) + math.log(norm_factor)
    return np.where(finite[..., 0], out, -np.inf)


def above_floor(E: np.ndarray, floor: float = NOISE_FLOOR) -> np.ndarray:
    """Zero the radial energies below ``floor^2`` times the row maximum."""
    E = np.asarray(E)
    if floor <= 0:
        return E
    top = np.max(E, axis=-1, keepdims=True)
    return np.where(E >= floor**2 * top, E, 0.0)


def weighted_kato_values(trace: Trace, params: GevreyParams, s: float, t0: float = 0.0,
                         floor: float = NOISE_FLOOR):
    """``(tau, v)`` with ``v = tau^{1/p} ||U_a(t0 + tau)||_{H^s}`` for ``0 <= tau <= T``.

    Radial bins below ``floor`` (relative amplitude) are dropped.
    """
    kr, E = trace.radial_energy
    tau = trace.times - t0
    sel = (tau >= -1e-14 * max(t0, 1.0)) & (tau <= params.T * (1 + 1e-12))
    tau = np.clip(tau[sel], 0.0, None)
    logw = params.log_weight(tau[:, None], kr[None, :])
    lns = _log_norm_sq(kr, above_floor(E[sel], floor), s, logw, trace.grid.norm_factor)
    with np.errstate(divide="ignore"):
        v = np.where(tau > 0, np.exp(lns / 2 + np.log(np.where(tau > 0, tau, 1.0)) / params.p), 0.0)
    return tau, v


def weighted_kato_norm(trace: Trace, params: GevreyParams, s: float, t0: float = 0.0,
                       floor: float = NOISE_FLOOR) -> float:
    """``||U_a||_{K^p_T}`` over the snapshots."""
    _, v = weighted_kato_values(trace, params, s, t0, floor)
    return float(np.max(v)) if len(v) else 0.0


def heat_flow_kato_running(U0: SpectralField, eps: float, p: float, s: float, T_values,
                           per_decade: int = 256) -> np.ndarray:
    """``T -> ||exp(eps t Lap) U0||_{K^p_T}`` for many ``T`` from one dense sampling."""
    T_values = np.asarray(T_values, dtype=float)
    f, kr = heat_flow_kato_profile(U0, eps, p, s)
    out = np.zeros_like(T_values)
    pos = T_values > 0
    if len(kr) == 0 or not np.any(pos):
        return out
    t_lo = min(1.0 / (p * eps * kr.max() ** 2), float(T_values[pos].min()))
    t_hi = float(T_values.max())
    n = max(int(math.ceil(math.log10(t_hi / t_lo) * per_decade)), 2)
    ts = np.unique(np.concatenate([t_lo * (t_hi / t_lo) ** (np.arange(n + 1) / n), T_values[pos]]))
    run = np.maximum.accumulate(f(ts))
    idx = np.searchsorted(ts, T_values * (1 + 1e-12), side="right") - 1
    out[pos] = run[idx[pos]]
    return out


# ---------------------------------------------------------------------------
# Pointwise multiplier inequality
# ---------------------------------------------------------------------------

@dataclass
class MultiplierReport:
    samples: int
    violations: int
    worst_slack: float
    worst_at: dict

    @property
    def ok(self) -> bool:
        return self.violations == 0


def multiplier_inequality_check(lam, eps, T, xi_samples) -> MultiplierReport:
    """Check ``-lam^2/(4(1-eps)T) + lam|xi|/sqrt(T) - |xi|^2 <= -eps|xi|^2``.

    Arguments broadcast against each other.  The slack ``rhs - lhs`` is
    reported; values below ``-1e-12`` times the size of the terms count as
    violations.
    """
    lam, eps, T, xi = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (lam, eps, T, xi_samples)))
    xi = np.abs(xi)
    a = lam**2 / (4 * (1 - eps) * T)
    b = lam * xi / np.sqrt(T)
    lhs = -a + b - xi**2
    rhs = -eps * xi**2
    slack = rhs - lhs
    scale = np.maximum.reduce([np.abs(a), np.abs(b), xi**2, np.ones_like(xi)])
    bad = slack < -_REL * scale
    i = int(np.argmin(slack / scale)) if slack.size else 0
    flat = lambda arr: float(arr.ravel()[i]) if arr.size else float("nan")
    return MultiplierReport(int(slack.size), int(np.count_nonzero(bad)), flat(slack),
                            {"lam": flat(lam), "eps": flat(eps), "T": flat(T), "xi": flat(xi)})


# ---------------------------------------------------------------------------
# Calibrated constants
# ---------------------------------------------------------------------------

@dataclass
class CalibratedConstants:
    """Empirical surrogates of the existential constants.

    ``c_small = (4 C_lemma)^{-1/(k-1)}`` and ``eta = (c_small / (2 C_heat))^{2/delta}``
    are derived on construction.
    """

    k: int
    eps: float
    p: float
    C_lemma: float
    C_heat: float | None = None
    delta: float | None = None
    K_eps: float | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.C_lemma > 0:
            raise ValueError("calibrated lemma constant must be positive")

    @property
    def c_small(self) -> float:
        return small_constant(self.C_lemma, self.k)

    @property
    def eta(self) -> float | None:
        if self.C_heat is None or self.delta is None:
            return None
        return (self.c_small / (2.0 * self.C_heat)) ** (2.0 / self.delta)

    def check_matches(self, k: int, eps: float, p: float) -> None:
        if k != self.k or not math.isclose(eps, self.eps) or not math.isclose(p, self.p):
            raise ValueError(f"parameter mismatch with calibration: (k, eps, p)=({k}, {eps}, {p}) "
                             f"vs ({self.k}, {self.eps}, {self.p})")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["c_small"] = self.c_small
        out["eta"] = self.eta
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "CalibratedConstants":
        keys = {"k", "eps", "p", "C_lemma", "C_heat", "delta", "K_eps", "provenance"}
        return cls(**{k: v for k, v in d.items() if k in keys})


def small_constant(C: float, k: int) -> float:
    """``c_{k,eps} = 1 / (4 C)^{1/(k-1)}``."""
    return (4.0 * C) ** (-1.0 / (k - 1))


def lemma_ratio_table(trace: Trace, eps: float, p: float, s: float, T_grid: Sequence[float],
                      lam_grid: Sequence[float], t0: float = 0.0) -> np.ndarray:
    """Ratio ``(||U_a|| - H)_+ / (exp(lam^2 (k-1)/(4(1-eps))) ||U_a||^k)`` per ``(T, lam)``.

    ``H = ||exp(eps t Lap) U(t0)||_{K^p_T}`` and ``U_a`` is built on
    ``[t0, t0 + T]`` (``t0`` is snapped to the nearest snapshot); entries with
    ``||U_a|| = 0`` are 0.
    """
    k = trace.spec.k
    i0 = int(np.argmin(np.abs(trace.times - t0)))
    t0 = float(trace.times[i0])
    H = heat_flow_kato_running(trace.snapshot(i0), eps, p, s, T_grid)
    out = np.zeros((len(T_grid), len(lam_grid)))
    for i, T in enumerate(T_grid):
        for j, lam in enumerate(lam_grid):
            prm = GevreyParams(lam, eps, T, p)
            A = weighted_kato_norm(trace, prm, s, t0)
            if A <= 0:
                continue
            excess = A - H[i]
            if excess > 0:
                out[i, j] = math.exp(math.log(excess) - prm.decay * (k - 1) - k * math.log(A))
    return out


def calibrate_lemma_constant(spec: SystemSpec, eps: float, p: float, ensemble: Ensemble,
                             T_grid: Sequence[float], lam_grid: Sequence[float],
                             s: float | None = None, t0_grid: Sequence[float] = (0.0,)) -> CalibratedConstants:
    """Largest lemma ratio over an ensemble, start times, horizons and weights.

    Windows ``[t0, t0 + T]`` with ``t0`` in ``t0_grid`` apply the estimate to
    the evolved data ``U(t0)`` as well as to the initial data.  The ensemble
    snapshots are forced to include every ``t0`` and ``t0 + T``.  Failing
    runs are re-raised with the seed attached.
    """
    sd = _scaling(spec)
    s = sd.s_p(p) if s is None else s
    t0_grid = sorted(set(float(t) for t in t0_grid))
    marks = {t0 + T for t0 in t0_grid for T in T_grid} | {t for t in t0_grid if t > 0}
    ens = replace(ensemble, extra_times=tuple(sorted(set(ensemble.extra_times) | marks)),
                  horizon=max(ensemble.horizon, max(marks)))
    best, where, per_run = 0.0, None, {}
    seeds = iter(ens.seeds)
    runs = ens.traces(spec)
    while True:
        seed = next(seeds, None)
        if seed is None:
            break
        try:
            _, tr = next(runs)
        except Exception as exc:  # propagate with the run id
            raise RuntimeError(f"calibration run seed={seed} failed: {exc}") from exc
        run_best = 0.0
        for t0 in t0_grid:
            tab = lemma_ratio_table(tr, eps, p, s, T_grid, lam_grid, t0)
            run_best = max(run_best, float(tab.max()))
            if tab.max() > best:
                i, j = np.unravel_index(int(np.argmax(tab)), tab.shape)
                best = float(tab.max())
                where = {"seed": seed, "t0": t0, "T": float(T_grid[i]), "lam": float(lam_grid[j])}
        per_run[seed] = run_best
    if best <= 0:
        raise RuntimeError("no positive lemma ratio in the ensemble; enlarge the data or the weight grid")
    prov = {
        "ensemble": ens.describe(),
        "system": spec.name,
        "T_grid": [float(t) for t in T_grid],
        "lam_grid": [float(x) for x in lam_grid],
        "t0_grid": t0_grid,
        "s": s,
        "argmax": where,
        "per_seed_max": per_run,
    }
    return CalibratedConstants(spec.k, eps, p, best, provenance={"lemma": prov})


def calibrate_heat_constant(ensemble: Ensemble, spec: SystemSpec, delta: float, p: float, eps: float,
                            T_list: Sequence[float]) -> tuple[float, dict]:
    """Empirical ``C_{delta,p}`` over the ensemble's initial data."""
    from .norms import heat_flow_subcritical_bound_constant

    sd = _scaling(spec)
    vals = {}
    for seed in ensemble.seeds:
        U0 = ensemble.initial(seed, spec)
        vals[seed] = heat_flow_subcritical_bound_constant(U0, delta, p, T_list, sd.s_crit, eps, sd.alpha)
    prov = {"ensemble": ensemble.describe(), "delta": delta, "T_list": [float(t) for t in T_list],
            "per_seed": vals}
    return max(vals.values()), prov


def calibrate_K_eps(ensemble: Ensemble, spec: SystemSpec, eps: float, p: float) -> tuple[float, dict]:
    """Empirical ``K_eps`` with ``||exp(eps t Lap) u0||_{K^p_inf} <= K_eps ||u0||_{H^{s_crit}}``."""
    sd = _scaling(spec)
    s = sd.s_p(p)
    vals = {}
    for seed in ensemble.seeds:
        U0 = ensemble.initial(seed, spec)
        vals[seed] = heat_flow_kato_norm(U0, eps, p, s, math.inf) / sobolev_norm(U0, sd.s_crit)
    prov = {"ensemble": ensemble.describe(), "per_seed": vals,
            "single_shell_bound": (2 * p * math.e * eps / 2) ** (-1 / p) if p else None}
    return max(vals.values()), prov


# ---------------------------------------------------------------------------
# Bootstrap verification
# ---------------------------------------------------------------------------

@dataclass
class BootstrapReport:
    """Both sides of the induction hypothesis and of its consequence.

    ``kato_weighted[i]`` is ``||U_a||_{K^p_{tau_i}}``; ``heat_bound`` is
    ``(4/3) ||exp(eps t Lap) U(t0)||_{K^p_{tau_i}}``; ``smallness_bound`` is
    ``c exp(-lam^2 / (4 (1 - eps)))``.
    """

    params: GevreyParams
    tau: np.ndarray
    kato_weighted: np.ndarray
    heat_bound: np.ndarray
    smallness_bound: float
    first_violation: float | None
    violated: str | None
    gevrey_value: float
    c_small: float
    t0: float = 0.0

    @property
    def success(self) -> bool:
        return self.first_violation is None

    @property
    def certified(self) -> bool:
        """The Gevrey bound ``T^{1/p} ||exp(lam sqrt(T)|D|) U(T)|| <= c`` holds."""
        return self.success and self.gevrey_value <= self.c_small * (1 + 1e-9)

    @property
    def certified_radius(self) -> float:
        return self.params.lam * math.sqrt(self.params.T) if self.certified else 0.0

    def summary(self) -> dict:
        return {
            "T": self.params.T,
            "lambda": self.params.lam,
            "t0": self.t0,
            "success": self.success,
            "certified": self.certified,
            "first_violation": self.first_violation,
            "violated": self.violated,
            "kato_weighted": float(self.kato_weighted[-1]) if len(self.kato_weighted) else 0.0,
            "heat_bound": float(self.heat_bound[-1]) if len(self.heat_bound) else 0.0,
            "smallness_bound": self.smallness_bound,
            "gevrey_value": self.gevrey_value,
            "certified_radius": self.certified_radius,
        }


def verify_bootstrap(trace: Trace, params: GevreyParams, constants: CalibratedConstants,
                     s: float | None = None, t0: float = 0.0, floor: float = NOISE_FLOOR) -> BootstrapReport:
    """Check, for every snapshot horizon ``tau <= T`` after ``t0``::

        ||U_a||_{K^p_tau} <= (4/3) ||exp(eps t Lap) U(t0)||_{K^p_tau}
        ||U_a||_{K^p_tau} <= c exp(-lam^2 / (4 (1 - eps)))

    and evaluate ``T^{1/p} ||exp(lam sqrt(T) |D|) U(t0 + T)||_{H^s}``.
    """
    spec = trace.spec
    constants.check_matches(spec.k, params.eps, params.p)
    s = _scaling(spec).s_p(params.p) if s is None else s
    i0 = int(np.argmin(np.abs(trace.times - t0)))
    U_start = trace.snapshot(i0)
    t0 = float(trace.times[i0])
    tau, v = weighted_kato_values(trace, params, s, t0, floor)
    A = np.maximum.accumulate(v)
    H = heat_flow_kato_running(U_start, params.eps, params.p, s, tau)
    heat_bound = (4.0 / 3.0) * H
    small = constants.c_small * math.exp(-params.decay)
    first, which = None, None
    for i in range(len(tau)):
        if A[i] > heat_bound[i] * (1 + _REL) + 1e-300:
            first, which = float(tau[i]), "heat"
            break
        if A[i] > small * (1 + _REL):
            first, which = float(tau[i]), "smallness"
            break
    # Gevrey value at the final horizon
    end = int(np.argmin(np.abs(trace.times - (t0 + params.T))))
    if abs(trace.times[end] - (t0 + params.T)) > 1e-9 * max(params.T + t0, 1e-300):
        raise ValueError(f"trace has no snapshot at t0 + T = {t0 + params.T}")
    kr, E = radial_energy(trace.snapshot(end))
    logw = params.lam * math.sqrt(params.T) * kr
    lns = _log_norm_sq(kr, above_floor(E[None, :], floor), s, logw[None, :], trace.grid.norm_factor)[0]
    gev = math.exp(lns / 2) * params.T ** (1.0 / params.p) if np.isfinite(lns) else 0.0
    return BootstrapReport(params, tau, A, heat_bound, small, first, which, gev, constants.c_small, t0)


# ---------------------------------------------------------------------------
# Lower-bound formulas
# ---------------------------------------------------------------------------

def T_eps_subcritical(U0_norm: float, delta: float, eps: float, constants: CalibratedConstants) -> float:
    """``T_eps(U0) = eta_eps ||U0||_{H^{s_crit+delta}}^{-2/delta}``."""
    eta = _eta(constants, delta, eps)
    return eta * U0_norm ** (-2.0 / delta)


def _eta(constants: CalibratedConstants, delta: float, eps: float) -> float:
    if constants.eta is None:
        raise ValueError("constants lack C_heat/delta")
    if not math.isclose(delta, constants.delta) or not math.isclose(eps, constants.eps):
        raise ValueError("parameter mismatch with calibration")
    return constants.eta


def lambda_from_eta(T: float, U0_norm: float, delta: float, eps: float, eta: float) -> float:
    """``sqrt(2 delta (1 - eps)) log^{1/2}(eta / (T ||U0||^{2/delta}))``."""
    arg = eta / (T * U0_norm ** (2.0 / delta))
    if arg < 1 - 1e-12:
        raise AdmissibilityError(f"T={T:g} exceeds the threshold time (log argument {arg:.4g} < 1)")
    return math.sqrt(2 * delta * (1 - eps) * max(math.log(arg), 0.0))


def lambda_T_subcritical(T: float, U0_norm: float, delta: float, eps: float,
                         constants: CalibratedConstants) -> float:
    return lambda_from_eta(T, U0_norm, delta, eps, _eta(constants, delta, eps))


def lambda_from_heat_norm(heat_norm: float, c_small: float, eps: float) -> float:
    """``2 (1 - eps)^{1/2} log^{1/2}(c / (2 H))``; requires ``2 H <= c``."""
    if heat_norm <= 0:
        return math.inf
    arg = c_small / (2.0 * heat_norm)
    if arg < 1 - 1e-12:
        raise AdmissibilityError(f"heat-flow Kato norm {heat_norm:.4g} exceeds c/2 = {c_small / 2:.4g}")
    return 2.0 * math.sqrt((1 - eps) * max(math.log(arg), 0.0))


def lambda_T_critical(T: float, U0: SpectralField, eps: float, p: float, constants: CalibratedConstants,
                      s: float) -> float:
    """Weight strength from the measured ``||exp(eps t Lap) U0||_{K^p_T}``."""
    if not math.isclose(eps, constants.eps) or not math.isclose(p, constants.p):
        raise ValueError("parameter mismatch with calibration")
    return lambda_from_heat_norm(heat_flow_kato_norm(U0, eps, p, s, T), constants.c_small, eps)


def T_eps_critical(U0: SpectralField, eps: float, p: float, constants: CalibratedConstants, s: float,
                   T_max: float = 1e6, rtol: float = 1e-10) -> float:
    """Largest ``T`` with ``2 ||exp(eps t Lap) U0||_{K^p_T} <= c`` (bisection in ``log T``).

    Returns ``inf`` if the bound holds up to ``T_max``.
    """
    target = constants.c_small / 2.0

    def H(T):
        return heat_flow_kato_norm(U0, eps, p, s, T)

    if H(T_max) <= target:
        return math.inf
    lo, hi = math.log(T_max) - 1.0, math.log(T_max)
    while H(math.exp(lo)) > target:
        hi = lo
        lo -= 2.0
        if lo < -700:
            return 0.0
    while hi - lo > rtol:
        mid = 0.5 * (lo + hi)
        if H(math.exp(mid)) <= target:
            lo = mid
        else:
            hi = mid
    return math.exp(lo)


# ---------------------------------------------------------------------------
# Radius estimation
# ---------------------------------------------------------------------------

@dataclass
class FitOptions:
    """Controls of the analyticity-strip fit.

    ``noise_floor`` is relative to the largest shell maximum.  ``k_min``
    drops shells below a wavenumber; ``gaussian`` adds a ``-gamma xi^2`` term.
    """

    policy: str = "unit"
    width: float = 1.0
    noise_floor: float = 1e-13
    min_shells: int = 6
    k_min: float = 0.0
    gaussian: bool = False


@dataclass
class RadiusEstimate:
    """Strip-width fit ``log shell_max ~ c - alpha log xi - delta xi``.

    ``status`` is ``"ok"`` or ``"unresolved"``; unresolved estimates carry
    ``nan`` values.  ``floor_flag`` is set when the noise floor, rather than
    the cutoff, ended the window.
    """

    delta_fit: float
    alpha_fit: float
    window: tuple[float, float]
    residual: float
    floor_flag: bool
    n_shells: int
    status: str = "ok"
    gamma_fit: float = 0.0
    delta_raw: float = float("nan")

    @property
    def resolved(self) -> bool:
        return self.status == "ok"


def fit_strip(k: np.ndarray, amp: np.ndarray, options: FitOptions | None = None) -> RadiusEstimate:
    """Fit shell maxima ``amp`` located at wavenumbers ``k``."""
    opt = options or FitOptions()
    k = np.asarray(k, dtype=float)
    amp = np.asarray(amp, dtype=float)
    ok = np.isfinite(k) & (k >= opt.k_min) & (amp > 0)
    if not np.any(ok):
        return RadiusEstimate(math.nan, math.nan, (math.nan, math.nan), math.nan, False, 0, "unresolved")
    top = amp[ok].max()
    above = ok & (amp >= opt.noise_floor * top)
    floor_flag = bool(np.any(ok & ~above) or np.any((amp == 0) & (k > k[above].max() if np.any(above) else 0)))
    n = int(np.count_nonzero(above))
    if n < opt.min_shells:
        return RadiusEstimate(math.nan, math.nan, (math.nan, math.nan), math.nan, floor_flag, n, "unresolved")
    x = k[above]
    y = np.log(amp[above])
    cols = [np.ones_like(x), -np.log(x), -x]
    if opt.gaussian:
        cols.append(-x**2)
    Amat = np.stack(cols, axis=1)
    coef, *_ = np.linalg.lstsq(Amat, y, rcond=None)
    resid = y - Amat @ coef
    return RadiusEstimate(
        delta_fit=float(max(coef[2], 0.0)),
        alpha_fit=float(coef[1]),
        window=(float(x.min()), float(x.max())),
        residual=float(np.sqrt(np.mean(resid**2))),
        floor_flag=floor_flag,
        n_shells=n,
        gamma_fit=float(coef[3]) if opt.gaussian else 0.0,
        delta_raw=float(coef[2]),
    )


def estimate_radius(f: SpectralField, options: FitOptions | None = None) -> RadiusEstimate:
    """Analyticity-strip width of ``f`` from its shell maxima."""
    opt = options or FitOptions()
    sh = shell_decompose(f, opt.policy, opt.width)
    nonempty = sh.shell_count > 0
    return fit_strip(sh.shell_kmax[nonempty], sh.shell_max[nonempty], opt)


def radius_series(trace: Trace, options: FitOptions | None = None) -> list[RadiusEstimate]:
    return [estimate_radius(trace.snapshot(i), options) for i in range(len(trace))]


# ---------------------------------------------------------------------------
# Long-time experiment
# ---------------------------------------------------------------------------

@dataclass
class CorollaryReport:
    t0: float | None
    threshold: float
    lam: float
    certified_liminf: float
    decay: dict
    bootstrap: list[dict]
    radius: list[dict]
    status: str
    trivial: bool = False

    @property
    def bootstrap_ok(self) -> bool:
        return all(b["success"] and b["certified"] for b in self.bootstrap)

    def measured_ratio(self, t: float) -> float:
        for r in self.radius:
            if math.isclose(r["t"], t, rel_tol=1e-9):
                return r["ratio"]
        raise KeyError(t)

    def ratio_endpoints(self) -> tuple[float, float, float]:
        """Measured ``R/sqrt(t)`` at ``t0``, at the last resolved snapshot, and that snapshot's time."""
        if self.t0 is None:
            return math.nan, math.nan, math.nan
        first = self.measured_ratio(self.t0) if self.t0 > 0 else math.nan
        last = [r for r in self.radius if r["resolved"] and r["t"] >= self.t0]
        if not last:
            return first, math.nan, math.nan
        return first, last[-1]["ratio"], last[-1]["t"]

    def to_dict(self) -> dict:
        return {
            "t0": self.t0,
            "threshold": self.threshold,
            "lambda": self.lam,
            "certified_liminf": self.certified_liminf,
            "decay": self.decay,
            "bootstrap": self.bootstrap,
            "radius": self.radius,
            "status": self.status,
            "trivial": self.trivial,
        }


def corollary_experiment(spec: SystemSpec, u0: SpectralField, eps: float, p: float, horizon: float,
                         constants: CalibratedConstants, t0_min: float = 0.0, margin: float = 1.0,
                         T_grid: Sequence[float] | None = None, dt: float = 1e-2,
                         per_decade: int = 16, fit: FitOptions | None = None,
                         trace: Trace | None = None, n_T: int = 12) -> CorollaryReport:
    """Long-time analyticity experiment for a global solution.

    ``t0`` is the first snapshot time ``>= t0_min`` with
    ``||u(t0)||_{H^{s_crit}} <= margin * c / (2 K_eps)``; ``margin < 1`` keeps
    the certified ``lam`` away from zero.  The shifted comparison
    function with ``lam = 2 sqrt(1-eps) log^{1/2}(c / (2 K_eps ||u(t0)||))`` is
    then checked on ``[t0, t0 + T]`` for each ``T`` in ``T_grid`` (default:
    ``n_T`` snapshot offsets spread over the rest of the run).
    """
    if constants.K_eps is None:
        raise ValueError("constants lack K_eps")
    constants.check_matches(spec.k, eps, p)
    sd = _scaling(spec)
    s = sd.s_p(p)
    c = constants.c_small
    threshold = c / (2.0 * constants.K_eps)
    if not np.any(u0.coeffs):
        return CorollaryReport(0.0, threshold, math.inf, math.inf, {}, [], [], "trivial", trivial=True)
    if trace is None:
        opts = IntegratorOptions(horizon=horizon, dt=dt, snapshots_per_decade=per_decade,
                                 t_min=min(1e-3, horizon * 1e-3),
                                 extra_times=tuple(np.linspace(0, horizon, 81)[1:]))
        trace = integrate(spec, u0, opts)
    crit = sobolev_series(trace, sd.s_crit)
    decay = {"t": [float(t) for t in trace.times], "norm": [float(v) for v in crit]}
    if not 0 < margin <= 1:
        raise ValueError("margin must lie in (0, 1]")
    cand = np.flatnonzero((trace.times >= t0_min) & (crit <= margin * threshold))
    if len(cand) == 0:
        return CorollaryReport(None, threshold, math.nan, math.nan, decay, [], [], "threshold-not-reached")
    i0 = int(cand[0])
    t0 = float(trace.times[i0])
    norm0 = float(crit[i0])
    lam = 2.0 * math.sqrt((1 - eps) * math.log(c / (2.0 * constants.K_eps * norm0))) if norm0 > 0 else math.inf
    later = trace.times[trace.times > t0] - t0
    if T_grid is None:
        T_grid = later[np.unique(np.linspace(0, len(later) - 1, min(n_T, len(later))).round().astype(int))]
    reports = []
    for T in T_grid:
        rep = verify_bootstrap(trace, GevreyParams(lam, eps, float(T), p), constants, s, t0=t0)
        d = rep.summary()
        d["K_bound"] = 2 * constants.K_eps * norm0
        d["below_K_bound"] = bool(rep.kato_weighted[-1] <= d["K_bound"] * (1 + _REL)) if len(rep.kato_weighted) else True
        reports.append(d)
    radius = []
    for i in range(len(trace)):
        t = float(trace.times[i])
        if t <= 0:
            continue
        est = estimate_radius(trace.snapshot(i), fit)
        radius.append({"t": t, "delta_fit": est.delta_fit, "ratio": est.delta_fit / math.sqrt(t),
                       "resolved": est.resolved, "floor_flag": est.floor_flag,
                       "certified": lam * math.sqrt(t - t0) if t >= t0 else 0.0})
    return CorollaryReport(t0, threshold, lam, lam, decay, reports, radius, "ok")
