"""Time integration of the truncated system.

Two independent routes are provided:

* :func:`integrate` -- exponential Runge-Kutta stepping (ETDRK4 or
  integrating-factor RK4).  The heat semigroup is applied exactly, so an
  empty multiplier table reproduces ``exp(-t|xi|^2) U0`` to roundoff.
* :func:`picard_solve` -- fixed-point iteration of the Duhamel formula on a
  time grid, with product-integration weights that integrate the heat kernel
  exactly against a piecewise-linear nonlinearity.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .models import SystemSpec, _check_compatible, nonlinearity_coeffs, scaling_data, spec_from_config, spec_to_config
from .spectral import Grid, SpectralField, make_grid

log = logging.getLogger(__name__)

TRACE_FORMAT = "splab-trace"
TRACE_VERSION = 1


class BlowUpError(RuntimeError):
    """The guard norm exceeded its ceiling or the state became non-finite."""


class StepSizeError(RuntimeError):
    pass


class PicardDivergenceError(RuntimeError):
    def __init__(self, msg: str, ratio: float):
        super().__init__(msg)
        self.ratio = ratio


# ---------------------------------------------------------------------------
# phi functions
# ---------------------------------------------------------------------------

_SERIES_RADIUS = 1.0
_SERIES_TERMS = 30


def phi_functions(z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``phi_1, phi_2, phi_3`` for real ``z <= 0``.

    Taylor series for ``|z| < 1`` and closed forms elsewhere; both branches
    are accurate to a few ulps.
    """
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < _SERIES_RADIUS
    zs = np.where(small, z, 0.0)
    zb = np.where(small, -1.0, z)
    p1 = np.zeros_like(z)
    p2 = np.zeros_like(z)
    p3 = np.zeros_like(z)
    # phi_k(z) = sum_j z^j / (j + k)!
    term = np.ones_like(z)
    for j in range(_SERIES_TERMS):
        p1 += term / math.factorial(j + 1)
        p2 += term / math.factorial(j + 2)
        p3 += term / math.factorial(j + 3)
        term = term * zs
    em1 = np.expm1(zb)
    b1 = em1 / zb
    b2 = (em1 - zb) / zb**2
    b3 = (em1 - zb - 0.5 * zb**2) / zb**3
    return np.where(small, p1, b1), np.where(small, p2, b2), np.where(small, p3, b3)


@lru_cache(maxsize=16)
def _k2_levels(grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    uniq, inv = np.unique(grid.index_sq, return_inverse=True)
    return grid.dk**2 * uniq.astype(float), inv.reshape(grid.shape)


class _Coefficients:
    """Per-step ETD/IF coefficient arrays for one step size ``h``."""

    def __init__(self, grid: Grid, h: float, scheme: str):
        levels, inv = _k2_levels(grid)
        self.h = h

        def lift(a):
            return a[inv]

        z = -h * levels
        self.E = lift(np.exp(z))
        self.E2 = lift(np.exp(0.5 * z))
        if scheme == "etdrk4":
            a1, _, _ = phi_functions(0.5 * z)
            p1, p2, p3 = phi_functions(z)
            self.Q = lift(0.5 * h * a1)
            self.f1 = lift(h * (p1 - 3 * p2 + 4 * p3))
            self.f2 = lift(h * (p2 - 2 * p3))
            self.f3 = lift(h * (4 * p3 - p2))


def _step_etdrk4(u, N, c: _Coefficients):
    Nu = N(u)
    a = c.E2 * u + c.Q * Nu
    Na = N(a)
    b = c.E2 * u + c.Q * Na
    Nb = N(b)
    cc = c.E2 * a + c.Q * (2 * Nb - Nu)
    Nc = N(cc)
    return c.E * u + c.f1 * Nu + 2 * c.f2 * (Na + Nb) + c.f3 * Nc


def _step_ifrk4(u, N, c: _Coefficients):
    h = c.h
    k1 = N(u)
    k2 = N(c.E2 * (u + 0.5 * h * k1))
    k3 = N(c.E2 * u + 0.5 * h * k2)
    k4 = N(c.E * u + h * c.E2 * k3)
    return c.E * u + (h / 6.0) * (c.E * k1 + 2 * c.E2 * (k2 + k3) + k4)


_STEPPERS = {"etdrk4": _step_etdrk4, "ifrk4": _step_ifrk4}


# ---------------------------------------------------------------------------
# Trace
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class Trace:
    """Snapshots ``U(t_i)`` of one run; ``coeffs.shape == (nt, N) + grid.shape``."""

    spec: SystemSpec
    grid: Grid
    times: np.ndarray
    coeffs: np.ndarray
    real: bool = True
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 1 or len(self.times) != len(self.coeffs):
            raise ValueError("times and snapshots differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("snapshot times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)

    def snapshot(self, i: int) -> SpectralField:
        return SpectralField(self.grid, self.coeffs[i], self.real)

    @property
    def snapshots(self) -> list[SpectralField]:
        return [self.snapshot(i) for i in range(len(self))]

    def at(self, t: float, rtol: float = 1e-9) -> SpectralField:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > rtol * max(abs(t), 1e-300):
            raise KeyError(f"no snapshot at t={t}")
        return self.snapshot(i)

    def restrict(self, T: float) -> "Trace":
        keep = self.times <= T * (1 + 1e-12)
        return Trace(self.spec, self.grid, self.times[keep], self.coeffs[keep], self.real, self.diagnostics)

    def shifted(self, t0: float) -> "Trace":
        """Snapshots with ``t >= t0``, re-timed to start at zero."""
        keep = self.times >= t0 * (1 - 1e-12)
        return Trace(self.spec, self.grid, self.times[keep] - self.times[keep][0], self.coeffs[keep],
                     self.real, self.diagnostics)

    @cached_property
    def radial_energy(self) -> tuple[np.ndarray, np.ndarray]:
        """``(kr, E)`` with ``E[i, r] = sum |c|^2`` over modes with ``|xi| = kr[r]``."""
        kr, labels = self.grid.radial
        sel = labels >= 0
        lab = labels[sel]
        E = np.empty((len(self), len(kr)))
        for i in range(len(self)):
            amp2 = np.sum(np.abs(self.coeffs[i][:, sel]) ** 2, axis=0)
            E[i] = np.bincount(lab, weights=amp2, minlength=len(kr))
        return kr, E


def radial_energy(f: SpectralField) -> tuple[np.ndarray, np.ndarray]:
    kr, labels = f.grid.radial
    sel = labels >= 0
    amp2 = np.sum(np.abs(f.coeffs[:, sel]) ** 2, axis=0)
    return kr, np.bincount(labels[sel], weights=amp2, minlength=len(kr))


# ---------------------------------------------------------------------------
# integrate
# ---------------------------------------------------------------------------

@dataclass
class IntegratorOptions:
    """Time-stepping controls.

    Snapshots are taken at ``0``, at ``snapshots_per_decade`` log-spaced times
    from ``t_min`` (default ``1e-4 * horizon``) to ``horizon``, and at any
    ``extra_times``; ``times`` overrides the whole schedule.  Steps never
    exceed ``dt`` and always land on snapshot times.  With ``adapt`` set, the
    step is controlled by step doubling to that relative tolerance.
    """

    horizon: float
    scheme: str = "etdrk4"
    dt: float = 1e-3
    adapt: float | None = None
    snapshots_per_decade: int = 16
    t_min: float | None = None
    extra_times: Sequence[float] = ()
    times: Sequence[float] | None = None
    blowup_factor: float = 1e6
    guard_p: float | None = None
    min_dt: float = 1e-14

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.scheme not in _STEPPERS:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {sorted(_STEPPERS)}")

    def snapshot_times(self) -> np.ndarray:
        if self.times is not None:
            t = np.unique(np.asarray(self.times, dtype=float))
            if t[0] != 0.0:
                t = np.concatenate([[0.0], t])
            return t
        return log_time_grid(self.horizon, self.snapshots_per_decade, self.t_min, self.extra_times)


def log_time_grid(horizon: float, per_decade: int = 16, t_min: float | None = None,
                  extra: Sequence[float] = ()) -> np.ndarray:
    """``0`` followed by log-spaced times up to ``horizon`` (inclusive)."""
    t_min = horizon * 1e-4 if t_min is None else t_min
    decades = math.log10(horizon / t_min)
    n = max(int(math.ceil(decades * per_decade)), 1)
    t = t_min * 10.0 ** (decades * np.arange(n + 1) / n)
    t[-1] = horizon
    t = np.concatenate([[0.0], t, [x for x in extra if 0 < x <= horizon]])
    t = np.unique(t)
    # merge near-duplicates produced by the extra times
    keep = np.concatenate([[True], np.diff(t) > 1e-12 * np.maximum(t[1:], 1e-300)])
    return t[keep]


def _guard_norm(spec: SystemSpec, grid: Grid, coeffs: np.ndarray, p: float | None) -> float:
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sd = scaling_data(spec)
    p = sd.default_p(spec.k) if p is None else p
    s = sd.s_p(p)
    w = np.where(grid.index_sq > 0, grid.k2, 1.0) ** s * (grid.index_sq > 0)
    return float(np.sqrt(np.sum(w * np.sum(np.abs(coeffs) ** 2, axis=0)) * grid.norm_factor))


def integrate(spec: SystemSpec, U0: SpectralField, opts: IntegratorOptions) -> Trace:
    """Solve the truncated system from ``U0`` and record snapshots."""
    _check_compatible(spec, U0)
    grid = U0.grid
    real = U0.real
    times = opts.snapshot_times()
    stepper = _STEPPERS[opts.scheme]
    nfev = [0]

    def N(u):
        nfev[0] += 1
        return nonlinearity_coeffs(spec, u, grid, real)

    u = U0.coeffs * grid.mask
    out = np.empty((len(times),) + u.shape, dtype=complex)
    out[0] = u
    g0 = _guard_norm(spec, grid, u, opts.guard_p)
    ceiling = opts.blowup_factor * g0 if g0 > 0 else np.inf
    steps: list[float] = []
    rejected = 0
    coef: _Coefficients | None = None
    h_adapt = opts.dt

    def coefficients(h):
        nonlocal coef
        if coef is None or coef.h != h:
            coef = _Coefficients(grid, h, opts.scheme)
        return coef

    t = 0.0
    for i in range(1, len(times)):
        t_next = times[i]
        if not spec.multipliers:
            # exact: a single step of any length
            u = np.exp(-(t_next - t) * grid.k2) * u
            steps.append(t_next - t)
        elif opts.adapt is None:
            nsub = max(int(math.ceil((t_next - t) / opts.dt - 1e-9)), 1)
            h = (t_next - t) / nsub
            c = coefficients(h)
            for _ in range(nsub):
                u = stepper(u, N, c)
                steps.append(h)
        else:
            tt = t
            while tt < t_next * (1 - 1e-14):
                h = min(h_adapt, opts.dt, t_next - tt)
                if h < opts.min_dt:
                    raise StepSizeError(f"step size {h:.3e} underflow at t={tt:.6e}")
                u_full = stepper(u, N, _Coefficients(grid, h, opts.scheme))
                ch = _Coefficients(grid, 0.5 * h, opts.scheme)
                u_half = stepper(stepper(u, N, ch), N, ch)
                scale = max(np.max(np.abs(u_half)), 1e-300)
                err = np.max(np.abs(u_half - u_full)) / scale / 15.0
                if err <= opts.adapt or h <= opts.min_dt * 2:
                    u = u_half
                    tt += h
                    steps.append(h)
                    h_adapt = h * min(2.0, max(0.2, 0.9 * (opts.adapt / max(err, 1e-300)) ** 0.2))
                else:
                    rejected += 1
                    h_adapt = h * max(0.2, 0.9 * (opts.adapt / err) ** 0.2)
        t = t_next
        if not np.all(np.isfinite(u)):
            raise BlowUpError(f"non-finite state at t={t:.6e}")
        if _guard_norm(spec, grid, u, opts.guard_p) > ceiling:
            raise BlowUpError(f"guard norm exceeded {opts.blowup_factor:g} x initial at t={t:.6e}")
        out[i] = u
    diag = {
        "scheme": opts.scheme,
        "steps": len(steps),
        "dt_min": float(min(steps)) if steps else None,
        "dt_max": float(max(steps)) if steps else None,
        "rejected": rejected,
        "nonlinearity_evaluations": nfev[0],
    }
    return Trace(spec, grid, times, out, real, diag)


# ---------------------------------------------------------------------------
# Picard iteration
# ---------------------------------------------------------------------------

def _kato_distance(grid: Grid, times: np.ndarray, diff: np.ndarray, p: float, s: float) -> float:
    w = np.where(grid.index_sq > 0, grid.k2, 1.0) ** s * (grid.index_sq > 0)
    vals = np.empty(len(times))
    for i in range(len(times)):
        vals[i] = np.sqrt(np.sum(w * np.sum(np.abs(diff[i]) ** 2, axis=0)) * grid.norm_factor)
    tw = times ** (1.0 / p) if np.isfinite(p) else np.ones_like(times)
    return float(np.max(tw * vals))


def duhamel_map(spec: SystemSpec, U0: SpectralField, times: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """``exp(t Lap) U0 + int_0^t exp((t-s) Lap) P_n(U(s)) ds`` on ``times``.

    ``U(s)`` is known at the grid times; its nonlinearity is interpolated
    linearly in ``s`` and integrated exactly against the heat kernel.
    """
    grid = U0.grid
    levels, inv = _k2_levels(grid)
    out = np.empty_like(coeffs)
    if not spec.multipliers:
        for i, t in enumerate(times):
            out[i] = np.exp(-t * grid.k2) * U0.coeffs
        return out
    Nvals = np.empty_like(coeffs)
    for i in range(len(times)):
        Nvals[i] = nonlinearity_coeffs(spec, coeffs[i], grid, U0.real)
    acc = np.zeros_like(coeffs[0])
    out[0] = U0.coeffs
    for i in range(len(times) - 1):
        h = times[i + 1] - times[i]
        z = -h * levels
        p1, p2, _ = phi_functions(z)
        E = np.exp(z)[inv]
        w_prev = (h * (p1 - p2))[inv]
        w_next = (h * p2)[inv]
        acc = E * acc + w_prev * Nvals[i] + w_next * Nvals[i + 1]
        out[i + 1] = np.exp(-times[i + 1] * grid.k2) * U0.coeffs + acc
    return out


def picard_solve(spec: SystemSpec, U0: SpectralField, p: float, T: float, max_iters: int = 60,
                 tol: float = 1e-12, times: Sequence[float] | None = None,
                 points_per_decade: int = 64, t_min: float | None = None,
                 max_step: float | None = None, s: float | None = None) -> Trace:
    """Fixed point of the Duhamel map, iterated from the heat flow.

    Iteration stops once the Kato distance ``sup t^{1/p} ||U^{m+1} - U^m||_{H^s}``
    (``s = s_crit + 2/p`` by default) drops below ``tol``.  Three consecutive
    increases of that distance raise :class:`PicardDivergenceError`.
    """
    _check_compatible(spec, U0)
    grid = U0.grid
    if s is None:
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            s = scaling_data(spec).s_p(p)
    if times is None:
        times = log_time_grid(T, points_per_decade, t_min)
        if max_step is not None:
            extra = np.arange(0.0, T, max_step)[1:]
            times = np.unique(np.concatenate([times, extra]))
    times = np.asarray(times, dtype=float)
    heat = np.stack([np.exp(-t * grid.k2) * U0.coeffs for t in times])
    U = heat
    dists: list[float] = []
    increases = 0
    converged = False
    for it in range(1, max_iters + 1):
        U_new = duhamel_map(spec, U0, times, U)
        dist = _kato_distance(grid, times, U_new - U, p, s)
        dists.append(dist)
        U = U_new
        if dist < tol:
            converged = True
            break
        if len(dists) >= 2 and dist > dists[-2]:
            increases += 1
            if increases >= 3:
                ratio = dists[-1] / dists[-2]
                raise PicardDivergenceError(
                    f"Picard iteration not contracting (ratio {ratio:.3g} after {it} iterations)", ratio)
        else:
            increases = 0
    ratios = [b / a for a, b in zip(dists[:-1], dists[1:]) if a > 0]
    diag = {
        "iterations": it,
        "converged": converged,
        "distances": dists,
        "contraction_ratio": float(np.median(ratios)) if ratios else 0.0,
        "p": p,
        "s": s,
    }
    return Trace(spec, grid, times, U, U0.real, diag)


# ---------------------------------------------------------------------------
# Scaling
# ---------------------------------------------------------------------------

def _alpha(spec: SystemSpec) -> float:
    return (2.0 - spec.beta) / (spec.k - 1)


def _embed_index(grid: Grid, fine: Grid, lam: int):
    K = grid.max_index
    idx = np.concatenate([np.arange(0, K + 1), np.arange(-K, 0)])
    src = np.ix_(*([idx % grid.points] * grid.d))
    dst = np.ix_(*([(lam * idx) % fine.points] * grid.d))
    return src, dst


def _rescaled_grid(grid: Grid, lam: float, embed: bool) -> Grid:
    if embed:
        if lam < 1 or int(lam) != lam or (int(lam) & (int(lam) - 1)) != 0:
            raise ValueError(f"lambda={lam} is not grid-compatible (needs a power of two)")
        return make_grid(grid.d, grid.points * int(lam), grid.period, grid.truncation_radius * lam)
    if not lam > 0:
        raise ValueError("lambda must be positive")
    return make_grid(grid.d, grid.points, grid.period / lam, grid.truncation_radius * lam)


def _rescale_coeffs(c: np.ndarray, grid: Grid, fine: Grid, lam: float, embed: bool, amp: float) -> np.ndarray:
    if not embed:
        return amp * c
    src, dst = _embed_index(grid, fine, int(lam))
    out = np.zeros(c.shape[:-grid.d] + fine.shape, dtype=complex)
    for comp in range(c.shape[0]):
        out[comp][dst] = amp * c[comp][src]
    return out


def rescale_data(U0: SpectralField, lam: float, alpha: float, embed: bool = False) -> SpectralField:
    """``lam^alpha U0(lam x)``.

    By default the box shrinks to period ``L/lam`` and the lattice indices
    are kept, which is exact for any ``lam > 0``.  With ``embed`` the period
    is kept and modes ``m`` move to ``lam m`` on a grid with ``lam`` times more
    points (``lam`` a power of two).
    """
    fine = _rescaled_grid(U0.grid, lam, embed)
    return SpectralField(fine, _rescale_coeffs(U0.coeffs, U0.grid, fine, lam, embed, lam**alpha), U0.real)


def rescale_solution(trace: Trace, lam: float = 2.0, embed: bool = False) -> Trace:
    """``U_lam(t, x) = lam^alpha U(lam^2 t, lam x)`` as a trace at times ``t / lam^2``."""
    if lam == 1:
        return trace
    alpha = _alpha(trace.spec)
    fine = _rescaled_grid(trace.grid, lam, embed)
    coeffs = np.stack([_rescale_coeffs(c, trace.grid, fine, lam, embed, lam**alpha) for c in trace.coeffs])
    return Trace(trace.spec, fine, trace.times / lam**2, coeffs, trace.real, dict(trace.diagnostics))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_trace(trace: Trace, prefix: str | Path, norms: dict | None = None) -> tuple[Path, Path]:
    """Write ``<prefix>.bin`` (raw little-endian complex128, C order, shape
    ``(nt, N) + grid.shape``) and the JSON index ``<prefix>.json``."""
    prefix = Path(prefix)
    bin_path = prefix.with_suffix(".bin")
    idx_path = prefix.with_suffix(".json")
    data = np.ascontiguousarray(trace.coeffs, dtype="<c16")
    bin_path.write_bytes(data.tobytes())
    index = {
        "format": TRACE_FORMAT,
        "version": TRACE_VERSION,
        "package_version": __version__,
        "binary": bin_path.name,
        "dtype": "<c16",
        "shape": list(data.shape),
        "real": trace.real,
        "grid": trace.grid.describe(),
        "spec": spec_to_config(trace.spec),
        "times": [float(t) for t in trace.times],
        "norms": norms or {},
        "diagnostics": _jsonable(trace.diagnostics),
    }
    idx_path.write_text(json.dumps(index, indent=1, sort_keys=True))
    return bin_path, idx_path


def load_trace(index_path: str | Path) -> Trace:
    index_path = Path(index_path)
    index = json.loads(index_path.read_text())
    if index.get("format") != TRACE_FORMAT:
        raise ValueError(f"{index_path} is not a trace index")
    if index["version"] > TRACE_VERSION:
        raise ValueError(f"trace version {index['version']} is newer than supported {TRACE_VERSION}")
    raw = (index_path.parent / index["binary"]).read_bytes()
    coeffs = np.frombuffer(raw, dtype=index["dtype"]).reshape(index["shape"]).astype(complex)
    g = index["grid"]
    grid = make_grid(g["d"], g["points"], g["period"], g["truncation_radius"])
    spec = spec_from_config(index["spec"])
    return Trace(spec, grid, np.array(index["times"]), coeffs, index["real"], index["diagnostics"])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj
