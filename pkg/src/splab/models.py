"""Instances of the semi-linear parabolic system ``dU/dt - Lap U = P_n(U)``.

``P_n(U)_j = 1_{B(0,n)}(D) sum_l A_{j,l}(D) (U^l)`` where ``l`` runs over
multi-indices of length ``k`` and each ``A_{j,l}`` is a Fourier multiplier
homogeneous of degree ``beta``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Mapping

import numpy as np

from .spectral import (
    Grid,
    SpectralField,
    evaluate_symbol,
    hermitian_part,
    leray_symbol,
    padder,
)

Symbol = Callable[[tuple[np.ndarray, ...]], np.ndarray]
MultiIndex = tuple[int, ...]


class ScalingHypothesisError(ValueError):
    """The scaling exponent lies outside ``(1/k, d/k]``."""


class ScalingHypothesisWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """One instance of the system.

    ``multipliers`` maps ``(j, l)`` (0-based component, multi-index with
    ``sum(l) == k``) to a symbol callable on the wavenumber tuple.
    ``symbol_info`` optionally holds a serializable description per entry.
    """

    name: str
    d: int
    N: int
    k: int
    beta: float
    multipliers: Mapping[tuple[int, MultiIndex], Symbol]
    truncation_radius: float | None = None
    symbol_info: Mapping = field(default_factory=dict)
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"nonlinearity order must be >= 2, got {self.k}")
        if not 0 <= self.beta < 2:
            raise ValueError(f"multiplier degree must lie in [0, 2), got {self.beta}")
        for (j, ell) in self.multipliers:
            if not 0 <= j < self.N:
                raise ValueError(f"component index {j} out of range for N={self.N}")
            if len(ell) != self.N or sum(ell) != self.k or min(ell) < 0:
                raise ValueError(f"multi-index {ell} is not of length N={self.N} and order k={self.k}")

    @property
    def monomials(self) -> list[MultiIndex]:
        return sorted({ell for (_, ell) in self.multipliers})

    def symbols_on(self, grid: Grid) -> dict[tuple[int, MultiIndex], np.ndarray]:
        return _symbols_cached(self, grid)


@lru_cache(maxsize=64)
def _symbols_cached(spec: SystemSpec, grid: Grid):
    return {key: evaluate_symbol(sym, grid, at_zero=0.0) * grid.mask
            for key, sym in spec.multipliers.items()}


@dataclass(frozen=True)
class ScalingData:
    alpha: float
    s_crit: float
    admissible: bool

    def default_p(self, k: int) -> float:
        """Kato exponent ``2 * max(2/alpha, k)``, inside the admissible range."""
        return 2.0 * max(2.0 / self.alpha, k)

    def s_p(self, p: float) -> float:
        return self.s_crit + 2.0 / p


def scaling_data(spec: SystemSpec, strict: bool = False) -> ScalingData:
    """Scaling exponent ``alpha = (2 - beta)/(k - 1)`` and ``s_crit = d/2 - alpha``.

    When ``alpha`` is outside ``(1/k, d/k]`` a :class:`ScalingHypothesisWarning`
    is issued, or :class:`ScalingHypothesisError` raised if ``strict``.
    """
    alpha = (2.0 - spec.beta) / (spec.k - 1)
    s_crit = spec.d / 2.0 - alpha
    ok = 1.0 / spec.k < alpha <= spec.d / spec.k + 1e-15
    if not ok:
        msg = (f"{spec.name}: alpha={alpha:g} outside (1/k, d/k] = "
               f"({1.0 / spec.k:g}, {spec.d / spec.k:g}]")
        if strict:
            raise ScalingHypothesisError(msg)
        warnings.warn(msg, ScalingHypothesisWarning, stacklevel=2)
    return ScalingData(alpha, s_crit, ok)


def check_homogeneity(spec: SystemSpec, samples: int = 32, factor: float = 2.0,
                      seed: int = 0) -> float:
    """Largest relative defect of ``A(factor xi) = factor^beta A(xi)``."""
    rng = np.random.Generator(np.random.Philox(seed))
    xi = tuple(rng.uniform(-5, 5, size=samples) for _ in range(spec.d))
    xi2 = tuple(factor * x for x in xi)
    worst = 0.0
    for sym in spec.multipliers.values():
        a = np.asarray(sym(xi), dtype=complex)
        b = np.asarray(sym(xi2), dtype=complex)
        scale = max(np.max(np.abs(a)), 1e-300)
        worst = max(worst, float(np.max(np.abs(b - factor**spec.beta * a)) / scale))
    return worst


def _check_compatible(spec: SystemSpec, U: SpectralField) -> None:
    if U.grid.d != spec.d:
        raise ValueError(f"grid dimension {U.grid.d} does not match system dimension {spec.d}")
    if U.components != spec.N:
        raise ValueError(f"field has {U.components} components, system needs {spec.N}")
    if spec.truncation_radius is not None and not np.isclose(spec.truncation_radius, U.grid.truncation_radius):
        raise ValueError("grid truncation radius differs from the system's")


def nonlinearity_coeffs(spec: SystemSpec, coeffs: np.ndarray, grid: Grid, real: bool = True) -> np.ndarray:
    """Array-level :func:`evaluate_nonlinearity` used inside the time steppers."""
    out = np.zeros((spec.N,) + grid.shape, dtype=complex)
    if not spec.multipliers:
        return out
    symbols = spec.symbols_on(grid)
    pad = padder(grid, spec.k)
    phys = pad.to_physical(coeffs, real)
    mons = spec.monomials
    prods = np.empty((len(mons),) + phys.shape[1:], dtype=phys.dtype)
    for i, ell in enumerate(mons):
        v = None
        for comp, power in enumerate(ell):
            for _ in range(power):
                v = phys[comp] if v is None else v * phys[comp]
        prods[i] = v
    spec_prods = pad.to_spectral(prods)
    where = {ell: i for i, ell in enumerate(mons)}
    for (j, ell), sym in symbols.items():
        out[j] += sym * spec_prods[where[ell]]
    if real:
        out = hermitian_part(out, grid.d)
    return out


def evaluate_nonlinearity(spec: SystemSpec, U: SpectralField) -> SpectralField:
    """``P_n(U)``: multipliers applied to exact dealiased monomials, cut to the ball."""
    _check_compatible(spec, U)
    return SpectralField(U.grid, nonlinearity_coeffs(spec, U.coeffs, U.grid, U.real), U.real)


def _const(c: complex) -> Symbol:
    def sym(xi):
        return np.full(np.broadcast_shapes(*(x.shape for x in xi)), c, dtype=complex)
    return sym


def _derivative(axis: int, c: complex) -> Symbol:
    def sym(xi):
        return c * 1j * xi[axis]
    return sym


def _radial_power(beta: float, c: complex) -> Symbol:
    def sym(xi):
        k = np.sqrt(sum(x * x for x in xi))
        return c * k**beta
    return sym


def _ns_symbol(j: int, a: int, b: int) -> Symbol:
    # -P div(u (x) u) restricted to the monomial u_a u_b
    def sym(xi):
        P = leray_symbol(xi)
        if a == b:
            return -1j * P[j, a] * xi[a]
        return -1j * (P[j, a] * xi[b] + P[j, b] * xi[a])
    return sym


def symbol_from_info(info: Mapping) -> tuple[Symbol, float]:
    """Build a symbol and its degree from a serializable description."""
    kind = info["kind"]
    coef = info.get("coef", 1.0)
    c = complex(*coef) if isinstance(coef, (list, tuple)) else complex(coef)
    if kind == "constant":
        return _const(c), 0.0
    if kind == "derivative":
        return _derivative(int(info["axis"]), c), 1.0
    if kind == "radial_power":
        return _radial_power(float(info["degree"]), c), float(info["degree"])
    raise ValueError(f"unknown symbol kind {kind!r}")


def builtin_navier_stokes(d: int = 3) -> SystemSpec:
    """Incompressible Navier-Stokes with the pressure removed by the Leray projector."""
    if d not in (2, 3):
        raise ValueError(f"Navier-Stokes is provided for d in (2, 3), got {d}")
    table = {}
    for j in range(d):
        for a in range(d):
            for b in range(a, d):
                ell = [0] * d
                ell[a] += 1
                ell[b] += 1
                table[(j, tuple(ell))] = _ns_symbol(j, a, b)
    return SystemSpec("navier_stokes", d, d, 2, 1.0, table, params={"d": d})


def builtin_cubic_heat(d: int = 1, sign: int = -1) -> SystemSpec:
    """``dU/dt - Lap U = sign * U^3``; ``sign=-1`` is the defocusing case."""
    if sign not in (-1, 1):
        raise ValueError("sign must be +1 or -1")
    return SystemSpec("cubic_heat", d, 1, 3, 0.0, {(0, (3,)): _const(float(sign))},
                      symbol_info={"0:3": {"kind": "constant", "coef": float(sign)}},
                      params={"d": d, "sign": sign})


def builtin_burgers() -> SystemSpec:
    """Viscous Burgers ``du/dt - u_xx = -(u^2)_x / 2``."""
    return SystemSpec("burgers", 1, 1, 2, 1.0, {(0, (2,)): _derivative(0, -0.5)},
                      symbol_info={"0:2": {"kind": "derivative", "axis": 0, "coef": -0.5}})


def builtin_heat(d: int = 1, N: int = 1, k: int = 2, beta: float = 1.0) -> SystemSpec:
    """The linear heat flow written as a system with an empty multiplier table."""
    return SystemSpec("heat", d, N, k, beta, {}, params={"d": d, "N": N, "k": k, "beta": beta})


BUILTINS = {
    "navier_stokes": builtin_navier_stokes,
    "cubic_heat": builtin_cubic_heat,
    "burgers": builtin_burgers,
    "heat": builtin_heat,
}


def spec_from_config(cfg: Mapping) -> SystemSpec:
    """Build a spec from ``{"builtin": name, ...params}`` or an inline table.

    Inline form::

        {"name": "...", "d": 1, "N": 1, "k": 2, "beta": 1,
         "table": [{"j": 0, "l": [2], "symbol": {"kind": "derivative", "axis": 0, "coef": -0.5}}]}
    """
    cfg = dict(cfg)
    if "builtin" in cfg:
        name = cfg.pop("builtin")
        if name not in BUILTINS:
            raise ValueError(f"unknown builtin system {name!r}; choose from {sorted(BUILTINS)}")
        return BUILTINS[name](**cfg)
    allowed = {"name", "d", "N", "k", "beta", "table", "truncation_radius"}
    unknown = set(cfg) - allowed
    if unknown:
        raise ValueError(f"unknown system keys {sorted(unknown)}")
    table, info = {}, {}
    for entry in cfg["table"]:
        sym, deg = symbol_from_info(entry["symbol"])
        if not np.isclose(deg, cfg["beta"]):
            raise ValueError(f"symbol degree {deg} differs from beta={cfg['beta']}")
        ell = tuple(int(v) for v in entry["l"])
        table[(int(entry["j"]), ell)] = sym
        info[f"{entry['j']}:{','.join(map(str, ell))}"] = dict(entry["symbol"])
    return SystemSpec(cfg.get("name", "inline"), int(cfg["d"]), int(cfg["N"]), int(cfg["k"]),
                      float(cfg["beta"]), table, cfg.get("truncation_radius"), info)


def spec_to_config(spec: SystemSpec) -> dict:
    """Serializable description; builtins are referenced by name."""
    if spec.name in BUILTINS and spec.name != "inline":
        out = {"builtin": spec.name}
        out.update(spec.params)
        return out
    if len(spec.symbol_info) != len(spec.multipliers):
        raise ValueError("inline spec lacks serializable symbol descriptions")
    table = []
    for key, sym in spec.symbol_info.items():
        j, ell = key.split(":")
        table.append({"j": int(j), "l": [int(v) for v in ell.split(",")], "symbol": dict(sym)})
    return {"name": spec.name, "d": spec.d, "N": spec.N, "k": spec.k, "beta": spec.beta,
            "table": table, "truncation_radius": spec.truncation_radius}
