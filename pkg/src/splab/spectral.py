"""Fourier representation of vector fields on a periodic box.

Coefficient convention
----------------------
A field ``f`` on the torus ``[0, L)^d`` is stored through its Fourier
coefficients ``c_m`` with ``f(x) = sum_m c_m exp(i xi_m . x)`` and
``xi_m = 2 pi m / L``.  The forward transform therefore carries the factor
``1 / points**d`` (``cos(x)`` has ``c_{+1} = c_{-1} = 1/2``).

Storage is the full complex FFT layout (numpy ordering along each axis),
with a leading component axis: ``coeffs.shape == (N, M, ..., M)``.

Every field lives on the Galerkin ball ``|xi| <= n`` of its grid.  The
Nyquist index ``|m_i| = M/2`` is never retained, so that Hermitian pairs are
always both present.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.fft as sfft

_WORKERS = 1


def set_threads(n: int) -> None:
    """Set the number of FFT worker threads (1 is the deterministic default)."""
    global _WORKERS
    if n < 1:
        raise ValueError(f"thread count must be positive, got {n}")
    _WORKERS = int(n)


def get_threads() -> int:
    return _WORKERS


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid:
    """Periodic lattice with a spherical Galerkin cutoff.

    Parameters
    ----------
    d : int
        Spatial dimension, 1 to 3.
    points : int
        Points per axis, a power of two.
    period : float
        Side length ``L`` of the box.
    truncation_radius : float
        Cutoff ``n``; modes with ``|xi| > n`` are identically zero.
    """

    d: int
    points: int
    period: float
    truncation_radius: float

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points,) * self.d

    @property
    def dk(self) -> float:
        """Lattice spacing ``2 pi / L`` in wavenumber space."""
        return 2.0 * np.pi / self.period

    @property
    def nyquist(self) -> float:
        return np.pi * self.points / self.period

    @property
    def cell_volume(self) -> float:
        return self.dk**self.d

    @property
    def norm_factor(self) -> float:
        """Weight turning ``sum |c_m|^2`` into a Riemann sum of ``int |f^|^2``.

        The continuum transform is approximated by ``L^d c_m`` and the
        wavenumber integral by the lattice sum times ``(2 pi / L)^d``, so the
        factor is ``(2 pi L)^d``.  With it, norms of a fixed continuum profile
        do not depend on ``L`` and are invariant under the parabolic scaling.
        """
        return (2.0 * np.pi * self.period) ** self.d

    @cached_property
    def index_axes(self) -> tuple[np.ndarray, ...]:
        """Integer lattice index per axis, broadcastable against ``shape``."""
        m = np.fft.fftfreq(self.points, d=1.0 / self.points).astype(np.int64)
        out = []
        for ax in range(self.d):
            s = [1] * self.d
            s[ax] = self.points
            out.append(m.reshape(s))
        return tuple(out)

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """``xi`` components, each broadcastable against ``shape``."""
        return tuple(self.dk * m.astype(float) for m in self.index_axes)

    @cached_property
    def index_sq(self) -> np.ndarray:
        """``|m|^2`` as an exact integer array of full lattice shape."""
        out = np.zeros(self.shape, dtype=np.int64)
        for m in self.index_axes:
            out = out + m * m
        return out

    @cached_property
    def k2(self) -> np.ndarray:
        return self.dk**2 * self.index_sq.astype(float)

    @cached_property
    def kabs(self) -> np.ndarray:
        return np.sqrt(self.k2)

    @cached_property
    def mask(self) -> np.ndarray:
        """Retained modes: inside the ball and off the Nyquist planes."""
        keep = self.kabs <= self.truncation_radius * (1.0 + 1e-12)
        for m in self.index_axes:
            keep = keep & (np.abs(m) < self.points // 2)
        return keep

    @cached_property
    def max_index(self) -> int:
        """Largest ``|m_i|`` among retained modes."""
        return int(min(np.floor(self.truncation_radius / self.dk + 1e-12), self.points // 2 - 1))

    @cached_property
    def radial(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct nonzero ``|xi|`` among retained modes and a label array.

        Returns ``(kr, labels)`` where ``labels`` has full lattice shape and
        holds the position in ``kr`` of each retained nonzero mode, ``-1``
        elsewhere.
        """
        sel = self.mask & (self.index_sq > 0)
        uniq, inv = np.unique(self.index_sq[sel], return_inverse=True)
        labels = np.full(self.shape, -1, dtype=np.int64)
        labels[sel] = inv
        return self.dk * np.sqrt(uniq.astype(float)), labels

    def coordinates(self) -> tuple[np.ndarray, ...]:
        x = np.arange(self.points) * (self.period / self.points)
        out = []
        for ax in range(self.d):
            s = [1] * self.d
            s[ax] = self.points
            out.append(x.reshape(s))
        return tuple(out)

    def describe(self) -> dict:
        return {
            "d": self.d,
            "points": self.points,
            "period": self.period,
            "truncation_radius": self.truncation_radius,
        }


def make_grid(d: int, points_per_axis: int, period: float = 2.0 * np.pi,
              truncation_radius: float | None = None) -> Grid:
    """Build a :class:`Grid`, validating size and cutoff.

    ``truncation_radius`` defaults to the largest radius whose modes all sit
    strictly below the Nyquist index.
    """
    if d not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2 or 3, got {d}")
    if not _is_power_of_two(int(points_per_axis)) or points_per_axis < 4:
        raise ValueError(f"points per axis must be a power of two >= 4, got {points_per_axis}")
    if not period > 0:
        raise ValueError(f"period must be positive, got {period}")
    dk = 2.0 * np.pi / period
    if truncation_radius is None:
        truncation_radius = dk * (points_per_axis // 2 - 1)
    nyq = np.pi * points_per_axis / period
    if truncation_radius > nyq * (1 + 1e-12):
        raise ValueError(f"truncation radius {truncation_radius} exceeds Nyquist {nyq}")
    if not truncation_radius > 0:
        raise ValueError("truncation radius must be positive")
    return Grid(int(d), int(points_per_axis), float(period), float(truncation_radius))


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Complex Fourier coefficients of an N-component field on ``grid``.

    ``real`` records whether the physical field is real-valued; Hermitian
    symmetry ``c(-xi) = conj(c(xi))`` then holds.
    """

    grid: Grid
    coeffs: np.ndarray
    real: bool = True

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.ndim == self.grid.d:
            c = c[np.newaxis]
        if c.shape[1:] != self.grid.shape:
            raise ValueError(f"coefficient shape {c.shape[1:]} does not match grid {self.grid.shape}")
        object.__setattr__(self, "coeffs", c)

    @property
    def components(self) -> int:
        return self.coeffs.shape[0]

    def with_coeffs(self, coeffs: np.ndarray) -> "SpectralField":
        return SpectralField(self.grid, coeffs, self.real)

    def __add__(self, other: "SpectralField") -> "SpectralField":
        _check_same_grid([self, other])
        return SpectralField(self.grid, self.coeffs + other.coeffs, self.real and other.real)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        _check_same_grid([self, other])
        return SpectralField(self.grid, self.coeffs - other.coeffs, self.real and other.real)

    def __mul__(self, scalar: float) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs * scalar, self.real and np.isrealobj(scalar))

    __rmul__ = __mul__

    def mean(self) -> np.ndarray:
        return self.coeffs[(slice(None),) + (0,) * self.grid.d].copy()

    def modulus(self) -> "SpectralField":
        return SpectralField(self.grid, np.abs(self.coeffs).astype(complex), real=False)

    def check(self, atol: float = 1e-12) -> None:
        """Raise if the cutoff or Hermitian invariants are violated."""
        scale = max(np.max(np.abs(self.coeffs)), 1e-300)
        outside = np.max(np.abs(self.coeffs[:, ~self.grid.mask]), initial=0.0)
        if outside > atol * scale:
            raise ValueError(f"coefficients beyond the cutoff: max {outside:.3e}")
        if self.real:
            asym = np.max(np.abs(self.coeffs - np.conj(reflect(self.coeffs, self.grid.d))))
            if asym > atol * scale:
                raise ValueError(f"Hermitian symmetry violated: {asym:.3e}")


def zeros(grid: Grid, components: int = 1) -> SpectralField:
    return SpectralField(grid, np.zeros((components,) + grid.shape, dtype=complex))


def reflect(coeffs: np.ndarray, d: int) -> np.ndarray:
    """Return the array indexed at ``-m`` (last ``d`` axes, FFT ordering)."""
    out = coeffs
    for ax in range(coeffs.ndim - d, coeffs.ndim):
        out = np.roll(np.flip(out, axis=ax), 1, axis=ax)
    return out


def hermitian_part(coeffs: np.ndarray, d: int) -> np.ndarray:
    return 0.5 * (coeffs + np.conj(reflect(coeffs, d)))


def _check_same_grid(fields: Sequence[SpectralField]) -> None:
    g0 = fields[0].grid
    for f in fields[1:]:
        if f.grid != g0:
            raise ValueError("fields live on incompatible grids")


def _axes(d: int) -> tuple[int, ...]:
    return tuple(range(-d, 0))


def forward_transform(values: np.ndarray, grid: Grid, truncate: bool = True,
                      real: bool | None = None) -> SpectralField:
    """Fourier coefficients of grid values, shape ``(N, M, ..)`` or ``(M, ..)``.

    With ``truncate`` the result is projected onto the Galerkin ball.
    """
    v = np.asarray(values)
    if v.ndim == grid.d:
        v = v[np.newaxis]
    if v.shape[1:] != grid.shape:
        raise ValueError(f"value shape {v.shape[1:]} does not match grid {grid.shape}")
    if real is None:
        real = bool(np.isrealobj(v))
    c = sfft.fftn(v, axes=_axes(grid.d), workers=_WORKERS) / grid.points**grid.d
    if truncate:
        c = c * grid.mask
    return SpectralField(grid, c, real)


def inverse_transform(f: SpectralField) -> np.ndarray:
    """Grid values of ``f``; real dtype when ``f.real``."""
    v = sfft.ifftn(f.coeffs, axes=_axes(f.grid.d), workers=_WORKERS) * f.grid.points**f.grid.d
    return v.real if f.real else v


Symbol = Callable[[tuple[np.ndarray, ...]], np.ndarray]


def evaluate_symbol(symbol: Symbol, grid: Grid, at_zero) -> np.ndarray:
    """Evaluate ``symbol`` on the lattice, overriding the value at ``xi = 0``.

    Scalar symbols give an array of lattice shape; matrix symbols give
    ``(N, N) + shape``.  Non-finite values at retained modes raise.
    """
    with np.errstate(all="ignore"):
        s = np.asarray(symbol(grid.wavenumbers))
    lead = s.shape[:s.ndim - grid.d] if s.ndim >= grid.d else ()
    s = np.array(np.broadcast_to(s, lead + grid.shape), dtype=complex)
    origin = (Ellipsis,) + (0,) * grid.d
    s[origin] = at_zero
    bad = ~np.isfinite(s) & grid.mask
    if np.any(bad):
        raise ValueError(f"symbol is not finite at {int(np.count_nonzero(bad))} retained modes")
    return s


def apply_multiplier(f: SpectralField, symbol: Symbol | np.ndarray, at_zero=0.0,
                     real_symbol: bool | None = None) -> SpectralField:
    """Multiply coefficients by ``symbol(xi)``; ``at_zero`` is its value at 0.

    ``symbol`` may also be a precomputed array (then ``at_zero`` is ignored).
    Hermitian symmetry is kept when the symbol satisfies
    ``s(-xi) = conj(s(xi))``, which callers assert through ``real_symbol``;
    by default it is detected numerically.
    """
    g = f.grid
    s = symbol if isinstance(symbol, np.ndarray) else evaluate_symbol(symbol, g, at_zero)
    if s.ndim == g.d + 2:
        out = np.einsum("ij...,j...->i...", s, f.coeffs)
    else:
        out = s * f.coeffs
    out = out * g.mask
    if real_symbol is None:
        real_symbol = bool(np.allclose(np.conj(reflect(s, g.d)), s, rtol=1e-13, atol=0))
    return SpectralField(g, out, f.real and real_symbol)


def ball_projector(grid: Grid) -> np.ndarray:
    """The symbol ``1_{B(0,n)}`` as a lattice array."""
    return grid.mask.astype(complex)


def leray_symbol(xi: tuple[np.ndarray, ...]) -> np.ndarray:
    """Matrix symbol ``delta_jm - xi_j xi_m / |xi|^2`` (undefined at 0)."""
    d = len(xi)
    k2 = sum(x * x for x in xi)
    shape = np.broadcast_shapes(*(x.shape for x in xi))
    out = np.empty((d, d) + shape)
    for j in range(d):
        for m in range(d):
            out[j, m] = (1.0 if j == m else 0.0) - xi[j] * xi[m] / k2
    return out


class Padder:
    """Maps Galerkin coefficients to a zero-padded physical grid and back.

    The padded size ``P`` exceeds ``(k + 1) * max_index`` so that the Fourier
    coefficients of a k-fold product are exact for every retained mode.
    """

    def __init__(self, grid: Grid, k: int):
        self.grid = grid
        self.k = k
        K = grid.max_index
        P = sfft.next_fast_len((k + 1) * K + 1)
        P += P % 2
        self.P = P
        idx = np.concatenate([np.arange(0, K + 1), np.arange(-K, 0)])
        self._src = np.ix_(*([idx % grid.points] * grid.d))
        self._dst = np.ix_(*([idx % P] * grid.d))

    def to_physical(self, coeffs: np.ndarray, real: bool) -> np.ndarray:
        g = self.grid
        n_comp = coeffs.shape[0]
        big = np.zeros((n_comp,) + (self.P,) * g.d, dtype=complex)
        for c in range(n_comp):
            big[c][self._dst] = coeffs[c][self._src]
        v = sfft.ifftn(big, axes=_axes(g.d), workers=_WORKERS) * self.P**g.d
        return v.real if real else v

    def to_spectral(self, values: np.ndarray) -> np.ndarray:
        g = self.grid
        c_big = sfft.fftn(values, axes=_axes(g.d), workers=_WORKERS) / self.P**g.d
        out = np.zeros((values.shape[0],) + g.shape, dtype=complex)
        for c in range(values.shape[0]):
            out[c][self._src] = c_big[c][self._dst]
        return out * g.mask


_PADDERS: dict[tuple[Grid, int], Padder] = {}


def padder(grid: Grid, k: int) -> Padder:
    key = (grid, k)
    if key not in _PADDERS:
        _PADDERS[key] = Padder(grid, k)
    return _PADDERS[key]


def dealiased_product(fields: Sequence[SpectralField]) -> SpectralField:
    """Exact coefficients, on the Galerkin ball, of the pointwise product.

    Multi-component fields are multiplied component by component.
    """
    if len(fields) < 1:
        raise ValueError("need at least one factor")
    _check_same_grid(fields)
    g = fields[0].grid
    ncomp = {f.components for f in fields}
    if len(ncomp - {1}) > 1:
        raise ValueError("factors have incompatible component counts")
    real = all(f.real for f in fields)
    pad = padder(g, len(fields))
    prod = None
    for f in fields:
        v = pad.to_physical(f.coeffs, real)
        prod = v if prod is None else prod * v
    out = pad.to_spectral(prod)
    if real:
        out = hermitian_part(out, g.d)
    return SpectralField(g, out, real)


@dataclass
class ShellSpectrum:
    """Per-shell statistics of a field.

    ``shell_edges[j] <= |xi| < shell_edges[j + 1]`` defines shell ``j``.
    ``shell_kmax`` is the ``|xi|`` at which ``shell_max`` is attained (nan for
    empty shells) and ``shell_count`` the number of lattice modes.
    """

    shell_edges: np.ndarray
    shell_max: np.ndarray
    shell_energy: np.ndarray
    shell_kmax: np.ndarray
    shell_count: np.ndarray
    policy: str = "unit"

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.shell_edges[:-1] + self.shell_edges[1:])


def _shell_edges(policy: str, kmin: float, kmax: float, width: float) -> np.ndarray:
    if policy == "unit":
        n = int(np.floor(kmax / width + 1e-12)) + 1
        return width * np.arange(0, n + 1, dtype=float)
    if policy == "dyadic":
        j0 = int(np.floor(np.log2(kmin) + 1e-12))
        j1 = int(np.floor(np.log2(kmax) + 1e-12)) + 1
        return 2.0 ** np.arange(j0, j1 + 1, dtype=float)
    raise ValueError(f"unknown shell policy {policy!r}")


def shell_decompose(f: SpectralField, policy: str = "unit", width: float = 1.0) -> ShellSpectrum:
    """Shell maxima and energies over ``(0, n]``.

    ``policy`` is ``"unit"`` (shells of the given ``width``) or ``"dyadic"``
    (``2^j <= |xi| < 2^{j+1}``).  Energies are ``sum |c|^2`` over modes and
    components, so they add up to the mean square of the field minus the
    zero mode.
    """
    g = f.grid
    sel = g.mask & (g.index_sq > 0)
    k = g.kabs[sel]
    amp2 = np.sum(np.abs(f.coeffs[:, sel]) ** 2, axis=0)
    amp = np.sqrt(amp2)
    edges = _shell_edges(policy, float(k.min()), float(k.max()), width)
    j = np.searchsorted(edges, k * (1 + 1e-12), side="right") - 1
    nsh = len(edges) - 1
    energy = np.bincount(j, weights=amp2, minlength=nsh)[:nsh]
    count = np.bincount(j, minlength=nsh)[:nsh]
    smax = np.zeros(nsh)
    np.maximum.at(smax, j, amp)
    at_max = amp >= smax[j]
    kmax = np.full(nsh, np.inf)
    np.minimum.at(kmax, j[at_max], k[at_max])
    kmax[count == 0] = np.nan
    return ShellSpectrum(edges, smax, energy, kmax, count, policy)
