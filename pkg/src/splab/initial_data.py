"""Random initial data with a prescribed algebraic spectral envelope.

Random numbers come from numpy's counter-based ``Philox`` generator keyed by
the seed.  Modes of the half lattice (first nonzero index positive) are
visited in order of increasing ``max_i |m_i|``, ties broken
lexicographically, and each mode consumes a fixed number of normals.  The
draws for a given mode therefore do not depend on the grid size: refining
the grid only appends modes.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np

from .integrator import IntegratorOptions, Trace, integrate
from .models import SystemSpec
from .spectral import Grid, SpectralField, leray_symbol, make_grid, reflect


@dataclass(frozen=True)
class InitialDataLaw:
    """``|U0^(xi)| = A |xi|^{-(s + d/2 + margin)}`` with random phases.

    Parameters
    ----------
    s : float
        Target Sobolev exponent; the field is in ``H^s`` uniformly in the
        resolution because ``margin > 0``.
    amplitude : float
        ``A``, multiplying the coefficient moduli.  Ignored if ``norm`` is set.
    margin : float
    cutoff : float, optional
        Largest ``|xi|`` carrying energy (defaults to the grid cutoff).
    kmin : float
        Smallest ``|xi|`` carrying energy.
    norm : float, optional
        If given, the field is rescaled to this ``H^s`` norm.
    divergence_free : bool
        Project each vector coefficient onto ``xi``-orthogonal directions.
    """

    s: float
    amplitude: float = 1.0
    margin: float = 0.1
    cutoff: float | None = None
    kmin: float = 0.0
    norm: float | None = None
    divergence_free: bool = False

    def __post_init__(self):
        if not self.margin > 0:
            raise ValueError("margin must be positive")

    def exponent(self, d: int) -> float:
        return self.s + d / 2.0 + self.margin

    def active(self, grid: Grid) -> np.ndarray:
        cut = grid.truncation_radius if self.cutoff is None else min(self.cutoff, grid.truncation_radius)
        k = grid.kabs
        return grid.mask & (grid.index_sq > 0) & (k <= cut * (1 + 1e-12)) & (k >= self.kmin * (1 - 1e-12))

    def target_norm(self, grid: Grid) -> float:
        """Closed-form ``H^s`` norm of the envelope on ``grid`` (phase independent)."""
        if self.norm is not None:
            return self.norm
        act = self.active(grid)
        k = grid.kabs[act]
        return math.sqrt(grid.norm_factor * float(np.sum(self.amplitude**2 * k ** (-2 * self.margin - grid.d))))


@lru_cache(maxsize=32)
def _half_lattice_order(grid: Grid) -> tuple[tuple[np.ndarray, ...], tuple[np.ndarray, ...]]:
    """Half-lattice modes in resolution-independent order, as index tuples
    into the FFT array for ``m`` and ``-m``."""
    K = grid.points // 2 - 1
    rng = np.arange(-K, K + 1)
    mesh = np.meshgrid(*([rng] * grid.d), indexing="ij")
    m = np.stack([x.ravel() for x in mesh], axis=1)
    first = np.zeros(len(m), dtype=np.int64)
    for ax in reversed(range(grid.d)):
        nz = m[:, ax] != 0
        first = np.where(nz, m[:, ax], first)
    m = m[first > 0]
    linf = np.max(np.abs(m), axis=1)
    keys = [m[:, ax] for ax in reversed(range(grid.d))] + [linf]
    m = m[np.lexsort(keys)]
    pos = tuple(m[:, ax] % grid.points for ax in range(grid.d))
    neg = tuple((-m[:, ax]) % grid.points for ax in range(grid.d))
    return pos, neg


def generate_initial_data(law: InitialDataLaw, grid: Grid, seed: int, components: int = 1) -> SpectralField:
    """Reproducible real, mean-free field following ``law``.

    For ``components > 1`` each coefficient vector has a random direction
    (projected to be divergence free if requested) and unit length before the
    envelope is applied.
    """
    act = law.active(grid)
    if int(np.count_nonzero(act)) == 0:
        raise ValueError("law has no active modes on this grid")
    if grid.truncation_radius < 8 * grid.dk:
        raise ValueError("envelope not representable: fewer than 8 shells below the grid cutoff")
    pos, neg = _half_lattice_order(grid)
    rng = np.random.Generator(np.random.Philox(seed))
    nmodes = len(pos[0])
    draws = rng.standard_normal((nmodes, components, 2))
    vec = draws[..., 0] + 1j * draws[..., 1]
    if components > 1 and law.divergence_free:
        xi = tuple(grid.dk * np.where(p > grid.points // 2, p - grid.points, p).astype(float) for p in pos)
        P = leray_symbol(xi)
        vec = np.einsum("ijn,nj->ni", P, vec)
    length = np.linalg.norm(vec, axis=1, keepdims=True)
    vec = vec / np.where(length > 0, length, 1.0)
    k = grid.kabs[pos]
    with np.errstate(divide="ignore"):
        env = law.amplitude * k ** (-law.exponent(grid.d))
    env = np.where(act[pos], env, 0.0)
    coeffs = np.zeros((components,) + grid.shape, dtype=complex)
    for c in range(components):
        coeffs[c][pos] = env * vec[:, c]
        coeffs[c][neg] = np.conj(env * vec[:, c])
    f = SpectralField(grid, coeffs * grid.mask, real=True)
    if law.norm is not None:
        from .norms import sobolev_norm

        cur = sobolev_norm(f, law.s)
        f = f * (law.norm / cur)
    return f


def divergence(f: SpectralField) -> np.ndarray:
    """Fourier coefficients of ``div f``."""
    xi = f.grid.wavenumbers
    return sum(1j * xi[a] * f.coeffs[a] for a in range(f.grid.d))


@dataclass
class Ensemble:
    """A reproducible family of runs: one trace per seed.

    ``grid`` is ``(d, points, period, truncation_radius)``; snapshots follow
    ``log_time_grid`` with ``extra_times`` added (e.g. the T values at which
    Kato norms are evaluated).
    """

    law: InitialDataLaw
    grid: dict
    seeds: Sequence[int]
    horizon: float
    dt: float = 1e-3
    per_decade: int = 16
    t_min: float | None = None
    extra_times: Sequence[float] = ()
    scheme: str = "etdrk4"
    workers: int = 1

    def make_grid(self) -> Grid:
        g = self.grid
        return make_grid(g["d"], g["points"], g.get("period", 2 * np.pi), g.get("truncation_radius"))

    def describe(self) -> dict:
        return {
            "law": {k: getattr(self.law, k) for k in ("s", "amplitude", "margin", "cutoff", "kmin", "norm",
                                                      "divergence_free")},
            "grid": dict(self.grid),
            "seeds": list(self.seeds),
            "horizon": self.horizon,
            "dt": self.dt,
            "per_decade": self.per_decade,
            "t_min": self.t_min,
            "scheme": self.scheme,
            "rng": "numpy Philox (4x64), key = seed",
        }

    def initial(self, seed: int, spec: SystemSpec) -> SpectralField:
        return generate_initial_data(self.law, self.make_grid(), seed, spec.N)

    def run(self, spec: SystemSpec, seed: int) -> Trace:
        U0 = self.initial(seed, spec)
        opts = IntegratorOptions(horizon=self.horizon, dt=self.dt, snapshots_per_decade=self.per_decade,
                                 t_min=self.t_min, extra_times=tuple(self.extra_times), scheme=self.scheme)
        return integrate(spec, U0, opts)

    def traces(self, spec: SystemSpec) -> Iterator[tuple[int, Trace]]:
        if self.workers <= 1:
            for seed in self.seeds:
                yield seed, self.run(spec, seed)
            return
        with ThreadPoolExecutor(self.workers) as pool:
            for seed, tr in zip(self.seeds, pool.map(lambda s: self.run(spec, s), self.seeds)):
                yield seed, tr
