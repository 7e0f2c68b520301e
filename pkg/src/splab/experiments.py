"""Scenario configuration, execution and export.

A scenario is described by one JSON file.  Every section is parsed into a
dataclass and unknown keys are rejected with the offending line.  Sequences
of horizons or weights are either explicit lists or ranges written as
``{"log": [lo, hi, n]}`` (``n`` points from ``10**lo`` to ``10**hi``) or
``{"linear": [lo, hi, n]}``.

Scenarios
---------
``part-a``           subcritical data, ``p = 2/delta``, certified ratio check.
``part-b``           critical data, weight from the measured heat-flow norm.
``corollary``        3D Navier-Stokes long-time experiment.
``lemma-check``      calibration only, optionally with a resolution doubling.
``product-law``      measured product-law ratios.
``scaling-check``    scaling covariance of the integrator.
``baseline-sqrt-t``  measured radius against ``sqrt(t)``.

Outputs of :func:`run_scenario` are ``report.json``, ``norms.csv``,
``trace.bin``/``trace.json`` (first ensemble member) and the plot CSVs of
:func:`export_plotdata`.  With one thread the files are byte-identical for
identical configurations.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import re
import types
import typing
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Union

import numpy as np

from . import __version__
from . import analyticity as an
from .initial_data import Ensemble, InitialDataLaw, generate_initial_data
from .integrator import (IntegratorOptions, Trace, integrate, rescale_data, rescale_solution,
                         save_trace)
from .models import SystemSpec, scaling_data, spec_from_config, spec_to_config
from .norms import (heat_flow_kato_norm, kato_norm, kato_norm_series, product_law_ratio,
                    sobolev_norm)
from .spectral import make_grid, set_threads

SCENARIOS = ("part-a", "part-b", "corollary", "lemma-check", "product-law", "scaling-check",
             "baseline-sqrt-t")
PLOT_COLUMNS = ("t", "R_measured", "R_certified", "sqrt_t", "lambda_T_sqrt_t", "log_factor")


class ConfigError(ValueError):
    """Malformed scenario file; carries the field path and line when known."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field '{field}'")
        super().__init__(f"config error ({', '.join(where)}): {message}" if where else f"config error: {message}")


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------

@dataclass
class LawConfig:
    """Initial-data envelope; the target exponent is ``s_crit + s_offset``
    (``s_crit + delta + s_offset`` in part (a))."""

    s_offset: float = 0.0
    norm: float | None = 0.5
    amplitude: float = 1.0
    margin: float = 0.1
    cutoff: float | None = None
    kmin: float = 0.0


@dataclass
class EnsembleConfig:
    seeds: list[int] | None = None
    n_seeds: int = 20
    seed_offset: int = 0
    law: LawConfig = field(default_factory=LawConfig)

    def seed_list(self) -> list[int]:
        if self.seeds is not None:
            return list(self.seeds)
        return list(range(self.seed_offset, self.seed_offset + self.n_seeds))


@dataclass
class GridConfig:
    points: int = 256
    period: float = 2 * math.pi
    truncation_radius: float | None = None


@dataclass
class IntegratorConfig:
    dt: float = 1e-3
    scheme: str = "etdrk4"
    per_decade: int = 16
    t_min: float | None = 1e-6


@dataclass
class CalibrationConfig:
    ensemble: EnsembleConfig = field(default_factory=lambda: EnsembleConfig(seed_offset=1000))
    T_grid: list[float] = field(default_factory=lambda: list(np.logspace(-4, 0, 9)))
    lam_grid: list[float] = field(default_factory=lambda: list(np.linspace(0.0, 10.0, 21)))
    heat_T_grid: list[float] = field(default_factory=lambda: list(np.logspace(-6, 0, 13)))
    t0_grid: list[float] = field(default_factory=lambda: [0.0])
    horizon: float | None = None
    resolution_check: bool = False


@dataclass
class FitConfig:
    policy: str = "unit"
    width: float = 1.0
    noise_floor: float = 1e-13
    min_shells: int = 6
    k_min: float = 0.0
    gaussian: bool = False

    def options(self) -> an.FitOptions:
        return an.FitOptions(**dataclasses.asdict(self))


@dataclass
class CorollaryConfig:
    t0_min: float = 0.0
    margin: float = 0.5
    data_over_threshold: float | None = 2.0
    n_T: int = 12


@dataclass
class ProductConfig:
    s_values: list[float] = field(default_factory=lambda: [0.1, 0.25, 0.4])
    k: int = 2
    trials: int = 5


@dataclass
class ScenarioConfig:
    """One scenario file.  ``constants`` names a calibration JSON; without it
    scenarios that need constants calibrate on ``calibration.ensemble``."""

    scenario: str
    system: Union[str, dict] = "burgers"
    d: int | None = None
    grid: GridConfig = field(default_factory=GridConfig)
    eps: float = 0.1
    p: float | None = None
    delta: float | None = None
    T: list[float] = field(default_factory=lambda: list(np.logspace(-5, 0, 11)))
    horizon: float = 1.0
    scaling_lambda: float = 2.0
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    constants: str | None = None
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    corollary: CorollaryConfig = field(default_factory=CorollaryConfig)
    product: ProductConfig = field(default_factory=ProductConfig)
    output: str = "out"
    threads: int = 1

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {list(SCENARIOS)}", "scenario")
        if not 0 < self.eps < 1:
            raise ConfigError("eps must lie in (0, 1)", "eps")
        if self.scenario == "part-a":
            if self.delta is None:
                raise ConfigError("part-a needs delta", "delta")
            if self.p is not None and not math.isclose(self.p, 2.0 / self.delta):
                raise ConfigError("part-a fixes p = 2/delta", "p")
            self.p = 2.0 / self.delta

    def make_spec(self) -> SystemSpec:
        cfg = {"builtin": self.system} if isinstance(self.system, str) else dict(self.system)
        if self.d is not None and "builtin" in cfg:
            cfg.setdefault("d", self.d)
        try:
            return spec_from_config(cfg)
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(str(exc), "system") from exc

    def scaling(self, spec: SystemSpec):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return scaling_data(spec)

    def kato_p(self, spec: SystemSpec) -> float:
        return self.p if self.p is not None else self.scaling(spec).default_p(spec.k)

    def law(self, spec: SystemSpec, law: LawConfig | None = None) -> InitialDataLaw:
        law = law or self.ensemble.law
        shift = self.delta if self.scenario == "part-a" else 0.0
        s = self.scaling(spec).s_crit + law.s_offset + shift
        return InitialDataLaw(s=s, amplitude=law.amplitude, margin=law.margin, cutoff=law.cutoff,
                              kmin=law.kmin, norm=law.norm, divergence_free=spec.N > 1 and spec.name == "navier_stokes")

    def make_ensemble(self, spec: SystemSpec, ens: EnsembleConfig | None = None, horizon: float | None = None,
                      extra=(), points: int | None = None) -> Ensemble:
        ens = ens or self.ensemble
        g = {"d": spec.d, "points": points or self.grid.points, "period": self.grid.period,
             "truncation_radius": self.grid.truncation_radius}
        it = self.integrator
        return Ensemble(self.law(spec, ens.law), g, ens.seed_list(), horizon or self.horizon, dt=it.dt,
                        per_decade=it.per_decade, t_min=it.t_min, extra_times=tuple(extra), scheme=it.scheme,
                        workers=self.threads)


_SECTIONS = {
    "law": LawConfig, "ensemble": EnsembleConfig, "grid": GridConfig, "integrator": IntegratorConfig,
    "calibration": CalibrationConfig, "fit": FitConfig, "corollary": CorollaryConfig, "product": ProductConfig,
}


def _line_of(text: str | None, path: list[str]) -> int | None:
    """Line of the last key of ``path``, searching the keys in order."""
    if not text:
        return None
    pos = 0
    for key in path:
        m = re.compile(r'"' + re.escape(key) + r'"\s*:').search(text, pos)
        if m is None:
            return None
        pos = m.start()
    return text.count("\n", 0, pos) + 1


def _expand_range(value, where: str):
    if isinstance(value, dict):
        if len(value) != 1 or next(iter(value)) not in ("log", "linear"):
            raise ValueError(f"range must be {{'log': [lo, hi, n]}} or {{'linear': [lo, hi, n]}}")
        kind, args = next(iter(value.items()))
        if not (isinstance(args, list) and len(args) == 3):
            raise ValueError("range needs [lo, hi, n]")
        lo, hi, n = float(args[0]), float(args[1]), int(args[2])
        return list(np.logspace(lo, hi, n) if kind == "log" else np.linspace(lo, hi, n))
    return value


def _coerce(value, hint, where: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        errors = []
        for a in args:
            if a is type(None):
                continue
            try:
                return _coerce(value, a, where)
            except (TypeError, ValueError) as exc:
                errors.append(str(exc))
        raise TypeError(f"expected {hint}, got {value!r}")
    if origin is list:
        value = _expand_range(value, where)
        if not isinstance(value, list):
            raise TypeError(f"expected a list, got {type(value).__name__}")
        return [_coerce(v, args[0], where) for v in value]
    if hint is bool:
        if not isinstance(value, bool):
            raise TypeError(f"expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError(f"expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError(f"expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise TypeError(f"expected a string, got {value!r}")
        return value
    if hint is dict:
        if not isinstance(value, dict):
            raise TypeError(f"expected an object, got {value!r}")
        return value
    raise TypeError(f"unsupported field type {hint}")


def _build(cls, raw, path: list[str], text: str | None):
    if not isinstance(raw, dict):
        raise ConfigError("expected an object", ".".join(path) or None, _line_of(text, path))
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in names:
            raise ConfigError(f"unknown key; allowed: {sorted(names)}", ".".join(path + [key]),
                              _line_of(text, path + [key]))
    kwargs = {}
    for key, value in raw.items():
        sub = path + [key]
        hint = hints[key]
        if key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], value, sub, text)
            continue
        try:
            kwargs[key] = _coerce(value, hint, ".".join(sub))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), ".".join(sub), _line_of(text, sub)) from None
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        if exc.line is None and exc.field:
            raise ConfigError(str(exc).split(": ", 1)[-1], ".".join(path + [exc.field]),
                              _line_of(text, path + [exc.field])) from None
        raise
    except TypeError as exc:
        raise ConfigError(str(exc), ".".join(path) or None, _line_of(text, path)) from None


def parse_config(text: str) -> ScenarioConfig:
    """Parse a scenario from JSON text (strict keys, typed fields)."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", None, exc.lineno) from None
    if isinstance(raw, dict) and "scenario" not in raw:
        raise ConfigError("missing required key", "scenario", 1)
    return _build(ScenarioConfig, raw, [], text)


def load_config(path: str | Path) -> ScenarioConfig:
    return parse_config(Path(path).read_text())


def config_to_dict(cfg: ScenarioConfig) -> dict:
    return _clean(dataclasses.asdict(cfg))


# ---------------------------------------------------------------------------
# JSON helpers
# ---------------------------------------------------------------------------

def _clean(obj):
    """JSON-ready copy: numpy scalars unwrapped, nan -> null, +-inf -> strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def dump_json(obj, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_clean(obj), indent=1, sort_keys=True) + "\n")
    return path


def load_constants(path: str | Path) -> an.CalibratedConstants:
    data = json.loads(Path(path).read_text())
    data = data.get("constants", data)
    return an.CalibratedConstants.from_dict(data)


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------

def calibrate(cfg: ScenarioConfig, points: int | None = None) -> an.CalibratedConstants:
    """Lemma constant, and ``C_heat`` (when ``delta`` is set) or ``K_eps``
    (corollary), from ``cfg.calibration``."""
    spec = cfg.make_spec()
    p = cfg.kato_p(spec)
    cal = cfg.calibration
    horizon = cal.horizon or max(cal.t0_grid) + max(cal.T_grid)
    ens = cfg.make_ensemble(spec, cal.ensemble, horizon=horizon, extra=cal.T_grid, points=points)
    consts = an.calibrate_lemma_constant(spec, cfg.eps, p, ens, cal.T_grid, cal.lam_grid, t0_grid=cal.t0_grid)
    if cfg.delta is not None:
        heat_ens = cfg.make_ensemble(spec, cal.ensemble, points=points)
        s_heat = cfg.scaling(spec).s_crit + cfg.delta + cal.ensemble.law.s_offset
        heat_ens.law = dataclasses.replace(heat_ens.law, s=s_heat)
        C_heat, prov = an.calibrate_heat_constant(heat_ens, spec, cfg.delta, p, cfg.eps, cal.heat_T_grid)
        consts.C_heat, consts.delta = C_heat, cfg.delta
        consts.provenance["heat"] = prov
    if cfg.scenario == "corollary":
        K, prov = an.calibrate_K_eps(ens, spec, cfg.eps, p)
        consts.K_eps = K
        consts.provenance["K_eps"] = prov
    consts.provenance["package_version"] = __version__
    return consts


def _constants_for(cfg: ScenarioConfig) -> an.CalibratedConstants:
    if cfg.constants is not None:
        try:
            return load_constants(cfg.constants)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"cannot read constants: {exc}", "constants") from exc
    return calibrate(cfg)


# ---------------------------------------------------------------------------
# Scenario runners; each returns (report, traces)
# ---------------------------------------------------------------------------

def _plot_row(t, R_measured, R_certified, lam_sqrt_t, log_factor=math.nan) -> dict:
    return {"t": t, "R_measured": R_measured, "R_certified": R_certified, "sqrt_t": math.sqrt(t),
            "lambda_T_sqrt_t": lam_sqrt_t, "log_factor": log_factor}


def _run_part_b(cfg: ScenarioConfig, spec: SystemSpec):
    consts = _constants_for(cfg)
    p = cfg.kato_p(spec)
    s = cfg.scaling(spec).s_p(p)
    fit = cfg.fit.options()
    ens = cfg.make_ensemble(spec, horizon=max(cfg.horizon, max(cfg.T)), extra=cfg.T)
    rows, series, traces = [], {}, []
    violations, monotone, heat_zero = 0, True, True
    strict_span = math.inf
    for seed, tr in ens.traces(spec):
        traces.append(tr)
        U0 = tr.snapshot(0)
        T_eps = an.T_eps_critical(U0, cfg.eps, p, consts, s)
        H_sup = heat_flow_kato_norm(U0, cfg.eps, p, s, math.inf)
        lam_prev = math.inf
        strict = []
        plot = []
        for T in sorted(cfg.T):
            if T > T_eps:
                continue
            H = heat_flow_kato_norm(U0, cfg.eps, p, s, T)
            lam = an.lambda_from_heat_norm(H, consts.c_small, cfg.eps)
            rep = an.verify_bootstrap(tr, an.GevreyParams(lam, cfg.eps, T, p), consts, s)
            est = an.estimate_radius(tr.at(T), fit)
            # strictly decreasing in T until the heat-flow profile peaks, constant after
            monotone &= lam <= lam_prev * (1 + 1e-12)
            if H < H_sup * (1 - 1e-9):
                monotone &= lam < lam_prev
                strict.append(T)
            lam_prev = lam
            violations += not rep.certified
            rows.append({"seed": seed, "T": T, "heat_kato": H, "lambda_T": lam, **rep.summary(),
                         "delta_fit": est.delta_fit, "resolved": est.resolved, "floor_flag": est.floor_flag})
            plot.append(_plot_row(T, est.delta_fit, rep.certified_radius, lam * math.sqrt(T)))
        series[f"seed{seed}"] = plot
        strict_span = min(strict_span, math.log10(max(strict) / min(strict)) if len(strict) > 1 else 0.0)
        # heat-flow norm against its small-T bound T^{1/p} ||U0||_{H^s}
        bound = sobolev_norm(U0, s)
        T_small = min(cfg.T) * 1e-8
        H_small = heat_flow_kato_norm(U0, cfg.eps, p, s, T_small)
        heat_zero &= H_small <= T_small ** (1 / p) * bound * (1 + 1e-9) and H_small <= 1e-2 * bound
    checks = {
        "bootstrap_zero_violations": violations == 0 and len(rows) > 0,
        "lambda_T_increasing_as_T_decreases": bool(monotone),
        "strict_increase_over_3_decades": strict_span >= 3 - 1e-9,
        "heat_kato_to_zero": bool(heat_zero),
    }
    report = {"constants": consts.to_dict(), "rows": rows, "series": series, "checks": checks,
              "violations": violations, "strict_span_decades": strict_span, "p": p, "s": s}
    return report, traces


def _run_part_a(cfg: ScenarioConfig, spec: SystemSpec):
    consts = _constants_for(cfg)
    delta, p = cfg.delta, cfg.kato_p(spec)
    sd = cfg.scaling(spec)
    if not 0 < delta < sd.alpha:
        raise ConfigError(f"delta must lie in (0, alpha={sd.alpha})", "delta")
    s = sd.s_p(p)
    fit = cfg.fit.options()
    ens = cfg.make_ensemble(spec, horizon=max(cfg.horizon, max(cfg.T)), extra=cfg.T)
    target = math.sqrt(2 * delta * (1 - cfg.eps))
    rows, series, traces = [], {}, []
    worst = math.inf
    for seed, tr in ens.traces(spec):
        traces.append(tr)
        U0 = tr.snapshot(0)
        norm0 = sobolev_norm(U0, sd.s_crit + delta)
        T_eps = an.T_eps_subcritical(norm0, delta, cfg.eps, consts)
        plot = []
        for T in sorted(cfg.T):
            if T > T_eps / 10:
                continue
            lam = an.lambda_T_subcritical(T, norm0, delta, cfg.eps, consts)
            rep = an.verify_bootstrap(tr, an.GevreyParams(lam, cfg.eps, T, p), consts, s)
            log_factor = math.sqrt(-math.log(T * norm0 ** (2 / delta) / consts.eta))
            ratio = rep.certified_radius / (math.sqrt(T) * log_factor)
            worst = min(worst, ratio)
            est = an.estimate_radius(tr.at(T), fit)
            rows.append({"seed": seed, "T": T, "T_eps": T_eps, "U0_norm": norm0, "lambda_T": lam,
                         "ratio": ratio, **rep.summary(), "delta_fit": est.delta_fit, "resolved": est.resolved})
            plot.append(_plot_row(T, est.delta_fit, rep.certified_radius, lam * math.sqrt(T), log_factor))
        series[f"seed{seed}"] = plot
    checks = {
        "admissible_T_present": len(rows) > 0,
        "ratio_lower_bound": len(rows) > 0 and worst >= 0.95 * target,
    }
    report = {"constants": consts.to_dict(), "rows": rows, "series": series, "checks": checks,
              "target_ratio": target, "worst_ratio": worst, "p": p, "s": s}
    return report, traces


def _run_corollary(cfg: ScenarioConfig, spec: SystemSpec):
    if not (spec.name == "navier_stokes" and spec.d == 3):
        raise ConfigError("the corollary scenario needs 3D Navier-Stokes", "system")
    consts = _constants_for(cfg)
    if consts.K_eps is None:
        raise ConfigError("constants lack K_eps; calibrate with the corollary scenario", "constants")
    p = cfg.kato_p(spec)
    cc = cfg.corollary
    grid = make_grid(3, cfg.grid.points, cfg.grid.period, cfg.grid.truncation_radius)
    law = cfg.law(spec)
    threshold = consts.c_small / (2 * consts.K_eps)
    if cc.data_over_threshold is not None:
        law = dataclasses.replace(law, norm=cc.data_over_threshold * threshold)
    seed = cfg.ensemble.seed_list()[0]
    u0 = generate_initial_data(law, grid, seed, 3)
    H = cfg.horizon
    it = cfg.integrator
    opts = IntegratorOptions(horizon=H, dt=it.dt, scheme=it.scheme, snapshots_per_decade=it.per_decade,
                             t_min=it.t_min, extra_times=tuple(np.linspace(0, H, 4 * cc.n_T + 1)[1:]))
    tr = integrate(spec, u0, opts)
    rep = an.corollary_experiment(spec, u0, cfg.eps, p, H, consts, t0_min=cc.t0_min, margin=cc.margin,
                                  fit=cfg.fit.options(), trace=tr, n_T=cc.n_T)
    r0, r1, t1 = rep.ratio_endpoints()
    checks = {
        "threshold_reached": rep.t0 is not None,
        "shifted_bootstrap": rep.t0 is not None and bool(rep.bootstrap) and rep.bootstrap_ok
        and all(b["below_K_bound"] for b in rep.bootstrap),
        "ratio_grows_after_t0": bool(np.isfinite(r0) and np.isfinite(r1) and r1 > r0),
    }
    series = {"corollary": [_plot_row(r["t"], r["delta_fit"], r["certified"],
                                      rep.lam * math.sqrt(max(r["t"] - (rep.t0 or 0.0), 0.0)))
                            for r in rep.radius]}
    report = {"constants": consts.to_dict(), "corollary": rep.to_dict(), "initial_norm": sobolev_norm(u0, 0.5),
              "seed": seed, "ratio_at_t0": r0, "ratio_final": r1, "final_resolved_time": t1,
              "series": series, "checks": checks}
    return report, [tr]


def _run_lemma_check(cfg: ScenarioConfig, spec: SystemSpec):
    consts = calibrate(cfg)
    report = {"constants": consts.to_dict(), "series": {}}
    checks = {"lemma_constant_positive": consts.C_lemma > 0}
    if cfg.calibration.resolution_check:
        fine = calibrate(cfg, points=2 * cfg.grid.points)
        ratio = fine.C_lemma / consts.C_lemma
        checks["lemma_constant_stable"] = 0.5 < ratio < 2.0
        report["fine_constants"] = fine.to_dict()
        report["lemma_ratio_fine_over_coarse"] = ratio
        if consts.C_heat is not None:
            hr = fine.C_heat / consts.C_heat
            checks["heat_constant_stable"] = 0.5 < hr < 2.0
            report["heat_ratio_fine_over_coarse"] = hr
    report["checks"] = checks
    return report, []


def _run_product_law(cfg: ScenarioConfig, spec: SystemSpec):
    pc = cfg.product
    d = spec.d
    rows = []
    finite = True
    for s in pc.s_values:
        for points in (cfg.grid.points, 2 * cfg.grid.points):
            grid = make_grid(d, points, cfg.grid.period)
            law = InitialDataLaw(s=s, margin=cfg.ensemble.law.margin, norm=1.0)
            vals = []
            for t in range(pc.trials):
                seeds = [cfg.ensemble.seed_list()[0] + pc.k * t + i for i in range(pc.k)]
                fields = [generate_initial_data(law, grid, sd) for sd in seeds]
                vals.append(product_law_ratio(s, pc.k, fields))
            finite &= bool(np.all(np.isfinite(vals)))
            rows.append({"s": s, "points": points, "max_ratio": max(vals), "ratios": vals})
    stable = all(0.5 < rows[i + 1]["max_ratio"] / rows[i]["max_ratio"] < 2.0 for i in range(0, len(rows), 2))
    checks = {"ratios_finite": finite, "ratios_resolution_stable": stable}
    return {"rows": rows, "series": {}, "checks": checks}, []


def scaling_check(spec: SystemSpec, U0, lam: float, opts: IntegratorOptions, p: float | None = None) -> dict:
    """Integrate ``U0`` and ``lam^alpha U0(lam x)`` and compare with the exact rescaling.

    The rescaled run uses the step ``dt / lam^2`` and the snapshot times
    ``t / lam^2``, so both runs take the same steps in scaled variables.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sd = scaling_data(spec)
    p = sd.default_p(spec.k) if p is None else p
    tr = integrate(spec, U0, opts)
    expected = rescale_solution(tr, lam)
    V0 = rescale_data(U0, lam, sd.alpha)
    ropts = dataclasses.replace(opts, horizon=opts.horizon / lam**2, dt=opts.dt / lam**2, times=tuple(expected.times),
                                t_min=None, extra_times=())
    got = integrate(spec, V0, ropts)
    scale = np.max(np.abs(expected.coeffs))
    field_err = float(np.max(np.abs(got.coeffs - expected.coeffs)) / scale)
    k_orig = kato_norm(tr, p).value
    k_resc = kato_norm(got, p).value
    return {"lambda": lam, "field_rel_error": field_err, "kato_original": k_orig, "kato_rescaled": k_resc,
            "kato_rel_error": abs(k_resc - k_orig) / k_orig}


def _run_scaling_check(cfg: ScenarioConfig, spec: SystemSpec):
    ens = cfg.make_ensemble(spec)
    rows = []
    it = cfg.integrator
    opts = IntegratorOptions(horizon=cfg.horizon, dt=it.dt, scheme=it.scheme, snapshots_per_decade=it.per_decade,
                             t_min=it.t_min)
    for seed in ens.seeds:
        U0 = ens.initial(seed, spec)
        rows.append({"seed": seed, **scaling_check(spec, U0, cfg.scaling_lambda, opts, cfg.p)})
    worst = max(max(r["field_rel_error"], r["kato_rel_error"]) for r in rows)
    return {"rows": rows, "series": {}, "worst_rel_error": worst,
            "checks": {"scaling_covariance_1e-6": worst <= 1e-6}}, []


def _run_baseline(cfg: ScenarioConfig, spec: SystemSpec):
    fit = cfg.fit.options()
    ens = cfg.make_ensemble(spec)
    rows, series, traces = [], {}, []
    bad, counted = 0, 0
    for seed, tr in ens.traces(spec):
        traces.append(tr)
        plot = []
        for i in range(1, len(tr)):
            t = float(tr.times[i])
            est = an.estimate_radius(tr.snapshot(i), fit)
            in_window = est.resolved and est.floor_flag
            ok = (not in_window) or est.delta_fit >= 0.9 * math.sqrt(t)
            counted += in_window
            bad += not ok
            rows.append({"seed": seed, "t": t, "delta_fit": est.delta_fit, "ratio": est.delta_fit / math.sqrt(t),
                         "resolved": est.resolved, "floor_flag": est.floor_flag, "window": list(est.window),
                         "in_window": in_window, "ok": ok})
            plot.append(_plot_row(t, est.delta_fit, math.nan, math.nan))
        series[f"seed{seed}"] = plot
    checks = {"resolved_snapshots_present": counted >= 3, "delta_fit_at_least_0.9_sqrt_t": bad == 0}
    return {"rows": rows, "series": series, "checks": checks, "resolved_snapshots": counted}, traces


_RUNNERS = {
    "part-a": _run_part_a,
    "part-b": _run_part_b,
    "corollary": _run_corollary,
    "lemma-check": _run_lemma_check,
    "product-law": _run_product_law,
    "scaling-check": _run_scaling_check,
    "baseline-sqrt-t": _run_baseline,
}


@dataclass
class ScenarioResult:
    report: dict
    files: list[Path]
    traces: list[Trace]

    @property
    def passed(self) -> bool:
        return bool(self.report.get("passed"))

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1


class ScenarioError(RuntimeError):
    """A sub-operation failed; names the phase."""

    def __init__(self, phase: str, exc: Exception):
        self.phase = phase
        super().__init__(f"scenario phase '{phase}' failed: {type(exc).__name__}: {exc}")


def run_scenario(cfg: ScenarioConfig, outdir: str | Path | None = None, write: bool = True) -> ScenarioResult:
    """Run ``cfg`` and write its artifacts to ``outdir`` (default ``cfg.output``)."""
    set_threads(cfg.threads)
    spec = cfg.make_spec()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            body, traces = _RUNNERS[cfg.scenario](cfg, spec)
    except ConfigError:
        raise
    except Exception as exc:
        raise ScenarioError(cfg.scenario, exc) from exc
    report = {
        "format": "splab-report",
        "package_version": __version__,
        "scenario": cfg.scenario,
        "config": config_to_dict(cfg),
        "system": spec_to_config(spec),
        **body,
    }
    report["passed"] = all(bool(v) for v in report["checks"].values())
    files: list[Path] = []
    if write:
        out = Path(outdir or cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        files.append(dump_json(report, out / "report.json"))
        if traces:
            tr = traces[0]
            p = cfg.kato_p(spec)
            series = kato_norm_series(tr, p)
            files.append(series.to_csv(out / "norms.csv"))
            files.extend(save_trace(tr, out / "trace", norms={"kato_final": float(series.values[-1])}))
        else:
            with (out / "norms.csv").open("w", newline="") as fh:
                csv.writer(fh).writerow(["time", "value", "norm_id"])
            files.append(out / "norms.csv")
        files.extend(export_plotdata(report, out))
    return ScenarioResult(_clean(report), files, traces)


def export_plotdata(report: dict, outdir: str | Path) -> list[Path]:
    """One CSV per series with header ``t,R_measured,R_certified,sqrt_t,lambda_T_sqrt_t,log_factor``.

    ``log_factor`` is ``sqrt(-log(t ||U0||^{2/delta} / eta))`` for part (a)
    and empty otherwise.  A report without series gives a single header-only
    ``plot_radius.csv``.
    """
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    series = report.get("series") or {}
    if not series:
        series = {"radius": []}
    paths = []
    for name in sorted(series):
        path = out / f"plot_{name}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(PLOT_COLUMNS)
            for row in series[name]:
                w.writerow(["" if row.get(c) is None or (isinstance(row.get(c), float) and math.isnan(row[c]))
                            else repr(float(row[c])) for c in PLOT_COLUMNS])
        paths.append(path)
    return paths
