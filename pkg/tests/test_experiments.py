import csv
import json
import math

import numpy as np
import pytest

from splab.experiments import (PLOT_COLUMNS, ConfigError, ScenarioError, calibrate, config_to_dict, dump_json,
                               export_plotdata, load_constants, parse_config, run_scenario, scaling_check)
from splab.initial_data import InitialDataLaw, generate_initial_data
from splab.integrator import IntegratorOptions
from splab.models import builtin_burgers
from splab.spectral import make_grid

SMALL_CAL = {"ensemble": {"seeds": [1000, 1001]}}


def small(scenario, **extra):
    cfg = {"scenario": scenario, "system": "burgers", "grid": {"points": 128},
           "ensemble": {"seeds": [0, 1]}, "calibration": SMALL_CAL, "T": {"log": [-5, 0, 6]}}
    cfg.update(extra)
    return json.dumps(cfg, indent=1)


# --- parsing --------------------------------------------------------------

def test_parse_defaults_and_ranges():
    cfg = parse_config(small("part-b"))
    assert cfg.grid.points == 128 and cfg.eps == 0.1
    assert np.allclose(cfg.T, np.logspace(-5, 0, 6))
    assert cfg.calibration.lam_grid == list(np.linspace(0, 10, 21))
    assert cfg.ensemble.seed_list() == [0, 1]
    assert parse_config('{"scenario": "part-b", "ensemble": {"n_seeds": 3, "seed_offset": 7}}'
                        ).ensemble.seed_list() == [7, 8, 9]


def test_part_a_fixes_p():
    cfg = parse_config('{"scenario": "part-a", "delta": 0.25}')
    assert cfg.p == 8.0
    with pytest.raises(ConfigError, match="delta"):
        parse_config('{"scenario": "part-a"}')
    with pytest.raises(ConfigError, match="p = 2/delta"):
        parse_config('{"scenario": "part-a", "delta": 0.25, "p": 4}')


@pytest.mark.parametrize("text,field,line", [
    ('{\n "scenario": "part-b",\n "grid": {\n  "pointz": 64\n }\n}', "grid.pointz", 4),
    ('{\n "scenario": "part-b",\n "eps": "small"\n}', "eps", 3),
    ('{\n "scenario": "part-b",\n "eps": 1.5\n}', "eps", 3),
    ('{\n "scenario": "nope"\n}', "scenario", 2),
    ('{\n "scenario": "part-b",\n "T": {"cubic": [1, 2, 3]}\n}', "T", 3),
    ('{\n "scenario": "part-b",\n "ensemble": {\n  "law": {"norm": true}\n }\n}', "ensemble.law.norm", 4),
    ('{\n "eps": 0.1\n}', "scenario", 1),
])
def test_parse_errors_name_field_and_line(text, field, line):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.field == field
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_invalid_json_reports_line():
    with pytest.raises(ConfigError) as info:
        parse_config('{\n "scenario": "part-b",\n "eps": 0.1,\n}')
    assert info.value.line == 4 and "invalid JSON" in str(info.value)


def test_config_dict_roundtrip():
    cfg = parse_config(small("part-b"))
    again = parse_config(json.dumps(config_to_dict(cfg)))
    assert config_to_dict(again) == config_to_dict(cfg)


def test_unknown_system():
    cfg = parse_config('{"scenario": "part-b", "system": "kdv"}')
    with pytest.raises(ConfigError, match="unknown builtin"):
        cfg.make_spec()


# --- calibration and scenarios -------------------------------------------

@pytest.fixture(scope="module")
def constants_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cal") / "constants.json"
    consts = calibrate(parse_config(small("part-b")))
    dump_json({"constants": consts.to_dict()}, path)
    return path


def test_constants_file(constants_file):
    c = load_constants(constants_file)
    assert c.k == 2 and c.p == 4.0 and c.C_lemma > 0
    assert c.provenance["lemma"]["ensemble"]["seeds"] == [1000, 1001]


def test_part_b_run(tmp_path, constants_file):
    cfg = parse_config(small("part-b", constants=str(constants_file)))
    res = run_scenario(cfg, tmp_path)
    rep = res.report
    assert rep["checks"]["bootstrap_zero_violations"], rep["rows"]
    assert rep["checks"]["lambda_T_increasing_as_T_decreases"]
    assert rep["checks"]["heat_kato_to_zero"]
    assert {p.name for p in res.files} >= {"report.json", "norms.csv", "trace.bin", "trace.json",
                                           "plot_seed0.csv", "plot_seed1.csv"}
    header = next(csv.reader((tmp_path / "plot_seed0.csv").open()))
    assert tuple(header) == PLOT_COLUMNS
    assert json.loads((tmp_path / "report.json").read_text())["passed"] == rep["passed"]


def test_reproducible_reports(tmp_path):
    text = small("baseline-sqrt-t", horizon=0.05, ensemble={"seeds": [0]},
                 integrator={"dt": 1e-3, "per_decade": 4, "t_min": 1e-4})
    a = run_scenario(parse_config(text), tmp_path / "a")
    b = run_scenario(parse_config(text), tmp_path / "b")
    for name in ("report.json", "norms.csv", "trace.bin", "trace.json", "plot_seed0.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    assert a.report == b.report


def test_scaling_check_scenario(tmp_path):
    text = small("scaling-check", horizon=0.1, ensemble={"seeds": [0, 1]},
                 integrator={"dt": 1e-3, "per_decade": 4, "t_min": 1e-4})
    res = run_scenario(parse_config(text), tmp_path)
    assert res.passed and res.report["worst_rel_error"] <= 1e-6
    assert (tmp_path / "norms.csv").read_text().strip() == "time,value,norm_id"


def test_scaling_check_function():
    U0 = generate_initial_data(InitialDataLaw(s=-0.5, norm=0.5), make_grid(1, 128), seed=0)
    out = scaling_check(builtin_burgers(), U0, 2.0, IntegratorOptions(horizon=0.1, dt=1e-3, t_min=1e-5))
    assert out["field_rel_error"] <= 1e-6 and out["kato_rel_error"] <= 1e-6


def test_product_law_scenario(tmp_path):
    text = json.dumps({"scenario": "product-law", "system": "burgers", "grid": {"points": 64},
                       "product": {"s_values": [0.1, 0.25], "trials": 3}})
    res = run_scenario(parse_config(text), tmp_path)
    assert res.passed and len(res.report["rows"]) == 4


def test_lemma_check_on_cubic_heat(tmp_path):
    text = json.dumps({"scenario": "lemma-check", "system": "cubic_heat", "d": 1, "grid": {"points": 64},
                       "calibration": {"ensemble": {"seeds": [1000]}, "T_grid": {"log": [-3, 0, 4]},
                                       "lam_grid": {"linear": [0, 6, 7]}}})
    res = run_scenario(parse_config(text), tmp_path)
    c = res.report["constants"]
    assert res.passed and c["k"] == 3 and c["C_lemma"] > 0
    assert c["provenance"]["lemma"]["system"] == "cubic_heat"


def test_missing_constants_file(tmp_path):
    cfg = parse_config(small("part-b", constants=str(tmp_path / "absent.json")))
    with pytest.raises(ConfigError, match="constants"):
        run_scenario(cfg, tmp_path)


def test_runtime_failure_names_the_phase(tmp_path):
    text = json.dumps({"scenario": "scaling-check", "system": "burgers", "grid": {"points": 16},
                       "ensemble": {"seeds": [0]}})
    with pytest.raises(ScenarioError) as info:
        run_scenario(parse_config(text), tmp_path)
    assert info.value.phase == "scaling-check" and "representable" in str(info.value)


# --- export ---------------------------------------------------------------

def test_export_empty_report(tmp_path):
    paths = export_plotdata({"checks": {}}, tmp_path)
    assert [p.name for p in paths] == ["plot_radius.csv"]
    assert paths[0].read_text().strip() == ",".join(PLOT_COLUMNS)


def test_export_writes_blank_for_missing_values(tmp_path):
    rep = {"series": {"x": [{"t": 0.1, "R_measured": 0.5, "R_certified": None, "sqrt_t": math.sqrt(0.1),
                             "lambda_T_sqrt_t": float("nan"), "log_factor": 2.0}]}}
    path, = export_plotdata(rep, tmp_path)
    rows = list(csv.reader(path.open()))
    assert rows[1][2] == "" and rows[1][4] == "" and float(rows[1][5]) == 2.0
