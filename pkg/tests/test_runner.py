import csv
import json

import numpy as np
import pytest

from statsol import FluxModel, GridSpec, SchemeConfig, UncertainShock
from statsol.cli import EXIT_CONFIG, EXIT_NONFINITE, main
from statsol.errors import ConfigInvalidError, NonFiniteError
from statsol.runner import (
    EXPERIMENTS,
    SUMMARY_COLUMNS,
    load_config,
    load_preset,
    midpoint_quadrature_ensemble,
    parse_config,
    preset_names,
    repetition_seed,
    run_experiment,
)

SMALL = {
    "mc": {"experiment": "mc", "resolutions": [32, 64], "samples": {"rule": "fixed", "M": 8},
           "diagnostics": {"quantities": ["mean", "variance", "sf_local", "sf_integrated", "three_point"],
                           "p": [1, 2], "h": 0.0625}, "repetitions": 2},
    "mlmc": {"experiment": "mlmc", "resolutions": [64], "samples": {"rule": "mlmc-experimental", "levels": 2},
             "diagnostics": {"quantities": ["mean", "sf_local"], "h": 0.0625}, "save_ensembles": True},
    "deterministic": {"experiment": "deterministic", "field": {"kind": "fbm", "hurst": 0.5},
                      "scheme": {"t_end": 0.05}, "resolutions": [32, 64, 128]},
    "wasserstein-study": {"experiment": "wasserstein-study", "resolutions": [32, 64],
                          "samples": {"rule": "equal-to-cells"}, "repetitions": 2},
    "midpoint-study": {"experiment": "midpoint-study", "resolutions": [32, 64],
                       "samples": {"rule": "equal-to-cells"}},
    "structure-functions": {"experiment": "structure-functions", "field": {"kind": "fbm", "hurst": 0.3},
                            "scheme": {"t_end": 0.05}, "resolutions": [128],
                            "samples": {"rule": "fixed", "M": 8}, "diagnostics": {"p": [1, 2]}},
    "level-variance": {"experiment": "level-variance", "field": {"kind": "fbm", "hurst": 0.5},
                       "scheme": {"t_end": 0.05}, "resolutions": [16, 32, 64],
                       "samples": {"rule": "fixed", "M": 8}, "diagnostics": {"h": 0.0625}},
}


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


# -- config ---------------------------------------------------------------------------------

def test_every_experiment_has_a_small_config():
    assert set(SMALL) == set(EXPERIMENTS)


@pytest.mark.parametrize("raw, path", [
    ({"experiment": "mc", "bogus": 1}, "bogus"),
    ({"experiment": "mc", "samples": {"M": 3, "extra": 1}}, "samples.extra"),
    ({"experiment": "mc", "resolutions": [64, 32]}, "resolutions"),
    ({"experiment": "mc", "resolutions": [64, 100]}, "resolutions[1]"),
    ({"experiment": "mc", "scheme": {"cfl": -1}}, "scheme.cfl"),
    ({"experiment": "mc", "resolutions": [32], "seed": -3}, "seed"),
    ({"experiment": "nope"}, "experiment"),
    ({"experiment": "mc", "field": {"kind": "fbm", "hurst": 1.5}}, "field.hurst"),
    ({"experiment": "mc", "resolutions": [32], "diagnostics": {"quantities": ["mean", "vorticity"]}}, "diagnostics.quantities[1]"),
])
def test_config_errors_carry_field_path(raw, path):
    with pytest.raises(ConfigInvalidError) as info:
        parse_config(raw)
    assert info.value.path == path
    assert str(info.value).startswith(f"{path}: ")


def test_config_defaults_and_resolution():
    with pytest.raises(ConfigInvalidError):
        parse_config({"experiment": "mc"})
    cfg = parse_config({"experiment": "wasserstein-study", "resolutions": [64]})
    assert cfg.repetitions == 10
    assert cfg.scheme.cfl == 0.475 and cfg.scheme.t_end == 0.2
    assert parse_config({"experiment": "mc", "resolutions": [64]}).repetitions == 1
    assert cfg.samples.count(256) == 256
    resolved = cfg.resolved()
    assert parse_config(resolved).resolved() == resolved


def test_invalid_json_file(tmp_path):
    (tmp_path / "c.json").write_text("{oops")
    with pytest.raises(ConfigInvalidError):
        load_config(tmp_path / "c.json")


def test_repetition_seeds():
    assert repetition_seed(7, 0) == 7
    seeds = {repetition_seed(7, r) for r in range(20)}
    assert len(seeds) == 20
    assert repetition_seed(7, 3) == repetition_seed(7, 3)


def test_presets_parse():
    names = preset_names()
    assert set(names) == {"shock-mean-var", "shock-wasserstein", "shock-midpoint", "shock-2pt", "shock-3pt",
                          "fbm-scaling-H05", "fbm-scaling-H001", "cubic-scaling", "mlmc-vs-mc"}
    for name in names:
        parse_config(load_preset(name))
    with pytest.raises(ConfigInvalidError):
        load_preset("missing")


# -- midpoint ensemble ------------------------------------------------------------------------

def test_midpoint_quadrature_nodes():
    g = GridSpec(4096)
    scheme = SchemeConfig(t_end=0.0)
    one = midpoint_quadrature_ensemble(UncertainShock(), 1, g, FluxModel.burgers(), scheme)
    assert one.size == 1
    assert np.flatnonzero(one.values[0] == 0)[0] * g.dx == pytest.approx(0.5, abs=g.dx)  # X = 0
    four = midpoint_quadrature_ensemble(UncertainShock(), 4, g, FluxModel.burgers(), scheme)
    jumps = [np.flatnonzero(v == 0)[0] * g.dx - 0.5 for v in four.values]
    np.testing.assert_allclose(jumps, [-0.075, -0.025, 0.025, 0.075], atol=g.dx)
    np.testing.assert_array_equal(four.weights, np.full(4, 0.25))
    with pytest.raises(ValueError):
        midpoint_quadrature_ensemble(UncertainShock(), 0, g, FluxModel.burgers(), scheme)


# -- studies ------------------------------------------------------------------------------------

def run(name, out, workers=1, seed=None):
    raw = dict(SMALL[name])
    if seed is not None:
        raw["seed"] = seed
    return run_experiment(parse_config(raw), out=out, workers=workers)


@pytest.mark.parametrize("name", EXPERIMENTS)
def test_study_outputs_and_determinism(name, tmp_path):
    m1 = run(name, tmp_path / "a", workers=1)
    m2 = run(name, tmp_path / "b", workers=8)
    assert m1["status"] == "ok" and m1["files"] == m2["files"]
    assert m1["config"]["experiment"] == name and "version" in m1
    for f in m1["files"]:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f
    summary = read_csv(tmp_path / "a" / "summary.csv")
    assert summary and tuple(summary[0]) == SUMMARY_COLUMNS
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["files"] == m1["files"]


def test_seed_changes_output(tmp_path):
    run("mc", tmp_path / "a")
    run("mc", tmp_path / "b", seed=99)
    assert (tmp_path / "a" / "summary.csv").read_bytes() != (tmp_path / "b" / "summary.csv").read_bytes()


def test_summary_work_matches_model(tmp_path):
    run("wasserstein-study", tmp_path)
    rows = read_csv(tmp_path / "summary.csv")
    for r in rows:
        assert int(r["samples"]) == int(r["resolution"])
        assert float(r["error_mean"]) > 0
    assert len({r["fitted_rate"] for r in rows}) == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_marks_manifest(tmp_path):
    cfg = parse_config({"experiment": "mc", "field": {"left_value": 1e200}, "resolutions": [16],
                        "samples": {"rule": "fixed", "M": 4}})
    with pytest.raises(NonFiniteError):
        run_experiment(cfg, out=tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["status"] == "failed"
    assert manifest["error"]["type"] == "NonFiniteError" and manifest["error"]["sample_index"] == 0


# -- CLI -------------------------------------------------------------------------------------------

def test_cli_runs_config(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(SMALL["midpoint-study"]))
    assert main(["midpoint-study", "--config", str(path), "--out", str(tmp_path / "o"), "--workers", "2",
                 "--seed", "5"]) == 0
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["seed"] == 5 and manifest["config"]["workers"] == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"experiment": "mc", "samples": {"M": 3, "bogus": 1}}))
    assert main(["mc", "--config", str(bad)]) == EXIT_CONFIG
    assert "samples.bogus" in capsys.readouterr().err
    assert main(["deterministic", "--preset", "shock-mean-var"]) == EXIT_CONFIG
    assert main(["mc", "--preset", "nope"]) == EXIT_CONFIG
    assert main(["mc", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    nf = tmp_path / "nf.json"
    nf.write_text(json.dumps({"experiment": "mc", "field": {"left_value": 1e200}, "resolutions": [16],
                              "samples": {"rule": "fixed", "M": 4}}))
    assert main(["mc", "--config", str(nf), "--out", str(tmp_path / "nf")]) == EXIT_NONFINITE
    assert "sample=0" in capsys.readouterr().err


def test_cli_lists_presets(capsys):
    assert main(["presets"]) == 0
    assert "shock-midpoint\tmidpoint-study" in capsys.readouterr().out


def test_cli_requires_source():
    with pytest.raises(SystemExit):
        main(["mc"])
    with pytest.raises(SystemExit):
        main(["mc", "--config", "a", "--preset", "b"])
