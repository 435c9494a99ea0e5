import csv
import json

import numpy as np
import pytest

from phaseless import cli
from phaseless import experiment as ex
from phaseless.measurement import PhaselessDataset
from phaseless.potentials import GridFunction

BASE = {
    "E": 36.0,
    "M1": 4,
    "M2": 16,
    "potential": {"kind": "peaks", "norm_inf": 4.0},
    "backgrounds": {"kind": "corner_rectangles", "amplitude": 5.0},
    "Np": 1e9,
    "seed": 7,
    "J": 2,
}


def write_cfg(tmp_path, name="cfg.json", **over):
    cfg = {**BASE, **over}
    cfg = {k: v for k, v in cfg.items() if v is not ...}
    path = tmp_path / name
    path.write_text(json.dumps(cfg, indent=2))
    return str(path)


def run(*args):
    return cli.main([str(a) for a in args])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    cfg = write_cfg(tmp)
    out = tmp / "out"
    assert run("simulate", "--config", cfg, "--out", out) == 0
    assert run("reconstruct", "--config", cfg, "--out", out) == 0
    assert run("evaluate", "--config", cfg, "--out", out) == 0
    assert run("crosssection", "--config", cfg, "--out", out) == 0
    return tmp, cfg, out


def test_pipeline_outputs(pipeline):
    _, _, out = pipeline
    for name in ("truth.csv", "exact.dataset", "noisy.dataset", "provenance.json",
                 "geometry.json", "reconstruction.csv", "diagnostics.json", "metrics.json",
                 "crosssection_x1.csv"):
        assert (out / name).exists(), name
    metrics = json.loads((out / "metrics.json").read_text())
    assert 0 <= metrics["relative_linf"] < 1
    assert len(metrics["per_iteration_linf"]) == 2
    prov = json.loads((out / "provenance.json").read_text())
    assert len(prov["config_sha256"]) == 64


def test_simulate_is_deterministic(pipeline, tmp_path):
    _, cfg, out = pipeline
    assert run("simulate", "--config", cfg, "--out", tmp_path) == 0
    assert (tmp_path / "noisy.dataset").read_bytes() == (out / "noisy.dataset").read_bytes()
    assert (tmp_path / "truth.csv").read_bytes() == (out / "truth.csv").read_bytes()


def test_seed_override_changes_noise(pipeline, tmp_path):
    _, cfg, out = pipeline
    assert run("simulate", "--config", cfg, "--out", tmp_path, "--seed", 8) == 0
    a = PhaselessDataset.read(tmp_path / "noisy.dataset")
    b = PhaselessDataset.read(out / "noisy.dataset")
    assert a.seed == 8 and not np.array_equal(a.F, b.F)
    np.testing.assert_array_equal(PhaselessDataset.read(tmp_path / "exact.dataset").F,
                                  PhaselessDataset.read(out / "exact.dataset").F)


def test_exact_only_without_budget(tmp_path):
    cfg = write_cfg(tmp_path, Np=None)
    assert run("simulate", "--config", cfg, "--out", tmp_path / "o") == 0
    assert (tmp_path / "o" / "exact.dataset").exists()
    assert not (tmp_path / "o" / "noisy.dataset").exists()


def test_cli_matches_library(pipeline):
    _, cfg, out = pipeline
    conf = ex.load_config(cfg)
    problem = ex.build_problem(conf)
    _, noisy = ex.simulate(problem, conf["Np"], conf["seed"])
    v_star, _ = ex.reconstruct(problem, noisy)
    from_cli = GridFunction.read_csv(out / "reconstruction.csv")
    np.testing.assert_array_equal(from_cli.values, v_star.values)


def test_reconstruct_rerun_deterministic(pipeline, tmp_path):
    _, cfg, out = pipeline
    for name in ("noisy.dataset", "exact.dataset", "truth.csv", "truth.json"):
        (tmp_path / name).write_bytes((out / name).read_bytes())
    assert run("reconstruct", "--config", cfg, "--out", tmp_path) == 0
    assert (tmp_path / "reconstruction.csv").read_bytes() == (out / "reconstruction.csv").read_bytes()


def test_born_equals_single_cutoff(pipeline, tmp_path):
    tmp, _, out = pipeline
    cfg_j1 = write_cfg(tmp_path, name="j1.json", J=1)
    for name in ("noisy.dataset", "exact.dataset"):
        (tmp_path / name).write_bytes((out / name).read_bytes())
    assert run("reconstruct", "--config", cfg_j1, "--out", tmp_path, "--method", "born") == 0
    born = (tmp_path / "reconstruction.csv").read_bytes()
    assert run("reconstruct", "--config", cfg_j1, "--out", tmp_path, "--method", "iterative") == 0
    assert (tmp_path / "reconstruction.csv").read_bytes() == born
    # the dataset is untouched by the method switch
    assert (tmp_path / "noisy.dataset").read_bytes() == (out / "noisy.dataset").read_bytes()


def test_evaluate_examples(pipeline, tmp_path):
    _, cfg, out = pipeline
    truth = GridFunction.read_csv(out / "truth.csv")
    truth.write_csv(tmp_path / "truth.csv")
    truth.write_csv(tmp_path / "reconstruction.csv")
    assert run("evaluate", "--config", cfg, "--out", tmp_path) == 0
    assert json.loads((tmp_path / "metrics.json").read_text())["relative_linf"] == 0
    (truth * 1.1).write_csv(tmp_path / "reconstruction.csv")
    assert run("evaluate", "--config", cfg, "--out", tmp_path) == 0
    m = json.loads((tmp_path / "metrics.json").read_text())
    assert m["relative_linf"] == pytest.approx(0.1)
    (tmp_path / "truth.csv").unlink()
    assert run("evaluate", "--config", cfg, "--out", tmp_path) == 2


def test_crosssection(pipeline, tmp_path):
    _, cfg, out = pipeline
    rows = list(csv.reader(open(out / "crosssection_x1.csv")))
    n = GridFunction.read_csv(out / "truth.csv").grid.N
    assert rows[0] == ["x1", "truth", "re", "im"] and len(rows) == n + 1
    GridFunction.read_csv(out / "truth.csv").write_csv(tmp_path / "truth.csv")
    assert run("crosssection", "--config", cfg, "--out", tmp_path) == 0
    rows = list(csv.reader(open(tmp_path / "crosssection_x1.csv")))
    assert all(r[2] == "nan" for r in rows[1:])
    assert run("crosssection", "--config", cfg, "--out", tmp_path / "empty") == 2


def test_table_single_cell(tmp_path):
    cfg = write_cfg(tmp_path, table={"energies": [36.0], "Np": [1e9], "methods": ["born"],
                                     "repeats": 2})
    assert run("table", "--config", cfg, "--out", tmp_path) == 0
    rows = list(csv.DictReader(open(tmp_path / "table.csv")))
    assert len(rows) == 1
    assert rows[0]["seeds"] == "7 8"
    assert len(rows[0]["errors_percent"].split()) == 2


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "E": 36.0,\n  "bogus": 1\n}\n')
    assert run("simulate", "--config", bad, "--out", tmp_path) == 2
    with pytest.raises(ex.ConfigError, match="line 3"):
        ex.load_config(bad)
    broken = tmp_path / "broken.json"
    broken.write_text('{\n  "E": 36.0,\n  "M1": \n}\n')
    with pytest.raises(ex.ConfigError, match="line 4"):
        ex.load_config(broken)
    assert run("simulate", "--config", tmp_path / "missing.json", "--out", tmp_path) == 2
    assert run("reconstruct", "--config", write_cfg(tmp_path), "--out", tmp_path / "none") == 2
    with pytest.raises(ex.ConfigError):
        ex.validate({"E": -1})
    no_shifts = ex.validate({"E": 36, "backgrounds": {"kind": "typeB",
                                                      "profile": {"shape": "wendland"}}})
    with pytest.raises(ex.ConfigError, match="shifts"):
        ex.build_problem(no_shifts)


def test_numerical_failure_exit_code(tmp_path):
    cfg = write_cfg(tmp_path, potential={"kind": "peaks", "norm_inf": 30.0},
                    forward={"ls_tol": 1e-12, "ls_max_iter": 2, "restart": 2})
    assert run("simulate", "--config", cfg, "--out", tmp_path) == 3


def test_shipped_configs_validate():
    from pathlib import Path
    root = Path(__file__).resolve().parents[1] / "configs"
    files = sorted(root.glob("*.json"))
    assert files
    for f in files:
        ex.load_config(f)
