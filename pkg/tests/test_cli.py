import csv
import json

import numpy as np
import pytest

from rpinn.cli import TRAIN_FIELDS, ConfigError, derived_seed, load_config, main, sweep_points
from rpinn.network import MlpSpec, ParamLayout, ParamVector, save_params
from rpinn.recovery import read_indicator_csv

TINY_TRAIN = {"N1": 40, "N2": 8, "M": 0, "pretrain_epochs": 10, "adaptive_epochs": 3, "n_boundary": 12,
              "hidden_layers": 2, "hidden_width": 5, "mesh_nx": 6, "mesh_ny": 6, "epsilon": 0.2, "eval_grid": 12}


def write_config(path, **doc):
    doc.setdefault("problem", "poisson_peak")
    doc.setdefault("train", dict(TINY_TRAIN))
    path.write_text(json.dumps(doc))
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_run_minimal(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", out=str(tmp_path / "out"))
    assert main(["run", str(cfg)]) == 0
    assert len(read_rows(tmp_path / "out" / "reports.csv")) == 1
    assert "poisson_peak: iterations=0" in capsys.readouterr().out
    resolved = json.loads((tmp_path / "out" / "config.json").read_text())
    assert resolved["train"]["N1"] == 40
    assert set(resolved["train"]) == TRAIN_FIELDS


def test_unknown_problem_lists_valid_names(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", problem="heat")
    assert main(["run", str(cfg)]) == 1
    err = capsys.readouterr().err
    for name in ("poisson_peak", "burgers", "two_peaks", "wave"):
        assert name in err


def test_json_syntax_error_reports_position(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text('{"problem": "wave",\n "train": {"M": 1,}}')
    assert main(["run", str(path)]) == 1
    assert "line 2" in capsys.readouterr().err


def test_bad_fields_are_named(tmp_path):
    with pytest.raises(ConfigError, match="bogus"):
        load_config(write_config(tmp_path / "a.json", train={"bogus": 1}))
    with pytest.raises(ConfigError, match="train"):
        load_config(write_config(tmp_path / "b.json", train={"N1": -5}))
    with pytest.raises(ConfigError, match="colour"):
        load_config(write_config(tmp_path / "c.json", colour="red"))
    with pytest.raises(ConfigError, match="sweep"):
        load_config(write_config(tmp_path / "d.json", sweep={"depth": [1]}))


def test_overrides_and_flags(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    spec = load_config(cfg, seed=7, out=str(tmp_path / "o"), overrides=["train.M=3", "epsilon=0.5", "problem=wave"])
    assert spec.problem == "wave"
    assert (spec.train.M, spec.train.epsilon, spec.train.seed) == (3, 0.5, 7)
    assert spec.out == tmp_path / "o"
    with pytest.raises(ConfigError):
        load_config(cfg, overrides=["M"])


def test_benchmark_defaults_fill_unset_fields(tmp_path):
    spec = load_config(write_config(tmp_path / "c.json", problem="two_peaks", train={}))
    assert (spec.train.hidden_layers, spec.train.hidden_width, spec.train.N2) == (5, 64, 150)


def test_sweep_grid_and_summary(tmp_path):
    cfg = write_config(tmp_path / "c.json", out=str(tmp_path / "sw"), sweep={"N2": [4, 8], "mesh": [5, 6]},
                       train={**TINY_TRAIN, "M": 1, "pretrain_epochs": 2, "adaptive_epochs": 1})
    assert main(["sweep", str(cfg)]) == 0
    rows = read_rows(tmp_path / "sw" / "sweep_summary.csv")
    assert len(rows) == 4
    assert {(r["mesh_nx"], r["N2"]) for r in rows} == {("5", "4"), ("5", "8"), ("6", "4"), ("6", "8")}
    assert all(r["status"] == "ok" for r in rows)
    assert len({r["seed"] for r in rows}) == 4
    for r in rows:
        assert (tmp_path / "sw" / r["run"] / "reports.csv").is_file()


def test_sweep_points_full_grid(tmp_path):
    spec = load_config(write_config(tmp_path / "c.json", sweep={"N2": [25, 50, 100, 200], "mesh": [10, 30, 50, 70]}))
    pts = sweep_points(spec)
    assert len(pts) == 16
    assert {"mesh_nx": 70, "mesh_ny": 70, "N2": 200} in pts


def test_derived_seeds_are_distinct_and_stable():
    seeds = [derived_seed(0, i) for i in range(50)]
    assert len(set(seeds)) == 50
    assert seeds == [derived_seed(0, i) for i in range(50)]


def test_estimate_missing_checkpoint(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", checkpoint=str(tmp_path / "nope.ckpt"))
    assert main(["estimate", str(cfg)]) != 0
    assert "nope.ckpt" in capsys.readouterr().err


def test_estimate_on_nearly_linear_network(tmp_path):
    # one hidden layer in its linear regime: u = x + 2y up to O(1e-8)
    spec = MlpSpec(2, 1, 2)
    layout = ParamLayout(spec)
    theta = np.zeros(layout.size)
    theta[layout.index("W1", 0, 0)] = 1e-4
    theta[layout.index("W1", 1, 1)] = 1e-4
    theta[layout.index("W2", 0, 0)] = 1e4
    theta[layout.index("W2", 0, 1)] = 2e4
    save_params(tmp_path / "lin.ckpt", ParamVector(theta, layout))
    cfg = write_config(tmp_path / "c.json", checkpoint=str(tmp_path / "lin.ckpt"))
    assert main(["estimate", str(cfg), "--eta-out", str(tmp_path / "eta.csv")]) == 0
    eta = read_indicator_csv(tmp_path / "eta.csv")
    assert eta.shape == (2 * 6 * 6,)
    assert np.max(eta) <= 1e-8


def test_estimate_matches_training_indicator_bitwise(tmp_path):
    train = {**TINY_TRAIN, "M": 1, "adaptive_epochs": 0}
    cfg = write_config(tmp_path / "c.json", out=str(tmp_path / "run"), train=train)
    assert main(["run", str(cfg)]) == 0
    assert main(["estimate", str(cfg)]) == 0
    assert np.array_equal(read_indicator_csv(tmp_path / "run" / "eta.csv"),
                          read_indicator_csv(tmp_path / "run" / "eta_iter1.csv"))


def test_resolved_config_reproduces_run(tmp_path):
    cfg = write_config(tmp_path / "c.json", out=str(tmp_path / "a"), train={**TINY_TRAIN, "M": 1, "seed": 4})
    assert main(["run", str(cfg)]) == 0
    assert main(["run", str(tmp_path / "a" / "config.json"), "--out", str(tmp_path / "b")]) == 0
    a = read_rows(tmp_path / "a" / "reports.csv")
    b = read_rows(tmp_path / "b" / "reports.csv")
    assert [(r["rel_l2"], r["l_inf"], r["loss"]) for r in a] == [(r["rel_l2"], r["l_inf"], r["loss"]) for r in b]
    assert (tmp_path / "a" / "params.ckpt").read_bytes() == (tmp_path / "b" / "params.ckpt").read_bytes()
