import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from lavadfl import cli, harness
from lavadfl.learner import LinearModel
from lavadfl.lp_core import load_lp

TINY_TRAIN = {"max_epochs": 4, "patience_checks": 2}


def _cfg(tmp_path, **over):
    cfg = {"benchmark": {"kind": "random_lp", "n_structural": 12, "m": 5},
           "sizes": [16, 6, 6], "seeds": [0], "train": dict(TINY_TRAIN)}
    cfg.update(over)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def _run(*argv):
    return cli.main(list(argv))


# -- config -----------------------------------------------------------------

def test_unknown_key_exit_2(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"benchmark": {"kind": "random_lp"}, "learning_rate": 0.1}))
    assert _run("generate", "--config", str(path), "--out", str(tmp_path)) == 2
    assert "learning_rate" in capsys.readouterr().err


def test_unknown_nested_key(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"train": {"epochz": 3}}))
    assert _run("train", "--config", str(path)) == 2
    assert "epochz" in capsys.readouterr().err


@pytest.mark.parametrize("raw", [{"sizes": [1, 2]}, {"seeds": []}, {"method": {"loss": "pfyl"}},
                                 {"method": {"epsilon": -1}}, {"train": {"lr": -1}},
                                 {"benchmark": {"kind": "tsp"}}, {"jobs": 0},
                                 {"benchmark": {"kind": "random_lp", "n_structural": 5, "m": 5}}])
def test_invalid_values(raw):
    with pytest.raises(harness.ConfigError):
        harness.validate_config(raw)


def test_usage_error_exit_2():
    with pytest.raises(SystemExit) as info:
        _run("frobnicate")
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        _run("reproduce", "--table", "4")
    assert info.value.code == 2


def test_missing_config_file(tmp_path):
    assert _run("generate", "--config", str(tmp_path / "nope.json")) == 2


def test_precedence(tmp_path, monkeypatch):
    path = _cfg(tmp_path, out=str(tmp_path / "from_file"))
    monkeypatch.setenv(harness.ENV_OUT, str(tmp_path / "from_env"))
    assert harness.load_config(path, {"out": str(tmp_path / "flag")})["out"] == str(tmp_path / "flag")
    assert harness.load_config(path)["out"] == str(tmp_path / "from_file")
    assert harness.load_config(None)["out"] == str(tmp_path / "from_env")
    monkeypatch.delenv(harness.ENV_OUT)
    assert harness.load_config(None)["out"] == "runs"


def test_epsilon_inf_string():
    cfg = harness.validate_config({"method": {"loss": "lava", "epsilon": "inf"}})
    assert math.isinf(cfg["method"]["epsilon"])
    assert harness.method_tag(cfg["method"]) == "lava[eps=inf]"
    assert harness.method_tag({"loss": "lava", "epsilon": 0.0}) == "lava[eps=0]"
    assert harness.method_tag({"loss": "spo+", "epsilon": 0.1}) == "spo+"


# -- pipeline ---------------------------------------------------------------

def test_generate_full_scale_lp(tmp_path):
    cfg = harness.load_config(None, {"out": str(tmp_path), "sizes": [2, 1, 1]})
    harness.cmd_generate(cfg, 0)
    lp = load_lp(tmp_path / "random_lp" / "seed0" / "lp.json")
    assert lp.m == 50 and lp.n_structural == 150


def test_generate_idempotent(tmp_path, capsys):
    cfg = _cfg(tmp_path)
    out = str(tmp_path / "o")
    assert _run("generate", "--config", cfg, "--out", out) == 0
    man1 = json.loads((tmp_path / "o/random_lp/seed0/manifest.json").read_text())
    assert _run("generate", "--config", cfg, "--out", out) == 0
    man2 = json.loads((tmp_path / "o/random_lp/seed0/manifest.json").read_text())
    assert man1 == man2
    # same content from scratch, different directory
    assert _run("generate", "--config", cfg, "--out", str(tmp_path / "p")) == 0
    man3 = json.loads((tmp_path / "p/random_lp/seed0/manifest.json").read_text())
    assert man3["data_hash"] == man1["data_hash"] and man3["files"] == man1["files"]


def test_train_before_generate_is_runtime_error(tmp_path, capsys):
    assert _run("train", "--config", _cfg(tmp_path), "--out", str(tmp_path / "o")) == 1
    assert "generate" in capsys.readouterr().err


def test_lava_without_precompute_names_command(tmp_path, capsys):
    cfg, out = _cfg(tmp_path), str(tmp_path / "o")
    assert _run("generate", "--config", cfg, "--out", out) == 0
    assert _run("train", "--config", cfg, "--out", out) == 1
    assert "precompute" in capsys.readouterr().err


def test_full_cycle_random_lp(tmp_path, capsys):
    cfg, out = _cfg(tmp_path), str(tmp_path / "o")
    for cmd in ("generate", "precompute", "train", "evaluate"):
        assert _run(cmd, "--config", cfg, "--out", out) == 0, cmd
    d = tmp_path / "o/random_lp/seed0"
    meta = json.loads((d / "adjacency.meta.json").read_text())
    assert meta["instances"] == 22
    assert set(meta["bases_visited"]) == {1}
    rep = json.loads((d / "runs/lava/report.json").read_text())
    assert rep["solver_calls"] == 0
    assert {"precompute_seconds", "train_seconds"} <= set(rep)
    with open(tmp_path / "o/results.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == harness.RESULTS_HEADER
    assert rows[1][:3] == ["random_lp", "lava", "0"]
    ck = json.loads((d / "runs/lava/checkpoint.json").read_text())
    assert set(ck) == {"W", "bias", "meta"}


def test_spo_plus_calls_solver(tmp_path):
    cfg = harness.load_config(_cfg(tmp_path, method={"loss": "spo+"}), {"out": str(tmp_path / "o")})
    harness.cmd_generate(cfg, 0)
    rep = harness.cmd_train(cfg, 0)
    assert rep["solver_calls"] >= 16


def test_precompute_shortest_path_degenerate(tmp_path):
    cfg = harness.load_config(_cfg(tmp_path, benchmark={"kind": "shortest_path", "k": 3}),
                              {"out": str(tmp_path / "o"), "jobs": 2})
    harness.cmd_generate(cfg, 0)
    meta = harness.cmd_precompute(cfg, 0)
    assert all(v > 1 for v in meta["bases_visited"])
    assert all(v <= c for v, c in zip(meta["bases_visited"], meta["caps"]))


def test_precompute_resumes(tmp_path, monkeypatch):
    cfg = harness.load_config(_cfg(tmp_path), {"out": str(tmp_path / "o")})
    harness.cmd_generate(cfg, 0)
    monkeypatch.setattr(harness, "PRECOMPUTE_CHUNK", 5)
    real = harness.enumerate_adjacent_vertices
    calls = []

    def flaky(*a, **k):
        calls.append(1)
        if len(calls) == 13:
            raise RuntimeError("interrupted")
        return real(*a, **k)

    monkeypatch.setattr(harness, "enumerate_adjacent_vertices", flaky)
    with pytest.raises(harness.HarnessError, match="interrupted"):
        harness.cmd_precompute(cfg, 0)
    d = tmp_path / "o/random_lp/seed0"
    saved = sum(len(harness.load_adjacency(f)[0]) for f in (d / "adjacency.parts").glob("part*.npz"))
    assert saved > 0 and saved % 5 == 0
    calls.clear()
    meta = harness.cmd_precompute(cfg, 0)
    assert 0 < len(calls) <= 22 - saved
    assert meta["instances"] == 22
    assert not (d / "adjacency.parts").exists()
    store = harness.load_seed_adjacency(d)
    assert sorted(store) == sorted(i.id for i in harness._load_seed(cfg, 0)[3].split("train")
                                   + harness._load_seed(cfg, 0)[3].split("val"))


def test_adjacency_file_round_trip(tmp_path):
    cfg = harness.load_config(_cfg(tmp_path, benchmark={"kind": "shortest_path", "k": 3}),
                              {"out": str(tmp_path / "o")})
    harness.cmd_generate(cfg, 0)
    harness.cmd_precompute(cfg, 0)
    d = tmp_path / "o/shortest_path/seed0"
    _, _, lp, ds = harness._load_seed(cfg, 0)
    store = harness.load_seed_adjacency(d)
    for inst in ds.split("train")[:5]:
        bfs = harness.make_bfs(lp, harness.Basis.from_basic(inst.basis, lp.n))
        want = harness.enumerate_adjacent_vertices(lp, bfs)
        got = store[inst.id]
        np.testing.assert_allclose(got.adjacent, want.adjacent, atol=1e-12)
        assert (got.sigma, got.bases_visited) == (want.sigma, want.bases_visited)


def test_train_skips_when_done(tmp_path):
    cfg = harness.load_config(_cfg(tmp_path), {"out": str(tmp_path / "o")})
    harness.cmd_generate(cfg, 0)
    harness.cmd_precompute(cfg, 0)
    a = harness.cmd_train(cfg, 0)
    b = harness.cmd_train(cfg, 0)
    assert a == b


def test_oracle_checkpoint_zero_regret(tmp_path):
    bench = {"kind": "random_lp", "n_structural": 12, "m": 5, "deg": 1}
    cfg = harness.load_config(_cfg(tmp_path, benchmark=bench), {"out": str(tmp_path / "o")})
    harness.cmd_generate(cfg, 0)
    fm = harness.build_problem(cfg["benchmark"]).source.fm
    # deg 1: c = (1 + B x / 5 + 3) / 3.5 exactly
    oracle = LinearModel(fm.B / (5 * 3.5), np.full(12, 4 / 3.5))
    row = harness.cmd_evaluate(cfg, 0, model=oracle)
    assert row["regret"] == pytest.approx(0.0, abs=1e-12)


def test_evaluate_refuses_foreign_checkpoint(tmp_path, capsys):
    cfg, out = _cfg(tmp_path), str(tmp_path / "o")
    for cmd in ("generate", "precompute", "train"):
        assert _run(cmd, "--config", cfg, "--out", out) == 0
    p = tmp_path / "o/random_lp/seed0/runs/lava/checkpoint.json"
    ck = json.loads(p.read_text())
    ck["meta"]["data_hash"] = "0" * 64
    p.write_text(json.dumps(ck))
    assert _run("evaluate", "--config", cfg, "--out", out) == 1
    assert "different dataset" in capsys.readouterr().err


def test_knapsack_cycle_integer_eval(tmp_path):
    bench = {"kind": "knapsack", "items": 10, "dims": 2}
    cfg = harness.load_config(_cfg(tmp_path, benchmark=bench), {"out": str(tmp_path / "o")})
    harness.cmd_generate(cfg, 0)
    harness.cmd_precompute(cfg, 0)
    harness.cmd_train(cfg, 0)
    row = harness.cmd_evaluate(cfg, 0)
    assert row["regret"] >= 0
    assert (tmp_path / "o/knapsack/seed0/ilp_opt.json").exists()


def test_knapsack_from_csv(tmp_path):
    cols = ["f1", "f2", "f3", "y"]
    rng = np.random.default_rng(0)
    rows = rng.uniform(0, 1, (40, 4))
    (tmp_path / "items.csv").write_text(
        ",".join(cols) + "\n" + "\n".join(",".join(f"{v:.6f}" for v in r) for r in rows) + "\n")
    bench = {"kind": "knapsack", "items": 8, "dims": 2, "csv": str(tmp_path / "items.csv"),
             "feature_columns": ["f1", "f2", "f3"], "target_column": "y"}
    cfg = harness.load_config(_cfg(tmp_path, benchmark=bench), {"out": str(tmp_path / "o")})
    harness.cmd_generate(cfg, 0)
    harness.cmd_precompute(cfg, 0)
    rep = harness.cmd_train(cfg, 0)
    assert rep["solver_calls"] == 0
    ck = json.loads((tmp_path / "o/knapsack/seed0/runs/lava/checkpoint.json").read_text())
    assert ck["meta"]["item_wise"] is True


# -- results and tables -----------------------------------------------------

def test_mean_se():
    m, se = harness.mean_se([1.0, 2.0, 3.0, 4.0, 5.0])
    assert m == 3.0
    assert se == pytest.approx(np.std([1, 2, 3, 4, 5], ddof=1) / math.sqrt(5))
    assert harness.mean_se([2.0]) == (2.0, 0.0)


def test_append_result_sorted_and_replacing(tmp_path):
    p = tmp_path / "r.csv"
    base = {"regret": 0.1, "precompute_s": 0.0, "train_s": 1.0, "solver_calls": 0}
    for b, m, s in [("knapsack", "mse", 1), ("random_lp", "lava", 0), ("knapsack", "mse", 0)]:
        harness.append_result(p, {"benchmark": b, "method": m, "seed": s, **base})
    harness.append_result(p, {"benchmark": "knapsack", "method": "mse", "seed": 1, **base, "regret": 0.5})
    rows = harness.read_results(p)
    assert [(r["benchmark"], r["seed"]) for r in rows] == [("knapsack", 0), ("knapsack", 1), ("random_lp", 0)]
    assert rows[1]["regret"] == 0.5


def test_reproduce_table3_small(tmp_path, capsys):
    cfg = _cfg(tmp_path, seeds=[0, 1])
    assert _run("reproduce", "--table", "3", "--config", cfg, "--out", str(tmp_path / "o")) == 0
    out = tmp_path / "o"
    with open(out / "table3.csv") as fh:
        agg = list(csv.DictReader(fh))
    assert [a["method"] for a in agg] == ["lava", "lava[eps=0]", "lava[eps=inf]"]
    assert all(a["runs"] == "2" for a in agg)
    rows = harness.read_results(out / "results.csv")
    keys = [(r["benchmark"], r["method"], r["seed"]) for r in rows]
    assert keys == sorted(keys) and len(keys) == 6
    assert len(list((out / "curves").glob("*.csv"))) == 6
    assert not (out / "failures.csv").exists()
    assert "lava[eps=inf]" in capsys.readouterr().out


def test_reproduce_records_failures(tmp_path, monkeypatch):
    cfg = harness.load_config(_cfg(tmp_path), {"out": str(tmp_path / "o")})

    def boom(*a, **k):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr(harness, "cmd_train", boom)
    res = harness.cmd_reproduce(cfg, 3)
    assert len(res["failures"]) == 3
    text = (tmp_path / "o/failures.csv").read_text()
    assert "solver exploded" in text


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "lavadfl", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "reproduce" in r.stdout
