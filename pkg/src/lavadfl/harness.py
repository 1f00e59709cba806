"""Experiment pipeline: generate, precompute, train, evaluate, reproduce.

Layout under the output root::

    <out>/<benchmark>/seed<k>/lp.json
                             dataset.jsonl, dataset.meta.json
                             manifest.json
                             adjacency.npz, adjacency.meta.json
                             ilp_opt.json                (binary problems)
                             runs/<method>/checkpoint.json, report.json, curve.csv
    <out>/results.csv
    <out>/table<N>.csv, table<N>.md, curves/*.csv       (reproduce)

Every artifact carries the dataset hash so stale pairs are refused.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import math
import os
import shutil
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .adjacency import (AdjacencyStore, PackedAdjacency, enumerate_adjacent_vertices,
                        exploration_cap, load_adjacency, save_adjacency, warm_kernel)
from .benchgen import (HOUSING_FEATURES, HOUSING_TARGET, Dataset, ItemTableSource,
                       PolynomialSource, gen_dataset, gen_knapsack, gen_random_lp,
                       gen_shortest_path_grid, load_csv_features, make_feature_map)
from .learner import LinearModel, TrainConfig, evaluate, train
from .lp_core import Basis, Solver, load_lp, make_bfs, save_lp

logger = logging.getLogger(__name__)

ENV_OUT = "LAVADFL_OUT"
RESULTS_HEADER = ["benchmark", "method", "seed", "regret", "precompute_s", "train_s", "solver_calls"]


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


class HarnessError(RuntimeError):
    """Pipeline failure (CLI exit code 1)."""


# ---------------------------------------------------------------------------
# configuration

BENCH_DEFAULTS = {
    "random_lp": {"n_structural": 150, "m": 50},
    "knapsack": {"items": 300, "dims": 3, "csv": None,
                 "feature_columns": list(HOUSING_FEATURES), "target_column": HOUSING_TARGET},
    "shortest_path": {"k": 5},
}
MAPPING_DEFAULTS = {"instance_seed": 0, "deg": 8, "p": 5, "noise_halfwidth": 0.0}
TRAIN_KEYS = ("lr", "batch_size", "val_check_every", "patience_checks",
              "improvement_threshold", "time_cap_seconds", "max_epochs")
DEFAULTS = {
    "benchmark": {"kind": "random_lp"},
    "sizes": [800, 200, 400],
    "seeds": [0, 1, 2, 3, 4],
    "method": {"loss": "lava", "epsilon": 0.1},
    "train": {k: getattr(TrainConfig(), k) for k in TRAIN_KEYS},
    "solver": {"ilp_backend": "highs"},
    "jobs": 1,
    "out": None,
    "benchmarks": None,
}


def _reject_unknown(d: dict, allowed, where: str):
    bad = sorted(set(d) - set(allowed))
    if bad:
        raise ConfigError(f"unknown key {bad[0]!r} in {where}")


def _bench_config(b) -> dict:
    if not isinstance(b, dict):
        raise ConfigError("benchmark must be an object")
    kind = b.get("kind")
    if kind not in BENCH_DEFAULTS:
        raise ConfigError(f"benchmark.kind must be one of {sorted(BENCH_DEFAULTS)}, got {kind!r}")
    full = {"kind": kind, **BENCH_DEFAULTS[kind], **MAPPING_DEFAULTS}
    _reject_unknown(b, list(full) + ["sizes", "methods"], f"benchmark ({kind})")
    full.update(b)
    for key in ("n_structural", "m", "items", "dims", "k", "deg", "p"):
        if key in full and (not isinstance(full[key], int) or full[key] < 1):
            raise ConfigError(f"benchmark.{key} must be a positive integer")
    if kind == "random_lp" and full["n_structural"] <= full["m"]:
        raise ConfigError("benchmark.n_structural must exceed benchmark.m")
    if kind == "shortest_path" and full["k"] < 2:
        raise ConfigError("benchmark.k must be >= 2")
    if "sizes" in full:
        full["sizes"] = _sizes(full["sizes"])
    if "methods" in full:
        full["methods"] = [_method(m) for m in full["methods"]]
    return full


def _sizes(s):
    if not (isinstance(s, list) and len(s) == 3 and all(isinstance(v, int) and v >= 1 for v in s)):
        raise ConfigError("sizes must be three positive integers [train, val, test]")
    return list(s)


def _method(m) -> dict:
    if not isinstance(m, dict):
        raise ConfigError("method must be an object")
    _reject_unknown(m, ("loss", "epsilon"), "method")
    out = {"loss": m.get("loss", "lava"), "epsilon": m.get("epsilon", 0.1)}
    if out["loss"] not in ("lava", "mse", "spo+"):
        raise ConfigError(f"method.loss must be lava, mse or spo+, got {out['loss']!r}")
    eps = out["epsilon"]
    if isinstance(eps, str) and eps.lower() in ("inf", "infinity"):
        eps = math.inf
    if not isinstance(eps, (int, float)) or eps < 0:
        raise ConfigError("method.epsilon must be >= 0 or \"inf\"")
    out["epsilon"] = float(eps)
    return out


def validate_config(raw: dict) -> dict:
    """Fill defaults and reject unknown or ill-typed keys."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    _reject_unknown(raw, DEFAULTS, "config")
    cfg = copy.deepcopy(DEFAULTS)
    cfg.update(copy.deepcopy(raw))
    cfg["benchmark"] = _bench_config(cfg["benchmark"])
    cfg["sizes"] = _sizes(cfg["sizes"])
    seeds = cfg["seeds"]
    if not (isinstance(seeds, list) and seeds and all(isinstance(s, int) and s >= 0 for s in seeds)):
        raise ConfigError("seeds must be a nonempty list of nonnegative integers")
    cfg["method"] = _method(cfg["method"])
    t = cfg["train"]
    if not isinstance(t, dict):
        raise ConfigError("train must be an object")
    _reject_unknown(t, TRAIN_KEYS, "train")
    cfg["train"] = {**DEFAULTS["train"], **t}
    try:
        TrainConfig(**cfg["train"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from None
    _reject_unknown(cfg["solver"], ("ilp_backend",), "solver")
    cfg["solver"] = {**DEFAULTS["solver"], **cfg["solver"]}
    if cfg["solver"]["ilp_backend"] not in ("highs", "bnb"):
        raise ConfigError("solver.ilp_backend must be highs or bnb")
    if not isinstance(cfg["jobs"], int) or cfg["jobs"] < 1:
        raise ConfigError("jobs must be a positive integer")
    if cfg["benchmarks"] is not None:
        if not isinstance(cfg["benchmarks"], list):
            raise ConfigError("benchmarks must be a list")
        cfg["benchmarks"] = [_bench_config(b) for b in cfg["benchmarks"]]
    return cfg


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> dict:
    """Read a JSON config; ``overrides`` (from CLI flags) win over the file."""
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    raw = dict(raw)
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    cfg = validate_config(raw)
    cfg["out"] = str(cfg["out"] or os.environ.get(ENV_OUT) or "runs")
    return cfg


def canonical_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def method_tag(method: dict) -> str:
    if method["loss"] != "lava":
        return method["loss"]
    eps = method["epsilon"]
    return "lava" if eps == 0.1 else f"lava[eps={'inf' if math.isinf(eps) else f'{eps:g}'}]"


# ---------------------------------------------------------------------------
# file helpers


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    atomic_write(path, json.dumps(obj, indent=None, separators=(",", ":")))


def read_json(path):
    return json.loads(Path(path).read_text())


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# problems and data


@dataclass
class Problem:
    lp: object
    binary_indices: Optional[np.ndarray]
    source: object

    @property
    def integer(self) -> bool:
        return self.binary_indices is not None


def build_problem(bench: dict) -> Problem:
    kind = bench["kind"]
    iseed = bench["instance_seed"]
    binary = None
    if kind == "random_lp":
        lp = gen_random_lp(bench["n_structural"], bench["m"], seed=iseed)
    elif kind == "knapsack":
        ks = gen_knapsack(bench["items"], bench["dims"], seed=iseed)
        lp, binary = ks.lp, ks.binary_indices
    else:
        lp = gen_shortest_path_grid(bench["k"])
    if kind == "knapsack" and bench["csv"]:
        table = load_csv_features(bench["csv"], bench["feature_columns"], bench["target_column"])
        source = ItemTableSource(table, bench["items"])
    else:
        fm = make_feature_map(lp.n_structural, bench["p"], seed=iseed, deg=bench["deg"],
                              noise_halfwidth=bench["noise_halfwidth"])
        source = PolynomialSource(fm)
    return Problem(lp, binary, source)


def seed_dir(cfg: dict, seed: int, bench: Optional[dict] = None) -> Path:
    bench = bench or cfg["benchmark"]
    return Path(cfg["out"]) / bench["kind"] / f"seed{seed}"


def data_hash(bench: dict, sizes, seed: int) -> str:
    b = {k: v for k, v in bench.items() if k not in ("methods", "sizes")}
    return canonical_hash({"benchmark": b, "sizes": list(sizes), "seed": seed, "version": __version__})


def _sizes_for(cfg, bench):
    return bench.get("sizes") or cfg["sizes"]


def _standardize_items(ds: Dataset) -> None:
    """Item-table features: z-score with statistics of the training rows."""
    train = np.concatenate([inst.x for inst in ds.split("train")])
    mu, sd = train.mean(axis=0), train.std(axis=0)
    sd[sd == 0] = 1.0
    for inst in ds.instances:
        inst.x = (inst.x - mu) / sd


def cmd_generate(cfg: dict, seed: int, bench: Optional[dict] = None) -> dict:
    """Write LP, dataset and manifest; a no-op if the manifest hash matches."""
    bench = bench or cfg["benchmark"]
    sizes = _sizes_for(cfg, bench)
    d = seed_dir(cfg, seed, bench)
    h = data_hash(bench, sizes, seed)
    man_path = d / "manifest.json"
    if man_path.exists():
        man = read_json(man_path)
        if man.get("data_hash") == h:
            return man
        logger.warning("%s: config changed, regenerating", d)
    prob = build_problem(bench)
    t0 = time.perf_counter()
    backend = "highs" if prob.lp.m > 128 else "simplex"
    ds = gen_dataset(prob.lp, prob.source, sizes, seed, binary_indices=prob.binary_indices,
                     backend=backend)
    if prob.source.kind == "items":
        _standardize_items(ds)
    gen_s = time.perf_counter() - t0
    ds.meta.update({"benchmark": bench["kind"], "data_hash": h})
    d.mkdir(parents=True, exist_ok=True)
    save_lp(prob.lp, d / "lp.json")
    ds.save(d / "dataset.jsonl")
    for stale in ("adjacency.npz", "adjacency.meta.json", "ilp_opt.json"):
        (d / stale).unlink(missing_ok=True)
    shutil.rmtree(d / "adjacency.parts", ignore_errors=True)
    files = {name: file_sha256(d / name) for name in ("lp.json", "dataset.jsonl", "dataset.meta.json")}
    man = {"data_hash": h, "seed": seed, "benchmark": {k: v for k, v in bench.items() if k != "methods"},
           "sizes": list(sizes), "files": files, "generate_seconds": gen_s, "version": __version__}
    write_json(man_path, man)
    return man


def _load_seed(cfg, seed, bench=None):
    bench = bench or cfg["benchmark"]
    d = seed_dir(cfg, seed, bench)
    if not (d / "manifest.json").exists():
        raise HarnessError(f"no dataset in {d}; run `generate` first")
    man = read_json(d / "manifest.json")
    lp = load_lp(d / "lp.json")
    ds = Dataset.load(d / "dataset.jsonl")
    if ds.meta.get("data_hash") != man["data_hash"]:
        raise HarnessError(f"{d}: dataset does not match its manifest")
    return d, man, lp, ds


# ---------------------------------------------------------------------------
# precompute


PRECOMPUTE_CHUNK = 50


def _read_parts(parts: Path, data_hash: str):
    done, seconds = {}, {}
    for f in sorted(parts.glob("part*.npz")):
        store, extra = load_adjacency(f)
        if str(extra.get("data_hash")) != data_hash:
            continue
        for i, sec in zip(sorted(store), extra["seconds"]):
            done[i] = store.packed(i)
            seconds[i] = float(sec)
    return done, seconds


def cmd_precompute(cfg: dict, seed: int, bench: Optional[dict] = None) -> dict:
    """Adjacent vertices of every train and validation optimum.

    Resumable: results are flushed in chunks under ``adjacency.parts/`` and
    finished instances are skipped on a rerun. Instances that share an
    optimal vertex share the result, and only the time actually spent
    enumerating is counted.
    """
    d, man, lp, ds = _load_seed(cfg, seed, bench)
    final = d / "adjacency.npz"
    meta_path = d / "adjacency.meta.json"
    if final.exists() and meta_path.exists() and read_json(meta_path).get("data_hash") == man["data_hash"]:
        return read_json(meta_path)
    parts = d / "adjacency.parts"
    parts.mkdir(exist_ok=True)
    done, seconds = _read_parts(parts, man["data_hash"])
    todo = [inst for inst in ds.split("train") + ds.split("val") if inst.id not in done]
    memo = {}
    lock = threading.Lock()
    warm_kernel()

    def work(inst):
        t0 = time.perf_counter()
        key = np.packbits(inst.z_star > 0).tobytes()
        with lock:
            hit = memo.get(key)
        if hit is None:
            bfs = make_bfs(lp, Basis.from_basic(inst.basis, lp.n))
            try:
                adj = enumerate_adjacent_vertices(lp, bfs)
            except Exception as exc:
                raise HarnessError(f"adjacency failed for instance {inst.id}: {exc}") from exc
            elapsed = time.perf_counter() - t0
            hit = PackedAdjacency.pack(adj)
            with lock:
                memo[key] = hit
        else:
            elapsed = time.perf_counter() - t0
        return inst.id, hit, elapsed

    pool = ThreadPoolExecutor(cfg["jobs"]) if cfg["jobs"] > 1 else None
    try:
        for c0 in range(0, len(todo), PRECOMPUTE_CHUNK):
            chunk = todo[c0:c0 + PRECOMPUTE_CHUNK]
            res = list(pool.map(work, chunk)) if pool else [work(inst) for inst in chunk]
            for i, rec, sec in res:
                done[i] = rec
                seconds[i] = sec
            ids = sorted(r[0] for r in res)
            save_adjacency(parts / f"part{min(ids):07d}.npz", {i: done[i] for i in ids},
                           seconds=[seconds[i] for i in ids], data_hash=man["data_hash"])
    finally:
        if pool:
            pool.shutdown()

    ids = sorted(done)
    save_adjacency(final, done, data_hash=man["data_hash"])
    visited = [done[i].bases_visited for i in ids]
    sigmas = [done[i].sigma for i in ids]
    caps = [exploration_cap(lp.n, lp.m, s) for s in sigmas]
    meta = {"data_hash": man["data_hash"], "precompute_seconds": float(sum(seconds.values())),
            "instances": len(ids),
            "distinct_vertices": len({np.packbits(done[i].vertex > 0).tobytes() for i in ids}),
            "bases_visited": visited, "sigma": sigmas, "caps": caps,
            "neighbors": [done[i].k for i in ids]}
    write_json(meta_path, meta)
    shutil.rmtree(parts)
    return meta


def load_seed_adjacency(d: Path) -> AdjacencyStore:
    return load_adjacency(d / "adjacency.npz")[0]


# ---------------------------------------------------------------------------
# train / evaluate


def _train_config(cfg, method, seed) -> TrainConfig:
    return TrainConfig(loss=method["loss"], epsilon=method["epsilon"], seed=seed, **cfg["train"])


def run_dir(d: Path, method: dict) -> Path:
    return d / "runs" / method_tag(method)


def cmd_train(cfg: dict, seed: int, bench: Optional[dict] = None, method: Optional[dict] = None) -> dict:
    method = method or cfg["method"]
    d, man, lp, ds = _load_seed(cfg, seed, bench)
    tcfg = _train_config(cfg, method, seed)
    rd = run_dir(d, method)
    run_hash = canonical_hash({"data": man["data_hash"], "train": tcfg.to_dict()})
    if (rd / "report.json").exists():
        rep = read_json(rd / "report.json")
        if rep.get("run_hash") == run_hash:
            return rep
    adjacency = None
    pre_s = 0.0
    if method["loss"] == "lava":
        meta_path = d / "adjacency.meta.json"
        if not meta_path.exists() or read_json(meta_path).get("data_hash") != man["data_hash"]:
            raise HarnessError(f"no adjacent vertices for {d}; run `precompute` first")
        adjacency = load_seed_adjacency(d)
        pre_s = read_json(meta_path)["precompute_seconds"]
    item_wise = ds.instances[0].x.ndim == 2
    rep = train(ds, lp, adjacency, tcfg, solver=Solver(lp), precompute_seconds=pre_s, item_wise=item_wise)
    meta = {"data_hash": man["data_hash"], "run_hash": run_hash, "seed": seed,
            "method": method_tag(method), "train": tcfg.to_dict()}
    write_json(rd / "checkpoint.json", rep.model.to_dict(meta))
    out = {**rep.to_dict(), **meta}
    write_json(rd / "report.json", out)
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["epoch", "train_seconds", "val_regret", "train_loss"])
    for row in rep.curve:
        w.writerow([row["epoch"], f"{row['train_seconds']:.6f}", f"{row['val_regret']:.8f}",
                    f"{row['train_loss']:.8f}"])
    atomic_write(rd / "curve.csv", buf.getvalue())
    return out


def _ilp_truth(d: Path, lp, test, solver) -> list:
    path = d / "ilp_opt.json"
    cache = read_json(path) if path.exists() else {}
    changed = False
    out = []
    for inst in test:
        key = str(inst.id)
        if key not in cache:
            cache[key] = solver.solve_ilp(inst.c).z.tolist()
            changed = True
        out.append(np.asarray(cache[key]))
    if changed:
        write_json(path, cache)
    return out


def cmd_evaluate(cfg: dict, seed: int, bench: Optional[dict] = None, method: Optional[dict] = None,
                 model: Optional[LinearModel] = None) -> dict:
    """Test-set normalized regret; appends a row to ``<out>/results.csv``.

    ``model`` bypasses the stored checkpoint (used for oracle checks).
    """
    bench = bench or cfg["benchmark"]
    method = method or cfg["method"]
    d, man, lp, ds = _load_seed(cfg, seed, bench)
    rd = run_dir(d, method)
    rep = {"solver_calls": 0, "time_to_best": 0.0, "precompute_seconds": 0.0}
    if model is None:
        if not (rd / "checkpoint.json").exists():
            raise HarnessError(f"no checkpoint in {rd}; run `train` first")
        ck = read_json(rd / "checkpoint.json")
        if ck["meta"].get("data_hash") != man["data_hash"]:
            raise HarnessError(f"checkpoint in {rd} was trained on a different dataset")
        model = LinearModel.from_dict(ck)
        rep = read_json(rd / "report.json")
    test = ds.split("test")
    solver = Solver(lp, binary_indices=ds.binary_indices, ilp_backend=cfg["solver"]["ilp_backend"])
    integer = ds.binary_indices is not None
    Z_true = _ilp_truth(d, lp, test, solver) if integer else None
    res = evaluate(model, test, lp, solver, integer=integer, Z_true=Z_true)
    row = {"benchmark": bench["kind"], "method": method_tag(method), "seed": seed,
           "regret": res.normalized_regret,
           "precompute_s": rep["precompute_seconds"] if method["loss"] == "lava" else 0.0,
           "train_s": rep["time_to_best"], "solver_calls": rep["solver_calls"]}
    append_result(Path(cfg["out"]) / "results.csv", row)
    return row


def read_results(path) -> list:
    path = Path(path)
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["seed"] = int(r["seed"])
        for k in ("regret", "precompute_s", "train_s"):
            r[k] = float(r[k])
        r["solver_calls"] = int(r["solver_calls"])
    return rows


_results_lock = threading.Lock()


def append_result(path, row: dict) -> None:
    """Insert or replace the (benchmark, method, seed) row; output stays sorted."""
    with _results_lock:
        rows = [r for r in read_results(path)
                if (r["benchmark"], r["method"], r["seed"]) != (row["benchmark"], row["method"], row["seed"])]
        rows.append(row)
        rows.sort(key=lambda r: (r["benchmark"], r["method"], r["seed"]))
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=RESULTS_HEADER, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in RESULTS_HEADER})
        atomic_write(path, buf.getvalue())


# ---------------------------------------------------------------------------
# reproduce

TABLE_METHODS = {
    1: [{"loss": "mse", "epsilon": 0.1}, {"loss": "spo+", "epsilon": 0.1}, {"loss": "lava", "epsilon": 0.1}],
    3: [{"loss": "lava", "epsilon": 0.0}, {"loss": "lava", "epsilon": 0.1}, {"loss": "lava", "epsilon": math.inf}],
}
TABLE_METHODS[2] = TABLE_METHODS[1]
TABLE_BENCHMARKS = {1: ["random_lp", "knapsack", "shortest_path"], 2: ["random_lp", "knapsack", "shortest_path"],
                    3: ["random_lp"]}


def mean_se(values):
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def aggregate(rows: list) -> list:
    """Mean and standard error over seeds per (benchmark, method)."""
    groups = {}
    for r in rows:
        groups.setdefault((r["benchmark"], r["method"]), []).append(r)
    out = []
    for (b, m), rs in sorted(groups.items()):
        reg = mean_se([r["regret"] for r in rs])
        tot = mean_se([r["precompute_s"] + r["train_s"] for r in rs])
        out.append({"benchmark": b, "method": m, "runs": len(rs),
                    "regret_mean": reg[0], "regret_se": reg[1],
                    "precompute_s_mean": float(np.mean([r["precompute_s"] for r in rs])),
                    "train_s_mean": float(np.mean([r["train_s"] for r in rs])),
                    "total_s_mean": tot[0], "total_s_se": tot[1]})
    return out


def _table_markdown(table: int, agg: list) -> str:
    if table == 2:
        head = "| benchmark | method | runs | time (s) | precompute (s) |\n|---|---|---|---|---|\n"
        body = "".join(f"| {a['benchmark']} | {a['method']} | {a['runs']} | "
                       f"{a['total_s_mean']:.2f} ± {a['total_s_se']:.2f} | {a['precompute_s_mean']:.2f} |\n"
                       for a in agg)
    else:
        head = "| benchmark | method | runs | normalized regret |\n|---|---|---|---|\n"
        body = "".join(f"| {a['benchmark']} | {a['method']} | {a['runs']} | "
                       f"{a['regret_mean']:.4f} ± {a['regret_se']:.4f} |\n" for a in agg)
    return head + body


def cmd_reproduce(cfg: dict, table: int) -> dict:
    """Run every (benchmark, method, seed) cell of a table and aggregate.

    Cells that fail are logged to ``failures.csv`` and the run carries on.
    Finished cells are reused thanks to the hash checks in each stage.
    """
    if table not in TABLE_METHODS:
        raise ConfigError("table must be 1, 2 or 3")
    if cfg["benchmarks"] is not None:
        benches = [b for b in cfg["benchmarks"] if b["kind"] in TABLE_BENCHMARKS[table]]
    else:
        benches = [_bench_config({"kind": k}) for k in TABLE_BENCHMARKS[table]]
    out = Path(cfg["out"])
    rows, failures = [], []
    for bench in benches:
        methods = bench.get("methods") or TABLE_METHODS[table]
        for seed in cfg["seeds"]:
            try:
                cmd_generate(cfg, seed, bench)
            except Exception as exc:  # noqa: BLE001 - recorded per cell
                failures += [(bench["kind"], method_tag(m), seed, f"generate: {exc}") for m in methods]
                continue
            for method in methods:
                tag = method_tag(method)
                try:
                    if method["loss"] == "lava":
                        cmd_precompute(cfg, seed, bench)
                    rep = cmd_train(cfg, seed, bench, method)
                    rows.append(cmd_evaluate(cfg, seed, bench, method))
                    curve = seed_dir(cfg, seed, bench) / "runs" / tag / "curve.csv"
                    atomic_write(out / "curves" / f"{bench['kind']}_{tag}_seed{seed}.csv", curve.read_text())
                    logger.info("%s %s seed %d: regret %.4f (%s)", bench["kind"], tag, seed,
                                rows[-1]["regret"], rep["stop_reason"])
                except Exception as exc:  # noqa: BLE001
                    logger.error("%s %s seed %d failed: %s", bench["kind"], tag, seed, exc)
                    failures.append((bench["kind"], tag, seed, str(exc)))
    rows.sort(key=lambda r: (r["benchmark"], r["method"], r["seed"]))
    agg = aggregate(rows)
    buf = io.StringIO()
    if agg:
        w = csv.DictWriter(buf, fieldnames=list(agg[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(agg)
    atomic_write(out / f"table{table}.csv", buf.getvalue())
    atomic_write(out / f"table{table}.md", _table_markdown(table, agg))
    if failures:
        fb = io.StringIO()
        fw = csv.writer(fb, lineterminator="\n")
        fw.writerow(["benchmark", "method", "seed", "error"])
        fw.writerows(failures)
        atomic_write(out / "failures.csv", fb.getvalue())
    else:
        (out / "failures.csv").unlink(missing_ok=True)
    return {"rows": rows, "aggregate": agg, "failures": failures}
