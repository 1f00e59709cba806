"""Benchmark problems and feature -> cost datasets.

Three problem families are provided: random packing LPs, multi-dimensional
knapsack (binary, evaluated on the integer problem) and shortest path on a
directed grid. Costs come either from the polynomial feature mapping or
from an item table loaded with :func:`load_csv_features`.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .lp_core import (Basis, Infeasible, LPError, SolveStats, Solver, StandardFormLP,
                      solve_lp, to_standard_form)

logger = logging.getLogger(__name__)

HOUSING_FEATURES = ("MedInc", "HouseAge", "AveRooms", "AveBedrms",
                    "Population", "AveOccup", "Latitude", "Longitude")
HOUSING_TARGET = "MedHouseVal"


def instance_rng(seed: int, idx: int) -> np.random.Generator:
    """Independent stream per instance so serial and parallel runs agree."""
    return np.random.default_rng([int(seed), int(idx)])


# ---------------------------------------------------------------------------
# problems


def _redundant_rows(A, b) -> list:
    """Rows of ``A z <= b, z >= 0`` implied by the others.

    Row ``i`` is redundant iff ``max a_i z`` over the remaining constraints
    does not exceed ``b_i``.
    """
    out = []
    m = A.shape[0]
    for i in range(m):
        keep = np.arange(m) != i
        lp = to_standard_form(A[keep], b[keep], "max")
        try:
            best = solve_lp(lp, A[i]).objective_value
        except LPError:
            # unbounded without row i: the row is needed
            continue
        if best <= b[i] + 1e-9:
            out.append(i)
    return out


def gen_random_lp(n_structural: int = 150, m: int = 50, seed: int = 0,
                  max_resamples: int = 10, check_redundancy: bool = True,
                  sense: str = "max") -> StandardFormLP:
    """Random packing LP ``A z <= b, z >= 0`` in standard form.

    The default sense is ``max``: with nonnegative costs and ``A >= 0`` a
    minimisation would always pick ``z = 0``.

    ``A ~ U[0,1]``, ``b = A z0`` for an interior ``z0 ~ U[0,1]^n``, then
    ``min(50, m)`` entries of ``b`` are raised by ``U[0, 0.2]``. Redundant
    rows are resampled.
    """
    if n_structural <= m:
        raise ValueError("need n_structural > m")
    rng = np.random.default_rng(seed)
    A = rng.uniform(0.0, 1.0, (m, n_structural))
    z0 = rng.uniform(0.0, 1.0, n_structural)
    b = A @ z0
    bump = rng.choice(m, size=min(50, m), replace=False)
    b[bump] += rng.uniform(0.0, 0.2, bump.size)
    if check_redundancy:
        for attempt in range(max_resamples + 1):
            bad = _redundant_rows(A, b)
            if not bad:
                break
            if attempt == max_resamples:
                raise LPError(f"rows {bad} still redundant after {max_resamples} resamples")
            logger.warning("resampling redundant rows %s", bad)
            for i in bad:
                A[i] = rng.uniform(0.0, 1.0, n_structural)
                b[i] = A[i] @ z0 + rng.uniform(0.0, 0.2)
    names = [f"z{j}" for j in range(n_structural)]
    return to_standard_form(A, b, sense, names=names)


@dataclass(frozen=True)
class Knapsack:
    lp: StandardFormLP
    weights: np.ndarray
    capacity: np.ndarray

    @property
    def binary_indices(self) -> np.ndarray:
        return np.arange(self.weights.shape[1])


def gen_knapsack(items: int = 300, dims: int = 3, seed: int = 0) -> Knapsack:
    """Multi-dimensional knapsack, maximisation, with explicit ``z <= 1`` rows.

    Weights are integers in ``[1, 10]``; each capacity is 10% of the row's
    weight sum.
    """
    if items < 1 or dims < 1:
        raise ValueError("items and dims must be positive")
    rng = np.random.default_rng(seed)
    W = rng.integers(1, 11, size=(dims, items)).astype(float)
    cap = 0.1 * W.sum(axis=1)
    A = np.vstack([W, np.eye(items)])
    b = np.concatenate([cap, np.ones(items)])
    lp = to_standard_form(A, b, "max", names=[f"item{i}" for i in range(items)])
    return Knapsack(lp, W, cap)


def grid_edges(k: int = 5):
    """Edges of the directed ``k x k`` grid (right / up), nodes as (i, j)."""
    E = [((i, j), (i + 1, j)) for i in range(k - 1) for j in range(k)]
    E += [((i, j), (i, j + 1)) for i in range(k) for j in range(k - 1)]
    return E


def gen_shortest_path_grid(k: int = 5) -> StandardFormLP:
    """Unit flow from node (0, 0) to (k-1, k-1); one dependent row is dropped."""
    if k < 2:
        raise ValueError("grid needs k >= 2")
    nodes = [(i, j) for i in range(k) for j in range(k)]
    pos = {v: r for r, v in enumerate(nodes)}
    E = grid_edges(k)
    A = np.zeros((len(nodes), len(E)))
    for e, (u, v) in enumerate(E):
        A[pos[u], e] = 1.0
        A[pos[v], e] = -1.0
    b = np.zeros(len(nodes))
    b[pos[(0, 0)]] = 1.0
    b[pos[(k - 1, k - 1)]] = -1.0
    names = [f"{u}->{v}" for u, v in E]
    return to_standard_form(A_eq=A, b_eq=b, sense="min", names=names)


# ---------------------------------------------------------------------------
# cost sources


@dataclass(frozen=True)
class FeatureMap:
    """Polynomial mapping ``c_j = (1 + ((B x)_j / 5 + 3)^deg) / 3.5^deg * noise_j``."""

    B: np.ndarray
    deg: int = 8
    noise_halfwidth: float = 0.0

    @property
    def n_features(self) -> int:
        return self.B.shape[1]


def make_feature_map(n_costs: int, p: int = 5, seed: int = 0, deg: int = 8,
                     noise_halfwidth: float = 0.0) -> FeatureMap:
    rng = np.random.default_rng(seed)
    B = rng.binomial(1, 0.5, size=(n_costs, p)).astype(float)
    return FeatureMap(B, deg, noise_halfwidth)


def polynomial_mapping(fm: FeatureMap, x, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != fm.n_features:
        raise ValueError(f"x has {x.shape[-1]} features, mapping expects {fm.n_features}")
    c = (1.0 + (x @ fm.B.T / 5.0 + 3.0) ** fm.deg) / 3.5 ** fm.deg
    if fm.noise_halfwidth > 0:
        if rng is None:
            raise ValueError("noisy mapping needs an rng")
        c = c * rng.uniform(1.0 - fm.noise_halfwidth, 1.0 + fm.noise_halfwidth, size=c.shape)
    return c


@dataclass
class FeatureTable:
    X: np.ndarray
    y: np.ndarray
    columns: tuple
    dropped_rows: int = 0


def load_csv_features(path, feature_columns: Sequence[str] = HOUSING_FEATURES,
                      target_column: str = HOUSING_TARGET) -> FeatureTable:
    """Read numeric feature and target columns from a headed CSV.

    Rows with an empty cell in a used column are dropped and counted.

    Raises:
        KeyError: a requested column is missing.
        ValueError: a cell is not numeric (message carries the line number).
    """
    feature_columns = tuple(feature_columns)
    X, y = [], []
    dropped = 0
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in feature_columns + (target_column,):
            if col not in header:
                raise KeyError(f"column {col!r} not in {path}")
        for lineno, row in enumerate(reader, start=2):
            cells = [row[c] for c in feature_columns + (target_column,)]
            if any(v is None or v.strip() == "" for v in cells):
                dropped += 1
                continue
            try:
                vals = [float(v) for v in cells]
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric value in {cells}") from None
            X.append(vals[:-1])
            y.append(vals[-1])
    return FeatureTable(np.array(X).reshape(-1, len(feature_columns)), np.array(y),
                        feature_columns, dropped)


def standardize(X_train, *others):
    """Scale with train-split mean and standard deviation."""
    mu = X_train.mean(axis=0)
    sd = X_train.std(axis=0)
    sd[sd == 0] = 1.0
    return tuple((X - mu) / sd for X in (X_train,) + others)


class PolynomialSource:
    """Features ``x ~ N(0, I_p)``; costs from a :class:`FeatureMap`."""

    kind = "poly"

    def __init__(self, fm: FeatureMap):
        self.fm = fm

    def sample(self, rng):
        x = rng.standard_normal(self.fm.n_features)
        return x, polynomial_mapping(self.fm, x, rng)


class ItemTableSource:
    """Each instance draws ``n_items`` rows of a feature table; item costs
    are the table targets and the features form an ``n_items x p`` matrix."""

    kind = "items"

    def __init__(self, table: FeatureTable, n_items: int):
        if table.X.shape[0] < n_items:
            raise ValueError("table has fewer rows than items per instance")
        self.table = table
        self.n_items = n_items

    def sample(self, rng):
        rows = rng.choice(self.table.X.shape[0], size=self.n_items, replace=False)
        return self.table.X[rows].copy(), self.table.y[rows].copy()


# ---------------------------------------------------------------------------
# datasets


@dataclass
class DataInstance:
    id: int
    x: np.ndarray
    c: Optional[np.ndarray]
    z_star: np.ndarray
    basis: tuple

    def to_dict(self) -> dict:
        return {"id": self.id, "x": self.x.tolist(),
                "c": None if self.c is None else self.c.tolist(),
                "z_star": self.z_star.tolist(), "basis": list(self.basis)}

    @classmethod
    def from_dict(cls, d) -> "DataInstance":
        return cls(int(d["id"]), np.asarray(d["x"], dtype=float),
                   None if d.get("c") is None else np.asarray(d["c"], dtype=float),
                   np.asarray(d["z_star"], dtype=float), tuple(int(i) for i in d["basis"]))


@dataclass
class Dataset:
    instances: list
    splits: dict
    binary_indices: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def split(self, name: str) -> list:
        return [self.instances[i] for i in self.splits[name]]

    def save(self, path) -> None:
        path = Path(path)
        with open(path, "w") as fh:
            for inst in self.instances:
                fh.write(json.dumps(inst.to_dict()) + "\n")
        side = {"splits": {k: list(map(int, v)) for k, v in self.splits.items()},
                "binary_indices": None if self.binary_indices is None else self.binary_indices.tolist(),
                "meta": self.meta}
        path.with_suffix(".meta.json").write_text(json.dumps(side))

    @classmethod
    def load(cls, path) -> "Dataset":
        path = Path(path)
        with open(path) as fh:
            instances = [DataInstance.from_dict(json.loads(line)) for line in fh if line.strip()]
        side = json.loads(path.with_suffix(".meta.json").read_text())
        bi = side.get("binary_indices")
        return cls(instances, {k: list(v) for k, v in side["splits"].items()},
                   None if bi is None else np.asarray(bi, dtype=int), side.get("meta", {}))


def split_indices(total: int, sizes: Sequence[int], seed: int) -> dict:
    if sum(sizes) != total:
        raise ValueError("split sizes must sum to the total")
    perm = np.random.default_rng([int(seed), 2**31 - 1]).permutation(total)
    a, b = sizes[0], sizes[0] + sizes[1]
    return {"train": sorted(perm[:a].tolist()), "val": sorted(perm[a:b].tolist()),
            "test": sorted(perm[b:].tolist())}


def gen_dataset(lp: StandardFormLP, source, sizes=(800, 200, 400), seed: int = 0, *,
                binary_indices=None, stats: Optional[SolveStats] = None,
                keep_costs: bool = True, backend: str = "simplex") -> Dataset:
    """Sample features, costs and optimal vertices.

    For binary problems the stored vertex is the optimum of the LP
    relaxation, which is what the adjacency precompute works on.
    """
    total = int(sum(sizes))
    solver = Solver(lp, stats=stats, backend=backend)
    instances = []
    for i in range(total):
        rng = instance_rng(seed, i)
        x, c = source.sample(rng)
        try:
            bfs = solver.solve(c)
        except LPError as exc:
            raise LPError(f"instance {i}: {exc}") from exc
        instances.append(DataInstance(i, np.asarray(x, dtype=float),
                                      np.asarray(c, dtype=float) if keep_costs else None,
                                      bfs.z, tuple(bfs.basis.basic)))
    meta = {"seed": int(seed), "sizes": list(map(int, sizes)), "source": source.kind}
    return Dataset(instances, split_indices(total, sizes, seed),
                   None if binary_indices is None else np.asarray(binary_indices, dtype=int), meta)
