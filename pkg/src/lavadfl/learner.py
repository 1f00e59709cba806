"""Linear cost predictor, Adam, and the early-stopped training loop."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .losses import (LavaDeltas, LossValueGrad, check_epsilon, lava_batch, normalized_regret,
                     objective, ratio_of_sums, spo_plus_batch, warm_lava_kernel)
from .lp_core import Basis, LPError, Solver, StandardFormLP

logger = logging.getLogger(__name__)

LOSSES = ("lava", "mse", "spo+")


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# model


@dataclass
class LinearModel:
    """Affine map ``c_hat = W x + bias``.

    With ``item_wise=True`` the feature input is an ``n x p`` matrix (one
    row per item) and a single weight row is shared by all items, so
    ``W`` is ``1 x p`` and ``bias`` has length 1.
    """

    W: np.ndarray
    bias: np.ndarray
    item_wise: bool = False

    def __post_init__(self):
        self.W = np.array(self.W, dtype=float, ndmin=2)
        self.bias = np.array(self.bias, dtype=float, ndmin=1)
        if self.W.shape[0] != self.bias.shape[0]:
            raise ValueError("W rows and bias length differ")

    @property
    def n_features(self) -> int:
        return self.W.shape[1]

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.item_wise:
            if x.ndim != 2 or x.shape[1] != self.n_features:
                raise ValueError(f"expected (items, {self.n_features}) features, got {x.shape}")
            return x @ self.W[0] + self.bias[0]
        if x.shape != (self.n_features,):
            raise ValueError(f"expected {self.n_features} features, got shape {x.shape}")
        return self.W @ x + self.bias

    def predict_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.item_wise:
            return X @ self.W[0] + self.bias[0]
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected (batch, {self.n_features}) features, got {X.shape}")
        return X @ self.W.T + self.bias

    def param_grads(self, X, G) -> dict:
        """Chain rule from cost gradients ``G`` (batch x n) to parameters."""
        X = np.asarray(X, dtype=float)
        if self.item_wise:
            return {"W": np.einsum("bj,bjp->p", G, X)[None, :], "bias": np.array([G.sum()])}
        return {"W": G.T @ X, "bias": G.sum(axis=0)}

    @property
    def params(self) -> dict:
        return {"W": self.W, "bias": self.bias}

    def copy(self) -> "LinearModel":
        return LinearModel(self.W.copy(), self.bias.copy(), self.item_wise)

    def to_dict(self, meta: Optional[dict] = None) -> dict:
        return {"W": self.W.tolist(), "bias": self.bias.tolist(),
                "meta": {"item_wise": self.item_wise, **(meta or {})}}

    @classmethod
    def from_dict(cls, d) -> "LinearModel":
        return cls(np.asarray(d["W"], dtype=float), np.asarray(d["bias"], dtype=float),
                   bool(d.get("meta", {}).get("item_wise", False)))


def init_model(n_cost: int, p: int, rng: np.random.Generator, item_wise: bool = False) -> LinearModel:
    """Uniform ``[-1/sqrt(p), 1/sqrt(p)]`` init, like a default linear layer."""
    r = 1.0 / math.sqrt(p)
    rows = 1 if item_wise else n_cost
    W = rng.uniform(-r, r, size=(rows, p))
    bias = rng.uniform(-r, r, size=rows)
    return LinearModel(W, bias, item_wise)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, info: str = "") -> dict:
    """One bias-corrected Adam update; ``params`` arrays are updated in place."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {k!r} at step {state.step + 1} {info}".rstrip())
        if g.shape != params[k].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {params[k].shape} for {k!r}")
    state.step += 1
    t = state.step
    for k, g in grads.items():
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(g)
            state.v[k] = np.zeros_like(g)
        v = state.v[k]
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        mhat = m / (1 - state.beta1 ** t)
        vhat = v / (1 - state.beta2 ** t)
        params[k] -= state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return params


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    loss: str = "lava"
    epsilon: float = 0.1
    lr: float = 0.01
    batch_size: int = 32
    seed: int = 0
    val_check_every: int = 1
    patience_checks: int = 3
    improvement_threshold: float = 0.01
    time_cap_seconds: float = 600.0
    max_epochs: int = 1000

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        self.epsilon = check_epsilon(self.epsilon)
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.batch_size < 1 or self.val_check_every < 1 or self.max_epochs < 1:
            raise ValueError("batch_size, val_check_every and max_epochs must be >= 1")
        if self.patience_checks < 1:
            raise ValueError("patience_checks must be >= 1")
        if not self.time_cap_seconds > 0:
            raise ValueError("time_cap_seconds must be > 0")
        if not 0 <= self.improvement_threshold < 1:
            raise ValueError("improvement_threshold must be in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(d["epsilon"]):
            d["epsilon"] = "inf"
        return d


@dataclass
class TrainReport:
    model: LinearModel
    curve: list
    best_index: int
    precompute_seconds: float
    train_seconds: float
    time_to_best: float
    solver_calls: int
    val_solver_calls: int
    epochs: int
    stop_reason: str

    @property
    def best_val_regret(self) -> float:
        return self.curve[self.best_index]["val_regret"]

    def to_dict(self) -> dict:
        return {"curve": self.curve, "best_index": self.best_index,
                "precompute_seconds": self.precompute_seconds,
                "train_seconds": self.train_seconds, "time_to_best": self.time_to_best,
                "solver_calls": self.solver_calls, "val_solver_calls": self.val_solver_calls,
                "epochs": self.epochs, "stop_reason": self.stop_reason}


def _stack_x(instances) -> np.ndarray:
    return np.stack([np.asarray(inst.x, dtype=float) for inst in instances])


class _Validator:
    """Validation regret with per-instance warm starts.

    The model moves little between checks, so the previous basis of each
    instance is usually a few pivots from the new optimum.
    """

    def __init__(self, instances, lp: StandardFormLP, solver: Solver):
        if not instances:
            raise TrainingError("empty validation split")
        self.X = _stack_x(instances)
        self.C = np.stack([inst.c for inst in instances])
        self.opt = np.array([objective(lp, c, inst.z_star) for c, inst in zip(self.C, instances)])
        self.warm: list = [Basis.from_basic(inst.basis, lp.n) for inst in instances]
        self.lp = lp
        self.solver = solver
        self.sign = 1.0 if lp.original_sense == "min" else -1.0

    def __call__(self, model: LinearModel) -> float:
        C_hat = model.predict_batch(self.X)
        ach = np.empty(len(C_hat))
        for i, ch in enumerate(C_hat):
            bfs = self.solver.solve(ch, start=self.warm[i])
            self.warm[i] = bfs.basis
            ach[i] = objective(self.lp, self.C[i], bfs.z)
        return ratio_of_sums(self.sign * (ach - self.opt), ach)


def train(dataset, lp: StandardFormLP, adjacency: Optional[Mapping] = None,
          config: TrainConfig = TrainConfig(), *, solver: Optional[Solver] = None,
          precompute_seconds: float = 0.0, item_wise: bool = False) -> TrainReport:
    """Fit a linear model with early stopping on validation regret.

    Args:
        dataset: a :class:`~lavadfl.benchgen.Dataset` with train/val splits.
        lp: the problem (LP relaxation for binary benchmarks).
        adjacency: instance id -> :class:`~lavadfl.adjacency.AdjacencySet`;
            required for ``loss="lava"``.
        config: hyperparameters.
        solver: solver handle for SPO+ and validation (a fresh one if None).
        precompute_seconds: carried through to the report.
        item_wise: use a shared per-item weight row (table-driven knapsack).

    Only the parameter updates are timed; validation is not. For LAVA the
    timed region must not touch the solver and this is asserted.
    """
    cfg = config
    train_set = dataset.split("train")
    val_set = dataset.split("val")
    if not train_set:
        raise TrainingError("empty training split")
    solver = solver or Solver(lp)
    stats = solver.stats
    n_cost = lp.n_structural
    X = _stack_x(train_set)
    p = X.shape[-1]

    if cfg.loss == "lava":
        if adjacency is None:
            raise TrainingError("lava training needs precomputed adjacent vertices")
        missing = [inst.id for inst in train_set if inst.id not in adjacency]
        if missing:
            raise TrainingError(f"no adjacency for {len(missing)} training instances (first id {missing[0]})")
        # streamed: dense neighbour rows exist for one instance at a time
        deltas = LavaDeltas(((inst.z_star, adjacency[inst.id].adjacent) for inst in train_set),
                            n_cost, lp.original_sense)
        warm_lava_kernel()
    else:
        if any(inst.c is None for inst in train_set):
            raise TrainingError(f"{cfg.loss} needs true costs on every training instance")
        C = np.stack([inst.c for inst in train_set])
        Z = np.stack([inst.z_star for inst in train_set])
        warm = [Basis.from_basic(inst.basis, lp.n) for inst in train_set]

    validate = _Validator(val_set, lp, solver)
    model = init_model(n_cost, p, np.random.default_rng([cfg.seed, 0]), item_wise)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    adam = AdamState(lr=cfg.lr)
    params = model.params

    curve = []
    best_model = None
    best_index = -1
    best_val = math.inf
    stale = 0
    train_seconds = 0.0
    time_to_best = 0.0
    solver_calls = 0
    val_calls = 0
    stop_reason = "max_epochs"
    epoch = 0
    n = len(train_set)

    def check(epoch, loss_sum, batches):
        nonlocal best_val, best_model, best_index, stale, time_to_best, val_calls
        before = stats.lp_solve_calls
        r = validate(model)
        val_calls += stats.lp_solve_calls - before
        improved = r < best_val * (1 - cfg.improvement_threshold) if math.isfinite(best_val) else True
        curve.append({"epoch": epoch, "train_seconds": train_seconds, "val_regret": r,
                      "train_loss": loss_sum / max(batches, 1),
                      "c_hat_norm": float(np.linalg.norm(model.bias) + np.linalg.norm(model.W))})
        if r < best_val:
            best_val = r
            best_model = model.copy()
            best_index = len(curve) - 1
            time_to_best = train_seconds
        stale = 0 if improved else stale + 1
        logger.debug("epoch %d val regret %.5f (stale %d)", epoch, r, stale)
        return stale >= cfg.patience_checks

    while epoch < cfg.max_epochs:
        epoch += 1
        order = shuffle_rng.permutation(n)
        loss_sum, batches = 0.0, 0
        capped = False
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            calls0 = stats.lp_solve_calls
            t0 = time.perf_counter()
            Xb = X[idx]
            C_hat = model.predict_batch(Xb)
            if cfg.loss == "lava":
                out = lava_batch(C_hat, *deltas.batch(idx), eps=cfg.epsilon)
            elif cfg.loss == "mse":
                # mean over instances of the per-instance mean squared error
                r = C_hat - C[idx]
                out = LossValueGrad(float(np.mean(r * r)), 2.0 * r / r.size)
            else:
                w = [warm[i] for i in idx]
                out = spo_plus_batch(C_hat, C[idx], Z[idx], solver, warm=w)
                for i, b in zip(idx, w):
                    warm[i] = b
            if not math.isfinite(out.value):
                raise TrainingError(f"non-finite {cfg.loss} loss at epoch {epoch}")
            adam_step(params, model.param_grads(Xb, out.grad), adam, info=f"(epoch {epoch})")
            train_seconds += time.perf_counter() - t0
            solver_calls += stats.lp_solve_calls - calls0
            loss_sum += out.value
            batches += 1
            if train_seconds >= cfg.time_cap_seconds:
                capped = True
                break
        if cfg.loss == "lava" and solver_calls != 0:
            raise AssertionError(f"lava training made {solver_calls} solver calls")
        if capped:
            check(epoch, loss_sum, batches)
            stop_reason = "time_cap"
            break
        if epoch % cfg.val_check_every == 0 and check(epoch, loss_sum, batches):
            stop_reason = "patience"
            break
    if best_model is None:
        check(epoch, 0.0, 0)
    return TrainReport(best_model, curve, best_index, float(precompute_seconds), train_seconds,
                       time_to_best, solver_calls, val_calls, epoch, stop_reason)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalResult:
    normalized_regret: float
    regrets: np.ndarray
    achieved: np.ndarray


def evaluate(model: LinearModel, instances: Sequence, lp: StandardFormLP, solver: Solver, *,
             integer: bool = False, Z_true=None) -> EvalResult:
    """Normalized regret of ``model`` on ``instances``.

    ``integer=True`` decides through the binary ILP. ``Z_true`` gives the
    optimal decisions under the true costs; by default the stored ``z_star``
    is used for LPs and the ILP optimum is solved for integer problems.
    """
    if not instances:
        raise ValueError("no instances to evaluate")
    if any(inst.c is None for inst in instances):
        raise ValueError("evaluation needs true costs")
    C_hat = model.predict_batch(_stack_x(instances))
    C = np.stack([inst.c for inst in instances])
    if Z_true is None and not integer:
        Z_true = [inst.z_star for inst in instances]
    value, regs, ach = normalized_regret(C_hat, C, lp, solver, Z_true=Z_true, integer=integer,
                                         return_parts=True)
    return EvalResult(value, regs, ach)
