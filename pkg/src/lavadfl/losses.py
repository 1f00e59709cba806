"""Decision-focused losses and regret metrics.

All losses take the predicted cost ``c_hat`` in the user's sense of the
problem (maximisation for knapsack) over the structural variables only;
slack costs are zero so they never enter an inner product. Gradients are
returned with respect to that same ``c_hat``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from numba import njit

from .lp_core import TOL_OBJ, LPError, Solver, StandardFormLP

EPS_INF = math.inf


@dataclass
class LossValueGrad:
    value: float
    grad: np.ndarray


def _sense_sign(sense: str) -> float:
    if sense == "min":
        return 1.0
    if sense == "max":
        return -1.0
    raise ValueError(f"sense must be 'min' or 'max', got {sense!r}")


def check_epsilon(eps) -> float:
    eps = float(eps)
    if math.isnan(eps) or eps < 0:
        raise ValueError(f"epsilon must be >= 0 or inf, got {eps}")
    return eps


def lava_loss(c_hat, z_star, Z_adj, eps=0.1, sense: str = "min") -> LossValueGrad:
    """Adjacent-vertex alignment loss for one instance.

    Each neighbour contributes ``max(c_hat.(z* - z_adj), -eps)`` (signs
    flipped for max problems, so a negative term always means ``z*`` wins).
    With ``eps = inf`` the hinge is off and the raw differences are summed.

    Args:
        c_hat: predicted cost, length ``L`` (usually ``n_structural``).
        z_star: optimal vertex; only its first ``L`` entries are used.
        Z_adj: ``k x n`` (or ``k x L``) adjacent vertices.
        eps: margin, ``>= 0`` or ``inf``.
        sense: sense the costs are expressed in.
    """
    eps = check_epsilon(eps)
    c_hat = np.asarray(c_hat, dtype=float)
    Z_adj = np.atleast_2d(np.asarray(Z_adj, dtype=float))
    if Z_adj.shape[0] == 0:
        raise ValueError("lava_loss needs at least one adjacent vertex")
    L = c_hat.shape[0]
    if Z_adj.shape[1] < L or np.shape(z_star)[0] < L:
        raise ValueError("cost longer than the vertex vectors")
    s = _sense_sign(sense)
    delta = s * (np.asarray(z_star, dtype=float)[:L] - Z_adj[:, :L])
    margins = delta @ c_hat
    active = margins > -eps
    value = float(np.sum(np.where(active, margins, -eps))) if np.isfinite(eps) else float(margins.sum())
    grad = delta[active].sum(axis=0) if active.any() else np.zeros(L)
    return LossValueGrad(value, grad)


class LavaDeltas:
    """All ``z* - z_adj`` rows of a training split, stored sparse.

    Neighbours usually differ from ``z*`` in only a few coordinates, so the
    whole split fits comfortably in CSR form even for knapsack. Row ranges
    per instance are kept in ``offsets``.
    """

    def __init__(self, pairs: Sequence, n_cost: int, sense: str = "min"):
        s = _sense_sign(sense)
        blocks = []
        counts = []
        for z_star, Z_adj in pairs:
            Z_adj = np.atleast_2d(np.asarray(Z_adj, dtype=float))
            if Z_adj.shape[0] == 0:
                raise ValueError("instance without adjacent vertices")
            d = s * (np.asarray(z_star, dtype=float)[:n_cost] - Z_adj[:, :n_cost])
            d[np.abs(d) < 1e-12] = 0.0
            blocks.append(sp.csr_matrix(d))
            counts.append(d.shape[0])
        self.D = sp.vstack(blocks, format="csr") if blocks else sp.csr_matrix((0, n_cost))
        self.offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.n_cost = n_cost

    def __len__(self):
        return len(self.offsets) - 1

    def batch(self, idx):
        """CSR block for instances ``idx`` plus the owning batch position of each row."""
        idx = np.asarray(idx, dtype=np.int64)
        counts = self.offsets[idx + 1] - self.offsets[idx]
        starts = np.cumsum(counts) - counts
        rows = np.arange(counts.sum()) + np.repeat(self.offsets[idx] - starts, counts)
        owner = np.repeat(np.arange(len(idx)), counts)
        return self.D[rows], owner


@njit(cache=True)
def _lava_rows(indptr, indices, data, owner, C_hat, eps):
    """Hinge value summed over rows and the gradient w.r.t. ``C_hat``."""
    G = np.zeros_like(C_hat)
    total = 0.0
    for r in range(indptr.shape[0] - 1):
        b = owner[r]
        margin = 0.0
        for q in range(indptr[r], indptr[r + 1]):
            margin += data[q] * C_hat[b, indices[q]]
        if margin > -eps:
            total += margin
            for q in range(indptr[r], indptr[r + 1]):
                G[b, indices[q]] += data[q]
        else:
            total -= eps
    return total, G


def warm_lava_kernel() -> None:
    """Compile or load the batch kernel so the first timed step does not pay for it."""
    for it in (np.int32, np.int64):  # scipy picks either index type
        _lava_rows(np.zeros(2, dtype=it), np.zeros(1, dtype=it), np.ones(1),
                   np.zeros(1, dtype=np.int64), np.zeros((1, 1)), 0.1)


def lava_batch(C_hat, block, owner, eps=0.1) -> LossValueGrad:
    """Mean LAVA loss over a batch; ``grad`` has the shape of ``C_hat``.

    ``block``/``owner`` come from :meth:`LavaDeltas.batch`; row ``r`` of
    ``block`` is paired with ``C_hat[owner[r]]``.
    """
    eps = check_epsilon(eps)
    C_hat = np.ascontiguousarray(C_hat, dtype=float)
    B = C_hat.shape[0]
    value, G = _lava_rows(block.indptr, block.indices, block.data, np.asarray(owner, dtype=np.int64),
                          C_hat, eps)
    return LossValueGrad(float(value) / B, G / B)


def mse_loss(c_hat, c) -> LossValueGrad:
    c_hat = np.asarray(c_hat, dtype=float)
    c = np.asarray(c, dtype=float)
    if c_hat.shape != c.shape:
        raise ValueError("shape mismatch")
    r = c_hat - c
    n = r.size
    return LossValueGrad(float(r @ r) / n, 2.0 * r / n)


def spo_plus_loss(c_hat, c, z_star, solver: Solver) -> LossValueGrad:
    """SPO+ surrogate; one LP solve on ``2 c_hat - c``."""
    lp = solver.lp
    s = _sense_sign(lp.original_sense)
    c_hat = np.asarray(c_hat, dtype=float)
    c = np.asarray(c, dtype=float)
    L = c_hat.shape[0]
    z_star = np.asarray(z_star, dtype=float)[:L]
    z_t = solver.solve(2.0 * c_hat - c).z[:L]
    # everything below in internal (minimisation) costs
    ch, ct = s * c_hat, s * c
    value = -(2.0 * ch - ct) @ z_t + 2.0 * ch @ z_star - ct @ z_star
    grad = s * 2.0 * (z_star - z_t)
    return LossValueGrad(float(value), grad)


def spo_plus_batch(C_hat, C, Z_star, solver: Solver, warm: Optional[list] = None) -> LossValueGrad:
    """Mean SPO+ over a batch. ``warm`` is an optional list of per-row
    start bases, updated in place with the bases the solver returns."""
    lp = solver.lp
    s = _sense_sign(lp.original_sense)
    C_hat = np.asarray(C_hat, dtype=float)
    B, L = C_hat.shape
    total = 0.0
    G = np.empty_like(C_hat)
    for i in range(B):
        start = None if warm is None else warm[i]
        bfs = solver.solve(2.0 * C_hat[i] - C[i], start=start)
        if warm is not None:
            warm[i] = bfs.basis
        z_t = bfs.z[:L]
        zs = Z_star[i][:L]
        ch, ct = s * C_hat[i], s * C[i]
        total += -(2.0 * ch - ct) @ z_t + 2.0 * ch @ zs - ct @ zs
        G[i] = s * 2.0 * (zs - z_t)
    return LossValueGrad(float(total) / B, G / B)


def objective(lp: StandardFormLP, c, z) -> float:
    """User-sense objective ``c.z`` (slack costs zero)."""
    return float(lp.full_cost(c) @ np.asarray(z, dtype=float))


def regret(c_hat, c, lp: StandardFormLP, solver: Solver, *, z_true=None,
           integer: bool = False) -> float:
    """Objective loss from acting on ``c_hat`` when ``c`` is true.

    Always reported as a nonnegative gap (``achieved - optimum`` for min,
    ``optimum - achieved`` for max). ``z_true`` skips the second solve when
    the optimal decision is already known.
    """
    achieved, best = _regret_terms(c_hat, c, lp, solver, z_true=z_true, integer=integer)
    return _sense_sign(lp.original_sense) * (achieved - best)


def _regret_terms(c_hat, c, lp, solver, *, z_true=None, integer=False, start=None):
    if integer:
        z_hat = solver.decide(c_hat, integer=True)
    else:
        z_hat = solver.solve(c_hat, start=start).z
    if z_true is None:
        z_true = solver.decide(c, integer=integer)
    return objective(lp, c, z_hat), objective(lp, c, z_true)


def normalized_regret(C_hat, C, lp: StandardFormLP, solver: Solver, *, Z_true=None,
                      integer: bool = False, return_parts: bool = False):
    """Summed regret over summed achieved objective.

    Args:
        C_hat, C: predicted and true costs, one row per instance.
        Z_true: optional optimal decisions for ``C``.
        integer: decide through the binary ILP instead of the LP.
        return_parts: also return per-instance regrets and achieved values.
    """
    C_hat = np.atleast_2d(np.asarray(C_hat, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    s = _sense_sign(lp.original_sense)
    regs = np.empty(len(C))
    ach = np.empty(len(C))
    for i in range(len(C)):
        zt = None if Z_true is None else Z_true[i]
        a, b = _regret_terms(C_hat[i], C[i], lp, solver, z_true=zt, integer=integer)
        regs[i] = s * (a - b)
        ach[i] = a
    value = ratio_of_sums(regs, ach)
    if return_parts:
        return value, regs, ach
    return value


def ratio_of_sums(regrets, achieved) -> float:
    den = float(np.sum(achieved))
    if abs(den) <= TOL_OBJ:
        raise LPError(f"normalized regret undefined: achieved objectives sum to {den:.3g} "
                      f"over {len(achieved)} instances")
    return float(np.sum(regrets)) / den
