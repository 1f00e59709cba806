"""Standard-form linear programs, a dense revised simplex solver and a
small branch-and-bound layer for binary problems.

Every problem is stored as ``A z = b, z >= 0``. Maximisation problems keep
their data untouched; the user-facing cost is negated when it is handed to
the solver so every internal code path minimises.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla

logger = logging.getLogger(__name__)

TOL_FEAS = 1e-8
TOL_ZERO = 1e-9
TOL_OBJ = 1e-7
TOL_RANK_REL = 1e-10
# reduced-cost and pivot-element thresholds inside the simplex loop
TOL_DJ = 1e-9
TOL_PIVOT = 1e-9


class LPError(Exception):
    """Base class for solver and model errors."""


class RankDeficient(LPError):
    pass


class Infeasible(LPError):
    pass


class Unbounded(LPError):
    pass


class SingularBasis(LPError):
    pass


class MaxPivotsExceeded(LPError):
    def __init__(self, msg, pivots=None, objective=None):
        super().__init__(msg)
        self.pivots = pivots
        self.objective = objective


class NodeLimitExceeded(LPError):
    def __init__(self, msg, incumbent=None):
        super().__init__(msg)
        self.incumbent = incumbent


# ---------------------------------------------------------------------------
# data types


@dataclass(frozen=True, eq=False)
class StandardFormLP:
    """Equality-form LP ``A z = b, z >= 0``.

    Attributes:
        A: constraint matrix (m x n), full row rank.
        b: right-hand side (m,).
        n_structural: number of original (non-slack) variables; they occupy
            the first ``n_structural`` columns.
        original_sense: ``"min"`` or ``"max"``; the sense of user-facing costs.
        names: one label per column.
    """

    A: np.ndarray
    b: np.ndarray
    n_structural: int
    original_sense: str = "min"
    names: tuple = ()

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        b = np.array(self.b, dtype=float).reshape(-1)
        if A.ndim != 2 or A.shape[0] != b.shape[0]:
            raise ValueError(f"A {A.shape} and b {b.shape} do not agree")
        if self.original_sense not in ("min", "max"):
            raise ValueError(f"unknown sense {self.original_sense!r}")
        if not 0 <= self.n_structural <= A.shape[1]:
            raise ValueError("n_structural out of range")
        names = tuple(self.names) or tuple(_default_names(self.n_structural, A.shape[1]))
        if len(names) != A.shape[1]:
            raise ValueError("one name per column required")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "names", names)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    def full_cost(self, c) -> np.ndarray:
        """Extend a structural-only cost with zeros for the slack columns."""
        c = np.asarray(c, dtype=float).reshape(-1)
        if c.shape[0] == self.n:
            return c.copy()
        if c.shape[0] == self.n_structural:
            out = np.zeros(self.n)
            out[: self.n_structural] = c
            return out
        raise ValueError(f"cost has length {c.shape[0]}, expected {self.n_structural} or {self.n}")

    def internal_cost(self, c) -> np.ndarray:
        """Full-length cost in minimisation sense."""
        c = self.full_cost(c)
        return -c if self.original_sense == "max" else c

    def is_feasible(self, z, tol: float = TOL_FEAS) -> bool:
        z = np.asarray(z, dtype=float)
        return bool(np.all(z >= -tol) and np.max(np.abs(self.A @ z - self.b), initial=0.0) <= tol)

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "b": self.b.tolist(),
            "sense": self.original_sense,
            "n_structural": int(self.n_structural),
            "names": list(self.names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StandardFormLP":
        A = np.asarray(d["A"], dtype=float)
        if A.size == 0:
            A = A.reshape(0, len(d["names"]))
        return cls(A=A, b=d["b"], n_structural=d["n_structural"],
                   original_sense=d["sense"], names=tuple(d["names"]))


def _default_names(n_structural, n):
    return [f"z{j}" for j in range(n_structural)] + [f"s{j}" for j in range(n - n_structural)]


def save_lp(lp: StandardFormLP, path) -> None:
    Path(path).write_text(json.dumps(lp.to_dict()))


def load_lp(path) -> StandardFormLP:
    return StandardFormLP.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Basis:
    """Ordered basic indices plus the complementary nonbasic indices."""

    basic: tuple
    nonbasic: tuple

    @classmethod
    def from_basic(cls, basic: Sequence[int], n: int) -> "Basis":
        basic = tuple(int(i) for i in basic)
        members = set(basic)
        if len(members) != len(basic):
            raise ValueError("repeated index in basis")
        if any(i < 0 or i >= n for i in basic):
            raise ValueError("basis index out of range")
        return cls(basic, tuple(j for j in range(n) if j not in members))

    @property
    def key(self) -> tuple:
        """Canonical hashable form: sorted basic indices."""
        return tuple(sorted(self.basic))

    def pivot(self, leaving_pos: int, entering: int) -> "Basis":
        basic = list(self.basic)
        basic[leaving_pos] = entering
        return Basis.from_basic(basic, len(self.basic) + len(self.nonbasic))


@dataclass
class BasicFeasibleSolution:
    z: np.ndarray
    basis: Basis
    sigma: int
    objective_value: float = float("nan")

    @property
    def degenerate(self) -> bool:
        return self.sigma > 0


class SolveStats:
    """Thread-safe solver call counters."""

    def __init__(self):
        self._lock = threading.Lock()
        self.lp_solve_calls = 0
        self.ilp_solve_calls = 0
        self.simplex_pivots = 0

    def add(self, lp_solve_calls=0, ilp_solve_calls=0, simplex_pivots=0):
        with self._lock:
            self.lp_solve_calls += lp_solve_calls
            self.ilp_solve_calls += ilp_solve_calls
            self.simplex_pivots += simplex_pivots

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "lp_solve_calls": self.lp_solve_calls,
                "ilp_solve_calls": self.ilp_solve_calls,
                "simplex_pivots": self.simplex_pivots,
            }


# ---------------------------------------------------------------------------
# construction


def check_full_row_rank(A, tol: Optional[float] = None):
    """Numerical row rank via column-pivoted QR of ``A.T``.

    Returns:
        (rank, independent_rows) where ``independent_rows`` is a sorted
        array of row indices spanning the row space.
    """
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0, np.zeros(0, dtype=int)
    if tol is None:
        tol = TOL_RANK_REL * max(np.max(np.linalg.norm(A, axis=1)), 1e-300)
    _, R, piv = sla.qr(A.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol))
    return rank, np.sort(piv[:rank])


def to_standard_form(A_ineq=None, b_ineq=None, sense: str = "min", *,
                     A_eq=None, b_eq=None, names=None) -> StandardFormLP:
    """Build ``A z = b, z >= 0`` from ``A_ineq z <= b_ineq`` and ``A_eq z = b_eq``.

    One slack column (coefficient +1) is appended per inequality row. Rows
    that are linear combinations of others are dropped with a warning when
    they are consistent; inconsistent ones raise :class:`RankDeficient`.
    """
    blocks_A, blocks_b = [], []
    n_struct = None
    if A_ineq is not None:
        A_ineq = np.atleast_2d(np.asarray(A_ineq, dtype=float))
        n_struct = A_ineq.shape[1]
    if A_eq is not None:
        A_eq = np.atleast_2d(np.asarray(A_eq, dtype=float))
        if n_struct is not None and A_eq.shape[1] != n_struct:
            raise ValueError("A_ineq and A_eq column counts differ")
        n_struct = A_eq.shape[1]
    if n_struct is None:
        raise ValueError("no constraints given")

    m_ineq = 0 if A_ineq is None else A_ineq.shape[0]
    if A_eq is not None and A_eq.shape[0]:
        blocks_A.append(np.hstack([A_eq, np.zeros((A_eq.shape[0], m_ineq))]))
        blocks_b.append(np.asarray(b_eq, dtype=float).reshape(-1))
    if m_ineq:
        blocks_A.append(np.hstack([A_ineq, np.eye(m_ineq)]))
        blocks_b.append(np.asarray(b_ineq, dtype=float).reshape(-1))
    A = np.vstack(blocks_A)
    b = np.concatenate(blocks_b)

    rank, rows = check_full_row_rank(A)
    if rank < A.shape[0]:
        # dependent rows must be consistent with the kept ones
        sol, *_ = np.linalg.lstsq(A[rows].T, A.T, rcond=None)
        resid = np.abs(sol.T @ b[rows] - b)
        if np.max(resid) > TOL_FEAS * max(1.0, np.max(np.abs(b))):
            raise RankDeficient(f"rank {rank} < {A.shape[0]} rows and right-hand side is inconsistent")
        dropped = sorted(set(range(A.shape[0])) - set(rows.tolist()))
        logger.warning("dropping %d redundant row(s): %s", len(dropped), dropped)
        A, b = A[rows], b[rows]
    if names is not None:
        names = tuple(names) + tuple(f"s{j}" for j in range(m_ineq))
    return StandardFormLP(A=A, b=b, n_structural=n_struct, original_sense=sense,
                          names=names or ())


# ---------------------------------------------------------------------------
# basis algebra


def _factor(B):
    lu, piv = sla.lu_factor(B, check_finite=False)
    diag = np.abs(np.diag(lu))
    if diag.size and diag.min() <= 1e-12 * max(diag.max(), 1.0):
        raise SingularBasis("basis matrix is singular")
    return lu, piv


def basic_solution_from_basis(lp: StandardFormLP, basis: Basis) -> np.ndarray:
    """Nonbasic variables at zero, ``z_B = B^-1 b``. Feasibility is not checked."""
    basic = list(basis.basic)
    fac = _factor(lp.A[:, basic])
    z = np.zeros(lp.n)
    z[basic] = sla.lu_solve(fac, lp.b, check_finite=False)
    return z


def make_bfs(lp: StandardFormLP, basis: Basis, c=None) -> BasicFeasibleSolution:
    """Evaluate a basis into a :class:`BasicFeasibleSolution`.

    Basic values within ``TOL_ZERO`` of zero are snapped to exactly zero.
    """
    z = basic_solution_from_basis(lp, basis)
    return _bfs_from_values(lp, basis, z[list(basis.basic)], c)


def _bfs_from_values(lp, basis, xB, c=None) -> BasicFeasibleSolution:
    basic = list(basis.basic)
    z = np.zeros(lp.n)
    z[basic] = xB
    z[np.abs(z) <= TOL_ZERO] = 0.0
    if np.any(z < -TOL_FEAS):
        raise Infeasible("basis is not primal feasible")
    z = np.maximum(z, 0.0)
    sigma = int(np.sum(z[basic] <= TOL_ZERO))
    obj = float(lp.full_cost(c) @ z) if c is not None else float("nan")
    return BasicFeasibleSolution(z=z, basis=basis, sigma=sigma, objective_value=obj)


# ---------------------------------------------------------------------------
# revised simplex


REFACTOR_EVERY = 32


class _StartInfeasible(Exception):
    pass


class _EtaFactor:
    """LU of a starting basis plus a product-form eta file.

    Pivot ``k`` stores ``(r_k, d_k)`` with ``d_k = B_k^-1 a_j``; then
    ``B_k^-1 = E_k ... E_1 B_0^-1``. A fresh LU is taken every
    ``REFACTOR_EVERY`` pivots.
    """

    def __init__(self, A, basic):
        self.A = A
        self.basic = basic
        self.refactor()

    def refactor(self):
        self.fac = _factor(self.A[:, self.basic])
        self.etas = []

    def ftran(self, v):
        w = sla.lu_solve(self.fac, v, check_finite=False)
        for r, d in self.etas:
            wr = w[r] / d[r]
            w -= wr * d
            w[r] = wr
        return w

    def btran(self, c):
        u = np.array(c, dtype=float)
        for r, d in reversed(self.etas):
            u[r] = (u[r] - (u @ d - u[r] * d[r])) / d[r]
        return sla.lu_solve(self.fac, u, trans=1, check_finite=False)

    def update(self, r, d):
        if len(self.etas) + 1 >= REFACTOR_EVERY:
            self.refactor()
        else:
            self.etas.append((r, d))

    @property
    def fresh(self):
        return not self.etas


class _DenseInverse(_EtaFactor):
    """Explicit inverse with rank-one updates; cheaper than an eta file
    when ``m`` is small and pivot runs are long."""

    def refactor(self):
        self.inv = _inverse(self.A[:, self.basic])
        self.count = 0

    def ftran(self, v):
        return self.inv @ v

    def btran(self, c):
        return c @ self.inv

    def update(self, r, d):
        self.count += 1
        if self.count >= REFACTOR_EVERY:
            self.refactor()
            return
        pr = self.inv[r] / d[r]
        self.inv -= np.outer(d, pr)
        self.inv[r] = pr

    @property
    def fresh(self):
        return self.count == 0


def _inverse(B):
    fac = _factor(B)
    return sla.lu_solve(fac, np.eye(B.shape[0]), check_finite=False)


DENSE_INVERSE_MAX_M = 128


def _simplex(A, b, cost, basic, *, max_pivots, allowed=None, check_start=False):
    """Primal revised simplex from a feasible basis.

    Dantzig pricing, switching to Bland's rule after ``5 (n + m)`` pivots
    without objective improvement. Basis solves go through an updated
    factorisation (explicit inverse for small ``m``, LU plus eta file
    otherwise), rebuilt every ``REFACTOR_EVERY`` pivots; before optimality is accepted the basic
    values and duals are checked against ``B`` directly and the basis is
    refactored if they drifted. ``basic`` is modified in place.

    Returns:
        (pivots, basic values).
    """
    m, n = A.shape
    stall_limit = 5 * (n + m)
    bland = False
    best = np.inf
    stall = 0
    pivots = 0
    is_basic = np.zeros(n, dtype=bool)
    is_basic[basic] = True
    if allowed is not None:
        blocked = ~allowed
    F = (_DenseInverse if m <= DENSE_INVERSE_MAX_M else _EtaFactor)(A, basic)
    xB = F.ftran(b)
    if check_start and np.any(xB < -TOL_FEAS):
        raise _StartInfeasible
    bscale = max(1.0, float(np.abs(b).max(initial=0.0)))
    cscale = max(1.0, float(np.abs(cost).max(initial=0.0)))
    while True:
        y = F.btran(cost[basic])
        rc = cost - y @ A
        rc[is_basic] = 0.0
        if allowed is not None:
            rc[blocked] = 0.0
        if bland:
            cand = np.flatnonzero(rc < -TOL_DJ)
            j = int(cand[0]) if cand.size else -1
        else:
            j = int(np.argmin(rc))
            if rc[j] >= -TOL_DJ:
                j = -1
        if j < 0:
            B = A[:, basic]
            drift = max(np.abs(B @ xB - b).max() / bscale, np.abs(y @ B - cost[basic]).max() / cscale)
            if F.fresh or drift <= 1e-10:
                return pivots, xB
            F.refactor()
            xB = F.ftran(b)
            continue
        d = F.ftran(A[:, j])
        pos = np.flatnonzero(d > TOL_PIVOT)
        if pos.size == 0:
            raise Unbounded(f"column {j} gives an unbounded ray")
        ratios = np.maximum(xB[pos], 0.0) / d[pos]
        theta = ratios.min()
        ties = pos[ratios <= theta + 1e-12 * max(1.0, theta)]
        # lowest variable index among tied rows
        r = int(ties[np.argmin(np.asarray(basic)[ties])])
        is_basic[basic[r]] = False
        is_basic[j] = True
        basic[r] = j
        pivots += 1
        if pivots > max_pivots:
            raise MaxPivotsExceeded(f"exceeded {max_pivots} pivots", pivots=pivots,
                                    objective=float(cost[basic] @ xB))
        # objective after the step: old value + theta * reduced cost
        value = float(y @ b) + theta * float(rc[j])
        F.update(r, d)
        if F.fresh:
            xB = F.ftran(b)
        else:
            xB = xB - theta * d
            xB[r] = theta
        if value < best - TOL_ZERO * max(1.0, abs(best) if np.isfinite(best) else 1.0):
            best = value
            stall = 0
        else:
            stall += 1
            if not bland and stall >= stall_limit:
                logger.debug("switching to Bland's rule after %d stalled pivots", stall)
                bland = True


def _identity_columns(A):
    """Map row -> column index for columns equal to a unit vector with +1."""
    m, n = A.shape
    found = {}
    nnz = np.count_nonzero(A, axis=0)
    for j in np.flatnonzero(nnz == 1):
        i = int(np.flatnonzero(A[:, j])[0])
        if A[i, j] == 1.0 and i not in found:
            found[i] = int(j)
    return found


def _phase_one(lp: StandardFormLP, max_pivots):
    """Find a feasible basis; artificial columns are driven out at the end."""
    A = lp.A.copy()
    b = lp.b.copy()
    m, n = A.shape
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0
    ident = _identity_columns(A)
    missing = [i for i in range(m) if i not in ident]
    if not missing:
        return [ident[i] for i in range(m)], 0
    n_art = len(missing)
    art = np.zeros((m, n_art))
    for k, i in enumerate(missing):
        art[i, k] = 1.0
    Aext = np.hstack([A, art])
    cost = np.concatenate([np.zeros(n), np.ones(n_art)])
    basic = [ident[i] if i in ident else n + missing.index(i) for i in range(m)]
    pivots, xB = _simplex(Aext, b, cost, basic, max_pivots=max_pivots)
    infeas = float(cost[basic] @ xB)
    if infeas > TOL_FEAS * max(1.0, np.abs(b).max()):
        raise Infeasible(f"phase one ended with infeasibility {infeas:.3e}")
    # pivot remaining (zero-valued) artificials out of the basis
    for r in range(m):
        if basic[r] < n:
            continue
        fac = _factor(Aext[:, basic])
        e = np.zeros(m)
        e[r] = 1.0
        row = sla.lu_solve(fac, e, trans=1, check_finite=False) @ A
        row[[i for i in basic if i < n]] = 0.0
        j = int(np.argmax(np.abs(row)))
        if abs(row[j]) <= 1e-9:
            raise RankDeficient("constraint rows are linearly dependent")
        basic[r] = j
        pivots += 1
    return basic, pivots


def basis_from_vertex(lp: StandardFormLP, z) -> Basis:
    """A basis whose basic solution is the vertex ``z``.

    The support of ``z`` is always basic; the remaining columns are chosen
    by column-pivoted QR on the part of ``A`` orthogonal to the support.
    """
    z = np.asarray(z, dtype=float)
    support = np.flatnonzero(z > TOL_ZERO)
    m = lp.m
    if support.size > m:
        raise SingularBasis("point has more than m positive entries; not a vertex")
    A = lp.A
    if support.size:
        Q, _ = np.linalg.qr(A[:, support])
        R = A - Q @ (Q.T @ A)
    else:
        R = A.copy()
    R[:, support] = 0.0
    need = m - support.size
    extra = []
    if need:
        _, _, piv = sla.qr(R, mode="economic", pivoting=True)
        taken = set(support.tolist())
        extra = [int(j) for j in piv if j not in taken][:need]
    basic = sorted(support.tolist() + extra)
    basis = Basis.from_basic(basic, lp.n)
    _factor(A[:, basic])
    return basis


def _highs_vertex(lp: StandardFormLP, cost):
    from scipy.optimize import linprog

    res = linprog(cost, A_eq=lp.A, b_eq=lp.b, bounds=(0, None), method="highs-ds")
    if res.status == 2:
        raise Infeasible(res.message)
    if res.status == 3:
        raise Unbounded(res.message)
    if res.status != 0:
        raise LPError(f"HiGHS: {res.message}")
    x = np.where(res.x > TOL_ZERO, res.x, 0.0)
    return basis_from_vertex(lp, x)


def solve_lp(lp: StandardFormLP, c, *, start: Optional[Basis] = None,
             stats: Optional[SolveStats] = None, max_pivots: Optional[int] = None,
             backend: str = "simplex") -> BasicFeasibleSolution:
    """Optimal basic feasible solution for the user-sense cost ``c``.

    Args:
        lp: problem in standard form.
        c: cost of length ``n_structural`` or ``n``; interpreted in
            ``lp.original_sense``.
        start: optional primal-feasible warm-start basis; phase one is
            skipped when it is given and feasible.
        stats: counter sink.
        max_pivots: per-phase pivot cap (default ``50 (n + m)``).
        backend: ``"simplex"`` (dense revised simplex) or ``"highs"``
            (HiGHS dual simplex; the returned vertex is then certified by a
            phase-two pass of the dense simplex from the recovered basis).

    Raises:
        Infeasible, Unbounded, MaxPivotsExceeded.
    """
    cost = lp.internal_cost(c)
    if max_pivots is None:
        max_pivots = 50 * (lp.n + lp.m)
    pivots = 0
    basic = None
    try:
        if backend == "highs":
            start = _highs_vertex(lp, cost)
        elif backend != "simplex":
            raise ValueError(f"unknown LP backend {backend!r}")
        if start is not None:
            basic = list(start.basic)
            try:
                p, xB = _simplex(lp.A, lp.b, cost, basic, max_pivots=max_pivots, check_start=True)
                pivots += p
            except (_StartInfeasible, SingularBasis):
                basic = None
        if basic is None:
            basic, pivots = _phase_one(lp, max_pivots)
            p, xB = _simplex(lp.A, lp.b, cost, basic, max_pivots=max_pivots)
            pivots += p
    finally:
        if stats is not None:
            stats.add(lp_solve_calls=1, simplex_pivots=pivots)
    return _bfs_from_values(lp, Basis.from_basic(basic, lp.n), xB, c)


class Solver:
    """Per-worker solver handle.

    Caches a feasible basis of ``lp`` so later solves skip phase one (only
    the cost changes between predict-then-optimize instances). Not safe to
    share between threads; the stats sink is.
    """

    def __init__(self, lp: StandardFormLP, stats: Optional[SolveStats] = None,
                 binary_indices=None, backend: str = "simplex", ilp_backend: str = "bnb"):
        self.lp = lp
        self.backend = backend
        self.stats = stats if stats is not None else SolveStats()
        self.binary_indices = None if binary_indices is None else np.asarray(binary_indices, dtype=int)
        self.ilp_backend = ilp_backend
        self._warm: Optional[Basis] = None

    def solve(self, c, start: Optional[Basis] = None) -> BasicFeasibleSolution:
        bfs = solve_lp(self.lp, c, start=start or self._warm, stats=self.stats,
                       backend=self.backend)
        self._warm = bfs.basis
        return bfs

    def solve_ilp(self, c) -> "BinarySolution":
        if self.binary_indices is None:
            raise LPError("solver has no binary variables")
        return solve_binary_ilp(self.lp, c, self.binary_indices, stats=self.stats,
                                backend=self.ilp_backend)

    def decide(self, c, integer: bool = False) -> np.ndarray:
        """Decision vector (length n) induced by cost ``c``."""
        if integer:
            return self.solve_ilp(c).z
        return self.solve(c).z


# ---------------------------------------------------------------------------
# binary branch and bound


@dataclass
class BinarySolution:
    z: np.ndarray
    objective_value: float
    nodes: int = 0


def _restricted(lp: StandardFormLP, fixed: dict):
    """LP with fixed columns removed; returns (A, b, kept column indices)."""
    keep = np.array([j for j in range(lp.n) if j not in fixed], dtype=int)
    b = lp.b.copy()
    for j, v in fixed.items():
        if v:
            b = b - lp.A[:, j]
    return lp.A[:, keep], b, keep


def solve_binary_ilp(lp: StandardFormLP, c, binary_indices, *, stats: Optional[SolveStats] = None,
                     node_limit: int = 100_000, backend: str = "bnb") -> BinarySolution:
    """Optimal solution with ``z[binary_indices]`` restricted to {0, 1}.

    ``backend="bnb"`` runs depth-first branch and bound over :func:`solve_lp`
    relaxations; ``backend="highs"`` hands the same model to
    :func:`scipy.optimize.milp`.
    """
    binary_indices = np.asarray(binary_indices, dtype=int)
    if np.any(binary_indices >= lp.n_structural) or np.any(binary_indices < 0):
        raise ValueError("binary indices must be structural columns")
    if stats is not None:
        stats.add(ilp_solve_calls=1)
    if backend == "highs":
        return _milp_highs(lp, c, binary_indices)
    if backend != "bnb":
        raise ValueError(f"unknown ILP backend {backend!r}")

    cost = lp.internal_cost(c)
    binset = set(binary_indices.tolist())
    best_val = np.inf
    best_z = None
    nodes = 0
    stack = [dict()]
    while stack:
        fixed = stack.pop()
        nodes += 1
        if nodes > node_limit:
            inc = None if best_z is None else BinarySolution(best_z, _user_obj(lp, c, best_z), nodes)
            raise NodeLimitExceeded(f"node limit {node_limit} reached", incumbent=inc)
        A, b, keep = _restricted(lp, fixed)
        sub = StandardFormLP(A=A, b=b, n_structural=A.shape[1])
        try:
            rank, rows = check_full_row_rank(A)
            if rank < A.shape[0]:
                sol, *_ = np.linalg.lstsq(A[rows].T, A.T, rcond=None)
                if np.max(np.abs(sol.T @ b[rows] - b)) > TOL_FEAS:
                    continue
                sub = StandardFormLP(A=A[rows], b=b[rows], n_structural=A.shape[1])
            relax = solve_lp(sub, cost[keep], stats=stats)
        except Infeasible:
            continue
        fixed_val = sum(cost[j] for j, v in fixed.items() if v)
        bound = relax.objective_value + fixed_val
        if bound >= best_val - TOL_OBJ:
            continue
        z = np.zeros(lp.n)
        z[keep] = relax.z
        for j, v in fixed.items():
            z[j] = float(v)
        frac = np.abs(z[binary_indices] - np.round(z[binary_indices]))
        if frac.max(initial=0.0) <= 1e-7:
            zi = z.copy()
            zi[binary_indices] = np.round(zi[binary_indices])
            best_val, best_z = bound, zi
            continue
        j = int(binary_indices[np.argmax(frac)])  # most fractional
        first = 1 if z[j] >= 0.5 else 0
        # pushed last so it is explored first
        stack.append({**fixed, j: 1 - first})
        stack.append({**fixed, j: first})
    if best_z is None:
        raise Infeasible("no binary-feasible solution")
    return BinarySolution(best_z, _user_obj(lp, c, best_z), nodes)


def _user_obj(lp, c, z):
    return float(lp.full_cost(c) @ z)


def _milp_highs(lp, c, binary_indices):
    from scipy.optimize import Bounds, LinearConstraint, milp

    cost = lp.internal_cost(c)
    integrality = np.zeros(lp.n)
    integrality[binary_indices] = 1
    ub = np.full(lp.n, np.inf)
    ub[binary_indices] = 1.0
    res = milp(cost, constraints=LinearConstraint(lp.A, lp.b, lp.b),
               integrality=integrality, bounds=Bounds(np.zeros(lp.n), ub))
    if res.status == 2:
        raise Infeasible(res.message)
    if res.x is None:
        raise LPError(f"milp failed: {res.message}")
    z = np.maximum(res.x, 0.0)
    z[binary_indices] = np.round(z[binary_indices])
    return BinarySolution(z, _user_obj(lp, c, z), nodes=-1)
