"""Adjacent-vertex enumeration for basic feasible solutions.

The main entry point is :func:`enumerate_adjacent_vertices`. For a
nondegenerate vertex one basis suffices: every nonbasic column gives one
edge. For degenerate vertices the zero-step pivots are explored breadth
first, with the leaving variable chosen by transition-node pivoting so that
a fixed transition column stays usable in every explored basis.
"""

from __future__ import annotations

import itertools
import logging
import math
import os
from collections import deque
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from numba import njit

from .lp_core import (TOL_FEAS, TOL_ZERO, Basis, BasicFeasibleSolution, LPError,
                      SingularBasis, StandardFormLP, _factor, make_bfs)

logger = logging.getLogger(__name__)

TOL_VERTEX_DEDUP = 1e-7
TOL_RATIO = 1e-9


class UnboundedEdge(LPError):
    pass


class NoTransitionNode(LPError):
    pass


class ExplorationCapExceeded(LPError):
    pass


@dataclass
class PivotDirectionMatrix:
    """``D = -B^-1 N``; column ``j`` moves the basic variables when the
    ``j``-th nonbasic variable increases by one."""

    D: np.ndarray
    basis: Basis


@dataclass
class AdjacencySet:
    vertex: np.ndarray
    adjacent: np.ndarray
    bases_visited: int
    sigma: int

    @property
    def k(self) -> int:
        return self.adjacent.shape[0]

    def to_dict(self) -> dict:
        return {
            "vertex": self.vertex.tolist(),
            "adjacent": self.adjacent.tolist(),
            "sigma": int(self.sigma),
            "bases_visited": int(self.bases_visited),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdjacencySet":
        vertex = np.asarray(d["vertex"], dtype=float)
        adjacent = np.asarray(d["adjacent"], dtype=float).reshape(-1, vertex.shape[0])
        return cls(vertex, adjacent, int(d["bases_visited"]), int(d["sigma"]))


@dataclass
class PackedAdjacency:
    """Storage form of an :class:`AdjacencySet`.

    Neighbours differ from the vertex in a handful of coordinates, so rows
    are kept as a sparse ``adjacent - vertex`` matrix. For the 300-item
    knapsack this is about 50 times smaller than the dense rows.
    """

    vertex: np.ndarray
    delta: sp.csr_matrix
    sigma: int
    bases_visited: int

    @classmethod
    def pack(cls, adj: AdjacencySet) -> "PackedAdjacency":
        d = adj.adjacent - adj.vertex
        rows, cols = np.nonzero(d)
        indptr = np.zeros(d.shape[0] + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=d.shape[0]), out=indptr[1:])
        delta = sp.csr_matrix((d[rows, cols], cols, indptr), shape=d.shape)
        return cls(adj.vertex, delta, int(adj.sigma), int(adj.bases_visited))

    def unpack(self) -> AdjacencySet:
        adjacent = self.delta.toarray() + self.vertex
        return AdjacencySet(self.vertex, adjacent, self.bases_visited, self.sigma)

    @property
    def k(self) -> int:
        return self.delta.shape[0]


class AdjacencyStore(Mapping):
    """Read-only id -> :class:`AdjacencySet` view over a packed file.

    Sets are rebuilt on access, so only the sparse form stays in memory.
    """

    def __init__(self, packed: dict):
        self._packed = packed

    def __getitem__(self, key) -> AdjacencySet:
        return self._packed[key].unpack()

    def __iter__(self):
        return iter(self._packed)

    def __len__(self):
        return len(self._packed)

    def packed(self, key) -> PackedAdjacency:
        return self._packed[key]


def save_adjacency(path, items: Mapping, **extra) -> None:
    """Write packed sets to an ``.npz`` file, atomically.

    ``extra`` holds per-file arrays or scalars (e.g. timings, a data hash).
    """
    ids = sorted(items)
    recs = [items[i] for i in ids]
    n = recs[0].vertex.shape[0] if recs else 0
    delta = sp.vstack([r.delta for r in recs], format="csr") if recs else sp.csr_matrix((0, n))
    arrays = {
        "ids": np.asarray(ids, dtype=np.int64),
        "vertex": np.array([r.vertex for r in recs]).reshape(len(recs), n),
        "sigma": np.asarray([r.sigma for r in recs], dtype=np.int64),
        "bases_visited": np.asarray([r.bases_visited for r in recs], dtype=np.int64),
        "offsets": np.concatenate([[0], np.cumsum([r.k for r in recs])]).astype(np.int64),
        "data": delta.data, "indices": delta.indices, "indptr": delta.indptr,
        "n": np.int64(n),
    }
    arrays.update({k: np.asarray(v) for k, v in extra.items()})
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, **arrays)
    os.replace(tmp, path)


def load_adjacency(path):
    """Inverse of :func:`save_adjacency`: ``(AdjacencyStore, extra dict)``."""
    with np.load(path, allow_pickle=False) as f:
        a = {k: f[k] for k in f.files}
    n = int(a.pop("n"))
    off = a.pop("offsets")
    delta = sp.csr_matrix((a.pop("data"), a.pop("indices"), a.pop("indptr")), shape=(int(off[-1]), n))
    ids, vertex = a.pop("ids"), a.pop("vertex")
    sigma, visited = a.pop("sigma"), a.pop("bases_visited")
    packed = {int(i): PackedAdjacency(vertex[j], delta[off[j]:off[j + 1]], int(sigma[j]), int(visited[j]))
              for j, i in enumerate(ids)}
    return AdjacencyStore(packed), a


def compute_directions(lp: StandardFormLP, basis: Basis) -> PivotDirectionMatrix:
    fac = _factor(lp.A[:, list(basis.basic)])
    D = -sla.lu_solve(fac, lp.A[:, list(basis.nonbasic)], check_finite=False)
    return PivotDirectionMatrix(D, basis)


def min_ratio_test(z, basis: Basis, d_col, tol_ratio: float = TOL_RATIO):
    """Largest step along ``d_col`` before a basic variable turns negative.

    Returns:
        (theta_star, argmin_set) with ``argmin_set`` the positions (rows of
        ``D``) attaining the minimum within ``tol_ratio``.

    Raises:
        UnboundedEdge: no component of ``d_col`` is negative.
    """
    d_col = np.asarray(d_col, dtype=float)
    zB = np.asarray(z, dtype=float)[list(basis.basic)]
    neg = np.flatnonzero(d_col < -TOL_ZERO)
    if neg.size == 0:
        raise UnboundedEdge("edge direction has no decreasing basic variable")
    ratios = -np.maximum(zB[neg], 0.0) / d_col[neg]
    theta = float(ratios.min())
    return theta, neg[ratios <= theta + tol_ratio]


def tnp_select_leaving(D: PivotDirectionMatrix, t: int, j: int, argmin_set) -> int:
    """Leaving position for a zero-step pivot on column ``j``.

    Picks ``argmax_k D[k, t] / D[k, j]`` over the tied rows, which keeps
    column ``t`` a transition column after the pivot. Ties go to the
    lowest basic variable index.
    """
    M = D.D if isinstance(D, PivotDirectionMatrix) else np.asarray(D)
    rows = np.asarray(list(argmin_set), dtype=int)
    if rows.size == 1:
        return int(rows[0])
    dj = M[rows, j]
    if np.any(dj >= -TOL_ZERO):
        raise ValueError("argmin_set contains rows with nonnegative direction entries")
    ratios = M[rows, t] / dj
    top = ratios.max()
    cand = rows[ratios >= top - 1e-12 * max(1.0, abs(top))]
    if isinstance(D, PivotDirectionMatrix):
        basic = np.asarray(D.basis.basic)
        return int(cand[np.argmin(basic[cand])])
    return int(cand.min())


def _theta_vector(zB, D):
    """θ* for every column of ``D`` and the mask of blocking rows."""
    neg = D < -TOL_ZERO
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(neg, -zB[:, None] / np.where(neg, D, -1.0), np.inf)
    theta = ratios.min(axis=0) if D.shape[0] else np.full(D.shape[1], np.inf)
    return theta, neg & (ratios <= theta + TOL_RATIO)


def _thetas(z, basis, D):
    """θ* per nonbasic column (``inf`` for unbounded edges) plus argmin sets."""
    zB = np.maximum(z[list(basis.basic)], 0.0)
    theta, ties = _theta_vector(zB, D)
    return [(float(theta[j]), np.flatnonzero(ties[:, j])) for j in range(D.shape[1])]


def _transition_column(thetas) -> Optional[int]:
    for jpos, (theta, _) in enumerate(thetas):
        if theta > TOL_RATIO:
            return jpos
    return None


def exploration_cap(n: int, m: int, sigma: int, factor: int = 10) -> int:
    """``factor * 2^(σ-1) (d - σ + 2)`` with ``d = n - m`` the polytope dimension."""
    d = n - m
    u_min = 2.0 ** (sigma - 1) * max(d - sigma + 2, 1)
    return int(max(math.ceil(factor * u_min), 1))


def find_transition_basis(lp: StandardFormLP, bfs: BasicFeasibleSolution,
                          cap: Optional[int] = None) -> Basis:
    """A basis of the same vertex with at least one nondegenerate pivot.

    Breadth-first search over zero-step pivots; the input basis is returned
    unchanged when it already qualifies.
    """
    z = bfs.z
    if cap is None:
        cap = exploration_cap(lp.n, lp.m, bfs.sigma)
    start = bfs.basis
    queue = deque([start])
    seen = {start.key}
    while queue:
        basis = queue.popleft()
        D = compute_directions(lp, basis).D
        theta, _ = _theta_vector(np.maximum(z[list(basis.basic)], 0.0), D)
        if np.any(np.isfinite(theta) & (theta > TOL_RATIO)):
            return basis
        thetas = _thetas(z, basis, D)
        for jpos, (theta, rows) in enumerate(thetas):
            if math.isinf(theta):
                raise UnboundedEdge(f"unbounded edge along column {basis.nonbasic[jpos]}")
            jvar = basis.nonbasic[jpos]
            for r in sorted(rows, key=lambda r: basis.basic[r]):
                nb = basis.pivot(int(r), jvar)
                if nb.key not in seen:
                    seen.add(nb.key)
                    queue.append(nb)
                    if len(seen) > cap:
                        raise ExplorationCapExceeded(f"more than {cap} bases while looking for a transition node")
    raise NoTransitionNode("no basis of this vertex admits a nondegenerate pivot")


@njit(cache=True)
def _basis_kernel(A, z, basic, t_var, tol_zero, tol_ratio):
    """Process one basis of the vertex ``z``.

    Returns ``(nonbasic, theta, leave, tpos, W)``: minimum ratios per
    nonbasic column, the TNP leaving row for zero-step columns (``-1``
    elsewhere), the transition column position used (``-1`` when ``t_var``
    no longer admits a positive step) and one row of ``W`` per positive-step
    column holding the adjacent vertex it reaches.
    """
    m, n = A.shape
    k = n - m
    in_basis = np.zeros(n, dtype=np.bool_)
    for i in range(m):
        in_basis[basic[i]] = True
    nonbasic = np.empty(k, dtype=np.int64)
    c = 0
    for j in range(n):
        if not in_basis[j]:
            nonbasic[c] = j
            c += 1
    B = np.ascontiguousarray(A[:, basic])
    N = np.ascontiguousarray(A[:, nonbasic])
    D = -np.linalg.solve(B, N)
    zB = np.empty(m)
    for i in range(m):
        zB[i] = max(z[basic[i]], 0.0)
    theta = np.full(k, np.inf)
    for j in range(k):
        for i in range(m):
            if D[i, j] < -tol_zero:
                r = zB[i] / -D[i, j]
                if r < theta[j]:
                    theta[j] = r
    tpos = -1
    for j in range(k):
        if nonbasic[j] == t_var:
            if theta[j] > tol_ratio:
                tpos = j
            break
    tie_col = tpos
    n_moving = 0
    for j in range(k):
        if theta[j] > tol_ratio and theta[j] < np.inf:
            n_moving += 1
            if tie_col < 0:
                tie_col = j
    if tie_col < 0:
        tie_col = 0
    W = np.empty((n_moving, n))
    leave = np.full(k, -1, dtype=np.int64)
    row = 0
    for j in range(k):
        if theta[j] == np.inf:
            continue
        if theta[j] > tol_ratio:
            for q in range(n):
                W[row, q] = z[q]
            W[row, nonbasic[j]] += theta[j]
            for i in range(m):
                v = z[basic[i]] + theta[j] * D[i, j]
                if D[i, j] < -tol_zero and zB[i] / -D[i, j] <= theta[j] + tol_ratio:
                    v = 0.0
                if abs(v) <= tol_zero or v < 0.0:
                    v = 0.0
                W[row, basic[i]] = v
            row += 1
            continue
        best = -np.inf
        r = -1
        for i in range(m):
            if D[i, j] < -tol_zero and zB[i] / -D[i, j] <= theta[j] + tol_ratio:
                q = D[i, tie_col] / D[i, j]
                slack = 1e-12 * max(1.0, abs(best)) if r >= 0 else 0.0
                if r < 0 or q > best + slack:
                    best = q
                    r = i
                elif q >= best - slack and basic[i] < basic[r]:
                    r = i
        leave[j] = r
    return nonbasic, theta, leave, tpos, W


def warm_kernel() -> None:
    """Compile or load the basis kernel ahead of any timed enumeration."""
    A = np.array([[1.0, 1.0]])
    _basis_kernel(A, np.array([1.0, 0.0]), np.array([0], dtype=np.int64), -1, TOL_ZERO, TOL_RATIO)


def enumerate_adjacent_vertices(lp: StandardFormLP, bfs: BasicFeasibleSolution, *,
                                cap: Optional[int] = None) -> AdjacencySet:
    """All vertices adjacent to ``bfs`` on the polytope ``A z = b, z >= 0``.

    Starts from a transition basis of the vertex. Every nonbasic column is
    tried as entering variable: a positive step yields an adjacent vertex,
    a zero step yields another basis of the same vertex (leaving variable by
    the TNP rule), queued unless already visited.

    Raises:
        UnboundedEdge, SingularBasis, ExplorationCapExceeded.
    """
    z = np.asarray(bfs.z, dtype=float)
    A = np.ascontiguousarray(lp.A)
    n = lp.n
    if cap is None:
        cap = exploration_cap(lp.n, lp.m, bfs.sigma)
    # every finite pivot from a nondegenerate basis leaves the vertex
    start = bfs.basis if bfs.sigma == 0 else find_transition_basis(lp, bfs, cap=cap)
    basic0 = np.array(start.basic, dtype=np.int64)
    key0 = _mask_key(basic0)
    queue = deque([(basic0, -1, key0)])
    visited = {key0}
    found = {}
    while queue:
        basic, t_var, key0 = queue.popleft()
        try:
            nonbasic, theta, leave, tpos, W = _basis_kernel(A, z, basic, t_var, TOL_ZERO, TOL_RATIO)
        except np.linalg.LinAlgError as exc:
            raise SingularBasis(str(exc)) from None
        if np.isinf(theta).any():
            j = int(nonbasic[np.argmax(np.isinf(theta))])
            raise UnboundedEdge(f"unbounded edge along column {j}")
        if tpos < 0:
            if t_var >= 0:
                logger.warning("transition column %d lost to round-off; reselecting", t_var)
            tpos = int(np.argmax(theta > TOL_RATIO))
        t_next = int(nonbasic[tpos])
        if bfs.sigma == 0:
            # one basis, and each entering column reaches a different vertex
            found = dict(enumerate(W))
        elif W.shape[0]:
            # a vertex is determined by its support
            for key, w in zip(np.packbits(W > 0.0, axis=1), W):
                found.setdefault(key.tobytes(), w)
        stuck = np.flatnonzero(leave >= 0)
        if stuck.size:
            basic_l = basic.tolist()
            nonbasic_l = nonbasic.tolist()
            leave_l = leave.tolist()
            for j in stuck.tolist():
                r = leave_l[j]
                jvar = nonbasic_l[j]
                key = key0 ^ (1 << basic_l[r]) ^ (1 << jvar)
                if key in visited:
                    continue
                visited.add(key)
                if len(visited) > cap:
                    raise ExplorationCapExceeded(f"visited more than {cap} bases (sigma={bfs.sigma})")
                nb = basic.copy()
                nb[r] = jvar
                queue.append((nb, t_next, key))

    # keyed by support already, so no tolerance-based dedup pass is needed
    adjacent = np.array(list(found.values())).reshape(-1, n)
    if adjacent.shape[0]:
        same = np.max(np.abs(adjacent - z), axis=1) <= TOL_VERTEX_DEDUP
        adjacent = adjacent[~same]
    return AdjacencySet(vertex=z.copy(), adjacent=adjacent, bases_visited=len(visited),
                        sigma=bfs.sigma)


def _mask_key(basic) -> int:
    key = 0
    for i in basic:
        key |= 1 << int(i)
    return key


def dedup_rows(X: np.ndarray, tol: float = TOL_VERTEX_DEDUP) -> np.ndarray:
    """Drop rows within ``tol`` (inf-norm) of an earlier row; order is kept.

    Rows are bucketed by their support (entries above ``TOL_ZERO``) first;
    vertices of one polytope with equal support coincide.
    """
    if X.shape[0] <= 1:
        return X.copy()
    buckets = {}
    keep = []
    for i, key in enumerate(np.packbits(np.abs(X) > TOL_ZERO, axis=1)):
        group = buckets.setdefault(key.tobytes(), [])
        if any(np.max(np.abs(X[g] - X[i])) <= tol for g in group):
            continue
        group.append(i)
        keep.append(i)
    return X[keep]


# ---------------------------------------------------------------------------
# exhaustive oracle


@dataclass
class VertexGraph:
    """Vertices of a polytope, the feasible bases of each, and adjacency."""

    vertices: np.ndarray
    bases: list
    neighbors: dict

    def index_of(self, z, tol: float = TOL_VERTEX_DEDUP) -> int:
        dist = np.max(np.abs(self.vertices - np.asarray(z)), axis=1)
        i = int(np.argmin(dist))
        if dist[i] > tol:
            raise KeyError("point is not a vertex of this polytope")
        return i

    def adjacent_to(self, z) -> np.ndarray:
        i = self.index_of(z)
        idx = sorted(self.neighbors[i])
        return self.vertices[idx].reshape(-1, self.vertices.shape[1])


def brute_force_adjacency(lp: StandardFormLP, max_bases: int = 200_000) -> VertexGraph:
    """Enumerate every basis; adjacent vertices are those joined by a single pivot."""
    m, n = lp.m, lp.n
    total = math.comb(n, m)
    if total > max_bases:
        raise ValueError(f"C({n},{m}) = {total} bases exceeds the guard of {max_bases}")
    vertices = []
    bases = []
    vertex_of = {}
    for combo in itertools.combinations(range(n), m):
        B = lp.A[:, combo]
        if abs(np.linalg.det(B)) < 1e-10 or np.linalg.cond(B) > 1e12:
            continue
        zB = np.linalg.solve(B, lp.b)
        if np.any(zB < -TOL_FEAS):
            continue
        z = np.zeros(n)
        z[list(combo)] = zB
        z[np.abs(z) <= TOL_ZERO] = 0.0
        z = np.maximum(z, 0.0)
        for vi, v in enumerate(vertices):
            if np.max(np.abs(v - z)) <= TOL_VERTEX_DEDUP:
                break
        else:
            vi = len(vertices)
            vertices.append(z)
            bases.append([])
        bases[vi].append(combo)
        vertex_of[combo] = vi
    neighbors = {i: set() for i in range(len(vertices))}
    for combo, vi in vertex_of.items():
        members = set(combo)
        outside = [j for j in range(n) if j not in members]
        for pos in range(m):
            for j in outside:
                other = tuple(sorted(combo[:pos] + (j,) + combo[pos + 1:]))
                vj = vertex_of.get(other)
                if vj is not None and vj != vi:
                    neighbors[vi].add(vj)
                    neighbors[vj].add(vi)
    return VertexGraph(np.array(vertices).reshape(-1, n), bases, neighbors)

