"""Community recovery on an observed subgraph and non-backtracking spectra."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DegenerateInputError, InvalidParamsError
from .rng import stream

TRIM_FACTOR = 10.0
EIG_RTOL = 1e-8
EIG_MAXITER = 10_000
# 2-cores up to this many nodes are diagonalized densely through the companion matrix.
NB_DENSE_LIMIT = 1200


@dataclass(frozen=True, eq=False)
class ObservedGraph:
    """Observed pairs on an ordered node subset; ``outcome`` 0 marks an observed non-edge."""

    nodes: np.ndarray
    a: np.ndarray
    b: np.ndarray
    outcome: np.ndarray

    def __post_init__(self) -> None:
        nodes = np.asarray(self.nodes, dtype=np.int64)
        a = np.asarray(self.a, dtype=np.int64)
        b = np.asarray(self.b, dtype=np.int64)
        out = np.asarray(self.outcome, dtype=np.uint8)
        if not (a.shape == b.shape == out.shape):
            raise InvalidParamsError("pair arrays must have equal length")
        if np.unique(nodes).size != nodes.size:
            raise InvalidParamsError("node list has duplicates")
        pos = self._positions(nodes, a), self._positions(nodes, b)
        if a.size and (np.any(pos[0] < 0) or np.any(pos[1] < 0)):
            raise InvalidParamsError("observed pair touches a node outside the subset")
        if np.any(a == b):
            raise InvalidParamsError("self-loop in observed pairs")
        lo, hi = np.minimum(pos[0], pos[1]), np.maximum(pos[0], pos[1])
        if np.unique(lo * max(nodes.size, 1) + hi).size != lo.size:
            raise InvalidParamsError("a pair is observed twice")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "outcome", out)
        object.__setattr__(self, "_ia", pos[0])
        object.__setattr__(self, "_ib", pos[1])

    @staticmethod
    def _positions(nodes: np.ndarray, x: np.ndarray) -> np.ndarray:
        if nodes.size == 0:
            return np.full(x.shape, -1, dtype=np.int64)
        order = np.argsort(nodes)
        idx = np.searchsorted(nodes, x, sorter=order)
        idx = np.clip(idx, 0, nodes.size - 1)
        found = order[idx]
        return np.where(nodes[found] == x, found, -1)

    @classmethod
    def from_edges(cls, nodes, edges) -> ObservedGraph:
        """Convenience: every listed pair observed present."""
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        return cls(nodes, edges[:, 0], edges[:, 1], np.ones(len(edges), dtype=np.uint8))

    @property
    def size(self) -> int:
        return int(self.nodes.size)

    def edge_positions(self) -> tuple[np.ndarray, np.ndarray]:
        """Endpoints (as positions in ``nodes``) of the observed present edges."""
        keep = self.outcome == 1
        return self._ia[keep], self._ib[keep]

    def adjacency(self) -> sp.csr_matrix:
        u, v = self.edge_positions()
        N = self.size
        data = np.ones(2 * u.size)
        return sp.csr_matrix((data, (np.r_[u, v], np.r_[v, u])), shape=(N, N))


@dataclass(frozen=True, eq=False)
class PartitionEstimate:
    """Labels in {1, 2} aligned with ``nodes``; label 1 is the larger estimated community."""

    nodes: np.ndarray
    labels: np.ndarray
    fallback: bool = False

    def as_dict(self) -> dict[int, int]:
        return dict(zip(self.nodes.tolist(), self.labels.tolist()))

    def members(self, label: int) -> np.ndarray:
        return self.nodes[self.labels == label]


def misclassification(est, truth) -> float:
    """Permutation-minimized fraction of misclassified nodes, in [0, 1/2].

    ``est`` is a PartitionEstimate or a label array; ``truth`` is a label array
    aligned with it, or a mapping node -> label when ``est`` is a PartitionEstimate.
    """
    if isinstance(est, PartitionEstimate):
        if isinstance(truth, dict):
            try:
                truth = np.array([truth[x] for x in est.nodes.tolist()])
            except KeyError as exc:
                raise InvalidParamsError(f"truth does not cover node {exc.args[0]}") from None
        est = est.labels
    est = np.asarray(est)
    truth = np.asarray(truth)
    if est.shape != truth.shape or est.ndim != 1:
        raise InvalidParamsError("estimate and truth must cover the same nodes")
    N = est.size
    if N == 0:
        raise InvalidParamsError("empty node set")
    wrong = int(np.count_nonzero(est != truth))
    return min(wrong, N - wrong) / N


def _rayleigh_power(matvec, x: np.ndarray, deflate: np.ndarray | None) -> tuple[float, np.ndarray]:
    """Power iteration with optional projection deflation; stops on relative eigenvalue change."""
    if deflate is not None:
        x = x - deflate * (deflate @ x)
    x = x / np.linalg.norm(x)
    mu = 0.0
    for _ in range(EIG_MAXITER):
        y = matvec(x)
        if deflate is not None:
            y = y - deflate * (deflate @ y)
        mu_new = float(x @ y)
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0, x
        x = y / norm
        if abs(mu_new - mu) <= EIG_RTOL * abs(mu_new):
            mu = mu_new
            break
        mu = mu_new
    return mu, x


def leading_eigenvectors(adj: sp.csr_matrix, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Top two (algebraic) eigenpairs of a symmetric adjacency by deflated power iteration.

    The matrix is shifted by its maximum degree so that it becomes positive
    semidefinite: the dominant eigenvalues of the shifted matrix are then the
    largest algebraic ones of ``adj``.
    """
    N = adj.shape[0]
    shift = float(np.abs(adj).sum(axis=1).max()) if adj.nnz else 0.0
    rng = stream(seed, "goodclust")
    start = rng.standard_normal((2, N))

    def matvec(v):
        return adj @ v + shift * v

    mu1, v1 = _rayleigh_power(matvec, start[0], None)
    mu2, v2 = _rayleigh_power(matvec, start[1], v1)
    return np.array([mu1 - shift, mu2 - shift]), np.column_stack([v1, v2])


def _orient(nodes: np.ndarray, side: np.ndarray) -> np.ndarray:
    """Labels with 1 on the larger side; ties go to the side holding the smallest node id."""
    n_true = int(side.sum())
    n_false = side.size - n_true
    if n_true != n_false:
        ones = side if n_true > n_false else ~side
    else:
        ones = side if side[np.argmin(nodes)] else ~side
    return np.where(ones, 1, 2).astype(np.int8)


def goodclust(obs: ObservedGraph, seed: int = 0) -> PartitionEstimate:
    """Two-community recovery: degree trimming, spectral split, one majority-vote refinement."""
    N = obs.size
    if N < 4:
        raise InvalidParamsError(f"need at least 4 nodes, got {N}")
    adj = obs.adjacency()
    if adj.nnz == 0:
        raise DegenerateInputError("no observed edge in the kernel")
    deg = np.asarray(adj.sum(axis=1)).ravel()
    keep = deg <= TRIM_FACTOR * deg.mean()
    trim = sp.diags(keep.astype(float))
    trimmed = (trim @ adj @ trim).tocsr()
    trimmed.eliminate_zeros()
    if trimmed.nnz == 0:
        trimmed = adj
    _, vecs = leading_eigenvectors(trimmed, seed)
    side = vecs[:, 1] >= 0.0
    if side.all() or not side.any():
        # degenerate top eigenvalue (e.g. equal disjoint blocks): v1 and v2 span the block
        # indicators in some rotation; split on the direction of that span orthogonal to 1
        v1, v2 = vecs[:, 0], vecs[:, 1]
        w = v2 * v1.sum() - v1 * v2.sum()
        side = w >= 0.0
    # refinement: move each node to the side holding most of its observed neighbours
    on_side = adj @ side.astype(float)
    off_side = deg - on_side
    refined = np.where(on_side > off_side, True, np.where(off_side > on_side, False, side))
    return PartitionEstimate(nodes=obs.nodes.copy(), labels=_orient(obs.nodes, refined))


def balanced_split(nodes: np.ndarray, rng: np.random.Generator) -> PartitionEstimate:
    """Arbitrary balanced labelling, used when the kernel carries no edge."""
    side = np.zeros(nodes.size, dtype=bool)
    side[rng.permutation(nodes.size)[: (nodes.size + 1) // 2]] = True
    return PartitionEstimate(nodes=np.asarray(nodes).copy(), labels=_orient(nodes, side), fallback=True)


# -- non-backtracking spectrum ---------------------------------------------------


@dataclass(frozen=True, eq=False)
class NBSpectrum:
    lambda1: float
    lambda2_mod: float
    directed_edge_count: int
    lambda2: complex = 0j
    vector1: np.ndarray | None = field(default=None, repr=False)
    vector2: np.ndarray | None = field(default=None, repr=False)

    @property
    def detects(self) -> bool:
        """|lambda2|^2 > lambda1, with exact ties (e.g. cycles) read as no detection."""
        return self.lambda2_mod**2 > self.lambda1 * (1.0 + 1e-9) and self.lambda1 > 0.0


def _undirected_edges(obs: ObservedGraph) -> tuple[np.ndarray, np.ndarray, int]:
    u, v = obs.edge_positions()
    lo, hi = np.minimum(u, v), np.maximum(u, v)
    return lo, hi, obs.size


def nb_matrix(obs: ObservedGraph) -> sp.csr_matrix:
    """2m x 2m non-backtracking operator: B[(u->v), (v->w)] = 1 iff w != u.

    Directed edge i < m is lo[i] -> hi[i]; edge i + m is its reverse.
    """
    lo, hi, N = _undirected_edges(obs)
    m = lo.size
    tail = np.r_[lo, hi]
    head = np.r_[hi, lo]
    rev = np.r_[np.arange(m, 2 * m), np.arange(m)]
    order = np.argsort(tail, kind="stable")
    ptr = np.searchsorted(tail[order], np.arange(N + 1))
    outdeg = np.diff(ptr)
    rows = np.repeat(np.arange(2 * m), outdeg[head])
    first = ptr[head]
    offs = np.arange(rows.size) - np.repeat(np.cumsum(outdeg[head]) - outdeg[head], outdeg[head])
    cols = order[np.repeat(first, outdeg[head]) + offs]
    keep = cols != rev[rows]
    rows, cols = rows[keep], cols[keep]
    return sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(2 * m, 2 * m))


def two_core(obs: ObservedGraph) -> np.ndarray:
    """Boolean mask (over ``obs.nodes``) of the 2-core: repeatedly strip nodes of degree <= 1."""
    A = obs.adjacency().tocsr()
    deg = np.asarray(A.sum(axis=1)).ravel()
    alive = deg > 0
    while True:
        weak = alive & (deg <= 1)
        if not weak.any():
            return alive
        alive &= ~weak
        deg = deg - A @ weak.astype(float)


def _companion(A: sp.csr_matrix) -> np.ndarray:
    N = A.shape[0]
    D = np.asarray(A.sum(axis=1)).ravel()
    K = np.zeros((2 * N, 2 * N))
    K[:N, :N] = A.toarray()
    K[:N, N:] = np.diag(1.0 - D)
    K[N:, :N] = np.eye(N)
    return K


def _nb_eigenvector(B: sp.csr_matrix, lam: complex, rng: np.random.Generator) -> np.ndarray:
    """Eigenvector of B for a known eigenvalue, by two steps of shifted inverse iteration."""
    dim = B.shape[0]
    shift = lam + 1e-9 * max(1.0, abs(lam))
    M = (B - shift * sp.identity(dim, format="csc")).tocsc().astype(complex)
    lu = spla.splu(M)
    v = rng.standard_normal(dim) + 0j
    for _ in range(2):
        v = lu.solve(v)
        v /= np.linalg.norm(v)
    if abs(lam.imag) < 1e-12 * max(1.0, abs(lam)):
        # real eigenvalue: rotate to a real vector
        v = v * np.exp(-1j * np.angle(v[np.argmax(np.abs(v))]))
        v = v.real / np.linalg.norm(v.real) + 0j
    return v


def nb_spectrum(obs: ObservedGraph, *, vectors: bool = False) -> NBSpectrum:
    """Two largest-modulus eigenvalues of the non-backtracking operator B.

    Nonzero eigenvalues of B live on the 2-core; a graph with an empty 2-core
    (a forest) has nilpotent B and returns exact zeros. On a 2-core with N
    nodes and m edges, B has the 2N eigenvalues of the companion matrix
    [[A, I - D], [I, 0]] plus +1 and -1 each with multiplicity m - N. Small
    cores are diagonalized through that companion; large ones go through
    ARPACK on the sparse B. lambda1 is the Perron root (real, equal to the
    spectral radius); lambda2 is the largest-modulus eigenvalue once one copy
    of lambda1 is removed. Eigenvectors, when requested, are computed on the
    full operator by shifted inverse iteration.
    """
    lo, _, _ = _undirected_edges(obs)
    m = lo.size
    if m == 0:
        raise DegenerateInputError("no edge: non-backtracking operator is empty")
    core = two_core(obs)
    if not core.any():
        return NBSpectrum(0.0, 0.0, 2 * m)
    if core.sum() <= NB_DENSE_LIMIT:
        sub = obs.adjacency()[core][:, core]
        n_core = sub.shape[0]
        m_core = sub.nnz // 2
        vals = np.linalg.eigvals(_companion(sub))
        extra = m_core - n_core
        if extra > 0:
            vals = np.concatenate([vals, [1.0, -1.0]])
    else:
        B = nb_matrix(obs)
        k = min(6, 2 * m - 2)
        try:
            vals = spla.eigs(B, k=k, which="LM", ncv=min(2 * m - 1, max(4 * k, 40)), return_eigenvectors=False)
        except spla.ArpackNoConvergence as exc:
            vals = exc.eigenvalues
            if vals.size < 2:
                raise
    mods = np.abs(vals)
    radius = mods.max()
    i1 = int(np.argmin(np.abs(vals - radius)))
    rest = np.delete(np.arange(vals.size), i1)
    i2 = int(rest[np.argmax(mods[rest])])
    lam1, lam2 = float(radius), complex(vals[i2])
    v1 = v2 = None
    if vectors:
        B = nb_matrix(obs)
        rng = np.random.default_rng(0)
        v1 = _nb_eigenvector(B, complex(lam1), rng)
        v2 = _nb_eigenvector(B, lam2, rng) if abs(lam2) > 0 else None
    return NBSpectrum(lam1, float(abs(lam2)), 2 * m, lam2, v1, v2)


def ihara_bass_eigenvalues(obs: ObservedGraph) -> np.ndarray:
    """Eigenvalues of the 2N x 2N companion [[A, I - D], [I, 0]] of the whole graph."""
    return np.linalg.eigvals(_companion(obs.adjacency()))


def measure_decay_constant(
    sizes=(100, 200, 400), p: float = 0.1, q: float = 0.02, seeds=range(20)
) -> float:
    """Empirical c1 in  error <= exp(-c1 N (p - q)^2 / p)  over fully observed cSBM draws.

    Returns the smallest ratio -log(error) / (N (p-q)^2 / p) seen among runs
    with a nonzero error (perfect runs constrain nothing), or ``inf`` if every
    run was perfect.
    """
    worst = math.inf
    for N in sizes:
        snr = N * (p - q) ** 2 / p
        for seed in seeds:
            obs, truth = fully_observed_csbm(N // 2, N - N // 2, p, q, seed)
            err = misclassification(goodclust(obs, seed), truth)
            if err > 0:
                worst = min(worst, -math.log(err) / snr)
    return worst


def fully_observed_csbm(n1: int, n2: int, p: float, q: float, seed: int) -> tuple[ObservedGraph, np.ndarray]:
    """All pairs of a cSBM(n1, n2, p, q) observed; returns the graph and the true labels."""
    rng = np.random.default_rng(seed)
    N = n1 + n2
    truth = np.r_[np.ones(n1, np.int8), np.full(n2, 2, np.int8)]
    truth = truth[rng.permutation(N)]
    iu, ju = np.triu_indices(N, k=1)
    prob = np.where(truth[iu] == truth[ju], p, q)
    out = (rng.random(iu.size) < prob).astype(np.uint8)
    return ObservedGraph(np.arange(N), iu, ju, out), truth
