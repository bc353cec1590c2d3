"""Communication graphs, Metropolis gossip matrices and their spectra.

A :class:`Graph` is an undirected simple graph over nodes ``0..m-1``.
:func:`metropolis_weights` turns a connected graph into a symmetric,
doubly-stochastic :class:`MixingMatrix` whose zero pattern follows the
edges. ``psi`` is the second-largest eigenvalue magnitude; ``1 - psi`` is
the spectral gap.
"""

from __future__ import annotations

import hashlib
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from dfedsim.errors import TopologyError

__all__ = [
    "KINDS",
    "Graph",
    "MixingMatrix",
    "MixingCheck",
    "build_graph",
    "metropolis_weights",
    "spectral_gap",
    "validate_mixing",
    "contraction_check",
    "time_varying_random",
    "grid_shape",
]

KINDS = ("ring", "grid", "exponential", "full", "random")

MAX_NODES = 1024
RANDOM_RETRIES = 100
ROW_SUM_TOL = 1e-12
EIG_TOL = 1e-10


@dataclass(frozen=True)
class Graph:
    """Undirected graph; ``edges`` holds pairs ``(i, j)`` with ``i < j``."""

    m: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self) -> None:
        if self.m < 1:
            raise TopologyError(f"graph needs at least one node, got m={self.m}")
        for i, j in self.edges:
            if not (0 <= i < j < self.m):
                raise TopologyError(f"edge ({i}, {j}) is not a normalized pair within 0..{self.m - 1}")

    @classmethod
    def from_pairs(cls, m: int, pairs) -> Graph:
        """Build from arbitrary pairs; orientation and duplicates are ignored, self-loops dropped."""
        edges = set()
        for i, j in pairs:
            i, j = int(i), int(j)
            if i != j:
                edges.add((min(i, j), max(i, j)))
        return cls(m, frozenset(edges))

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.m, self.m), dtype=bool)
        for i, j in self.edges:
            a[i, j] = a[j, i] = True
        return a

    def degrees(self) -> np.ndarray:
        return self.adjacency().sum(axis=1)

    def neighbors(self, i: int) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.adjacency()[i])]

    def is_connected(self) -> bool:
        if self.m == 1:
            return True
        n_comp, _ = connected_components(csr_matrix(self.adjacency()), directed=False)
        return n_comp == 1

    def degree_histogram(self) -> dict[int, int]:
        return dict(sorted(Counter(int(d) for d in self.degrees()).items()))


def grid_shape(m: int) -> tuple[int, int]:
    """Factor ``m = r * c`` with ``r <= c`` and ``c - r`` minimal."""
    r = math.isqrt(m)
    while m % r:
        r -= 1
    return r, m // r


def _ring(m: int):
    return [(i, (i + 1) % m) for i in range(m)]


def _grid(m: int):
    r, c = grid_shape(m)
    pairs = []
    for i in range(m):
        row, col = divmod(i, c)
        if col + 1 < c:
            pairs.append((i, i + 1))
        if row + 1 < r:
            pairs.append((i, i + c))
    return pairs


def _exponential(m: int):
    pairs = []
    for i in range(m):
        hop = 1
        while hop < m:
            pairs.append((i, (i + hop) % m))
            hop *= 2
    return pairs


def _full(m: int):
    return [(i, j) for i in range(m) for j in range(i + 1, m)]


def _random(m: int, k: int, rng: np.random.Generator):
    pairs = []
    for i in range(m):
        others = np.delete(np.arange(m), i)
        for j in rng.choice(others, size=k, replace=False):
            pairs.append((i, int(j)))
    return pairs


def build_graph(kind: str, m: int, k: int | None = None, seed: int = 0) -> Graph:
    """Construct a connected communication graph of the named family.

    Args:
        kind: one of ``ring``, ``grid``, ``exponential``, ``full``, ``random``.
        m: number of nodes, at least 2.
        k: partners drawn per node (``random`` only), ``1 <= k < m``.
        seed: RNG seed (``random`` only).

    Raises:
        TopologyError: on bad parameters, or when ``random`` stays
            disconnected after ``RANDOM_RETRIES`` draws.
    """
    if m < 2:
        raise TopologyError(f"topology needs m >= 2 nodes, got m={m}")
    if m > MAX_NODES:
        raise TopologyError(f"m={m} exceeds the dense-eigensolver limit of {MAX_NODES}")
    if kind == "ring":
        return Graph.from_pairs(m, _ring(m))
    if kind == "grid":
        return Graph.from_pairs(m, _grid(m))
    if kind == "exponential":
        return Graph.from_pairs(m, _exponential(m))
    if kind == "full":
        return Graph.from_pairs(m, _full(m))
    if kind == "random":
        if k is None or not (1 <= k < m):
            raise TopologyError(f"random topology needs 1 <= k < m, got k={k}, m={m}")
        rng = np.random.default_rng(seed)
        for _ in range(RANDOM_RETRIES):
            g = Graph.from_pairs(m, _random(m, k, rng))
            if g.is_connected():
                return g
        raise TopologyError(f"random topology (m={m}, k={k}, seed={seed}) disconnected after {RANDOM_RETRIES} draws")
    raise TopologyError(f"unknown topology kind {kind!r}; expected one of {', '.join(KINDS)}")


def time_varying_random(base_seed: int, round: int, m: int, k: int) -> Graph:
    """Random graph for one round, a pure function of ``(base_seed, round)``."""
    digest = hashlib.blake2b(f"topology:{base_seed}:{round}".encode(), digest_size=8).digest()
    return build_graph("random", m, k=k, seed=int.from_bytes(digest, "little"))


@dataclass(frozen=True)
class MixingCheck:
    """Outcome of :func:`validate_mixing`. ``ok`` is False iff a check failed."""

    ok: bool
    check: str | None = None
    message: str = ""
    indices: tuple[int, ...] = ()


def _averaging_residual(w: np.ndarray) -> np.ndarray:
    m = w.shape[0]
    return w - np.full((m, m), 1.0 / m)


def validate_mixing(w, graph: Graph | None = None) -> MixingCheck:
    """Check a candidate gossip matrix and report the first violated property.

    Checks run in order: ``range`` (entries in [0, 1]), ``graph`` (zero
    pattern matches ``graph`` when one is given), ``symmetry`` (exact),
    ``row_sums`` (within 1e-12 of 1), ``null_space`` (eigenvalue 1 is
    simple) and ``spectral`` (every other eigenvalue in (-1, 1)).
    Never raises for a square input.
    """
    w = np.asarray(w.w if isinstance(w, MixingMatrix) else w, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        return MixingCheck(False, "shape", f"matrix must be square, got shape {w.shape}")
    m = w.shape[0]
    bad = np.argwhere((w < 0) | (w > 1) | ~np.isfinite(w))
    if bad.size:
        i, j = map(int, bad[0])
        return MixingCheck(False, "range", f"w[{i}][{j}] = {w[i, j]!r} outside [0, 1]", (i, j))
    if graph is not None:
        if graph.m != m:
            return MixingCheck(False, "graph", f"graph has {graph.m} nodes, matrix has {m}")
        adj = graph.adjacency() | np.eye(m, dtype=bool)
        bad = np.argwhere(adj[: m, : m] != (w > 0))
        bad = bad[bad[:, 0] != bad[:, 1]]
        if bad.size:
            i, j = map(int, bad[0])
            state = "edge" if adj[i, j] else "non-edge"
            return MixingCheck(False, "graph", f"w[{i}][{j}] = {w[i, j]!r} on a {state}", (i, j))
    bad = np.argwhere(w != w.T)
    if bad.size:
        i, j = map(int, bad[0])
        return MixingCheck(False, "symmetry", f"w[{i}][{j}] = {w[i, j]!r} != w[{j}][{i}] = {w[j, i]!r}", (i, j))
    sums = w.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
    if bad.size:
        i = int(bad[0])
        return MixingCheck(False, "row_sums", f"row {i} sums to {sums[i]!r}", (i,))
    eig = np.linalg.eigvalsh(w)
    near_one = np.flatnonzero(np.abs(eig - 1.0) <= EIG_TOL)
    if near_one.size != 1:
        return MixingCheck(False, "null_space", f"eigenvalue 1 has multiplicity {near_one.size}, expected 1")
    rest = np.delete(eig, near_one)
    bad = np.flatnonzero((rest <= -1.0 + EIG_TOL) | (rest >= 1.0 - EIG_TOL))
    if bad.size:
        return MixingCheck(False, "spectral", f"eigenvalue {rest[bad[0]]!r} not strictly inside (-1, 1)")
    return MixingCheck(True)


def spectral_gap(w) -> float:
    """Return ``psi = max(|psi_2|, |psi_m|)`` of a valid gossip matrix.

    Computed as the largest eigenvalue magnitude of ``W - 11^T/m``, which
    removes the unit eigenvalue along the all-ones direction. Uniform
    averaging with representable ``1/m`` therefore gives exactly 0.
    """
    w = np.asarray(w.w if isinstance(w, MixingMatrix) else w, dtype=float)
    if w.shape[0] == 1:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvalsh(_averaging_residual(w)))))


@dataclass(frozen=True)
class MixingMatrix:
    """Symmetric doubly-stochastic gossip weights plus ``psi``.

    Use :meth:`from_array` to build one; it validates and freezes ``w``.
    """

    w: np.ndarray = field(repr=False)
    psi: float
    graph: Graph | None = field(default=None, repr=False, compare=False)

    @property
    def m(self) -> int:
        return self.w.shape[0]

    @classmethod
    def from_array(cls, w, graph: Graph | None = None) -> MixingMatrix:
        w = np.array(w, dtype=float)
        report = validate_mixing(w, graph)
        if not report.ok:
            raise TopologyError(f"invalid mixing matrix ({report.check}): {report.message}")
        w.setflags(write=False)
        return cls(w, spectral_gap(w), graph)


def metropolis_weights(g: Graph) -> MixingMatrix:
    """Metropolis-Hastings weights ``1 / (1 + max(deg_i, deg_j))`` on edges."""
    if not g.is_connected():
        raise TopologyError(f"graph with m={g.m} is disconnected; gossip weights need a connected graph")
    deg = g.degrees()
    w = np.zeros((g.m, g.m))
    for i, j in sorted(g.edges):
        w[i, j] = w[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    # fixed summation order keeps the diagonal reproducible
    for i in range(g.m):
        w[i, i] = 1.0 - math.fsum(w[i, j] for j in range(g.m) if j != i)
    return MixingMatrix.from_array(w, g)


def contraction_check(w: MixingMatrix, t_max: int, slack: float = 1e-10) -> list[tuple[int, float, float]]:
    """Tabulate ``||W^t - P||_op`` against ``psi^t`` for ``t = 1..t_max``.

    Returns ``(t, norm, psi**t)`` rows.

    Raises:
        AssertionError: if any norm exceeds ``psi**t + slack``.
    """
    if t_max < 1:
        raise ValueError(f"t_max must be >= 1, got {t_max}")
    m = w.m
    p = np.full((m, m), 1.0 / m)
    rows = []
    wt = np.eye(m)
    for t in range(1, t_max + 1):
        wt = wt @ w.w
        norm = float(np.linalg.norm(wt - p, ord=2))
        bound = w.psi**t
        assert norm <= bound + slack, f"||W^{t} - P||_op = {norm!r} exceeds psi^{t} = {bound!r}"
        rows.append((t, norm, bound))
    return rows
