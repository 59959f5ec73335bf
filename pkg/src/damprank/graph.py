"""Link graphs, the column-stochastic transition operator and SCC block ordering.

The transition operator ``P`` is stored column-compressed. A column ``j``
with ``n_j`` distinct out-links holds ``1/n_j`` at each target. Dangling
columns (``n_j = 0``) are never materialized: in ``patch_v`` and ``uniform``
mode they are represented by a fill vector ``f`` and an indicator ``d`` of
the dangling set so that ``P = P0 + f d^T``, which keeps the operator
sparse on graphs with many dangling pages.
"""

import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numba
import numpy as np
import scipy.sparse as sp

from ._io import write_csv
from .exceptions import DanglingNodeError, GraphFormatError, UsageError

DANGLING_MODES = ("error", "patch_v", "uniform", "leave")
V_MODES = ("nonnegative", "signed")


@dataclass(frozen=True, eq=False)
class EdgeGraph:
    """Directed graph on dense node ids ``0..n-1``.

    ``src`` and ``dst`` hold edges in input order. Duplicates are kept here
    and collapsed by :func:`build_operator`.
    """

    n: int
    src: np.ndarray
    dst: np.ndarray
    labels: tuple = None
    directed: bool = True

    def __post_init__(self):
        src = np.ascontiguousarray(self.src, dtype=np.int64)
        dst = np.ascontiguousarray(self.dst, dtype=np.int64)
        if src.shape != dst.shape or src.ndim != 1:
            raise GraphFormatError("src and dst must be 1-d arrays of equal length")
        if self.n < 0:
            raise GraphFormatError("node count must be nonnegative")
        if src.size and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= self.n):
            raise GraphFormatError(f"edge endpoint outside [0, {self.n})")
        if self.labels is not None and len(self.labels) != self.n:
            raise GraphFormatError("labels must have one entry per node")
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "dst", dst)
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))

    @classmethod
    def from_edges(cls, n, edges, labels=None):
        edges = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        return cls(n, edges[:, 0], edges[:, 1], labels)

    @property
    def edges(self):
        return list(zip(self.src.tolist(), self.dst.tolist()))

    @property
    def n_edges(self):
        return int(self.src.size)

    def label(self, i):
        return str(i) if self.labels is None else self.labels[i]

    def node_labels(self):
        if self.labels is None:
            return [str(i) for i in range(self.n)]
        return list(self.labels)

    @cached_property
    def unique_edges(self):
        """Deduplicated edges sorted by (src, dst)."""
        if self.src.size == 0:
            return np.empty((0, 2), dtype=np.int64)
        keys = np.unique(self.src * self.n + self.dst)
        return np.column_stack([keys // self.n, keys % self.n])

    @cached_property
    def digest(self):
        """SHA-256 over ``n`` and the deduplicated edge set."""
        h = hashlib.sha256()
        h.update(np.int64(self.n).astype("<i8").tobytes())
        h.update(self.unique_edges.astype("<i8").tobytes())
        return h.hexdigest()

    def adjacency_csr(self):
        """Out-neighbour lists as a boolean CSR matrix (row = source)."""
        e = self.unique_edges
        data = np.ones(len(e), dtype=np.int8)
        return sp.csr_matrix((data, (e[:, 0], e[:, 1])), shape=(self.n, self.n))


@dataclass(frozen=True, eq=False)
class PersonalizationVector:
    v: np.ndarray
    mode: str = "nonnegative"
    seed: int = None

    def __post_init__(self):
        v = np.ascontiguousarray(self.v, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise UsageError("personalization vector must be a nonempty 1-d array")
        if self.mode not in V_MODES:
            raise UsageError(f"unknown personalization mode {self.mode!r}")
        if not np.all(np.isfinite(v)):
            raise UsageError("personalization vector has non-finite entries")
        if abs(v.sum() - 1.0) > 1e-12:
            raise UsageError(f"personalization vector must sum to 1 (got {v.sum()!r})")
        if self.mode == "nonnegative" and np.any(v < 0):
            raise UsageError("nonnegative personalization vector has negative entries")
        v.setflags(write=False)
        object.__setattr__(self, "v", v)

    def __len__(self):
        return self.v.size

    @classmethod
    def coerce(cls, v, n=None):
        if isinstance(v, cls):
            pv = v
        else:
            arr = np.asarray(v, dtype=np.float64)
            pv = cls(arr, "nonnegative" if np.all(arr >= 0) else "signed")
        if n is not None and pv.v.size != n:
            raise UsageError(f"personalization vector has length {pv.v.size}, expected {n}")
        return pv


class ColumnStochastic:
    """Sparse column-stochastic transition operator ``P``.

    Treat instances as immutable: they are shared across solver calls and
    threads, and :meth:`row_mirror` caches a derived CSR copy.
    """

    def __init__(self, matrix, dangling, fill, dangling_mode, graph_hash=None):
        self.matrix = sp.csc_matrix(matrix, dtype=np.float64)
        self.matrix.sort_indices()
        self.n = self.matrix.shape[0]
        self.dangling = np.asarray(dangling, dtype=bool)
        self.fill = None if fill is None else np.asarray(fill, dtype=np.float64)
        self.dangling_mode = dangling_mode
        self.graph_hash = graph_hash
        self._dangling_idx = np.flatnonzero(self.dangling)
        self._csr = None

    def __repr__(self):
        return (f"ColumnStochastic(n={self.n}, nnz={self.matrix.nnz}, "
                f"dangling_mode={self.dangling_mode!r}, dangling_count={self.dangling_count})")

    @property
    def shape(self):
        return (self.n, self.n)

    @property
    def dangling_count(self):
        return int(self._dangling_idx.size)

    @property
    def is_stochastic(self):
        """True when every column sums to one (no substochastic columns left)."""
        return self.dangling_count == 0 or self.fill is not None

    def matvec(self, x):
        y = self.matrix @ x
        if self.fill is not None and self._dangling_idx.size:
            y += self.fill * x[self._dangling_idx].sum()
        return y

    def column_sums(self):
        sums = np.asarray(self.matrix.sum(axis=0)).ravel()
        if self.fill is not None:
            sums[self.dangling] += self.fill.sum()
        return sums

    def row_mirror(self):
        """Row-compressed copy of the structural part ``P0`` (built once)."""
        if self._csr is None:
            csr = self.matrix.tocsr()
            csr.sort_indices()
            self._csr = csr
        return self._csr

    def fill_vector(self):
        """The dense dangling fill ``f`` (zeros in ``leave`` mode)."""
        if self.fill is None:
            return np.zeros(self.n)
        return self.fill

    def toarray(self):
        dense = self.matrix.toarray()
        if self.fill is not None:
            dense[:, self.dangling] += self.fill[:, None]
        return dense


def spmv(P, x):
    """``y = P x``. Sequential, so results are bit-reproducible."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (P.n,):
        raise ValueError(f"dimension mismatch: operator is {P.n}x{P.n}, vector has shape {x.shape}")
    return P.matvec(x)


def build_operator(g, dangling_mode="patch_v", v=None):
    if dangling_mode not in DANGLING_MODES:
        raise UsageError(f"unknown dangling mode {dangling_mode!r}; choose from {DANGLING_MODES}")
    n = g.n
    e = g.unique_edges
    outdeg = np.bincount(e[:, 0], minlength=n).astype(np.float64) if n else np.zeros(0)
    vals = 1.0 / outdeg[e[:, 0]]
    matrix = sp.csc_matrix((vals, (e[:, 1], e[:, 0])), shape=(n, n))
    dangling = outdeg == 0

    fill = None
    if dangling.any():
        if dangling_mode == "error":
            raise DanglingNodeError(g.label(i) for i in np.flatnonzero(dangling))
        if dangling_mode == "patch_v":
            if v is None:
                raise UsageError("dangling_mode='patch_v' requires a personalization vector")
            pv = PersonalizationVector.coerce(v, n)
            if pv.mode != "nonnegative":
                raise UsageError("dangling_mode='patch_v' requires a nonnegative personalization vector")
            fill = pv.v.copy()
        elif dangling_mode == "uniform":
            fill = np.full(n, 1.0 / n)
    return ColumnStochastic(matrix, dangling, fill, dangling_mode, g.digest)


def gen_personalization(n, seed=0, mode="nonnegative"):
    """Seeded Gaussian personalization vector.

    Draws come from ``numpy.random.Generator(Philox(seed))``, a 64-bit
    counter-based generator keyed through ``SeedSequence(seed)``, via
    ``standard_normal``. ``nonnegative`` takes absolute values and
    l1-normalizes; ``signed`` divides by the raw sum, redrawing the whole
    vector while ``|sum| < 1e-6 * sqrt(n)``.
    """
    if n < 1:
        raise UsageError("personalization vector needs n >= 1")
    if mode not in V_MODES:
        raise UsageError(f"unknown personalization mode {mode!r}")
    rng = np.random.Generator(np.random.Philox(seed))
    while True:
        z = rng.standard_normal(n)
        if mode == "nonnegative":
            z = np.abs(z)
            total = z.sum()
            if total > 0:
                break
        else:
            total = z.sum()
            if abs(total) >= 1e-6 * np.sqrt(n):
                break
    v = z / total
    # absorb the last-ulp normalization error so that e^T v = 1 holds tightly
    v[np.argmax(np.abs(v))] += 1.0 - v.sum()
    return PersonalizationVector(v, mode, seed)


def load_personalization(path, g):
    """Read ``node,value`` rows (labels as in ``g``) or one value per line."""
    path = Path(path)
    try:
        lines = [ln.strip() for ln in path.read_text().splitlines()]
    except OSError as exc:
        raise GraphFormatError(f"cannot read personalization file {path}: {exc}") from exc
    lines = [ln for ln in lines if ln and not ln.startswith(("#", "%"))]
    index = {lab: i for i, lab in enumerate(g.node_labels())}
    v = np.zeros(g.n)
    if lines and "," in lines[0]:
        if lines[0].split(",")[0].strip() == "node":
            lines = lines[1:]
        for ln in lines:
            lab, val = (t.strip() for t in ln.split(",")[:2])
            if lab not in index:
                raise GraphFormatError(f"personalization file names unknown node {lab!r}")
            v[index[lab]] = float(val)
    else:
        if len(lines) != g.n:
            raise GraphFormatError(f"expected {g.n} values in {path}, found {len(lines)}")
        v[:] = [float(x) for x in lines]
    total = v.sum()
    if total == 0:
        raise GraphFormatError("personalization vector sums to zero")
    v = v / total
    v[np.argmax(np.abs(v))] += 1.0 - v.sum()
    return PersonalizationVector(v, "nonnegative" if np.all(v >= 0) else "signed")


def parse_edge_list(path, format="tsv"):
    """Parse a whitespace-separated edge list.

    Integer ids are remapped densely in sorted order (so 0- and 1-based
    files both land on ``0..n-1``); any other labels are remapped in order
    of first appearance. With ``format="konect"`` a ``% [sym|asym] m n``
    header may declare more nodes than appear in edges; for 0/1-based
    integer ids the declared count is honoured and ids are offset instead
    of remapped.
    """
    if format not in ("tsv", "konect"):
        raise UsageError(f"unknown edge-list format {format!r}")
    path = Path(path)
    declared_n = 0
    directed = True
    src_tok, dst_tok = [], []
    try:
        fh = open(path)
    except OSError as exc:
        raise GraphFormatError(f"cannot read edge list {path}: {exc}") from exc
    with fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if line[0] in "%#":
                if format == "konect":
                    toks = line[1:].split()
                    if toks and toks[0] == "sym":
                        directed = False
                    nums = [int(t) for t in toks if t.isdigit()]
                    if len(nums) >= 2:
                        declared_n = max(declared_n, *nums[1:])
                continue
            toks = line.split()
            if len(toks) > 2:
                raise GraphFormatError(f"{path}, line {lineno}: more than 2 tokens on a data line")
            if len(toks) < 2:
                raise GraphFormatError(f"{path}, line {lineno}: malformed line {line!r}")
            src_tok.append(toks[0])
            dst_tok.append(toks[1])

    try:
        src = np.array(src_tok, dtype=np.int64)
        dst = np.array(dst_tok, dtype=np.int64)
        integer = True
    except ValueError:
        integer = False

    if integer:
        ids = np.concatenate([src, dst])
        uniq = np.unique(ids)
        base = int(uniq[0]) if uniq.size and uniq[0] in (0, 1) else None
        if (declared_n > uniq.size and base is not None
                and uniq.size and uniq[-1] - base < declared_n):
            n = declared_n
            labels = tuple(str(i + base) for i in range(n))
            return EdgeGraph(n, src - base, dst - base, labels, directed)
        src = np.searchsorted(uniq, src)
        dst = np.searchsorted(uniq, dst)
        return EdgeGraph(int(uniq.size), src, dst, tuple(str(i) for i in uniq.tolist()), directed)

    index = {}
    for tok in (t for pair in zip(src_tok, dst_tok) for t in pair):
        if tok not in index:
            index[tok] = len(index)
    src = np.fromiter((index[t] for t in src_tok), dtype=np.int64, count=len(src_tok))
    dst = np.fromiter((index[t] for t in dst_tok), dtype=np.int64, count=len(dst_tok))
    return EdgeGraph(len(index), src, dst, tuple(index), directed)


def write_edge_list(g, path):
    """Write the dense 0-based edge list (tab separated, input order)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(f"# n={g.n} m={g.n_edges}\n")
        for s, d in zip(g.src.tolist(), g.dst.tolist()):
            fh.write(f"{s}\t{d}\n")
    return path


@dataclass(frozen=True, eq=False)
class BlockOrdering:
    """Node permutation putting ``P`` in block upper triangular form.

    ``perm[pos]`` is the node placed at position ``pos``; block ``b`` spans
    positions ``block_starts[b]:block_starts[b + 1]``. Every edge ``u -> w``
    satisfies ``block_of[w] <= block_of[u]``: block 0 is a sink, the last
    block a source.
    """

    perm: np.ndarray
    block_starts: np.ndarray
    graph_hash: str = None
    block_of: np.ndarray = field(default=None, repr=False)

    @property
    def n(self):
        return int(self.perm.size)

    @property
    def n_blocks(self):
        return int(self.block_starts.size - 1)

    @property
    def block_sizes(self):
        return np.diff(self.block_starts)

    @property
    def lscc_index(self):
        return int(np.argmax(self.block_sizes)) if self.n_blocks else -1

    @property
    def position(self):
        pos = np.empty_like(self.perm)
        pos[self.perm] = np.arange(self.perm.size)
        return pos

    def blocks(self):
        return [self.perm[a:b] for a, b in zip(self.block_starts[:-1], self.block_starts[1:])]


@numba.njit(cache=True)
def _tarjan(n, indptr, indices):
    # iterative Tarjan; components are numbered in emission order, which is
    # a reverse topological order of the condensation (sinks first)
    index = np.full(n, -1, dtype=np.int64)
    low = np.zeros(n, dtype=np.int64)
    onstack = np.zeros(n, dtype=np.bool_)
    comp = np.full(n, -1, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    call_node = np.empty(n, dtype=np.int64)
    call_edge = np.empty(n, dtype=np.int64)
    sp_ = 0
    counter = 0
    ncomp = 0
    for root in range(n):
        if index[root] != -1:
            continue
        index[root] = counter
        low[root] = counter
        counter += 1
        stack[sp_] = root
        sp_ += 1
        onstack[root] = True
        call_node[0] = root
        call_edge[0] = indptr[root]
        cp = 1
        while cp > 0:
            v = call_node[cp - 1]
            e = call_edge[cp - 1]
            if e < indptr[v + 1]:
                call_edge[cp - 1] = e + 1
                w = indices[e]
                if index[w] == -1:
                    index[w] = counter
                    low[w] = counter
                    counter += 1
                    stack[sp_] = w
                    sp_ += 1
                    onstack[w] = True
                    call_node[cp] = w
                    call_edge[cp] = indptr[w]
                    cp += 1
                elif onstack[w] and index[w] < low[v]:
                    low[v] = index[w]
            else:
                cp -= 1
                if low[v] == index[v]:
                    while True:
                        sp_ -= 1
                        w = stack[sp_]
                        onstack[w] = False
                        comp[w] = ncomp
                        if w == v:
                            break
                    ncomp += 1
                if cp > 0:
                    u = call_node[cp - 1]
                    if low[v] < low[u]:
                        low[u] = low[v]
    return comp, ncomp


def scc_blocks(g):
    """Strongly connected components in block upper triangular order."""
    adj = g.adjacency_csr()
    comp, ncomp = _tarjan(g.n, adj.indptr.astype(np.int64), adj.indices.astype(np.int64))
    perm = np.lexsort((np.arange(g.n), comp)).astype(np.int64)
    sizes = np.bincount(comp, minlength=ncomp)
    starts = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    return BlockOrdering(perm, starts, g.digest, comp.astype(np.int64))


def write_scc(g, ordering, out_dir):
    """Write ``blocks.csv`` (block_id,size) and ``perm.csv``."""
    out_dir = Path(out_dir)
    write_csv(out_dir / "blocks.csv", ["block_id", "size"],
              enumerate(ordering.block_sizes.tolist()))
    labels = g.node_labels()
    write_csv(out_dir / "perm.csv", ["node_label", "block_id", "position"],
              ((labels[node], int(ordering.block_of[node]), pos)
               for pos, node in enumerate(ordering.perm.tolist())))
    return out_dir / "blocks.csv", out_dir / "perm.csv"


def random_graph(n, mean_degree=8.0, seed=0):
    """Directed random graph with Poisson(mean_degree) out-degrees, no self-loops.

    Nodes drawing out-degree zero are dangling; the expected count is
    ``n * exp(-mean_degree)``.
    """
    rng = np.random.default_rng(seed)
    degs = np.minimum(rng.poisson(mean_degree, size=n), n - 1)
    src, dst = [], []
    for u, k in enumerate(degs.tolist()):
        if k == 0:
            continue
        t = rng.choice(n - 1, size=k, replace=False)
        t[t >= u] += 1
        src.append(np.full(k, u))
        dst.append(t)
    if not src:
        return EdgeGraph(n, np.zeros(0), np.zeros(0))
    return EdgeGraph(n, np.concatenate(src), np.concatenate(dst))


def dag_of_cliques(n_cliques, size, extra_edges=None, seed=0):
    """Cliques of ``size`` nodes linked by forward-only inter-clique edges.

    Each clique is strongly connected; inter-clique edges go from a
    higher-numbered clique to a lower one, so the condensation is a DAG.
    """
    rng = np.random.default_rng(seed)
    n = n_cliques * size
    src, dst = [], []
    for c in range(n_cliques):
        nodes = np.arange(c * size, (c + 1) * size)
        for u in nodes:
            for w in nodes:
                if u != w:
                    src.append(u)
                    dst.append(w)
    if extra_edges is None:
        extra_edges = 2 * n_cliques
    if n_cliques < 2:
        extra_edges = 0
    for _ in range(extra_edges):
        a, b = sorted(rng.choice(n_cliques, size=2, replace=False))
        u = rng.integers(b * size, (b + 1) * size)
        w = rng.integers(a * size, (a + 1) * size)
        src.append(u)
        dst.append(w)
    relabel = rng.permutation(n)
    return EdgeGraph(n, relabel[np.array(src, dtype=np.int64)],
                     relabel[np.array(dst, dtype=np.int64)])
