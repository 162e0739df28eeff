"""Company-customer graph family and clustering metrics.

Conductance follows the weighted-degree convention: the volume of a vertex
set is the sum of its weighted degrees.  Zero-weight edges stay in the edge
set but never connect anything.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from . import kernels
from .errors import FormatError, InvalidArgument, TooLarge, UndefinedConductance

EXACT_MAX_VERTICES = 24
_TIE_EPS = 1e-12


@dataclass(frozen=True)
class CommunityLayout:
    """Vertex layout: utilitarians ``0..m-1``, company ``m``, fans after it."""

    m_utilitarian: int
    n_fans: int

    def __post_init__(self):
        if self.m_utilitarian < 1 or self.n_fans < 1:
            raise InvalidArgument("layout needs at least one utilitarian customer and one fan")

    @property
    def company(self) -> int:
        return self.m_utilitarian

    @property
    def n_vertices(self) -> int:
        return self.m_utilitarian + self.n_fans + 1

    @property
    def utilitarians(self) -> range:
        return range(self.m_utilitarian)

    @property
    def fans(self) -> range:
        return range(self.m_utilitarian + 1, self.n_vertices)


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    """Undirected weighted graph stored as parallel edge arrays with ``rows < cols``."""

    n_vertices: int
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rows, dtype=np.int64)
        c = np.asarray(self.cols, dtype=np.int64)
        w = np.asarray(self.weights, dtype=float)
        if not (r.shape == c.shape == w.shape and r.ndim == 1):
            raise InvalidArgument("edge arrays must be 1-D and of equal length")
        if np.any(r == c):
            raise InvalidArgument("self-loops are not allowed")
        lo, hi = np.minimum(r, c), np.maximum(r, c)
        if r.size and (lo.min() < 0 or hi.max() >= self.n_vertices):
            raise InvalidArgument("edge endpoint outside vertex range")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidArgument("edge weights must be finite and nonnegative")
        if np.unique(lo * max(self.n_vertices, 1) + hi).size != lo.size:
            raise InvalidArgument("duplicate edge")
        for name, arr in (("rows", lo), ("cols", hi), ("weights", w)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def from_edges(cls, n_vertices, edges):
        edges = list(edges)
        if not edges:
            return cls(n_vertices, np.zeros(0, int), np.zeros(0, int), np.zeros(0))
        r, c, w = zip(*edges)
        return cls(n_vertices, np.array(r), np.array(c), np.array(w, dtype=float))

    @property
    def n_edges(self) -> int:
        return int(self.weights.size)

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        return [(int(i), int(j), float(w)) for i, j, w in zip(self.rows, self.cols, self.weights)]

    def subgraph(self, edge_index) -> "WeightedGraph":
        """Same vertex set, keeping only the edges at ``edge_index``."""
        idx = np.sort(np.asarray(edge_index, dtype=np.int64))
        return WeightedGraph(self.n_vertices, self.rows[idx], self.cols[idx], self.weights[idx])

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.n_vertices, self.n_vertices))
        A[self.rows, self.cols] = self.weights
        A[self.cols, self.rows] = self.weights
        return A

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_vertices)
        np.add.at(deg, self.rows, self.weights)
        np.add.at(deg, self.cols, self.weights)
        return deg


@dataclass(frozen=True)
class Cut:
    subset: frozenset

    def __init__(self, subset):
        object.__setattr__(self, "subset", frozenset(int(v) for v in subset))

    def mask(self, n_vertices: int) -> np.ndarray:
        if not 1 <= len(self.subset) <= n_vertices - 1:
            raise InvalidArgument("a cut must be a nonempty proper subset of the vertices")
        if min(self.subset) < 0 or max(self.subset) >= n_vertices:
            raise InvalidArgument("cut vertex outside the graph")
        m = np.zeros(n_vertices, dtype=bool)
        m[list(self.subset)] = True
        return m

    def complement(self, n_vertices: int) -> "Cut":
        return Cut(set(range(n_vertices)) - self.subset)


def build_company_customer_graph(layout: CommunityLayout, w) -> WeightedGraph:
    """Company-customer graph: two unit-weight cliques joined through the company.

    ``w`` is the shared company-utilitarian weight, or an array of one weight
    per utilitarian customer for independently evolving edges.
    """
    m = layout.m_utilitarian
    w_arr = np.broadcast_to(np.asarray(w, dtype=float), (m,))
    if np.any(w_arr < 0) or np.any(w_arr > 1):
        raise InvalidArgument("company-utilitarian weights must lie in [0, 1]")
    util = np.arange(m)
    fans = np.arange(m + 1, layout.n_vertices)
    company = layout.company
    iu, ju = np.triu_indices(m, 1)
    i_f, j_f = np.triu_indices(fans.size, 1)
    blocks = [
        (util[iu], util[ju], np.ones(iu.size)),
        (util, np.full(m, company), w_arr),
        (np.full(fans.size, company), fans, np.ones(fans.size)),
        (fans[i_f], fans[j_f], np.ones(i_f.size)),
    ]
    rows, cols, weights = (np.concatenate(part) for part in zip(*blocks))
    return WeightedGraph(layout.n_vertices, rows, cols, weights)


def conductance_of_cut(g: WeightedGraph, cut: Cut) -> float:
    """Cut weight divided by the smaller side's volume."""
    inside = cut.mask(g.n_vertices)
    deg = g.degrees()
    vol_s = float(deg[inside].sum())
    vol_t = float(deg[~inside].sum())
    if min(vol_s, vol_t) <= 0:
        raise UndefinedConductance("a side of the cut has zero volume")
    crossing = inside[g.rows] != inside[g.cols]
    return float(g.weights[crossing].sum()) / min(vol_s, vol_t)


def _positive_components(g: WeightedGraph, vertices=None):
    """Connected components over positive-weight edges, optionally restricted."""
    keep = g.weights > 0
    adj = csr_matrix(
        (np.ones(int(keep.sum())), (g.rows[keep], g.cols[keep])), shape=(g.n_vertices, g.n_vertices)
    )
    if vertices is not None:
        adj = adj[vertices][:, vertices]
    return connected_components(adj, directed=False)


def is_connected(g: WeightedGraph) -> bool:
    """True when all vertices are joined through positive-weight edges."""
    return _positive_components(g)[0] == 1


def _active_vertices(g: WeightedGraph) -> np.ndarray:
    active = np.flatnonzero(g.degrees() > 0)
    if active.size < 2:
        raise UndefinedConductance("graph has no cut with positive volume on both sides")
    return active


def graph_conductance_exact(g: WeightedGraph, backend=None) -> tuple[float, Cut]:
    """Minimum conductance by enumerating every cut (``n_vertices <= 24``).

    Zero-degree vertices cannot change any cut's value, so enumeration runs
    over the positive-degree vertices only and isolated ones join the
    complement.  Near-ties (1e-12) resolve to the lexicographically smallest
    vertex mask.
    """
    if g.n_vertices > EXACT_MAX_VERTICES:
        raise TooLarge(
            f"exact conductance enumerates 2^(n-1) cuts; n={g.n_vertices} exceeds "
            f"{EXACT_MAX_VERTICES}, use the sweep method"
        )
    active = _active_vertices(g)
    A = g.adjacency()[np.ix_(active, active)]
    value, mask = kernels.min_conductance_bruteforce(A, _TIE_EPS, backend=backend)
    if not np.isfinite(value):
        raise UndefinedConductance("graph has no cut with positive volume on both sides")
    subset = [int(active[v]) for v in range(active.size - 1) if (mask >> v) & 1]
    cut = Cut(subset)
    return conductance_of_cut(g, cut), cut


def laplacian(g: WeightedGraph) -> np.ndarray:
    A = g.adjacency()
    return np.diag(A.sum(axis=1)) - A


def algebraic_connectivity(g: WeightedGraph) -> float:
    """Second-smallest Laplacian eigenvalue; exactly 0.0 for disconnected graphs."""
    if g.n_vertices < 2:
        raise InvalidArgument("algebraic connectivity needs at least 2 vertices")
    if not is_connected(g):
        return 0.0
    return max(float(np.linalg.eigvalsh(laplacian(g))[1]), 0.0)


def fiedler_vectors(L: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Orthonormal basis (as columns) of the eigenspace of the second eigenvalue."""
    w, v = np.linalg.eigh(L)
    scale = max(1.0, abs(w[-1]))
    same = np.flatnonzero(np.abs(w - w[1]) <= tol * scale)
    same = same[same >= 1]
    vecs = v[:, same]
    # deterministic sign: first clearly nonzero entry negative
    for k in range(vecs.shape[1]):
        nz = np.flatnonzero(np.abs(vecs[:, k]) > 1e-10)
        if nz.size and vecs[nz[0], k] > 0:
            vecs[:, k] = -vecs[:, k]
    return vecs


def graph_conductance_sweep(g: WeightedGraph, backend=None) -> tuple[float, Cut]:
    """Spectral sweep: best prefix cut of the Fiedler ordering.

    Returns 0 with a separating component when the positive-degree part of
    the graph is disconnected.  When the second eigenvalue is repeated, every
    basis vector of its eigenspace is swept and the best cut kept.
    """
    active = _active_vertices(g)
    n_comp, labels = _positive_components(g, active)
    if n_comp > 1:
        cut = Cut(active[labels == labels[0]])
        return 0.0, cut
    A = g.adjacency()[np.ix_(active, active)]
    L = np.diag(A.sum(axis=1)) - A
    best_val, best_cut = np.inf, None
    for vec in fiedler_vectors(L).T:
        order = np.lexsort((np.arange(active.size), vec))
        vals = kernels.prefix_conductances(A[np.ix_(order, order)], backend=backend)
        k = int(np.flatnonzero(vals <= vals.min() + _TIE_EPS)[0])
        if vals[k] < best_val - _TIE_EPS:
            best_val, best_cut = vals[k], Cut(active[order[: k + 1]])
    return conductance_of_cut(g, best_cut), best_cut


def graph_conductance(g: WeightedGraph, method: str = "sweep") -> float:
    if method == "exact":
        return graph_conductance_exact(g)[0]
    if method == "sweep":
        return graph_conductance_sweep(g)[0]
    raise InvalidArgument(f"unknown conductance method {method!r}; use 'exact' or 'sweep'")


def write_edge_list(g: WeightedGraph, path) -> None:
    lines = [f"# vertices={g.n_vertices}"]
    lines += [f"{i}\t{j}\t{w!r}" for i, j, w in g.edges]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_edge_list(path) -> WeightedGraph:
    """Parse the tab-separated edge-list fixture with a ``# vertices=<n>`` header."""
    text = Path(path).read_text(encoding="utf-8").splitlines()
    n_vertices = None
    edges = []
    for lineno, line in enumerate(text, start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line[1:].strip().startswith("vertices="):
                n_vertices = int(line.split("=", 1)[1])
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected 'i<TAB>j<TAB>weight'", [lineno])
        try:
            edges.append((int(parts[0]), int(parts[1]), float(parts[2])))
        except ValueError:
            raise FormatError(f"{path}:{lineno}: malformed edge {line!r}", [lineno]) from None
    if n_vertices is None:
        raise FormatError(f"{path}: missing '# vertices=<n>' header")
    return WeightedGraph.from_edges(n_vertices, edges)
