"""Point-cloud snapshots and k-nearest-neighbor flow graphs.

A snapshot is an unstructured set of measurement locations in the x-z plane
with an in-plane velocity vector at each point. Graphs are built by connecting
every node to its k nearest neighbors in normalized coordinates and
symmetrizing the result, so message passing sees an undirected neighborhood
structure with explicit edge lengths.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree


class InvalidSnapshotError(ValueError):
    """Raised when snapshot arrays are malformed (shape, dtype, non-finite)."""


class DuplicatePointsError(InvalidSnapshotError):
    """Raised when two measurement locations coincide exactly."""


class GraphConstructionError(ValueError):
    """Raised when a graph cannot be built from the given snapshot."""


def _as_float_array(x, name: str, shape_tail: tuple[int, ...]) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 + len(shape_tail) or arr.shape[1:] != shape_tail:
        raise InvalidSnapshotError(
            f"{name} must have shape (n,{','.join(map(str, shape_tail))}), got {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise InvalidSnapshotError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True, eq=False)
class FlowSnapshot:
    """One time instant of scattered planar velocity data.

    Parameters
    ----------
    points:
        (n, 2) float64 array of measurement positions, columns (x, z), meters.
    velocities:
        (n, 2) float64 array of in-plane velocity components (u_x, u_z), m/s.
    cad:
        Crank angle in degrees the snapshot was taken at. Purely metadata for
        synthetic or steady data.
    domain_tag:
        Free-form label of the geometry/plane this snapshot came from.
    mask:
        Optional (n,) array of {0.0, 1.0} provenance flags. Used by the
        super-resolution protocol to distinguish original from inserted nodes;
        None for plain measurement snapshots.
    """

    points: np.ndarray
    velocities: np.ndarray
    cad: float = 0.0
    domain_tag: str = ""
    mask: np.ndarray | None = None

    def __post_init__(self):
        pts = _as_float_array(self.points, "points", (2,))
        vel = _as_float_array(self.velocities, "velocities", (2,))
        if len(pts) < 2:
            raise InvalidSnapshotError("snapshot needs at least 2 points")
        if len(vel) != len(pts):
            raise InvalidSnapshotError(
                f"points ({len(pts)}) and velocities ({len(vel)}) disagree on n"
            )
        mask = self.mask
        if mask is not None:
            mask = _as_float_array(mask, "mask", ())
            if len(mask) != len(pts):
                raise InvalidSnapshotError("mask length mismatch")
            if not np.all((mask == 0.0) | (mask == 1.0)):
                raise InvalidSnapshotError("mask entries must be 0.0 or 1.0")
            mask.flags.writeable = False
        # exact duplicate positions break k-NN semantics and the cubic baseline
        _, inverse = np.unique(pts, axis=0, return_inverse=True)
        if len(np.unique(inverse)) != len(pts):
            counts = np.bincount(inverse)
            dup = int(np.argmax(counts))
            where = np.nonzero(inverse == dup)[0]
            raise DuplicatePointsError(
                f"duplicate measurement locations at rows {where.tolist()[:8]}"
            )
        pts.flags.writeable = False
        vel.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "velocities", vel)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "cad", float(self.cad))

    @property
    def n_points(self) -> int:
        return len(self.points)

    def bbox_diagonal(self) -> float:
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        return float(np.hypot(hi[0] - lo[0], hi[1] - lo[1]))


def _exact_knn(coords: np.ndarray, k: int) -> np.ndarray:
    """Exhaustive k-NN: for each row the k nearest other rows.

    Ties at the k-th neighbor break toward the lower node index. Returns an
    (n, k) int array. O(n^2), used for small n and as the reference semantics
    the tree-based path must reproduce.
    """
    n = len(coords)
    d2 = ((coords[:, None, :] - coords[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    # lexicographic (distance, index): stable argsort over index-ordered rows
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, :k]


def _tree_knn(coords: np.ndarray, k: int) -> np.ndarray:
    """Tree-accelerated k-NN with the same exact tie-break as _exact_knn."""
    n = len(coords)
    tree = cKDTree(coords)
    m = min(n, k + 9)  # self + k + tie slack
    _, idx = tree.query(coords, k=m)
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        cand = idx[i]
        cand = cand[cand != i]
        while True:
            diff = coords[cand] - coords[i]
            d2 = (diff * diff).sum(axis=1)
            order = np.lexsort((cand, d2))
            cand = cand[order]
            d2 = d2[order]
            if len(cand) >= len(coords) - 1:
                break
            # a tie spanning the cutoff may hide a lower-index neighbor
            # outside the candidate buffer; enlarge and retry
            if d2[-1] > d2[k - 1]:
                break
            m2 = min(n, len(cand) * 2 + 2)
            _, bigger = tree.query(coords[i], k=m2)
            cand = bigger[bigger != i]
        out[i] = cand[:k]
    return out


@dataclass(frozen=True, eq=False)
class GraphLayout:
    """Frozen CSR edge layout shared by all message-passing operators.

    Directed edges (src -> dst) including one self-loop per node, sorted by
    destination so that CSR row i lists the senders of node i contiguously.
    `trans_perm` maps this ordering onto the transposed (src-major) CSR whose
    structure is (indptr_t, dst_t).
    """

    indptr: np.ndarray      # (n+1,) int32
    src: np.ndarray         # (E,)  int32, dst-major order
    dst: np.ndarray         # (E,)  int32, nondecreasing
    dist: np.ndarray        # (E,)  float64, 0.0 on self-loops
    self_mask: np.ndarray   # (E,)  bool, True on self-loops
    indptr_t: np.ndarray    # (n+1,) int32
    dst_t: np.ndarray       # (E,)  int32
    trans_perm: np.ndarray  # (E,)  int32: data[trans_perm] reorders dst-major data to src-major

    @property
    def n_nodes(self) -> int:
        return len(self.indptr) - 1

    @property
    def n_edges(self) -> int:
        return len(self.src)


@dataclass(frozen=True, eq=False)
class FlowGraph:
    """Symmetric k-NN graph over one snapshot, ready for message passing.

    node_features columns are (u_x, u_z, indicator, x_norm, z_norm): raw
    velocity components, a 1.0 "value present" flag (sparsification flips it
    to 0.0 on hidden nodes and zeroes the velocity columns), and coordinates
    normalized by `length_scale` relative to the bbox lower corner.

    edges hold both directions of every undirected link, no self-loops;
    edge_distance is the Euclidean length in normalized coordinates and is
    strictly positive. degree counts in-edges (= out-edges by symmetry) and is
    at least 1 for every node.
    """

    node_features: np.ndarray   # (n, 5) float64
    edges: np.ndarray           # (E, 2) int64 rows (src, dst)
    edge_distance: np.ndarray   # (E,) float64 > 0
    degree: np.ndarray          # (n,) int64 >= 1
    coords: np.ndarray          # (n, 2) physical coordinates
    length_scale: float
    k: int
    k_saturated: bool = False
    cad: float = 0.0
    domain_tag: str = ""

    @property
    def n_nodes(self) -> int:
        return len(self.node_features)

    @property
    def coords_norm(self) -> np.ndarray:
        return self.node_features[:, 3:5]

    @cached_property
    def layout(self) -> GraphLayout:
        """Canonical dst-major CSR layout with self-loops (cached)."""
        n = self.n_nodes
        src = np.concatenate([self.edges[:, 0], np.arange(n)])
        dst = np.concatenate([self.edges[:, 1], np.arange(n)])
        dist = np.concatenate([self.edge_distance, np.zeros(n)])
        order = np.lexsort((src, dst))
        src = src[order].astype(np.int32)
        dst = dst[order].astype(np.int32)
        dist = dist[order]
        indptr = np.zeros(n + 1, dtype=np.int32)
        np.cumsum(np.bincount(dst, minlength=n), out=indptr[1:])
        # transpose structure via the data=arange trick
        e = len(src)
        a = sp.csr_matrix(
            (np.arange(e, dtype=np.float64), (dst, src)), shape=(n, n)
        )
        at = a.T.tocsr()
        at.sort_indices()
        for arr in (indptr, src, dst, dist):
            arr.flags.writeable = False
        return GraphLayout(
            indptr=indptr,
            src=src,
            dst=dst,
            dist=dist,
            self_mask=(src == dst),
            indptr_t=at.indptr.astype(np.int32),
            dst_t=at.indices.astype(np.int32),
            trans_perm=at.data.astype(np.int32),
        )

    @cached_property
    def rw_weights(self) -> np.ndarray:
        """Unit random-walk weights on the canonical layout: 1/deg(dst) on
        proper edges, 0.0 on self-loop slots."""
        lay = self.layout
        w = 1.0 / np.maximum(self.degree[lay.dst], 1)
        w = np.where(lay.self_mask, 0.0, w)
        w.flags.writeable = False
        return w

    @cached_property
    def gcn_weights(self) -> np.ndarray:
        """Mean over the closed neighborhood: 1/(deg(dst)+1) everywhere."""
        lay = self.layout
        w = 1.0 / (self.degree[lay.dst] + 1.0)
        w.flags.writeable = False
        return w

    @cached_property
    def rw_weights_t(self) -> np.ndarray:
        w = self.rw_weights[self.layout.trans_perm]
        w.flags.writeable = False
        return w

    @cached_property
    def gcn_weights_t(self) -> np.ndarray:
        w = self.gcn_weights[self.layout.trans_perm]
        w.flags.writeable = False
        return w


def build_knn_graph(
    snapshot: FlowSnapshot,
    k: int = 8,
    length_scale: float | None = None,
) -> FlowGraph:
    """Connect each node to its k nearest neighbors and symmetrize.

    Coordinates are shifted to the bounding-box lower corner and scaled by
    `length_scale` (default: this snapshot's bbox diagonal) before distances
    are measured, so graphs from differently sized domains are comparable.
    The union of directed k-NN links is kept: an undirected edge exists when
    either endpoint selected the other. Exact distance ties at the k-th
    neighbor resolve toward the lower node index. If k >= n the graph is
    complete and `k_saturated` is flagged.
    """
    if k < 1:
        raise GraphConstructionError(f"k must be >= 1, got {k}")
    n = snapshot.n_points
    saturated = k >= n
    k_eff = min(k, n - 1)
    if length_scale is None:
        length_scale = snapshot.bbox_diagonal()
    length_scale = float(length_scale)
    if not (length_scale > 0.0 and np.isfinite(length_scale)):
        raise GraphConstructionError(f"length_scale must be positive, got {length_scale}")

    coords_norm = (snapshot.points - snapshot.points.min(axis=0)) / length_scale
    if n <= 512:
        nbrs = _exact_knn(coords_norm, k_eff)
    else:
        nbrs = _tree_knn(coords_norm, k_eff)

    src = np.repeat(np.arange(n, dtype=np.int64), k_eff)
    dst = nbrs.reshape(-1).astype(np.int64)
    # symmetrize: union with reversed pairs, dedupe on encoded (src, dst)
    all_src = np.concatenate([src, dst])
    all_dst = np.concatenate([dst, src])
    code = all_src * n + all_dst
    uniq, first = np.unique(code, return_index=True)
    src_u = all_src[first]
    dst_u = all_dst[first]
    order = np.lexsort((dst_u, src_u))
    edges = np.stack([src_u[order], dst_u[order]], axis=1)

    diff = coords_norm[edges[:, 0]] - coords_norm[edges[:, 1]]
    dist = np.hypot(diff[:, 0], diff[:, 1])
    if not np.all(dist > 0.0):
        raise GraphConstructionError("zero-length edge; duplicate points slipped through")
    degree = np.bincount(edges[:, 1], minlength=n).astype(np.int64)

    feats = np.empty((n, 5), dtype=np.float64)
    feats[:, 0:2] = snapshot.velocities
    feats[:, 2] = 1.0
    feats[:, 3:5] = coords_norm
    for arr in (feats, edges, dist, degree):
        arr.flags.writeable = False
    coords = snapshot.points
    return FlowGraph(
        node_features=feats,
        edges=edges,
        edge_distance=dist,
        degree=degree,
        coords=coords,
        length_scale=length_scale,
        k=k,
        k_saturated=saturated,
        cad=snapshot.cad,
        domain_tag=snapshot.domain_tag,
    )


_WEIGHTINGS = ("unit", "inverse_distance", "gaussian")


def edge_weights(
    graph: FlowGraph, weighting: str = "unit", bandwidth: float | None = None
) -> np.ndarray:
    """Per-edge weights for the stored (symmetric, self-loop-free) edge list."""
    if weighting == "unit":
        return np.ones(len(graph.edges))
    if weighting == "inverse_distance":
        return 1.0 / graph.edge_distance
    if weighting == "gaussian":
        if bandwidth is None:
            bandwidth = float(np.median(graph.edge_distance))
        if not bandwidth > 0:
            raise ValueError(f"gaussian bandwidth must be positive, got {bandwidth}")
        return np.exp(-((graph.edge_distance / bandwidth) ** 2))
    raise ValueError(f"unknown weighting {weighting!r}, expected one of {_WEIGHTINGS}")


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """A sparse n x n linear operator with its transpose precomputed."""

    kind: str
    matrix: sp.csr_matrix
    matrix_t: sp.csr_matrix = field(repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def apply_t(self, x: np.ndarray) -> np.ndarray:
        return self.matrix_t @ x

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()


def _weighted_adjacency(
    graph: FlowGraph, weighting: str, bandwidth: float | None
) -> sp.csr_matrix:
    w = edge_weights(graph, weighting, bandwidth)
    n = graph.n_nodes
    # rows = destination, so (A @ x)[i] aggregates over senders of i
    return sp.csr_matrix((w, (graph.edges[:, 1], graph.edges[:, 0])), shape=(n, n))


def rw_adjacency(
    graph: FlowGraph, weighting: str = "unit", bandwidth: float | None = None
) -> SparseOperator:
    """Row-normalized adjacency D^-1 A_w. Every row sums to exactly 1."""
    a = _weighted_adjacency(graph, weighting, bandwidth)
    rowsum = np.asarray(a.sum(axis=1)).ravel()
    if np.any(rowsum <= 0):
        raise GraphConstructionError("isolated node: zero weighted degree")
    d_inv = sp.diags(1.0 / rowsum)
    m = (d_inv @ a).tocsr()
    m.sort_indices()
    mt = m.T.tocsr()
    mt.sort_indices()
    return SparseOperator(kind="rw_adjacency", matrix=m, matrix_t=mt)


def rw_laplacian(
    graph: FlowGraph, weighting: str = "unit", bandwidth: float | None = None
) -> SparseOperator:
    """Random-walk graph Laplacian L = I - D^-1 A_w.

    Annihilates constant vectors: L @ c*ones == 0 for any scalar c.
    """
    a_rw = rw_adjacency(graph, weighting, bandwidth)
    n = graph.n_nodes
    m = (sp.identity(n, format="csr") - a_rw.matrix).tocsr()
    m.sort_indices()
    mt = m.T.tocsr()
    mt.sort_indices()
    return SparseOperator(kind="rw_laplacian", matrix=m, matrix_t=mt)
