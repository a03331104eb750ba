"""Masking and node-insertion transforms that create reconstruction tasks.

A SparseSample pairs a graph whose features have been partially blanked with
the dense target field the model should recover. Two task flavors exist:
random masking (hide all but a fraction of the nodes of one snapshot) and
super resolution (densify a regular grid with zero-velocity inserted nodes,
then recover the hidden half of the original measurements).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import FlowGraph, FlowSnapshot, build_knn_graph


class MaskEmptyError(ValueError):
    """Raised when a keep fraction rounds down to zero retained nodes."""


class NonGridError(ValueError):
    """Raised when node insertion is asked of a point set that is not a
    uniformly spaced rectangular grid."""


@dataclass(frozen=True, eq=False)
class SparseSample:
    """A reconstruction task: sparsified inputs plus dense targets.

    graph.node_features carry the visible data: velocity columns are zeroed
    and the indicator column is 0.0 wherever keep_mask is False. target holds
    the full (n, 2) velocity field; eval_mask selects the rows on which
    reconstruction error is scored (all rows for random masking, the hidden
    original nodes for super resolution).
    """

    graph: FlowGraph
    keep_mask: np.ndarray   # (n,) bool
    target: np.ndarray      # (n, 2) float64
    eval_mask: np.ndarray   # (n,) bool

    def __post_init__(self):
        n = self.graph.n_nodes
        keep = np.asarray(self.keep_mask, dtype=bool)
        evalm = np.asarray(self.eval_mask, dtype=bool)
        target = np.asarray(self.target, dtype=np.float64)
        if keep.shape != (n,) or evalm.shape != (n,) or target.shape != (n, 2):
            raise ValueError("sample arrays inconsistent with graph size")
        if keep.sum() < 1:
            raise MaskEmptyError("a sample must retain at least one node")
        if evalm.sum() < 1:
            raise ValueError("eval_mask selects no nodes")
        feats = self.graph.node_features
        hidden = ~keep
        if np.any(feats[hidden, 0:2] != 0.0) or np.any(feats[hidden, 2] != 0.0):
            raise ValueError("hidden nodes must have zero velocity and indicator")
        if np.any(feats[keep, 2] != 1.0):
            raise ValueError("kept nodes must have indicator 1.0")
        for arr in (keep, evalm, target):
            arr.flags.writeable = False
        object.__setattr__(self, "keep_mask", keep)
        object.__setattr__(self, "eval_mask", evalm)
        object.__setattr__(self, "target", target)

    @property
    def n_kept(self) -> int:
        return int(self.keep_mask.sum())


def _masked_graph(graph: FlowGraph, keep: np.ndarray) -> FlowGraph:
    """Copy of `graph` with velocities and indicator blanked outside `keep`.

    Connectivity, distances and coordinates are untouched: masking hides
    values, not geometry.
    """
    feats = graph.node_features.copy()
    feats[~keep, 0:2] = 0.0
    feats[:, 2] = keep.astype(np.float64)
    feats.flags.writeable = False
    return FlowGraph(
        node_features=feats,
        edges=graph.edges,
        edge_distance=graph.edge_distance,
        degree=graph.degree,
        coords=graph.coords,
        length_scale=graph.length_scale,
        k=graph.k,
        k_saturated=graph.k_saturated,
        cad=graph.cad,
        domain_tag=graph.domain_tag,
    )


def mask_random(
    graph: FlowGraph, keep_fraction: float, seed: int
) -> SparseSample:
    """Retain a seeded uniform subset of round(keep_fraction * n) nodes.

    Rounding is half-up, so keep_fraction 0.01 of 2500 nodes keeps exactly
    25. All nodes (kept and hidden) are scored by eval_mask; the target is
    the graph's original velocity field.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    n = graph.n_nodes
    m = int(np.floor(keep_fraction * n + 0.5))
    if m < 1:
        raise MaskEmptyError(
            f"keep_fraction {keep_fraction} of {n} nodes rounds to zero"
        )
    rng = np.random.default_rng(seed)
    kept_idx = rng.choice(n, size=m, replace=False)
    keep = np.zeros(n, dtype=bool)
    keep[kept_idx] = True
    target = graph.node_features[:, 0:2].copy()
    return SparseSample(
        graph=_masked_graph(graph, keep),
        keep_mask=keep,
        target=target,
        eval_mask=np.ones(n, dtype=bool),
    )


def _grid_axes(values: np.ndarray, axis_name: str) -> tuple[np.ndarray, np.ndarray]:
    """Cluster one coordinate column into grid lines.

    Returns (line_positions, line_index_per_point). Uniform spacing is
    enforced to 1e-9 relative tolerance.
    """
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    span = float(sorted_vals[-1] - sorted_vals[0])
    if span <= 0.0:
        raise NonGridError(f"all {axis_name} coordinates coincide")
    tol = 1e-9 * span
    gaps = np.diff(sorted_vals)
    breaks = np.nonzero(gaps > tol)[0]
    # line id for each sorted point, then scatter back to original order
    line_of_sorted = np.zeros(len(values), dtype=np.int64)
    line_of_sorted[breaks + 1] = 1
    line_of_sorted = np.cumsum(line_of_sorted)
    lines = np.array(
        [sorted_vals[line_of_sorted == i].mean() for i in range(line_of_sorted[-1] + 1)]
    )
    if len(lines) < 2:
        raise NonGridError(f"fewer than two distinct {axis_name} grid lines")
    spacing = np.diff(lines)
    mean_sp = spacing.mean()
    dev = float(np.abs(spacing - mean_sp).max() / mean_sp)
    if dev > 1e-9:
        raise NonGridError(
            f"{axis_name} grid lines unevenly spaced: relative deviation {dev:.3e}"
        )
    line_idx = np.empty(len(values), dtype=np.int64)
    line_idx[order] = line_of_sorted
    return lines, line_idx


def insert_intermediate_nodes(snapshot: FlowSnapshot, refine: int) -> FlowSnapshot:
    """Refine a uniform p x q grid snapshot to ((p-1)r+1) x ((q-1)r+1).

    Inserted nodes receive zero velocity; original nodes keep their values
    and their exact coordinates. Provenance lands in the mask column: 1.0 for
    originals (or the original's own mask value when the input snapshot
    already carries one), 0.0 for inserted nodes. The convex hull is
    unchanged because boundary lines are preserved exactly.

    Raises NonGridError (reporting the measured spacing deviation) when the
    input is not a uniformly spaced rectangular grid.
    """
    if refine < 1:
        raise ValueError(f"refine must be >= 1, got {refine}")
    pts = snapshot.points
    xs, ix = _grid_axes(pts[:, 0], "x")
    zs, iz = _grid_axes(pts[:, 1], "z")
    p, q = len(xs), len(zs)
    if p * q != snapshot.n_points:
        raise NonGridError(
            f"{snapshot.n_points} points do not fill a {p} x {q} grid"
        )
    cell = ix * q + iz
    if len(np.unique(cell)) != snapshot.n_points:
        raise NonGridError("grid cells multiply occupied")

    r = refine
    pf, qf = (p - 1) * r + 1, (q - 1) * r + 1
    # exact originals at multiples of r, linear interpolation between lines
    xf = np.empty(pf)
    for i in range(p - 1):
        t = np.arange(r) / r
        xf[i * r : (i + 1) * r] = xs[i] + (xs[i + 1] - xs[i]) * t
    xf[::r] = xs  # keep original coordinates bit-exact
    xf[-1] = xs[-1]
    zf = np.empty(qf)
    for j in range(q - 1):
        t = np.arange(r) / r
        zf[j * r : (j + 1) * r] = zs[j] + (zs[j + 1] - zs[j]) * t
    zf[::r] = zs
    zf[-1] = zs[-1]

    # original coordinates must also stay exact in the point table itself
    fine_pts = np.empty((pf * qf, 2))
    fine_vel = np.zeros((pf * qf, 2))
    fine_mask = np.zeros(pf * qf)
    gx, gz = np.meshgrid(xf, zf, indexing="ij")
    fine_pts[:, 0] = gx.ravel()
    fine_pts[:, 1] = gz.ravel()

    orig_rows = ix * r * qf + iz * r
    fine_pts[orig_rows, 0] = pts[:, 0]
    fine_pts[orig_rows, 1] = pts[:, 1]
    fine_vel[orig_rows] = snapshot.velocities
    if snapshot.mask is not None:
        fine_mask[orig_rows] = snapshot.mask
    else:
        fine_mask[orig_rows] = 1.0

    return FlowSnapshot(
        points=fine_pts,
        velocities=fine_vel,
        cad=snapshot.cad,
        domain_tag=snapshot.domain_tag,
        mask=fine_mask,
    )


def split_half(
    snapshot: FlowSnapshot, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded random split of node indices into equal-size halves.

    Returns (input_idx, eval_idx), sizes ceil(n/2) and floor(n/2), disjoint
    and jointly exhaustive.
    """
    n = snapshot.n_points
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    half = (n + 1) // 2
    return np.sort(perm[:half]), np.sort(perm[half:])


def super_resolution_sample(
    snapshot: FlowSnapshot,
    refine: int,
    seed: int,
    k: int = 8,
    length_scale: float | None = None,
) -> SparseSample:
    """Build the grid super-resolution task from one regular-grid snapshot.

    Half of the measurements (seeded split) become the visible input, the
    grid is refined `refine`-fold with zero-velocity inserted nodes, and the
    hidden half are the evaluation targets. On a 39 x 39 PIV grid with
    refine = 7 this retains ~1% of the output nodes as data.
    """
    input_idx, eval_idx = split_half(snapshot, seed)
    n = snapshot.n_points
    vis = np.zeros(n, dtype=bool)
    vis[input_idx] = True
    masked = FlowSnapshot(
        points=snapshot.points,
        velocities=snapshot.velocities * vis[:, None],
        cad=snapshot.cad,
        domain_tag=snapshot.domain_tag,
        mask=vis.astype(np.float64),
    )
    fine = insert_intermediate_nodes(masked, refine)
    keep = fine.mask == 1.0
    graph = _masked_graph(
        build_knn_graph(fine, k=k, length_scale=length_scale), keep
    )

    # recover where each original row landed: coordinates are preserved
    # bit-exactly through refinement, so byte keys match
    pos_of = {fine.points[i].tobytes(): i for i in range(fine.n_points)}
    orig_rows = np.array([pos_of[snapshot.points[i].tobytes()] for i in range(n)])

    evalm = np.zeros(fine.n_points, dtype=bool)
    evalm[orig_rows[eval_idx]] = True
    target = np.zeros((fine.n_points, 2))
    target[orig_rows] = snapshot.velocities
    return SparseSample(
        graph=graph, keep_mask=keep, target=target, eval_mask=evalm
    )
