"""The graph-attention reconstruction network.

Eight message-passing layers with expanding widths map 5 input features
(masked velocity components, value indicator, normalized coordinates) to a
wide embedding, followed by a linear head producing the two velocity
components. Every layer is followed by a Laplacian diffusion step
H - alpha * L_rw H with one shared learnable alpha = sigmoid(alpha_raw), and
a residual skip connection: identity when widths match, a learned projection
otherwise.

Three interchangeable layer kinds share this wrapper:

- "attention": edge-distance-aware attention. The raw score of edge j -> i
  is LeakyReLU(att . [W h_i || W h_j || d_ij], slope 0.2), softmax-normalized
  over the senders of i including i itself (self distance 0), then used to
  weight the summed messages W h_j.
- "gcn": mean over the closed neighborhood of the transformed features,
  h' = ELU(A_hat H W + b) with row-stochastic A_hat.
- "mean_aggregator": h' = ELU([h_i || mean_{j in N(i)} h_j] W + b); the top
  rows of W act as W_self, the bottom rows as W_neigh.

All arithmetic is float64; identical inputs give bit-identical outputs.
The public layer functions are plain numpy and serve as the reference the
taped training path is verified against.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import _kernels, autodiff as ad
from .graph import FlowGraph, GraphLayout, SparseOperator
from .sparsify import SparseSample

N_FEATURES = 5
N_OUTPUTS = 2
DEFAULT_WIDTHS = (8, 16, 32, 64, 128, 256, 256, 256)
LAYER_KINDS = ("attention", "gcn", "mean_aggregator")
LEAKY_SLOPE = 0.2


class NonFiniteActivationError(FloatingPointError):
    """Raised when a forward pass produces NaN or infinity."""


class CheckpointError(ValueError):
    """Raised for malformed checkpoint files."""


@dataclass(frozen=True, eq=False)
class LayerParams:
    """Parameters of one message-passing layer.

    att is the attention vector of length 2*F_out + 1 (destination slots,
    source slots, then the scalar distance weight); None for layer kinds
    that do not attend. skip_proj is the residual projection used when
    F_in != F_out, None otherwise.
    """

    weight: np.ndarray
    bias: np.ndarray
    att: np.ndarray | None = None
    skip_proj: np.ndarray | None = None


@dataclass(eq=False)
class GacnModel:
    """Parameter container plus preprocessing constants baked at training.

    params maps flat names ("layers.0.weight", ..., "head.bias",
    "alpha_raw") to float64 arrays; `layer(i)` exposes the structured view.
    velocity_scale is the RMS speed of the training set (inputs divided by
    it, outputs multiplied back). length_scale and k pin graph construction;
    fp_max_iters/fp_tol pin feature propagation; use_fp/use_bi record which
    input branches were active during training so reconstruction replays
    them.
    """

    layer_kind: str
    widths: tuple[int, ...]
    params: dict[str, np.ndarray]
    velocity_scale: float = 1.0
    length_scale: float = 1.0
    k: int = 8
    fp_max_iters: int = 40
    fp_tol: float = 1e-6
    use_fp: bool = True
    use_bi: bool = True

    @property
    def n_layers(self) -> int:
        return len(self.widths)

    @property
    def alpha(self) -> float:
        """Diffusion strength sigmoid(alpha_raw), in (0, 1)."""
        return float(1.0 / (1.0 + np.exp(-self.params["alpha_raw"])))

    def layer(self, i: int) -> LayerParams:
        return LayerParams(
            weight=self.params[f"layers.{i}.weight"],
            bias=self.params[f"layers.{i}.bias"],
            att=self.params.get(f"layers.{i}.att"),
            skip_proj=self.params.get(f"layers.{i}.skip"),
        )

    def with_params(self, params: dict[str, np.ndarray]) -> "GacnModel":
        return replace(self, params=params)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_glorot(
    widths: tuple[int, ...] = DEFAULT_WIDTHS,
    layer_kind: str = "attention",
    seed: int = 0,
    **meta,
) -> GacnModel:
    """Fresh model: Glorot-uniform weights, zero biases, alpha_raw zero.

    Draw order is fixed (per layer: weight, attention vector, skip
    projection; then head) so a seed pins every parameter. Attention vectors
    are treated as (2*width+1) x 1 matrices for the fan computation.
    alpha_raw = 0 puts the diffusion strength at sigmoid(0) = 0.5.
    """
    if layer_kind not in LAYER_KINDS:
        raise ValueError(f"layer_kind must be one of {LAYER_KINDS}, got {layer_kind!r}")
    widths = tuple(int(w) for w in widths)
    if len(widths) < 1 or any(w < 1 for w in widths):
        raise ValueError(f"invalid widths {widths}")
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    f_in = N_FEATURES
    for i, f_out in enumerate(widths):
        w_rows = 2 * f_in if layer_kind == "mean_aggregator" else f_in
        params[f"layers.{i}.weight"] = _glorot(rng, w_rows, f_out, (w_rows, f_out))
        if layer_kind == "attention":
            a_len = 2 * f_out + 1
            params[f"layers.{i}.att"] = _glorot(rng, a_len, 1, (a_len,))
        params[f"layers.{i}.bias"] = np.zeros(f_out)
        if f_in != f_out:
            params[f"layers.{i}.skip"] = _glorot(rng, f_in, f_out, (f_in, f_out))
        f_in = f_out
    params["head.weight"] = _glorot(rng, f_in, N_OUTPUTS, (f_in, N_OUTPUTS))
    params["head.bias"] = np.zeros(N_OUTPUTS)
    params["alpha_raw"] = np.zeros(())
    return GacnModel(layer_kind=layer_kind, widths=widths, params=params, **meta)


def param_count(model: GacnModel) -> int:
    """Total number of trainable scalars, alpha_raw included."""
    return int(sum(p.size for p in model.params.values()))


# ---------------------------------------------------------------------------
# reference layer forwards (numpy, no tape)


def _elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, x, np.expm1(np.minimum(x, 0.0)))


def attention_coefficients(
    params: LayerParams, graph: FlowGraph, h: np.ndarray
) -> np.ndarray:
    """Per-edge attention weights of one layer.

    Returned over the graph's canonical edge layout (dst-major, one
    self-loop per node with distance 0): entry k weighs the message sent
    along layout edge k. For every destination the weights over its segment
    sum to 1 up to roundoff.
    """
    lay = graph.layout
    f_out = params.weight.shape[1]
    att = params.att
    if att is None or len(att) != 2 * f_out + 1:
        raise ValueError("attention vector missing or mis-sized")
    hp = h @ params.weight
    s_dst = hp @ att[:f_out]
    s_src = hp @ att[f_out : 2 * f_out]
    e = s_dst[lay.dst] + s_src[lay.src] + att[2 * f_out] * lay.dist
    e = np.where(e > 0.0, e, LEAKY_SLOPE * e)
    if not np.isfinite(float(e.sum())):
        raise NonFiniteActivationError("non-finite attention scores")
    starts = lay.indptr[:-1]
    m = np.maximum.reduceat(e, starts)
    z = np.exp(e - m[lay.dst])
    s = np.add.reduceat(z, starts)
    return z / s[lay.dst]


def gat_layer_forward(
    params: LayerParams, graph: FlowGraph, h: np.ndarray
) -> np.ndarray:
    """h'_i = ELU(sum_j alpha_ij W h_j + bias), j over N(i) and i itself."""
    lay = graph.layout
    alpha = attention_coefficients(params, graph, h)
    hp = np.ascontiguousarray(h @ params.weight)
    agg = _kernels.weighted_neighbor_sum(
        lay.indptr, lay.src, alpha, hp, np.empty_like(hp)
    )
    return _elu(agg + params.bias)


def gcn_layer_forward(
    params: LayerParams, graph: FlowGraph, h: np.ndarray
) -> np.ndarray:
    """h' = ELU(A_hat H W + bias), A_hat the closed-neighborhood mean."""
    lay = graph.layout
    hp = np.ascontiguousarray(h @ params.weight)
    agg = _kernels.weighted_neighbor_sum(
        lay.indptr, lay.src, graph.gcn_weights, hp, np.empty_like(hp)
    )
    return _elu(agg + params.bias)


def sage_layer_forward(
    params: LayerParams, graph: FlowGraph, h: np.ndarray
) -> np.ndarray:
    """h' = ELU(W_self h_i + W_neigh mean_j h_j + bias).

    W_self is the top half of params.weight, W_neigh the bottom half.
    """
    lay = graph.layout
    h = np.ascontiguousarray(h)
    neigh = _kernels.weighted_neighbor_sum(
        lay.indptr, lay.src, graph.rw_weights, h, np.empty_like(h)
    )
    both = np.concatenate([h, neigh], axis=1)
    return _elu(both @ params.weight + params.bias)


def laplacian_diffusion(
    h: np.ndarray, lap: SparseOperator, alpha: float
) -> np.ndarray:
    """H - alpha * L H, equivalently (1-alpha) H + alpha A_rw H.

    With alpha in (0, 1) each output entry is a convex combination of input
    entries, so per-column min/max never expand.
    """
    return h - alpha * lap.apply(h)


# ---------------------------------------------------------------------------
# taped forward (training path)


def _edge_aggregate(alpha: ad.Var, x: ad.Var, lay: GraphLayout) -> ad.Var:
    """Attention-weighted neighbor sum with gradients for alpha and x."""
    va, vx = alpha.value, np.ascontiguousarray(x.value)
    out = _kernels.weighted_neighbor_sum(
        lay.indptr, lay.src, va, vx, np.empty_like(vx)
    )

    def vjp(g):
        g = np.ascontiguousarray(g)
        dalpha = _kernels.edge_dot(
            lay.indptr, lay.src, g, vx, np.empty(lay.n_edges)
        )
        dx = _kernels.weighted_neighbor_sum(
            lay.indptr_t, lay.dst_t, va[lay.trans_perm], g, np.empty_like(vx)
        )
        return (dalpha, dx)

    return ad.custom(out, (alpha, x), vjp)


def _fixed_aggregate(
    x: ad.Var, lay: GraphLayout, data: np.ndarray, data_t: np.ndarray
) -> ad.Var:
    """Neighbor sum with constant edge weights; adjoint uses the transpose."""
    vx = np.ascontiguousarray(x.value)
    out = _kernels.weighted_neighbor_sum(lay.indptr, lay.src, data, vx, np.empty_like(vx))

    def vjp(g):
        g = np.ascontiguousarray(g)
        dx = _kernels.weighted_neighbor_sum(
            lay.indptr_t, lay.dst_t, data_t, g, np.empty_like(vx)
        )
        return (dx,)

    return ad.custom(out, (x,), vjp)


def _attention_layer(p: dict[str, ad.Var], i: int, lay: GraphLayout, h: ad.Var) -> ad.Var:
    w, att, bias = p[f"layers.{i}.weight"], p[f"layers.{i}.att"], p[f"layers.{i}.bias"]
    f_out = w.value.shape[1]
    hp = ad.matmul(h, w)
    s_dst = ad.matvec(hp, ad.narrow(att, 0, f_out))
    s_src = ad.matvec(hp, ad.narrow(att, f_out, 2 * f_out))
    a_d = ad.narrow(att, 2 * f_out, 2 * f_out + 1)
    e = ad.add(
        ad.add(ad.take1d(s_dst, lay.dst), ad.take1d(s_src, lay.src)),
        ad.mul(a_d, lay.dist),
    )
    alpha = ad.segment_softmax(ad.leaky_relu(e, LEAKY_SLOPE), lay.indptr, lay.dst)
    return ad.elu(ad.add(_edge_aggregate(alpha, hp, lay), bias))


def _gcn_layer(p: dict[str, ad.Var], i: int, graph: FlowGraph, h: ad.Var) -> ad.Var:
    w, bias = p[f"layers.{i}.weight"], p[f"layers.{i}.bias"]
    agg = _fixed_aggregate(
        ad.matmul(h, w), graph.layout, graph.gcn_weights, graph.gcn_weights_t
    )
    return ad.elu(ad.add(agg, bias))


def _mean_layer(p: dict[str, ad.Var], i: int, graph: FlowGraph, h: ad.Var) -> ad.Var:
    w, bias = p[f"layers.{i}.weight"], p[f"layers.{i}.bias"]
    neigh = _fixed_aggregate(h, graph.layout, graph.rw_weights, graph.rw_weights_t)
    return ad.elu(ad.add(ad.matmul(ad.concat_cols(h, neigh), w), bias))


def _check_finite(x: ad.Var, label: str) -> None:
    if not np.isfinite(float(x.value.sum())):
        raise NonFiniteActivationError(f"non-finite activations after {label}")


def forward_tape(
    model: GacnModel,
    graph: FlowGraph,
    h0: np.ndarray,
    param_vars: dict[str, ad.Var],
) -> ad.Var:
    """Run the network on assembled input features, recording the tape.

    Per layer: message passing, then Laplacian diffusion with the shared
    alpha, then the residual skip. Returns normalized-unit predictions of
    shape (n, 2). Raises NonFiniteActivationError naming the first layer
    whose output is not finite.
    """
    lay = graph.layout
    alpha = ad.sigmoid(param_vars["alpha_raw"])
    h = ad.Var(h0)
    for i in range(model.n_layers):
        if model.layer_kind == "attention":
            m = _attention_layer(param_vars, i, lay, h)
        elif model.layer_kind == "gcn":
            m = _gcn_layer(param_vars, i, graph, h)
        else:
            m = _mean_layer(param_vars, i, graph, h)
        lap = ad.sub(m, _fixed_aggregate(m, lay, graph.rw_weights, graph.rw_weights_t))
        diffused = ad.sub(m, ad.mul(lap, alpha))
        skip_name = f"layers.{i}.skip"
        skipped = ad.matmul(h, param_vars[skip_name]) if skip_name in param_vars else h
        h = ad.add(diffused, skipped)
        _check_finite(h, f"layer {i} ({model.layer_kind})")
    out = ad.add(ad.matmul(h, param_vars["head.weight"]), param_vars["head.bias"])
    _check_finite(out, "head")
    return out


def assemble_inputs(
    model: GacnModel,
    sample: SparseSample,
    propagated: np.ndarray | None,
) -> np.ndarray:
    """Build the (n, 5) input feature matrix in normalized units.

    propagated: physical-unit velocity estimate at every node (feature
    propagation output), or None to use the sample's masked velocities as-is
    (zeros at hidden nodes). The indicator column is forced to 1.0 when the
    model was trained without it.
    """
    feats = sample.graph.node_features
    h0 = feats.copy()
    if propagated is not None:
        if propagated.shape != (sample.graph.n_nodes, 2):
            raise ValueError(f"propagated has shape {propagated.shape}")
        h0[:, 0:2] = propagated
    h0[:, 0:2] /= model.velocity_scale
    if not model.use_bi:
        h0[:, 2] = 1.0
    return h0


def gacn_forward(
    model: GacnModel,
    sample: SparseSample,
    propagated: np.ndarray | None = None,
) -> np.ndarray:
    """Reconstruct the velocity field of one sample, in physical units."""
    h0 = assemble_inputs(model, sample, propagated)
    with ad.no_grad():
        pvars = {k: ad.Var(v) for k, v in model.params.items()}
        out = forward_tape(model, sample.graph, h0, pvars)
    return out.value * model.velocity_scale


# ---------------------------------------------------------------------------
# checkpoint io

_CHECKPOINT_MAGIC = "flowrecon-checkpoint"


def save_checkpoint(model: GacnModel, path: str | Path) -> None:
    """Write one JSON header line (metadata plus parameter names and shapes
    in payload order), then the concatenated little-endian float64 values."""
    names = list(model.params)
    header = {
        "format": _CHECKPOINT_MAGIC,
        "version": 1,
        "layer_kind": model.layer_kind,
        "widths": list(model.widths),
        "n_features": N_FEATURES,
        "velocity_scale": model.velocity_scale,
        "length_scale": model.length_scale,
        "k": model.k,
        "fp_max_iters": model.fp_max_iters,
        "fp_tol": model.fp_tol,
        "use_fp": model.use_fp,
        "use_bi": model.use_bi,
        "params": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
    }
    with open(Path(path), "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        for n in names:
            fh.write(np.ascontiguousarray(model.params[n], dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> GacnModel:
    path = Path(path)
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc
    if header.get("format") != _CHECKPOINT_MAGIC:
        raise CheckpointError(f"not a checkpoint file: {path}")
    if header.get("version") != 1:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
    params: dict[str, np.ndarray] = {}
    offset = 0
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
        chunk = payload[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError("checkpoint payload truncated")
        params[entry["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError("checkpoint payload has trailing bytes")
    return GacnModel(
        layer_kind=header["layer_kind"],
        widths=tuple(header["widths"]),
        params=params,
        velocity_scale=float(header["velocity_scale"]),
        length_scale=float(header["length_scale"]),
        k=int(header["k"]),
        fp_max_iters=int(header["fp_max_iters"]),
        fp_tol=float(header["fp_tol"]),
        use_fp=bool(header["use_fp"]),
        use_bi=bool(header["use_bi"]),
    )
