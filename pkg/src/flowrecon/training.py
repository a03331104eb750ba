"""Losses, the Adam optimizer, plateau scheduling, and the training loop.

Training runs one graph per optimization step: samples are shuffled each
epoch with a seeded generator, the masked MSE is differentiated through the
whole network (feature propagation is treated as constant input), and Adam
updates every parameter including the diffusion strength. Validation loss
after each epoch drives a reduce-on-plateau schedule; the parameters with
the best validation loss are the ones returned.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .featprop import propagate_features
from .model import GacnModel, assemble_inputs, forward_tape, init_glorot
from .sparsify import SparseSample

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
PLATEAU_MIN_DELTA = 1e-6
MIN_LR = 1e-7
DIVERGENCE_LOSS = 1e6


class NonFiniteGradientError(FloatingPointError):
    """Raised when backward produces NaN/inf, naming the offending tensor."""


class TrainingDivergedError(RuntimeError):
    """Raised when the train loss explodes; carries the history so far."""

    def __init__(self, message: str, history: "TrainHistory"):
        super().__init__(message)
        self.history = history


# ---------------------------------------------------------------------------
# losses


def mse_loss(pred: np.ndarray, target: np.ndarray, eval_mask: np.ndarray) -> float:
    """Mean squared error over masked nodes and both velocity components."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    mask = np.asarray(eval_mask, dtype=bool)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    if not mask.any():
        raise ValueError("mse_loss over an empty mask")
    diff = pred[mask] - target[mask]
    return float(np.mean(diff * diff))


def tv_loss(field: np.ndarray) -> float:
    """Total variation of a p x q grid: (2/N) * sum of |neighbor differences|.

    Out-of-range neighbors are skipped; N = p*q. A diagnostic for
    reconstructions resampled onto grids, not part of the training loss.
    """
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 2:
        raise ValueError(f"tv_loss expects a 2-D grid, got shape {field.shape}")
    n = field.size
    dv = np.abs(np.diff(field, axis=0)).sum()
    dh = np.abs(np.diff(field, axis=1)).sum()
    return float(2.0 / n * (dv + dh))


def total_loss(mse: float, tv: float, alpha_tv: float) -> float:
    """Weighted sum mse + alpha_tv * tv (grid diagnostic)."""
    return float(mse + alpha_tv * tv)


# ---------------------------------------------------------------------------
# gradients


@dataclass(frozen=True)
class BackwardResult:
    loss: float
    grads: dict[str, np.ndarray]

    def __iter__(self):
        return iter((self.loss, self.grads))


def backward(
    model: GacnModel,
    sample: SparseSample,
    propagated: np.ndarray | None = None,
) -> BackwardResult:
    """Loss and exact reverse-mode gradients for one sample.

    The loss is the masked MSE in normalized velocity units. `propagated`
    (physical units) enters as constant input: no gradient flows through
    feature propagation. Gradients cover every parameter; tensors untouched
    by the forward pass get exact zeros. Non-finite gradients raise
    NonFiniteGradientError naming the tensor.
    """
    h0 = assemble_inputs(model, sample, propagated)
    pvars = {k: ad.Var(v) for k, v in model.params.items()}
    pred = forward_tape(model, sample.graph, h0, pvars)
    mask = sample.eval_mask
    idx = np.nonzero(mask)[0]
    target_norm = sample.target[idx] / model.velocity_scale
    err = ad.sub(ad.take_rows_unique(pred, idx), target_norm)
    loss = ad.mean_all(ad.square(err))
    ad.backward(loss)
    grads: dict[str, np.ndarray] = {}
    for name, var in pvars.items():
        g = var.grad if var.grad is not None else np.zeros_like(var.value)
        if not np.isfinite(float(np.asarray(g).sum())):
            raise NonFiniteGradientError(f"non-finite gradient for {name}")
        grads[name] = np.asarray(g)
    return BackwardResult(loss=float(loss.value), grads=grads)


# ---------------------------------------------------------------------------
# optimizer and scheduler


@dataclass(eq=False)
class AdamState:
    """First/second-moment accumulators and the step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def fresh(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            t=0,
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    t = state.t + 1
    bc1 = 1.0 - ADAM_BETA1**t
    bc2 = 1.0 - ADAM_BETA2**t
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for k, p in params.items():
        g = grads[k]
        m = ADAM_BETA1 * state.m[k] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.v[k] + (1.0 - ADAM_BETA2) * (g * g)
        new_params[k] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
        new_m[k] = m
        new_v[k] = v
    return new_params, AdamState(m=new_m, v=new_v, t=t)


def plateau_scheduler(
    val_history: list[float] | np.ndarray,
    patience: int,
    factor: float,
    lr: float,
) -> float:
    """Reduce-on-plateau: lr * factor (floored at 1e-7) when the best
    validation loss has not improved by >= 1e-6 for `patience` consecutive
    epochs at the end of `val_history`; otherwise lr unchanged.
    """
    if not 0.0 < factor < 1.0:
        raise ValueError(f"factor must be in (0,1), got {factor}")
    if patience < 1:
        raise ValueError(f"patience must be >= 1, got {patience}")
    vals = list(map(float, val_history))
    if len(vals) < 2:
        return lr
    best = vals[0]
    stale = 0
    for v in vals[1:]:
        if best - v >= PLATEAU_MIN_DELTA:
            best = v
            stale = 0
        else:
            stale += 1
    if stale >= patience:
        return max(lr * factor, MIN_LR)
    return lr


# ---------------------------------------------------------------------------
# config / history


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-4
    epochs: int = 100
    plateau_patience: int = 10
    plateau_factor: float = 0.5
    keep_fraction: float = 0.01
    seed: int = 0
    validation_fraction: float = 0.2

    def __post_init__(self):
        if self.lr0 <= 0 or self.epochs <= 0 or self.plateau_patience <= 0:
            raise ValueError("lr0, epochs, plateau_patience must be positive")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ValueError(f"plateau_factor must be in (0,1), got {self.plateau_factor}")
        if not 0.0 < self.keep_fraction <= 1.0:
            raise ValueError(f"keep_fraction must be in (0,1], got {self.keep_fraction}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in [0,1)")

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(mapping) - set(known))
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = {}
        for name, f in known.items():
            if name in mapping:
                cast = int if f.type in ("int", int) else float
                kwargs[name] = cast(mapping[name])
        return cls(**kwargs)


@dataclass
class TrainHistory:
    """Per-epoch train loss, validation loss, learning rate, wall seconds."""

    epoch: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def append(self, epoch: int, train_loss: float, val_loss: float, lr: float, seconds: float):
        self.epoch.append(epoch)
        self.train_loss.append(train_loss)
        self.val_loss.append(val_loss)
        self.lr.append(lr)
        self.seconds.append(seconds)

    def __len__(self) -> int:
        return len(self.epoch)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "lr", "seconds"])
        for i in range(len(self)):
            w.writerow(
                [
                    self.epoch[i],
                    repr(self.train_loss[i]),
                    repr(self.val_loss[i]),
                    repr(self.lr[i]),
                    repr(self.seconds[i]),
                ]
            )
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())


# ---------------------------------------------------------------------------
# the loop


def _prepare_propagated(
    samples: list[SparseSample], use_fp: bool, max_iters: int, tol: float
) -> list[np.ndarray | None]:
    """FP output per sample (physical units), or None when FP is off so the
    masked velocities pass through unchanged (zeros at hidden nodes)."""
    if not use_fp:
        return [None] * len(samples)
    out = []
    for s in samples:
        res = propagate_features(
            s.graph, s.graph.node_features[:, 0:2], s.keep_mask,
            max_iters=max_iters, tol=tol,
        )
        out.append(res.values)
    return out


def _val_loss(
    model: GacnModel,
    samples: list[SparseSample],
    propagated: list[np.ndarray | None],
) -> float:
    with ad.no_grad():
        losses = []
        for s, prop in zip(samples, propagated):
            h0 = assemble_inputs(model, s, prop)
            pvars = {k: ad.Var(v) for k, v in model.params.items()}
            pred = forward_tape(model, s.graph, h0, pvars).value
            target_norm = s.target / model.velocity_scale
            losses.append(mse_loss(pred, target_norm, s.eval_mask))
    return float(np.mean(losses))


def train(
    dataset: list[SparseSample],
    config: TrainConfig,
    layer_kind: str = "attention",
    use_fp: bool = True,
    use_bi: bool = True,
    widths: tuple[int, ...] | None = None,
    fp_max_iters: int = 40,
    fp_tol: float = 1e-6,
) -> tuple[GacnModel, TrainHistory]:
    """Train a model on pre-masked samples; returns (best model, history).

    The dataset is split internally: round(validation_fraction * len) samples
    (seeded) are held out to compute the per-epoch validation loss; with no
    validation samples the train loss stands in. The plateau scheduler sees
    the validation history since the last reduction, so its staleness counter
    restarts after each cut. Aborts with TrainingDivergedError (history
    attached) when a step loss exceeds 1e6 or turns non-finite.
    """
    from .model import DEFAULT_WIDTHS

    if not dataset:
        raise ValueError("empty dataset")
    if widths is None:
        widths = DEFAULT_WIDTHS

    rng = np.random.default_rng(config.seed)
    n = len(dataset)
    n_val = int(np.floor(config.validation_fraction * n + 0.5))
    perm = rng.permutation(n)
    val_idx = perm[:n_val]
    train_idx = perm[n_val:]
    if len(train_idx) == 0:
        raise ValueError("validation split leaves no training samples")
    train_samples = [dataset[i] for i in train_idx]
    val_samples = [dataset[i] for i in val_idx]

    # normalization: RMS speed of the training targets
    sq_sum = sum(float(np.sum(s.target**2)) for s in train_samples)
    count = sum(s.target.size for s in train_samples)
    velocity_scale = max(float(np.sqrt(sq_sum / count)), 1e-12)

    g0 = train_samples[0].graph
    model = init_glorot(
        widths=widths,
        layer_kind=layer_kind,
        seed=config.seed,
        velocity_scale=velocity_scale,
        length_scale=g0.length_scale,
        k=g0.k,
        fp_max_iters=fp_max_iters,
        fp_tol=fp_tol,
        use_fp=use_fp,
        use_bi=use_bi,
    )

    prop_train = _prepare_propagated(train_samples, use_fp, fp_max_iters, fp_tol)
    prop_val = _prepare_propagated(val_samples, use_fp, fp_max_iters, fp_tol)

    state = AdamState.fresh(model.params)
    lr = config.lr0
    history = TrainHistory()
    best_val = np.inf
    best_params = {k: v.copy() for k, v in model.params.items()}
    val_since_reduction: list[float] = []

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_samples))
        step_losses = []
        for i in order:
            res = backward(model, train_samples[i], prop_train[i])
            if not np.isfinite(res.loss) or res.loss > DIVERGENCE_LOSS:
                raise TrainingDivergedError(
                    f"training diverged at epoch {epoch}: loss {res.loss}", history
                )
            new_params, state = adam_step(model.params, res.grads, state, lr)
            model = model.with_params(new_params)
            step_losses.append(res.loss)
        train_loss = float(np.mean(step_losses))
        if val_samples:
            val_loss = _val_loss(model, val_samples, prop_val)
        else:
            val_loss = train_loss
        history.append(epoch, train_loss, val_loss, lr, time.perf_counter() - t0)

        if val_loss < best_val:
            best_val = val_loss
            best_params = {k: v.copy() for k, v in model.params.items()}

        val_since_reduction.append(val_loss)
        new_lr = plateau_scheduler(
            val_since_reduction, config.plateau_patience, config.plateau_factor, lr
        )
        if new_lr < lr:
            val_since_reduction = []
        lr = new_lr

    return model.with_params(best_params), history
