"""Command-line interface: gen-data, train, reconstruct, evaluate, ablate.

All commands share `--config` (flat key = value text), `--seed`, and
`--out`. Output is data files plus a short stdout summary; any failure
prints a single `error: ...` line to stderr and exits nonzero.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bench import BenchmarkSettings, build_benchmark, mask_snapshots
from .datagen import (
    DatasetSizes,
    DomainSpec,
    SpectrumSpec,
    load_manifest,
    load_snapshot,
    make_dataset,
    save_manifest,
    save_snapshot,
)
from .evaluate import evaluate_methods, reconstruct_sample, run_ablation
from .graph import build_knn_graph
from .model import DEFAULT_WIDTHS, load_checkpoint, param_count, save_checkpoint
from .sparsify import SparseSample, _masked_graph, mask_random
from .training import TrainConfig, train


class CliError(ValueError):
    """User-facing failure with a one-line message."""


def _read_config(path: str | None) -> dict[str, str]:
    """Flat `key = value` text; blank lines and # comments ignored."""
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise CliError(f"config file not found: {path}")
    out: dict[str, str] = {}
    for ln, line in enumerate(p.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise CliError(f"{path}:{ln}: expected key = value")
        key, _, val = stripped.partition("=")
        out[key.strip()] = val.strip()
    return out


class _Config:
    """Typed access over the flat mapping; tracks unknown keys."""

    def __init__(self, raw: dict[str, str]):
        self.raw = dict(raw)
        self.used: set[str] = set()

    def _get(self, key, cast, default):
        if key in self.raw:
            self.used.add(key)
            try:
                return cast(self.raw[key])
            except ValueError as exc:
                raise CliError(f"config key {key}: {exc}") from exc
        return default

    def get_int(self, key, default):
        return self._get(key, int, default)

    def get_float(self, key, default):
        return self._get(key, float, default)

    def get_str(self, key, default):
        return self._get(key, str, default)

    def get_bool(self, key, default):
        def cast(s):
            low = s.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {s}")

        return self._get(key, cast, default)

    def get_widths(self, key, default):
        def cast(s):
            return tuple(int(tok) for tok in s.split(",") if tok.strip())

        return self._get(key, cast, default)

    def reject_unknown(self):
        unknown = set(self.raw) - self.used
        if unknown:
            raise CliError(f"unknown config keys: {', '.join(sorted(unknown))}")


def _train_config(cfg: _Config, seed: int) -> TrainConfig:
    return TrainConfig(
        lr0=cfg.get_float("lr0", 1e-4),
        epochs=cfg.get_int("epochs", 100),
        plateau_patience=cfg.get_int("plateau_patience", 10),
        plateau_factor=cfg.get_float("plateau_factor", 0.5),
        keep_fraction=cfg.get_float("keep_fraction", 0.01),
        seed=seed,
        validation_fraction=cfg.get_float("validation_fraction", 0.2),
    )


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _float_str(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# gen-data


def _domain_from(cfg: _Config) -> DomainSpec:
    return DomainSpec(
        width=cfg.get_float("domain_width", 1.0),
        height_max=cfg.get_float("domain_height_max", 1.0),
        height_min=cfg.get_float("domain_height_min", 0.5),
        cad_range=(
            cfg.get_float("cad_range_lo", -120.0),
            cfg.get_float("cad_range_hi", -60.0),
        ),
    )


def _spectrum_from(cfg: _Config) -> SpectrumSpec:
    return SpectrumSpec(
        n_modes=cfg.get_int("spectrum_modes", 24),
        k_min=cfg.get_float("spectrum_k_min", 4.0),
        k_max=cfg.get_float("spectrum_k_max", 16.0),
        decay=cfg.get_float("spectrum_decay", 1.0),
        amplitude=cfg.get_float("spectrum_amplitude", 1.0),
        mean_flow=cfg.get_float("spectrum_mean_flow", 0.0),
    )


def _cad_values(cfg: _Config) -> list[float]:
    start = cfg.get_float("cad_start", -120.0)
    stop = cfg.get_float("cad_stop", -60.0)
    step = cfg.get_float("cad_step", 10.0)
    if step <= 0 or stop < start:
        raise CliError("need cad_start <= cad_stop and cad_step > 0")
    return [start + i * step for i in range(int((stop - start) / step) + 1)]


def cmd_gen_data(args) -> int:
    cfg = _Config(_read_config(args.config))
    domain = _domain_from(cfg)
    spectrum = _spectrum_from(cfg)
    sizes = DatasetSizes(
        panel_points=(
            cfg.get_int("panel_points_min", 1000),
            cfg.get_int("panel_points_max", 4000),
        ),
        slice_points=(
            cfg.get_int("slice_points_min", 8000),
            cfg.get_int("slice_points_max", 32000),
        ),
        n_slices=cfg.get_int("n_slices", 4),
        ratios=(
            cfg.get_float("ratio_train", 0.7),
            cfg.get_float("ratio_val", 0.2),
            cfg.get_float("ratio_test", 0.1),
        ),
        jitter=cfg.get_float("jitter", 0.5),
    )
    cads = _cad_values(cfg)
    per_cad = cfg.get_int("per_cad", 5)
    cfg.reject_unknown()

    splits = make_dataset(domain, cads, spectrum, per_cad, sizes=sizes, seed=args.seed)
    out = _out_dir(args)
    snap_dir = out / "snapshots"
    snap_dir.mkdir(exist_ok=True)
    manifest_rows = []
    counters: dict[str, int] = {}
    for split, snap in splits.all_snapshots():
        idx = counters.get(split, 0)
        counters[split] = idx + 1
        rel = f"snapshots/{split}_{idx:04d}.csv"
        save_snapshot(snap, out / rel)
        manifest_rows.append((rel, split, snap.cad, snap.n_points))
    save_manifest(manifest_rows, out / "manifest.csv")
    print(
        f"wrote {len(manifest_rows)} snapshots "
        f"({counters.get('train', 0)} train / {counters.get('val', 0)} val / "
        f"{counters.get('test', 0)} test) to {out}"
    )
    return 0


# ---------------------------------------------------------------------------
# train


def _load_split_snapshots(data_dir: Path, wanted: tuple[str, ...]):
    manifest = data_dir / "manifest.csv"
    if not manifest.exists():
        raise CliError(f"no manifest.csv under {data_dir}")
    rows = load_manifest(manifest)
    out = []
    for row in rows:
        if row["split"] in wanted:
            out.append(load_snapshot(data_dir / row["path"]))
    if not out:
        raise CliError(f"no snapshots with split in {wanted} found in {manifest}")
    return out


def cmd_train(args) -> int:
    cfg = _Config(_read_config(args.config))
    tconf = _train_config(cfg, args.seed)
    layer_kind = cfg.get_str("layer_kind", "attention")
    use_fp = cfg.get_bool("use_fp", True)
    use_bi = cfg.get_bool("use_bi", True)
    widths = cfg.get_widths("widths", DEFAULT_WIDTHS)
    k = cfg.get_int("knn_k", 8)
    fp_max_iters = cfg.get_int("fp_max_iters", 40)
    fp_tol = cfg.get_float("fp_tol", 1e-6)
    cfg.reject_unknown()

    data_dir = Path(args.data)
    snaps = _load_split_snapshots(data_dir, ("train", "val"))
    samples = mask_snapshots(snaps, tconf.keep_fraction, k, seed=tconf.seed + 1)
    model, history = train(
        samples, tconf, layer_kind=layer_kind, use_fp=use_fp, use_bi=use_bi,
        widths=widths, fp_max_iters=fp_max_iters, fp_tol=fp_tol,
    )
    out = _out_dir(args)
    save_checkpoint(model, out / "checkpoint.bin")
    history.write_csv(out / "history.csv")
    best = min(history.val_loss) if history.val_loss else float("nan")
    print(
        f"trained {layer_kind} model ({param_count(model)} parameters, "
        f"{len(samples)} snapshots, {tconf.epochs} epochs); "
        f"best validation loss {best:.6g}; checkpoint at {out / 'checkpoint.bin'}"
    )
    return 0


# ---------------------------------------------------------------------------
# reconstruct


def cmd_reconstruct(args) -> int:
    cfg = _Config(_read_config(args.config))
    keep_fraction = cfg.get_float("keep_fraction", 0.01)
    cfg.reject_unknown()
    model = load_checkpoint(args.checkpoint)
    snap = load_snapshot(args.input)
    graph = build_knn_graph(snap, k=model.k)
    if snap.mask is not None:
        keep = snap.mask == 1.0
        sample = SparseSample(
            graph=_masked_graph(graph, keep),
            keep_mask=keep,
            target=snap.velocities,
            eval_mask=np.ones(snap.n_points, dtype=bool),
        )
    else:
        sample = mask_random(graph, keep_fraction, args.seed)
    pred = reconstruct_sample(model, sample)
    out = _out_dir(args)
    dest = out / "reconstruction.csv"
    buf = io.StringIO()
    buf.write("x,z,u_x_pred,u_z_pred\n")
    for i in range(snap.n_points):
        buf.write(
            f"{_float_str(snap.points[i, 0])},{_float_str(snap.points[i, 1])},"
            f"{_float_str(pred[i, 0])},{_float_str(pred[i, 1])}\n"
        )
    dest.write_text(buf.getvalue())
    print(f"reconstructed {snap.n_points} nodes ({sample.n_kept} retained) -> {dest}")
    return 0


# ---------------------------------------------------------------------------
# evaluate


def _report_row(r) -> dict:
    return {
        "snapshot": r.snapshot,
        "method": r.method,
        "mae": r.mae,
        "rmse": r.rmse,
        "r2": r.r2,
        "n_eval": r.n_eval,
    }


def cmd_evaluate(args) -> int:
    cfg = _Config(_read_config(args.config))
    keep_fraction = cfg.get_float("keep_fraction", 0.01)
    k = cfg.get_int("knn_k", 8)
    split = cfg.get_str("split", "test")
    cfg.reject_unknown()
    model = load_checkpoint(args.checkpoint)
    snaps = _load_split_snapshots(Path(args.data), (split,))
    samples = mask_snapshots(snaps, keep_fraction, k, seed=args.seed + 2)
    table = evaluate_methods(samples, model)

    out = _out_dir(args)
    rows = [_report_row(r) for r in table.reports]
    (out / "report.json").write_text(
        json.dumps(
            {"rows": rows, "aggregates": table.aggregates},
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["snapshot", "method", "mae", "rmse", "r2", "n_eval"])
    for r in table.reports:
        w.writerow([r.snapshot, r.method, _float_str(r.mae), _float_str(r.rmse),
                    _float_str(r.r2), r.n_eval])
    (out / "report.csv").write_text(buf.getvalue())
    g = table.aggregates["gacn"]["all"]["mae"]["mean"]
    c = table.aggregates["cubic"]["all"]["mae"]["mean"]
    print(
        f"evaluated {len(samples)} snapshots: mean MAE gacn {g:.6g}, cubic {c:.6g}; "
        f"reports in {out}"
    )
    return 0


# ---------------------------------------------------------------------------
# ablate


def _benchmark_settings(cfg: _Config, seed: int) -> BenchmarkSettings:
    base = BenchmarkSettings()
    spectrum = replace(
        base.spectrum,
        n_modes=cfg.get_int("spectrum_modes", base.spectrum.n_modes),
        k_min=cfg.get_float("spectrum_k_min", base.spectrum.k_min),
        k_max=cfg.get_float("spectrum_k_max", base.spectrum.k_max),
        decay=cfg.get_float("spectrum_decay", base.spectrum.decay),
        mean_flow=cfg.get_float("spectrum_mean_flow", base.spectrum.mean_flow),
    )
    return replace(
        base,
        seed=seed,
        per_cad=cfg.get_int("per_cad", base.per_cad),
        pool_size=cfg.get_int("pool_size", base.pool_size),
        panel_points=(
            cfg.get_int("panel_points_min", base.panel_points[0]),
            cfg.get_int("panel_points_max", base.panel_points[1]),
        ),
        slice_points=(
            cfg.get_int("slice_points_min", base.slice_points[0]),
            cfg.get_int("slice_points_max", base.slice_points[1]),
        ),
        n_slices=cfg.get_int("n_slices", base.n_slices),
        keep_fraction=cfg.get_float("keep_fraction", base.keep_fraction),
        k=cfg.get_int("knn_k", base.k),
        widths=cfg.get_widths("widths", base.widths),
        epochs=cfg.get_int("epochs", base.epochs),
        lr0=cfg.get_float("lr0", base.lr0),
        fp_max_iters=cfg.get_int("fp_max_iters", base.fp_max_iters),
        fp_tol=cfg.get_float("fp_tol", base.fp_tol),
        spectrum=spectrum,
    )


def ablation_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "layer_kind", "use_fp", "use_bi", "status", "mae", "rmse", "r2"])
    for r in rows:
        w.writerow(
            [
                r.label, r.layer_kind, int(r.use_fp), int(r.use_bi), r.status,
                _float_str(r.mae), _float_str(r.rmse), _float_str(r.r2),
            ]
        )
    return buf.getvalue()


def cmd_ablate(args) -> int:
    cfg = _Config(_read_config(args.config))
    settings = _benchmark_settings(cfg, args.seed)
    cfg.reject_unknown()
    dataset, tconf = build_benchmark(settings)
    tconf = replace(tconf, lr0=settings.lr0, epochs=settings.epochs)
    rows = run_ablation(
        dataset, tconf, widths=settings.widths,
        fp_max_iters=settings.fp_max_iters, fp_tol=settings.fp_tol,
    )
    out = _out_dir(args)
    (out / "report.csv").write_text(ablation_csv(rows))
    payload = {
        "rows": [
            {
                "label": r.label, "layer_kind": r.layer_kind,
                "use_fp": r.use_fp, "use_bi": r.use_bi, "status": r.status,
                "mae": r.mae, "rmse": r.rmse, "r2": r.r2,
            }
            for r in rows
        ],
        "settings": {
            "seed": settings.seed,
            "pool_size": settings.pool_size,
            "epochs": settings.epochs,
            "keep_fraction": settings.keep_fraction,
            "widths": list(settings.widths),
            "lr0": settings.lr0,
        },
    }
    (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    for r in rows:
        print(f"{r.label:>16}: status={r.status} mae={r.mae:.6g} rmse={r.rmse:.6g} r2={r.r2:.6g}")
    print(f"reports in {out}")
    return 0


# ---------------------------------------------------------------------------


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="flowrecon",
        description="Sparse flow-field reconstruction on unstructured point clouds",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="flat key = value config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="out", help="output directory")

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    common(p)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a reconstruction model")
    common(p)
    p.add_argument("--data", required=True, help="directory from gen-data")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("reconstruct", help="reconstruct one snapshot CSV")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="snapshot CSV")
    p.set_defaults(fn=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="score a checkpoint against the cubic baseline")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="directory from gen-data")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("ablate", help="run the five-variant ablation benchmark")
    common(p)
    p.set_defaults(fn=cmd_ablate)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # single-line machine-parsable failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
