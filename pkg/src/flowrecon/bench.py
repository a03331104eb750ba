"""The default synthetic benchmark: data, masking, and profile constants.

One seed pins everything: the synthetic dataset (280 panels across 14 crank
angles, 250 of them forming the training pool, 30 + 6 larger slices the test
set), the per-sample masks, and the training runs. The field spectrum is
rough (decay exponent 1.0 over wavenumbers 2..24) with a bulk drift term on
top, so a 1% mask leaves the fine scales genuinely unresolved; propagation
gets 400 fill iterations because at that retention the diffusion front needs
a few hundred sweeps to cross the inter-sensor gaps. The four-layer width
schedule keeps the five-variant ablation grid inside a desktop-CPU budget;
ordering comparisons, not absolute errors, are the benchmark's output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import DatasetSizes, DomainSpec, SpectrumSpec, make_dataset
from .evaluate import ReconstructionDataset
from .graph import FlowSnapshot, build_knn_graph
from .sparsify import SparseSample, mask_random
from .training import TrainConfig

BENCHMARK_WIDTHS = (8, 16, 32, 32)


@dataclass(frozen=True)
class BenchmarkSettings:
    """Everything the `ablate` harness needs, in one seeded bundle."""

    seed: int = 2024
    cad_values: tuple[float, ...] = tuple(float(c) for c in range(-120, -50, 5))
    per_cad: int = 20
    panel_points: tuple[int, int] = (1000, 4000)
    slice_points: tuple[int, int] = (8000, 32000)
    n_slices: int = 6
    pool_size: int = 250
    keep_fraction: float = 0.01
    k: int = 8
    jitter: float = 0.5
    spectrum: SpectrumSpec = SpectrumSpec(
        n_modes=24, k_min=2.0, k_max=24.0, decay=1.0, mean_flow=3.5
    )
    domain: DomainSpec = DomainSpec()
    widths: tuple[int, ...] = BENCHMARK_WIDTHS
    epochs: int = 100
    lr0: float = 1e-3
    fp_max_iters: int = 400
    fp_tol: float = 1e-6

    @property
    def n_panels(self) -> int:
        return len(self.cad_values) * self.per_cad


def mask_snapshots(
    snapshots: list[FlowSnapshot],
    keep_fraction: float,
    k: int,
    seed: int,
) -> list[SparseSample]:
    """Graphs plus seeded random masks for a list of snapshots.

    Per-sample mask seeds are drawn from one generator seeded by `seed`, so
    the whole list is pinned by a single integer.
    """
    rng = np.random.default_rng(seed)
    mask_seeds = rng.integers(0, 2**63 - 1, size=len(snapshots))
    out = []
    for snap, ms in zip(snapshots, mask_seeds):
        graph = build_knn_graph(snap, k=k)
        out.append(mask_random(graph, keep_fraction, int(ms)))
    return out


def build_benchmark(
    settings: BenchmarkSettings = BenchmarkSettings(),
) -> tuple[ReconstructionDataset, TrainConfig]:
    """Generate and mask the benchmark dataset; return it with the matching
    TrainConfig (the pool of `pool_size` splits 4:1 inside train(), giving
    200 train / 50 validation snapshots at the defaults)."""
    n_panels = settings.n_panels
    if not 0 < settings.pool_size < n_panels:
        raise ValueError(
            f"pool_size {settings.pool_size} must be within (0, {n_panels})"
        )
    ratios = (
        settings.pool_size / n_panels,
        0.0,
        (n_panels - settings.pool_size) / n_panels,
    )
    sizes = DatasetSizes(
        panel_points=settings.panel_points,
        slice_points=settings.slice_points,
        n_slices=settings.n_slices,
        slice_scale=(2.0, 4.0),
        ratios=ratios,
        jitter=settings.jitter,
    )
    splits = make_dataset(
        settings.domain,
        list(settings.cad_values),
        settings.spectrum,
        settings.per_cad,
        sizes=sizes,
        seed=settings.seed,
    )
    pool = mask_snapshots(
        splits.train, settings.keep_fraction, settings.k, seed=settings.seed + 1
    )
    test = mask_snapshots(
        splits.test, settings.keep_fraction, settings.k, seed=settings.seed + 2
    )
    config = TrainConfig(
        lr0=settings.lr0,
        epochs=settings.epochs,
        keep_fraction=settings.keep_fraction,
        seed=settings.seed,
        validation_fraction=0.2,
    )
    return ReconstructionDataset(pool=pool, test=test), config
