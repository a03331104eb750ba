"""Synthetic divergence-free flow snapshots on piston-like moving domains.

Velocity fields come from random streamfunctions: sums of separable sine
modes (plus an optional linear term encoding a bulk drift) whose analytical
curl gives u_x = dpsi/dz, u_z = -dpsi/dx, so the continuous field is exactly
divergence-free by construction. Measurement locations are jittered
cell-centered grids clipped to a domain whose top wall moves linearly with
crank angle, minus optional obstacle rectangles. Snapshot CSV io and dataset
manifests live here too.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .graph import FlowSnapshot


class DomainError(ValueError):
    """Raised when a domain is degenerate at the requested crank angle."""


class SnapshotIOError(ValueError):
    """Raised for malformed snapshot CSV files; names the offending line."""


@dataclass(frozen=True)
class Rect:
    """Axis-aligned obstacle rectangle (x0, z0) .. (x1, z1), closed."""

    x0: float
    z0: float
    x1: float
    z1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.z0 < self.z1):
            raise ValueError(f"degenerate rectangle {self}")

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return (
            (pts[:, 0] >= self.x0)
            & (pts[:, 0] <= self.x1)
            & (pts[:, 1] >= self.z0)
            & (pts[:, 1] <= self.z1)
        )


@dataclass(frozen=True)
class DomainSpec:
    """Rectangular domain [0, width] x [0, height_at(cad)].

    The top wall moves linearly from height_max at cad_range[0] down to
    height_min at cad_range[1], mimicking compression toward top dead
    center. Obstacles are rectangles carved out of the interior.
    """

    width: float = 1.0
    height_max: float = 1.0
    height_min: float = 0.5
    cad_range: tuple[float, float] = (-120.0, -60.0)
    obstacles: tuple[Rect, ...] = ()

    def __post_init__(self):
        if self.width <= 0 or self.height_min <= 0 or self.height_max <= 0:
            raise ValueError("domain dimensions must be positive")
        if self.cad_range[0] >= self.cad_range[1]:
            raise ValueError(f"empty cad_range {self.cad_range}")
        for r in self.obstacles:
            if not (0 <= r.x0 and r.x1 <= self.width and 0 <= r.z0 and r.z1 <= self.height_max):
                raise ValueError(f"obstacle {r} outside domain bounds")

    def height_at(self, cad: float) -> float:
        lo, hi = self.cad_range
        t = (cad - lo) / (hi - lo)
        return self.height_max + (self.height_min - self.height_max) * t

    def scaled(self, s: float) -> "DomainSpec":
        """Geometrically similar domain, linear factor s (area factor s^2)."""
        return DomainSpec(
            width=self.width * s,
            height_max=self.height_max * s,
            height_min=self.height_min * s,
            cad_range=self.cad_range,
            obstacles=tuple(
                Rect(r.x0 * s, r.z0 * s, r.x1 * s, r.z1 * s) for r in self.obstacles
            ),
        )


@dataclass(frozen=True)
class SpectrumSpec:
    """Random streamfunction recipe: sine-mode count, wavenumber range,
    power-law amplitude decay, overall amplitude, bulk-flow magnitude, and
    an optional seed that pins the modes independently of the point jitter.

    mean_flow adds a per-realization constant drift (random direction,
    magnitude in [0.5, 1.5] * mean_flow) on top of the oscillatory modes,
    mimicking the bulk motion that dominates confined vortical flows. The
    drift is the curl of a linear streamfunction term, so fields stay
    exactly divergence-free.
    """

    n_modes: int = 24
    k_min: float = 4.0
    k_max: float = 16.0
    decay: float = 1.0
    amplitude: float = 1.0
    mean_flow: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        if self.n_modes < 1:
            raise ValueError(f"n_modes must be >= 1, got {self.n_modes}")
        if not 0 < self.k_min <= self.k_max:
            raise ValueError(f"need 0 < k_min <= k_max, got {self.k_min}, {self.k_max}")
        if self.mean_flow < 0:
            raise ValueError(f"mean_flow must be >= 0, got {self.mean_flow}")


@dataclass(frozen=True, eq=False)
class StreamField:
    """A realized streamfunction: psi = sum_m a_m sin(kx x + phi) sin(kz z + theta).

    velocity() and divergence() evaluate the analytical derivatives, so the
    divergence is a sum of two terms that cancel symbolically.
    """

    kx: np.ndarray
    kz: np.ndarray
    phase_x: np.ndarray
    phase_z: np.ndarray
    amp: np.ndarray
    mean_x: float = 0.0
    mean_z: float = 0.0

    def streamfunction(self, pts: np.ndarray) -> np.ndarray:
        x, z = pts[:, 0:1], pts[:, 1:2]
        modes = np.sum(
            self.amp * np.sin(self.kx * x + self.phase_x) * np.sin(self.kz * z + self.phase_z),
            axis=1,
        )
        # linear term whose curl is the constant drift (mean_x, mean_z)
        return modes + self.mean_x * z[:, 0] - self.mean_z * x[:, 0]

    def velocity(self, pts: np.ndarray) -> np.ndarray:
        x, z = pts[:, 0:1], pts[:, 1:2]
        sx = np.sin(self.kx * x + self.phase_x)
        cx = np.cos(self.kx * x + self.phase_x)
        sz = np.sin(self.kz * z + self.phase_z)
        cz = np.cos(self.kz * z + self.phase_z)
        u_x = np.sum(self.amp * self.kz * sx * cz, axis=1) + self.mean_x
        u_z = -np.sum(self.amp * self.kx * cx * sz, axis=1) + self.mean_z
        return np.stack([u_x, u_z], axis=1)

    def divergence(self, pts: np.ndarray) -> np.ndarray:
        """d(u_x)/dx + d(u_z)/dz from the analytic mode derivatives."""
        x, z = pts[:, 0:1], pts[:, 1:2]
        cx = np.cos(self.kx * x + self.phase_x)
        cz = np.cos(self.kz * z + self.phase_z)
        ddx_ux = np.sum(self.amp * self.kz * self.kx * cx * cz, axis=1)
        ddz_uz = -np.sum(self.amp * self.kx * self.kz * cx * cz, axis=1)
        return ddx_ux + ddz_uz


def make_field(spectrum: SpectrumSpec, rng: np.random.Generator | None = None) -> StreamField:
    """Draw the modes of one random streamfunction.

    Uses spectrum.seed when set, else the supplied generator (required then).
    Mode amplitudes follow amplitude * (|k| / k_min)^(-decay).
    """
    if spectrum.seed is not None:
        rng = np.random.default_rng(spectrum.seed)
    if rng is None:
        raise ValueError("make_field needs spectrum.seed or an explicit rng")
    m = spectrum.n_modes
    kx = rng.uniform(spectrum.k_min, spectrum.k_max, m)
    kz = rng.uniform(spectrum.k_min, spectrum.k_max, m)
    phase_x = rng.uniform(0.0, 2.0 * np.pi, m)
    phase_z = rng.uniform(0.0, 2.0 * np.pi, m)
    mag = np.hypot(kx, kz)
    amp = spectrum.amplitude * (mag / spectrum.k_min) ** (-spectrum.decay)
    mean_x = mean_z = 0.0
    if spectrum.mean_flow > 0.0:
        theta = rng.uniform(0.0, 2.0 * np.pi)
        speed = spectrum.mean_flow * rng.uniform(0.5, 1.5)
        mean_x = speed * np.cos(theta)
        mean_z = speed * np.sin(theta)
    return StreamField(
        kx=kx, kz=kz, phase_x=phase_x, phase_z=phase_z, amp=amp,
        mean_x=float(mean_x), mean_z=float(mean_z),
    )


def synth_flow(
    domain: DomainSpec,
    cad: float,
    spectrum: SpectrumSpec,
    n_points: int,
    jitter: float = 0.5,
    seed: int = 0,
    tag: str = "synth",
) -> FlowSnapshot:
    """One synthetic snapshot: jittered grid points, streamfunction velocities.

    Points sit at cell centers of an approximately square grid filling the
    domain at this crank angle, each displaced by jitter * half-pitch in both
    axes, so they stay inside the domain and pairwise distinct. Points inside
    obstacles are removed. Deterministic given (spectrum.seed or seed, seed).
    """
    if n_points < 4:
        raise ValueError(f"n_points must be >= 4, got {n_points}")
    if not 0.0 <= jitter < 1.0:
        raise ValueError(f"jitter must be in [0,1), got {jitter}")
    h = domain.height_at(cad)
    if h <= 0:
        raise DomainError(f"domain height {h:.4g} at cad {cad}")
    rng = np.random.default_rng(seed)
    field = make_field(spectrum, rng)

    pitch = float(np.sqrt(domain.width * h / n_points))
    nx = max(2, int(round(domain.width / pitch)))
    nz = max(2, int(round(h / pitch)))
    dx, dz = domain.width / nx, h / nz
    cx = (np.arange(nx) + 0.5) * dx
    cz = (np.arange(nz) + 0.5) * dz
    gx, gz = np.meshgrid(cx, cz, indexing="ij")
    pts = np.stack([gx.ravel(), gz.ravel()], axis=1)
    if jitter > 0.0:
        pts = pts + rng.uniform(-1.0, 1.0, pts.shape) * np.array([dx, dz]) * (jitter / 2.0)

    inside = np.ones(len(pts), dtype=bool)
    for r in domain.obstacles:
        inside &= ~r.contains(pts)
    pts = pts[inside]
    if len(pts) < 4:
        raise DomainError(
            f"only {len(pts)} points remain after obstacle removal at cad {cad}"
        )
    return FlowSnapshot(
        points=pts,
        velocities=field.velocity(pts),
        cad=cad,
        domain_tag=tag,
    )


@dataclass(frozen=True)
class DatasetSizes:
    """Knobs of make_dataset: point-count ranges, slice settings, split
    ratios, and grid jitter."""

    panel_points: tuple[int, int] = (1000, 4000)
    slice_points: tuple[int, int] = (8000, 32000)
    n_slices: int = 4
    slice_scale: tuple[float, float] = (2.0, 4.0)
    ratios: tuple[float, float, float] = (0.7, 0.2, 0.1)
    jitter: float = 0.5

    def __post_init__(self):
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must sum to 1, got {self.ratios}")
        if any(r < 0 for r in self.ratios):
            raise ValueError("split ratios must be nonnegative")


@dataclass(frozen=True, eq=False)
class DatasetSplits:
    train: list[FlowSnapshot]
    val: list[FlowSnapshot]
    test: list[FlowSnapshot]

    def all_snapshots(self) -> list[tuple[str, FlowSnapshot]]:
        return (
            [("train", s) for s in self.train]
            + [("val", s) for s in self.val]
            + [("test", s) for s in self.test]
        )


def make_dataset(
    domain: DomainSpec,
    cad_list: list[float],
    spectrum: SpectrumSpec,
    per_cad_count: int,
    sizes: DatasetSizes = DatasetSizes(),
    seed: int = 0,
) -> DatasetSplits:
    """Panels across crank angles, split by seeded assignment, plus
    out-of-distribution slice snapshots appended to the test set.

    Every snapshot gets its own child seed (independent field and jitter).
    Slices use geometrically scaled domains with linear factor drawn from
    sizes.slice_scale; slice 0 is pinned to the maximum factor at the
    max-height crank angle, which guarantees at least one test snapshot of
    >= 4x the largest training panel area under the default scale range.
    """
    if not cad_list or per_cad_count < 1:
        raise ValueError("cad_list nonempty and per_cad_count >= 1 required")
    master = np.random.SeedSequence(seed)
    n_panels = len(cad_list) * per_cad_count
    children = master.spawn(n_panels + sizes.n_slices + 1)
    split_rng = np.random.default_rng(children[-1])

    panels = []
    i = 0
    for cad in cad_list:
        for _ in range(per_cad_count):
            child_rng = np.random.default_rng(children[i])
            n_pts = int(child_rng.integers(sizes.panel_points[0], sizes.panel_points[1] + 1))
            snap_seed = int(child_rng.integers(0, 2**63 - 1))
            panels.append(
                synth_flow(
                    domain, cad, replace(spectrum, seed=None), n_pts,
                    jitter=sizes.jitter, seed=snap_seed, tag=f"panel:{i}",
                )
            )
            i += 1

    n_tr = int(round(sizes.ratios[0] * n_panels))
    n_va = int(round(sizes.ratios[1] * n_panels))
    n_te = n_panels - n_tr - n_va
    if min(n_tr, n_va, n_te) < 0:
        raise ValueError("split ratios produce a negative count")
    order = split_rng.permutation(n_panels)
    train = [panels[j] for j in order[:n_tr]]
    val = [panels[j] for j in order[n_tr : n_tr + n_va]]
    test = [panels[j] for j in order[n_tr + n_va :]]

    max_h_cad = max(cad_list, key=domain.height_at)
    for s_i in range(sizes.n_slices):
        child_rng = np.random.default_rng(children[n_panels + s_i])
        if s_i == 0:
            scale = sizes.slice_scale[1]
            cad = max_h_cad
        else:
            scale = float(child_rng.uniform(*sizes.slice_scale))
            cad = cad_list[int(child_rng.integers(len(cad_list)))]
        n_pts = int(child_rng.integers(sizes.slice_points[0], sizes.slice_points[1] + 1))
        snap_seed = int(child_rng.integers(0, 2**63 - 1))
        test.append(
            synth_flow(
                domain.scaled(scale), cad, replace(spectrum, seed=None), n_pts,
                jitter=sizes.jitter, seed=snap_seed, tag=f"slice:{s_i}",
            )
        )
    return DatasetSplits(train=train, val=val, test=test)


# ---------------------------------------------------------------------------
# snapshot CSV io

_COLUMNS = ("x", "z", "u_x", "u_z")


def save_snapshot(snapshot: FlowSnapshot, path: str | Path) -> None:
    """CSV with header x,z,u_x,u_z[,mask] and one metadata comment line.

    Floats are written with repr (shortest round-trip decimal), so
    load_snapshot(save_snapshot(s)) reproduces every value bit-exactly.
    """
    cols = list(_COLUMNS) + (["mask"] if snapshot.mask is not None else [])
    buf = io.StringIO()
    buf.write(f"# cad={snapshot.cad!r} domain_tag={snapshot.domain_tag}\n")
    buf.write(",".join(cols) + "\n")
    for i in range(snapshot.n_points):
        row = [
            repr(float(snapshot.points[i, 0])),
            repr(float(snapshot.points[i, 1])),
            repr(float(snapshot.velocities[i, 0])),
            repr(float(snapshot.velocities[i, 1])),
        ]
        if snapshot.mask is not None:
            row.append(repr(float(snapshot.mask[i])))
        buf.write(",".join(row) + "\n")
    Path(path).write_text(buf.getvalue())


def load_snapshot(path: str | Path) -> FlowSnapshot:
    """Parse a snapshot CSV; malformed content is rejected with a line number."""
    path = Path(path)
    cad = 0.0
    tag = ""
    with open(path, "r", newline="") as fh:
        lines = fh.read().splitlines()
    ln = 0
    if ln < len(lines) and lines[ln].startswith("#"):
        meta = lines[ln][1:].strip()
        for part in meta.split():
            if part.startswith("cad="):
                try:
                    cad = float(part[4:])
                except ValueError as exc:
                    raise SnapshotIOError(f"{path}:1: bad cad value: {part[4:]}") from exc
            elif part.startswith("domain_tag="):
                tag = part[len("domain_tag="):]
        ln += 1
    if ln >= len(lines):
        raise SnapshotIOError(f"{path}: empty file")
    header = [c.strip() for c in lines[ln].split(",")]
    missing = [c for c in _COLUMNS if c not in header]
    if missing:
        raise SnapshotIOError(
            f"{path}:{ln + 1}: missing columns {', '.join(missing)}"
        )
    col = {c: header.index(c) for c in header}
    has_mask = "mask" in col
    ln += 1

    pts, vel, mask = [], [], []
    for row_no in range(ln, len(lines)):
        line = lines[row_no]
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != len(header):
            raise SnapshotIOError(
                f"{path}:{row_no + 1}: expected {len(header)} cells, got {len(cells)}"
            )
        try:
            vals = [float(c) for c in cells]
        except ValueError:
            raise SnapshotIOError(f"{path}:{row_no + 1}: non-numeric cell") from None
        if not all(np.isfinite(v) for v in vals):
            raise SnapshotIOError(f"{path}:{row_no + 1}: non-finite value")
        pts.append((vals[col["x"]], vals[col["z"]]))
        vel.append((vals[col["u_x"]], vals[col["u_z"]]))
        if has_mask:
            mask.append(vals[col["mask"]])
    if len(pts) < 2:
        raise SnapshotIOError(f"{path}: fewer than 2 data rows")
    try:
        return FlowSnapshot(
            points=np.array(pts),
            velocities=np.array(vel),
            cad=cad,
            domain_tag=tag,
            mask=np.array(mask) if has_mask else None,
        )
    except ValueError as exc:
        raise SnapshotIOError(f"{path}: {exc}") from exc


def save_manifest(rows: list[tuple[str, str, float, int]], path: str | Path) -> None:
    """Dataset manifest CSV: path,split,cad,n_points."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["path", "split", "cad", "n_points"])
    for rel_path, split, cad, n in rows:
        w.writerow([rel_path, split, repr(float(cad)), n])
    Path(path).write_text(buf.getvalue())


def load_manifest(path: str | Path) -> list[dict[str, str]]:
    with open(path, "r", newline="") as fh:
        return list(csv.DictReader(fh))
