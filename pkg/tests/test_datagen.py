import numpy as np
import pytest

import oracles
from flowrecon import (
    DatasetSizes,
    DomainError,
    DomainSpec,
    Rect,
    SnapshotIOError,
    SpectrumSpec,
    StreamField,
    load_manifest,
    load_snapshot,
    make_dataset,
    make_field,
    save_manifest,
    save_snapshot,
    synth_flow,
)


class TestDomain:
    def test_height_linear_in_cad(self):
        d = DomainSpec(height_max=1.0, height_min=0.5, cad_range=(-120.0, -60.0))
        assert d.height_at(-120.0) == pytest.approx(1.0)
        assert d.height_at(-60.0) == pytest.approx(0.5)
        assert d.height_at(-90.0) == pytest.approx(0.75)

    def test_scaled_similarity(self):
        d = DomainSpec(obstacles=(Rect(0.1, 0.1, 0.3, 0.2),))
        s = d.scaled(2.0)
        assert s.width == 2.0
        assert s.height_at(-90.0) == pytest.approx(2 * d.height_at(-90.0))
        r = s.obstacles[0]
        assert (r.x0, r.z0, r.x1, r.z1) == (0.2, 0.2, 0.6, 0.4)

    def test_validation(self):
        with pytest.raises(ValueError):
            DomainSpec(width=0.0)
        with pytest.raises(ValueError):
            DomainSpec(cad_range=(-60.0, -60.0))
        with pytest.raises(ValueError):
            DomainSpec(obstacles=(Rect(0.5, 0.5, 1.5, 0.8),))
        with pytest.raises(ValueError):
            Rect(0.3, 0.1, 0.3, 0.2)

    def test_spectrum_validation(self):
        with pytest.raises(ValueError):
            SpectrumSpec(n_modes=0)
        with pytest.raises(ValueError):
            SpectrumSpec(k_min=0.0)
        with pytest.raises(ValueError):
            SpectrumSpec(k_min=5.0, k_max=4.0)


class TestStreamField:
    def _field(self, seed=0):
        return make_field(SpectrumSpec(n_modes=8, k_min=2.0, k_max=9.0, seed=seed))

    def test_divergence_free_analytically(self, rng):
        field = self._field()
        pts = rng.uniform(0.0, 1.0, size=(1000, 2))
        div = field.divergence(pts)
        assert np.abs(div).max() < 1e-12

    def test_divergence_free_by_finite_differences(self, rng):
        field = self._field(seed=3)
        pts = rng.uniform(0.1, 0.9, size=(50, 2))
        h = 1e-6
        ex = np.array([h, 0.0])
        ez = np.array([0.0, h])
        div_fd = (
            (field.velocity(pts + ex)[:, 0] - field.velocity(pts - ex)[:, 0])
            + (field.velocity(pts + ez)[:, 1] - field.velocity(pts - ez)[:, 1])
        ) / (2 * h)
        assert np.abs(div_fd).max() < 1e-5

    def test_velocity_is_curl_of_streamfunction(self, rng):
        # u_x = dpsi/dz, u_z = -dpsi/dx, checked with central differences
        field = self._field(seed=5)
        pts = rng.uniform(0.1, 0.9, size=(40, 2))
        h = 1e-6
        ex = np.array([h, 0.0])
        ez = np.array([0.0, h])
        dpsi_dz = (field.streamfunction(pts + ez) - field.streamfunction(pts - ez)) / (2 * h)
        dpsi_dx = (field.streamfunction(pts + ex) - field.streamfunction(pts - ex)) / (2 * h)
        vel = field.velocity(pts)
        assert np.allclose(vel[:, 0], dpsi_dz, atol=1e-5)
        assert np.allclose(vel[:, 1], -dpsi_dx, atol=1e-5)

    def test_amplitude_decay_law(self):
        spec = SpectrumSpec(n_modes=16, k_min=2.0, k_max=10.0, decay=2.0,
                            amplitude=3.0, seed=1)
        field = make_field(spec)
        mag = np.hypot(field.kx, field.kz)
        assert np.allclose(field.amp, 3.0 * (mag / 2.0) ** (-2.0))

    def test_seed_pins_field(self):
        spec = SpectrumSpec(n_modes=4, seed=7)
        f1, f2 = make_field(spec), make_field(spec)
        assert np.array_equal(f1.kx, f2.kx)
        assert np.array_equal(f1.amp, f2.amp)

    def test_requires_seed_or_rng(self):
        with pytest.raises(ValueError):
            make_field(SpectrumSpec(seed=None))
        f = make_field(SpectrumSpec(seed=None), rng=np.random.default_rng(0))
        assert f.kx.shape == (24,)


class TestSynthFlow:
    def test_points_inside_domain(self):
        d = DomainSpec()
        snap = synth_flow(d, -90.0, SpectrumSpec(), 500, seed=1)
        h = d.height_at(-90.0)
        assert np.all(snap.points[:, 0] >= 0) and np.all(snap.points[:, 0] <= d.width)
        assert np.all(snap.points[:, 1] >= 0) and np.all(snap.points[:, 1] <= h)
        assert snap.cad == -90.0

    def test_point_count_near_request(self):
        snap = synth_flow(DomainSpec(), -90.0, SpectrumSpec(), 1000, seed=0)
        assert 850 <= snap.n_points <= 1150

    def test_velocities_match_field_exactly(self):
        spec = SpectrumSpec(n_modes=6, seed=11)
        snap = synth_flow(DomainSpec(), -80.0, spec, 200, seed=4)
        field = make_field(spec)
        assert np.array_equal(snap.velocities, field.velocity(snap.points))

    def test_determinism_and_seed_sensitivity(self):
        spec = SpectrumSpec(n_modes=4)
        a = synth_flow(DomainSpec(), -90.0, spec, 100, seed=5)
        b = synth_flow(DomainSpec(), -90.0, spec, 100, seed=5)
        c = synth_flow(DomainSpec(), -90.0, spec, 100, seed=6)
        assert np.array_equal(a.points, b.points)
        assert np.array_equal(a.velocities, b.velocities)
        assert not np.array_equal(a.points, c.points)

    def test_obstacle_removal(self):
        d = DomainSpec(obstacles=(Rect(0.4, 0.4, 0.6, 0.6),))
        snap = synth_flow(d, -120.0, SpectrumSpec(), 2000, seed=2)
        inside = d.obstacles[0].contains(snap.points)
        assert not inside.any()

    def test_zero_jitter_gives_grid(self):
        snap = synth_flow(DomainSpec(), -90.0, SpectrumSpec(), 100, jitter=0.0, seed=0)
        xs = np.unique(snap.points[:, 0])
        diffs = np.diff(xs)
        assert np.allclose(diffs, diffs[0])

    def test_validation(self):
        with pytest.raises(ValueError):
            synth_flow(DomainSpec(), -90.0, SpectrumSpec(), 3)
        with pytest.raises(ValueError):
            synth_flow(DomainSpec(), -90.0, SpectrumSpec(), 100, jitter=1.0)
        big = Rect(0.001, 0.001, 0.999, 0.999)
        with pytest.raises(DomainError):
            synth_flow(DomainSpec(obstacles=(big,)), -120.0, SpectrumSpec(), 100, jitter=0.0)


class TestMakeDataset:
    def _splits(self, n_slices=2, per_cad=3, ratios=(0.5, 0.25, 0.25)):
        sizes = DatasetSizes(
            panel_points=(80, 160),
            slice_points=(300, 600),
            n_slices=n_slices,
            ratios=ratios,
        )
        return make_dataset(
            DomainSpec(), [-120.0, -90.0, -60.0], SpectrumSpec(n_modes=4),
            per_cad, sizes=sizes, seed=9,
        )

    def test_split_arithmetic(self):
        splits = self._splits()
        # 9 panels at 0.5/0.25/0.25 -> 4/2/3 with round(); slices append to test
        assert len(splits.train) == 4
        assert len(splits.val) == 2
        assert len(splits.test) == 3 + 2

    def test_slices_are_test_only(self):
        splits = self._splits()
        for split, snap in splits.all_snapshots():
            if snap.domain_tag.startswith("slice"):
                assert split == "test"

    def test_slice_zero_pinned_to_max_area(self):
        splits = self._splits()
        slices = [s for s in splits.test if s.domain_tag.startswith("slice")]
        s0 = next(s for s in slices if s.domain_tag == "slice:0")
        # scale 4 at the tallest crank angle: spans 4x width
        assert s0.points[:, 0].max() > 3.0
        assert s0.cad == -120.0

    def test_tags_unique(self):
        splits = self._splits()
        tags = [s.domain_tag for _, s in splits.all_snapshots()]
        assert len(set(tags)) == len(tags)

    def test_determinism(self):
        a = self._splits()
        b = self._splits()
        for sa, sb in zip(a.train, b.train):
            assert np.array_equal(sa.points, sb.points)
        for sa, sb in zip(a.test, b.test):
            assert np.array_equal(sa.velocities, sb.velocities)

    def test_fields_distinct_across_snapshots(self):
        splits = self._splits()
        vels = [s.velocities[:3].tobytes() for _, s in splits.all_snapshots()]
        assert len(set(vels)) == len(vels)

    def test_validation(self):
        with pytest.raises(ValueError):
            make_dataset(DomainSpec(), [], SpectrumSpec(), 2)
        with pytest.raises(ValueError):
            make_dataset(DomainSpec(), [-90.0], SpectrumSpec(), 0)
        with pytest.raises(ValueError):
            DatasetSizes(ratios=(0.5, 0.5, 0.5))


class TestSnapshotIO:
    def test_round_trip_bit_exact(self, rng, tmp_path):
        snap = synth_flow(DomainSpec(), -75.0, SpectrumSpec(n_modes=3), 60, seed=8)
        p = tmp_path / "snap.csv"
        save_snapshot(snap, p)
        back = load_snapshot(p)
        assert np.array_equal(back.points, snap.points)
        assert np.array_equal(back.velocities, snap.velocities)
        assert back.cad == snap.cad
        assert back.domain_tag == snap.domain_tag
        assert back.mask is None

    def test_round_trip_with_mask(self, rng, tmp_path):
        from flowrecon import FlowSnapshot

        pts = rng.uniform(0, 1, size=(10, 2))
        mask = (rng.random(10) < 0.5).astype(float)
        snap = FlowSnapshot(
            points=pts, velocities=rng.normal(size=(10, 2)) * mask[:, None],
            cad=-70.0, mask=mask,
        )
        p = tmp_path / "m.csv"
        save_snapshot(snap, p)
        back = load_snapshot(p)
        assert np.array_equal(back.mask, mask)
        assert np.array_equal(back.velocities, snap.velocities)

    def test_seventeen_digit_values_survive(self, tmp_path):
        from flowrecon import FlowSnapshot

        pts = np.array([[0.1234567890123456, 1 / 3], [np.pi, np.e]])
        vel = np.array([[1e-17, -2.2250738585072014e-308], [7.0, 0.1 + 0.2]])
        snap = FlowSnapshot(points=pts, velocities=vel)
        p = tmp_path / "digits.csv"
        save_snapshot(snap, p)
        back = load_snapshot(p)
        assert np.array_equal(back.points, pts)
        assert np.array_equal(back.velocities, vel)

    def test_header_and_comment_layout(self, tmp_path):
        snap = synth_flow(DomainSpec(), -90.0, SpectrumSpec(n_modes=2), 20, seed=0, tag="panel:0")
        p = tmp_path / "s.csv"
        save_snapshot(snap, p)
        lines = p.read_text().splitlines()
        assert lines[0] == "# cad=-90.0 domain_tag=panel:0"
        assert lines[1] == "x,z,u_x,u_z"

    def test_errors_name_the_line(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("x,z,u_x,u_z\n0,0,1,1\n0.5,oops,1,1\n")
        with pytest.raises(SnapshotIOError, match=r"bad\.csv:3: non-numeric"):
            load_snapshot(p)
        p.write_text("x,z,u_x,u_z\n0,0,1,1\n0.5,0.5,1\n")
        with pytest.raises(SnapshotIOError, match=":3: expected 4 cells"):
            load_snapshot(p)
        p.write_text("x,z,u_x,u_z\n0,0,1,inf\n1,1,0,0\n")
        with pytest.raises(SnapshotIOError, match=":2: non-finite"):
            load_snapshot(p)

    def test_missing_columns_rejected(self, tmp_path):
        p = tmp_path / "cols.csv"
        p.write_text("x,z,u_x\n0,0,1\n1,1,0\n")
        with pytest.raises(SnapshotIOError, match="missing columns u_z"):
            load_snapshot(p)

    def test_empty_and_tiny_rejected(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("")
        with pytest.raises(SnapshotIOError, match="empty"):
            load_snapshot(p)
        p.write_text("x,z,u_x,u_z\n0,0,1,1\n")
        with pytest.raises(SnapshotIOError, match="fewer than 2"):
            load_snapshot(p)

    def test_column_order_free(self, tmp_path):
        p = tmp_path / "o.csv"
        p.write_text("u_z,x,u_x,z\n5.0,0.0,4.0,1.0\n6.0,1.0,3.0,0.0\n")
        snap = load_snapshot(p)
        assert np.array_equal(snap.points, [[0.0, 1.0], [1.0, 0.0]])
        assert np.array_equal(snap.velocities, [[4.0, 5.0], [3.0, 6.0]])

    def test_duplicate_points_surface_as_io_error(self, tmp_path):
        p = tmp_path / "dup.csv"
        p.write_text("x,z,u_x,u_z\n0,0,1,1\n0,0,2,2\n")
        with pytest.raises(SnapshotIOError, match="duplicate"):
            load_snapshot(p)


class TestManifest:
    def test_round_trip(self, tmp_path):
        rows = [
            ("snapshots/train_0000.csv", "train", -120.0, 1500),
            ("snapshots/test_0001.csv", "test", -65.5, 900),
        ]
        p = tmp_path / "manifest.csv"
        save_manifest(rows, p)
        back = load_manifest(p)
        assert back[0]["path"] == "snapshots/train_0000.csv"
        assert back[0]["split"] == "train"
        assert float(back[1]["cad"]) == -65.5
        assert int(back[1]["n_points"]) == 900


class TestOracleHelpers:
    def test_direct_metrics_self_consistent(self, rng):
        # the oracle helpers themselves obey simple closed forms
        pred = rng.normal(size=(6, 2))
        assert oracles.direct_mae(pred, pred, np.ones(6, bool)) == 0.0
        t = pred + 1.0
        assert oracles.direct_mae(pred, t, np.ones(6, bool)) == pytest.approx(1.0)
        assert oracles.direct_rmse(pred, t, np.ones(6, bool)) == pytest.approx(1.0)
