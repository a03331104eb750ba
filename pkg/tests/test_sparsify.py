import numpy as np
import pytest

from conftest import random_graph, random_snapshot
from flowrecon import (
    FlowSnapshot,
    MaskEmptyError,
    NonGridError,
    SparseSample,
    insert_intermediate_nodes,
    mask_random,
    split_half,
    super_resolution_sample,
)


def grid_snapshot(p, q, rng=None, x0=0.0, z0=0.0, dx=1.0, dz=1.0):
    xs = x0 + dx * np.arange(p)
    zs = z0 + dz * np.arange(q)
    gx, gz = np.meshgrid(xs, zs, indexing="ij")
    pts = np.stack([gx.ravel(), gz.ravel()], axis=1)
    vel = (
        np.stack([np.sin(pts[:, 0]), np.cos(pts[:, 1])], axis=1)
        if rng is None
        else rng.normal(size=(p * q, 2))
    )
    return FlowSnapshot(points=pts, velocities=vel)


class TestMaskRandom:
    def test_rounding_half_up(self, rng):
        g = random_graph(rng, 100, k=3)
        assert mask_random(g, 0.25, 0).n_kept == 25
        assert mask_random(g, 0.014, 0).n_kept == 1   # 1.4 -> 1
        assert mask_random(g, 0.015, 0).n_kept == 2   # 1.5 -> 2

    def test_one_percent_of_2500(self, rng):
        g = random_graph(rng, 2500, k=3)
        assert mask_random(g, 0.01, 7).n_kept == 25

    def test_empty_mask_raises(self, rng):
        g = random_graph(rng, 30, k=3)
        with pytest.raises(MaskEmptyError):
            mask_random(g, 0.01, 0)  # 0.3 rounds to 0

    def test_invalid_fraction(self, rng):
        g = random_graph(rng, 10, k=2)
        for f in (0.0, -0.1, 1.5):
            with pytest.raises(ValueError):
                mask_random(g, f, 0)

    def test_hidden_nodes_blanked(self, rng):
        g = random_graph(rng, 50, k=3)
        s = mask_random(g, 0.2, 3)
        feats = s.graph.node_features
        hidden = ~s.keep_mask
        assert np.all(feats[hidden, 0:2] == 0.0)
        assert np.all(feats[hidden, 2] == 0.0)
        assert np.all(feats[s.keep_mask, 2] == 1.0)
        # kept nodes keep their original velocities
        assert np.array_equal(feats[s.keep_mask, 0:2], s.target[s.keep_mask])

    def test_geometry_untouched(self, rng):
        g = random_graph(rng, 40, k=3)
        s = mask_random(g, 0.1, 1)
        assert np.array_equal(s.graph.edges, g.edges)
        assert np.array_equal(s.graph.edge_distance, g.edge_distance)
        assert np.array_equal(s.graph.coords, g.coords)

    def test_target_and_eval(self, rng):
        g = random_graph(rng, 40, k=3)
        s = mask_random(g, 0.1, 1)
        assert np.array_equal(s.target, g.node_features[:, 0:2])
        assert s.eval_mask.all()

    def test_seed_determinism(self, rng):
        g = random_graph(rng, 60, k=3)
        a = mask_random(g, 0.1, 42)
        b = mask_random(g, 0.1, 42)
        c = mask_random(g, 0.1, 43)
        assert np.array_equal(a.keep_mask, b.keep_mask)
        assert not np.array_equal(a.keep_mask, c.keep_mask)

    def test_sample_invariant_enforced(self, rng):
        g = random_graph(rng, 10, k=2)
        keep = np.zeros(10, dtype=bool)
        keep[0] = True
        # unmasked graph violates the hidden-node invariant
        with pytest.raises(ValueError, match="hidden nodes"):
            SparseSample(
                graph=g,
                keep_mask=keep,
                target=g.node_features[:, 0:2].copy(),
                eval_mask=np.ones(10, dtype=bool),
            )


class TestInsertIntermediateNodes:
    def test_counts_and_values(self):
        snap = grid_snapshot(5, 4)
        fine = insert_intermediate_nodes(snap, 3)
        assert fine.n_points == (4 * 3 + 1) * (3 * 3 + 1)
        assert fine.mask is not None
        assert fine.mask.sum() == snap.n_points

    def test_originals_bit_exact(self):
        snap = grid_snapshot(6, 5, x0=-1.3, z0=0.7, dx=0.31, dz=0.17)
        fine = insert_intermediate_nodes(snap, 4)
        orig = fine.mask == 1.0
        fine_keys = {fine.points[i].tobytes() for i in np.nonzero(orig)[0]}
        snap_keys = {snap.points[i].tobytes() for i in range(snap.n_points)}
        assert fine_keys == snap_keys  # coordinates preserved bit-exactly
        # velocities carried over exactly, inserted nodes zero
        by_key = {fine.points[i].tobytes(): fine.velocities[i] for i in range(fine.n_points)}
        for i in range(snap.n_points):
            assert np.array_equal(by_key[snap.points[i].tobytes()], snap.velocities[i])
        assert np.all(fine.velocities[~orig] == 0.0)

    def test_refine_one_is_identity_modulo_mask(self):
        snap = grid_snapshot(4, 4)
        fine = insert_intermediate_nodes(snap, 1)
        assert fine.n_points == snap.n_points
        assert np.all(fine.mask == 1.0)

    def test_hull_preserved(self):
        snap = grid_snapshot(5, 5, dx=0.5, dz=0.25)
        fine = insert_intermediate_nodes(snap, 7)
        assert fine.points[:, 0].min() == snap.points[:, 0].min()
        assert fine.points[:, 0].max() == snap.points[:, 0].max()
        assert fine.points[:, 1].min() == snap.points[:, 1].min()
        assert fine.points[:, 1].max() == snap.points[:, 1].max()

    def test_39x39_refine_7(self):
        snap = grid_snapshot(39, 39, dx=0.05, dz=0.05)
        fine = insert_intermediate_nodes(snap, 7)
        assert fine.n_points == 267 * 267 == 71289

    def test_input_mask_propagates(self):
        snap = grid_snapshot(4, 3)
        half = FlowSnapshot(
            points=snap.points,
            velocities=snap.velocities,
            mask=np.tile([1.0, 0.0], 6),
        )
        fine = insert_intermediate_nodes(half, 2)
        assert fine.mask.sum() == 6.0  # only the flagged originals stay visible

    def test_rejects_jittered_points(self, rng):
        snap = random_snapshot(rng, 20)
        with pytest.raises(NonGridError):
            insert_intermediate_nodes(snap, 2)

    def test_rejects_uneven_spacing_with_deviation(self):
        xs = np.array([0.0, 1.0, 2.5])
        gx, gz = np.meshgrid(xs, np.arange(3.0), indexing="ij")
        pts = np.stack([gx.ravel(), gz.ravel()], axis=1)
        snap = FlowSnapshot(points=pts, velocities=np.zeros((9, 2)))
        with pytest.raises(NonGridError, match="deviation"):
            insert_intermediate_nodes(snap, 2)

    def test_rejects_incomplete_grid(self):
        snap = grid_snapshot(4, 4)
        missing = FlowSnapshot(
            points=snap.points[:-1], velocities=snap.velocities[:-1]
        )
        with pytest.raises(NonGridError):
            insert_intermediate_nodes(missing, 2)

    def test_rejects_bad_refine(self):
        with pytest.raises(ValueError):
            insert_intermediate_nodes(grid_snapshot(3, 3), 0)


class TestSplitHalf:
    @pytest.mark.parametrize("n", [2, 7, 30, 101])
    def test_partition(self, rng, n):
        snap = random_snapshot(rng, n)
        a, b = split_half(snap, seed=5)
        assert len(a) == (n + 1) // 2
        assert len(b) == n // 2
        assert len(np.intersect1d(a, b)) == 0
        assert np.array_equal(np.sort(np.concatenate([a, b])), np.arange(n))

    def test_seeded(self, rng):
        snap = random_snapshot(rng, 20)
        a1, _ = split_half(snap, seed=1)
        a2, _ = split_half(snap, seed=1)
        a3, _ = split_half(snap, seed=2)
        assert np.array_equal(a1, a2)
        assert not np.array_equal(a1, a3)


class TestSuperResolution:
    def test_39x39_refine7_fraction(self, rng):
        snap = grid_snapshot(39, 39, rng=rng, dx=0.02, dz=0.02)
        s = super_resolution_sample(snap, refine=7, seed=11)
        frac = s.n_kept / s.graph.n_nodes
        assert 0.008 <= frac <= 0.013
        assert s.graph.n_nodes == 71289
        assert s.n_kept == (39 * 39 + 1) // 2

    def test_eval_and_input_disjoint(self, rng):
        snap = grid_snapshot(9, 8, rng=rng)
        s = super_resolution_sample(snap, refine=3, seed=2)
        assert not np.any(s.keep_mask & s.eval_mask)
        assert s.eval_mask.sum() == (9 * 8) // 2

    def test_eval_targets_are_original_values(self, rng):
        snap = grid_snapshot(7, 6, rng=rng, dx=0.3, dz=0.2)
        s = super_resolution_sample(snap, refine=2, seed=3)
        coords = s.graph.coords
        orig = {snap.points[i].tobytes(): snap.velocities[i] for i in range(snap.n_points)}
        for i in np.nonzero(s.eval_mask)[0]:
            key = coords[i].tobytes()
            assert key in orig
            assert np.array_equal(s.target[i], orig[key])

    def test_visible_nodes_flagged(self, rng):
        snap = grid_snapshot(8, 8, rng=rng)
        s = super_resolution_sample(snap, refine=2, seed=4)
        feats = s.graph.node_features
        assert np.all(feats[s.keep_mask, 2] == 1.0)
        assert np.all(feats[~s.keep_mask, 2] == 0.0)
        assert np.all(feats[~s.keep_mask, 0:2] == 0.0)
