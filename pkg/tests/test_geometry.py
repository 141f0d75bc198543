import math

import numpy as np
import pytest

from _oracles import (
    occlusion_oracle,
    random_swarm_state,
    random_valid_triple,
    segment_samples_shadowed,
)
from swarmgather.env import SwarmConfig, SwarmState
from swarmgather.geometry import (
    Disk,
    IndexOutOfRange,
    OcclusionVerdict,
    OverlappingDisks,
    Vec2,
    ViewerInsideDisk,
    ViewerInsideOccluder,
    _pairwise_visibility,
    collision_pairs,
    mutually_visible,
    occlusion_verdict,
    shadow_of,
    visibility_census,
)

ORIGIN = Vec2(0.0, 0.0)
OCCLUDER = Disk(Vec2(5.0, 0.0), 1.0)


class TestShadow:
    def test_point_behind_is_shadowed(self):
        region = shadow_of(ORIGIN, OCCLUDER)
        assert region.contains(Vec2(10.0, 0.0))
        assert segment_samples_shadowed((0, 0), (5, 0), 1.0, (10, 0))

    def test_point_off_axis_is_clear(self):
        region = shadow_of(ORIGIN, OCCLUDER)
        assert not region.contains(Vec2(0.0, 5.0))
        assert not segment_samples_shadowed((0, 0), (5, 0), 1.0, (0, 5))

    def test_point_in_front_is_clear(self):
        region = shadow_of(ORIGIN, OCCLUDER)
        assert not region.contains(Vec2(4.0, 0.0))
        assert not segment_samples_shadowed((0, 0), (5, 0), 1.0, (4, 0))

    def test_viewer_inside_occluder_rejected(self):
        with pytest.raises(ViewerInsideOccluder):
            shadow_of(Vec2(5.2, 0.0), OCCLUDER)

    def test_matches_dense_sampling_on_random_points(self):
        rng = np.random.default_rng(7)
        region = shadow_of(ORIGIN, OCCLUDER)
        for _ in range(300):
            p = rng.uniform(-12, 12, 2)
            if abs(np.linalg.norm(p - np.array([5.0, 0.0])) - 1.0) < 1e-3:
                continue  # sampling oracle is unreliable exactly on the rim
            expected = segment_samples_shadowed((0, 0), (5, 0), 1.0, p)
            assert region.contains(Vec2(*p)) == expected

    def test_tangent_points_lie_on_circle(self):
        region = shadow_of(ORIGIN, OCCLUDER)
        for t in region.tangent_points():
            assert (t - OCCLUDER.center).norm() == pytest.approx(1.0, abs=1e-12)


class TestOcclusionVerdict:
    def test_collinear_target_fully_occluded(self):
        verdict = occlusion_verdict(ORIGIN, OCCLUDER, Disk(Vec2(10.0, 0.0), 1.0))
        assert verdict is OcclusionVerdict.FULLY_OCCLUDED
        assert occlusion_oracle((0, 0), (5, 0), 1.0, (10, 0), 1.0) is verdict

    def test_offset_target_fully_visible(self):
        verdict = occlusion_verdict(ORIGIN, OCCLUDER, Disk(Vec2(10.0, 6.0), 1.0))
        assert verdict is OcclusionVerdict.FULLY_VISIBLE
        assert occlusion_oracle((0, 0), (5, 0), 1.0, (10, 6), 1.0) is verdict

    def test_straddling_target_partially_occluded(self):
        verdict = occlusion_verdict(ORIGIN, OCCLUDER, Disk(Vec2(10.0, 2.0), 1.0))
        assert verdict is OcclusionVerdict.PARTIALLY_OCCLUDED
        assert occlusion_oracle((0, 0), (5, 0), 1.0, (10, 2), 1.0) is verdict

    def test_target_in_front_fully_visible(self):
        assert occlusion_verdict(ORIGIN, Disk(Vec2(10.0, 0.0), 1.0),
                                 Disk(Vec2(5.0, 0.3), 0.5)) \
            is OcclusionVerdict.FULLY_VISIBLE

    def test_preconditions(self):
        with pytest.raises(ViewerInsideDisk):
            occlusion_verdict(Vec2(5.0, 0.5), OCCLUDER, Disk(Vec2(10, 0), 1.0))
        with pytest.raises(OverlappingDisks):
            occlusion_verdict(ORIGIN, OCCLUDER, Disk(Vec2(6.0, 0.0), 1.0))

    def test_touching_disks_accepted(self):
        # Interiors are disjoint when boundaries touch.
        occlusion_verdict(ORIGIN, OCCLUDER, Disk(Vec2(7.0, 0.0), 1.0))

    def test_agrees_with_sampling_oracle(self):
        rng = np.random.default_rng(13)
        mismatches = 0
        for _ in range(1500):
            viewer, oc, ro, tc, rt = random_valid_triple(rng)
            got = occlusion_verdict(Vec2(*viewer), Disk(Vec2(*oc), ro),
                                    Disk(Vec2(*tc), rt))
            if got is not occlusion_oracle(viewer, oc, ro, tc, rt):
                mismatches += 1
        assert mismatches <= 1

    def test_rigid_motion_invariance(self):
        rng = np.random.default_rng(29)
        for _ in range(10_000):
            viewer, oc, ro, tc, rt = random_valid_triple(rng)
            before = occlusion_verdict(Vec2(*viewer), Disk(Vec2(*oc), ro),
                                       Disk(Vec2(*tc), rt))
            theta = rng.uniform(0, 2 * math.pi)
            shift = rng.uniform(-30, 30, 2)
            rot = np.array([[math.cos(theta), -math.sin(theta)],
                            [math.sin(theta), math.cos(theta)]])
            v2, oc2, tc2 = (rot @ viewer + shift, rot @ oc + shift, rot @ tc + shift)
            after = occlusion_verdict(Vec2(*v2), Disk(Vec2(*oc2), ro),
                                      Disk(Vec2(*tc2), rt))
            assert before is after


class TestMutualVisibility:
    def test_two_robots_always_visible(self):
        cfg = SwarmConfig(n=2)
        state = SwarmState(np.array([[0.0, 0.0], [7.0, 3.0]]))
        assert mutually_visible(state, 0, 1, cfg)

    def test_collinear_outer_pair_blocked(self):
        cfg = SwarmConfig(n=3, r_scan=math.inf)
        state = SwarmState(np.array([[0.0, 0.0], [5.0, 0.0], [10.0, 0.0]]))
        assert not mutually_visible(state, 0, 2, cfg)
        assert mutually_visible(state, 0, 1, cfg)
        assert mutually_visible(state, 1, 2, cfg)

    def test_equilateral_triangle_all_visible(self):
        cfg = SwarmConfig(n=3, r_scan=math.inf)
        state = SwarmState(np.array([[0.0, 0.0], [10.0, 0.0],
                                     [5.0, 5.0 * math.sqrt(3)]]))
        for i in range(3):
            for j in range(3):
                if i != j:
                    assert mutually_visible(state, i, j, cfg)

    def test_symmetry_on_random_states(self):
        rng = np.random.default_rng(5)
        cfg = SwarmConfig(n=6, r_scan=math.inf)
        for _ in range(50):
            state = random_swarm_state(rng, cfg)
            for i in range(cfg.n):
                for j in range(i + 1, cfg.n):
                    assert mutually_visible(state, i, j, cfg) \
                        == mutually_visible(state, j, i, cfg)

    def test_index_errors(self):
        cfg = SwarmConfig(n=2)
        state = SwarmState(np.array([[0.0, 0.0], [5.0, 0.0]]))
        with pytest.raises(IndexOutOfRange):
            mutually_visible(state, 0, 2, cfg)
        with pytest.raises(IndexOutOfRange):
            mutually_visible(state, 1, 1, cfg)


class TestCensus:
    def test_single_robot(self):
        cfg = SwarmConfig(n=1)
        census = visibility_census(SwarmState(np.zeros((1, 2))), cfg)
        assert census.g_all.tolist() == [0]
        assert census.g_vis.tolist() == [0]
        assert census.g_occ.tolist() == [0]

    def test_pair_within_scan(self):
        cfg = SwarmConfig(n=2, r_scan=6.0)
        census = visibility_census(SwarmState(np.array([[0.0, 0.0], [5.0, 0.0]])), cfg)
        assert census.g_all.tolist() == [1, 1]
        assert census.g_vis.tolist() == [1, 1]
        assert census.g_occ.tolist() == [0, 0]

    def test_scan_radius_boundary_is_inclusive(self):
        cfg = SwarmConfig(n=2, r_scan=6.0)
        census = visibility_census(SwarmState(np.array([[0.0, 0.0], [6.0, 0.0]])), cfg)
        assert census.g_all.tolist() == [1, 1]

    def test_collinear_triple(self):
        cfg = SwarmConfig(n=3, r_scan=math.inf)
        census = visibility_census(
            SwarmState(np.array([[0.0, 0.0], [5.0, 0.0], [10.0, 0.0]])), cfg)
        assert census.g_all.tolist() == [2, 2, 2]
        assert census.g_vis.tolist() == [1, 2, 1]
        assert census.g_occ.tolist() == [1, 0, 1]

    def test_counts_consistent_on_random_states(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            n = int(rng.integers(1, 9))
            cfg = SwarmConfig(n=n, r_scan=float(rng.uniform(3, 50)))
            census = visibility_census(random_swarm_state(rng, cfg), cfg)
            assert (census.g_all == census.g_vis + census.g_occ).all()
            assert (census.g_all >= 0).all() and (census.g_all <= n - 1).all()

    def test_occluder_removal_never_hurts_visibility(self):
        rng = np.random.default_rng(17)
        for _ in range(60):
            n = int(rng.integers(3, 9))
            cfg = SwarmConfig(n=n, r_scan=math.inf)
            state = random_swarm_state(rng, cfg)
            vis = _pairwise_visibility(state.positions, cfg.r_bot)
            for k in range(n):
                keep = [i for i in range(n) if i != k]
                sub = _pairwise_visibility(state.positions[keep], cfg.r_bot)
                for a, i in enumerate(keep):
                    for b, j in enumerate(keep):
                        if i != j and vis[i, j]:
                            assert sub[a, b]


class TestCollisionPairs:
    def test_touching_is_not_overlap(self):
        cfg = SwarmConfig(n=2)
        state = SwarmState(np.array([[0.0, 0.0], [2.0, 0.0]]))
        assert collision_pairs(state, cfg) == []

    def test_overlap_detected(self):
        cfg = SwarmConfig(n=2)
        state = SwarmState(np.array([[0.0, 0.0], [1.0, 0.0]]))
        assert collision_pairs(state, cfg) == [(0, 1)]

    def test_spread_swarm_has_none(self):
        rng = np.random.default_rng(3)
        cfg = SwarmConfig(n=8)
        state = random_swarm_state(rng, cfg, min_sep=3.0 * cfg.r_bot)
        assert collision_pairs(state, cfg) == []


class TestVec2AndDisk:
    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            Vec2(float("nan"), 0.0)
        with pytest.raises(ValueError):
            Vec2(0.0, float("inf"))

    def test_bad_radius_rejected(self):
        with pytest.raises(ValueError):
            Disk(Vec2(0, 0), 0.0)
        with pytest.raises(ValueError):
            Disk(Vec2(0, 0), -1.0)
