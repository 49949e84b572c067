import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from activepc.neighborhood import (EllipseParams, REPORTED_OMEGA, UNIT_OMEGA, ball_query, ellipse_query,
                                   group_tube, scaled_distance, select_nearest)

from .oracles import radius_query_reference, tube_reference


def test_scaled_distance_examples():
    assert scaled_distance((3, 4, 0), (0, 0, 0)) == 5.0
    assert scaled_distance((1, 0, 1), (0, 0, 0), EllipseParams.from_scales(4, 1, 1)) == pytest.approx(math.sqrt(5))


def test_reported_operating_point_round_trips_through_logs():
    om = EllipseParams.from_scales(*REPORTED_OMEGA)
    assert (om.alpha, om.beta, om.gamma) == pytest.approx(REPORTED_OMEGA, rel=1e-12)
    assert om.scales.min() > 0


def test_nonpositive_scales_rejected():
    with pytest.raises(ValueError):
        EllipseParams.from_scales(0.0, 1, 1)


def test_ball_query_examples():
    cloud = np.array([[0.1, 0, 0], [0, 0.5, 0], [2, 0, 0]])
    assert ball_query((0, 0, 0), cloud, 1.0, 32) == [0, 1]
    assert ball_query((0, 0, 0), cloud, 0.0, 32) == []
    assert ball_query((2, 0, 0), cloud, 0.0, 32) == [2]
    assert ball_query((0, 0, 0), cloud, np.inf, 32) == [0, 1, 2]
    assert ball_query((0, 0, 0), cloud, np.inf, 2) == [0, 1]


def test_ellipse_query_shrinks_x_reach():
    cloud = np.array([[0.9, 0, 0]])
    assert ellipse_query((0, 0, 0), cloud, 1.0, 8) == [0]
    assert ellipse_query((0, 0, 0), cloud, 1.0, 8, EllipseParams.from_scales(4, 1, 1)) == []


def test_larger_horizontal_scales_keep_vertical_reach():
    cloud = np.array([[0.5, 0, 0], [0, 0.5, 0], [0, 0, 0.5]])
    om = EllipseParams.from_scales(*REPORTED_OMEGA)
    assert ellipse_query((0, 0, 0), cloud, 0.85, 8, om) == [2]


def test_query_argument_errors():
    with pytest.raises(ValueError):
        ball_query((0, 0, 0), np.zeros((2, 3)), -1.0, 4)
    with pytest.raises(ValueError):
        ball_query((0, 0, 0), np.zeros((2, 3)), 1.0, 0)


clouds = st.integers(1, 40).flatmap(
    lambda m: st.tuples(st.integers(0, 2**31), st.just(m), st.floats(0.0, 3.0), st.integers(1, 12), st.booleans()))


@settings(max_examples=100, deadline=None)
@given(clouds)
def test_ball_query_matches_brute_force(case):
    seed, m, r, k, rounded = case
    rng = np.random.default_rng(seed)
    cloud = rng.normal(size=(m, 3))
    if rounded:
        cloud = np.round(cloud * 2) / 2
    q = cloud[0] if rounded else rng.normal(size=3)
    assert ball_query(q, cloud, r, k) == radius_query_reference(q, cloud, r, k)


@settings(max_examples=100, deadline=None)
@given(clouds, st.tuples(*[st.floats(0.1, 5.0)] * 3))
def test_ellipse_query_matches_brute_force(case, scales):
    seed, m, r, k, _ = case
    rng = np.random.default_rng(seed)
    cloud = rng.normal(size=(m, 3))
    q = rng.normal(size=3)
    om = EllipseParams.from_scales(*scales)
    assert ellipse_query(q, cloud, r, k, om) == radius_query_reference(q, cloud, r, k, om.scales)


@settings(max_examples=100, deadline=None)
@given(clouds)
def test_unit_omega_reduces_to_ball_query(case):
    seed, m, r, k, rounded = case
    rng = np.random.default_rng(seed)
    cloud = rng.normal(size=(m, 3))
    if rounded:
        cloud = np.round(cloud)
    q = rng.normal(size=3)
    assert ellipse_query(q, cloud, r, k, UNIT_OMEGA) == ball_query(q, cloud, r, k)


@settings(max_examples=100, deadline=None)
@given(clouds, st.integers(0, 2), st.floats(1.0, 10.0))
def test_growing_a_scale_never_adds_members(case, axis, factor):
    seed, m, r, _, _ = case
    rng = np.random.default_rng(seed)
    cloud = rng.normal(size=(m, 3))
    q = rng.normal(size=3)
    base = rng.uniform(0.2, 3.0, 3)
    bigger = base.copy()
    bigger[axis] *= factor
    small = set(ellipse_query(q, cloud, r, m, EllipseParams.from_scales(*bigger)))
    large = set(ellipse_query(q, cloud, r, m, EllipseParams.from_scales(*base)))
    assert small <= large


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=6, max_size=6), st.tuples(*[st.floats(0.01, 10.0)] * 3))
def test_scaled_distance_symmetric(coords, scales):
    p, q = coords[:3], coords[3:]
    om = EllipseParams.from_scales(*scales)
    assert scaled_distance(p, q, om) == scaled_distance(q, p, om)


def test_select_nearest_breaks_ties_by_index():
    d = np.array([[1.0, 0.5, 1.0, 1.0, 0.5]])
    idx, ok = select_nearest(d, np.ones_like(d, bool), 3)
    assert idx[0].tolist() == [1, 4, 0] and ok.all()


def test_tube_on_static_scene_replicates_neighbourhood():
    rng = np.random.default_rng(0)
    frame = rng.normal(scale=0.2, size=(16, 3))
    video = np.repeat(frame[None], 3, axis=0)
    anchors = frame[None, :4]
    g = group_tube(anchors, np.array([1]), video, r=0.3, temporal_radius=1, k_max=48)
    for a in range(4):
        spatial = ball_query(frame[a], frame, 0.3, 16)
        got = g.index[0, a][g.valid[0, a]]
        assert len(got) == 3 * len(spatial)
        assert sorted((got % 16).tolist()) == sorted(spatial * 3)
        assert set(g.offsets[0, a][g.valid[0, a], 3].tolist()) == {-1.0, 0.0, 1.0}


def test_tube_suppresses_fast_horizontal_motion():
    video = np.array([[[0.0, 0, 0]], [[10.0, 0, 0]], [[20.0, 0, 0]]])
    anchors = video[1][None]
    iso = group_tube(anchors, np.array([1]), video, r=10.0, temporal_radius=1, k_max=4)
    assert iso.valid.sum() == 3
    squeezed = group_tube(anchors, np.array([1]), video, r=10.0, temporal_radius=1, k_max=4,
                          omega=EllipseParams.from_scales(4, 1, 1))
    assert squeezed.valid.sum() == 1
    assert squeezed.index[0, 0, 0] == 1  # only the anchor's own frame survives


@pytest.mark.parametrize("seed", range(10))
def test_tube_matches_exhaustive_enumeration(seed):
    rng = np.random.default_rng(seed)
    video = rng.normal(scale=0.5, size=(2, 4, 3))
    scales = rng.uniform(0.5, 2.0, 3)
    for frame in range(2):
        g = group_tube(video[frame][None], np.array([frame]), video, r=0.8, temporal_radius=1, k_max=5, omega=scales)
        for a in range(4):
            want = tube_reference(video[frame, a], frame, video, 0.8, 1, 5, scales)
            got = g.index[0, a][g.valid[0, a]]
            assert [(int(i) // 4, int(i) % 4) for i in got] == want


def test_tube_padding_repeats_first_valid_and_batches():
    rng = np.random.default_rng(1)
    video = rng.normal(size=(2, 3, 10, 3))
    anchors = video[:, [0, 2], :2]
    g = group_tube(anchors, np.array([0, 2]), video, r=0.5, temporal_radius=1, k_max=8)
    assert g.index.shape == (2, 2, 2, 8)
    first = g.index[..., :1]
    assert ((g.index == first) | g.valid).all()
    assert g.valid[..., 0].all()  # the anchor is a point of its own frame
    np.testing.assert_array_equal(np.abs(g.offsets[..., 3]) <= 1, True)
    single = group_tube(anchors[1], np.array([0, 2]), video[1], r=0.5, temporal_radius=1, k_max=8)
    np.testing.assert_array_equal(single.index, g.index[1])
