import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcirl.shiftdemo import (
    HALF_WIDTH,
    N_SAMPLES,
    MarginFrame,
    angle_between,
    generate_frame,
    optimal_direction,
    shift_report,
)


def sweep_oracle(frames, n=3600):
    """Independent brute force: best of n headings, no refinement."""
    d = np.concatenate([f.demonstration - f.samples for f in frames])
    best, arg = -np.inf, None
    for i in range(n):
        phi = 2 * math.pi * i / n
        m = np.min(d @ [math.cos(phi), math.sin(phi)])
        if m > best:
            best, arg = m, phi
    return np.array([math.cos(arg), math.sin(arg)]), best


def test_zero_shift_is_base_frame():
    a, b = generate_frame(3), generate_frame(3, shift=(0.0, 0.0))
    assert np.array_equal(a.samples, b.samples) and np.array_equal(a.demonstration, b.demonstration)


def test_shift_translates_every_point():
    a, b = generate_frame(3), generate_frame(3, shift=(5.0, 5.0))
    assert np.array_equal(b.samples, a.samples + 5.0)
    assert np.array_equal(b.demonstration, a.demonstration + 5.0)
    assert np.array_equal(b.shift, [5.0, 5.0])


def test_seeds_differ_but_rules_agree():
    a, b = generate_frame(1), generate_frame(2)
    assert not np.array_equal(a.samples, b.samples)
    assert np.array_equal(a.demonstration, b.demonstration)
    for f in (a, b):
        assert f.samples.shape == (N_SAMPLES, 2) and np.all(np.abs(f.samples) <= HALF_WIDTH)


def test_frame_needs_exactly_100_samples():
    with pytest.raises(ValueError):
        MarginFrame(np.zeros((99, 2)), np.zeros(2))


def test_symmetric_cloud_left_of_demo_gives_horizontal_direction():
    rng = np.random.default_rng(0)
    half = rng.uniform(-5, 5, size=(50, 2))
    cloud = np.concatenate([half, half * [1, -1]])  # mirror-symmetric about the x axis
    frame = MarginFrame(cloud, demonstration=[30.0, 0.0])
    d = optimal_direction(frame)
    assert angle_between(d.vector, [1.0, 0.0]) < 1.0
    assert d.margin > 0 and not d.negative_margin


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**5), dx=st.floats(-100, 100), dy=st.floats(-100, 100))
def test_translated_frames_share_direction(seed, dx, dy):
    f = generate_frame(seed)
    a, b = optimal_direction(f), optimal_direction(f.translated((dx, dy)))
    assert angle_between(a.vector, b.vector) < 1.0


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**5))
def test_unit_norm_and_at_least_sweep_quality(seed):
    frames = [generate_frame(seed), generate_frame(seed + 1, shift=(7, -3), demo_offset=(20.0, 80.0))]
    for fs in ([frames[0]], frames):
        d = optimal_direction(fs)
        assert abs(np.linalg.norm(d.vector) - 1.0) <= 1e-12
        _, oracle_margin = sweep_oracle(fs)
        assert d.margin >= oracle_margin - 1e-9


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**5))
def test_pooled_margin_not_above_per_frame(seed):
    frames = [generate_frame(seed), generate_frame(seed + 1, shift=(40, -30), demo_offset=(10.0, 90.0))]
    pooled = optimal_direction(frames)
    assert pooled.margin <= min(optimal_direction(f).margin for f in frames) + 1e-9


def test_negative_margin_flag():
    cloud = np.random.default_rng(0).normal(size=(N_SAMPLES, 2)) * 10
    d = optimal_direction(MarginFrame(cloud, demonstration=[0.0, 0.0]))
    assert d.negative_margin and d.margin <= 0


def test_report_structure_and_csv():
    rep = shift_report()
    assert len(rep.per_frame) == 2 and rep.pooled is not None
    for i, d in enumerate(rep.per_frame):
        assert d.margin >= rep.pooled_margin_in_frame[i] - 1e-12
    points = list(csv.DictReader(io.StringIO(rep.points_csv())))
    assert len(points) == 2 * (N_SAMPLES + 1)
    assert sum(int(p["is_demo"]) for p in points) == 2
    dirs = list(csv.DictReader(io.StringIO(rep.directions_csv())))
    names = [r["name"] for r in dirs]
    assert names[:3] == ["frame-0", "frame-1", "pooled"]
    assert set(rep.to_dict()["directions"]) == set(names)


def test_report_matches_sweep_oracle():
    rep = shift_report()
    for f, d in zip(rep.frames, rep.per_frame):
        w, m = sweep_oracle([f])
        assert angle_between(w, d.vector) < 0.2 and d.margin >= m - 1e-9
    w, _ = sweep_oracle(rep.frames)
    assert angle_between(w, rep.pooled.vector) < 0.2
