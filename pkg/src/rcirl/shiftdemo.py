"""Background shifting in a 2-D reward-feature plane.

Each frame holds one demonstration point ``R_H`` and 100 random samples.  A
linear reward is a direction ``w``; its margin in a frame is
``min_j w . (R_H - x_j)``.  Because the margin only sees differences, rigidly
translating a frame never changes its best direction.  Mixing frames that
differ in demonstration-to-cloud geometry does, which is the failure pooled
training suffers from.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

N_SAMPLES = 100
HALF_WIDTH = 50.0
N_ANGLES = 3600
DEMO_SEED = 7

# cloud center and demonstration offsets (relative to the cloud) for the two frames
CLOUD_CENTER = np.array([0.0, 0.0])
BASE_DEMO_OFFSET = np.array([90.0, 10.0])
SHIFTED_DEMO_OFFSET = np.array([10.0, 90.0])
FRAME_SHIFT = np.array([40.0, -30.0])


@dataclass(frozen=True, eq=False)
class MarginFrame:
    samples: np.ndarray
    demonstration: np.ndarray
    shift: np.ndarray = field(default_factory=lambda: np.zeros(2))
    n_clipped: int = 0

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        if s.shape != (N_SAMPLES, 2):
            raise ValueError(f"a margin frame holds exactly {N_SAMPLES} 2-D samples, got {s.shape}")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "demonstration", np.array(self.demonstration, dtype=float).reshape(2))
        object.__setattr__(self, "shift", np.array(self.shift, dtype=float).reshape(2))

    @property
    def differences(self) -> np.ndarray:
        return self.demonstration - self.samples

    def translated(self, offset) -> "MarginFrame":
        offset = np.asarray(offset, dtype=float)
        return MarginFrame(self.samples + offset, self.demonstration + offset, self.shift + offset, self.n_clipped)

    def margin(self, w) -> float:
        return float(np.min(self.differences @ np.asarray(w, dtype=float)))


def generate_frame(seed: int, shift=(0.0, 0.0), demo_offset=BASE_DEMO_OFFSET) -> MarginFrame:
    """Standard-Cauchy cloud clipped to a box, demonstration off to one side, then shifted."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5F3]))
    raw = rng.standard_cauchy((N_SAMPLES, 2))
    clipped = np.clip(raw, -HALF_WIDTH, HALF_WIDTH)
    n_clipped = int(np.count_nonzero(np.any(raw != clipped, axis=1)))
    base = MarginFrame(CLOUD_CENTER + clipped, CLOUD_CENTER + np.asarray(demo_offset, dtype=float),
                       np.zeros(2), n_clipped)
    return base.translated(shift)


def _unit(phi: float) -> np.ndarray:
    return np.array([math.cos(phi), math.sin(phi)])


@dataclass(frozen=True)
class Direction:
    vector: np.ndarray
    margin: float
    negative_margin: bool

    @property
    def angle_deg(self) -> float:
        return math.degrees(math.atan2(self.vector[1], self.vector[0]))


def _golden_max(f, lo: float, hi: float, tol: float = 1e-12) -> float:
    g = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def optimal_direction(frames: MarginFrame | Sequence[MarginFrame], n_angles: int = N_ANGLES) -> Direction:
    """Unit ``w`` maximizing the smallest ``w . (R_H - x)`` over every frame's own pairs.

    A sweep over ``n_angles`` headings finds the best bin, then golden-section
    search refines inside the neighbouring bins.  When no heading separates
    every frame the best (negative) max-min direction is returned and flagged.
    """
    if isinstance(frames, MarginFrame):
        frames = [frames]
    if len(frames) == 0:
        raise ValueError("optimal_direction needs at least one frame")
    d = np.concatenate([f.differences for f in frames])
    phis = np.arange(n_angles) * (2.0 * math.pi / n_angles)
    margins = np.min(np.stack([np.cos(phis), np.sin(phis)], axis=1) @ d.T, axis=1)
    k = int(np.argmax(margins))
    step = 2.0 * math.pi / n_angles

    def f(phi):
        return float(np.min(d @ _unit(phi)))

    phi = _golden_max(f, phis[k] - step, phis[k] + step)
    if f(phi) < margins[k]:
        phi = phis[k]
    w = _unit(phi)
    w = w / np.linalg.norm(w)
    m = f(math.atan2(w[1], w[0]))
    return Direction(w, m, m <= 0.0)


def angle_between(u, v) -> float:
    """Unsigned angle in degrees."""
    c = float(np.clip(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)), -1.0, 1.0))
    return math.degrees(math.acos(c))


def mixed_direction(frames: Sequence[MarginFrame]) -> Direction:
    """Unconditioned pooling: every demonstration against every sample of every frame."""
    samples = np.concatenate([f.samples for f in frames])
    demos = np.stack([f.demonstration for f in frames])
    diffs = (demos[:, None, :] - samples[None, :, :]).reshape(-1, 2)
    # reuse the sweep on a synthetic frame set built from the cross differences
    chunks = [MarginFrame(samples=-diffs[i:i + N_SAMPLES], demonstration=np.zeros(2))
              for i in range(0, len(diffs), N_SAMPLES)]
    return optimal_direction(chunks)


@dataclass
class ShiftReport:
    seed: int
    frames: list
    per_frame: list
    pooled: Direction
    mixed: Direction
    pooled_margin_in_frame: list
    angles: dict

    def directions_rows(self) -> list[tuple[str, float, float, float]]:
        rows = [(f"frame-{i}", *d.vector, d.margin) for i, d in enumerate(self.per_frame)]
        rows.append(("pooled", *self.pooled.vector, self.pooled.margin))
        for i, m in enumerate(self.pooled_margin_in_frame):
            rows.append((f"pooled@frame-{i}", *self.pooled.vector, m))
        rows.append(("mixed", *self.mixed.vector, self.mixed.margin))
        return rows

    def points_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frame_id", "x", "y", "is_demo"])
        for i, fr in enumerate(self.frames):
            for x, y in fr.samples:
                w.writerow([f"frame-{i}", repr(float(x)), repr(float(y)), 0])
            w.writerow([f"frame-{i}", repr(float(fr.demonstration[0])), repr(float(fr.demonstration[1])), 1])
        return buf.getvalue()

    def directions_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "dx", "dy", "margin"])
        for name, dx, dy, m in self.directions_rows():
            w.writerow([name, repr(float(dx)), repr(float(dy)), repr(float(m))])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "clipped_samples": [f.n_clipped for f in self.frames],
            "clip_half_width": HALF_WIDTH,
            "directions": {name: {"dx": dx, "dy": dy, "margin": m} for name, dx, dy, m in self.directions_rows()},
            "negative_margin": {f"frame-{i}": d.negative_margin for i, d in enumerate(self.per_frame)}
            | {"pooled": self.pooled.negative_margin},
            "angles_deg": self.angles,
        }


def shift_report(seed: int = DEMO_SEED) -> ShiftReport:
    """Two frames, the second with a different demonstration-to-cloud geometry and a shift."""
    frames = [
        generate_frame(seed),
        generate_frame(seed + 1, shift=FRAME_SHIFT, demo_offset=SHIFTED_DEMO_OFFSET),
    ]
    per_frame = [optimal_direction(f) for f in frames]
    pooled = optimal_direction(frames)
    mixed = mixed_direction(frames)
    angles = {f"pooled~frame-{i}": angle_between(pooled.vector, d.vector) for i, d in enumerate(per_frame)}
    angles["frame-0~frame-1"] = angle_between(per_frame[0].vector, per_frame[1].vector)
    return ShiftReport(seed, frames, per_frame, pooled, mixed,
                       [f.margin(pooled.vector) for f in frames], angles)
