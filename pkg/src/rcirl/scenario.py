"""Station-time planning problems and the raw feature generator.

A :class:`Scenario` fixes everything the speed planner conditions on: the
path profile, obstacles projected onto the station axis, the initial
kinematic state and the 18-point evaluation time grid.  Feature extraction
maps one trajectory point ``(t, s, v, a, j)`` to the 21 raw channels listed
in :data:`FEATURE_NAMES`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ContractViolation, MalformedInputError

N_TIMES = 18
N_FEATURES = 21
SENTINEL_DISTANCE = 200.0
# collision metric: 1 s of time gap counts like 10 m of station gap
TIME_TO_STATION = 10.0

FEATURE_NAMES = (
    "l",
    "dl",
    "ddl",
    "curvature",
    "station",
    "time",
    "velocity",
    "speed_limit",
    "acceleration",
    "jerk",
    "collision_distance",
    "follow_distance",
    "follow_speed",
    "overtake_distance",
    "overtake_speed",
    "stop_distance",
    "virtual_distance",
    "nudge_lateral",
    "nudge_speed",
    "lateral_acceleration",
    "lateral_jerk",
)
FEATURE_INDEX = {name: i for i, name in enumerate(FEATURE_NAMES)}


def default_time_grid(n: int = N_TIMES, dt: float = 0.5) -> np.ndarray:
    return np.arange(n, dtype=float) * dt


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


def _nan_to_none(a: np.ndarray) -> list:
    return [None if not np.isfinite(x) else float(x) for x in a]


def _none_to_nan(seq) -> np.ndarray:
    return np.array([np.nan if x is None else x for x in seq], dtype=float)


class ObstacleKind(str, Enum):
    FOLLOW = "follow"
    OVERTAKE = "overtake"
    STOP = "stop"
    VIRTUAL = "virtual"
    NUDGE = "nudge"


BLOCKING_KINDS = (ObstacleKind.FOLLOW, ObstacleKind.OVERTAKE, ObstacleKind.STOP, ObstacleKind.VIRTUAL)


class Provenance(str, Enum):
    EXPERT = "expert"
    SAMPLED = "sampled"
    SELECTED = "selected"


@dataclass(frozen=True, eq=False)
class PathProfile:
    """Path quantities sampled on a station grid.

    Queries between grid points interpolate linearly; queries outside the
    grid clamp to the boundary sample.
    """

    station_grid: np.ndarray
    curvature: np.ndarray
    speed_limit: np.ndarray
    lateral_offset: np.ndarray
    dl: np.ndarray
    ddl: np.ndarray
    curvature_rate: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        for name in ("station_grid", "curvature", "speed_limit", "lateral_offset", "dl", "ddl"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        s = self.station_grid
        if s.ndim != 1 or s.size < 2:
            raise ContractViolation("station_grid needs at least two samples")
        if np.any(np.diff(s) <= 0):
            raise ContractViolation("station_grid must be strictly increasing")
        for name in ("curvature", "speed_limit", "lateral_offset", "dl", "ddl"):
            arr = getattr(self, name)
            if arr.shape != s.shape:
                raise ContractViolation(f"{name} has {arr.size} samples, station_grid has {s.size}")
            if not np.all(np.isfinite(arr)):
                raise ContractViolation(f"{name} must be finite")
        if np.any(self.speed_limit <= 0):
            raise ContractViolation("speed_limit must be positive")
        object.__setattr__(self, "curvature_rate", _frozen(np.gradient(self.curvature, s)))

    @classmethod
    def straight(cls, length: float = 300.0, speed_limit: float = 15.0, step: float = 1.0) -> "PathProfile":
        s = np.arange(0.0, length + step / 2, step)
        z = np.zeros_like(s)
        return cls(s, z, np.full_like(s, speed_limit), z, z, z)

    def interp(self, s, name: str) -> np.ndarray:
        return np.interp(s, self.station_grid, getattr(self, name))

    @property
    def max_speed_limit(self) -> float:
        return float(self.speed_limit.max())

    def to_dict(self) -> dict:
        return {
            "station_grid": self.station_grid.tolist(),
            "curvature": self.curvature.tolist(),
            "speed_limit": self.speed_limit.tolist(),
            "lateral_offset": self.lateral_offset.tolist(),
            "dl": self.dl.tolist(),
            "ddl": self.ddl.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PathProfile":
        return cls(d["station_grid"], d["curvature"], d["speed_limit"], d["lateral_offset"], d["dl"], d["ddl"])


@dataclass(frozen=True, eq=False)
class Obstacle:
    """An obstacle already projected onto the ego path.

    Follow, Overtake and Nudge obstacles carry a station interval
    ``[s_rear[k], s_front[k]]`` and a speed per evaluation time; NaN in the
    interval arrays means the obstacle is not on the path at that time.
    Stop and Virtual obstacles carry a single ``station``.
    """

    kind: ObstacleKind
    s_rear: np.ndarray | None = None
    s_front: np.ndarray | None = None
    speed: np.ndarray | None = None
    station: float | None = None
    lateral_gap: float | None = None
    id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", ObstacleKind(self.kind))
        if self.kind in (ObstacleKind.STOP, ObstacleKind.VIRTUAL):
            if self.station is None or not np.isfinite(self.station):
                raise ContractViolation(f"{self.kind.value} obstacle needs a finite station")
            object.__setattr__(self, "station", float(self.station))
            return
        if self.s_rear is None or self.s_front is None or self.speed is None:
            raise ContractViolation(f"{self.kind.value} obstacle needs s_rear, s_front and speed")
        rear, front, speed = _frozen(self.s_rear), _frozen(self.s_front), _frozen(self.speed)
        if not (rear.shape == front.shape == speed.shape) or rear.ndim != 1:
            raise ContractViolation("obstacle arrays must be 1-D and equally long")
        if not np.array_equal(np.isnan(rear), np.isnan(front)):
            raise ContractViolation("s_rear and s_front must be absent at the same times")
        present = ~np.isnan(rear)
        if np.any(rear[present] > front[present]):
            raise ContractViolation("s_rear must not exceed s_front")
        if not np.all(np.isfinite(speed)):
            raise ContractViolation("obstacle speed must be finite")
        object.__setattr__(self, "s_rear", rear)
        object.__setattr__(self, "s_front", front)
        object.__setattr__(self, "speed", speed)
        if self.kind is ObstacleKind.NUDGE:
            if self.lateral_gap is None or not np.isfinite(self.lateral_gap):
                raise ContractViolation("nudge obstacle needs a finite lateral_gap")
            object.__setattr__(self, "lateral_gap", float(self.lateral_gap))

    @classmethod
    def stop(cls, station: float, id: str = "stop") -> "Obstacle":
        return cls(ObstacleKind.STOP, station=station, id=id)

    @classmethod
    def virtual(cls, station: float, id: str = "destination") -> "Obstacle":
        return cls(ObstacleKind.VIRTUAL, station=station, id=id)

    @classmethod
    def moving(cls, kind, time_grid, s_rear0: float, length: float, speed: float,
               t_on: float = -np.inf, t_off: float = np.inf, lateral_gap=None, id: str = "") -> "Obstacle":
        """Constant-velocity obstacle, on the path for ``t_on <= t <= t_off``."""
        t = np.asarray(time_grid, dtype=float)
        rear = s_rear0 + speed * t
        present = (t >= t_on) & (t <= t_off)
        rear = np.where(present, rear, np.nan)
        return cls(kind, rear, rear + length, np.full_like(t, speed), lateral_gap=lateral_gap, id=id)

    @classmethod
    def crossing(cls, time_grid, s_lo: float, s_hi: float, t_on: float, t_off: float,
                 speed: float = 0.0, kind=ObstacleKind.OVERTAKE, id: str = "") -> "Obstacle":
        """A crossing agent blocking a fixed station band while it is on the path."""
        t = np.asarray(time_grid, dtype=float)
        present = (t >= t_on) & (t <= t_off)
        rear = np.where(present, s_lo, np.nan)
        front = np.where(present, s_hi, np.nan)
        return cls(kind, rear, front, np.full_like(t, speed), id=id)

    def translated(self, ds: float) -> "Obstacle":
        if self.kind in (ObstacleKind.STOP, ObstacleKind.VIRTUAL):
            return Obstacle(self.kind, station=self.station + ds, id=self.id)
        return Obstacle(self.kind, self.s_rear + ds, self.s_front + ds, self.speed,
                        lateral_gap=self.lateral_gap, id=self.id)

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "id": self.id}
        if self.kind in (ObstacleKind.STOP, ObstacleKind.VIRTUAL):
            d["station"] = self.station
        else:
            d["s_rear"] = _nan_to_none(self.s_rear)
            d["s_front"] = _nan_to_none(self.s_front)
            d["speed"] = self.speed.tolist()
            if self.kind is ObstacleKind.NUDGE:
                d["lateral_gap"] = self.lateral_gap
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Obstacle":
        kind = ObstacleKind(d["kind"])
        if kind in (ObstacleKind.STOP, ObstacleKind.VIRTUAL):
            return cls(kind, station=d["station"], id=d.get("id", ""))
        return cls(kind, _none_to_nan(d["s_rear"]), _none_to_nan(d["s_front"]), d["speed"],
                   lateral_gap=d.get("lateral_gap"), id=d.get("id", ""))


@dataclass(frozen=True, eq=False)
class Scenario:
    id: str
    seed: int
    path: PathProfile
    obstacles: tuple[Obstacle, ...]
    v0: float
    a0: float = 0.0
    s0_station: float = 0.0
    time_grid: np.ndarray = field(default_factory=default_time_grid)
    family: str = ""

    def __post_init__(self):
        tg = _frozen(self.time_grid)
        object.__setattr__(self, "time_grid", tg)
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if tg.shape != (N_TIMES,):
            raise ContractViolation(f"time_grid must have {N_TIMES} points, got {tg.size}")
        if tg[0] != 0.0 or np.any(np.diff(tg) <= 0):
            raise ContractViolation("time_grid must start at 0 and strictly increase")
        if not (np.isfinite(self.v0) and self.v0 >= 0):
            raise ContractViolation("v0 must be finite and non-negative")
        for ob in self.obstacles:
            if ob.s_rear is not None and ob.s_rear.shape != tg.shape:
                raise ContractViolation(f"obstacle {ob.id!r} is not sampled on the time grid")

    def translated(self, ds: float) -> "Scenario":
        """Same problem shifted by ``ds`` along the station axis (path untouched)."""
        return Scenario(self.id, self.seed, self.path, tuple(o.translated(ds) for o in self.obstacles),
                        self.v0, self.a0, self.s0_station + ds, self.time_grid, self.family)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "seed": int(self.seed),
            "family": self.family,
            "v0": float(self.v0),
            "a0": float(self.a0),
            "s0_station": float(self.s0_station),
            "time_grid": self.time_grid.tolist(),
            "path": self.path.to_dict(),
            "obstacles": [o.to_dict() for o in self.obstacles],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(
            id=d["id"],
            seed=int(d["seed"]),
            path=PathProfile.from_dict(d["path"]),
            obstacles=tuple(Obstacle.from_dict(o) for o in d.get("obstacles", [])),
            v0=float(d["v0"]),
            a0=float(d.get("a0", 0.0)),
            s0_station=float(d.get("s0_station", 0.0)),
            time_grid=d["time_grid"],
            family=d.get("family", ""),
        )


class TrajectoryPoint(NamedTuple):
    t: float
    s: float
    v: float
    a: float
    j: float


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A speed profile sampled on the scenario time grid, stored column-wise."""

    t: np.ndarray
    s: np.ndarray
    v: np.ndarray
    a: np.ndarray
    j: np.ndarray
    provenance: Provenance = Provenance.SAMPLED
    id: str = ""

    def __post_init__(self):
        cols = [_frozen(getattr(self, c)) for c in "tsvaj"]
        if len({c.shape for c in cols}) != 1 or cols[0].ndim != 1:
            raise ContractViolation("trajectory columns must be 1-D and equally long")
        for name, c in zip("tsvaj", cols):
            if not np.all(np.isfinite(c)):
                raise ContractViolation(f"trajectory column {name} must be finite")
            object.__setattr__(self, name, c)
        if np.any(cols[2] < 0):
            raise ContractViolation("trajectory speed must be non-negative")
        if np.any(np.diff(cols[1]) < 0):
            raise ContractViolation("trajectory station must be non-decreasing")
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    def __len__(self):
        return self.t.size

    @property
    def points(self) -> list[TrajectoryPoint]:
        return [TrajectoryPoint(*map(float, row)) for row in zip(self.t, self.s, self.v, self.a, self.j)]

    def check_grid(self, time_grid) -> None:
        if not np.array_equal(self.t, np.asarray(time_grid, dtype=float)):
            raise ContractViolation(f"trajectory {self.id!r} is not aligned to the time grid")

    def with_provenance(self, provenance, id=None) -> "Trajectory":
        return Trajectory(self.t, self.s, self.v, self.a, self.j, provenance, self.id if id is None else id)

    def translated(self, ds: float) -> "Trajectory":
        return Trajectory(self.t, self.s + ds, self.v, self.a, self.j, self.provenance, self.id)

    def to_dict(self) -> dict:
        return {"id": self.id, "provenance": self.provenance.value,
                "s": self.s.tolist(), "v": self.v.tolist(), "a": self.a.tolist(), "j": self.j.tolist()}

    @classmethod
    def from_dict(cls, d: dict, time_grid) -> "Trajectory":
        return cls(np.asarray(time_grid, dtype=float), d["s"], d["v"], d["a"], d["j"],
                   d.get("provenance", "sampled"), d.get("id", ""))


@dataclass(frozen=True, eq=False)
class Occupancy:
    """Blocked station intervals per evaluation time.

    Row ``r`` of ``lo``/``hi`` is one blocking obstacle; NaN marks times at
    which it is off the path.  Stop and Virtual rows have ``hi = inf``.
    """

    time_grid: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    speed: np.ndarray
    kinds: tuple[ObstacleKind, ...]

    @property
    def n_regions(self) -> int:
        return len(self.kinds)

    def intervals(self, k: int) -> list[tuple[float, float, ObstacleKind, float]]:
        out = []
        for r, kind in enumerate(self.kinds):
            if not np.isnan(self.lo[r, k]):
                out.append((float(self.lo[r, k]), float(self.hi[r, k]), kind, float(self.speed[r, k])))
        return out


def project_obstacles(scenario: Scenario) -> Occupancy:
    """Project the blocking obstacles of ``scenario`` onto the ST graph.

    Nudge obstacles sit beside the lane and do not block the station axis;
    they only feed the nudge feature channels.
    """
    tg = scenario.time_grid
    lo, hi, speed, kinds = [], [], [], []
    for ob in scenario.obstacles:
        if ob.kind not in BLOCKING_KINDS:
            continue
        if ob.kind in (ObstacleKind.STOP, ObstacleKind.VIRTUAL):
            lo.append(np.full(tg.shape, ob.station))
            hi.append(np.full(tg.shape, np.inf))
            speed.append(np.zeros(tg.shape))
        else:
            lo.append(ob.s_rear)
            hi.append(ob.s_front)
            speed.append(ob.speed)
        kinds.append(ob.kind)
    shape = (len(kinds), tg.size)
    return Occupancy(
        tg,
        _frozen(np.array(lo).reshape(shape)),
        _frozen(np.array(hi).reshape(shape)),
        _frozen(np.array(speed).reshape(shape)),
        tuple(kinds),
    )


def _gap(s, lo, hi):
    # station gap to [lo, hi]; 0 inside, NaN (absent) -> NaN
    return np.maximum(np.maximum(lo - s, s - hi), 0.0)


def collision_distance(occupancy: Occupancy, k, s) -> np.ndarray:
    """Distance in scaled (t, s) space from points ``(t_k, s)`` to any blocked interval."""
    k = np.asarray(k)
    s = np.asarray(s, dtype=float)
    k, s = np.broadcast_arrays(k, s)
    if occupancy.n_regions == 0:
        return np.full(s.shape, SENTINEL_DISTANCE)
    tg = occupancy.time_grid
    dt = TIME_TO_STATION * (tg[k][..., None] - tg)  # (..., T)
    best = np.full(s.shape, np.inf)
    with np.errstate(invalid="ignore"):
        for r in range(occupancy.n_regions):
            gap = _gap(s[..., None], occupancy.lo[r], occupancy.hi[r])  # (..., T)
            d = np.sqrt(dt * dt + gap * gap)
            d = np.where(np.isnan(d), np.inf, d)
            best = np.minimum(best, d.min(axis=-1))
    return np.minimum(best, SENTINEL_DISTANCE)


def _nearest_ahead(lo, hi, speed, k, s):
    """Nearest interval at time k not entirely behind s: (distance, speed)."""
    dist = np.full(s.shape, SENTINEL_DISTANCE)
    spd = np.zeros(s.shape)
    for r in range(lo.shape[0]):
        lo_k, hi_k, v_k = lo[r][k], hi[r][k], speed[r][k]
        with np.errstate(invalid="ignore"):
            ahead = ~np.isnan(lo_k) & (hi_k >= s)
            d = np.where(ahead, np.maximum(lo_k - s, 0.0), np.inf)
        closer = d < dist
        dist = np.where(closer, d, dist)
        spd = np.where(closer, v_k, spd)
    return np.minimum(dist, SENTINEL_DISTANCE), spd


def station_features(scenario: Scenario, occupancy: Occupancy, k, s) -> np.ndarray:
    """The channels that depend on (time index, station) only.

    Returns an array ``(..., 21)`` with the kinematic channels (6, 8, 9, 19,
    20) left at zero; :func:`compute_features` fills them in.
    """
    k = np.asarray(k)
    s = np.asarray(s, dtype=float)
    k, s = np.broadcast_arrays(k, s)
    out = np.zeros(s.shape + (N_FEATURES,))
    path = scenario.path
    out[..., 0] = path.interp(s, "lateral_offset")
    out[..., 1] = path.interp(s, "dl")
    out[..., 2] = path.interp(s, "ddl")
    out[..., 3] = path.interp(s, "curvature")
    out[..., 4] = s
    out[..., 5] = scenario.time_grid[k]
    out[..., 7] = path.interp(s, "speed_limit")
    out[..., 10] = collision_distance(occupancy, k, s)
    for kind, (di, vi) in ((ObstacleKind.FOLLOW, (11, 12)), (ObstacleKind.OVERTAKE, (13, 14)),
                           (ObstacleKind.STOP, (15, None)), (ObstacleKind.VIRTUAL, (16, None))):
        rows = [r for r, kk in enumerate(occupancy.kinds) if kk is kind]
        d, v = _nearest_ahead(occupancy.lo[rows], occupancy.hi[rows], occupancy.speed[rows], k, s)
        out[..., di] = d
        if vi is not None:
            out[..., vi] = v
    nudges = [o for o in scenario.obstacles if o.kind is ObstacleKind.NUDGE]
    lat = np.full(s.shape, SENTINEL_DISTANCE)
    nspd = np.zeros(s.shape)
    best = np.full(s.shape, np.inf)
    for ob in nudges:
        lo_k, hi_k = ob.s_rear[k], ob.s_front[k]
        with np.errstate(invalid="ignore"):
            ahead = ~np.isnan(lo_k) & (hi_k >= s)
            d = np.where(ahead, np.maximum(lo_k - s, 0.0), np.inf)
        closer = d < best
        best = np.where(closer, d, best)
        lat = np.where(closer, ob.lateral_gap, lat)
        nspd = np.where(closer, ob.speed[k], nspd)
    out[..., 17] = np.minimum(lat, SENTINEL_DISTANCE)
    out[..., 18] = nspd
    return out


def compute_features(scenario: Scenario, occupancy: Occupancy, k, s, v, a, j,
                     base: np.ndarray | None = None) -> np.ndarray:
    """Vectorized raw features for points ``(t_k, s, v, a, j)``; shape ``(..., 21)``.

    ``base`` may carry precomputed :func:`station_features` for the same
    ``(k, s)`` to skip the obstacle queries.
    """
    k, s, v, a, j = np.broadcast_arrays(np.asarray(k), *(np.asarray(x, dtype=float) for x in (s, v, a, j)))
    out = station_features(scenario, occupancy, k, s) if base is None else np.array(base, dtype=float)
    kappa = out[..., 3]
    dkappa = scenario.path.interp(s, "curvature_rate")
    out[..., 6] = v
    out[..., 8] = a
    out[..., 9] = j
    out[..., 19] = kappa * v * v
    # d(kappa v^2)/dt with ds/dt = v
    out[..., 20] = dkappa * v ** 3 + 2.0 * kappa * v * a
    return out


def time_index(scenario: Scenario, t: float) -> int:
    hits = np.flatnonzero(scenario.time_grid == t)
    if hits.size == 0:
        raise ContractViolation(f"t={t!r} is not on the scenario time grid")
    return int(hits[0])


def extract_features(scenario: Scenario, occupancy: Occupancy, point: TrajectoryPoint) -> np.ndarray:
    """The 21 raw features of one trajectory point (un-normalized)."""
    k = time_index(scenario, point.t)
    return compute_features(scenario, occupancy, k, point.s, point.v, point.a, point.j)


def feature_blocks(scenario: Scenario, trajectories: Sequence[Trajectory],
                   occupancy: Occupancy | None = None) -> np.ndarray:
    """Raw features for a batch of trajectories, shape ``(N, 18, 21)``."""
    occupancy = project_obstacles(scenario) if occupancy is None else occupancy
    if len(trajectories) == 0:
        return np.zeros((0, N_TIMES, N_FEATURES))
    for tr in trajectories:
        tr.check_grid(scenario.time_grid)
    cols = {c: np.stack([getattr(tr, c) for tr in trajectories]) for c in "svaj"}
    k = np.broadcast_to(np.arange(N_TIMES), cols["s"].shape)
    return compute_features(scenario, occupancy, k, cols["s"], cols["v"], cols["a"], cols["j"])


def feature_block(scenario: Scenario, trajectory: Trajectory, occupancy: Occupancy | None = None) -> np.ndarray:
    return feature_blocks(scenario, [trajectory], occupancy)[0]


def collision_mask(occupancy: Occupancy, s: np.ndarray) -> np.ndarray:
    """Which station profiles ``s`` (shape ``(..., T)``) hit a blocked region.

    A profile collides when a grid point lies inside a blocked interval, or
    when it jumps from behind an interval to beyond it between consecutive
    grid times while the obstacle is on the path at both.
    """
    s = np.asarray(s, dtype=float)
    hit = np.zeros(s.shape[:-1], dtype=bool)
    with np.errstate(invalid="ignore"):
        for r in range(occupancy.n_regions):
            lo, hi = occupancy.lo[r], occupancy.hi[r]
            inside = (s >= lo) & (s <= hi)
            through = (s[..., :-1] < lo[:-1]) & (s[..., 1:] > hi[1:])
            hit |= inside.any(axis=-1) | through.any(axis=-1)
    return hit


def trajectory_collides(occupancy: Occupancy, trajectory: Trajectory) -> bool:
    return bool(collision_mask(occupancy, trajectory.s))


@dataclass(frozen=True, eq=False)
class NormTable:
    """Per-channel affine normalization ``(raw - center) / scale``."""

    center: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        c, sc = _frozen(self.center), _frozen(self.scale)
        if c.shape != sc.shape or c.ndim != 1:
            raise ContractViolation("center and scale must be 1-D and equally long")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(sc))):
            raise ContractViolation("normalization table must be finite")
        if np.any(sc <= 0):
            raise ContractViolation("normalization scales must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "scale", sc)

    def __len__(self):
        return self.center.size

    @classmethod
    def identity(cls, n: int = N_FEATURES) -> "NormTable":
        return cls(np.zeros(n), np.ones(n))

    @classmethod
    def default(cls) -> "NormTable":
        """Fixed physically-scaled table shared by trainers and the synthetic expert."""
        table = {
            "l": (0.0, 1.0), "dl": (0.0, 0.1), "ddl": (0.0, 0.01), "curvature": (0.0, 0.02),
            "station": (50.0, 50.0), "time": (4.25, 2.5),
            # velocity and speed limit share one affine map so their difference stays meaningful
            "velocity": (10.0, 5.0), "speed_limit": (10.0, 5.0),
            "acceleration": (0.0, 2.0), "jerk": (0.0, 3.0),
            "collision_distance": (100.0, 100.0), "follow_distance": (100.0, 100.0),
            "follow_speed": (5.0, 5.0), "overtake_distance": (100.0, 100.0),
            "overtake_speed": (5.0, 5.0), "stop_distance": (100.0, 100.0),
            "virtual_distance": (100.0, 100.0), "nudge_lateral": (100.0, 100.0),
            "nudge_speed": (5.0, 5.0), "lateral_acceleration": (0.0, 2.0), "lateral_jerk": (0.0, 3.0),
        }
        center, scale = zip(*(table[n] for n in FEATURE_NAMES))
        return cls(np.array(center), np.array(scale))

    @classmethod
    def fit(cls, raw: np.ndarray, min_scale: float = 1e-6) -> "NormTable":
        flat = np.asarray(raw, dtype=float).reshape(-1, np.shape(raw)[-1])
        center = flat.mean(axis=0)
        scale = flat.std(axis=0)
        return cls(center, np.where(scale < min_scale, 1.0, scale))

    def apply(self, raw) -> np.ndarray:
        return (np.asarray(raw, dtype=float) - self.center) / self.scale

    def invert(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) * self.scale + self.center

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormTable":
        return cls(d["center"], d["scale"])


def normalize_features(raw, norm_table: NormTable) -> np.ndarray:
    raw = np.asarray(raw, dtype=float)
    if raw.shape[-1] != len(norm_table):
        raise ContractViolation(f"{raw.shape[-1]} channels but table has {len(norm_table)}")
    return norm_table.apply(raw)


# -- scenario files ---------------------------------------------------------

def save_suite(path, scenarios: Sequence[Scenario]) -> None:
    Path(path).write_text(json.dumps([sc.to_dict() for sc in scenarios], indent=1) + "\n")


def load_suite(path) -> list[Scenario]:
    """Read a suite file (JSON array) or a single scenario document."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedInputError(f"cannot read scenario file {path}: {exc}") from exc
    docs = doc if isinstance(doc, list) else [doc]
    try:
        return [Scenario.from_dict(d) for d in docs]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ContractViolation):
            raise
        raise MalformedInputError(f"bad scenario in {path}: {exc!r}") from exc
