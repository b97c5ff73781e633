"""Candidate speed-profile sampling, scenario suites and the synthetic expert.

The same :func:`sample_trajectories` feeds offline training queries and the
online selector.  :func:`synthetic_expert` stands in for a human driver: it
solves a dense lattice DP against a hidden :class:`GroundTruthReward`.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractViolation, InfeasibleScenarioError, MalformedInputError
from .scenario import (
    FEATURE_INDEX,
    N_FEATURES,
    NormTable,
    Obstacle,
    ObstacleKind,
    Occupancy,
    PathProfile,
    Provenance,
    Scenario,
    Trajectory,
    compute_features,
    default_time_grid,
    feature_blocks,
    project_obstacles,
    station_features,
)

FRAME_FORMAT_VERSION = 1


@dataclass(frozen=True)
class SamplerConfig:
    n_samples: int = 100
    a_min: float = -5.0
    a_max: float = 3.0
    jerk_bound: float = 5.0
    seed: int = 0
    n_pieces: int = 4
    substeps: int = 10

    def __post_init__(self):
        if self.n_samples < 1:
            raise ContractViolation("n_samples must be >= 1")
        # a_min == a_max == 0 is allowed: it pins every sample to constant speed
        if not (self.a_min <= 0.0 <= self.a_max):
            raise ContractViolation("need a_min <= 0 <= a_max")
        if self.jerk_bound <= 0 or self.n_pieces < 1 or self.substeps < 1:
            raise ContractViolation("jerk_bound, n_pieces and substeps must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerConfig":
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def _scenario_rng(seed: int, scenario: Scenario) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(scenario.seed)]))


def sample_trajectories(scenario: Scenario, config: SamplerConfig) -> list[Trajectory]:
    """Random jerk-limited, piecewise-constant-acceleration speed profiles.

    Each sample draws ``n_pieces`` target accelerations over the horizon and
    tracks them at the jerk bound on a fine time grid; speed is clamped at
    zero, which also zeroes any remaining deceleration.  The (s, v) path is
    then read off at the grid points and acceleration and jerk are taken as
    grid forward differences -- the same operator the synthetic expert uses,
    so the two carry no convention mismatch a discriminator could key on.
    """
    rng = _scenario_rng(config.seed, scenario)
    n = config.n_samples
    tg = scenario.time_grid
    targets = rng.uniform(config.a_min, config.a_max, size=(n, config.n_pieces))
    horizon = tg[-1]

    def target_at(t):
        piece = min(int(t / horizon * config.n_pieces), config.n_pieces - 1)
        return targets[:, piece]

    T = tg.size
    S, V = np.zeros((n, T)), np.zeros((n, T))
    s = np.full(n, float(scenario.s0_station))
    v = np.full(n, float(scenario.v0))
    a = np.full(n, float(np.clip(scenario.a0, config.a_min, config.a_max)))
    for k in range(T):
        S[:, k], V[:, k] = s, v
        if k == T - 1:
            break
        h = (tg[k + 1] - tg[k]) / config.substeps
        for m in range(config.substeps):
            jerk = np.clip((target_at(tg[k] + m * h) - a) / h, -config.jerk_bound, config.jerk_bound)
            jerk = np.where((v <= 0) & (a + jerk * h <= 0), 0.0, jerk)
            v_new = v + a * h + 0.5 * jerk * h * h
            a_new = a + jerk * h
            stopped = v_new <= 0
            v_new = np.where(stopped, 0.0, v_new)
            a_new = np.where(stopped, np.maximum(a_new, 0.0), a_new)
            s = s + 0.5 * (v + v_new) * h
            v, a = v_new, a_new
    return [
        trajectory_from_speeds(tg, S[i], V[i], Provenance.SAMPLED, f"{scenario.id}/sample-{i:04d}")
        for i in range(n)
    ]


# -- scenario suites --------------------------------------------------------

FAMILIES = ("cruise", "stop", "follow", "crossing", "nudge")


@dataclass(frozen=True)
class SuiteConfig:
    """Family counts and parameter ranges for :func:`generate_scenario_suite`.

    ``crossing`` is the yield/overtake family: an agent blocks a station band
    for a time window and the ego either passes before it or waits.
    """

    counts: dict = field(default_factory=lambda: {f: 50 for f in FAMILIES})
    path_length: float = 400.0
    path_step: float = 1.0
    speed_limit_range: tuple = (8.0, 20.0)
    stop_range: tuple = (20.0, 120.0)
    n_times: int = 18
    dt: float = 0.5

    def __post_init__(self):
        if not self.counts:
            raise ContractViolation("suite needs at least one scenario family")
        for fam, c in self.counts.items():
            if fam not in FAMILIES:
                raise ContractViolation(f"unknown scenario family {fam!r}")
            if int(c) < 0:
                raise ContractViolation(f"negative count for {fam!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["speed_limit_range"] = list(self.speed_limit_range)
        d["stop_range"] = list(self.stop_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SuiteConfig":
        d = dict(d)
        for key in ("speed_limit_range", "stop_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def _bump(s, center, width):
    return np.exp(-0.5 * ((s - center) / width) ** 2)


def _random_path(rng: np.random.Generator, cfg: SuiteConfig, lateral=None) -> PathProfile:
    s = np.arange(0.0, cfg.path_length + cfg.path_step / 2, cfg.path_step)
    kappa = np.zeros_like(s)
    for _ in range(rng.integers(0, 3)):
        kappa += rng.uniform(-0.03, 0.03) * _bump(s, rng.uniform(20, 200), rng.uniform(15, 50))
    base = rng.uniform(*cfg.speed_limit_range)
    # curve speed keeps the nominal lateral acceleration at or below 2 m/s^2
    limit = np.minimum(base, np.sqrt(2.0 / np.maximum(np.abs(kappa), 1e-9)))
    if lateral is None:
        lateral = np.zeros_like(s)
    dl = np.gradient(lateral, s)
    ddl = np.gradient(dl, s)
    return PathProfile(s, kappa, limit, lateral, dl, ddl)


def _make_scenario(family: str, index: int, child: np.random.SeedSequence, cfg: SuiteConfig) -> Scenario:
    rng = np.random.default_rng(child)
    seed = int(child.generate_state(1, dtype=np.uint64)[0])
    tg = default_time_grid(cfg.n_times, cfg.dt)
    obstacles: list[Obstacle] = []
    lateral = None
    nudge_at = None
    if family == "nudge":
        nudge_at = rng.uniform(25.0, 90.0)
        s_grid = np.arange(0.0, cfg.path_length + cfg.path_step / 2, cfg.path_step)
        lateral = rng.uniform(0.3, 0.8) * _bump(s_grid, nudge_at + 2.5, 8.0)
    path = _random_path(rng, cfg, lateral)
    v_lim0 = float(path.speed_limit[0])
    v0 = float(rng.uniform(0.3, 1.05) * v_lim0)
    a0 = float(rng.uniform(-0.5, 0.5))
    # comfortable-braking reach, used to keep every family feasible
    reach = v0 * v0 / (2 * 3.5) + 8.0

    if family == "stop":
        lo, hi = cfg.stop_range
        station = float(rng.uniform(max(lo, reach), max(hi, reach + 10.0)))
        if rng.random() < 0.3:
            obstacles.append(Obstacle.virtual(station))
        else:
            obstacles.append(Obstacle.stop(station))
    elif family == "follow":
        v_lead = float(rng.uniform(0.2, 0.8) * v0)
        gap = float(rng.uniform(0.0, 25.0) + (v0 - v_lead) ** 2 / (2 * 3.0) + 10.0)
        obstacles.append(Obstacle.moving(ObstacleKind.FOLLOW, tg, gap, 5.0, v_lead, id="lead"))
    elif family == "crossing":
        s_lo = float(rng.uniform(max(15.0, reach), max(60.0, reach + 10.0)))
        t_on = float(rng.uniform(0.5, 4.0))
        t_off = t_on + float(rng.uniform(1.5, 3.0))
        obstacles.append(Obstacle.crossing(tg, s_lo, s_lo + 4.0, t_on, t_off,
                                           speed=float(rng.uniform(1.0, 4.0)), id="crosser"))
    elif family == "nudge":
        gap = float(rng.uniform(0.6, 2.0))
        v_ob = float(rng.uniform(0.0, 1.0))
        obstacles.append(Obstacle.moving(ObstacleKind.NUDGE, tg, nudge_at, 5.0, v_ob,
                                         lateral_gap=gap, id="parked"))
    return Scenario(f"{family}-{index:04d}", seed, path, tuple(obstacles), v0, a0, 0.0, tg, family)


def generate_scenario_suite(suite_config: SuiteConfig, seed: int) -> list[Scenario]:
    """Deterministic synthetic suite; each scenario gets its own RNG stream."""
    plan = [(fam, i) for fam in FAMILIES for i in range(int(suite_config.counts.get(fam, 0)))]
    children = np.random.SeedSequence(int(seed)).spawn(len(plan))
    return [_make_scenario(fam, i, child, suite_config) for (fam, i), child in zip(plan, children)]


# -- hidden ground-truth reward -----------------------------------------------

def _default_gt_weights() -> np.ndarray:
    w = np.zeros(N_FEATURES)
    w[FEATURE_INDEX["velocity"]] = 0.2
    w[FEATURE_INDEX["collision_distance"]] = 0.1
    w[FEATURE_INDEX["follow_distance"]] = 0.1
    w[FEATURE_INDEX["overtake_distance"]] = 0.1
    w[FEATURE_INDEX["stop_distance"]] = 0.05
    w[FEATURE_INDEX["nudge_lateral"]] = 0.05
    return w


@dataclass(frozen=True, eq=False)
class GroundTruthReward:
    """Hand-specified reward over normalized features, exponentially discounted.

    Linear ``weights`` act on the normalized channels; the remaining
    coefficients scale quadratic comfort and safety penalties evaluated in
    physical units (speed-limit tracking and violation, longitudinal and
    lateral acceleration, clearance, following headway), plus a flat
    ``contact`` cost at every point inside an occupied interval.  The squared
    overspeed term keeps this function outside the learned model family.
    """

    weights: np.ndarray = field(default_factory=_default_gt_weights)
    decay: float = 0.95
    speed_tracking: float = 1.0
    overspeed: float = 20.0
    accel: float = 0.5
    lateral: float = 0.5
    clearance: float = 4.0
    clearance_range: float = 10.0
    headway: float = 2.0
    contact: float = 100.0
    norm: NormTable = field(default_factory=NormTable.default)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if w.shape != (N_FEATURES,) or not np.all(np.isfinite(w)):
            raise ContractViolation("ground-truth weights must be 21 finite values")
        if not (0.0 < self.decay <= 1.0):
            raise ContractViolation("decay must lie in (0, 1]")
        quad = (self.speed_tracking, self.overspeed, self.accel, self.lateral, self.clearance, self.headway, self.contact)
        if not np.any(w != 0) and not any(q != 0 for q in quad):
            raise ContractViolation("ground-truth reward needs a nonzero weight")
        if w[FEATURE_INDEX["jerk"]] != 0:
            # the DP state carries no acceleration history
            raise ContractViolation("ground-truth reward may not weight jerk")

    def scaled(self, c: float) -> "GroundTruthReward":
        return GroundTruthReward(self.weights * c, self.decay, self.speed_tracking * c, self.overspeed * c,
                                 self.accel * c, self.lateral * c, self.clearance * c, self.clearance_range,
                                 self.headway * c, self.contact * c, self.norm)

    def reward(self, features: np.ndarray) -> np.ndarray:
        """Per-point reward of normalized features ``(..., 21)``."""
        f = np.asarray(features, dtype=float)
        raw = self.norm.invert(f)
        v, vlim = raw[..., 6], raw[..., 7]
        r = f @ self.weights
        r = r - self.speed_tracking * ((v - vlim) / 5.0) ** 2
        r = r - self.overspeed * (np.maximum(v - vlim, 0.0) / 5.0) ** 2
        r = r - self.accel * (raw[..., 8] / 2.0) ** 2
        r = r - self.lateral * (raw[..., 19] / 2.0) ** 2
        r = r - self.clearance * np.maximum(1.0 - raw[..., 10] / self.clearance_range, 0.0) ** 2
        desired_gap = 5.0 + 1.5 * v
        r = r - self.headway * np.maximum(1.0 - raw[..., 11] / desired_gap, 0.0) ** 2
        r = r - self.contact * (raw[..., 10] <= 0.0)
        return r

    def discount(self, n: int) -> np.ndarray:
        return self.decay ** np.arange(n)

    def values(self, blocks: np.ndarray) -> np.ndarray:
        r = self.reward(blocks)
        return r @ self.discount(r.shape[-1])

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("decay", "speed_tracking", "overspeed", "accel", "lateral",
                                             "clearance", "clearance_range", "headway", "contact")}
        d["weights"] = self.weights.tolist()
        d["norm"] = self.norm.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruthReward":
        d = dict(d)
        if "norm" in d:
            d["norm"] = NormTable.from_dict(d["norm"])
        return cls(**d)


# -- lattice DP expert ---------------------------------------------------------

@dataclass(frozen=True)
class DPResolution:
    """Speed lattice for :func:`synthetic_expert`.

    ``station_step`` of None keys nodes on the exact reachable stations
    (``dt * speed_step / 2`` multiples on a uniform grid), which makes the
    DP exact on the lattice.
    """

    speed_step: float = 0.5
    speed_cap_factor: float = 1.25
    a_min: float = -5.0
    a_max: float = 3.0
    station_step: float | None = None

    def __post_init__(self):
        if self.speed_step <= 0 or self.speed_cap_factor <= 0:
            raise ContractViolation("speed_step and speed_cap_factor must be positive")
        if not (self.a_min <= 0.0 <= self.a_max):
            raise ContractViolation("need a_min <= 0 <= a_max")

    def to_dict(self) -> dict:
        return asdict(self)


def _transition_hits(occ: Occupancy, k: int, s_k, s_next) -> np.ndarray:
    hit = np.zeros(np.shape(s_next), dtype=bool)
    with np.errstate(invalid="ignore"):
        for r in range(occ.n_regions):
            lo0, hi1, lo1 = occ.lo[r, k], occ.hi[r, k + 1], occ.lo[r, k + 1]
            hit |= (s_next >= lo1) & (s_next <= hi1)
            hit |= (s_k < lo0) & (s_next > hi1)
    return hit


def lattice_dp(scenario: Scenario, point_reward, resolution: DPResolution = DPResolution(),
               discount: np.ndarray | None = None):
    """Maximize ``sum_k discount[k] * point_reward(raw_features_k)`` on the speed lattice.

    Point k's acceleration is the forward difference ``(v[k+1]-v[k])/dt``
    (the last point repeats the previous one) and its jerk is taken as 0.
    Returns ``(s, v, best_value)``.  Raises :class:`InfeasibleScenarioError`
    if every lattice path collides.
    """
    tg = scenario.time_grid
    T = tg.size
    disc = np.ones(T) if discount is None else np.asarray(discount, dtype=float)
    occ = project_obstacles(scenario)
    dv = resolution.speed_step
    cap = max(resolution.speed_cap_factor * scenario.path.max_speed_limit, scenario.v0)
    vs = np.arange(0.0, cap + dv / 2, dv)
    dts = np.diff(tg)
    unit = resolution.station_step or float(dts.min() * dv / 2.0)
    s0 = float(scenario.s0_station)
    key_origin = s0 + dts[0] * scenario.v0 / 2.0

    with np.errstate(invalid="ignore"):
        starts_inside = np.any((occ.lo[:, 0] <= s0) & (s0 <= occ.hi[:, 0]))
    if starts_inside:
        raise InfeasibleScenarioError(f"scenario {scenario.id!r} starts inside an obstacle")

    node_s = np.array([s0])
    node_v = np.array([float(scenario.v0)])
    node_val = np.array([0.0])
    backs, states = [], [(node_s, node_v)]
    for k in range(T - 1):
        dt = dts[k]
        acc = (vs[None, :] - node_v[:, None]) / dt
        ok = (acc >= resolution.a_min - 1e-9) & (acc <= resolution.a_max + 1e-9)
        i, jv = np.nonzero(ok)
        if i.size == 0:
            raise InfeasibleScenarioError(f"no admissible transition at step {k} in {scenario.id!r}")
        a = acc[i, jv]
        s_k = node_s[i]
        s_next = s_k + 0.5 * (node_v[i] + vs[jv]) * dt
        keep = ~_transition_hits(occ, k, s_k, s_next)
        i, jv, a, s_k, s_next = i[keep], jv[keep], a[keep], s_k[keep], s_next[keep]
        if i.size == 0:
            raise InfeasibleScenarioError(f"every lattice path collides in {scenario.id!r}")
        base = station_features(scenario, occ, k, node_s)
        feats = compute_features(scenario, occ, k, s_k, node_v[i], a, 0.0, base=base[i])
        val = node_val[i] + disc[k] * point_reward(feats)
        if k == T - 2:
            uniq, inv = np.unique(s_next, return_inverse=True)
            base_last = station_features(scenario, occ, T - 1, uniq)[inv]
            feats = compute_features(scenario, occ, T - 1, s_next, vs[jv], a, 0.0, base=base_last)
            val = val + disc[T - 1] * point_reward(feats)
        key = np.rint((s_next - key_origin) / unit).astype(np.int64)
        combined = key * vs.size + jv
        order = np.lexsort((-val, combined))
        first = np.ones(order.size, dtype=bool)
        first[1:] = combined[order][1:] != combined[order][:-1]
        best = order[first]
        node_s, node_v, node_val = s_next[best], vs[jv[best]], val[best]
        backs.append(i[best])
        states.append((node_s, node_v))

    idx = int(np.argmax(node_val))
    best_value = float(node_val[idx])
    s_path, v_path = np.zeros(T), np.zeros(T)
    for k in range(T - 1, -1, -1):
        s_path[k], v_path[k] = states[k][0][idx], states[k][1][idx]
        if k > 0:
            idx = int(backs[k - 1][idx])
    return s_path, v_path, best_value


def trajectory_from_speeds(time_grid, s, v, provenance=Provenance.EXPERT, id: str = "") -> Trajectory:
    """Grid trajectory with forward-difference acceleration and jerk."""
    tg = np.asarray(time_grid, dtype=float)
    dts = np.diff(tg)
    v = np.asarray(v, dtype=float)
    a = np.empty_like(v)
    a[:-1] = np.diff(v) / dts
    a[-1] = a[-2]
    j = np.zeros_like(v)
    j[:-1] = np.diff(a) / dts
    return Trajectory(tg, s, v, a, j, provenance, id)


def synthetic_expert(scenario: Scenario, gt_reward: GroundTruthReward,
                     dp_resolution: DPResolution = DPResolution()) -> Trajectory:
    """The lattice-optimal, collision-free trajectory under ``gt_reward``."""
    norm = gt_reward.norm
    s, v, _ = lattice_dp(scenario, lambda raw: gt_reward.reward(norm.apply(raw)), dp_resolution,
                         gt_reward.discount(scenario.time_grid.size))
    return trajectory_from_speeds(scenario.time_grid, s, v, Provenance.EXPERT, f"{scenario.id}/expert")


def snap_to_lattice(trajectory: Trajectory, scenario: Scenario, resolution: DPResolution = DPResolution()):
    """Project a trajectory's speeds onto the DP lattice, or None if unrepresentable."""
    tg = scenario.time_grid
    dv = resolution.speed_step
    v = np.rint(np.asarray(trajectory.v) / dv) * dv
    v[0] = scenario.v0
    dts = np.diff(tg)
    acc = np.diff(v) / dts
    cap = max(resolution.speed_cap_factor * scenario.path.max_speed_limit, scenario.v0)
    if np.any(acc < resolution.a_min - 1e-9) or np.any(acc > resolution.a_max + 1e-9) or np.any(v[1:] > cap + 1e-9):
        return None
    s = np.concatenate([[scenario.s0_station], scenario.s0_station + np.cumsum(0.5 * (v[:-1] + v[1:]) * dts)])
    return trajectory_from_speeds(tg, s, v, Provenance.SAMPLED, trajectory.id)


# -- frame files -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FrameRecord:
    """One line of a frame file: a scenario's expert plus its sampled query."""

    scenario_id: str
    time_grid: np.ndarray
    expert: Trajectory
    samples: tuple[Trajectory, ...]
    split: str = "train"
    n_obstacles: int = 0
    features: np.ndarray | None = None  # raw (1 + N, 18, 21), expert first

    def to_dict(self) -> dict:
        d = {
            "format_version": FRAME_FORMAT_VERSION,
            "scenario_id": self.scenario_id,
            "split": self.split,
            "n_obstacles": int(self.n_obstacles),
            "time_grid": np.asarray(self.time_grid).tolist(),
            "expert": self.expert.to_dict(),
            "samples": [t.to_dict() for t in self.samples],
        }
        if self.features is not None:
            d["features"] = np.asarray(self.features).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FrameRecord":
        tg = np.asarray(d["time_grid"], dtype=float)
        feats = d.get("features")
        return cls(
            d["scenario_id"], tg, Trajectory.from_dict(d["expert"], tg),
            tuple(Trajectory.from_dict(t, tg) for t in d["samples"]),
            d.get("split", "train"), int(d.get("n_obstacles", 0)),
            None if feats is None else np.asarray(feats, dtype=float),
        )


def build_frame(scenario: Scenario, gt_reward: GroundTruthReward, sampler_config: SamplerConfig,
                dp_resolution: DPResolution = DPResolution(), split: str = "train",
                with_features: bool = False) -> FrameRecord:
    expert = synthetic_expert(scenario, gt_reward, dp_resolution)
    samples = tuple(sample_trajectories(scenario, sampler_config))
    feats = feature_blocks(scenario, (expert,) + samples) if with_features else None
    return FrameRecord(scenario.id, scenario.time_grid, expert, samples, split, len(scenario.obstacles), feats)


def write_frames(path, records: Iterable[FrameRecord]) -> int:
    n = 0
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), separators=(",", ":")) + "\n")
            n += 1
    return n


def read_frame_records(path) -> list[FrameRecord]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                if d.get("format_version", FRAME_FORMAT_VERSION) != FRAME_FORMAT_VERSION:
                    raise ValueError(f"unsupported frame format_version {d.get('format_version')!r}")
                out.append(FrameRecord.from_dict(d))
            except ContractViolation as exc:
                raise MalformedInputError(f"{path}:{lineno}: {exc}") from exc
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise MalformedInputError(f"{path}:{lineno}: malformed frame ({exc})") from exc
    return out


def split_scenarios(scenarios: Sequence[Scenario], n_holdout: int, seed: int) -> dict[str, str]:
    """Seeded train/holdout assignment keyed by scenario id."""
    if not (0 <= n_holdout <= len(scenarios)):
        raise ContractViolation("n_holdout out of range")
    perm = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5B1D])).permutation(len(scenarios))
    hold = set(perm[len(scenarios) - n_holdout:].tolist())
    return {sc.id: ("holdout" if i in hold else "train") for i, sc in enumerate(scenarios)}
