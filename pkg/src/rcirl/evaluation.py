"""Online trajectory selection and the suite metric harness.

Rates for speed, acceleration and jerk are point-level: the denominator is
every grid point of every selected trajectory.  Collision-free is counted
per scenario.  Denominators are kept alongside every rate.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractViolation
from .sampler import SamplerConfig, sample_trajectories
from .scenario import (
    FEATURE_INDEX,
    Occupancy,
    Provenance,
    Scenario,
    Trajectory,
    collision_mask,
    feature_blocks,
    project_obstacles,
)
from .training import TOP_DECILE, Frame, frame_percentiles
from .valuenet import ValueModel

ACCEL_BOUND = 4.0
LATERAL_ACCEL_BOUND = 4.0
JERK_BOUND = 6.0
LATERAL_JERK_BOUND = 6.0

# report row order: safety first, then comfort bounds
POINT_METRICS = ("speed_under_limit", "accel_station_ok", "accel_lateral_ok", "jerk_station_ok", "jerk_lateral_ok")
METRICS = ("collision_free",) + POINT_METRICS


@dataclass(eq=False)
class Selection:
    trajectory: Trajectory
    index: int
    values: np.ndarray
    feasible: np.ndarray
    flagged: bool = False

    @property
    def collides(self) -> bool:
        return not bool(self.feasible[self.index])


def _first_by_id(candidates: Sequence[Trajectory], idx: np.ndarray) -> int:
    return int(min(idx, key=lambda i: (candidates[i].id, i)))


def select_from_candidates(scenario: Scenario, model: ValueModel, candidates: Sequence[Trajectory],
                           occupancy: Occupancy | None = None) -> Selection:
    """Hard collision filter, then the highest-valued survivor.

    Ties go to the lexicographically smallest trajectory id.  If every
    candidate collides, the one keeping the largest minimum clearance is
    returned with ``flagged=True``.
    """
    if len(candidates) == 0:
        raise ContractViolation("no candidates to select from")
    model.check_grid(scenario.time_grid)
    occupancy = project_obstacles(scenario) if occupancy is None else occupancy
    raw = feature_blocks(scenario, candidates, occupancy)
    values = model.values(model.norm_table.apply(raw))
    feasible = ~collision_mask(occupancy, np.stack([c.s for c in candidates]))
    if feasible.any():
        best = values[feasible].max()
        idx = np.flatnonzero(feasible & (values == best))
        flagged = False
    else:
        clearance = raw[..., FEATURE_INDEX["collision_distance"]].min(axis=1)
        idx = np.flatnonzero(clearance == clearance.max())
        flagged = True
    i = _first_by_id(candidates, idx)
    chosen = candidates[i].with_provenance(Provenance.SELECTED)
    return Selection(chosen, i, values, feasible, flagged)


def select_trajectory(scenario: Scenario, model: ValueModel, sampler_config: SamplerConfig) -> Selection:
    """Sample candidates with the shared sampler and rank them by learned value."""
    model.check_grid(scenario.time_grid)
    return select_from_candidates(scenario, model, sample_trajectories(scenario, sampler_config))


def trajectory_metrics(scenario: Scenario, trajectory: Trajectory, occupancy: Occupancy | None = None) -> dict:
    """Point counts inside each bound, plus the scenario-level collision flag."""
    occupancy = project_obstacles(scenario) if occupancy is None else occupancy
    f = feature_blocks(scenario, [trajectory], occupancy)[0]
    v, vlim = f[:, FEATURE_INDEX["velocity"]], f[:, FEATURE_INDEX["speed_limit"]]
    return {
        "n_points": int(v.size),
        "collision_free": int(not collision_mask(occupancy, trajectory.s)),
        "speed_under_limit": int(np.count_nonzero(v <= vlim)),
        "accel_station_ok": int(np.count_nonzero(np.abs(trajectory.a) < ACCEL_BOUND)),
        "accel_lateral_ok": int(np.count_nonzero(np.abs(f[:, FEATURE_INDEX["lateral_acceleration"]]) < LATERAL_ACCEL_BOUND)),
        "jerk_station_ok": int(np.count_nonzero(np.abs(trajectory.j) < JERK_BOUND)),
        "jerk_lateral_ok": int(np.count_nonzero(np.abs(f[:, FEATURE_INDEX["lateral_jerk"]]) < LATERAL_JERK_BOUND)),
    }


@dataclass
class RankStats:
    n_frames: int
    top_decile_rate: float
    median_percentile: float
    percentiles: dict[str, float]

    def to_dict(self) -> dict:
        return {"n_frames": self.n_frames, "top_decile_rate": self.top_decile_rate,
                "median_percentile": self.median_percentile, "percentiles": self.percentiles}


def expert_rank(scorer, holdout_frames: Sequence[Frame]) -> RankStats:
    """Where each frame's expert lands among its own samples under ``scorer``.

    ``scorer`` is anything with ``values(blocks)``.  Ties count half, so a
    constant scorer puts every expert at the 50th percentile.
    """
    if len(holdout_frames) == 0:
        raise ContractViolation("expert_rank needs a non-empty holdout set")
    leaked = [f.frame_id for f in holdout_frames if f.split == "train"]
    if leaked:
        raise ContractViolation(f"training frames passed as holdout: {leaked[:3]}")
    pct = frame_percentiles(scorer, holdout_frames)
    return RankStats(
        n_frames=len(holdout_frames),
        top_decile_rate=float(np.mean(pct >= TOP_DECILE)),
        median_percentile=float(np.median(pct)),
        percentiles={f.frame_id: float(p) for f, p in sorted(zip(holdout_frames, pct), key=lambda t: t[0].frame_id)},
    )


@dataclass
class MetricReport:
    n_scenarios: int = 0
    n_points: int = 0
    counts: dict = field(default_factory=lambda: {m: 0 for m in METRICS})
    flagged: int = 0
    per_scenario: list = field(default_factory=list)
    expert_rank: RankStats | None = None

    def add(self, scenario_id: str, metrics: dict, flagged: bool = False) -> None:
        self.n_scenarios += 1
        self.n_points += metrics["n_points"]
        for m in METRICS:
            self.counts[m] += metrics[m]
        self.flagged += int(flagged)
        self.per_scenario.append({"scenario_id": scenario_id, "flagged": bool(flagged), **metrics})
        self.per_scenario.sort(key=lambda r: r["scenario_id"])

    def denominator(self, metric: str) -> int:
        return self.n_scenarios if metric == "collision_free" else self.n_points

    @property
    def rates(self) -> dict[str, float]:
        return {m: (self.counts[m] / self.denominator(m) if self.denominator(m) else float("nan")) for m in METRICS}

    def rows(self) -> list[tuple[str, float, int, int]]:
        out = [(m, self.rates[m], self.counts[m], self.denominator(m)) for m in METRICS]
        if self.expert_rank is not None:
            er = self.expert_rank
            out.append(("expert_top_decile_rate", er.top_decile_rate,
                        int(round(er.top_decile_rate * er.n_frames)), er.n_frames))
            out.append(("expert_median_percentile", er.median_percentile, 0, er.n_frames))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value", "numerator", "denominator"])
        for name, val, num, den in self.rows():
            w.writerow([name, repr(float(val)), num, den])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "rate_level": {"collision_free": "scenario", **{m: "point" for m in POINT_METRICS}},
            "n_scenarios": self.n_scenarios,
            "n_points": self.n_points,
            "rates": self.rates,
            "counts": dict(self.counts),
            "flagged": self.flagged,
            "expert_rank": None if self.expert_rank is None else self.expert_rank.to_dict(),
            "per_scenario": self.per_scenario,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def evaluate_suite(scenarios: Sequence[Scenario], model: ValueModel, sampler_config: SamplerConfig,
                   holdout_frames: Sequence[Frame] | None = None) -> MetricReport:
    if len(scenarios) == 0:
        raise ContractViolation("cannot evaluate an empty suite")
    for sc in scenarios:
        model.check_grid(sc.time_grid)
    report = MetricReport()
    for sc in scenarios:
        occ = project_obstacles(sc)
        sel = select_from_candidates(sc, model, sample_trajectories(sc, sampler_config), occ)
        report.add(sc.id, trajectory_metrics(sc, sel.trajectory, occ), sel.flagged)
    if holdout_frames:
        report.expert_rank = expert_rank(model, holdout_frames)
    return report


def comparison_csv(reports: dict[str, MetricReport]) -> str:
    """Metric rows by model columns, in report row order."""
    names = list(reports)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", *names])
    rows = [r[0] for r in next(iter(reports.values())).rows()]
    for metric in rows:
        vals = []
        for n in names:
            lookup = {r[0]: r[1] for r in reports[n].rows()}
            vals.append(repr(float(lookup[metric])) if metric in lookup else "")
        w.writerow([metric, *vals])
    return buf.getvalue()
