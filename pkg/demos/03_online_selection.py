"""Walk through one online selection on a stop-line scenario.

Candidates come from the shared jerk-limited sampler.  The hard collision
filter runs first: anything crossing the stop line is discarded no matter
how the reward scores it.  The learned value then ranks the survivors.

Run:  python demos/03_online_selection.py
"""
import numpy as np

from rcirl.evaluation import select_from_candidates, trajectory_metrics
from rcirl.sampler import (
    GroundTruthReward,
    SamplerConfig,
    SuiteConfig,
    build_frame,
    generate_scenario_suite,
    sample_trajectories,
    synthetic_expert,
)
from rcirl.scenario import NormTable, collision_mask, feature_blocks, project_obstacles
from rcirl.training import Frame, TrainConfig, train_rcirl

SEED = 11
suite = generate_scenario_suite(SuiteConfig(counts={"stop": 12, "follow": 12}), SEED)
gt, sampler, norm = GroundTruthReward(), SamplerConfig(seed=SEED), NormTable.default()

frames = []
for sc in suite[1:]:
    rec = build_frame(sc, gt, sampler)
    b = norm.apply(feature_blocks(sc, (rec.expert,) + rec.samples))
    frames.append(Frame(sc.id, b[0], b[1:], sc.time_grid))
model, _ = train_rcirl(frames, TrainConfig(seed=SEED))

sc = suite[0]  # held out from training
line = min(o.station for o in sc.obstacles if o.station is not None)
print(f"scenario {sc.id}: v0={sc.v0:.1f} m/s, stop line at {line:.1f} m")

occ = project_obstacles(sc)
cand = sample_trajectories(sc, sampler)
free = ~collision_mask(occ, np.stack([c.s for c in cand]))
sel = select_from_candidates(sc, model, cand, occ)
print(f"{len(cand)} candidates, {free.sum()} collision-free")
order = np.argsort(-sel.values)
print("top five by learned value (collision-free?):")
for i in order[:5]:
    print(f"  {cand[i].id}: V={sel.values[i]:8.3f}  free={bool(free[i])}  final s={cand[i].s[-1]:6.1f} m")
print(f"selected {sel.trajectory.id}: final s={sel.trajectory.s[-1]:.1f} m, flagged={sel.flagged}")

expert = synthetic_expert(sc, gt)
print(f"ground-truth expert final s={expert.s[-1]:.1f} m")
print("selected speeds:", np.round(sel.trajectory.v, 1))
print("expert speeds:  ", np.round(expert.v, 1))
m = trajectory_metrics(sc, sel.trajectory, occ)
print({k: v for k, v in m.items() if k != "n_points"}, "of", m["n_points"], "points")
