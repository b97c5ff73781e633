"""Recover a hidden speed-planning reward from synthetic demonstrations.

The pipeline in miniature:

1. generate a suite of station-time scenarios (cruise, stop, follow, crossing, nudge);
2. plan an "expert" speed profile in each with a lattice DP under a hidden
   ground-truth reward, and draw 100 random jerk-limited candidates next to it;
3. fit the 364-parameter value network two ways: the frame-conditioned
   ranking loss (RC-IRL) and a pooled expert-vs-sample cross entropy (GAN-style);
4. on held-out scenarios, ask where the expert lands among its own candidates.

The ground-truth reward scored the same way is the ceiling.  A smaller
suite than the acceptance run keeps this under a minute.

Run:  python demos/02_reward_recovery.py
"""
import time

import numpy as np

from rcirl.evaluation import evaluate_suite, expert_rank
from rcirl.sampler import (
    FAMILIES,
    GroundTruthReward,
    SamplerConfig,
    SuiteConfig,
    build_frame,
    generate_scenario_suite,
    split_scenarios,
)
from rcirl.scenario import NormTable, feature_blocks
from rcirl.training import Frame, TrainConfig, train_gan_baseline, train_rcirl

SEED = 2024
suite = generate_scenario_suite(SuiteConfig(counts={f: 16 for f in FAMILIES}), SEED)
split = split_scenarios(suite, 20, SEED)
gt = GroundTruthReward()
sampler = SamplerConfig(seed=SEED)
norm = NormTable.default()

t0 = time.perf_counter()
train, holdout = [], []
for sc in suite:
    rec = build_frame(sc, gt, sampler, split=split[sc.id])
    blocks = norm.apply(feature_blocks(sc, (rec.expert,) + rec.samples))
    (holdout if rec.split == "holdout" else train).append(Frame(sc.id, blocks[0], blocks[1:], sc.time_grid, rec.split))
print(f"{len(train)} train / {len(holdout)} holdout frames in {time.perf_counter() - t0:.1f}s")

cfg = TrainConfig(seed=SEED)
models = {}
for name, trainer in (("rcirl", train_rcirl), ("gan", train_gan_baseline)):
    model, report = trainer(train, cfg)
    models[name] = model
    curve = " ".join(f"{e.expert_top_decile_rate:.2f}" for e in report.epochs)
    print(f"{name:>5}: train top-decile by epoch [{curve}], kept epoch {report.best_epoch}")

print(f"\n{'scorer':<14}{'top-decile':>11}{'median pct':>12}")
for name, scorer in (("ground truth", gt), *models.items()):
    r = expert_rank(scorer, holdout)
    print(f"{name:<14}{r.top_decile_rate:>11.2f}{r.median_percentile:>12.1f}")

# the learned reward drives the online selector on the held-out scenarios
hold_sc = [sc for sc in suite if split[sc.id] == "holdout"]
print(f"\n{'metric':<20}" + "".join(f"{n:>8}" for n in models))
reports = {n: evaluate_suite(hold_sc, m, sampler).rates for n, m in models.items()}
for metric in next(iter(reports.values())):
    print(f"{metric:<20}" + "".join(f"{reports[n][metric]:>8.3f}" for n in models))

# what the network learned to weigh over time
g = models["rcirl"].gamma
print("\nRC-IRL time weights gamma:", np.round(g / np.abs(g).max(), 2))
