"""Siamese rank-based trainer and the pooled cross-entropy baseline.

Both trainers share one model family, one optimizer loop and one
determinism contract; they differ only in the loss.  The ranking loss
compares every sampled trajectory against the expert *of the same frame*,
so anything constant within a frame cancels.  The baseline pools all blocks
and classifies expert (1) vs sample (0).
"""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ContractViolation, GridMismatchError, MalformedInputError, NonFiniteLossError
from .sampler import read_frame_records
from .scenario import NormTable, Scenario, feature_blocks
from .valuenet import ValueModel, backward, init_model, value_batch

log = logging.getLogger(__name__)

DEFAULT_LEAK = 0.05
OPTIMIZERS = ("sgd", "momentum", "adam", "rmsprop")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    learning_rate: float = 0.01
    optimizer: str = "adam"
    batch_frames: int = 8
    weight_decay: float = 1e-4
    clip_norm: float = 10.0
    leak: float = DEFAULT_LEAK
    seed: int = 0
    # return the epoch with the best training top-decile rate instead of the last one
    keep_best: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ContractViolation("learning_rate must be positive")
        if not (0.0 < self.leak < 1.0):
            raise ContractViolation("leak rate must lie in (0, 1)")
        if self.optimizer not in OPTIMIZERS:
            raise ContractViolation(f"optimizer must be one of {OPTIMIZERS}")
        if self.epochs < 0 or self.batch_frames < 1 or self.weight_decay < 0 or self.clip_norm <= 0:
            raise ContractViolation("epochs >= 0, batch_frames >= 1, weight_decay >= 0, clip_norm > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise MalformedInputError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise MalformedInputError(f"cannot read training config {path}: {exc}") from exc


@dataclass(eq=False)
class Frame:
    """One scenario: the expert block and its sampled query, both normalized."""

    frame_id: str
    expert: np.ndarray
    samples: np.ndarray
    time_grid: np.ndarray
    split: str | None = None

    def __post_init__(self):
        self.expert = np.asarray(self.expert, dtype=float)
        self.samples = np.asarray(self.samples, dtype=float)
        self.time_grid = np.asarray(self.time_grid, dtype=float)
        if self.samples.ndim != 3 or self.samples.shape[0] < 1:
            raise ContractViolation(f"frame {self.frame_id!r} needs at least one sampled block")
        if self.expert.shape != self.samples.shape[1:]:
            raise ContractViolation(f"frame {self.frame_id!r}: expert and sample blocks differ in shape")
        if self.expert.shape[0] != self.time_grid.size:
            raise ContractViolation(f"frame {self.frame_id!r}: blocks do not match its time grid")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]


def leaky_loss(y, leak: float = DEFAULT_LEAK):
    """Identity for y >= 0, slope ``leak`` below zero."""
    y = np.asarray(y, dtype=float)
    out = np.where(y >= 0, y, leak * y)
    return float(out) if out.ndim == 0 else out


def pairwise_loss(model: ValueModel, frame: Frame, leak: float = DEFAULT_LEAK) -> float:
    """Mean leaky penalty of each sample's value margin over the expert.

    A sample scored above the expert costs its full margin; a dominated
    sample earns ``leak`` times its (negative) margin.
    """
    v_e = value_batch(model, frame.expert)
    v_s = value_batch(model, frame.samples)
    y = np.where(_same_as_expert(frame.samples, frame.expert), 0.0, v_s - v_e)
    return float(np.mean(leaky_loss(y, leak)))


def _same_as_expert(samples: np.ndarray, experts: np.ndarray) -> np.ndarray:
    # BLAS rounding can depend on batch layout, so a sample bit-identical to its
    # expert is given its exact margin (0) rather than a computed one
    return np.all(samples == experts, axis=(-2, -1))


def _pair_arrays(frames: Sequence[Frame]):
    samples = np.concatenate([f.samples for f in frames])
    experts = np.concatenate([np.broadcast_to(f.expert, f.samples.shape) for f in frames])
    owner = np.repeat(np.arange(len(frames)), [f.n_samples for f in frames])
    counts = np.array([f.n_samples for f in frames], dtype=float)
    return samples, experts, owner, counts


def ranking_loss_and_grad(model: ValueModel, frames: Sequence[Frame], leak: float = DEFAULT_LEAK):
    """Mean over frames of :func:`pairwise_loss`, its gradient, and per-frame losses.

    Both members of every pair go through the same parameters; the gradient
    is formed as the difference of two identically shaped passes, so a pair
    of identical blocks contributes exactly zero.
    """
    samples, experts, owner, counts = _pair_arrays(frames)
    v_e_frame = np.array([value_batch(model, f.expert) for f in frames])
    same = _same_as_expert(samples, experts)
    y = np.where(same, 0.0, value_batch(model, samples) - v_e_frame[owner])
    per_pair = np.where(y >= 0, y, leak * y)
    per_frame = np.bincount(owner, weights=per_pair, minlength=len(frames)) / counts
    loss = float(per_frame.mean())
    w = np.where(same, 0.0, np.where(y >= 0, 1.0, leak) / counts[owner] / len(frames))
    grad = backward(model, samples, w) - backward(model, experts, w)
    return loss, grad, per_frame


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def cross_entropy_loss_and_grad(model: ValueModel, frames: Sequence[Frame]):
    """Pooled binary cross entropy, ``sigmoid(V)`` read as P(expert)."""
    blocks = np.concatenate([np.concatenate([f.expert[None], f.samples]) for f in frames])
    labels = np.concatenate([np.r_[1.0, np.zeros(f.n_samples)] for f in frames])
    owner = np.repeat(np.arange(len(frames)), [1 + f.n_samples for f in frames])
    v = value_batch(model, blocks)
    per_block = _softplus(v) - labels * v
    loss = float(per_block.mean())
    grad = backward(model, blocks, (_sigmoid(v) - labels) / labels.size)
    per_frame = np.bincount(owner, weights=per_block, minlength=len(frames)) / np.bincount(owner)
    return loss, grad, per_frame


def gan_loss(model: ValueModel, frames: Sequence[Frame]) -> float:
    return cross_entropy_loss_and_grad(model, frames)[0]


# -- optimizers ----------------------------------------------------------------

class Optimizer:
    """Minimal first-order optimizers over a flat parameter vector."""

    def __init__(self, kind: str = "adam", lr: float = 0.01, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, momentum: float = 0.9):
        if kind not in OPTIMIZERS:
            raise ContractViolation(f"unknown optimizer {kind!r}")
        self.kind, self.lr = kind, lr
        self.beta1, self.beta2, self.eps, self.momentum = beta1, beta2, eps, momentum
        self.m = self.v = None
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        if self.kind == "sgd":
            update = grad
        elif self.kind == "momentum":
            self.m = self.momentum * self.m + grad
            update = self.m
        elif self.kind == "rmsprop":
            self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
            update = grad / (np.sqrt(self.v) + self.eps)
        else:
            self.m = self.beta1 * self.m + (1 - self.beta1) * grad
            self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
            m_hat = self.m / (1 - self.beta1 ** self.t)
            v_hat = self.v / (1 - self.beta2 ** self.t)
            update = m_hat / (np.sqrt(v_hat) + self.eps)
        return theta - self.lr * update


# -- rank statistics -------------------------------------------------------------

TOP_DECILE = 90.0


def expert_percentile(v_expert: float, v_samples: np.ndarray) -> float:
    """Share of samples the expert beats, ties counted half, in percent."""
    v_samples = np.asarray(v_samples)
    below = np.count_nonzero(v_samples < v_expert)
    ties = np.count_nonzero(v_samples == v_expert)
    return 100.0 * (below + 0.5 * ties) / v_samples.size


def frame_percentiles(scorer, frames: Sequence[Frame]) -> np.ndarray:
    out = np.empty(len(frames))
    for i, f in enumerate(frames):
        out[i] = expert_percentile(float(scorer.values(f.expert)), scorer.values(f.samples))
    return out


# -- training loop ---------------------------------------------------------------

@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    expert_top_decile_rate: float
    wall_time_s: float


@dataclass
class TrainingReport:
    method: str
    config: dict
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "mean_loss", "expert_top_decile_rate", "wall_time_s"])
        for e in self.epochs:
            w.writerow([e.epoch, repr(e.mean_loss), repr(e.expert_top_decile_rate), f"{e.wall_time_s:.3f}"])
        return buf.getvalue()

    @property
    def final_loss(self) -> float:
        return self.epochs[-1].mean_loss if self.epochs else float("nan")


def _seed_stream(seed: int, name: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), *name.encode()])


def _check_frames(frames: Sequence[Frame]) -> None:
    if len(frames) == 0:
        raise ContractViolation("training needs at least one frame")
    tg = frames[0].time_grid
    for f in frames:
        if not np.array_equal(f.time_grid, tg):
            raise GridMismatchError(f"frame {f.frame_id!r} uses a different time grid")


def _fit(frames: Sequence[Frame], config: TrainConfig, method: str,
         loss_and_grad: Callable, model: ValueModel | None, norm_table: NormTable | None):
    _check_frames(frames)
    if model is None:
        init_seed = int(_seed_stream(config.seed, "init").generate_state(1)[0])
        n_features = frames[0].expert.shape[-1]
        model = init_model(init_seed, n_features=n_features, time_grid=frames[0].time_grid, norm_table=norm_table)
    model.check_grid(frames[0].time_grid)
    shuffle = np.random.default_rng(_seed_stream(config.seed, "shuffle"))
    opt = Optimizer(config.optimizer, config.learning_rate)
    theta = model.to_vector()
    report = TrainingReport(method, config.to_dict())
    t_start = time.perf_counter()
    best = (-1.0, model)

    def guard(loss, per_frame, batch):
        if not np.isfinite(loss):
            bad = [batch[i].frame_id for i in np.flatnonzero(~np.isfinite(per_frame))] or [batch[0].frame_id]
            raise NonFiniteLossError(bad[0], loss)

    for epoch in range(1, config.epochs + 1):
        order = shuffle.permutation(len(frames))
        for start in range(0, len(order), config.batch_frames):
            batch = [frames[i] for i in order[start:start + config.batch_frames]]
            loss, grad, per_frame = loss_and_grad(model, batch)
            guard(loss, per_frame, batch)
            if not np.all(np.isfinite(grad)):
                raise NonFiniteLossError(batch[0].frame_id, "non-finite gradient")
            grad = grad + config.weight_decay * theta
            norm = float(np.linalg.norm(grad))
            if norm > config.clip_norm:
                grad = grad * (config.clip_norm / norm)
            theta = opt.step(theta, grad)
            model = model.with_vector(theta)
        loss, _, per_frame = loss_and_grad(model, frames)
        guard(loss, per_frame, frames)
        pct = frame_percentiles(model, frames)
        stats = EpochStats(epoch, loss, float(np.mean(pct >= TOP_DECILE)), time.perf_counter() - t_start)
        report.epochs.append(stats)
        if not config.keep_best or stats.expert_top_decile_rate > best[0]:
            best = (stats.expert_top_decile_rate, model)
            report.best_epoch = epoch
        log.info("%s epoch %d loss %.5f top-decile %.3f", method, epoch, stats.mean_loss, stats.expert_top_decile_rate)
    if config.epochs > 0:
        model = best[1]
    return model, report


def train_rcirl(frames: Sequence[Frame], config: TrainConfig = TrainConfig(),
                model: ValueModel | None = None, norm_table: NormTable | None = None):
    """Minibatch descent on the frame-conditioned ranking loss.

    Returns ``(model, TrainingReport)``.  Identical frames and config give a
    bit-identical model.
    """
    def lg(m, batch):
        return ranking_loss_and_grad(m, batch, config.leak)

    return _fit(frames, config, "rcirl", lg, model, norm_table)


def train_gan_baseline(frames: Sequence[Frame], config: TrainConfig = TrainConfig(),
                       model: ValueModel | None = None, norm_table: NormTable | None = None):
    """Same loop, pooled expert-vs-sample cross entropy; ignores frame identity in the loss."""
    return _fit(frames, config, "gan", cross_entropy_loss_and_grad, model, norm_table)


# -- ingestion -----------------------------------------------------------------

class FrameList(list):
    """Ingested frames plus the filter bookkeeping."""

    def __init__(self, frames=(), kept: int = 0, dropped: int = 0, warnings: Sequence[str] = ()):
        super().__init__(frames)
        self.kept = kept
        self.dropped = dropped
        self.warnings = list(warnings)


def ingest_frames(path, scenarios: Mapping[str, Scenario] | Sequence[Scenario] | None = None,
                  norm_table: NormTable | None = None, splits: Sequence[str] | None = None) -> FrameList:
    """Read a frame file into normalized :class:`Frame` objects.

    Frames whose expert holds a constant speed in an obstacle-free scenario
    carry no ranking signal and are dropped.  Feature blocks come from the
    file when present, otherwise they are computed from ``scenarios``.
    """
    norm_table = NormTable.default() if norm_table is None else norm_table
    if scenarios is not None and not isinstance(scenarios, Mapping):
        scenarios = {sc.id: sc for sc in scenarios}
    records = read_frame_records(path)
    if not records:
        log.warning("frame file %s is empty", path)
        return FrameList([], 0, 0, [f"empty frame file {path}"])
    tg = records[0].time_grid
    frames, dropped = [], 0
    for rec in records:
        if not np.array_equal(rec.time_grid, tg):
            raise GridMismatchError(f"frame {rec.scenario_id!r} has an inconsistent time grid")
        if splits is not None and rec.split not in splits:
            continue
        if rec.n_obstacles == 0 and np.ptp(rec.expert.v) == 0.0:
            dropped += 1
            continue
        if rec.features is not None:
            raw = rec.features
        else:
            if scenarios is None or rec.scenario_id not in scenarios:
                raise ContractViolation(f"frame {rec.scenario_id!r} has no features and no scenario to compute them")
            sc = scenarios[rec.scenario_id]
            if not np.array_equal(sc.time_grid, tg):
                raise GridMismatchError(f"scenario {sc.id!r} time grid differs from its frame")
            raw = feature_blocks(sc, (rec.expert,) + rec.samples)
        if raw.shape[0] != 1 + len(rec.samples):
            raise MalformedInputError(f"frame {rec.scenario_id!r}: feature block count mismatch")
        blocks = norm_table.apply(raw)
        frames.append(Frame(rec.scenario_id, blocks[0], blocks[1:], tg, rec.split))
    return FrameList(frames, len(frames), dropped)
