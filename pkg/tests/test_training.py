import logging
import math

import numpy as np
import pytest
from controlled import controlled_frames, controlled_model, with_constant_channel
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.linear_model import LogisticRegression

from rcirl.errors import ContractViolation, GridMismatchError, MalformedInputError, NonFiniteLossError
from rcirl.sampler import (
    FrameRecord,
    GroundTruthReward,
    SamplerConfig,
    SuiteConfig,
    build_frame,
    generate_scenario_suite,
    sample_trajectories,
    trajectory_from_speeds,
    write_frames,
)
from rcirl.scenario import (
    N_FEATURES,
    N_TIMES,
    NormTable,
    PathProfile,
    Provenance,
    Scenario,
    default_time_grid,
    feature_blocks,
)
from rcirl.training import (
    OPTIMIZERS,
    Frame,
    Optimizer,
    TrainConfig,
    cross_entropy_loss_and_grad,
    expert_percentile,
    gan_loss,
    ingest_frames,
    leaky_loss,
    pairwise_loss,
    ranking_loss_and_grad,
    train_gan_baseline,
    train_rcirl,
)
from rcirl.valuenet import init_model, value_batch

TG = default_time_grid()


def frame_with_values(model, v_expert, v_samples):
    """Blocks whose value under ``model`` is set through channel 0 only."""
    def block(v):
        b = np.zeros((N_TIMES, N_FEATURES))
        b[:, 0] = v
        return b
    return Frame("x", block(v_expert), np.stack([block(v) for v in v_samples]), TG)


def linear_model():
    """V(block) = block[0, 0] for non-negative channel-0 inputs, computed exactly."""
    m = init_model(0).with_vector(np.zeros(364))
    m.W1[0, 0] = 1.0
    m.w2[0] = 1.0
    m.gamma = np.eye(N_TIMES)[0]
    return m


# -- loss ---------------------------------------------------------------------

def test_leaky_loss_constants():
    assert leaky_loss(2.0) == 2.0
    assert leaky_loss(-2.0) == -0.1
    assert leaky_loss(0.0) == 0.0


def test_pairwise_loss_single_sample_examples():
    m = linear_model()
    assert pairwise_loss(m, frame_with_values(m, 1.0, [3.0])) == 2.0
    assert pairwise_loss(m, frame_with_values(m, 3.0, [1.0])) == pytest.approx(-0.1, abs=1e-15)


def test_equal_values_give_zero_loss():
    m = init_model(3)
    rng = np.random.default_rng(3)
    e = rng.normal(size=(N_TIMES, N_FEATURES))
    f = Frame("eq", e, np.stack([e] * 5), TG)
    assert pairwise_loss(m, f) == 0.0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_pairwise_loss_permutation_and_duplication(seed):
    rng = np.random.default_rng(seed)
    m = init_model(seed)
    f = Frame("p", rng.normal(size=(N_TIMES, N_FEATURES)), rng.normal(size=(9, N_TIMES, N_FEATURES)), TG)
    base = pairwise_loss(m, f)
    perm = Frame("p", f.expert, f.samples[rng.permutation(9)], TG)
    dup = Frame("p", f.expert, np.concatenate([f.samples, f.samples]), TG)
    assert pairwise_loss(m, perm) == pytest.approx(base, rel=1e-12, abs=1e-15)
    assert pairwise_loss(m, dup) == pytest.approx(base, rel=1e-12, abs=1e-15)


def test_batched_loss_matches_per_frame_mean():
    frames = controlled_frames(1)
    m = init_model(1)
    loss, _, per_frame = ranking_loss_and_grad(m, frames)
    assert per_frame == pytest.approx([pairwise_loss(m, f) for f in frames], rel=1e-12)
    assert loss == pytest.approx(np.mean(per_frame), rel=1e-12)


def test_ranking_gradient_matches_finite_differences():
    frames = controlled_frames(2, n_frames=2, n_samples=3)
    m = init_model(2)
    _, g, _ = ranking_loss_and_grad(m, frames)
    theta = m.to_vector()
    h = 1e-6
    for p in np.random.default_rng(0).choice(theta.size, 40, replace=False):
        up, down = theta.copy(), theta.copy()
        up[p] += h
        down[p] -= h
        fd = (ranking_loss_and_grad(m.with_vector(up), frames)[0]
              - ranking_loss_and_grad(m.with_vector(down), frames)[0]) / (2 * h)
        assert fd == pytest.approx(g[p], rel=1e-4, abs=1e-7)


def test_identical_blocks_give_exactly_zero_gradient():
    rng = np.random.default_rng(5)
    frames = []
    for i in range(3):
        e = rng.normal(size=(N_TIMES, N_FEATURES))
        frames.append(Frame(f"id{i}", e, np.stack([e] * 4), TG))
    loss, grad, _ = ranking_loss_and_grad(init_model(5), frames)
    assert loss == 0.0 and np.all(grad == 0.0)


def test_conditioning_invariance_controlled():
    frames = controlled_frames(7)
    shifted = with_constant_channel(frames, 7)
    m21, m22 = controlled_model(7, False), controlled_model(7, True)
    for a, b in zip(frames, shifted):
        assert pairwise_loss(m21, a) == pairwise_loss(m22, b)
    assert gan_loss(m21, frames) != gan_loss(m22, shifted)


# -- GAN baseline ---------------------------------------------------------------------

def test_gan_zero_model_is_ln2():
    m = init_model(0).with_vector(np.zeros(364))
    frames = controlled_frames(0)
    loss, _, per_frame = cross_entropy_loss_and_grad(m, frames)
    assert loss == pytest.approx(math.log(2), rel=1e-15)
    assert np.allclose(per_frame, math.log(2), rtol=1e-15)


def test_gan_mixed_labels_optimum_is_label_fraction():
    # the same block labelled expert once and sample three times
    b = np.zeros((N_TIMES, N_FEATURES))
    frame = Frame("mix", b, np.stack([b] * 3), TG)
    m = init_model(0).with_vector(np.zeros(364))
    m.gamma = np.full(N_TIMES, 1.0 / N_TIMES)
    m.b2 = math.log(0.25 / 0.75)
    _, g, _ = cross_entropy_loss_and_grad(m, [frame])
    assert abs(g[15 * 21 + 30]) < 1e-15
    trained, _ = train_gan_baseline([frame], TrainConfig(epochs=400, learning_rate=0.05, weight_decay=0.0,
                                                         keep_best=False))
    p = 1.0 / (1.0 + math.exp(-float(value_batch(trained, b))))
    assert p == pytest.approx(0.25, abs=1e-3)


def test_gan_accuracy_against_logistic_oracle():
    rng = np.random.default_rng(21)
    mu = rng.normal(size=(N_TIMES, N_FEATURES)) * 0.3

    def balanced(n):
        experts = rng.normal(size=(n, N_TIMES, N_FEATURES)) + mu
        samples = rng.normal(size=(n, N_TIMES, N_FEATURES)) - mu
        return experts, samples

    e_tr, s_tr = balanced(150)
    e_te, s_te = balanced(150)
    frames = [Frame(f"b{i}", e, s[None], TG) for i, (e, s) in enumerate(zip(e_tr, s_tr))]
    model, _ = train_gan_baseline(frames, TrainConfig(epochs=15, learning_rate=0.01, seed=4))
    x_te = np.concatenate([e_te, s_te])
    y_te = np.r_[np.ones(150), np.zeros(150)]
    acc = np.mean((value_batch(model, x_te) > 0) == y_te)
    oracle = LogisticRegression(max_iter=2000).fit(
        np.concatenate([e_tr, s_tr]).reshape(300, -1), np.r_[np.ones(150), np.zeros(150)])
    acc_oracle = oracle.score(x_te.reshape(300, -1), y_te)
    assert acc > 0.5
    assert acc >= acc_oracle - 0.1


# -- optimizer / trainer --------------------------------------------------------------

@pytest.mark.parametrize("kind", OPTIMIZERS)
def test_zero_learning_rate_step_is_identity(kind):
    theta = init_model(1).to_vector()
    g = np.random.default_rng(1).normal(size=theta.size)
    out = Optimizer(kind, lr=0.0).step(theta, g)
    assert np.array_equal(out, theta)


def test_config_invariants():
    for bad in ({"learning_rate": 0.0}, {"leak": 0.0}, {"leak": 1.0}, {"optimizer": "lbfgs"}, {"batch_frames": 0}):
        with pytest.raises(ContractViolation):
            TrainConfig(**bad)
    with pytest.raises(MalformedInputError):
        TrainConfig.from_dict({"epochs": 1, "bogus": 2})
    assert TrainConfig.from_dict(TrainConfig().to_dict()) == TrainConfig()


def test_training_is_deterministic():
    frames = controlled_frames(3)
    cfg = TrainConfig(epochs=3, seed=9)
    for trainer in (train_rcirl, train_gan_baseline):
        a, ra = trainer(frames, cfg)
        b, rb = trainer(frames, cfg)
        assert a.equals(b)
        assert [e.mean_loss for e in ra.epochs] == [e.mean_loss for e in rb.epochs]


def test_dominating_expert_keeps_loss_non_positive():
    m = linear_model()
    rng = np.random.default_rng(8)
    frames = [frame_with_values(m, 5.0, rng.uniform(0.0, 4.0, 6)) for _ in range(4)]
    margins = [5.0 - value_batch(m, f.samples) for f in frames]
    expected = float(np.mean([np.mean(-0.05 * mg) for mg in margins]))
    loss0, _, _ = ranking_loss_and_grad(m, frames)
    assert loss0 == pytest.approx(expected, rel=1e-12)
    _, report = train_rcirl(frames, TrainConfig(epochs=5, learning_rate=0.001), model=m)
    assert all(e.mean_loss <= 0.0 for e in report.epochs)


def test_report_csv_columns():
    _, report = train_rcirl(controlled_frames(4), TrainConfig(epochs=2))
    lines = report.to_csv().splitlines()
    assert lines[0] == "epoch,mean_loss,expert_top_decile_rate,wall_time_s"
    assert len(lines) == 3 and 1 <= report.best_epoch <= 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_names_frame():
    frames = controlled_frames(5, n_frames=3)
    bad = frames[1]
    frames[1] = Frame(bad.frame_id, np.full_like(bad.expert, 1.7e308), np.full_like(bad.samples, -1.7e308), TG)
    with pytest.raises(NonFiniteLossError) as err:
        train_rcirl(frames, TrainConfig(epochs=1, batch_frames=8))
    assert "f1" in str(err.value)


def test_trainer_rejects_empty_and_mixed_grids():
    with pytest.raises(ContractViolation):
        train_rcirl([], TrainConfig(epochs=1))
    frames = controlled_frames(6, n_frames=2)
    frames[1] = Frame("g", frames[1].expert, frames[1].samples, TG * 2)
    with pytest.raises(GridMismatchError):
        train_rcirl(frames, TrainConfig(epochs=1))


def test_expert_percentile_ties_count_half():
    assert expert_percentile(1.0, np.array([0.0, 1.0, 2.0, 1.0])) == 50.0
    assert expert_percentile(3.0, np.zeros(10)) == 100.0


# -- ingestion ------------------------------------------------------------------

def _scenario(i, obstacles=()):
    return Scenario(f"s{i}", i, PathProfile.straight(speed_limit=15.0), tuple(obstacles), 10.0)


def test_ingest_filter_drops_constant_obstacle_free(tmp_path):
    scenarios = [_scenario(i) for i in range(10)]
    cfg = SamplerConfig(n_samples=5)
    records = []
    for i, sc in enumerate(scenarios):
        v = np.full(N_TIMES, 10.0) if i < 3 else 10.0 + 0.25 * np.arange(N_TIMES)
        s = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * 0.5)])
        expert = trajectory_from_speeds(TG, s, v, Provenance.EXPERT, "e")
        records.append(FrameRecord(sc.id, TG, expert, tuple(sample_trajectories(sc, cfg))))
    p = tmp_path / "f.jsonl"
    write_frames(p, records)
    frames = ingest_frames(p, scenarios)
    assert len(frames) == 7 and frames.kept == 7 and frames.dropped == 3
    assert {f.frame_id for f in frames} == {f"s{i}" for i in range(3, 10)}


def test_ingest_empty_file_warns(tmp_path, caplog):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    with caplog.at_level(logging.WARNING):
        frames = ingest_frames(p)
    assert list(frames) == [] and len(frames.warnings) == 1
    assert any("empty" in r.message for r in caplog.records)


def test_ingest_round_trip(tmp_path):
    suite = generate_scenario_suite(SuiteConfig(counts={"follow": 2, "stop": 2}), 3)
    gt = GroundTruthReward()
    recs = [build_frame(sc, gt, SamplerConfig(n_samples=8), with_features=True) for sc in suite]
    p = tmp_path / "rt.jsonl"
    write_frames(p, recs)
    from_file = ingest_frames(p)
    recomputed = ingest_frames(p, suite)  # features present in the file take precedence
    assert len(from_file) == len(recs) == len(recomputed)
    norm = NormTable.default()
    for rec, fr in zip(recs, from_file):
        blocks = norm.apply(feature_blocks(next(sc for sc in suite if sc.id == rec.scenario_id),
                                           (rec.expert,) + rec.samples))
        assert np.array_equal(fr.expert, blocks[0]) and np.array_equal(fr.samples, blocks[1:])


def test_ingest_rejects_bad_line_and_grid(tmp_path):
    sc = _scenario(0)
    rec = build_frame(sc, GroundTruthReward(), SamplerConfig(n_samples=3))
    p = tmp_path / "bad.jsonl"
    write_frames(p, [rec])
    p.write_text(p.read_text() + "{not json\n")
    with pytest.raises(MalformedInputError, match=r":2:"):
        ingest_frames(p, [sc])

    other = Scenario("s1", 1, PathProfile.straight(speed_limit=15.0), (), 10.0, time_grid=TG * 0.5)
    rec2 = build_frame(other, GroundTruthReward(), SamplerConfig(n_samples=3))
    write_frames(p, [rec, rec2])
    with pytest.raises(GridMismatchError):
        ingest_frames(p, [sc, other])
