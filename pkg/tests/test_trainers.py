import math

import numpy as np
import pytest

import simtwin.trainers as trainers
from simtwin.core import (
    ConfigurationError,
    HistoryWindow,
    NormSpec,
    Trajectory,
    extract_sigma0,
    make_dataset,
    rollout,
)
from simtwin.laneworld import LaneKeepingController, collect_fot_logs, ControllerConfig
from simtwin.nets import GaussianHead, Layer, Mlp
from simtwin.trainers import (
    BcHyper,
    GailHyper,
    RolloutBuffer,
    _train_adversarial,
    collect_gail_rollout,
    compute_gae,
    discriminator_update,
    gail_reward,
    make_critic,
    make_discriminator,
    make_env_model,
    ppo_update,
    train_bc,
    train_bcxgail,
    train_gail,
)
from simtwin.nets import AdamState, ScalarAdam, forward


def constant_dataset(k_norm: float, n_logs: int = 2, length: int = 26, l: int = 10):
    norm = NormSpec()
    state = float(norm.denorm_state(k_norm))
    logs = [Trajectory(np.full(length, state), np.zeros(length)) for _ in range(n_logs)]
    return make_dataset(logs, l, norm)


def disc_with_fixed_output(d: float):
    """Single sigmoid layer ignoring its input: output exactly sigma(logit)."""
    logit = math.log(d / (1.0 - d))
    return Mlp([Layer(np.zeros((21, 1)), np.array([logit]), "sigmoid")])


def test_bc_hyper_defaults():
    h = BcHyper()
    assert h.epochs == 300
    assert h.learning_rate == 5e-5


def test_gail_hyper_defaults_match_reference_settings():
    h = GailHyper()
    assert (h.epochs, h.model_lr, h.disc_lr) == (300, 5e-5, 0.01)
    assert (h.ppo_policy_iters, h.ppo_disc_iters) == (10, 10)
    assert (h.gamma, h.lam, h.clip_epsilon) == (0.99, 0.95, 0.2)


def test_hyper_validation():
    with pytest.raises(ConfigurationError):
        BcHyper(epochs=0)
    with pytest.raises(ConfigurationError):
        GailHyper(gamma=0.0)
    with pytest.raises(ConfigurationError):
        GailHyper(lam=1.5)


def test_train_bc_fits_constant_function():
    ds = constant_dataset(0.4)
    model = train_bc(make_env_model(10, seed=0), ds, BcHyper(epochs=200), seed=1)
    preds = forward(model.mean_net, ds.inputs)[:, 0]
    assert np.abs(preds - 0.4).max() < 0.01


def test_train_bc_loss_decreases():
    logs = collect_fot_logs(ControllerConfig(30.0), count=3, duration=25, noise_sigma=0.5, base_seed=21)
    ds = make_dataset(logs, 10)
    model = train_bc(make_env_model(10, seed=3), ds, BcHyper(epochs=300), seed=4)
    losses = [r.loss_bc for r in model.trace]
    assert losses[-1] < losses[0]
    # monotone over a 20-epoch moving average
    avg = np.convolve(losses, np.ones(20) / 20, mode="valid")
    assert np.all(np.diff(avg) <= 1e-6)


def test_train_bc_deterministic():
    ds = constant_dataset(0.2)
    a = train_bc(make_env_model(10, seed=5), ds, BcHyper(epochs=10), seed=6)
    b = train_bc(make_env_model(10, seed=5), ds, BcHyper(epochs=10), seed=6)
    for la, lb in zip(a.mean_net.layers, b.mean_net.layers):
        assert np.array_equal(la.w, lb.w)


def test_train_bc_model_is_deterministic_oracle():
    ds = constant_dataset(0.0)
    model = train_bc(make_env_model(10, seed=0), ds, BcHyper(epochs=2), seed=0)
    oracle = model.oracle()
    assert oracle.deterministic
    assert model.log_std is None


def test_gail_reward_balanced_discriminator():
    disc = disc_with_fixed_output(0.5)
    r = gail_reward(disc, np.zeros(20), 0.0)
    assert r == pytest.approx(math.log(2.0), abs=1e-6)


def test_gail_reward_confident_fake_goes_to_zero():
    disc = Mlp([Layer(np.zeros((21, 1)), np.array([-40.0]), "sigmoid")])
    assert gail_reward(disc, np.zeros(20), 0.0) == pytest.approx(0.0, abs=1e-6)


def test_gail_reward_expert_like():
    disc = disc_with_fixed_output(0.9)
    assert gail_reward(disc, np.zeros(20), 0.0) == pytest.approx(-math.log(0.1), abs=1e-4)


def test_discriminator_update_identical_sets_converges_to_half():
    rng = np.random.default_rng(8)
    x = rng.uniform(-1, 1, (16, 20))
    y = rng.uniform(-1, 1, 16)
    disc = make_discriminator(10, seed=9)
    state = AdamState.for_net(disc, 0.01)
    loss = math.inf
    for _ in range(30):
        loss = discriminator_update(disc, (x, y), (x, y), iters=10, state=state)
    assert loss == pytest.approx(math.log(2.0), abs=0.05)
    outputs = forward(disc, np.column_stack([x, y]))[:, 0]
    assert np.abs(outputs - 0.5).max() < 0.1


def test_discriminator_update_separates_toy_sets():
    rng = np.random.default_rng(10)
    x_real = rng.uniform(0.5, 1.0, (32, 20))
    y_real = rng.uniform(0.5, 1.0, 32)
    x_fake = rng.uniform(-1.0, -0.5, (32, 20))
    y_fake = rng.uniform(-1.0, -0.5, 32)
    disc = make_discriminator(10, seed=11)
    state = AdamState.for_net(disc, 0.01)
    for _ in range(10):
        discriminator_update(disc, (x_real, y_real), (x_fake, y_fake), iters=10, state=state)
    d_real = forward(disc, np.column_stack([x_real, y_real]))[:, 0]
    d_fake = forward(disc, np.column_stack([x_fake, y_fake]))[:, 0]
    accuracy = (np.sum(d_real > 0.5) + np.sum(d_fake <= 0.5)) / 64
    assert accuracy > 0.95


def test_discriminator_update_runs_exactly_iters_steps():
    rng = np.random.default_rng(12)
    x = rng.uniform(-1, 1, (8, 20))
    y = rng.uniform(-1, 1, 8)
    disc = make_discriminator(10, seed=13)
    state = AdamState.for_net(disc, 0.01)
    discriminator_update(disc, (x, y), (x, y + 0.1), iters=10, state=state)
    assert state.step_count == 10


def test_discriminator_update_empty_set_rejected():
    disc = make_discriminator(10, seed=0)
    x = np.zeros((2, 20))
    with pytest.raises(ConfigurationError):
        discriminator_update(disc, (x, np.zeros(2)), (np.zeros((0, 20)), np.zeros(0)))


def test_compute_gae_single_step():
    adv, ret = compute_gae(np.array([1.0]), np.array([0.0, 0.0]), gamma=0.99, lam=0.95)
    assert adv.tolist() == [1.0]
    assert ret.tolist() == [1.0]


def test_compute_gae_zero_case():
    adv, ret = compute_gae(np.zeros(2), np.zeros(3), gamma=0.9, lam=0.9)
    assert np.all(adv == 0.0)
    assert np.all(ret == 0.0)


def test_compute_gae_hand_recursion():
    # delta = [1, 1]; A_1 = 1, A_0 = 1 + 0.99 * 0.95 * 1 = 1.9405
    adv, ret = compute_gae(np.array([1.0, 1.0]), np.zeros(3), gamma=0.99, lam=0.95)
    assert adv == pytest.approx([1.9405, 1.0], rel=1e-12)
    assert ret == pytest.approx([1.9405, 1.0], rel=1e-12)


def test_compute_gae_length_mismatch():
    with pytest.raises(ConfigurationError):
        compute_gae(np.zeros(3), np.zeros(3), 0.99, 0.95)


def make_head(log_std=-1.0, seed=0):
    return GaussianHead(make_env_model(10, seed=seed), log_std=log_std)


def test_collect_rollout_horizon_one():
    head = make_head()
    buf = collect_gail_rollout(
        head, LaneKeepingController(30.0), make_discriminator(10, seed=1),
        make_critic(10, seed=2), np.zeros(20), horizon=1,
        rng=np.random.default_rng(0), norm=NormSpec(),
    )
    assert len(buf) == 1
    assert buf.values.shape == (2,)


def test_collect_rollout_constant_model_fixed_point():
    # a zero-weight mean net predicts 0 (state 50); with the sampling noise
    # effectively off, every slid window fills with the constant pair
    head = GaussianHead(Mlp([Layer(np.zeros((20, 1)), np.zeros(1), "tanh")]), log_std=-60.0)
    buf = collect_gail_rollout(
        head, LaneKeepingController(30.0), make_discriminator(10, seed=1),
        make_critic(10, seed=2), np.full(20, 0.25), horizon=12,
        rng=np.random.default_rng(0), norm=NormSpec(),
    )
    # after 10 slides the window is all (0, 0): predicted state 0, action 0
    assert np.allclose(buf.windows[-1], 0.0, atol=1e-12)


def test_collect_rollout_seeded_reproducible():
    head = make_head(seed=3)
    args = (
        head, LaneKeepingController(30.0), make_discriminator(10, seed=4),
        make_critic(10, seed=5), np.linspace(-1, 1, 20), 8,
    )
    a = collect_gail_rollout(*args, rng=np.random.default_rng(42), norm=NormSpec())
    b = collect_gail_rollout(*args, rng=np.random.default_rng(42), norm=NormSpec())
    assert np.array_equal(a.samples, b.samples)
    assert np.array_equal(a.rewards, b.rewards)


def test_collect_rollout_zero_horizon_rejected():
    with pytest.raises(ConfigurationError):
        collect_gail_rollout(
            make_head(), LaneKeepingController(30.0), make_discriminator(10),
            make_critic(10), np.zeros(20), horizon=0,
            rng=np.random.default_rng(0), norm=NormSpec(),
        )


def ppo_states(head, critic, hyper):
    return (
        AdamState.for_net(head.mean_net, hyper.model_lr),
        ScalarAdam(hyper.log_std_lr),
        AdamState.for_net(critic, hyper.critic_lr),
    )


def fresh_buffer(head, critic, n=6, seed=0):
    rng = np.random.default_rng(seed)
    buf = collect_gail_rollout(
        head, LaneKeepingController(30.0), make_discriminator(10, seed=7),
        critic, rng.uniform(-0.5, 0.5, 20), horizon=n, rng=rng, norm=NormSpec(),
    )
    buf.advantages, buf.returns = compute_gae(buf.rewards, buf.values, 0.99, 0.95)
    return buf


def test_ppo_zero_advantages_leave_policy_unchanged():
    head, critic = make_head(seed=8), make_critic(10, seed=9)
    hyper = GailHyper()
    buf = fresh_buffer(head, critic)
    buf.advantages = np.zeros(len(buf))
    buf.returns = buf.values[:-1].copy()
    before = [l.w.copy() for l in head.mean_net.layers]
    log_std_before = head.log_std
    ppo_update(head, critic, buf, hyper, *ppo_states(head, critic, hyper))
    for b, l in zip(before, head.mean_net.layers):
        assert np.array_equal(b, l.w)
    assert head.log_std == log_std_before


def test_ppo_buffer_of_size_one_defined():
    head, critic = make_head(seed=10), make_critic(10, seed=11)
    hyper = GailHyper(ppo_policy_iters=2)
    buf = fresh_buffer(head, critic, n=1)
    pl, vl, skipped = ppo_update(head, critic, buf, hyper, *ppo_states(head, critic, hyper))
    assert math.isfinite(pl)
    assert math.isfinite(vl)


def test_ppo_identity_ratio_surrogate_is_mean_advantage():
    head, critic = make_head(seed=12), make_critic(10, seed=13)
    hyper = GailHyper(ppo_policy_iters=1, model_lr=1e-12, log_std_lr=1e-12, critic_lr=1e-12)
    buf = fresh_buffer(head, critic)
    adv = buf.advantages
    norm_adv = (adv - adv.mean()) / adv.std()
    pl, _, _ = ppo_update(head, critic, buf, hyper, *ppo_states(head, critic, hyper))
    # new policy equals old policy on the first iteration: ratio = 1
    assert pl == pytest.approx(-norm_adv.mean(), abs=1e-5)


def test_ppo_ratio_overflow_skipped_and_flagged():
    head, critic = make_head(seed=14), make_critic(10, seed=15)
    hyper = GailHyper(ppo_policy_iters=3)
    buf = fresh_buffer(head, critic)
    buf.log_probs = buf.log_probs + 50.0  # forces |log ratio| > 20
    before = [l.w.copy() for l in head.mean_net.layers]
    _, _, skipped = ppo_update(head, critic, buf, hyper, *ppo_states(head, critic, hyper))
    assert skipped == 3
    for b, l in zip(before, head.mean_net.layers):
        assert np.array_equal(b, l.w)


def test_ppo_requires_populated_advantages():
    head, critic = make_head(), make_critic(10)
    hyper = GailHyper()
    buf = RolloutBuffer(
        windows=np.zeros((2, 20)), samples=np.zeros(2), log_probs=np.zeros(2),
        rewards=np.zeros(2), values=np.zeros(3),
    )
    with pytest.raises(ConfigurationError):
        ppo_update(head, critic, buf, hyper, *ppo_states(head, critic, hyper))


def test_train_gail_epoch_accounting(fot3_dataset, controller30, monkeypatch):
    calls = []
    original = trainers.discriminator_update

    def counting(*args, **kwargs):
        calls.append(1)
        return original(*args, **kwargs)

    monkeypatch.setattr(trainers, "discriminator_update", counting)
    head, disc, critic = make_head(seed=16), make_discriminator(10, seed=17), make_critic(10, seed=18)
    train_gail(head, disc, critic, controller30, fot3_dataset, GailHyper(epochs=4), seed=19)
    assert len(calls) == 4 * 3  # epochs x source logs


def test_train_gail_deterministic(fot3_dataset, controller30):
    def run():
        head = make_head(seed=20)
        m = train_gail(
            head, make_discriminator(10, seed=21), make_critic(10, seed=22),
            controller30, fot3_dataset, GailHyper(epochs=3), seed=23,
        )
        return m

    a, b = run(), run()
    assert a.log_std == b.log_std
    for la, lb in zip(a.mean_net.layers, b.mean_net.layers):
        assert np.array_equal(la.w, lb.w)
    assert [r.mean_reward for r in a.trace] == [r.mean_reward for r in b.trace]


def test_bcxgail_without_gail_matches_bc(fot3_dataset, controller30):
    plain = train_bc(make_env_model(10, seed=24, dtype=np.float32), fot3_dataset,
                     BcHyper(epochs=8, learning_rate=5e-5), seed=25)
    head = GaussianHead(make_env_model(10, seed=24, dtype=np.float32))
    combined = _train_adversarial(
        head, make_discriminator(10, seed=26), make_critic(10, seed=27),
        controller30, fot3_dataset, GailHyper(epochs=8, model_lr=5e-5), seed=25,
        use_bc=True, use_gail=False, algorithm="bc-only",
    )
    assert [r.loss_bc for r in combined.trace] == [r.loss_bc for r in plain.trace]
    for la, lb in zip(combined.mean_net.layers, plain.mean_net.layers):
        assert np.array_equal(la.w, lb.w)


def test_bcxgail_without_bc_matches_gail(fot3_dataset, controller30):
    def parts():
        return (GaussianHead(make_env_model(10, seed=28)),
                make_discriminator(10, seed=29), make_critic(10, seed=30))

    h1, d1, c1 = parts()
    gail = train_gail(h1, d1, c1, controller30, fot3_dataset, GailHyper(epochs=3), seed=31)
    h2, d2, c2 = parts()
    stripped = _train_adversarial(
        h2, d2, c2, controller30, fot3_dataset, GailHyper(epochs=3), seed=31,
        use_bc=False, use_gail=True, algorithm="gail",
    )
    assert gail.log_std == stripped.log_std
    for la, lb in zip(gail.mean_net.layers, stripped.mean_net.layers):
        assert np.array_equal(la.w, lb.w)


def test_trained_models_share_oracle_contract(fot3_dataset, controller30):
    # every trainer's output drives the same closed-loop machinery
    bc = train_bc(make_env_model(10, seed=32), fot3_dataset, BcHyper(epochs=2), seed=33)
    gail = train_gail(GaussianHead(make_env_model(10, seed=34)),
                      make_discriminator(10, seed=35), make_critic(10, seed=36),
                      controller30, fot3_dataset, GailHyper(epochs=2), seed=37)
    both = train_bcxgail(GaussianHead(make_env_model(10, seed=38)),
                         make_discriminator(10, seed=39), make_critic(10, seed=40),
                         controller30, fot3_dataset, GailHyper(epochs=2), seed=41)
    init = HistoryWindow(np.linspace(45, 55, 10), np.zeros(10))
    for model in (bc, gail, both):
        traj = rollout(model.oracle(), controller30, init, steps=16, seed=1)
        assert len(traj) == 26
        assert traj.states.min() >= 0.0 and traj.states.max() <= 100.0


def test_empty_dataset_rejected(controller30):
    ds = constant_dataset(0.0)
    empty = type(ds)(
        inputs=ds.inputs[:0], targets=ds.targets[:0], log_ids=ds.log_ids[:0],
        l=ds.l, norm=ds.norm,
    )
    with pytest.raises(ConfigurationError):
        train_bc(make_env_model(10), empty, BcHyper(epochs=1))
    with pytest.raises(ConfigurationError):
        train_gail(make_head(), make_discriminator(10), make_critic(10),
                   controller30, empty, GailHyper(epochs=1))


def test_gail_closed_loop_fidelity(gail_standard):
    # simulate from the initial windows of fresh reference runs and compare
    # against what the reference environment actually did
    eval_logs = collect_fot_logs(ControllerConfig(30.0), count=20, duration=25,
                                 noise_sigma=0.5, base_seed=5150)
    ctl = LaneKeepingController(30.0)
    oracle = gail_standard.oracle()
    errors = []
    for i, ref in enumerate(eval_logs):
        sim = rollout(oracle, ctl, extract_sigma0(ref, 10), steps=16, seed=600 + i)
        errors.append(np.abs(sim.states[10:] - ref.states[10:]).mean())
    assert float(np.mean(errors)) < 10.0


def test_gail_three_log_training_fits_desk_budget(gail_standard):
    # 300 adversarial epochs on three logs must stay well under ten minutes
    assert gail_standard.train_seconds < 600.0


def test_bcxgail_training_mse_not_worse_than_gail(
    gail_standard, bcxgail_standard, fot3_dataset
):
    def final_mse(model):
        preds = forward(model.mean_net, fot3_dataset.inputs)[:, 0]
        return float(np.mean((preds - fot3_dataset.targets) ** 2))

    assert final_mse(bcxgail_standard) <= final_mse(gail_standard)


def test_closed_loop_statistics_every_algorithm():
    # trained on 30 logs of x=30, each algorithm's 100 simulated rollouts have
    # state mean and standard deviation within 20% relative of the oracle's,
    # from matched initial windows
    logs = collect_fot_logs(ControllerConfig(30.0), count=30, duration=25,
                            noise_sigma=0.5, base_seed=8800)
    ds = make_dataset(logs, 10, NormSpec())
    ctl = LaneKeepingController(30.0)
    refs = collect_fot_logs(ControllerConfig(30.0), count=100, duration=25,
                            noise_sigma=0.5, base_seed=9900)
    ref_states = np.concatenate([t.states[10:] for t in refs])

    models = {
        "bc": train_bc(make_env_model(10, seed=50), ds, BcHyper(epochs=300), seed=51),
        "gail": train_gail(GaussianHead(make_env_model(10, seed=52)),
                           make_discriminator(10, seed=53), make_critic(10, seed=54),
                           ctl, ds, GailHyper(epochs=20), seed=55),
        "bcxgail": train_bcxgail(GaussianHead(make_env_model(10, seed=56)),
                                 make_discriminator(10, seed=57), make_critic(10, seed=58),
                                 ctl, ds, GailHyper(epochs=20), seed=59),
    }
    for name, model in models.items():
        oracle = model.oracle()
        sim_states = np.concatenate([
            rollout(oracle, ctl, extract_sigma0(src, 10), steps=16, seed=700 + i).states[10:]
            for i, src in enumerate(refs)
        ])
        for stat in (np.mean, np.std):
            real, sim = stat(ref_states), stat(sim_states)
            assert abs(sim - real) / abs(real) < 0.20, (
                f"{name}: {stat.__name__} {sim:.2f} vs oracle {real:.2f}"
            )


def test_gail_discriminator_separates_expert_from_random(fot3_dataset, controller30):
    head = make_head(seed=40)
    disc = make_discriminator(10, seed=41)
    critic = make_critic(10, seed=42)
    train_gail(head, disc, critic, controller30, fot3_dataset, GailHyper(epochs=30), seed=43)
    rng = np.random.default_rng(44)
    x = fot3_dataset.inputs
    expert_scores = forward(disc, np.column_stack([x, fot3_dataset.targets]))[:, 0]
    random_scores = forward(disc, np.column_stack([x, rng.uniform(-1, 1, len(x))]))[:, 0]
    assert expert_scores.mean() - random_scores.mean() > 0.2
