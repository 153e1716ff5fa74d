import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scar.rl import (Controller, FixedPolicy, Mlp, RlConfig, cacla_update, double_q_update,
                     eval_csv, evaluate_controller, load_policy, q_update, reward,
                     run_episode, sarsa_update, save_policy, td_target, train_controller)
from scar.scheduler import EnvConfig, FairnessRegion, SchedulerEnv, run_baseline


def test_reward_examples():
    assert reward(FairnessRegion("FA", 0, 0)) == 1.0
    assert reward(FairnessRegion("UF", 0.2, 0)) == -1.0
    assert reward(FairnessRegion("UF", 0.05, 0)) == pytest.approx(-0.5)
    assert reward(FairnessRegion("OF", 0, 0.02)) == pytest.approx(-0.1)


def numeric_param_grad(net, loss, h=1e-6):
    out = []
    for p in net.params:
        g = np.zeros_like(p)
        for idx in np.ndindex(*p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss()
            p[idx] = old - h
            down = loss()
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def rel_err(a, b):
    a = np.concatenate([x.ravel() for x in a])
    b = np.concatenate([x.ravel() for x in b])
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


def test_td_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        n_out = int(rng.integers(1, 6))
        net = Mlp((9, 8, n_out), rng)
        net.params[3][:] = rng.normal(size=n_out)
        s = rng.random(9)
        a = int(rng.integers(n_out))
        target = float(rng.normal())
        d_out = np.zeros(n_out)
        d_out[a] = net(s)[a] - target
        loss = lambda: 0.5 * (net(s)[a] - target) ** 2
        worst = max(worst, rel_err(net.gradients(s, d_out), numeric_param_grad(net, loss)))
    assert worst < 1e-4


def test_critic_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        critic = Mlp((9, 8, 1), rng)
        s, target = rng.random(9), float(rng.normal())
        d = critic(s) - target
        loss = lambda: 0.5 * float(critic(s)[0] - target) ** 2
        worst = max(worst, rel_err(critic.gradients(s, d), numeric_param_grad(critic, loss)))
    assert worst < 1e-4


def test_zero_discount_target_is_reward():
    assert td_target(0.7, 123.0, 0.0) == 0.7
    rng = np.random.default_rng(2)
    net = Mlp((9, 10, 3), rng)
    s, s2 = rng.random(9), rng.random(9)
    q0 = net(s)[1]
    err = q_update(net, s, 1, 0.7, s2, 0.0, 0.1)
    assert err == pytest.approx(0.7 - q0)


def bandit(update, episodes=4000):
    """Two states, two actions, deterministic rewards, zero discount."""
    rng = np.random.default_rng(3)
    states = np.eye(9)[:2]
    rewards = np.array([[1.0, -1.0], [0.25, 0.5]])
    nets = (Mlp((9, 12, 2), rng), Mlp((9, 12, 2), rng))
    for i in range(episodes):
        s = int(rng.integers(2))
        a = int(rng.integers(2))
        update(nets, states[s], a, rewards[s, a], states[1 - s], i)
    return nets, states, rewards


@pytest.mark.parametrize("kind", ["Q", "SARSA", "DoubleQ"])
def test_bandit_converges_to_tabular_values(kind):
    def update(nets, s, a, r, s2, i):
        if kind == "Q":
            q_update(nets[0], s, a, r, s2, 0.0, 0.05)
        elif kind == "SARSA":
            sarsa_update(nets[0], s, a, r, s2, 0, 0.0, 0.05)
        else:
            double_q_update(nets, s, a, r, s2, 0.0, 0.05, i % 2)
    nets, states, rewards = bandit(update)
    for s in range(2):
        assert np.allclose(nets[0](states[s]), rewards[s], atol=0.02)


def test_discounted_q_matches_tabular_fixed_point():
    # state 0 -> state 1 -> state 0 ...; a single action; r = 1 in state 0, 0 in state 1
    rng = np.random.default_rng(4)
    net = Mlp((9, 12, 1), rng)
    states = np.eye(9)[:2]
    for i in range(20_000):
        s = i % 2
        q_update(net, states[s], 0, float(s == 0), states[1 - s], 0.5, 0.05)
    # Q0 = 1 + 0.5 Q1, Q1 = 0.5 Q0
    assert net(states[0])[0] == pytest.approx(4 / 3, abs=0.02)
    assert net(states[1])[0] == pytest.approx(2 / 3, abs=0.02)


def test_argmax_invariant_to_output_offset():
    ctl = Controller(RlConfig(algorithm="Q"), np.random.default_rng(5))
    s = np.random.default_rng(6).random(9)
    a = ctl.act(s).alpha
    ctl.nets["q"].params[3] += 17.0
    assert ctl.act(s).alpha == a


def test_cacla_actor_moves_only_on_positive_td():
    rng = np.random.default_rng(7)
    actor, critic = Mlp((9, 6, 2), rng), Mlp((9, 6, 1), rng)
    s, s2 = rng.random(9), rng.random(9)
    before = [p.copy() for p in actor.params]
    v = critic(s)[0]
    delta = cacla_update(actor, critic, s, np.array([0.3, 0.2]), float(v) - 5.0, s2, 0.0,
                         0.1, 0.1)
    assert delta < 0
    assert all(np.array_equal(a, b) for a, b in zip(actor.params, before))
    target = np.array([0.3, 0.2])
    dist0 = np.linalg.norm(actor(s) - target)
    delta = cacla_update(actor, critic, s, target, float(critic(s)[0]) + 5.0, s2, 0.0,
                         0.1, 0.01)
    assert delta > 0
    assert np.linalg.norm(actor(s) - target) < dist0


def test_cacla_zero_actor_rate_is_inert():
    rng = np.random.default_rng(8)
    actor, critic = Mlp((9, 6, 1), rng), Mlp((9, 6, 1), rng)
    before = [p.copy() for p in actor.params]
    cacla_update(actor, critic, rng.random(9), np.array([0.9]), 10.0, rng.random(9), 0.9,
                 0.1, 0.0)
    assert all(np.array_equal(a, b) for a, b in zip(actor.params, before))


def test_action_selection():
    rng = np.random.default_rng(9)
    ctl = Controller(RlConfig(algorithm="CACLA2"), rng)
    s = rng.random(9)
    a, b = ctl.act(s), ctl.act(s)
    assert a.alpha == b.alpha and a.beta == b.beta
    ctl.nets["actor"].params[3][:] = [1.7, -3.0]
    ctl.nets["actor"].params[2][:] = 0
    act = ctl.act(s)
    assert (act.alpha, act.beta) == (1.0, -1.0)
    sp = Controller(RlConfig(algorithm="CACLA1"), rng)
    assert sp.act(s).beta == 1.0
    q = Controller(RlConfig(algorithm="SARSA"), rng)
    assert q.act(s).beta == 1.0 and q.act(s).alpha in RlConfig().action_grid
    x = [Controller(RlConfig(), np.random.default_rng(1)).act(s, True, np.random.default_rng(2),
                                                           0.5).alpha for _ in range(2)]
    assert x[0] == x[1]


def test_exploration_schedules():
    cfg = RlConfig(algorithm="Q")
    assert cfg.exploration(0) == 1.0 and cfg.exploration(1) == pytest.approx(0.05)
    cfg = RlConfig()
    assert cfg.exploration(0) == 0.3 and cfg.exploration(1) == pytest.approx(0.02)
    assert cfg.exploration(0.5) == pytest.approx(0.16)
    with pytest.raises(ValueError):
        RlConfig(algorithm="QV")


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from(["Q", "DoubleQ", "SARSA", "CACLA1", "CACLA2"]))
def test_actions_always_in_domain(seed, alg):
    rng = np.random.default_rng(seed)
    ctl = Controller(RlConfig(algorithm=alg), rng)
    for p in ctl.nets.values():
        p.params[3] += rng.normal(0, 5, p.params[3].shape)
    act = ctl.act(rng.normal(0, 3, 9), True, rng, float(rng.random()))
    assert -1 <= act.alpha <= 1 and -1 <= act.beta <= 1


def test_fixed_pf_policy_reproduces_baseline():
    cfg = EnvConfig(seed=11)
    log = run_episode(SchedulerEnv(cfg, None, "raw"), FixedPolicy(), 800, learn=False,
                      explore=False, rng=np.random.default_rng(0))
    _, infos = run_baseline(SchedulerEnv(cfg, None, "raw"), "PF", 800)
    assert log.regions == [i.region.region for i in infos]
    assert np.array_equal(log.cell_throughput, [i.cell_throughput for i in infos])


def test_training_is_deterministic_and_round_trips(tmp_path):
    cfg = RlConfig(training_ttis=400)
    env = lambda: SchedulerEnv(EnvConfig(seed=2), None, "raw")
    p1, l1 = train_controller(env(), cfg, 4)
    p2, l2 = train_controller(env(), cfg, 4)
    assert np.array_equal(l1.alphas, l2.alphas) and np.array_equal(l1.rewards, l2.rewards)
    save_policy(tmp_path / "p.json", p1)
    back = load_policy(tmp_path / "p.json")
    s = np.random.default_rng(0).random(9)
    assert np.array_equal(back.act(s).raw, p1.act(s).raw)
    res = evaluate_controller(back, lambda i: SchedulerEnv(EnvConfig(seed=50 + i), None, "raw"),
                              2, 200)
    assert abs(res.p_uf + res.p_fa + res.p_of - 100) < 0.01
    text = eval_csv([("CACLA2", 3, 64, 4, res)])
    assert text.splitlines()[0] == "algorithm,M,K,seed,p_uf,p_fa,p_of,mean_cell_throughput"
