import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import cellfree.autodiff as ad
from cellfree.autodiff import Tensor
from cellfree.config import desk_config
from cellfree.pilot import labels_to_matrix, psi
from cellfree.sim import equal_power, evaluate_frame
from cellfree.training import (TrainConfig, TrainingDiverged, build_policy, evaluate_policy,
                               fixed_assignment_eval, generate_dataset, load_policy, loss,
                               penalty, relaxed_frontend, save_policy, soft_assignment_sharpness,
                               soft_net_se, soft_psi, train, train_dts, train_sts)

CFG = desk_config(N_T=2)


@pytest.fixture(scope="module")
def data():
    return generate_dataset(CFG, 6, 123)


def test_dataset_deterministic_and_indexable(data):
    again = generate_dataset(CFG, 6, 123)
    assert np.array_equal(data.H, again.H) and np.array_equal(data.beta, again.beta)
    assert len(data[[0, 2]]) == 2
    sample = data[1]
    assert np.array_equal(sample.channels().H, data.H[1])
    with pytest.raises(ValueError):
        generate_dataset(CFG, 0, 1)


def test_dataset_samples_differ(data):
    assert not np.array_equal(data.beta[0], data.beta[1])


@given(st.lists(st.integers(0, 5), min_size=6, max_size=6))
@settings(max_examples=30, deadline=None)
def test_soft_psi_binary_matches_count(labels):
    X = labels_to_matrix(labels, 6)
    assert soft_psi(X[None]).data[0] == psi(X) == len(set(labels))


@given(st.lists(st.integers(0, 5), min_size=6, max_size=6), st.integers(0, 1000))
@settings(max_examples=15, deadline=None)
def test_relaxation_matches_simulator(data, labels, seed):
    X = labels_to_matrix(labels, 6)
    b = seed % len(data)
    P = np.random.default_rng(seed).uniform(size=(3, 6)) * data.A[b] * CFG.P_max / 6
    soft = soft_net_se(X[None], P[None], data[[b]], CFG).data[0]
    ref = evaluate_frame(X, data[b].channels(), CFG, power=P).etas
    assert np.max(np.abs(soft - ref)) <= 1e-12


def test_relaxation_fixed_tau_matches_simulator(data):
    X = labels_to_matrix([0, 0, 1, 1, 2, 2], 6)
    P = equal_power(data.A[0], CFG.P_max)
    soft = soft_net_se(X[None], P[None], data[[0]], CFG, tau_p=5).data[0]
    ref = evaluate_frame(X, data[0].channels(), CFG, power=P, tau_p=5).etas
    assert np.max(np.abs(soft - ref)) <= 1e-12


def test_overhead_clamped_when_soft_count_exceeds_frame(data):
    cfg = desk_config(N_T=2, tau_c=4)
    state = relaxed_frontend(np.eye(6)[None], data[[0]], cfg)
    assert state.clamped[0] and state.overhead.data[0] == 0.0


def test_soft_net_se_gradient_matches_finite_differences(data):
    rng = np.random.default_rng(0)
    logits = rng.standard_normal((1, 6, 6))
    X = Tensor(np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True), requires_grad=True)
    P = equal_power(data.A[0], CFG.P_max)[None]
    fn = lambda: ad.tsum(soft_net_se(X, P, data[[0]], CFG))
    fn().backward()
    analytic = X.grad.copy()
    h = 1e-5
    for g, k in [(0, 0), (3, 2), (5, 5)]:
        orig = X.data[0, g, k]
        X.data[0, g, k] = orig + h
        up = fn().data
        X.data[0, g, k] = orig - h
        down = fn().data
        X.data[0, g, k] = orig
        numeric = (up - down) / (2 * h)
        assert abs(analytic[0, g, k] - numeric) <= 1e-3 * max(abs(numeric), 1e-8)


def test_penalty_vanishes_at_binary():
    X = labels_to_matrix([0, 1, 1])[None]
    c = 1e-6
    assert penalty(X).data[0] == pytest.approx(9 * np.log(c) * np.log1p(-c), rel=1e-6)
    half = np.full((1, 2, 2), 0.5)
    assert penalty(half).data[0] == pytest.approx(4 * np.log(0.5) ** 2)


def test_loss_value_and_divergence():
    eta = np.array([[2.0, 4.0], [6.0, 8.0]])
    X = np.full((2, 2, 2), 0.5)
    expect = -np.mean([3.0 - 0.2 * 4 * np.log(0.5) ** 2, 7.0 - 0.2 * 4 * np.log(0.5) ** 2])
    assert loss(eta, X).data == pytest.approx(expect)
    with pytest.raises(TrainingDiverged):
        loss(np.array([[np.nan]]), np.ones((1, 1, 1)))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(variant="joint").validate()
    with pytest.raises(ValueError):
        TrainConfig(batch_size=1).validate()
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"epoch": 3})
    tc = TrainConfig(epochs=3, fixed_tau=2)
    assert TrainConfig.from_dict(tc.to_dict()) == tc


def test_policy_parameter_groups():
    assert all(k.startswith("pilot/") for k in build_policy(TrainConfig(variant="sts")).parameters())
    keys = build_policy(TrainConfig(variant="dts")).parameters()
    assert any(k.startswith("power/") for k in keys)


def test_one_step_updates_both_models(data):
    tc = TrainConfig(variant="dts", n_train=6, batch_size=6, epochs=1, pilot_widths=[4, 1],
                     power_widths=[4, 2])
    before = {k: v.data.copy() for k, v in build_policy(tc).parameters().items()}
    after = train(CFG, tc, data=data).parameters()
    changed = {k.split("/")[0] for k, v in after.items() if not np.array_equal(v.data, before[k])}
    assert changed == {"pilot", "power"}


def test_gradient_reaches_lambda_weights(data):
    policy = build_policy(TrainConfig(variant="sts", pilot_widths=[4, 2]))
    X, _, eta, _ = policy.forward(data[[0, 1]], CFG, np.random.default_rng(0), training=True)
    loss(eta, X).backward()
    assert np.any(policy.pilot.parameters()["1/Q_PS_1"].grad != 0)


def test_short_training_improves_loss(data):
    tc = TrainConfig(variant="sts", n_train=6, batch_size=3, epochs=25, lr=0.02, seed=1)
    policy = train_sts(CFG, tc, data=data)
    losses = [r["loss"] for r in policy.curve]
    assert len(losses) == 50
    assert np.mean(losses[-6:]) < np.mean(losses[:6])


def test_train_wrappers_check_variant():
    with pytest.raises(ValueError):
        train_sts(CFG, TrainConfig(variant="dts"))
    with pytest.raises(ValueError):
        train_dts(CFG, TrainConfig(variant="sts"))


def test_curve_written(tmp_path, data):
    path = tmp_path / "curve.csv"
    train(CFG, TrainConfig(n_train=6, batch_size=3, epochs=1), data=data, curve_path=path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,step,loss,net_se,tau" and len(lines) == 3


@pytest.mark.parametrize("variant", ["sts", "dts"])
def test_evaluate_policy_and_checkpoint(tmp_path, data, variant):
    tc = TrainConfig(variant=variant, n_train=6, batch_size=3, epochs=1)
    policy = train(CFG, tc, data=data)
    res = evaluate_policy(policy, CFG, data, seed=3)
    assert res.eta_bar.shape == (6,) and np.all(res.eta_bar >= 0)
    assert np.all((res.tau_p >= 1) & (res.tau_p <= 6))
    for X in res.assignments:
        assert np.array_equal(X.sum(axis=0), np.ones(6))
    for P in res.powers:
        assert np.all(np.asarray(P).sum(axis=-1) <= CFG.P_max * (1 + 1e-12))
    path = tmp_path / "policy.json"
    save_policy(path, policy, CFG)
    loaded, meta = load_policy(path)
    assert meta["system"]["K"] == 6
    again = evaluate_policy(loaded, CFG, data, seed=3)
    assert np.array_equal(again.eta_bar, res.eta_bar)
    assert 0.0 <= soft_assignment_sharpness(policy, CFG, data) <= 1.0


def test_fixed_tau_policy_uses_fixed_length(data):
    tc = TrainConfig(variant="sts", n_train=6, batch_size=3, epochs=1, fixed_tau=2)
    policy = train(CFG, tc, data=data)
    res = evaluate_policy(policy, CFG, data)
    assert np.all(res.tau_p == 2)
    assert all(X.shape[0] == 2 for X in res.assignments)


def test_fixed_assignment_eval(data):
    etas = fixed_assignment_eval(np.eye(6), CFG, data)
    assert etas.shape == (6,)
    assert etas[0] == evaluate_frame(np.eye(6), data[0].channels(), CFG).eta_bar
