import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vulnassess.assessor import ModelParams
from vulnassess.errors import EmptyDataset, InvalidProbability, LengthMismatch, NonFiniteLoss
from vulnassess.synthetic import make_separable

from conftest import random_instance
from vulnassess.trainer import (LOG_FIELDS, BaselineState, RewardSpec, TrainerConfig,
                                accuracy, class_weights, forward, grad_check, loss_and_grads,
                                pg_loss, prepare, reward, total_loss, train, update_baseline,
                                write_log)

torch = pytest.importorskip("torch")


# -- weights and reward ----------------------------------------------------------------------

def test_class_weights_are_band_midpoints():
    bands = [(0.1, 3.9), (4.0, 6.9), (7.0, 8.9), (9.0, 10.0)]
    w = class_weights().weights
    assert w == tuple((lo + hi) / 2 for lo, hi in bands)
    assert w == (2.0, 5.45, 7.95, 9.5)
    assert all(a < b for a, b in zip(w, w[1:]))
    assert w[3] / w[0] == 4.75


def test_reward_spec_validation():
    with pytest.raises(ValueError):
        RewardSpec((1.0, 1.0, 2.0, 3.0))
    with pytest.raises(ValueError):
        RewardSpec((1.0, 2.0, 3.0))
    assert RewardSpec.uniform(2.0).weights == (2.0,) * 4


def test_reward_examples():
    spec = class_weights()
    assert reward(spec, 3, 3, 0.8) == 9.5 * 0.8
    assert reward(spec, 0, 2, 0.6) == -1.2
    for y in range(4):
        for y_hat in range(4):
            assert reward(spec, y, y_hat, 0.0) == 0.0
    for bad in (-0.1, 1.5, float("nan")):
        with pytest.raises(InvalidProbability):
            reward(spec, 0, 0, bad)


@given(st.integers(0, 3), st.integers(0, 3), st.floats(1e-6, 1.0))
def test_reward_sign_and_magnitude(y, y_hat, p):
    spec = class_weights()
    r = reward(spec, y, y_hat, p)
    assert (r > 0) == (y == y_hat)
    assert abs(r) == spec.weights[y] * p


# -- baseline, losses ------------------------------------------------------------------------------

def test_baseline_examples():
    assert update_baseline(BaselineState(1.0, 0.7), 2.0).b == 1.3
    assert update_baseline(BaselineState(1.0, 1.0), 5.0).b == 1.0
    assert update_baseline(BaselineState(1.0, 0.0), 5.0).b == 5.0
    assert update_baseline(BaselineState(1.0, 0.7), 2.0).alpha == 0.7
    with pytest.raises(ValueError):
        BaselineState(0.0, 1.5)


@given(st.floats(0.0, 0.99), st.floats(-10, 10), st.floats(-10, 10))
def test_baseline_converges_geometrically(alpha, b0, r):
    st_ = BaselineState(b0, alpha)
    for k in range(1, 30):
        st_ = update_baseline(st_, r)
        assert abs(st_.b - r) <= abs(b0 - r) * alpha ** k + 1e-9


def test_pg_loss_examples():
    assert abs(pg_loss([math.log(0.5)], [1.0], 0.0) - 0.693147) < 5e-7
    assert pg_loss([math.log(0.3), math.log(0.9)], [2.0, 2.0], 2.0) == 0.0
    assert abs(pg_loss([math.log(0.5)] * 2, [1.0, -1.0], 0.0)) < 1e-15
    with pytest.raises(LengthMismatch):
        pg_loss([0.0], [1.0, 2.0], 0.0)


def test_total_loss_examples():
    assert total_loss(1.0, 0.5, 2.0, 0.01).l_total == 1.52
    assert total_loss(1.0, 0.5, 7.0, 0.0).l_total == 1.5
    assert total_loss(0.0, 0.0, 0.0, 0.01).l_total == 0.0


def test_config_validation():
    with pytest.raises(ValueError):
        TrainerConfig(lambda_pg=-1)
    with pytest.raises(ValueError):
        TrainerConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainerConfig(optimizer="rmsprop")


# -- gradients ------------------------------------------------------------------------------------

def test_grad_check_random_and_zero():
    for seed in range(5):
        p, batch = random_instance(seed)
        assert grad_check(p, batch, lambda_pg=0.5, baseline=0.3) <= 1e-4
    p, batch = random_instance(9, zero=True)
    assert grad_check(p, batch, lambda_pg=0.5) <= 1e-4


def test_gradients_match_autograd():
    p, batch = random_instance(11)
    lam = 0.7
    _, probs = forward(p, batch)
    actions = probs.argmax(axis=1)
    adv = np.random.default_rng(0).normal(size=len(batch))
    bd, grads = loss_and_grads(p, batch, actions, adv, lam)

    D = p.dims[0]
    t = {k: torch.tensor(getattr(p, k), dtype=torch.float64, requires_grad=True)
         for k in ("s", "W", "b", "U")}
    Ps = torch.tensor(p.P[D:], dtype=torch.float64)
    base = torch.tensor(batch.base, dtype=torch.float64)
    h = torch.tanh(base + t["s"] @ Ps)
    logp = torch.log_softmax(h @ t["W"] + t["b"], dim=1)
    y = torch.tensor(batch.labels)
    rows = torch.arange(len(batch))
    l_a = -logp[rows, y].mean()
    l_pg = (-logp[rows, torch.tensor(actions)] * torch.tensor(adv)).mean()
    m = torch.tensor(np.flatnonzero(batch.has_ref))
    G = torch.tensor(batch.refs, dtype=torch.float64)[m]
    scores = h[m] @ t["U"] @ G.T
    l_s = -torch.log_softmax(scores, dim=1).diagonal().mean()
    total = l_a + l_s + lam * l_pg
    total.backward()
    assert abs(total.item() - bd.l_total) < 1e-12
    for k in t:
        assert np.allclose(grads[k], t[k].grad.numpy(), rtol=1e-9, atol=1e-12)


# -- training ----------------------------------------------------------------------------------------

def test_empty_dataset():
    with pytest.raises(EmptyDataset):
        train([], TrainerConfig(epochs=1))


def test_projection_never_changes():
    data = make_separable(40, seed=1)
    init = ModelParams.initialize(0, D=512, K=4, H=16)
    params, _ = train(data, TrainerConfig(epochs=3, learning_rate=0.1), init)
    assert params.P is init.P and np.array_equal(params.P, init.P)
    assert not np.array_equal(params.W, init.W)


def test_log_records_and_decomposition(tmp_path):
    data = make_separable(40, seed=2)
    cfg = TrainerConfig(epochs=2, learning_rate=0.1, batch_size=16)
    _, log = train(data, cfg, ModelParams.initialize(0, D=512, K=4, H=16))
    assert len(log) == 2 * 3
    for rec in log:
        assert set(rec) == set(LOG_FIELDS)
        assert rec["l_total"] == rec["l_assessment"] + rec["l_suggestion"] + cfg.lambda_pg * rec["l_pg"]
    path = tmp_path / "log.jsonl"
    write_log(log[:2], path)
    write_log(log[2:], path)  # append-only
    assert len(path.read_text().splitlines()) == len(log)


def test_baseline_uses_pre_update_value():
    data = make_separable(32, seed=3)
    cfg = TrainerConfig(epochs=1, batch_size=16, learning_rate=0.0, lambda_pg=1.0)
    init = ModelParams.initialize(0, D=256, K=4, H=8)
    _, log = train(data, cfg, init)
    b = 0.0
    for rec in log:
        b = cfg.alpha * b + (1 - cfg.alpha) * rec["mean_reward"]
        assert rec["baseline"] == b


def test_same_seed_same_log_and_seed_matters():
    data = make_separable(48, seed=4)
    cfg = TrainerConfig(epochs=3, learning_rate=0.1, action="sample")
    init = ModelParams.initialize(0, D=512, K=4, H=16)
    _, a = train(data, cfg, init)
    _, b = train(data, cfg, init)
    assert a == b
    _, c = train(data, TrainerConfig(epochs=3, learning_rate=0.1, action="sample", seed=1), init)
    assert a != c


def test_adam_learns():
    data = make_separable(80, seed=5)
    init = ModelParams.initialize(0, D=2048, K=4, H=32)
    params, _ = train(data, TrainerConfig(epochs=40, learning_rate=0.01, optimizer="adam"), init)
    assert accuracy(params, prepare(data, params)) >= 0.95


def test_non_finite_loss_aborts():
    data = make_separable(16, seed=6)
    init = ModelParams.initialize(0, D=128, K=4, H=8)
    init.W = np.full((8, 4), np.nan)
    with pytest.raises(NonFiniteLoss) as ei:
        train(data, TrainerConfig(epochs=1), init)
    assert ei.value.epoch == 0 and ei.value.batch == 0


def test_single_item_batches_equal_plain_cross_entropy():
    """lambda_pg = 0 and batches of one: the suggestion term vanishes and training
    reduces to softmax regression through the frozen encoder."""
    data = make_separable(24, seed=7)
    init = ModelParams.initialize(0, D=256, K=4, H=8)
    cfg = TrainerConfig(epochs=3, batch_size=1, lambda_pg=0.0, learning_rate=0.2, seed=5)
    _, log = train(data, cfg, init)
    assert all(rec["l_suggestion"] == 0.0 for rec in log)

    full = prepare(data, init)
    D = init.dims[0]
    s = torch.zeros(4, dtype=torch.float64, requires_grad=True)
    W = torch.zeros((8, 4), dtype=torch.float64, requires_grad=True)
    b = torch.zeros(4, dtype=torch.float64, requires_grad=True)
    Ps = torch.tensor(init.P[D:], dtype=torch.float64)
    base = torch.tensor(full.base, dtype=torch.float64)
    y = torch.tensor(full.labels)
    opt = torch.optim.SGD([s, W, b], lr=0.2)
    rng = np.random.default_rng(5)
    ref = []
    for _ in range(3):
        for i in rng.permutation(len(data)).tolist():
            opt.zero_grad()
            logits = torch.tanh(base[i:i + 1] + s @ Ps) @ W + b
            loss = torch.nn.functional.cross_entropy(logits, y[i:i + 1])
            loss.backward()
            opt.step()
            ref.append(loss.item())
    ours = [rec["l_assessment"] for rec in log]
    assert np.allclose(ours, ref, rtol=1e-10, atol=1e-12)


def test_policy_loss_trace_matches_manual_loop():
    from vulnassess.synthetic import random_policy_batches
    from vulnassess.trainer import policy_loss_trace
    probs, labels = random_policy_batches(5, 4, seed=2, margin=1.0)
    assert np.allclose(probs.sum(axis=-1), 1.0)
    spec = class_weights()
    st_ = BaselineState(0.0, 0.7)
    expected = []
    for p, y in zip(probs, labels):
        a = p.argmax(axis=1)
        ph = p[np.arange(4), a]
        r = [reward(spec, int(t), int(k), float(q)) for t, k, q in zip(y, a, ph)]
        expected.append(pg_loss(np.log(ph), r, st_.b))
        st_ = update_baseline(st_, float(np.mean(r)))
    assert policy_loss_trace(probs, labels).tolist() == expected
    plain = policy_loss_trace(probs, labels, use_baseline=False)
    assert plain[0] == expected[0]  # the first batch sees b = 0 either way


def test_constant_baseline_variance_identity():
    """Var L(b) = Var X - 2 b Cov(X, Y) + b^2 Var Y for X = mean(-log p * r), Y = mean(-log p)."""
    from vulnassess.synthetic import random_policy_batches
    probs, labels = random_policy_batches(300, 8, seed=4)
    spec = class_weights()
    X, Y = [], []
    for p, y in zip(probs, labels):
        a = p.argmax(axis=1)
        ph = p[np.arange(len(a)), a]
        r = np.array([reward(spec, int(t), int(k), float(q)) for t, k, q in zip(y, a, ph)])
        X.append(pg_loss(np.log(ph), r, 0.0))
        Y.append(float(np.mean(-np.log(ph))))
    X, Y = np.array(X), np.array(Y)
    c = np.cov(X, Y, bias=True)
    for b in (-2.0, -0.5, 0.7):
        direct = np.var(X - b * Y)
        assert abs(direct - (c[0, 0] - 2 * b * c[0, 1] + b * b * c[1, 1])) <= 1e-12
