"""Weighted-reward policy-gradient training of the hybrid-prompt classifier.

Per batch the total objective is

    L_total = L_assessment + L_suggestion + lambda_pg * L_pg

where ``L_assessment`` is cross-entropy on the severity label,
``L_suggestion`` an in-batch contrastive loss of the bilinear suggestion
scorer, and ``L_pg = -mean(log pi(a|s) * (r - b))``.  The reward ``r`` is
the predicted-class probability signed by correctness and scaled by the
weight of the true class; ``b`` is a momentum baseline over batch means.
"""
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .assessor import (N_CLASSES, ModelParams, project_features, prompt_tokens,
                       softmax, sparse_features, suggestion_vector)
from .errors import (EmptyDataset, InvalidProbability, LengthMismatch,
                     NonFiniteLoss)

# CVSS 3.0 qualitative rating bands: Low, Medium, High, Critical
CVSS_BANDS = ((0.1, 3.9), (4.0, 6.9), (7.0, 8.9), (9.0, 10.0))
TRAINABLE = ("s", "W", "b", "U")


@dataclass(frozen=True)
class RewardSpec:
    weights: tuple
    ordered: bool = True  # enforce Low < Medium < High < Critical

    def __post_init__(self):
        if len(self.weights) != N_CLASSES or any(w <= 0 for w in self.weights):
            raise ValueError("need four positive class weights")
        if self.ordered and any(a >= b for a, b in zip(self.weights, self.weights[1:])):
            raise ValueError("class weights must increase strictly with severity")

    @classmethod
    def uniform(cls, value=1.0):
        return cls((float(value),) * N_CLASSES, ordered=False)


def class_weights():
    """Midpoint of each CVSS 3.0 band: ``[2.0, 5.45, 7.95, 9.5]``."""
    return RewardSpec(tuple((lo + hi) / 2 for lo, hi in CVSS_BANDS))


def reward(spec, y, y_hat, p):
    if not (0.0 <= p <= 1.0):  # also rejects NaN
        raise InvalidProbability(f"probability {p!r} outside [0, 1]")
    w = spec.weights[y]
    return w * p if y_hat == y else -w * p


@dataclass(frozen=True)
class BaselineState:
    b: float = 0.0
    alpha: float = 0.7

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError("alpha must lie in [0, 1]")


def update_baseline(st, r_bar):
    return BaselineState(st.alpha * st.b + (1 - st.alpha) * r_bar, st.alpha)


def pg_loss(log_probs, rewards, b):
    if len(log_probs) != len(rewards):
        raise LengthMismatch(f"{len(log_probs)} log-probs vs {len(rewards)} rewards")
    if len(log_probs) == 0:
        return 0.0
    lp = np.asarray(log_probs, dtype=float)
    adv = np.asarray(rewards, dtype=float) - b
    return float(np.mean(-lp * adv))


@dataclass(frozen=True)
class LossBreakdown:
    l_assessment: float
    l_suggestion: float
    l_pg: float
    l_total: float


def total_loss(l_a, l_s, l_pg, lambda_pg):
    return LossBreakdown(l_a, l_s, l_pg, l_a + l_s + lambda_pg * l_pg)


@dataclass
class TrainerConfig:
    lambda_pg: float = 0.01
    alpha: float = 0.7
    batch_size: int = 16
    epochs: int = 100
    learning_rate: float = 5e-5
    seed: int = 0
    optimizer: str = "sgd"        # or "adam"
    action: str = "argmax"        # or "sample"
    reward_spec: RewardSpec = field(default_factory=class_weights)
    use_baseline: bool = True

    def __post_init__(self):
        if self.lambda_pg < 0:
            raise ValueError("lambda_pg must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.action not in ("argmax", "sample"):
            raise ValueError(f"unknown action mode {self.action!r}")


# -- batched forward/backward -----------------------------------------------------

@dataclass
class Batch:
    """Precomputed, parameter-independent inputs for a set of examples."""
    base: np.ndarray      # (n, H) frozen projection of hashed features
    labels: np.ndarray    # (n,)
    refs: np.ndarray      # (n, H) fixed suggestion embeddings
    has_ref: np.ndarray   # (n,) bool

    def take(self, idx):
        return Batch(self.base[idx], self.labels[idx], self.refs[idx], self.has_ref[idx])

    def __len__(self):
        return len(self.labels)


def prepare(data, params):
    """Turn ``(HybridPrompt, label, reference or None)`` items into a :class:`Batch`."""
    D, _, H = params.dims
    n = len(data)
    base = np.zeros((n, H))
    refs = np.zeros((n, H))
    has_ref = np.zeros(n, dtype=bool)
    labels = np.zeros(n, dtype=np.int64)
    for i, (hp, label, ref) in enumerate(data):
        if not 0 <= int(label) < N_CLASSES:
            raise ValueError(f"label {label!r} outside 0..3")
        idx, vals = sparse_features(prompt_tokens(hp), D, params.seed)
        base[i] = project_features(idx, vals, params)
        labels[i] = int(label)
        if ref:
            refs[i] = suggestion_vector(ref, params)
            has_ref[i] = True
    return Batch(base, labels, refs, has_ref)


def log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def forward(params, batch):
    """Hidden states and class probabilities for ``batch``."""
    D = params.dims[0]
    h = np.tanh(batch.base + params.s @ params.P[D:])
    return h, softmax(h @ params.W + params.b)


def choose_actions(probs, mode="argmax", rng=None):
    if mode == "argmax":
        return probs.argmax(axis=1)
    cum = probs.cumsum(axis=1)
    u = rng.random(len(probs))[:, None]
    return np.minimum((u > cum).sum(axis=1), N_CLASSES - 1)


def _loss_terms(params, batch, actions, advantages):
    """Unrounded loss terms plus the intermediates the backward pass needs."""
    D = params.dims[0]
    n = len(batch)
    h = np.tanh(batch.base + params.s @ params.P[D:])
    logp = log_softmax(h @ params.W + params.b)
    rows = np.arange(n)
    l_a = -np.mean(logp[rows, batch.labels])
    l_pg = np.mean(-logp[rows, actions] * advantages)
    m_idx = np.flatnonzero(batch.has_ref)
    logq = None
    l_s = 0.0
    if len(m_idx):
        logq = log_softmax(h[m_idx] @ params.U @ batch.refs[m_idx].T)
        l_s = -np.mean(np.diag(logq))
    return l_a, l_s, l_pg, (h, logp, m_idx, logq)


def loss_and_grads(params, batch, actions, advantages, lambda_pg, need_grads=True):
    """Loss breakdown and gradients w.r.t. ``s, W, b, U`` with actions/advantages held fixed."""
    D = params.dims[0]
    Ps = params.P[D:]
    n = len(batch)
    rows = np.arange(n)
    l_a, l_s, l_pg, (h, logp, m_idx, logq) = _loss_terms(params, batch, actions, advantages)
    l_a, l_s, l_pg = float(l_a), float(l_s), float(l_pg)
    p = np.exp(logp)
    m = len(m_idx)
    if m:
        Hm, Gm = h[m_idx], batch.refs[m_idx]
        q = np.exp(logq)
    breakdown = total_loss(l_a, l_s, l_pg, lambda_pg)
    if not need_grads:
        return breakdown, None

    onehot_y = np.zeros_like(p)
    onehot_y[rows, batch.labels] = 1.0
    onehot_a = np.zeros_like(p)
    onehot_a[rows, actions] = 1.0
    dlogits = (p - onehot_y) / n - lambda_pg * (advantages / n)[:, None] * (onehot_a - p)
    grads = {"W": h.T @ dlogits, "b": dlogits.sum(axis=0)}
    dh = dlogits @ params.W.T
    if m:
        dS = (q - np.eye(m)) / m
        grads["U"] = Hm.T @ dS @ Gm
        dh[m_idx] += dS @ Gm @ params.U.T
    else:
        grads["U"] = np.zeros_like(params.U)
    dz = dh * (1.0 - h * h)
    grads["s"] = Ps @ dz.sum(axis=0)
    return breakdown, grads


class _Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m, self.v = {}, {}

    def step(self, params, grads):
        self.t += 1
        for k in TRAINABLE:
            g = grads[k]
            m = self.m.get(k, 0.0) * self.beta1 + (1 - self.beta1) * g
            v = self.v.get(k, 0.0) * self.beta2 + (1 - self.beta2) * g * g
            self.m[k], self.v[k] = m, v
            mhat = m / (1 - self.beta1 ** self.t)
            vhat = v / (1 - self.beta2 ** self.t)
            setattr(params, k, getattr(params, k) - self.lr * mhat / (np.sqrt(vhat) + self.eps))


class _Sgd:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        for k in TRAINABLE:
            setattr(params, k, getattr(params, k) - self.lr * grads[k])


def train(data, cfg=None, init=None, prepared=None):
    """Train ``s, W, b, U``; returns ``(params, log)``.

    ``data`` holds ``(HybridPrompt, label, reference suggestion)`` items.
    ``prepared`` may pass a :class:`Batch` built by :func:`prepare` to skip
    re-hashing.  Each log record is a dict with the keys of
    :data:`LOG_FIELDS`.
    """
    cfg = cfg or TrainerConfig()
    if prepared is None and not data:
        raise EmptyDataset("no training examples")
    params = (init or ModelParams.initialize(cfg.seed)).copy()
    params.check()
    full = prepared if prepared is not None else prepare(data, params)
    if len(full) == 0:
        raise EmptyDataset("no training examples")
    rng = np.random.default_rng(cfg.seed)
    action_rng = np.random.default_rng([cfg.seed, 1])
    opt = _Adam(cfg.learning_rate) if cfg.optimizer == "adam" else _Sgd(cfg.learning_rate)
    baseline = BaselineState(0.0, cfg.alpha)
    log = []
    n = len(full)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for bno, start in enumerate(range(0, n, cfg.batch_size)):
            batch = full.take(order[start:start + cfg.batch_size])
            _, probs = forward(params, batch)
            if not np.all(np.isfinite(probs)):
                zero = np.zeros(len(batch))
                bd, _ = loss_and_grads(params, batch, zero.astype(int), zero,
                                       cfg.lambda_pg, need_grads=False)
                raise NonFiniteLoss(epoch, bno, bd)
            actions = choose_actions(probs, cfg.action, action_rng)
            p_hat = probs[np.arange(len(batch)), actions]
            rewards = np.array([reward(cfg.reward_spec, int(y), int(a), float(p))
                                for y, a, p in zip(batch.labels, actions, p_hat)])
            b_old = baseline.b if cfg.use_baseline else 0.0
            breakdown, grads = loss_and_grads(params, batch, actions, rewards - b_old,
                                              cfg.lambda_pg)
            if not all(math.isfinite(v) for v in asdict(breakdown).values()):
                raise NonFiniteLoss(epoch, bno, breakdown)
            r_bar = float(rewards.mean())
            if cfg.use_baseline:
                baseline = update_baseline(baseline, r_bar)
            opt.step(params, grads)
            log.append({"epoch": epoch, "batch": bno, **asdict(breakdown),
                        "mean_reward": r_bar, "baseline": baseline.b})
    return params, log


def policy_loss_trace(probs, labels, spec=None, alpha=0.7, use_baseline=True):
    """Per-batch ``L_pg`` of a fixed policy with argmax actions.

    ``probs`` is ``(n_batches, batch, 4)`` and ``labels`` ``(n_batches, batch)``.
    Each batch uses the pre-update baseline, which then absorbs the batch
    mean reward, as in :func:`train`.
    """
    spec = spec or class_weights()
    st = BaselineState(0.0, alpha)
    out = []
    for p, y in zip(probs, labels):
        a = p.argmax(axis=1)
        p_hat = p[np.arange(len(a)), a]
        r = [reward(spec, int(t), int(k), float(q)) for t, k, q in zip(y, a, p_hat)]
        out.append(pg_loss(np.log(p_hat), r, st.b if use_baseline else 0.0))
        if use_baseline:
            st = update_baseline(st, float(np.mean(r)))
    return np.array(out)


LOG_FIELDS = ("epoch", "batch", "l_assessment", "l_suggestion", "l_pg", "l_total",
              "mean_reward", "baseline")


def write_log(log, path):
    with open(path, "a", encoding="utf-8") as fh:
        for rec in log:
            fh.write(json.dumps({k: rec[k] for k in LOG_FIELDS}) + "\n")


def accuracy(params, batch):
    _, p = forward(params, batch)
    return float(np.mean(p.argmax(axis=1) == batch.labels))


# -- verification -----------------------------------------------------------------

def grad_check(params, batch, lambda_pg=0.01, eps=1e-5, spec=None, baseline=0.0,
               floor=1e-7):
    """Max relative error between analytic and central-difference gradients.

    Actions and advantages are fixed at the unperturbed point, matching how
    the policy term is differentiated during training.  ``P`` is never
    perturbed.  The relative error of an entry is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    if not isinstance(batch, Batch):
        batch = prepare(batch, params)
    spec = spec or class_weights()
    _, probs = forward(params, batch)
    actions = probs.argmax(axis=1)
    p_hat = probs[np.arange(len(batch)), actions]
    adv = np.array([reward(spec, int(y), int(a), float(p))
                    for y, a, p in zip(batch.labels, actions, p_hat)]) - baseline
    _, grads = loss_and_grads(params, batch, actions, adv, lambda_pg)
    # perturbed losses are evaluated in extended precision so that rounding in
    # the difference quotient stays far below the gradients being checked
    ext = np.longdouble
    work = ModelParams(P=params.P.astype(ext), s=params.s.astype(ext), W=params.W.astype(ext),
                       b=params.b.astype(ext), U=params.U.astype(ext), seed=params.seed)
    xb = Batch(batch.base.astype(ext), batch.labels, batch.refs.astype(ext), batch.has_ref)
    xadv = adv.astype(ext)
    lam = ext(lambda_pg)
    step = ext(eps)

    def total():
        l_a, l_s, l_pg, _ = _loss_terms(work, xb, actions, xadv)
        return l_a + l_s + lam * l_pg

    worst = 0.0
    for name in TRAINABLE:
        flat = getattr(work, name).reshape(-1)
        g = grads[name].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = total()
            flat[k] = orig - step
            down = total()
            flat[k] = orig
            num = float((up - down) / (2 * step))
            err = abs(g[k] - num) / max(abs(g[k]), abs(num), floor)
            worst = max(worst, err)
    return worst
