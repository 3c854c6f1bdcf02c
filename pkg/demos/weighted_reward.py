"""Critical-class recall on a long-tailed synthetic set with severity-weighted
rewards versus a uniform reward of the same mean weight.

Five seeds, default model sizes, about half a minute on a laptop CPU.
Run from the repository root:  python3 demos/weighted_reward.py
"""
import numpy as np

from vulnassess.assessor import ModelParams
from vulnassess.synthetic import make_long_tail
from vulnassess.trainer import RewardSpec, TrainerConfig, class_weights, forward, prepare, train

weights = class_weights()
uniform = RewardSpec.uniform(sum(weights.weights) / 4)
print("class weights", weights.weights, "uniform", uniform.weights[0])


def critical_recall(params, batch):
    _, p = forward(params, batch)
    crit = batch.labels == 3
    return float(np.mean(p.argmax(axis=1)[crit] == 3))


rows = []
for seed in range(5):
    init = ModelParams.initialize(seed)
    tr = prepare(make_long_tail(400, seed=seed), init)
    te = prepare(make_long_tail(400, seed=1000 + seed), init)
    got = []
    for spec in (weights, uniform):
        cfg = TrainerConfig(epochs=30, learning_rate=0.1, lambda_pg=0.5, seed=seed,
                            reward_spec=spec)
        params, _ = train(None, cfg, init, prepared=tr)
        got.append(critical_recall(params, te))
    rows.append(got)
    print(f"seed {seed}: weighted {got[0]:.3f}  uniform {got[1]:.3f}")

mean = np.mean(rows, axis=0)
print(f"mean:   weighted {mean[0]:.3f}  uniform {mean[1]:.3f}")
