"""Synthetic severity datasets with known class structure."""
import numpy as np

from .assessor import HybridPrompt

LONG_TAIL = (0.4, 0.3, 0.2, 0.1)


def _vocab(c, size):
    return [f"sev{c}_w{j}" for j in range(size)]


def _sample_text(rng, label, n_signal, n_noise, vocab_size, confusion):
    words = []
    for _ in range(n_signal):
        c = label
        if confusion and rng.random() < confusion:
            c = int(rng.integers(4))
        words.append(_vocab(c, vocab_size)[rng.integers(vocab_size)])
    words += [f"common_w{rng.integers(200)}" for _ in range(n_noise)]
    rng.shuffle(words)
    return " ".join(words)


def make_dataset(n, seed=0, fractions=(0.25, 0.25, 0.25, 0.25), n_signal=6,
                 n_noise=6, vocab_size=12, confusion=0.0):
    """``(HybridPrompt, label, reference)`` items.

    Each class owns a private vocabulary; ``confusion`` is the chance that a
    signal word is drawn from a random class instead, which makes classes
    overlap.  The reference suggestion is class specific so the suggestion
    head has something to learn.
    """
    rng = np.random.default_rng(seed)
    counts = np.floor(np.asarray(fractions) * n).astype(int)
    counts[0] += n - counts.sum()
    labels = np.repeat(np.arange(4), counts)
    rng.shuffle(labels)
    items = []
    for y in labels.tolist():
        code = _sample_text(rng, y, n_signal, n_noise, vocab_size, confusion)
        analysis = _sample_text(rng, y, n_signal // 2, n_noise // 2, vocab_size, confusion)
        ref = f"apply fix pattern {y} bounds check variant {rng.integers(3)}"
        items.append((HybridPrompt(code=code, analysis=analysis), y, ref))
    return items


def make_separable(n=200, seed=0):
    return make_dataset(n, seed)


def make_long_tail(n=400, seed=0, confusion=0.6):
    return make_dataset(n, seed, fractions=LONG_TAIL, confusion=confusion)


def random_policy_batches(n_batches, batch_size, seed=0, scale=1.0, margin=0.0):
    """Fixed random policies: ``(probabilities, true labels)`` per batch.

    Logits are ``scale * N(0, 1)`` plus ``margin`` on the true class, so
    ``margin = 0`` is an uninformative policy and a large margin mimics a
    confident, mostly correct one.  Labels follow :data:`LONG_TAIL`.
    """
    rng = np.random.default_rng(seed)
    labels = rng.choice(4, size=(n_batches, batch_size), p=LONG_TAIL)
    logits = rng.normal(size=(n_batches, batch_size, 4)) * scale
    logits += margin * np.eye(4)[labels]
    z = logits - logits.max(axis=-1, keepdims=True)
    probs = np.exp(z) / np.exp(z).sum(axis=-1, keepdims=True)
    return probs, labels
