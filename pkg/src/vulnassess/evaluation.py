"""Severity classification metrics and suggestion-quality text metrics.

Precision, recall, F1 and AUC are macro averages.  Text metrics work on
lowercased ``\\w+`` / punctuation tokens.  METEOR uses exact and Porter-stem
matching only (no synonym stage); ROUGE-L uses beta = 1.2.
"""
import math
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateLabels, InvalidProbability, LengthMismatch

N_CLASSES = 4
ROUGE_BETA = 1.2
MIN_CWE_SAMPLES = 10
TEXT_METRIC_NOTE = ("BLEU-4 add-one smoothing on zero n-gram matches; "
                    f"ROUGE-L F-measure with beta={ROUGE_BETA}; "
                    "METEOR exact+stem matching, no synonyms")


@dataclass
class PredictionSet:
    labels: np.ndarray         # (n,) true labels
    distributions: np.ndarray  # (n, 4)

    @classmethod
    def from_items(cls, items):
        items = list(items)
        labels = np.array([int(y) for y, _ in items], dtype=int)
        dists = np.array([list(map(float, d)) for _, d in items], dtype=float).reshape(len(items), -1)
        return cls.checked(labels, dists)

    @classmethod
    def checked(cls, labels, distributions, tol=1e-9):
        labels = np.asarray(labels, dtype=int)
        dists = np.asarray(distributions, dtype=float)
        if dists.ndim != 2 or dists.shape[1] != N_CLASSES:
            raise InvalidProbability(f"distributions must have shape (n, {N_CLASSES})")
        if len(labels) != len(dists):
            raise LengthMismatch(f"{len(labels)} labels vs {len(dists)} distributions")
        if np.any((labels < 0) | (labels >= N_CLASSES)):
            raise InvalidProbability("labels must lie in 0..3")
        if len(dists) and (np.any(dists < 0) or np.any(np.abs(dists.sum(axis=1) - 1.0) > tol)):
            raise InvalidProbability("every distribution must be non-negative and sum to 1")
        return cls(labels, dists)

    def predictions(self):
        return np.argmax(self.distributions, axis=1) if len(self.labels) else np.zeros(0, int)


@dataclass
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricReport:
    auc: float | None
    precision: float
    recall: float
    f1: float
    per_class: list
    per_cwe: dict = field(default_factory=dict)

    def to_dict(self, scale=1.0):
        def sc(v):
            return None if v is None else v * scale
        return {"auc": sc(self.auc), "precision": sc(self.precision),
                "recall": sc(self.recall), "f1": sc(self.f1),
                "per_class": [{"label": k, "precision": sc(c.precision), "recall": sc(c.recall),
                               "f1": sc(c.f1), "support": c.support}
                              for k, c in enumerate(self.per_class)],
                "per_cwe": {k: sc(v) for k, v in sorted(self.per_cwe.items())}}


def f1_score(p, r):
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


# -- AUC -------------------------------------------------------------------------

def binary_auc(scores, positive):
    """Mann-Whitney AUC with midranks for ties."""
    scores = np.asarray(scores, dtype=float)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("binary AUC needs positives and negatives")
    ranks = rankdata(scores)  # average ranks on ties
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_ovr(p):
    """Macro one-vs-rest AUC over classes that have both positives and negatives."""
    if len(set(p.labels.tolist())) < 2:
        raise DegenerateLabels("AUC needs at least two distinct true labels")
    aucs = []
    for c in range(N_CLASSES):
        pos = p.labels == c
        if pos.any() and not pos.all():
            aucs.append(binary_auc(p.distributions[:, c], pos))
    return float(np.mean(aucs))


# -- precision / recall / F1 ---------------------------------------------------------

def confusion_matrix(labels, preds, n=N_CLASSES):
    m = np.zeros((n, n), dtype=int)
    np.add.at(m, (np.asarray(labels, int), np.asarray(preds, int)), 1)
    return m


def scores_from_confusion(m):
    """Per-class scores and the set of classes whose scores are defined.

    A class counts as defined when it occurs as a true label or a prediction;
    0/0 precision or recall is taken as 0.
    """
    per_class, defined = [], []
    for c in range(m.shape[0]):
        tp = m[c, c]
        pred_c = m[:, c].sum()
        true_c = m[c, :].sum()
        p = tp / pred_c if pred_c else 0.0
        r = tp / true_c if true_c else 0.0
        per_class.append(ClassScores(float(p), float(r), f1_score(float(p), float(r)), int(true_c)))
        if pred_c or true_c:
            defined.append(c)
    return per_class, defined


def _macro(per_class, defined, attr):
    if not defined:
        return 0.0
    return float(np.mean([getattr(per_class[c], attr) for c in defined]))


def report_from_confusion(m, auc=None):
    per_class, defined = scores_from_confusion(np.asarray(m))
    return MetricReport(auc=auc, precision=_macro(per_class, defined, "precision"),
                        recall=_macro(per_class, defined, "recall"),
                        f1=_macro(per_class, defined, "f1"), per_class=per_class)


def prf_macro(p):
    return report_from_confusion(confusion_matrix(p.labels, p.predictions()))


def _as_labels(preds):
    arr = np.asarray(preds)
    return np.argmax(arr, axis=1) if arr.ndim == 2 else arr.astype(int)


def f1_per_cwe(preds, labels, cwe_ids, min_samples=MIN_CWE_SAMPLES):
    """Macro F1 within each CWE that has at least ``min_samples`` records."""
    preds = _as_labels(preds)
    labels = np.asarray(labels, dtype=int)
    if not (len(preds) == len(labels) == len(cwe_ids)):
        raise LengthMismatch("preds, labels and cwe_ids must be parallel")
    groups = {}
    for k, cwe in enumerate(cwe_ids):
        if cwe:
            groups.setdefault(cwe, []).append(k)
    out = {}
    for cwe, idx in sorted(groups.items()):
        if len(idx) < min_samples:
            continue
        out[cwe] = report_from_confusion(confusion_matrix(labels[idx], preds[idx])).f1
    return out


def evaluate(p, cwe_ids=None):
    """Full report; AUC is ``None`` when fewer than two true classes are present."""
    rep = prf_macro(p)
    try:
        rep.auc = auc_ovr(p)
    except DegenerateLabels:
        rep.auc = None
    if cwe_ids is not None:
        rep.per_cwe = f1_per_cwe(p.predictions(), p.labels, cwe_ids)
    return rep


def report_table(rep):
    def pct(v):
        return "   n/a" if v is None else f"{100 * v:6.1f}"
    lines = [f"{'AUC':>6} {'Precision':>9} {'Recall':>6} {'F1-score':>8}",
             f"{pct(rep.auc)} {pct(rep.precision):>9} {pct(rep.recall)} {pct(rep.f1):>8}",
             "",
             f"{'class':<6}{'P':>7}{'R':>7}{'F1':>7}{'support':>9}"]
    for k, c in enumerate(rep.per_class):
        lines.append(f"{k:<6}{pct(c.precision):>7}{pct(c.recall):>7}{pct(c.f1):>7}{c.support:>9}")
    if rep.per_cwe:
        lines += ["", f"{'CWE':<12}{'F1':>7}"]
        lines += [f"{cwe:<12}{pct(v):>7}" for cwe, v in sorted(rep.per_cwe.items())]
    return "\n".join(lines)


# -- text metrics -----------------------------------------------------------------------

_WORD_RE = re.compile(r"\w+|[^\w\s]")


def text_tokens(text):
    return _WORD_RE.findall(text.lower())


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidate, references):
    """Sentence BLEU-4.

    Modified (clipped) precisions for n = 1..4; an order with no matching
    n-gram uses ``1 / (total + 1)`` instead of zero.  The brevity penalty uses
    the reference length closest to the candidate (shorter on ties).
    """
    cand = text_tokens(candidate)
    refs = [text_tokens(r) for r in ([references] if isinstance(references, str) else references)]
    if not cand or not refs:
        return 0.0
    log_p = 0.0
    for n in range(1, 5):
        counts = _ngrams(cand, n)
        total = sum(counts.values())
        max_ref = Counter()
        for r in refs:
            for g, k in _ngrams(r, n).items():
                max_ref[g] = max(max_ref[g], k)
        matched = sum(min(k, max_ref[g]) for g, k in counts.items())
        p_n = matched / total if matched else 1.0 / (total + 1)
        log_p += math.log(p_n) / 4
    c = len(cand)
    r = min((len(t) for t in refs), key=lambda L: (abs(L - c), L))
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return bp * math.exp(log_p)


def lcs_length(a, b):
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference, beta=ROUGE_BETA):
    cand, ref = text_tokens(candidate), text_tokens(reference)
    lcs = lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(cand), lcs / len(ref)
    b2 = beta * beta
    return (1 + b2) * p * r / (r + b2 * p)


_stemmer = None


def _stem(word):
    global _stemmer
    if _stemmer is None:
        from nltk.stem.porter import PorterStemmer
        _stemmer = PorterStemmer()
    return _stemmer.stem(word)


def meteor_alignment(cand, ref):
    """Greedy one-to-one alignment: exact matches first, then stem matches.

    Returns sorted ``(candidate index, reference index)`` pairs.
    """
    pairs = {}
    used = set()
    for stage in (lambda w: w, _stem):
        ref_forms = [stage(w) for w in ref]
        for i, w in enumerate(cand):
            if i in pairs:
                continue
            form = stage(w)
            for j, rf in enumerate(ref_forms):
                if j not in used and rf == form:
                    pairs[i] = j
                    used.add(j)
                    break
    return sorted(pairs.items())


def count_chunks(alignment):
    chunks = 0
    prev = None
    for i, j in alignment:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor(candidate, reference):
    cand, ref = text_tokens(candidate), text_tokens(reference)
    align = meteor_alignment(cand, ref)
    m = len(align)
    if m == 0:
        return 0.0
    p, r = m / len(cand), m / len(ref)
    fmean = 10 * p * r / (r + 9 * p)
    penalty = 0.5 * (count_chunks(align) / m) ** 3
    return fmean * (1 - penalty)


def text_report(candidates, references):
    """Mean BLEU-4 / ROUGE-L / METEOR over parallel candidate/reference lists."""
    if len(candidates) != len(references):
        raise LengthMismatch("candidates and references must be parallel")
    n = len(candidates)
    rows = [(bleu4(c, [r]), rouge_l(c, r), meteor(c, r)) for c, r in zip(candidates, references)]
    mean = [math.fsum(col) / n if n else 0.0 for col in zip(*rows)] if rows else [0.0] * 3
    return {"bleu4": mean[0], "rouge_l": mean[1], "meteor": mean[2], "n": n,
            "note": TEXT_METRIC_NOTE}
