"""Hybrid-prompt severity classifier and retrieval suggestion head.

The model is a desk-scale stand-in for a prompt-tuned code model: hashed
token n-grams of the hard prompt are concatenated with a learnable soft
prompt and pushed through a frozen random projection,

    h = tanh(P^T [x ; s])

followed by a linear severity head ``softmax(W^T h + b)`` and a bilinear
suggestion scorer ``h^T U g`` over a bank of reference suggestions.  Only
``s``, ``W``, ``b`` and ``U`` are trainable.
"""
import hashlib
import json
import re
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import CheckpointError, EmptyBank, VulnAssessError
from .vir import Vir, render_vir

CODE_HEADER = "The code snippet :"
ANALYSIS_HEADER = "The vulnerability analysis :"
SOFT_SLOT = "[SOFT]"
ANSWER_SLOT = "[Z]"
MAX_TOKENS = 4096
N_CLASSES = 4
CHECKPOINT_FORMAT = "vulnassess-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class HybridPrompt:
    code: str       # X: rendered IDG
    analysis: str   # Y: canonical VIR text
    soft_slot: int = 0
    answer_slot: str = ANSWER_SLOT

    def text(self):
        return f"{CODE_HEADER} {self.code} {ANALYSIS_HEADER} {self.analysis}"

    def template(self):
        return f"{self.text()} {SOFT_SLOT} {self.answer_slot}"


def assemble_prompt(idg_text, vir):
    analysis = render_vir(vir) if isinstance(vir, Vir) else str(vir)
    return HybridPrompt(code=idg_text, analysis=analysis)


# -- tokens and hashing --------------------------------------------------------

_TOKEN_RE = re.compile(r"""
  L?"(?:\\.|[^"\\])*"
| L?'(?:\\.|[^'\\])*'
| [A-Za-z_]\w*
| 0[xX][0-9a-fA-F]+ | \d+(?:\.\d+)?(?:[eE][+-]?\d+)?
| >>=|<<=|->|\+\+|--|<<|>>|<=|>=|==|!=|&&|\|\||[-+*/%&|^!=<>]=
| [^\sA-Za-z0-9_]
""", re.X)

_CODE_HEADER_TOKENS = ("The", "code", "snippet", ":")
_ANALYSIS_HEADER_TOKENS = ("The", "vulnerability", "analysis", ":")


def tokenize_text(text):
    """Identifiers, numerals, operators and whole string/char literals."""
    return _TOKEN_RE.findall(text)


def prompt_tokens(hp, cap=MAX_TOKENS):
    """Hard-prompt token stream; code is cut from its tail first when X+Y exceeds ``cap``."""
    x = tokenize_text(hp.code)
    y = tokenize_text(hp.analysis)
    if len(x) + len(y) > cap:
        y = y[:cap]
        x = x[:cap - len(y)]
    return list(_CODE_HEADER_TOKENS) + x + list(_ANALYSIS_HEADER_TOKENS) + y


@lru_cache(maxsize=1 << 18)
def _bucket(gram, seed, dim):
    h = hashlib.blake2b(gram.encode("utf-8"), digest_size=8,
                        key=int(seed).to_bytes(8, "little", signed=True))
    return int.from_bytes(h.digest(), "little") % dim


def sparse_features(tokens, dim, seed):
    """``(indices, values)`` of the L2-normalized hashed 1-/2-gram counts."""
    counts = {}
    grams = list(tokens) + [a + "\x1f" + b for a, b in zip(tokens, tokens[1:])]
    for g in grams:
        k = _bucket(g, seed, dim)
        counts[k] = counts.get(k, 0.0) + 1.0
    if not counts:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    idx = np.fromiter(sorted(counts), dtype=np.int64)
    vals = np.array([counts[k] for k in idx.tolist()])
    return idx, vals / np.linalg.norm(vals)


def hashed_vector(tokens, dim, seed, normalize=True):
    """Dense hashed feature vector of length ``dim``."""
    out = np.zeros(dim)
    if normalize:
        idx, vals = sparse_features(tokens, dim, seed)
        out[idx] = vals
        return out
    grams = list(tokens) + [a + "\x1f" + b for a, b in zip(tokens, tokens[1:])]
    for g in grams:
        out[_bucket(g, seed, dim)] += 1.0
    return out


# -- parameters ------------------------------------------------------------------

def frozen_projection(seed, D, K, H):
    rng = np.random.default_rng([seed, 0x5EED])
    P = np.empty((D + K, H))
    P[:D] = rng.standard_normal((D, H))
    P[D:] = rng.standard_normal((K, H)) / np.sqrt(K)
    P.setflags(write=False)
    return P


@dataclass
class ModelParams:
    P: np.ndarray
    s: np.ndarray
    W: np.ndarray
    b: np.ndarray
    U: np.ndarray
    seed: int = 0

    @classmethod
    def initialize(cls, seed=0, D=32768, K=16, H=256):
        """Frozen projection from ``seed``; trainable parts start at zero."""
        return cls(P=frozen_projection(seed, D, K, H), s=np.zeros(K),
                   W=np.zeros((H, N_CLASSES)), b=np.zeros(N_CLASSES),
                   U=np.zeros((H, H)), seed=seed)

    @property
    def dims(self):
        K = self.s.shape[0]
        return self.P.shape[0] - K, K, self.P.shape[1]

    def copy(self):
        # P is read-only and shared
        return ModelParams(self.P, self.s.copy(), self.W.copy(), self.b.copy(),
                           self.U.copy(), self.seed)

    def check(self):
        D, K, H = self.dims
        if self.W.shape != (H, N_CLASSES) or self.b.shape != (N_CLASSES,) \
                or self.U.shape != (H, H) or D <= 0:
            raise ValueError(f"inconsistent parameter shapes for D={D}, K={K}, H={H}")


def project_features(idx, vals, params):
    """Frozen part of the pre-activation: hashed rows of ``P`` weighted by features."""
    D, _, H = params.dims
    if len(idx) == 0:
        return np.zeros(H)
    return vals @ params.P[idx]


def soft_contribution(params):
    D = params.dims[0]
    return params.s @ params.P[D:]


def encode(hp, params):
    D = params.dims[0]
    idx, vals = sparse_features(prompt_tokens(hp), D, params.seed)
    return np.tanh(project_features(idx, vals, params) + soft_contribution(params))


def encode_features(x, params):
    """Encode an already hashed dense vector ``x`` of length D."""
    D = params.dims[0]
    return np.tanh(x @ params.P[:D] + soft_contribution(params))


def softmax(logits):
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict(h, params):
    return softmax(h @ params.W + params.b)


def suggestion_vector(text, params):
    """Fixed embedding of a reference suggestion (the soft prompt is not involved)."""
    D = params.dims[0]
    idx, vals = sparse_features(tokenize_text(text), D, params.seed)
    return np.tanh(project_features(idx, vals, params))


def build_bank(suggestions, params):
    seen, bank = set(), []
    for text in suggestions:
        if text and text not in seen:
            seen.add(text)
            bank.append((text, suggestion_vector(text, params)))
    return bank


def suggest(h, params, bank):
    if not bank:
        raise EmptyBank("suggestion bank is empty")
    G = np.stack([g for _, g in bank])
    scores = G @ (params.U.T @ h)
    return bank[int(np.argmax(scores))][0]


# -- assessment -------------------------------------------------------------------

@dataclass
class Assessment:
    severity: int
    distribution: list
    suggestion: str
    confidence: float
    fallback: bool = False
    warnings: list = field(default_factory=list)
    code: str = ""
    vir: Vir | None = None

    def to_dict(self):
        d = {"severity": self.severity, "distribution": list(self.distribution),
             "confidence": self.confidence, "suggestion": self.suggestion,
             "fallback": self.fallback, "warnings": list(self.warnings)}
        if self.vir is not None:
            d["vir"] = self.vir.to_dict()
        return d


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, VulnAssessError) and exc.stage is None:
            exc.stage = self.name
        return False


def assess(code, params, bank, generator, poi_cfg=None, functions=None,
           expand_callees=False):
    """Run the whole pipeline on one function's source.

    ``generator`` is a :class:`vulnassess.vir.VirGenerator`.  Errors raised by
    any module carry the failing stage name in their ``stage`` attribute.
    """
    from .pdg import parse_function
    from .slicer import DegenerateSliceWarning, assessment_code, slice_function

    with _Stage("parse"):
        f = parse_function(code)
    with _Stage("slice"):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", DegenerateSliceWarning)
            _, idg, rendered = slice_function(f, poi_cfg, functions, expand_callees)
        text, fallback = assessment_code(idg, f, rendered)
    notes = [str(w.message) for w in caught if issubclass(w.category, DegenerateSliceWarning)]
    if fallback:
        notes.append("empty slice: whole function used")
    with _Stage("vir"):
        vir = generator.generate(text)
    with _Stage("encode"):
        hp = assemble_prompt(text, vir)
        h = encode(hp, params)
    with _Stage("predict"):
        dist = predict(h, params)
    with _Stage("suggest"):
        sugg = suggest(h, params, bank)
    sev = int(np.argmax(dist))
    return Assessment(severity=sev, distribution=[float(p) for p in dist],
                      suggestion=sugg, confidence=float(dist[sev]), fallback=fallback,
                      warnings=notes, code=text, vir=vir)


# -- checkpoints ------------------------------------------------------------------

def save_checkpoint(path, params, bank=(), meta=None):
    """Write an ``.npz`` checkpoint; ``P`` is stored as a seed-only reconstruction flag."""
    D, K, H = params.dims
    header = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
              "seed": int(params.seed), "D": D, "K": K, "H": H,
              "p_from_seed": True, "meta": meta or {}}
    texts = [t for t, _ in bank]
    vectors = np.stack([g for _, g in bank]) if bank else np.zeros((0, H))
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)),
                 s=params.s, W=params.W, b=params.b, U=params.U,
                 bank_text=np.array(json.dumps(texts)), bank_vectors=vectors)


def load_checkpoint(path):
    """Return ``(params, bank, header)``."""
    try:
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["header"]))
            arrays = {k: z[k] for k in ("s", "W", "b", "U", "bank_vectors")}
            texts = json.loads(str(z["bank_text"]))
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
    D, K, H = header["D"], header["K"], header["H"]
    params = ModelParams(P=frozen_projection(header["seed"], D, K, H), s=arrays["s"],
                         W=arrays["W"], b=arrays["b"], U=arrays["U"], seed=header["seed"])
    params.check()
    bank = list(zip(texts, arrays["bank_vectors"]))
    return params, bank, header
