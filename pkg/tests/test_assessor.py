import decimal
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vulnassess.assessor import (MAX_TOKENS, HybridPrompt, ModelParams, assemble_prompt, assess,
                                 build_bank, encode, hashed_vector, load_checkpoint, predict,
                                 prompt_tokens, save_checkpoint, softmax, suggest,
                                 suggestion_vector, tokenize_text)
from vulnassess.errors import CheckpointError, EmptyBank, ProviderError
from vulnassess.vir import MockProvider, ProviderConfig, Vir, VirGenerator, render_vir

from conftest import fixture_path

VIR = Vir(condition="Long input.", way="Through argv.", impact="Overflow\nof the stack.",
          scope="Process.")


def small(seed=0):
    return ModelParams.initialize(seed, D=64, K=4, H=8)


def random_small(seed=0):
    rng = np.random.default_rng(seed)
    p = small(seed)
    p.s = rng.normal(size=4)
    p.W = rng.normal(size=(8, 4))
    p.b = rng.normal(size=4)
    p.U = rng.normal(size=(8, 8))
    return p


# -- prompt -----------------------------------------------------------------------------------

def test_hybrid_prompt_text():
    hp = assemble_prompt("strcpy(a, b);", VIR)
    assert hp.text() == ("The code snippet : strcpy(a, b); The vulnerability analysis : "
                         + render_vir(VIR))
    assert hp.template().endswith("[SOFT] [Z]")
    assert "Overflow\nof the stack." in hp.analysis
    assert assemble_prompt("strcpy(a, b);", VIR) == hp


def test_tokenizer_classes():
    toks = tokenize_text('n = strlen("a b") + 0x1f; p->x <<= 2;')
    assert '"a b"' in toks and "0x1f" in toks and "->" in toks and "<<=" in toks


def test_truncation_cuts_code_tail_first():
    code = " ".join(f"c{k}" for k in range(MAX_TOKENS))
    hp = HybridPrompt(code=code, analysis="impact words here")
    toks = prompt_tokens(hp)
    assert toks[-3:] == ["impact", "words", "here"]
    assert "c0" in toks and f"c{MAX_TOKENS - 1}" not in toks
    assert len(toks) == MAX_TOKENS + 8  # plus the two fixed headers


# -- features ----------------------------------------------------------------------------------

def test_hashed_vector_unit_norm_or_zero():
    v = hashed_vector(["a", "b", "c"], 128, 0)
    assert abs(np.linalg.norm(v) - 1.0) < 1e-12
    assert not hashed_vector([], 128, 0).any()


@given(st.lists(st.sampled_from(list("abcdefgh")), min_size=1, max_size=12), st.data())
def test_one_token_change_touches_at_most_three_grams(tokens, data):
    k = data.draw(st.integers(0, len(tokens) - 1))
    changed = list(tokens)
    changed[k] = "zz"
    a = hashed_vector(tokens, 4096, 0, normalize=False)
    b = hashed_vector(changed, 4096, 0, normalize=False)
    # a removed gram and its replacement can land in distinct buckets: <= 3 each side
    assert np.abs(a - b).sum() <= 6 and np.count_nonzero(a != b) <= 6


def test_empty_stream_zero_soft_gives_zero_hidden():
    p = small()
    D = p.dims[0]
    from vulnassess.assessor import encode_features
    assert not encode_features(np.zeros(D), p).any()


def test_encode_deterministic():
    hp = assemble_prompt("x = y + 1;", VIR)
    a = encode(hp, ModelParams.initialize(3, D=256, K=4, H=16))
    b = encode(hp, ModelParams.initialize(3, D=256, K=4, H=16))
    assert np.array_equal(a, b)


def test_projection_frozen():
    p = small()
    with pytest.raises(ValueError):
        p.P[0, 0] = 1.0


# -- predict / suggest -----------------------------------------------------------------------------

def test_zero_head_uniform():
    assert np.allclose(predict(np.ones(8), small()), 0.25, atol=0, rtol=0)


def test_softmax_large_logit():
    p = softmax([0, 0, 0, 10])
    decimal.getcontext().prec = 50
    e10 = decimal.Decimal(10).exp()
    exact = e10 / (3 + e10)
    assert abs(p[3] - float(exact)) < 1e-15
    assert round(p[3], 5) == 0.99986


@given(st.lists(st.floats(-50, 50), min_size=4, max_size=4), st.floats(-100, 100))
def test_softmax_normalized_and_shift_invariant(z, c):
    p = softmax(z)
    assert abs(p.sum() - 1.0) < 1e-9
    assert np.argmax(softmax(np.array(z) + c)) == np.argmax(p)


def test_suggest_cases():
    p = small()
    h = np.zeros(8)
    h[2] = 1.0
    with pytest.raises(EmptyBank):
        suggest(h, p, [])
    assert suggest(h, p, [("only", np.ones(8))]) == "only"
    p.U = np.eye(8)
    bank = [(f"s{k}", np.eye(8)[k]) for k in range(8)]
    assert suggest(h, p, bank) == "s2"
    # ties: all scores zero -> first entry
    p.U = np.zeros((8, 8))
    assert suggest(h, p, bank) == "s0"


def test_suggest_matches_brute_force():
    rng = np.random.default_rng(1)
    p = small()
    p.U = rng.normal(size=(8, 8))
    h = rng.normal(size=8)
    bank = [(f"s{k}", rng.normal(size=8)) for k in range(5)]
    scores = [float(h @ p.U @ g) for _, g in bank]
    assert suggest(h, p, bank) == bank[int(np.argmax(scores))][0]


def test_build_bank_dedups():
    p = small()
    bank = build_bank(["a fix", "a fix", "", "other"], p)
    assert [t for t, _ in bank] == ["a fix", "other"]
    assert np.array_equal(bank[0][1], suggestion_vector("a fix", p))


# -- checkpoint --------------------------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    p = random_small(2)
    bank = build_bank(["bound the copy", "free once"], p)
    path = str(tmp_path / "m.npz")
    save_checkpoint(path, p, bank, {"note": "x"})
    q, bank2, header = load_checkpoint(path)
    assert np.array_equal(q.P, p.P)
    for k in ("s", "W", "b", "U"):
        assert np.array_equal(getattr(q, k), getattr(p, k))
    assert [t for t, _ in bank2] == ["bound the copy", "free once"]
    assert header["version"] == 1 and header["p_from_seed"] and header["meta"] == {"note": "x"}


def test_bad_checkpoint(tmp_path):
    bad = tmp_path / "bad.npz"
    bad.write_bytes(b"not a zip")
    with pytest.raises(CheckpointError):
        load_checkpoint(str(bad))
    with pytest.raises(CheckpointError):
        load_checkpoint(str(tmp_path / "missing.npz"))


# -- assess -------------------------------------------------------------------------------------------

def fixture_model():
    params, bank, _ = load_checkpoint(fixture_path("model.npz"))
    return params, bank


def copy_name_source():
    from vulnassess.pdg import split_functions
    with open(fixture_path("copy_name.c"), encoding="utf-8") as fh:
        src = fh.read()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return split_functions(src)[0][1]


def test_assess_contract(tmp_path):
    params, bank = fixture_model()
    gen = VirGenerator(ProviderConfig(cache_dir=str(tmp_path)), provider=MockProvider())
    a = assess(copy_name_source(), params, bank, gen)
    assert a.severity in range(4)
    assert abs(sum(a.distribution) - 1.0) < 1e-9
    assert a.severity == int(np.argmax(a.distribution))
    assert a.confidence == max(a.distribution)
    assert a.suggestion and not a.fallback
    assert "strcpy(buf, src);" in a.code
    b = assess(copy_name_source(), params, bank, gen)
    assert a.to_dict() == b.to_dict()


def test_assess_fallback_records_warning():
    params, bank = fixture_model()
    gen = VirGenerator(provider=MockProvider())
    a = assess("void f(int n)\n{\n    g(n);\n}\n", params, bank, gen)
    assert a.fallback and any("whole function" in w for w in a.warnings)
    assert a.code == "void f(int n)\n{\n    g(n);\n}"


def test_assess_tags_stage():
    params, bank = fixture_model()
    gen = VirGenerator(ProviderConfig(max_retries=1, backoff=0),
                       provider=MockProvider(fail_with=ProviderError("down")))
    with pytest.raises(Exception) as ei:
        assess(copy_name_source(), params, bank, gen)
    assert getattr(ei.value, "stage", None) == "vir"
    with pytest.raises(Exception) as ei:
        assess("int f(int a) { return a;", params, bank, gen)
    assert ei.value.stage == "parse"
