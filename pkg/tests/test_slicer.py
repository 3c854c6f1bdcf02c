import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vulnassess.errors import UnknownNode
from vulnassess.pdg import FunctionModel, Pdg, Statement, build_pdg, parse_function, parse_source
from vulnassess.slicer import (ARITHMETIC, BITWISE, COMPOUND, INCDEC, DegenerateSliceWarning, Poi,
                               PoiConfig, assessment_code, build_idg, find_pois, idg_document,
                               load_api_list, render_idg, slice_function, trace_effects,
                               trace_origins)

from conftest import fixture_path
from oracles import reachability_matrix


def graph_pdg(n, data, control=()):
    stmts = tuple(Statement(id=k, line=k + 1, kind="other", text=f"s{k}") for k in range(n))
    f = FunctionModel(name="g", params=(), statements=stmts, source_span=(1, n))
    return Pdg(function=f, nodes=frozenset(range(n)), data_edges=frozenset(data),
               control_edges=frozenset(control))


def pois_of(src, cfg=None):
    return find_pois(build_pdg(parse_function(src)), cfg)


# -- POIs -------------------------------------------------------------------------------

def test_default_api_list_contents():
    names = load_api_list()
    for required in ("strcpy", "strncpy", "strcat", "sprintf", "snprintf", "memcpy", "memmove",
                     "memset", "malloc", "calloc", "realloc", "free", "system", "popen",
                     "execl", "execv", "execvp", "read", "recv", "readlink", "fopen", "gets",
                     "scanf"):
        assert required in names


def test_custom_api_list(tmp_path):
    p = tmp_path / "apis.txt"
    p.write_text("# mine\nfoo\n  bar  # trailing\n\n")
    assert load_api_list(str(p)) == {"foo", "bar"}


def test_strcpy_poi():
    assert pois_of("void f(char*d,char*s){ strcpy(d,s); }") == [Poi(0, "api-call", "strcpy")]


def test_increment_poi():
    assert pois_of("void f(int n){ n++; }") == [Poi(0, "operator", "++", INCDEC)]


def test_no_pois():
    assert pois_of("void f(int n){ g(n); return; }") == []


@pytest.mark.parametrize("stmt,cat,tok", [
    ("x = a % b;", ARITHMETIC, "%"),
    ("x = a << 2;", BITWISE, "<<"),
    ("x = ~a;", BITWISE, "~"),
    ("x ^= a;", COMPOUND, "^="),
    ("--x;", INCDEC, "--"),
])
def test_operator_categories(stmt, cat, tok):
    pois = pois_of(f"void f(int x,int a,int b){{ {stmt} }}")
    assert Poi(0, "operator", tok, cat) in pois


@pytest.mark.parametrize("stmt", [
    "x = *p;", "p = &x;", "x = -1;", "s = \"a+b\";", "c = '*';", "x = y; /* a + b */",
    "int *q;", "char *name = p;",
])
def test_non_operator_tokens(stmt):
    assert pois_of(f"void f(int x,int *p,int y){{ {stmt} }}") == []


def test_declaration_initializer_and_bound_count():
    assert pois_of("void f(int n){ int buf[n * 2]; }")[0].category == ARITHMETIC
    assert pois_of("void f(int n){ int k = n + 1; }")[0].category == ARITHMETIC


def test_disabled_category():
    cfg = PoiConfig(enabled_categories=frozenset({BITWISE}))
    assert pois_of("void f(int n){ n++; n = n | 1; }", cfg) == [Poi(1, "operator", "|", BITWISE)]
    with pytest.raises(ValueError):
        PoiConfig(enabled_categories=frozenset({"logical"}))


def test_multiple_pois_per_statement_sorted():
    pois = pois_of("void f(char*d,char*s,int n){ n++; memcpy(d, s, n + 1); }")
    assert [p.node for p in pois] == sorted(p.node for p in pois)
    assert {(p.node, p.detail) for p in pois} == {(0, "++"), (1, "memcpy"), (1, "+")}
    for p in pois:
        if p.kind == "api-call":
            assert p.detail in load_api_list()
        else:
            assert p.category is not None


# -- tracing --------------------------------------------------------------------------------

def test_origin_chain():
    pdg = graph_pdg(3, {(0, 1), (1, 2)})
    assert trace_origins(pdg, 2) == {0, 1, 2}
    assert trace_origins(pdg, 0) == {0}


def test_origins_ignore_control():
    pdg = graph_pdg(2, set(), {(0, 1)})
    assert trace_origins(pdg, 1) == {1}


def test_effects_follow_control_and_cycles():
    pdg = graph_pdg(4, {(1, 2), (2, 1)}, {(0, 1), (0, 3)})
    assert trace_effects(pdg, 0) >= {0, 1, 3}
    assert trace_effects(pdg, 1) == {1, 2}
    assert trace_effects(pdg, 3) == {3}


def test_unknown_node():
    pdg = graph_pdg(2, set())
    with pytest.raises(UnknownNode):
        trace_origins(pdg, 5)
    with pytest.raises(UnknownNode):
        trace_effects(pdg, -1)
    with pytest.raises(UnknownNode):
        build_idg(pdg, [Poi(7, "operator", "+", ARITHMETIC)])


@st.composite
def graphs(draw):
    n = draw(st.integers(1, 12))
    pair = st.tuples(st.integers(0, n - 1), st.integers(0, n - 1))
    return n, set(draw(st.lists(pair, max_size=20))), set(draw(st.lists(pair, max_size=10)))


@given(graphs())
def test_tracing_matches_closure(g):
    n, data, control = g
    pdg = graph_pdg(n, data, control)
    back = reachability_matrix(n, data)
    fwd = reachability_matrix(n, data | control)
    for v in range(n):
        assert trace_origins(pdg, v) == {u for u in range(n) if back[u, v]}
        assert trace_effects(pdg, v) == {u for u in range(n) if fwd[v, u]}


@given(graphs(), st.data())
def test_adding_edge_never_shrinks(g, data):
    n, d, c = g
    extra = (data.draw(st.integers(0, n - 1)), data.draw(st.integers(0, n - 1)))
    small, big = graph_pdg(n, d, c), graph_pdg(n, d | {extra}, c)
    for v in range(n):
        assert trace_origins(small, v) <= trace_origins(big, v)
        assert trace_effects(small, v) <= trace_effects(big, v)


# -- IDG --------------------------------------------------------------------------------------

def test_single_poi_union():
    # 1 -> 3 <- 2 (origins), 3 -> 4 (effect), 0 and 5 unrelated
    pdg = graph_pdg(6, {(1, 3), (2, 3), (3, 4)}, {(0, 5)})
    idg = build_idg(pdg, [Poi(3, "api-call", "strcpy")])
    assert idg.retained_nodes == {1, 2, 3, 4}
    assert idg.provenance == {1: "origin", 2: "origin", 3: "poi", 4: "effect"}


def test_overlapping_pois_and_precedence():
    pdg = graph_pdg(4, {(0, 1), (1, 2), (2, 3)})
    idg = build_idg(pdg, [Poi(1, "operator", "+", ARITHMETIC), Poi(2, "api-call", "free")])
    assert idg.retained_nodes == {0, 1, 2, 3}
    # 1 is an origin of 2 and 2 an effect of 1, but both are POIs
    assert idg.provenance == {0: "origin", 1: "poi", 2: "poi", 3: "effect"}


def test_node_both_origin_and_effect_is_origin():
    pdg = graph_pdg(3, {(0, 1), (1, 0), (1, 2)})
    idg = build_idg(pdg, [Poi(1, "api-call", "free")])
    assert idg.provenance[0] == "origin" and idg.provenance[2] == "effect"


def test_empty_pois_warn():
    pdg = graph_pdg(3, {(0, 1)})
    with pytest.warns(DegenerateSliceWarning):
        idg = build_idg(pdg, [])
    assert idg.retained_nodes == frozenset() and idg.warnings


@given(graphs(), st.data())
def test_idg_union_formula(g, data):
    n, d, c = g
    pdg = graph_pdg(n, d, c)
    nodes = data.draw(st.lists(st.integers(0, n - 1), min_size=1, max_size=4))
    pois = [Poi(k, "operator", "+", ARITHMETIC) for k in nodes]
    idg = build_idg(pdg, pois)
    expected = set()
    for k in nodes:
        expected |= {k} | trace_origins(pdg, k) | trace_effects(pdg, k)
    assert idg.retained_nodes == expected
    assert set(idg.provenance) == expected
    for k in nodes:
        assert idg.provenance[k] == "poi"


# -- rendering ---------------------------------------------------------------------------------

TEN = """int f(int a, int b)
{
    int x = 0;
    int y = a;
    g(b);
    x++;
    h();
    k();
    return 0;
}
"""


def test_render_selected_lines():
    f = parse_function(TEN)
    pdg = build_pdg(f)
    # y = a sits on line 4 (node 1), x++ on line 6 (node 3)
    from vulnassess.slicer import Idg
    idg = Idg("f", (), frozenset({1, 3}), {1: "origin", 3: "poi"})
    assert render_idg(idg, f) == "int f(int a, int b)\n    int y = a;\n    x++;"
    empty = Idg("f", (), frozenset(), {})
    assert render_idg(empty, f) == "int f(int a, int b)"
    assert pdg.nodes


def test_render_dedups_shared_line():
    f = parse_function("int f(int a)\n{\n    a++; a--;\n    return a;\n}\n")
    pdg = build_pdg(f)
    idg = build_idg(pdg, find_pois(pdg))
    assert render_idg(idg, f).splitlines() == ["int f(int a)", "    a++; a--;", "    return a;"]


def test_render_is_subsequence_of_source():
    with open(fixture_path("copy_name.c"), encoding="utf-8") as fh:
        src = fh.read()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        models, _ = parse_source(src)
    lines = src.splitlines()
    for f in models:
        _, idg, text = slice_function(f)
        it = iter(lines)
        assert all(any(line == src_line for src_line in it) for line in text.splitlines())


def test_fallback_to_whole_function():
    f = parse_function("void f(int n)\n{\n    g(n);\n}\n")
    with pytest.warns(DegenerateSliceWarning):
        _, idg, rendered = slice_function(f)
    code, fallback = assessment_code(idg, f, rendered)
    assert fallback and code == "void f(int n)\n{\n    g(n);\n}"


def test_idg_document_fields():
    f = parse_function("void f(char*d,char*s)\n{\n    strcpy(d, s);\n}\n")
    _, idg, text = slice_function(f)
    doc = idg_document(idg, f, text, False, "r1")
    assert doc["retained_lines"] == [3]
    assert doc["pois"] == [{"node": 0, "kind": "api-call", "detail": "strcpy"}]
    assert doc["provenance"] == {"0": "poi"} and doc["id"] == "r1"


def test_callee_expansion_depth_one():
    with open(fixture_path("callees.c"), encoding="utf-8") as fh:
        models, _ = parse_source(fh.read())
    handle = next(m for m in models if m.name == "handle")
    _, _, plain = slice_function(handle)
    _, _, expanded = slice_function(handle, functions=models, expand_callees=True)
    assert "strcpy" not in plain
    lines = expanded.splitlines()
    call = next(k for k, ln in enumerate(lines) if "fill(local" in ln)
    assert lines[call + 1] == "int fill(char *dst, const char *src)"
    assert lines[call + 2].strip() == "strcpy(dst, src);"


def test_random_graphs_closure_exhaustive():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = int(rng.integers(1, 13))
        data = {tuple(e) for e in rng.integers(0, n, size=(int(rng.integers(0, 25)), 2)).tolist()}
        pdg = graph_pdg(n, data)
        r = reachability_matrix(n, data)
        for v in range(n):
            assert trace_effects(pdg, v) == set(np.flatnonzero(r[v]).tolist())
