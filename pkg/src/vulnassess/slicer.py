"""Points of interest, origin/effect slicing and intention dependence graphs.

Naming note: the origin slice (everything a POI's data is built from) is what
some vulnerability literature calls *forward* slicing, and the effect slice
(everything the POI's result influences) is called *backward* slicing there.
This module names both by what they compute to avoid that inversion.

* origins follow data edges only, against their direction;
* effects follow data and control edges, along their direction.
"""
import warnings
from collections import deque
from dataclasses import dataclass, field
from importlib import resources

from .errors import UnknownNode
from .lexer import split_top_level, tokenize
from .pdg import build_call_graph, build_pdg

ARITHMETIC = "arithmetic"
BITWISE = "bitwise"
COMPOUND = "compound-assignment"
INCDEC = "increment-decrement"
OPERATOR_CATEGORIES = (ARITHMETIC, BITWISE, COMPOUND, INCDEC)

OPERATOR_TOKENS = {
    ARITHMETIC: frozenset({"+", "-", "*", "/", "%"}),
    BITWISE: frozenset({"&", "|", "^", "~", "<<", ">>"}),
    COMPOUND: frozenset({"+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>="}),
    INCDEC: frozenset({"++", "--"}),
}

# unary forms of these tokens (dereference, address-of, sign) are not operators here
_BINARY_ONLY = frozenset({"*", "&", "-", "+"})


class DegenerateSliceWarning(UserWarning):
    """A function had no point of interest, so its slice is empty."""


def load_api_list(path=None):
    """Read an API list file (one identifier per line, ``#`` comments)."""
    if path is None:
        text = resources.files("vulnassess").joinpath("data/default_apis.txt").read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    names = set()
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            names.add(line)
    return frozenset(names)


@dataclass(frozen=True)
class PoiConfig:
    api_names: frozenset = field(default_factory=load_api_list)
    enabled_categories: frozenset = frozenset(OPERATOR_CATEGORIES)

    operator_categories = OPERATOR_CATEGORIES

    def __post_init__(self):
        unknown = set(self.enabled_categories) - set(OPERATOR_CATEGORIES)
        if unknown:
            raise ValueError(f"unknown operator categories: {sorted(unknown)}")


@dataclass(frozen=True)
class Poi:
    node: int
    kind: str  # "api-call" or "operator"
    detail: str
    category: str | None = None

    def to_dict(self):
        d = {"node": self.node, "kind": self.kind, "detail": self.detail}
        if self.category is not None:
            d["category"] = self.category
        return d


@dataclass(frozen=True)
class Idg:
    pdg_ref: str
    pois: tuple
    retained_nodes: frozenset
    provenance: dict
    warnings: tuple = ()


def _operator_tokens(stmt):
    toks = tokenize(stmt.text)  # comments dropped, literals are single tokens
    if stmt.kind == "decl":
        # only initializers and array bounds carry operators in a declaration
        keep = []
        for part in split_top_level(toks):
            eq = next((k for k, t in enumerate(part) if t.kind == "op" and t.value == "="), None)
            depth = 0
            for k, t in enumerate(part):
                if t.value == "[":
                    depth += 1
                elif t.value == "]":
                    depth -= 1
                if (eq is not None and k > eq) or depth > 0:
                    keep.append((k, t, part))
        candidates = keep
    else:
        candidates = [(k, t, toks) for k, t in enumerate(toks)]
    out = []
    for k, t, seq in candidates:
        if t.kind != "op":
            continue
        if t.value in _BINARY_ONLY:
            prev = seq[k - 1] if k > 0 else None
            if prev is None or not (prev.kind in ("ident", "number", "string", "char")
                                    or prev.value in (")", "]")) or prev.value in ("return", "sizeof"):
                continue
        out.append(t.value)
    return out


def find_pois(pdg, cfg=None):
    """Sorted POIs: listed API calls and statements using an enabled operator category."""
    cfg = cfg or PoiConfig()
    pois = []
    for s in sorted(pdg.function.statements, key=lambda s: s.id):
        calls = s.calls or ((s.callee,) if s.callee else ())
        seen = set()
        for callee in calls:
            if callee in cfg.api_names and callee not in seen:
                seen.add(callee)
                pois.append(Poi(s.id, "api-call", callee))
        ops = _operator_tokens(s)
        for cat in OPERATOR_CATEGORIES:
            if cat not in cfg.enabled_categories:
                continue
            hit = next((op for op in ops if op in OPERATOR_TOKENS[cat]), None)
            if hit is not None:
                pois.append(Poi(s.id, "operator", hit, cat))
    return pois


def _closure(start, adjacency):
    seen = {start}
    queue = deque([start])
    while queue:
        n = queue.popleft()
        for m in adjacency.get(n, ()):
            if m not in seen:
                seen.add(m)
                queue.append(m)
    return seen


def _adjacency(edges, reverse=False):
    adj = {}
    for a, b in edges:
        if reverse:
            a, b = b, a
        adj.setdefault(a, []).append(b)
    return adj


def trace_origins(pdg, node):
    """Node plus every transitive data-edge predecessor."""
    if node not in pdg.nodes:
        raise UnknownNode(node)
    return _closure(node, _adjacency(pdg.data_edges, reverse=True))


def trace_effects(pdg, node):
    """Node plus every transitive successor over data and control edges."""
    if node not in pdg.nodes:
        raise UnknownNode(node)
    return _closure(node, _adjacency(pdg.data_edges | pdg.control_edges))


def build_idg(pdg, pois):
    back = _adjacency(pdg.data_edges, reverse=True)
    fwd = _adjacency(pdg.data_edges | pdg.control_edges)
    rank = {"poi": 0, "origin": 1, "effect": 2}
    provenance = {}

    def tag(n, label):
        if n not in provenance or rank[label] < rank[provenance[n]]:
            provenance[n] = label

    for poi in pois:
        if poi.node not in pdg.nodes:
            raise UnknownNode(poi.node)
        for n in _closure(poi.node, back):
            tag(n, "origin")
        for n in _closure(poi.node, fwd):
            tag(n, "effect")
        tag(poi.node, "poi")
    notes = ()
    if not pois:
        msg = f"function {pdg.function.name!r} has no point of interest; slice is empty"
        warnings.warn(msg, DegenerateSliceWarning, stacklevel=2)
        notes = (msg,)
    return Idg(pdg_ref=pdg.function.name, pois=tuple(pois),
               retained_nodes=frozenset(provenance), provenance=provenance, warnings=notes)


def _line_texts(f):
    """Absolute line -> text, synthesized from statement texts when no source is kept."""
    if f.source is not None:
        return None
    by_line = {}
    for s in sorted(f.statements, key=lambda s: s.id):
        by_line.setdefault(s.line, []).append(s.text)
    return {ln: " ".join(parts) for ln, parts in by_line.items()}


def render_idg(idg, f, callee_segments=None):
    """Source lines of the retained nodes under the function signature.

    ``callee_segments`` maps a call-site node id to text spliced right after
    that statement's last line (used for depth-1 callee expansion).
    """
    stmts = {s.id: s for s in f.statements}
    lines = set()
    for n in idg.retained_nodes:
        s = stmts[n]
        lines.update(range(s.line, s.last_line + 1))
    splices = {}
    for node, text in sorted((callee_segments or {}).items()):
        if node in idg.retained_nodes:
            splices.setdefault(stmts[node].last_line, []).append(text)

    synthetic = _line_texts(f)
    if synthetic is not None:
        out = [f"{f.name}({', '.join(f.params)})"]
        for ln in sorted(lines):
            out.append(synthetic.get(ln, ""))
            out.extend(splices.get(ln, ()))
        return "\n".join(out)

    sig = f.signature_lines()
    out = [f.source_line(ln) for ln in sig]
    for ln in sig:  # one-line functions: calls share the signature line
        out.extend(splices.get(ln, ()))
    for ln in sorted(lines - set(sig)):
        out.append(f.source_line(ln))
        out.extend(splices.get(ln, ()))
    return "\n".join(out)


def slice_function(f, cfg=None, functions=None, expand_callees=False, call_graph=None):
    """Full slicing for one function: ``(pdg, idg, rendered text)``.

    With ``expand_callees`` the IDG text of each POI call whose callee is in
    ``functions`` is spliced after the call line (depth 1).
    """
    pdgs = None
    if expand_callees and functions:
        pdgs = {g.name: g for g in functions}
    return slice_pdg(build_pdg(f), cfg, pdgs, expand_callees, call_graph)


def slice_pdg(pdg, cfg=None, pdgs=None, expand_callees=False, call_graph=None):
    """Like :func:`slice_function` for an already built (or loaded) PDG.

    ``pdgs`` maps function names to a :class:`Pdg` or a function model; models
    get their PDG built on demand.
    """
    f = pdg.function
    pois = find_pois(pdg, cfg)
    idg = build_idg(pdg, pois)
    segments = None
    if expand_callees and pdgs:
        models = [g.function if hasattr(g, "function") else g for g in pdgs.values()]
        if f.name not in pdgs:
            models.append(f)
        cg = call_graph or build_call_graph(models)
        segments = {}
        poi_nodes = {p.node for p in pois}
        for caller, callee, site in sorted(cg.edges):
            if caller != f.name or site not in poi_nodes or callee == f.name:
                continue
            g = pdgs[callee]
            gpdg = g if hasattr(g, "function") else build_pdg(g)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegenerateSliceWarning)
                gidg = build_idg(gpdg, find_pois(gpdg, cfg))
            text = render_idg(gidg, gpdg.function)
            segments[site] = segments[site] + "\n" + text if site in segments else text
    return pdg, idg, render_idg(idg, f, segments)


def assessment_code(idg, f, rendered):
    """Code shown to the LLM and the classifier; whole function when the slice is empty."""
    if idg.retained_nodes:
        return rendered, False
    if f.source is not None:
        return f.source.strip("\n"), True
    return "\n".join(s.text for s in f.statements) or f.name, True


def idg_document(idg, f, code=None, fallback=False, record_id=None):
    stmts = {s.id: s for s in f.statements}
    lines = sorted({ln for n in idg.retained_nodes
                    for ln in range(stmts[n].line, stmts[n].last_line + 1)})
    doc = {
        "function": idg.pdg_ref,
        "pois": [p.to_dict() for p in idg.pois],
        "retained_nodes": sorted(idg.retained_nodes),
        "retained_lines": lines,
        "provenance": {str(k): v for k, v in sorted(idg.provenance.items())},
        "warnings": list(idg.warnings),
    }
    if record_id is not None:
        doc["id"] = record_id
    if code is not None:
        doc["code"] = code
        doc["fallback"] = fallback
    return doc
