"""Statement-level program dependence graphs for a C subset.

Functions are parsed into :class:`Statement` nodes with def/use sets and a
structured control-flow graph.  :func:`build_pdg` derives data edges from
reaching definitions over that flow graph and control edges from syntactic
nesting.  Graphs produced by external tools can be ingested through the
interchange document handled by :func:`load_pdg` / :func:`store_pdg`.
"""
import json
from dataclasses import dataclass, field

from .errors import MalformedFunction, SchemaViolation, UnsupportedConstruct
from .lexer import (ASSIGN_OPS, INCDEC_OPS, KEYWORDS, TYPE_WORDS, Token,
                    blank_preprocessor, is_variable, match_close, match_open,
                    split_top_level, tokenize)

STATEMENT_KINDS = ("decl", "assign", "call", "condition", "loop-header",
                   "return", "other")

# Argument positions written through by common libc calls; a trailing
# ``None`` marks every later position as written too (variadic scanf family).
OUTPUT_ARGS = {
    "strcpy": (0,), "strncpy": (0,), "strcat": (0,), "strncat": (0,),
    "sprintf": (0,), "snprintf": (0,), "vsprintf": (0,), "vsnprintf": (0,),
    "memcpy": (0,), "memmove": (0,), "memset": (0,), "bcopy": (1,),
    "gets": (0,), "fgets": (0,), "fread": (0,), "read": (1,), "recv": (1,),
    "recvfrom": (1,), "readlink": (1,), "getline": (0,),
    "scanf": (1, None), "sscanf": (2, None), "fscanf": (2, None),
}


@dataclass(frozen=True)
class Statement:
    id: int
    line: int
    kind: str
    text: str
    defs: frozenset = frozenset()
    uses: frozenset = frozenset()
    callee: str | None = None
    calls: tuple = ()
    end_line: int | None = None

    @property
    def last_line(self):
        return self.end_line if self.end_line is not None else self.line


@dataclass(frozen=True)
class FunctionModel:
    name: str
    params: tuple
    statements: tuple
    source_span: tuple
    source: str | None = None
    first_line: int = 1
    signature_end: int | None = None
    # control-flow successor pairs and (header, body statement) nesting pairs
    flow: tuple | None = field(default=None, compare=False)
    nesting: tuple | None = field(default=None, compare=False)

    def statement(self, node):
        for s in self.statements:
            if s.id == node:
                return s
        raise KeyError(node)

    def source_line(self, line):
        """Verbatim text of absolute source line ``line`` (``None`` if unknown)."""
        if self.source is None:
            return None
        lines = self.source.splitlines()
        idx = line - self.first_line
        return lines[idx] if 0 <= idx < len(lines) else None

    def signature_lines(self):
        end = self.signature_end if self.signature_end is not None else self.source_span[0]
        return list(range(self.source_span[0], end + 1))


@dataclass(frozen=True)
class Pdg:
    function: FunctionModel
    nodes: frozenset
    data_edges: frozenset
    control_edges: frozenset

    def predecessors(self, node, control=False):
        edges = self.data_edges | self.control_edges if control else self.data_edges
        return {a for a, b in edges if b == node}

    def successors(self, node, control=True):
        edges = self.data_edges | self.control_edges if control else self.data_edges
        return {b for a, b in edges if a == node}


@dataclass(frozen=True)
class CallGraph:
    edges: frozenset = frozenset()          # (caller, callee, call-site node)
    returns_into: frozenset = frozenset()   # (callee, assigned identifier, node)

    def callees_at(self, caller, node):
        return sorted(c for f, c, n in self.edges if f == caller and n == node)


# -- expression analysis -------------------------------------------------------

def _is_operand_end(tok):
    return tok.kind in ("ident", "number", "string", "char") or tok.value in (")", "]")


def _lvalue_before(toks, i):
    """Base identifier of the lvalue ending just before ``toks[i]``.

    Returns ``(index, plain)`` where ``plain`` means a bare identifier with no
    subscript, member access or dereference; ``(None, False)`` if no base.
    """
    j = i - 1
    plain = True
    group = None
    while j >= 0:
        t = toks[j]
        if t.kind == "op" and t.value in (")", "]"):
            o = match_open(toks, j)
            if o < 0:
                return None, False
            plain = False
            group = (o, j)
            j = o - 1
            continue
        if t.kind == "ident":
            if j >= 1 and toks[j - 1].value in (".", "->"):
                plain = False
                j -= 2
                continue
            if j + 1 < len(toks) and toks[j + 1].value == "(":
                return None, False  # call result
            if not is_variable(t):
                break
            if j >= 1 and toks[j - 1].value == "*" and (j < 2 or not _is_operand_end(toks[j - 2])):
                plain = False
            return j, plain
        break
    if group is not None:
        k = _first_variable(toks, group[0] + 1, group[1])
        return k, False
    return None, False


def _first_variable(toks, lo, hi):
    for k in range(lo, hi):
        t = toks[k]
        if not is_variable(t):
            continue
        if k >= 1 and toks[k - 1].value in (".", "->"):
            continue
        if k + 1 < len(toks) and toks[k + 1].value == "(":
            continue
        return k
    return None


def _unary_context(toks, i):
    return i == 0 or not _is_operand_end(toks[i - 1]) or toks[i - 1].value in KEYWORDS


def analyze_expression(toks):
    """Return ``(defs, uses, calls)`` for a token run of one expression."""
    defs, calls = set(), []
    not_use = set()
    n = len(toks)
    for i, t in enumerate(toks):
        if t.kind == "ident" and i + 1 < n and toks[i + 1].value == "(" \
                and t.value not in KEYWORDS:
            calls.append((t.value, i))
            not_use.add(i)
        elif t.kind == "ident" and i >= 1 and toks[i - 1].value in (".", "->"):
            not_use.add(i)
        elif t.kind != "op":
            continue
        elif t.value in ASSIGN_OPS:
            k, plain = _lvalue_before(toks, i)
            if k is not None:
                defs.add(toks[k].value)
                if plain and t.value == "=":
                    not_use.add(k)
        elif t.value in INCDEC_OPS:
            if i >= 1 and _is_operand_end(toks[i - 1]):
                k, _ = _lvalue_before(toks, i)
            else:
                k = _first_variable(toks, i + 1, n)
            if k is not None:
                defs.add(toks[k].value)
        elif t.value == "&" and _unary_context(toks, i):
            k = _first_variable(toks, i + 1, n)
            if k is not None:
                defs.add(toks[k].value)
    for name, i in calls:
        spec = OUTPUT_ARGS.get(name)
        if spec is None:
            continue
        close = match_close(toks, i + 1)
        if close < 0:
            continue
        args = split_top_level(toks[i + 2:close])
        variadic = spec[-1] is None
        positions = set(p for p in spec if p is not None)
        for pos, arg in enumerate(args):
            if pos in positions or (variadic and pos >= max(positions)):
                k = _first_variable(arg, 0, len(arg))
                if k is not None:
                    defs.add(arg[k].value)
    uses = {t.value for i, t in enumerate(toks) if i not in not_use and is_variable(t)}
    return defs, uses, [c for c, _ in calls]


def _is_declaration(toks):
    if not toks:
        return False
    first = toks[0]
    if first.kind != "ident":
        return False
    if first.value in TYPE_WORDS or first.value.endswith("_t") and len(toks) > 1 \
            and toks[1].kind in ("ident",) or first.value in ("struct", "union", "enum"):
        return True
    if first.value in KEYWORDS:
        return False
    j = 1
    while j < len(toks) and toks[j].value == "*":
        j += 1
    return (j < len(toks) and toks[j].kind == "ident" and toks[j].value not in KEYWORDS
            and (j + 1 == len(toks) or toks[j + 1].value in ("=", ";", ",", "[")))


def analyze_declaration(toks):
    defs, uses, calls = set(), set(), []
    for part in split_top_level(toks):
        eq = next((k for k, t in enumerate(part) if t.value == "=" and t.kind == "op"), None)
        left = part if eq is None else part[:eq]
        depth, name = 0, None
        for t in left:
            if t.value in ("[", "("):
                depth += 1
            elif t.value in ("]", ")"):
                depth -= 1
            elif depth == 0 and is_variable(t) and t.value not in TYPE_WORDS:
                name = t.value
            elif depth > 0 and is_variable(t):
                uses.add(t.value)
        if name is not None:
            defs.add(name)
        if eq is not None:
            d, u, c = analyze_expression(part[eq + 1:])
            defs |= d
            uses |= u
            calls += c
    return defs, uses, calls


def _safe_analysis(toks):
    """Def/use analysis with the best-effort fallback for unparseable text."""
    try:
        if _is_declaration(toks):
            return analyze_declaration(toks), True
        return analyze_expression(toks), True
    except (IndexError, ValueError):
        return (set(), {t.value for t in toks if is_variable(t)}, []), False


# -- statement parser -----------------------------------------------------------

class _Node:
    __slots__ = ("key", "virtual", "line", "end_line", "kind", "text", "defs",
                 "uses", "calls", "parent")

    def __init__(self, key, virtual=False):
        self.key = key
        self.virtual = virtual
        self.parent = None


class _Loop:
    def __init__(self, continue_target):
        self.continue_target = continue_target
        self.breaks = set()


class _FunctionParser:
    def __init__(self, source, toks):
        self.source = source
        self.toks = toks
        self.nodes = []
        self.succ = {}
        self.loops = []
        self._vkey = 0

    # graph helpers
    def _new(self, key, virtual=False):
        node = _Node(key, virtual)
        node_id = len(self.nodes)
        self.nodes.append(node)
        self.succ[node_id] = set()
        return node_id

    def virtual(self):
        self._vkey += 1
        return self._new(None, virtual=True)

    def link(self, frontier, node_id):
        for f in frontier:
            self.succ[f].add(node_id)

    def emit(self, toks, kind, parent, text_toks=None, analysis=None):
        text_toks = text_toks if text_toks is not None else toks
        nid = self._new(text_toks[0].start)
        node = self.nodes[nid]
        node.line = text_toks[0].line
        node.end_line = text_toks[-1].line
        node.text = self.source[text_toks[0].start:text_toks[-1].end]
        node.parent = parent
        if analysis is None:
            analysis, ok = _safe_analysis(toks)
            if not ok:
                kind = "other"
        node.kind = kind
        node.defs, node.uses, node.calls = analysis
        return nid

    # parsing
    def _expect(self, i, value):
        if i >= len(self.toks) or self.toks[i].value != value:
            line = self.toks[min(i, len(self.toks) - 1)].line
            raise MalformedFunction(f"expected {value!r} at line {line}")
        return i + 1

    def _paren_group(self, i):
        i = self._expect(i, "(") - 1
        close = match_close(self.toks, i)
        if close < 0:
            raise MalformedFunction(f"unbalanced parentheses at line {self.toks[i].line}")
        return close

    def block(self, i, end, frontier, parent):
        while i < end:
            i, frontier = self.statement(i, frontier, parent)
        return frontier

    def statement(self, i, frontier, parent):
        toks = self.toks
        t = toks[i]
        v = t.value
        if t.kind == "op" and v == "{":
            close = match_close(toks, i)
            if close < 0:
                raise MalformedFunction(f"unbalanced braces at line {t.line}")
            return close + 1, self.block(i + 1, close, frontier, parent)
        if t.kind == "op" and v == ";":
            return i + 1, frontier
        if t.kind == "ident":
            if v == "goto":
                raise UnsupportedConstruct("goto", t.line)
            if v == "if":
                return self._if(i, frontier, parent)
            if v in ("while", "for", "do", "switch"):
                return getattr(self, "_" + v)(i, frontier, parent)
            if v == "else":
                raise MalformedFunction(f"'else' without 'if' at line {t.line}")
            if v in ("case", "default"):
                return self._case_label(i, frontier)
            if v not in KEYWORDS and i + 1 < len(toks) and toks[i + 1].value == ":" \
                    and (i + 2 >= len(toks) or toks[i + 2].value != ":"):
                return i + 2, frontier  # label
        return self._simple(i, frontier, parent)

    def _statement_end(self, i):
        toks = self.toks
        depth = 0
        j = i
        while j < len(toks):
            v = toks[j].value
            if toks[j].kind == "op":
                if v in "([{":
                    if v == "{" and depth == 0 and j > i and toks[j - 1].value not in ("=", ",", "(", "{"):
                        return j, False
                    depth += 1
                elif v in ")]}":
                    depth -= 1
                    if depth < 0:
                        raise MalformedFunction(f"unbalanced {v!r} at line {toks[j].line}")
                elif v == ";" and depth == 0:
                    return j, True
            j += 1
        raise MalformedFunction(f"missing ';' after line {toks[i].line}")

    def _simple(self, i, frontier, parent):
        j, terminated = self._statement_end(i)
        stmt = self.toks[i:j]
        text_toks = self.toks[i:j + 1] if terminated else stmt
        first = stmt[0].value
        if first == "return":
            nid = self.emit(stmt[1:], "return", parent, text_toks)
            self.link(frontier, nid)
            return j + 1, set()
        if first in ("break", "continue"):
            nid = self.emit([], "other", parent, text_toks, analysis=(set(), set(), []))
            self.link(frontier, nid)
            if not self.loops:
                raise MalformedFunction(f"'{first}' outside loop at line {stmt[0].line}")
            if first == "break":
                self.loops[-1].breaks.add(nid)
            else:
                target = self.loops[-1].continue_target
                if target is None:  # 'continue' inside switch inside loop
                    target = next(lp.continue_target for lp in reversed(self.loops)
                                  if lp.continue_target is not None)
                self.succ[nid].add(target)
            return j + 1, set()
        if not terminated:
            # macro-style "NAME(args) { ... }" construct: keep the head as an opaque statement
            nid = self.emit(stmt, "other", parent, stmt,
                            analysis=(set(), {t.value for t in stmt if is_variable(t)}, []))
            self.link(frontier, nid)
            return j, {nid}
        analysis, ok = _safe_analysis(stmt)
        if not ok:
            kind = "other"
        elif analysis[2]:
            kind = "call"
        elif _is_declaration(stmt):
            kind = "decl"
        elif any(t.kind == "op" and (t.value in ASSIGN_OPS or t.value in INCDEC_OPS)
                 for t in stmt):
            kind = "assign"
        else:
            kind = "other"
        nid = self.emit(stmt, kind, parent, text_toks, analysis=analysis)
        self.link(frontier, nid)
        return j + 1, {nid}

    def _header(self, i, kind, parent):
        """Emit a condition/loop header ``kw ( expr )`` starting at ``i``."""
        close = self._paren_group(i + 1)
        nid = self.emit(self.toks[i + 2:close], kind, parent, self.toks[i:close + 1])
        return nid, close + 1

    def _if(self, i, frontier, parent):
        c, i = self._header(i, "condition", parent)
        self.link(frontier, c)
        i, then_f = self.statement(i, {c}, c)
        if i < len(self.toks) and self.toks[i].value == "else":
            i, else_f = self.statement(i + 1, {c}, c)
        else:
            else_f = {c}
        return i, then_f | else_f

    def _while(self, i, frontier, parent):
        h, i = self._header(i, "loop-header", parent)
        self.link(frontier, h)
        self.loops.append(_Loop(h))
        i, body_f = self.statement(i, {h}, h)
        loop = self.loops.pop()
        self.link(body_f, h)
        return i, {h} | loop.breaks

    def _do(self, i, frontier, parent):
        toks = self.toks
        entry = self.virtual()
        self.link(frontier, entry)
        # the header follows the body in the source but governs it
        body_start = i + 1
        probe = _FunctionParser(self.source, toks)
        probe.loops.append(_Loop(0))
        body_end, _ = probe.statement(body_start, set(), None)
        if body_end >= len(toks) or toks[body_end].value != "while":
            raise MalformedFunction(f"'do' without 'while' at line {toks[i].line}")
        h, after = self._header(body_end, "loop-header", parent)
        after = self._expect(after, ";")
        cont = self.virtual()
        self.loops.append(_Loop(cont))
        _, body_f = self.statement(body_start, {entry}, h)
        loop = self.loops.pop()
        self.link(body_f, cont)
        self.link({cont}, h)
        self.link({h}, entry)
        return after, {h} | loop.breaks

    def _for(self, i, frontier, parent):
        toks = self.toks
        close = self._paren_group(i + 1)
        parts = split_top_level(toks[i + 2:close], sep=";")
        if len(parts) != 3:
            raise MalformedFunction(f"malformed for-header at line {toks[i].line}")
        init, cond, step = parts
        if init:
            analysis, ok = _safe_analysis(init)
            kind = "other" if not ok else "call" if analysis[2] else \
                "decl" if _is_declaration(init) else "assign"
            n0 = self.emit(init, kind, parent, analysis=analysis)
            self.link(frontier, n0)
            frontier = {n0}
        h = self.emit(cond, "loop-header", parent, cond if cond else [toks[i]],
                      analysis=None if cond else (set(), set(), []))
        self.link(frontier, h)
        latch = self.emit(step, "assign", h) if step else h
        self.loops.append(_Loop(latch))
        i, body_f = self.statement(close + 1, {h}, h)
        loop = self.loops.pop()
        self.link(body_f, latch)
        if step:
            self.link({latch}, h)
        return i, ({h} if cond else set()) | loop.breaks

    def _switch(self, i, frontier, parent):
        c, i = self._header(i, "condition", parent)
        self.link(frontier, c)
        if self.toks[i].value != "{":
            raise MalformedFunction(f"switch without body at line {self.toks[i].line}")
        close = match_close(self.toks, i)
        self.loops.append(_Loop(None))
        self._switch_head = getattr(self, "_switch_head", [])
        self._switch_head.append((c, [False]))
        body_f = self.block(i + 1, close, set(), c)
        _, has_default = self._switch_head.pop()
        loop = self.loops.pop()
        out = body_f | loop.breaks
        if not has_default[0]:
            out |= {c}
        return close + 1, out

    def _case_label(self, i, frontier):
        heads = getattr(self, "_switch_head", [])
        if not heads:
            raise MalformedFunction(f"case label outside switch at line {self.toks[i].line}")
        c, has_default = heads[-1]
        if self.toks[i].value == "default":
            has_default[0] = True
        j = i
        while j < len(self.toks) and not (self.toks[j].value == ":" and self.toks[j].kind == "op"):
            j += 1
        return j + 1, frontier | {c}


def _finish(parser):
    """Contract virtual nodes, renumber real nodes by source position."""
    nodes = parser.nodes
    succ = {k: set(v) for k, v in parser.succ.items()}

    def real_succ(n, seen=None):
        seen = seen if seen is not None else set()
        out = set()
        for s in succ[n]:
            if nodes[s].virtual:
                if s not in seen:
                    seen.add(s)
                    out |= real_succ(s, seen)
            else:
                out.add(s)
        return out

    real = sorted((k for k, n in enumerate(nodes) if not n.virtual), key=lambda k: nodes[k].key)
    remap = {old: new for new, old in enumerate(real)}
    flow = sorted({(remap[a], remap[b]) for a in real for b in real_succ(a)})
    control = sorted({(remap[nodes[k].parent], remap[k]) for k in real
                      if nodes[k].parent is not None})
    statements = []
    for old in real:
        n = nodes[old]
        calls = tuple(n.calls)
        statements.append(Statement(
            id=remap[old], line=n.line, kind=n.kind, text=n.text,
            defs=frozenset(n.defs), uses=frozenset(n.uses),
            callee=calls[0] if calls else None, calls=calls,
            end_line=n.end_line if n.end_line != n.line else None))
    return tuple(statements), tuple(flow), tuple(control)


# -- public API -------------------------------------------------------------------

def _find_function_bounds(toks):
    """Yield ``(sig_start, name_idx, lparen, rparen, lbrace, rbrace)`` for each definition."""
    i = 0
    stmt_start = 0
    while i < len(toks):
        t = toks[i]
        if t.kind == "op" and t.value in (";", "}"):
            stmt_start = i + 1
        elif t.kind == "op" and t.value == "{":
            close = match_close(toks, i)
            if close < 0:
                raise MalformedFunction(f"unbalanced braces at line {t.line}")
            rparen = i - 1
            while rparen >= stmt_start and toks[rparen].kind == "ident" \
                    and toks[rparen].value in ("const", "__attribute__"):
                rparen -= 1
            if rparen > stmt_start and toks[rparen].value == ")":
                lparen = match_open(toks, rparen)
                if lparen > stmt_start and toks[lparen - 1].kind == "ident" \
                        and toks[lparen - 1].value not in KEYWORDS:
                    yield stmt_start, lparen - 1, lparen, rparen, i, close
                    stmt_start = i = close + 1
                    continue
            # struct/union/enum body or initializer: skip it
            i = close + 1
            continue
        i += 1


def _params(toks):
    params = []
    for part in split_top_level(toks):
        depth, name = 0, None
        for t in part:
            if t.value in ("(", "["):
                depth += 1
            elif t.value in (")", "]"):
                depth -= 1
            elif depth == 0 and is_variable(t) and t.value not in TYPE_WORDS:
                name = t.value
        if name is not None:
            params.append(name)
    return tuple(params)


def _model_from_bounds(source, toks, bounds, first_line):
    sig_start, name_idx, lparen, rparen, lbrace, rbrace = bounds
    parser = _FunctionParser(source, toks)
    parser.block(lbrace + 1, rbrace, set(), None)
    statements, flow, control = _finish(parser)
    return FunctionModel(
        name=toks[name_idx].value,
        params=_params(toks[lparen + 1:rparen]),
        statements=statements,
        source_span=(toks[sig_start].line, toks[rbrace].line),
        source=source,
        first_line=first_line,
        signature_end=toks[rparen].line,
        flow=flow,
        nesting=control,
    )


def parse_function(source, first_line=1):
    """Parse one complete C function into a :class:`FunctionModel`.

    ``first_line`` is the absolute line number of the first line of ``source``.
    """
    clean = blank_preprocessor(source)
    toks = tokenize(clean, first_line)
    opens = sum(1 for t in toks if t.kind == "op" and t.value == "{")
    closes = sum(1 for t in toks if t.kind == "op" and t.value == "}")
    if opens == 0:
        raise MalformedFunction("function has no body braces")
    if opens != closes:
        raise MalformedFunction(f"unbalanced braces ({opens} '{{' vs {closes} '}}')")
    found = list(_find_function_bounds(toks))
    if not found:
        raise MalformedFunction("no function definition found")
    return _model_from_bounds(source, toks, found[0], first_line)


def split_functions(source, first_line=1):
    """Cut a translation unit into ``(name, text, first_line)`` per function definition.

    Each text starts at the beginning of the signature's first line and ends at
    the closing brace, so it can be handed to :func:`parse_function`.
    """
    clean = blank_preprocessor(source)
    toks = tokenize(clean, first_line)
    out = []
    for sig_start, name_idx, _, _, _, rbrace in _find_function_bounds(toks):
        start = source.rfind("\n", 0, toks[sig_start].start) + 1
        out.append((toks[name_idx].value, source[start:toks[rbrace].end],
                    toks[sig_start].line))
    return out


def parse_source(source, first_line=1):
    """Parse every function of a file; returns ``(models, failures)``.

    ``failures`` lists ``(function name, exception)`` for functions that could
    not be parsed; the others are still returned.
    """
    models, failures = [], []
    for name, text, line in split_functions(source, first_line):
        try:
            models.append(parse_function(text, line))
        except (MalformedFunction, UnsupportedConstruct) as exc:
            failures.append((name, exc))
    return models, failures


def reaching_definitions(f):
    """Worklist reaching-definitions solver.

    Returns ``{node: set of (def node, identifier)}`` holding at node entry.
    """
    ids = [s.id for s in f.statements]
    flow = f.flow if f.flow is not None else tuple(zip(ids, ids[1:]))
    preds = {i: [] for i in ids}
    succs = {i: [] for i in ids}
    for a, b in flow:
        preds[b].append(a)
        succs[a].append(b)
    stmt = {s.id: s for s in f.statements}
    gen = {i: {(i, v) for v in stmt[i].defs} for i in ids}
    kill_vars = {i: stmt[i].defs for i in ids}
    out = {i: set(gen[i]) for i in ids}
    inn = {i: set() for i in ids}
    work = list(ids)
    queued = set(ids)
    while work:
        n = work.pop(0)
        queued.discard(n)
        new_in = set().union(*(out[p] for p in preds[n])) if preds[n] else set()
        inn[n] = new_in
        new_out = gen[n] | {(d, v) for d, v in new_in if v not in kill_vars[n]}
        if new_out != out[n]:
            out[n] = new_out
            for s in succs[n]:
                if s not in queued:
                    work.append(s)
                    queued.add(s)
    return inn


def build_pdg(f):
    """Data edges from reaching definitions, control edges from syntactic nesting."""
    reach = reaching_definitions(f)
    data = set()
    for s in f.statements:
        for d, v in reach[s.id]:
            if v in s.uses:
                data.add((d, s.id))
    control = set(f.nesting or ())
    return Pdg(function=f, nodes=frozenset(s.id for s in f.statements),
               data_edges=frozenset(data), control_edges=frozenset(control))


# -- call graph --------------------------------------------------------------------

def _assigned_call_targets(text):
    """``(callee, target)`` pairs for ``target = callee(...)`` inside ``text``."""
    toks = tokenize(text)
    out = []
    for i, t in enumerate(toks):
        if t.kind != "op" or t.value != "=":
            continue
        j = i + 1
        # skip a parenthesized cast such as "(char *)"
        if j < len(toks) and toks[j].value == "(":
            close = match_close(toks, j)
            inner = toks[j + 1:close] if close > 0 else []
            if inner and all(x.kind == "ident" or x.value == "*" for x in inner) \
                    and close + 1 < len(toks) and toks[close + 1].kind == "ident":
                j = close + 1
        if j + 1 < len(toks) and toks[j].kind == "ident" and toks[j + 1].value == "(":
            k, _ = _lvalue_before(toks, i)
            if k is not None:
                out.append((toks[j].value, toks[k].value))
    return out


def build_call_graph(functions):
    names = {f.name for f in functions}
    edges, returns = set(), set()
    for f in functions:
        for s in f.statements:
            for callee in s.calls or ((s.callee,) if s.callee else ()):
                if callee in names:
                    edges.add((f.name, callee, s.id))
            for callee, target in _assigned_call_targets(s.text):
                if callee in names:
                    returns.add((callee, target, s.id))
    return CallGraph(edges=frozenset(edges), returns_into=frozenset(returns))


# -- interchange document ------------------------------------------------------------

def store_pdg(pdg):
    """Serialize to the interchange document (a plain dict)."""
    f = pdg.function
    func = {"name": f.name, "params": list(f.params), "span": list(f.source_span)}
    if f.source is not None:
        func["source"] = f.source
        func["first_line"] = f.first_line
    if f.signature_end is not None and f.signature_end != f.source_span[0]:
        func["signature_end"] = f.signature_end
    nodes = []
    for s in sorted(f.statements, key=lambda s: s.id):
        node = {"id": s.id, "line": s.line, "kind": s.kind, "text": s.text,
                "defs": sorted(s.defs), "uses": sorted(s.uses)}
        if s.callee is not None:
            node["callee"] = s.callee
        if len(s.calls) > 1:
            node["calls"] = list(s.calls)
        if s.end_line is not None:
            node["end_line"] = s.end_line
        nodes.append(node)
    return {"function": func, "nodes": nodes,
            "data_edges": [list(e) for e in sorted(pdg.data_edges)],
            "control_edges": [list(e) for e in sorted(pdg.control_edges)]}


def _req(obj, key, path, types):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaViolation(f"{path}.{key}" if path else key, "missing field")
    val = obj[key]
    if not isinstance(val, types) or isinstance(val, bool) and bool not in _as_tuple(types):
        raise SchemaViolation(f"{path}.{key}" if path else key,
                              f"expected {_as_tuple(types)[0].__name__}")
    return val


def _as_tuple(types):
    return types if isinstance(types, tuple) else (types,)


def _nonneg(val, path):
    if not isinstance(val, int) or isinstance(val, bool) or val < 0:
        raise SchemaViolation(path, "expected non-negative integer")
    return val


def _str_list(val, path):
    if not isinstance(val, list) or not all(isinstance(x, str) for x in val):
        raise SchemaViolation(path, "expected list of strings")
    return val


def load_pdg(document):
    """Validate an interchange document (dict or JSON text) and build a :class:`Pdg`."""
    doc = json.loads(document) if isinstance(document, (str, bytes)) else document
    if not isinstance(doc, dict):
        raise SchemaViolation("$", "document must be an object")
    func = _req(doc, "function", "", dict)
    name = _req(func, "name", "function", str)
    params = _str_list(_req(func, "params", "function", list), "function.params")
    span = _req(func, "span", "function", list)
    if len(span) != 2:
        raise SchemaViolation("function.span", "expected [start, end]")
    span = (_nonneg(span[0], "function.span[0]"), _nonneg(span[1], "function.span[1]"))
    source = func.get("source")
    if source is not None and not isinstance(source, str):
        raise SchemaViolation("function.source", "expected string")
    first_line = _nonneg(func.get("first_line", 1), "function.first_line")
    sig_end = func.get("signature_end")
    if sig_end is not None:
        _nonneg(sig_end, "function.signature_end")

    statements, seen = [], set()
    for k, node in enumerate(_req(doc, "nodes", "", list)):
        path = f"nodes[{k}]"
        if not isinstance(node, dict):
            raise SchemaViolation(path, "expected object")
        nid = _nonneg(_req(node, "id", path, int), f"{path}.id")
        if nid in seen:
            raise SchemaViolation(f"{path}.id", f"duplicate node id {nid}")
        seen.add(nid)
        line = _req(node, "line", path, int)
        if isinstance(line, bool) or line < 1:
            raise SchemaViolation(f"{path}.line", "lines are 1-based")
        kind = _req(node, "kind", path, str)
        if kind not in STATEMENT_KINDS:
            raise SchemaViolation(f"{path}.kind", f"unknown kind {kind!r}")
        text = _req(node, "text", path, str)
        defs = _str_list(_req(node, "defs", path, list), f"{path}.defs")
        uses = _str_list(_req(node, "uses", path, list), f"{path}.uses")
        callee = node.get("callee")
        if callee is not None and not isinstance(callee, str):
            raise SchemaViolation(f"{path}.callee", "expected string")
        if kind == "call" and callee is None:
            raise SchemaViolation(f"{path}.callee", "call statements require a callee")
        calls = node.get("calls")
        if calls is not None:
            calls = tuple(_str_list(calls, f"{path}.calls"))
        else:
            calls = (callee,) if callee is not None else ()
        end_line = node.get("end_line")
        if end_line is not None:
            _nonneg(end_line, f"{path}.end_line")
        statements.append(Statement(id=nid, line=line, kind=kind, text=text,
                                    defs=frozenset(defs), uses=frozenset(uses),
                                    callee=callee, calls=calls, end_line=end_line))

    edge_sets = {}
    for key in ("data_edges", "control_edges"):
        edges = set()
        for k, e in enumerate(_req(doc, key, "", list)):
            path = f"{key}[{k}]"
            if not isinstance(e, list) or len(e) != 2:
                raise SchemaViolation(path, "expected [from, to]")
            for end, val in (("from", e[0]), ("to", e[1])):
                _nonneg(val, f"{path}.{end}")
                if val not in seen:
                    raise SchemaViolation(f"{path}.{end}", f"dangling endpoint {val}")
            edges.add((e[0], e[1]))
        edge_sets[key] = frozenset(edges)

    statements.sort(key=lambda s: s.id)
    model = FunctionModel(name=name, params=tuple(params), statements=tuple(statements),
                          source_span=span, source=source, first_line=first_line,
                          signature_end=sig_end)
    return Pdg(function=model, nodes=frozenset(seen), data_edges=edge_sets["data_edges"],
               control_edges=edge_sets["control_edges"])


def dumps_pdg(pdg, **kwargs):
    return json.dumps(store_pdg(pdg), **kwargs)


__all__ = [
    "Statement", "FunctionModel", "Pdg", "CallGraph", "Token", "STATEMENT_KINDS",
    "parse_function", "parse_source", "split_functions", "build_pdg",
    "reaching_definitions", "analyze_expression", "load_pdg", "store_pdg",
    "dumps_pdg", "build_call_graph",
]
