"""Small C lexer shared by the parser, POI detection and feature hashing."""
import re
import warnings
from typing import NamedTuple

KEYWORDS = frozenset("""
auto break case char const continue default do double else enum extern float
for goto if inline int long register restrict return short signed sizeof static
struct switch typedef union unsigned void volatile while _Bool _Complex bool
""".split())

TYPE_WORDS = frozenset("""
char int long short signed unsigned float double void _Bool bool const volatile
static extern register auto inline restrict struct union enum
size_t ssize_t off_t pid_t uid_t gid_t mode_t time_t ptrdiff_t intptr_t
uintptr_t int8_t int16_t int32_t int64_t uint8_t uint16_t uint32_t uint64_t
u8 u16 u32 u64 s8 s16 s32 s64 FILE wchar_t socklen_t
""".split())

# never treated as variable uses
CONSTANT_NAMES = frozenset({"NULL", "true", "false", "EOF"})

ASSIGN_OPS = frozenset({"=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=",
                        "<<=", ">>="})
INCDEC_OPS = frozenset({"++", "--"})

_TOKEN_RE = re.compile(r"""
  (?P<nl>\n)
| (?P<ws>[ \t\r\f\v]+|\\\n)
| (?P<comment>//[^\n]*|/\*.*?\*/)
| (?P<string>L?"(?:\\.|[^"\\\n])*")
| (?P<char>L?'(?:\\.|[^'\\\n])*')
| (?P<number>(?:0[xX][0-9a-fA-F]+|\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)[uUlLfF]*)
| (?P<ident>[A-Za-z_]\w*)
| (?P<op>>>=|<<=|\.\.\.|->|\+\+|--|<<|>>|<=|>=|==|!=|&&|\|\||\+=|-=|\*=|/=|%=|&=|\|=|\^=
        |[-+*/%&|^~!<>=?:;,.(){}\[\]])
| (?P<other>.)
""", re.S | re.X)

_PP_LINE_RE = re.compile(r"^[ \t]*#(?:[^\n]*\\\n)*[^\n]*", re.M)


class Token(NamedTuple):
    kind: str  # ident, number, string, char, op, other
    value: str
    line: int
    start: int
    end: int


def blank_preprocessor(source):
    """Replace ``#`` directive lines with spaces, keeping offsets and line numbers."""
    found = []

    def repl(m):
        found.append(m.group(0).strip().splitlines()[0])
        return re.sub(r"[^\n]", " ", m.group(0))

    out = _PP_LINE_RE.sub(repl, source)
    if found:
        warnings.warn(f"skipped {len(found)} preprocessor line(s), first: {found[0]!r}",
                      stacklevel=3)
    return out


def tokenize(source, first_line=1, keep_comments=False):
    """Tokenize C source. Line numbers start at ``first_line``."""
    tokens = []
    line = first_line
    for m in _TOKEN_RE.finditer(source):
        kind = m.lastgroup
        text = m.group(0)
        if kind == "nl":
            line += 1
            continue
        if kind == "ws":
            line += text.count("\n")
            continue
        if kind == "comment":
            if keep_comments:
                tokens.append(Token(kind, text, line, m.start(), m.end()))
            line += text.count("\n")
            continue
        tokens.append(Token(kind, text, line, m.start(), m.end()))
    return tokens


def is_variable(tok):
    return (tok.kind == "ident" and tok.value not in KEYWORDS
            and tok.value not in CONSTANT_NAMES)


def match_close(tokens, i):
    """Index of the bracket closing ``tokens[i]``; -1 if unbalanced."""
    pairs = {"(": ")", "[": "]", "{": "}"}
    open_, close = tokens[i].value, pairs[tokens[i].value]
    depth = 0
    for j in range(i, len(tokens)):
        v = tokens[j].value
        if tokens[j].kind != "op":
            continue
        if v == open_:
            depth += 1
        elif v == close:
            depth -= 1
            if depth == 0:
                return j
    return -1


def match_open(tokens, j):
    """Index of the bracket opening ``tokens[j]``; -1 if unbalanced."""
    pairs = {")": "(", "]": "[", "}": "{"}
    close, open_ = tokens[j].value, pairs[tokens[j].value]
    depth = 0
    for i in range(j, -1, -1):
        v = tokens[i].value
        if tokens[i].kind != "op":
            continue
        if v == close:
            depth += 1
        elif v == open_:
            depth -= 1
            if depth == 0:
                return i
    return -1


def split_top_level(tokens, sep=","):
    """Split on ``sep`` tokens that are not nested in any bracket."""
    parts, cur, depth = [], [], 0
    for t in tokens:
        if t.kind == "op" and t.value in "([{":
            depth += 1
        elif t.kind == "op" and t.value in ")]}":
            depth -= 1
        if depth == 0 and t.kind == "op" and t.value == sep:
            parts.append(cur)
            cur = []
        else:
            cur.append(t)
    parts.append(cur)
    return parts
