"""Vulnerability records, CVSS severity bands, chronological splits and class stats."""
import datetime as dt
import json
import math
import re
from dataclasses import dataclass, fields, replace

from .errors import EmptySplit, InvariantViolation, OutOfRange, ParseError

SEVERITY_NAMES = ("low", "medium", "high", "critical")
# lower bounds of the Medium, High and Critical CVSS 3.0 bands
BAND_EDGES = (4.0, 7.0, 9.0)


def severity_from_score(score):
    """CVSS 3.0 score -> 0 (low) .. 3 (critical). A score of 0.0 counts as low."""
    try:
        s = float(score)
    except (TypeError, ValueError):
        raise OutOfRange(score) from None
    if not (0.0 <= s <= 10.0):  # also rejects NaN
        raise OutOfRange(score)
    return sum(s >= edge for edge in BAND_EDGES)


def parse_date(value):
    """ISO ``YYYY-MM-DD`` or compact ``YYYYMMDD``."""
    if isinstance(value, dt.date):
        return value
    text = str(value).strip()
    if re.fullmatch(r"\d{8}", text):
        return dt.datetime.strptime(text, "%Y%m%d").date()
    return dt.date.fromisoformat(text)


@dataclass(frozen=True)
class VulnRecord:
    id: str
    code: str
    cvss3_score: float
    severity: int
    published: dt.date
    cve_id: str | None = None
    cwe_id: str | None = None
    suggestion: str | None = None
    description: str | None = None
    # set when a suggestion was cleared and should be generated again
    needs_suggestion: bool = False

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["published"] = self.published.isoformat()
        if not self.needs_suggestion:
            del d["needs_suggestion"]
        return d


_REQUIRED = ("id", "code", "cvss3_score", "published")
_OPTIONAL_TEXT = ("cve_id", "cwe_id", "suggestion", "description")


def record_from_dict(obj, line=None):
    if not isinstance(obj, dict):
        raise ParseError(line, "record is not an object")
    for key in _REQUIRED:
        if key not in obj:
            raise ParseError(line, f"missing field {key!r}")
    rid = str(obj["id"])
    score = obj["cvss3_score"]
    if isinstance(score, bool) or not isinstance(score, (int, float)):
        raise ParseError(line, f"cvss3_score must be a number, got {score!r}")
    if not (0.0 <= score <= 10.0):
        raise OutOfRange(score, line)
    expected = severity_from_score(score)
    stored = obj.get("severity", expected)
    if stored != expected or isinstance(stored, bool):
        raise InvariantViolation(rid, "severity",
                                 f"is {stored!r} but score {score} implies {expected}")
    try:
        published = parse_date(obj["published"])
    except ValueError:
        raise InvariantViolation(rid, "published", f"is not a date: {obj['published']!r}") from None
    if not isinstance(obj["code"], str):
        raise ParseError(line, "code must be text")
    extra = {}
    for key in _OPTIONAL_TEXT:
        val = obj.get(key)
        if val is not None and not isinstance(val, str):
            raise ParseError(line, f"{key} must be text or null")
        extra[key] = val
    return VulnRecord(id=rid, code=obj["code"], cvss3_score=float(score), severity=expected,
                      published=published, needs_suggestion=bool(obj.get("needs_suggestion", False)),
                      **extra)


def iter_records(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, f"invalid JSON: {exc.msg}") from None
            yield record_from_dict(obj, lineno)


def load_records(path):
    return list(iter_records(path))


def write_records(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


# -- splitting ---------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    train_end: dt.date
    eval_start: dt.date

    def __post_init__(self):
        object.__setattr__(self, "train_end", parse_date(self.train_end))
        object.__setattr__(self, "eval_start", parse_date(self.eval_start))
        if not self.train_end < self.eval_start:
            raise ValueError("train_end must precede eval_start")


# cut used for the MegaVul experiments
DEFAULT_SPLIT = SplitSpec(dt.date(2022, 8, 17), dt.date(2022, 8, 18))


def split_by_time(records, spec=DEFAULT_SPLIT, val_fraction=0.5):
    """``(train, validation, test)``.

    Train is every record published on or before ``train_end``.  The rest is
    ordered by (date, id); the first ``floor(val_fraction * n)`` go to
    validation and the remainder to test.
    """
    if not (0.0 < val_fraction < 1.0):
        raise ValueError("val_fraction must lie strictly between 0 and 1")
    order = sorted(records, key=lambda r: (r.published, r.id))
    train = [r for r in order if r.published <= spec.train_end]
    pool = [r for r in order if r.published > spec.train_end]
    n_val = math.floor(val_fraction * len(pool))
    parts = {"train": train, "validation": pool[:n_val], "test": pool[n_val:]}
    for name, part in parts.items():
        if not part:
            raise EmptySplit(name)
    return parts["train"], parts["validation"], parts["test"]


# -- suggestion cleanup ------------------------------------------------------------

_COMMENT_MARKERS = ("//", "/*", "*", "*/", "#")


def is_comment_only(text):
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    return bool(lines) and all(ln.startswith(_COMMENT_MARKERS) for ln in lines)


def dedup_suggestions(records):
    """Clear duplicate and comment-only suggestions, flagging them for regeneration.

    The first record (in input order) carrying a given text keeps it.
    """
    seen = set()
    out = []
    for r in records:
        s = r.suggestion
        if s is None:
            out.append(r)
            continue
        if s in seen or is_comment_only(s):
            out.append(replace(r, suggestion=None, needs_suggestion=True))
            continue
        seen.add(s)
        out.append(r)
    return out


# -- statistics ----------------------------------------------------------------------

def stats(records):
    labels = [r.severity if isinstance(r, VulnRecord) else int(r) for r in records]
    return class_report(labels)


def class_report(labels):
    counts = [0, 0, 0, 0]
    for y in labels:
        counts[y] += 1
    total = sum(counts)
    fractions = [c / total if total else 0.0 for c in counts]
    return {"total": total,
            "classes": [{"label": k, "name": SEVERITY_NAMES[k], "count": counts[k],
                         "fraction": fractions[k]} for k in range(4)]}


def stats_table(report):
    rows = [f"{'label':<6}{'name':<10}{'count':>8}{'fraction':>10}"]
    for c in report["classes"]:
        rows.append(f"{c['label']:<6}{c['name']:<10}{c['count']:>8}{c['fraction']:>10.4f}")
    rows.append(f"{'':<6}{'total':<10}{report['total']:>8}")
    return "\n".join(rows)
