"""Vulnerability intention reports obtained from an LLM.

A report has three sections: exploitability (split into the condition an
attacker needs and the way the code is reached), impact and scope.
"""
import hashlib
import json
import os
import re
import tempfile
import threading
import time
from dataclasses import dataclass

from .errors import (EmptyCode, EmptySection, MissingApiKey, MissingSection,
                     ProviderError, ProviderExhausted, VirParseError)

DEFAULT_API_KEY_ENV = "VULN_ASSESS_API_KEY"
CODE_PLACEHOLDER = "{{CODE}}"
_ESCAPED_PLACEHOLDER = "{ {CODE} }"

_INSTRUCTIONS = """\
You are a software security engineer. You review C functions that are known to
contain a vulnerability and explain what an attacker can do with it. Use your
knowledge of secure coding, memory safety and common weakness patterns. Reason
only about the code you are given and keep every statement concrete."""

_OUTPUT_FORMAT = """\
Answer with exactly three labeled sections and nothing else:
Exploitability:
Condition: <what must hold before the flaw can be exploited>
Way: <how an attacker reaches and triggers the vulnerable code>
Impact:
<the consequence of a successful exploit, e.g. data tampering, information
leakage, denial of service, code execution>
Scope:
<how far the damage spreads: this function, the component, the whole system
or connected systems>"""


@dataclass(frozen=True)
class PromptTemplate:
    task_instructions: str = _INSTRUCTIONS
    output_format: str = _OUTPUT_FORMAT
    code_placeholder: str = CODE_PLACEHOLDER
    version: str = "vir-prompt-1"

    def text(self):
        return (f"{self.task_instructions}\n\n{self.output_format}\n\n"
                f"Code:\n{self.code_placeholder}\n")


@dataclass(frozen=True)
class Vir:
    condition: str
    way: str
    impact: str
    scope: str
    provider_id: str = ""
    template_version: str = ""

    def to_dict(self):
        return {"exploitability": {"condition": self.condition, "way": self.way},
                "impact": self.impact, "scope": self.scope,
                "provider_id": self.provider_id,
                "template_version": self.template_version}

    @property
    def exploitability(self):
        return {"condition": self.condition, "way": self.way}

    @classmethod
    def from_dict(cls, d):
        exp = d["exploitability"]
        return cls(condition=exp["condition"], way=exp["way"], impact=d["impact"],
                   scope=d["scope"], provider_id=d.get("provider_id", ""),
                   template_version=d.get("template_version", ""))


@dataclass(frozen=True)
class ProviderConfig:
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    model_name: str = "gpt-3.5-turbo"
    api_key_env: str = DEFAULT_API_KEY_ENV
    max_retries: int = 3
    timeout: float = 60.0
    max_concurrent: int = 4
    cache_dir: str | None = None
    backoff: float = 1.0  # seconds, doubled per retry

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")


def build_prompt(code, template=None):
    template = template or PromptTemplate()
    if not code or not code.strip():
        raise EmptyCode("code segment is empty")
    body = template.text()
    head, tail = body.split(template.code_placeholder, 1)
    return head + code.replace(template.code_placeholder, _ESCAPED_PLACEHOLDER) + tail


# -- parsing ----------------------------------------------------------------------

_SECTION_ALIASES = {"exploitability": "exploitability", "exp": "exploitability",
                    "impact": "impact", "imp": "impact", "scope": "scope", "sco": "scope"}
_HEADER_RE = re.compile(
    r"^[ \t]*(?:#{1,6}[ \t]*)?(?:[-*•][ \t]+)?(?:\d+[.)][ \t]*)?(?:\*\*|__)?"
    r"(exploitability|impact|scope|exp|imp|sco)\b"
    r"[ \t]*(?:\([^)\n]*\))?[ \t]*(?:\*\*|__)?[ \t]*"
    r"(?::(?:\*\*|__)?[ \t]*(.*)|$)",
    re.I | re.M)
_BULLET_RE = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s+")
_LABEL_RE = re.compile(r"^\s*(?:[-*•]\s+)?(?:\*\*)?(condition|way)(?:\*\*)?\s*:(?:\*\*)?\s*",
                       re.I | re.M)
_SENTENCE_END_RE = re.compile(r"(?<=[.!?])\s+")


def _clean(text):
    lines = [_BULLET_RE.sub("", ln).strip() for ln in text.strip().splitlines()]
    while lines and not lines[0]:
        lines.pop(0)
    while lines and not lines[-1]:
        lines.pop()
    return "\n".join(lines)


def _split_exploitability(body):
    labels = list(_LABEL_RE.finditer(body))
    if labels:
        parts = {}
        for k, m in enumerate(labels):
            end = labels[k + 1].start() if k + 1 < len(labels) else len(body)
            key = m.group(1).lower()
            parts.setdefault(key, _clean(body[m.end():end]))
        if "condition" in parts:
            return parts["condition"], parts.get("way", "")
    text = _clean(body)
    pieces = _SENTENCE_END_RE.split(text, maxsplit=1)
    return pieces[0].strip(), (pieces[1].strip() if len(pieces) > 1 else "")


def parse_vir(response, provider_id="", template_version=""):
    """Locate the three sections (any order, case-insensitive) and build a :class:`Vir`."""
    headers = [(m, _SECTION_ALIASES[m.group(1).lower()]) for m in _HEADER_RE.finditer(response)]
    found = {}
    for k, (m, name) in enumerate(headers):
        if name in found:
            continue
        end = headers[k + 1][0].start() if k + 1 < len(headers) else len(response)
        start = m.start(2) if m.group(2) is not None else m.end()
        found[name] = response[start:end]
    for name in ("exploitability", "impact", "scope"):
        if name not in found:
            raise MissingSection(name)
    condition, way = _split_exploitability(found["exploitability"])
    impact, scope = _clean(found["impact"]), _clean(found["scope"])
    if not condition:
        raise EmptySection("exploitability")
    if not impact:
        raise EmptySection("impact")
    if not scope:
        raise EmptySection("scope")
    return Vir(condition, way, impact, scope, provider_id, template_version)


def render_vir(vir):
    """Canonical text form; :func:`parse_vir` inverts it."""
    return (f"Exploitability:\nCondition: {vir.condition}\nWay: {vir.way}\n"
            f"Impact:\n{vir.impact}\nScope:\n{vir.scope}")


# -- providers --------------------------------------------------------------------

class Provider:
    """Turns a prompt into response text. Subclasses set ``provider_id``."""

    provider_id = "provider"
    requires_key = False

    def complete(self, prompt):
        raise NotImplementedError


class HttpProvider(Provider):
    """OpenAI-style chat-completion endpoint."""

    requires_key = True

    def __init__(self, cfg):
        key = os.environ.get(cfg.api_key_env)
        if not key:
            raise MissingApiKey(cfg.api_key_env)
        self.cfg = cfg
        self._key = key
        self.provider_id = f"http:{cfg.model_name}"

    def complete(self, prompt):
        import requests

        try:
            resp = requests.post(
                self.cfg.endpoint,
                headers={"Authorization": f"Bearer {self._key}",
                         "Content-Type": "application/json"},
                json={"model": self.cfg.model_name, "temperature": 0,
                      "messages": [{"role": "user", "content": prompt}]},
                timeout=self.cfg.timeout)
        except requests.RequestException as exc:
            raise ProviderError(str(exc)) from exc
        if resp.status_code != 200:
            raise ProviderError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"unexpected response body: {exc}") from exc


_CODE_RE = re.compile(r"Code:\n(.*)\Z", re.S)


def canned_report(prompt):
    """Deterministic well-formed report derived from the code in ``prompt``."""
    m = _CODE_RE.search(prompt)
    code = m.group(1) if m else prompt
    words = re.findall(r"[A-Za-z_]\w*", code)
    name = words[1] if len(words) > 1 else "the function"
    risky = sorted({w for w in words if w in ("strcpy", "strcat", "sprintf", "memcpy",
                                              "system", "popen", "gets", "free",
                                              "malloc", "read", "recv")})
    api = ", ".join(risky) if risky else "unchecked arithmetic"
    return (f"Exploitability:\nCondition: Input reaching {name} is not validated before "
            f"{api} uses it.\nWay: An attacker supplies crafted input through the "
            f"callers of {name}.\n"
            f"Impact:\nMemory corruption or unintended behaviour caused by {api}.\n"
            f"Scope:\nThe process running {name} and data it can access.")


class MockProvider(Provider):
    """Fixture-backed provider for tests and offline runs.

    ``responses`` may be a string, a list (cycled in order) or a callable
    taking the prompt; by default :func:`canned_report` is used.  ``calls``
    counts requests and ``max_in_flight`` records the concurrency high-water
    mark.
    """

    provider_id = "mock"

    def __init__(self, responses=None, delay=0.0, fail_with=None):
        self.responses = responses
        self.delay = delay
        self.fail_with = fail_with
        self.calls = 0
        self.in_flight = 0
        self.max_in_flight = 0
        self._lock = threading.Lock()

    def complete(self, prompt):
        with self._lock:
            self.calls += 1
            n = self.calls
            self.in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)
        try:
            if self.delay:
                time.sleep(self.delay)
            if self.fail_with is not None:
                raise self.fail_with
            r = self.responses
            if r is None:
                return canned_report(prompt)
            if callable(r):
                return r(prompt)
            if isinstance(r, str):
                return r
            return r[(n - 1) % len(r)]
        finally:
            with self._lock:
                self.in_flight -= 1


def make_provider(kind, cfg):
    if kind == "mock":
        return MockProvider()
    if kind == "http":
        return HttpProvider(cfg)
    raise ValueError(f"unknown provider {kind!r}")


# -- generation with retry + cache ------------------------------------------------

def cache_key(prompt, model_name, template_version):
    h = hashlib.sha256()
    for part in (prompt, model_name, template_version):
        h.update(part.encode("utf-8"))
        h.update(b"\0")
    return h.hexdigest()


class VirCache:
    """Content-addressed on-disk cache: ``<dir>/<first-2-hex>/<hash>.vir``."""

    def __init__(self, directory):
        self.directory = directory

    def path(self, key):
        return os.path.join(self.directory, key[:2], key + ".vir")

    def get(self, key):
        try:
            with open(self.path(key), encoding="utf-8") as fh:
                return Vir.from_dict(json.load(fh))
        except FileNotFoundError:
            return None
        except (ValueError, KeyError):
            return None  # torn or foreign file: regenerate

    def put(self, key, vir):
        path = self.path(key)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(vir.to_dict(), fh, sort_keys=True)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


class VirGenerator:
    """Shared entry point for concurrent callers.

    At most ``cfg.max_concurrent`` provider requests are in flight at once.
    ``provider_calls`` and ``cache_hits`` are running counters.
    """

    def __init__(self, cfg=None, template=None, provider=None, sleep=time.sleep):
        self.cfg = cfg or ProviderConfig()
        self.template = template or PromptTemplate()
        self.provider = provider if provider is not None else HttpProvider(self.cfg)
        if self.provider.requires_key and not os.environ.get(self.cfg.api_key_env):
            raise MissingApiKey(self.cfg.api_key_env)
        self.cache = VirCache(self.cfg.cache_dir) if self.cfg.cache_dir else None
        self._gate = threading.BoundedSemaphore(self.cfg.max_concurrent)
        self._sleep = sleep
        self._lock = threading.Lock()
        self.provider_calls = 0
        self.cache_hits = 0

    def generate(self, code):
        prompt = build_prompt(code, self.template)
        key = cache_key(prompt, self.cfg.model_name, self.template.version)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                with self._lock:
                    self.cache_hits += 1
                return hit
        last = None
        attempts = self.cfg.max_retries + 1
        for attempt in range(attempts):
            if attempt and self.cfg.backoff:
                self._sleep(self.cfg.backoff * 2 ** (attempt - 1))
            try:
                with self._gate:
                    with self._lock:
                        self.provider_calls += 1
                    text = self.provider.complete(prompt)
                vir = parse_vir(text, self.provider.provider_id, self.template.version)
            except (ProviderError, VirParseError, OSError, TimeoutError) as exc:
                last = exc
                continue
            if self.cache is not None:
                self.cache.put(key, vir)
            return vir
        raise ProviderExhausted(attempts, last)


def generate_vir(code, cfg=None, template=None, provider=None):
    """One-shot convenience wrapper around :class:`VirGenerator`."""
    return VirGenerator(cfg, template, provider).generate(code)
