"""One gateway for every question the pipeline asks a multimodal language model.

Backends turn a rendered prompt into raw text. :func:`ask` renders the prompt,
calls the backend, extracts and validates the choice, retries on invalid
output and logs every exchange to an optional JSON-lines transcript.
"""
from __future__ import annotations

import base64
import json
import os
import re
import socket
import string
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Sequence

KINDS = ("PartIdentify", "ConceptSelect", "GraspSelect", "ForceSelect")
SELECT_KINDS = ("ConceptSelect", "GraspSelect", "ForceSelect")
PLACEHOLDERS = ("task", "options", "image")
DEFAULT_TIMEOUT = 30.0
MAX_ATTEMPTS = 3


class ReasonerError(Exception):
    pass


class MissingPlaceholder(ReasonerError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class InvalidChoice(ReasonerError, ValueError):
    def __init__(self, message, raw=()):
        super().__init__(message)
        self.raw = list(raw)


class BackendUnreachable(ReasonerError, ConnectionError):
    pass


class Timeout(ReasonerError, TimeoutError):
    pass


@dataclass(frozen=True)
class ReasonerQuery:
    kind: str
    task: str
    options: tuple = ()  # ((id, synopsis), ...)
    image: Optional[str] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown query kind {self.kind!r}")
        object.__setattr__(self, "options", tuple((str(i), str(s)) for i, s in self.options))
        if self.kind in SELECT_KINDS and not self.options:
            raise ValueError(f"{self.kind} query needs at least one option")

    @property
    def option_ids(self) -> list[str]:
        return [i for i, _ in self.options]


@dataclass(frozen=True)
class ReasonerAnswer:
    chosen: str
    rationale: str = ""
    raw: str = ""


@dataclass(frozen=True)
class PromptTemplate:
    kind: str
    text: str
    version: str = "v1"


def load_template(kind: str, version: str = "v1", directory=None) -> PromptTemplate:
    """Prompt template ``<kind>.<version>.txt`` from ``directory`` or the package."""
    name = f"{kind}.{version}.txt"
    if directory is None:
        text = (resources.files("conceptkit") / "prompts" / name).read_text(encoding="utf-8")
    else:
        text = Path(directory, name).read_text(encoding="utf-8")
    return PromptTemplate(kind, text, version)


def format_options(options: Sequence[tuple]) -> str:
    return "\n".join(f"{k}. {i}: {s}" for k, (i, s) in enumerate(options, 1))


def render_prompt(template: PromptTemplate, query: ReasonerQuery) -> str:
    if template.kind != query.kind:
        raise ValueError(f"template is for {template.kind}, query is {query.kind}")
    fields = {f for _, f, _, _ in string.Formatter().parse(template.text) if f is not None}
    unknown = fields - set(PLACEHOLDERS)
    if unknown:
        raise MissingPlaceholder(f"template uses unresolvable placeholders {sorted(unknown)}")
    required = {"task"} | ({"options"} if query.kind in SELECT_KINDS else set())
    missing = required - fields
    if missing:
        raise MissingPlaceholder(f"template lacks {{{sorted(missing)[0]}}}")
    text = template.text.format(task=query.task, options=format_options(query.options),
                                image=query.image or "(none)")
    if not text.strip():
        raise MissingPlaceholder("rendered prompt is empty")
    return text


# ---------------------------------------------------------------------------
# backends

def _words(text: str) -> list[str]:
    return re.findall(r"[a-z0-9_]+", text.lower())


class MockBackend:
    """Keyword rules: a rule fires when every word of its pattern occurs in the
    task. Among firing rules whose choice is on offer, the longest pattern wins
    (declaration order breaks ties); otherwise the fallback is used."""

    def __init__(self, rules, fallback: Optional[str] = None):
        if isinstance(rules, Mapping):
            rules = list(rules.items())
        self.rules = []
        for pattern, choice in rules:
            words = tuple(_words(pattern)) if isinstance(pattern, str) else tuple(pattern)
            if not words:
                raise ValueError("empty rule pattern")
            self.rules.append((words, str(choice)))
        self.fallback = fallback

    def choose(self, query: ReasonerQuery) -> tuple[str, str]:
        task = set(_words(query.task))
        offered = set(query.option_ids) if query.options else None
        best = None
        for words, choice in self.rules:
            if offered is not None and choice not in offered:
                continue
            if all(w in task for w in words) and (best is None or len(words) > len(best[0])):
                best = (words, choice)
        if best is not None:
            return best[1], f"task mentions {' '.join(best[0])!r}"
        if self.fallback is not None and (offered is None or self.fallback in offered):
            return self.fallback, "fallback"
        if query.options:
            return query.options[0][0], "fallback to the first option"
        return "", "no rule matched"

    def complete(self, prompt: str, query: ReasonerQuery, timeout: float = DEFAULT_TIMEOUT) -> str:
        chosen, why = self.choose(query)
        return f"ANSWER: {chosen}\n{why}"


def mock_backend(rules, fallback: Optional[str] = None) -> MockBackend:
    return MockBackend(rules, fallback)


@lru_cache(maxsize=None)
def _default_rules_text() -> str:
    return (resources.files("conceptkit") / "data" / "mock_rules.json").read_text()


class DefaultMock:
    """The shipped rule table, one :class:`MockBackend` per query kind."""

    def __init__(self, table: Optional[dict] = None):
        table = table or json.loads(_default_rules_text())
        self.backends = {k: MockBackend(table[k]["rules"], table[k].get("fallback")) for k in KINDS}

    def complete(self, prompt: str, query: ReasonerQuery, timeout: float = DEFAULT_TIMEOUT) -> str:
        return self.backends[query.kind].complete(prompt, query, timeout)


class HttpBackend:
    """Minimal chat-completion client. The token is read from the environment
    variable named in the configuration, never from the configuration itself."""

    def __init__(self, endpoint: str, model: str, token_env: Optional[str] = None,
                 timeout: float = DEFAULT_TIMEOUT, send_images: bool = False):
        self.endpoint = endpoint
        self.model = model
        self.token_env = token_env
        self.timeout = timeout
        self.send_images = send_images

    def _content(self, prompt: str, query: ReasonerQuery):
        if not (self.send_images and query.image and os.path.isfile(query.image)):
            return prompt
        data = base64.b64encode(Path(query.image).read_bytes()).decode("ascii")
        return [{"type": "text", "text": prompt},
                {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{data}"}}]

    def complete(self, prompt: str, query: ReasonerQuery, timeout: Optional[float] = None) -> str:
        payload = {"model": self.model, "temperature": 0,
                   "messages": [{"role": "user", "content": self._content(prompt, query)}]}
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.token_env, "") if self.token_env else ""
        if token:
            headers["Authorization"] = f"Bearer {token}"
        req = urllib.request.Request(self.endpoint, json.dumps(payload).encode("utf-8"), headers)
        try:
            with urllib.request.urlopen(req, timeout=timeout or self.timeout) as resp:
                body = json.loads(resp.read().decode("utf-8"))
        except (socket.timeout, TimeoutError) as exc:
            raise Timeout(f"no reply from {self.endpoint} within {timeout or self.timeout:g} s") from exc
        except urllib.error.HTTPError as exc:
            raise BackendUnreachable(f"{self.endpoint} answered HTTP {exc.code}") from exc
        except urllib.error.URLError as exc:
            if isinstance(exc.reason, (socket.timeout, TimeoutError)):
                raise Timeout(f"no reply from {self.endpoint}") from exc
            raise BackendUnreachable(f"{self.endpoint}: {exc.reason}") from exc
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendUnreachable(f"malformed reply from {self.endpoint}") from exc


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class ReasonerConfig:
    backend: str = "mock"
    endpoint: str = ""
    model: str = ""
    token_env: str = ""
    timeout: float = DEFAULT_TIMEOUT
    transcript: str = ""
    send_images: bool = False


def parse_config(text: str) -> ReasonerConfig:
    """``key = value`` lines; ``#`` starts a comment; values may be quoted."""
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if len(val) >= 2 and val[0] == val[-1] and val[0] in "\"'":
            val = val[1:-1]
        values[key] = val
    known = set(ReasonerConfig.__dataclass_fields__)
    extra = set(values) - known
    if extra:
        raise ValueError(f"unknown keys {sorted(extra)}")
    if "token" in values or "api_key" in values:
        raise ValueError("put the token in an environment variable and name it with token_env")
    if "timeout" in values:
        values["timeout"] = float(values["timeout"])
        if not values["timeout"] > 0:
            raise ValueError("timeout must be positive")
    if "send_images" in values:
        values["send_images"] = values["send_images"].lower() in ("1", "true", "yes")
    cfg = ReasonerConfig(**values)
    if cfg.backend not in ("mock", "live"):
        raise ValueError(f"backend must be mock or live, got {cfg.backend!r}")
    if cfg.backend == "live" and not (cfg.endpoint and cfg.model):
        raise ValueError("live backend needs endpoint and model")
    return cfg


def load_config(path) -> ReasonerConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def make_backend(cfg: ReasonerConfig):
    if cfg.backend == "mock":
        return DefaultMock()
    return HttpBackend(cfg.endpoint, cfg.model, cfg.token_env or None, cfg.timeout, cfg.send_images)


# ---------------------------------------------------------------------------
# asking

_ANSWER = re.compile(r"ANSWER:\s*([A-Za-z0-9_\-]+)")


def extract_choice(raw: str, query: ReasonerQuery) -> Optional[str]:
    """The option the reply names: an ``ANSWER:`` line if present, otherwise the
    single option id mentioned in the text."""
    m = _ANSWER.search(raw)
    if query.kind == "PartIdentify":
        word = m.group(1) if m else (raw.split() or [""])[0]
        if query.options and word not in query.option_ids:
            return None
        return word or None
    ids = query.option_ids
    if m:
        return m.group(1) if m.group(1) in ids else None
    named = [i for i in ids if re.search(rf"(?<![A-Za-z0-9_]){re.escape(i)}(?![A-Za-z0-9_])", raw)]
    return named[0] if len(named) == 1 else None


@dataclass
class Transcript:
    path: Optional[str] = None
    records: list = field(default_factory=list)

    def log(self, record: dict):
        self.records.append(record)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def ask(backend, query: ReasonerQuery, template: Optional[PromptTemplate] = None,
        timeout: float = DEFAULT_TIMEOUT, attempts: int = MAX_ATTEMPTS,
        transcript: Optional[Transcript] = None) -> ReasonerAnswer:
    if query.kind in SELECT_KINDS and len(query.options) == 1:
        return ReasonerAnswer(query.options[0][0], "only option", "")
    prompt = render_prompt(template or load_template(query.kind), query)
    raws = []
    for attempt in range(1, attempts + 1):
        t0 = time.monotonic()
        raw = backend.complete(prompt, query, timeout)
        if time.monotonic() - t0 > timeout:
            raise Timeout(f"backend took longer than {timeout:g} s")
        raws.append(raw)
        chosen = extract_choice(raw, query)
        if transcript is not None:
            transcript.log({"kind": query.kind, "task": query.task, "attempt": attempt,
                            "prompt": prompt, "raw": raw, "chosen": chosen})
        if chosen is not None:
            rationale = _ANSWER.sub("", raw).strip()
            return ReasonerAnswer(chosen, rationale, raw)
    raise InvalidChoice(f"{query.kind}: no valid option after {attempts} attempts", raws)
