"""Provider-agnostic LLM access: templating, tagged/JSON output parsing,
rate limiting, and a record/replay store for offline deterministic runs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field

from .templates import GENERATION_TEMPERATURE, JUDGE_TEMPERATURE, PURPOSE_TAGS, TEMPLATES

log = logging.getLogger("subsql.llm_gateway")

_PLACEHOLDER_RE = re.compile(r"\{([A-Z][A-Z0-9_]*)\}")

# purposes that run deterministic (judge/filter-class) decoding
_COLD_PURPOSES = {"judge", "keywords", "column_filter"}


class GatewayError(RuntimeError):
    pass


class UnknownTemplateError(GatewayError):
    pass


class MissingBindingError(GatewayError):
    pass


class ReplayMissError(GatewayError):
    pass


class TaggedParseError(GatewayError):
    pass


class JsonParseError(GatewayError):
    pass


def default_temperature(purpose_tag: str) -> float:
    return JUDGE_TEMPERATURE if purpose_tag in _COLD_PURPOSES else GENERATION_TEMPERATURE


def render_prompt(template_id: str, bindings: dict[str, str]) -> str:
    """Substitute {PLACEHOLDER} tokens literally; every placeholder needs a binding."""
    try:
        template = TEMPLATES[template_id]
    except KeyError:
        raise UnknownTemplateError(f"unknown template: {template_id!r}") from None

    missing = sorted({m.group(1) for m in _PLACEHOLDER_RE.finditer(template)} - bindings.keys())
    if missing:
        raise MissingBindingError(
            f"template {template_id!r} has unbound placeholders: " + ", ".join("{%s}" % p for p in missing)
        )
    return _PLACEHOLDER_RE.sub(lambda m: bindings[m.group(1)], template)


@dataclass(frozen=True)
class LlmRequest:
    template_id: str
    rendered_prompt: str
    temperature: float
    max_tokens: int = 4096
    purpose_tag: str = "generate_sql"

    def __post_init__(self):
        if not self.rendered_prompt:
            raise ValueError("rendered_prompt must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if self.purpose_tag not in PURPOSE_TAGS:
            raise ValueError(f"unknown purpose_tag: {self.purpose_tag!r}")


@dataclass(frozen=True)
class LlmResponse:
    text: str
    finish_reason: str = "complete"
    usage: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.finish_reason == "complete" and not self.text:
            raise ValueError("complete response must carry text")


def make_request(template_id: str, bindings: dict[str, str], purpose_tag: str,
                 *, temperature: float | None = None, max_tokens: int = 4096) -> LlmRequest:
    prompt = render_prompt(template_id, bindings)
    if temperature is None:
        temperature = default_temperature(purpose_tag)
    return LlmRequest(template_id=template_id, rendered_prompt=prompt,
                      temperature=temperature, max_tokens=max_tokens, purpose_tag=purpose_tag)


def replay_key(template_id: str, rendered_prompt: str, temperature: float) -> str:
    payload = json.dumps([template_id, rendered_prompt, temperature], ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def request_digest(request: LlmRequest) -> str:
    prompt_hash = hashlib.sha256(request.rendered_prompt.encode("utf-8")).hexdigest()[:16]
    return f"{request.template_id}|t={request.temperature}|{prompt_hash}"


class ReplayStore:
    """Ordered recordings keyed by hash(template_id, rendered_prompt, temperature).

    Persisted as JSONL rows of {key, request_digest, response_text}; repeated keys
    replay in file order. Consumption is serialized per store.
    """

    def __init__(self):
        self._records: list[dict] = []
        self._queues: dict[str, list[str]] = {}
        self._cursors: dict[str, int] = {}
        self._lock = threading.Lock()

    @classmethod
    def load(cls, path) -> "ReplayStore":
        store = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    row = json.loads(line)
                    key, digest, text = row["key"], row["request_digest"], row["response_text"]
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise GatewayError(f"{path}: bad replay record on line {lineno}: {exc}") from None
                store.add(key, digest, text)
        return store

    def add(self, key: str, digest: str, response_text: str) -> None:
        with self._lock:
            self._records.append({"key": key, "request_digest": digest, "response_text": response_text})
            self._queues.setdefault(key, []).append(response_text)

    def next_response(self, key: str) -> str | None:
        """Next unconsumed recording for key, or None when exhausted."""
        with self._lock:
            queue = self._queues.get(key)
            if queue is None:
                return None
            cursor = self._cursors.get(key, 0)
            if cursor >= len(queue):
                return None
            self._cursors[key] = cursor + 1
            return queue[cursor]

    def remaining(self, key: str) -> int:
        with self._lock:
            return len(self._queues.get(key, ())) - self._cursors.get(key, 0)

    def reset(self) -> None:
        """Rewind consumption so the same store can drive another run."""
        with self._lock:
            self._cursors.clear()

    def __len__(self):
        return len(self._records)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for row in self._records:
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")


class HttpProvider:
    """Minimal OpenAI-style chat-completions client over urllib.

    Config comes from explicit args or environment: SUBSQL_API_KEY,
    SUBSQL_BASE_URL, SUBSQL_MODEL.
    """

    def __init__(self, base_url: str | None = None, api_key: str | None = None,
                 model: str | None = None, timeout: float = 120.0):
        self.base_url = (base_url or os.environ.get("SUBSQL_BASE_URL", "")).rstrip("/")
        self.api_key = api_key or os.environ.get("SUBSQL_API_KEY", "")
        self.model = model or os.environ.get("SUBSQL_MODEL", "")
        self.timeout = timeout
        if not self.base_url:
            raise GatewayError("no provider base URL configured (SUBSQL_BASE_URL)")

    def __call__(self, request: LlmRequest) -> LlmResponse:
        body = json.dumps({
            "model": self.model,
            "messages": [{"role": "user", "content": request.rendered_prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }).encode("utf-8")
        req = urllib.request.Request(
            self.base_url + "/v1/chat/completions",
            data=body,
            headers={
                "Content-Type": "application/json",
                "Authorization": f"Bearer {self.api_key}",
            },
        )
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            payload = json.loads(resp.read().decode("utf-8"))
        choice = payload["choices"][0]
        text = choice.get("message", {}).get("content", "") or ""
        finish = choice.get("finish_reason") or "complete"
        if finish == "stop":
            finish = "complete"
        return LlmResponse(text=text, finish_reason=finish, usage=payload.get("usage", {}))


class LlmGateway:
    """complete() front door. Modes:

    - replay: every request must hit the store; a miss is an error.
    - record: misses fall through to the provider and are appended to the store.
    - live:   no store involved.
    """

    def __init__(self, store: ReplayStore | None = None, provider=None, mode: str | None = None,
                 max_in_flight: int = 4, max_retries: int = 3, backoff_base: float = 0.5):
        if mode is None:
            mode = "replay" if store is not None else "live"
        if mode not in ("replay", "record", "live"):
            raise ValueError(f"unknown gateway mode: {mode!r}")
        if mode in ("replay", "record") and store is None:
            raise ValueError(f"{mode} mode needs a replay store")
        if mode in ("record", "live") and provider is None:
            raise ValueError(f"{mode} mode needs a provider")
        self.store = store
        self.provider = provider
        self.mode = mode
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self._slots = threading.Semaphore(max_in_flight)

    def complete(self, request: LlmRequest) -> LlmResponse:
        key = replay_key(request.template_id, request.rendered_prompt, request.temperature)
        if self.mode in ("replay", "record"):
            recorded = self.store.next_response(key)
            if recorded is not None:
                return LlmResponse(text=recorded)
            if self.mode == "replay":
                raise ReplayMissError(
                    f"no recorded response for key {key[:12]}… ({request_digest(request)})"
                )
        response = self._call_provider(request)
        if self.mode == "record":
            self.store.add(key, request_digest(request), response.text)
        return response

    def _call_provider(self, request: LlmRequest) -> LlmResponse:
        last_exc = None
        for attempt in range(self.max_retries):
            if attempt:
                delay = self.backoff_base * (2 ** (attempt - 1))
                log.warning("provider retry %d/%d after %.2fs: %s",
                            attempt, self.max_retries - 1, delay, last_exc)
                time.sleep(delay)
            with self._slots:
                try:
                    return self.provider(request)
                except urllib.error.HTTPError as exc:
                    if exc.code == 429 or exc.code >= 500:
                        last_exc = exc
                        continue
                    raise GatewayError(f"provider rejected request: HTTP {exc.code}") from exc
                except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as exc:
                    last_exc = exc
                    continue
        raise GatewayError(f"provider failed after {self.max_retries} attempts: {last_exc}")


def _strip_fences(text: str) -> str:
    text = text.strip()
    if text.startswith("```"):
        first_break = text.find("\n")
        text = "" if first_break < 0 else text[first_break + 1:]
        if text.rstrip().endswith("```"):
            text = text.rstrip()[:-3]
    return text.strip()


_REASONING_RE = re.compile(r"<reasoning>(.*?)</reasoning>", re.DOTALL)
_ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)


def parse_tagged(text: str) -> dict[str, str]:
    """Pull the first <reasoning>/<answer> pair out of a model response."""
    answer_match = _ANSWER_RE.search(text)
    if answer_match is None:
        raise TaggedParseError("response has no <answer> tag")
    reasoning_match = _REASONING_RE.search(text)
    if reasoning_match is None:
        log.warning("response has no <reasoning> tag; treating reasoning as empty")
        reasoning = ""
    else:
        reasoning = reasoning_match.group(1).strip()
    return {"reasoning": reasoning, "answer": _strip_fences(answer_match.group(1))}


def format_tagged(reasoning: str, answer: str) -> str:
    return f"<reasoning>{reasoning}</reasoning>\n<answer>{answer}</answer>"


def parse_json_object(text: str, required_keys, list_keys=None) -> dict:
    """First parseable JSON object in text (prose/fences tolerated).

    required_keys must all be present. list_keys (default: required keys named
    "keywords" or ending in "columns") must hold lists of strings.
    """
    decoder = json.JSONDecoder()
    parsed = None
    pos = 0
    while True:
        pos = text.find("{", pos)
        if pos < 0:
            break
        try:
            obj, _ = decoder.raw_decode(text, pos)
        except json.JSONDecodeError:
            pos += 1
            continue
        if isinstance(obj, dict):
            parsed = obj
            break
        pos += 1
    if parsed is None:
        raise JsonParseError("no JSON object found in response")

    required_keys = list(required_keys)
    missing = [k for k in required_keys if k not in parsed]
    if missing:
        raise JsonParseError(f"JSON object missing required keys: {', '.join(missing)}")

    if list_keys is None:
        list_keys = [k for k in required_keys if k == "keywords" or k.endswith("columns")]
    for k in list_keys:
        value = parsed.get(k)
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise JsonParseError(f"key {k!r} must be a list of strings, got: {value!r}")
    return parsed
