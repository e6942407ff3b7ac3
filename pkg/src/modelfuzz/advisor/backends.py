"""Chat backends: an HTTP chat-completion client and a scripted offline mock."""

from __future__ import annotations

import json
import logging
import os
import time
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Mapping, Sequence

import httpx

from .ledger import TokenLedger, estimate_tokens

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.5


class AdvisorError(RuntimeError):
    """The advisor could not produce a usable answer."""


class AdvisorTransportError(AdvisorError):
    pass


class ScriptExhausted(AdvisorError):
    pass


class ChatBackend(ABC):
    # completion tokens held back when checking the token budget before a call
    completion_reserve = 0

    def __init__(self, ledger: TokenLedger | None = None):
        self.ledger = ledger or TokenLedger()

    def chat(self, prompt: str, template_id: str = "adhoc", **params) -> str:
        self.ledger.check(estimate_tokens(prompt), self.completion_reserve)
        start = time.perf_counter()
        text, prompt_tokens, completion_tokens = self._complete(prompt, template_id, **params)
        self.ledger.record(
            template_id,
            prompt_tokens if prompt_tokens is not None else estimate_tokens(prompt),
            completion_tokens if completion_tokens is not None else estimate_tokens(text),
            time.perf_counter() - start,
        )
        return text

    @abstractmethod
    def _complete(self, prompt: str, template_id: str, **params) -> tuple[str, int | None, int | None]:
        ...


class ScriptedBackend(ChatBackend):
    """Replays canned replies, for fully offline runs and tests.

    ``script`` is either a list (replies consumed in order regardless of
    prompt) or a mapping from template id to a list of replies; in the mapping
    form the last reply of each list repeats once the list is used up.
    """

    def __init__(self, script: Sequence[str] | Mapping[str, Sequence[str]], ledger: TokenLedger | None = None):
        super().__init__(ledger)
        self._queue = list(script) if not isinstance(script, Mapping) else None
        self._by_template = {k: list(v) for k, v in script.items()} if isinstance(script, Mapping) else None
        self._positions: dict[str, int] = {}
        self.prompts: list[tuple[str, str]] = []

    @classmethod
    def from_file(cls, path: str | os.PathLike, ledger: TokenLedger | None = None) -> "ScriptedBackend":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(data, ledger)

    def _complete(self, prompt, template_id, **params):
        self.prompts.append((template_id, prompt))
        if self._queue is not None:
            if not self._queue:
                raise ScriptExhausted("scripted backend has no replies left")
            return self._queue.pop(0), None, None
        replies = self._by_template.get(template_id) or self._by_template.get("*")
        if not replies:
            raise ScriptExhausted(f"no scripted reply for template {template_id!r}")
        key = template_id if template_id in self._by_template else "*"
        pos = self._positions.get(key, 0)
        self._positions[key] = pos + 1
        return replies[min(pos, len(replies) - 1)], None, None


class OpenAIChatBackend(ChatBackend):
    """OpenAI-compatible ``/chat/completions`` client with bounded retries.

    The credential is read from ``api_key_env`` and never logged.
    """

    def __init__(
        self,
        model: str = "gpt-4o-mini",
        base_url: str = "https://api.openai.com/v1",
        api_key_env: str = "OPENAI_API_KEY",
        api_key: str | None = None,
        temperature: float = DEFAULT_TEMPERATURE,
        max_completion_tokens: int = 1024,
        max_retries: int = 3,
        timeout_s: float = 60.0,
        ledger: TokenLedger | None = None,
        transport: httpx.BaseTransport | None = None,
    ):
        super().__init__(ledger)
        self.model = model
        self.base_url = base_url.rstrip("/")
        self.temperature = temperature
        self.max_completion_tokens = max_completion_tokens
        self.completion_reserve = max_completion_tokens
        self.max_retries = max_retries
        self._api_key = api_key if api_key is not None else os.environ.get(api_key_env)
        if not self._api_key:
            raise AdvisorError(f"no API credential: set the {api_key_env} environment variable")
        self._client = httpx.Client(timeout=timeout_s, transport=transport)

    def _redact(self, text: str) -> str:
        return text.replace(self._api_key, "***") if self._api_key else text

    def _complete(self, prompt, template_id, **params):
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.get("temperature", self.temperature),
            "max_tokens": self.max_completion_tokens,
        }
        url = f"{self.base_url}/chat/completions"
        log.debug("chat request %s: %s", template_id, self._redact(json.dumps(body)))
        last_error = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = self._client.post(url, json=body, headers={"Authorization": f"Bearer {self._api_key}"})
            except httpx.TransportError as exc:
                last_error = f"transport error: {exc}"
            else:
                if resp.status_code == 200:
                    data = resp.json()
                    log.debug("chat response %s: %s", template_id, self._redact(resp.text))
                    text = data["choices"][0]["message"]["content"] or ""
                    usage = data.get("usage") or {}
                    return text, usage.get("prompt_tokens"), usage.get("completion_tokens")
                last_error = f"HTTP {resp.status_code}: {self._redact(resp.text[:200])}"
                if resp.status_code < 500 and resp.status_code != 429:
                    break
            if attempt < self.max_retries:
                time.sleep(0.5 * 2**attempt)
        raise AdvisorTransportError(f"chat completion failed: {last_error}")
