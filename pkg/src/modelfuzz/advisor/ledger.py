from __future__ import annotations

import re
import threading
from dataclasses import asdict, dataclass

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def estimate_tokens(text: str) -> int:
    """Rough token count (words and punctuation), used when a backend reports none."""
    return len(_TOKEN_RE.findall(text))


class BudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class CallRecord:
    template_id: str
    prompt_tokens: int
    completion_tokens: int
    wall_time_s: float


class TokenLedger:
    def __init__(self, max_calls: int | None = None, max_tokens: int | None = None):
        self.max_calls = max_calls
        self.max_tokens = max_tokens
        self.records: list[CallRecord] = []
        self._lock = threading.Lock()

    @property
    def calls(self) -> int:
        return len(self.records)

    @property
    def prompt_tokens(self) -> int:
        return sum(r.prompt_tokens for r in self.records)

    @property
    def completion_tokens(self) -> int:
        return sum(r.completion_tokens for r in self.records)

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def check(self, prompt_estimate: int = 0, reserve: int = 0) -> None:
        """Raise :class:`BudgetExceeded` if one more call could break a cap."""
        if self.max_calls is not None and self.calls + 1 > self.max_calls:
            raise BudgetExceeded(f"call budget of {self.max_calls} exhausted")
        if self.max_tokens is not None and self.total_tokens + prompt_estimate + reserve > self.max_tokens:
            raise BudgetExceeded(f"token budget of {self.max_tokens} would be exceeded")

    def record(self, template_id: str, prompt_tokens: int, completion_tokens: int, wall_time_s: float) -> CallRecord:
        rec = CallRecord(template_id, prompt_tokens, completion_tokens, wall_time_s)
        with self._lock:
            self.records.append(rec)
        return rec

    def to_dict(self) -> dict:
        return {
            "calls": self.calls,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "total_tokens": self.total_tokens,
            "records": [asdict(r) for r in self.records],
        }
