from __future__ import annotations

import json
from typing import Any

_DECODER = json.JSONDecoder()


class ReplyParseError(ValueError):
    pass


def extract_json(text: str) -> Any:
    """Return the first well-formed JSON object or array embedded in ``text``.

    Advisor replies often wrap JSON in prose or markdown fences.
    """
    for i, ch in enumerate(text):
        if ch in "[{":
            try:
                value, _ = _DECODER.raw_decode(text, i)
            except json.JSONDecodeError:
                continue
            return value
    raise ReplyParseError("no JSON value found in reply")
