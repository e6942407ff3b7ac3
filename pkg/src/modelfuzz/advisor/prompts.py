"""Prompt templates with named placeholders, loaded from ``templates/*.txt``."""

from __future__ import annotations

import string
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources


class PromptRenderError(KeyError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    text: str

    @property
    def placeholders(self) -> frozenset[str]:
        return frozenset(name for _, name, _, _ in string.Formatter().parse(self.text) if name)

    def render(self, **bindings: object) -> str:
        missing = self.placeholders - bindings.keys()
        if missing:
            raise PromptRenderError(f"template {self.id!r} has unbound placeholders: {sorted(missing)}")
        return self.text.format(**{k: bindings[k] for k in self.placeholders})


@lru_cache(maxsize=None)
def load_template(template_id: str) -> PromptTemplate:
    text = resources.files(__package__).joinpath("templates", f"{template_id}.txt").read_text(encoding="utf-8")
    return PromptTemplate(template_id, text.rstrip("\n"))


def render(template_id: str, **bindings: object) -> str:
    return load_template(template_id).render(**bindings)
