"""
Prompt templates.

Each LLM stage has one template file ``<stage>.txt`` with ``[system]`` and
``[user]`` sections and ``${name}`` placeholders. Lines starting with ``#``
before the first section are comments. A template's version is the short
hash of its file contents, recorded in report provenance.
"""

from __future__ import annotations

import hashlib
import string
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import PreconditionError


@dataclass(frozen=True)
class Template:
    name: str
    system: str
    user: str
    version: str

    def render(self, **values) -> tuple[str, str]:
        try:
            return string.Template(self.system).substitute(values), string.Template(self.user).substitute(values)
        except KeyError as exc:
            raise PreconditionError(f"template {self.name} needs placeholder {exc}") from None


def parse_template(name: str, text: str) -> Template:
    sections: dict[str, list[str]] = {}
    current = None
    for line in text.splitlines():
        stripped = line.strip()
        if stripped in ("[system]", "[user]"):
            current = stripped[1:-1]
            sections[current] = []
        elif current is None:
            if stripped and not stripped.startswith("#"):
                raise PreconditionError(f"template {name}: text before first section")
        else:
            sections[current].append(line)
    if "user" not in sections:
        raise PreconditionError(f"template {name} has no [user] section")
    version = hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]
    return Template(
        name,
        "\n".join(sections.get("system", [])).strip(),
        "\n".join(sections["user"]).strip(),
        version,
    )


class PromptLibrary:
    """Loads templates from a directory, falling back to the bundled set."""

    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory else None
        self._cache: dict[str, Template] = {}

    def get(self, name: str) -> Template:
        if name not in self._cache:
            text = None
            if self.directory is not None:
                p = self.directory / f"{name}.txt"
                if p.exists():
                    text = p.read_text(encoding="utf-8")
            if text is None:
                res = resources.files("marketsense.templates").joinpath(f"{name}.txt")
                if not res.is_file():
                    raise PreconditionError(f"no prompt template named {name!r}")
                text = res.read_text(encoding="utf-8")
            self._cache[name] = parse_template(name, text)
        return self._cache[name]

    def render(self, name: str, **values) -> tuple[str, str]:
        return self.get(name).render(**values)


DEFAULT_LIBRARY = PromptLibrary()
