"""Flat key=value config files.

Format: one `key = value` pair per line, `#` starts a comment, blank lines
ignored. Keys may be dotted (e.g. `transition.0.1`). Values are kept as
strings; callers coerce.
"""

from __future__ import annotations

from sbfdsim.errors import ValidationError


def parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ValidationError(f"line {lineno}: empty key")
        out[key] = value.strip()
    return out


def load_kv(path) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_kv(fh.read())


def dump_kv(pairs: dict[str, object]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in pairs.items())


def save_kv(path, pairs: dict[str, object]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dump_kv(pairs))
