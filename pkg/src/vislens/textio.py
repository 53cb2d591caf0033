"""Line-oriented structured text.

Two flavors are used across the project:

* record lines: ``kind key=value key=value ...`` — session scripts, scene
  serialization, and the wire protocol's text messages.  One record per
  line so files diff cleanly and can be hand-authored.
* sidecar key-value files: ``key = value`` per line — volume metadata and
  phantom specs.

Values never contain whitespace; anything that would is percent-escaped.
Floats are written with ``repr`` (shortest round-trip) so serialization is
deterministic.
"""

from __future__ import annotations

import urllib.parse

_SAFE = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789" "-_.,:;|()+"


def escape_value(value: str) -> str:
    return urllib.parse.quote(value, safe=_SAFE)


def unescape_value(value: str) -> str:
    return urllib.parse.unquote(value)


def format_value(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, int):
        return str(v)
    if isinstance(v, (tuple, list)):
        return ",".join(format_value(c) for c in v)
    return escape_value(str(v))


def format_record(kind: str, fields: dict) -> str:
    parts = [kind]
    for key, v in fields.items():
        if v is None:
            continue
        parts.append(f"{key}={format_value(v)}")
    return " ".join(parts)


class RecordError(ValueError):
    """Malformed record line."""


def parse_record(line: str) -> tuple[str, dict[str, str]]:
    tokens = line.split()
    if not tokens:
        raise RecordError("empty record")
    kind = tokens[0]
    fields: dict[str, str] = {}
    for tok in tokens[1:]:
        if "=" not in tok:
            raise RecordError(f"malformed field {tok!r} in {kind!r} record")
        key, _, raw = tok.partition("=")
        if not key:
            raise RecordError(f"empty field name in {kind!r} record")
        fields[key] = unescape_value(raw)
    return kind, fields


def parse_floats(raw: str, n: int | None = None) -> tuple[float, ...]:
    parts = tuple(float(p) for p in raw.split(",")) if raw else ()
    if n is not None and len(parts) != n:
        raise RecordError(f"expected {n} comma-separated floats, got {raw!r}")
    return parts


def parse_ints(raw: str, n: int | None = None) -> tuple[int, ...]:
    parts = tuple(int(p) for p in raw.split(",")) if raw else ()
    if n is not None and len(parts) != n:
        raise RecordError(f"expected {n} comma-separated ints, got {raw!r}")
    return parts


def parse_bool(raw: str) -> bool:
    if raw in ("1", "true", "yes"):
        return True
    if raw in ("0", "false", "no"):
        return False
    raise RecordError(f"expected boolean flag, got {raw!r}")


def iter_record_lines(text: str):
    """Yield (line_number, line) skipping blanks and # comments."""
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        yield i, line


def format_kv_file(pairs: dict[str, str]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in pairs.items())


def parse_kv_file(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for i, line in iter_record_lines(text):
        if "=" not in line:
            raise RecordError(f"line {i}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out
