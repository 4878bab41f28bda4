"""Small shared helpers: canonical JSON, stable hashing, decimal formatting."""

from __future__ import annotations

import hashlib
import json
import math
from decimal import Decimal


def canonical_json(obj) -> str:
    """Serialize with sorted keys and no whitespace; stable across runs."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def stable_hash(obj) -> str:
    """Hex SHA-256 of the canonical JSON form of ``obj``."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def fmt_number(value: float) -> str:
    """Shortest exact decimal form, no scientific notation.

    Integral floats drop the trailing ``.0`` so 10.0 serializes as "10".
    """
    if isinstance(value, bool):
        raise TypeError("fmt_number expects a number, not bool")
    if math.isnan(value) or math.isinf(value):
        raise ValueError(f"non-finite number: {value!r}")
    f = float(value)
    if f == int(f) and abs(f) < 1e16:
        return str(int(f))
    s = repr(f)
    if "e" in s or "E" in s:
        s = format(Decimal(s), "f")
    return s


def scale_decimal(text: str, exponent: int) -> str:
    """Shift a decimal string's point by ``exponent`` places, exactly."""
    d = Decimal(text).scaleb(exponent)
    s = format(d, "f")
    if "." in s:
        s = s.rstrip("0").rstrip(".")
    return s if s not in ("", "-") else "0"


def extract_json(text: str):
    """First JSON value found in ``text`` (tolerates prose and code fences)."""
    decoder = json.JSONDecoder()
    for i, ch in enumerate(text):
        if ch in "[{":
            try:
                value, _ = decoder.raw_decode(text[i:])
                return value
            except json.JSONDecodeError:
                continue
    raise ValueError("no JSON value found in response text")
