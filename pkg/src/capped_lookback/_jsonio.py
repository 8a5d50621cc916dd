"""JSON helpers that carry +-inf and None through a portable encoding."""

from __future__ import annotations

import math


def encode_number(x):
    if x is None:
        return None
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return x


def decode_number(x):
    if x is None:
        return None
    if isinstance(x, str):
        return float(x.strip().lower())
    return float(x)
