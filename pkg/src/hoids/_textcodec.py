"""Canonical text encoding shared by model files and wire frames.

The output is JSON with sorted keys, no insignificant whitespace, and every
float written with 17 significant digits so that doubles round-trip exactly.
"""

import json
import math
import sys

import numpy as np

_TINY = sys.float_info.min


class EncodingError(ValueError):
    pass


def _float_text(x: float) -> str:
    if not math.isfinite(x):
        raise EncodingError(f"non-finite float {x!r} cannot be encoded")
    if x != 0.0 and abs(x) < _TINY:
        raise EncodingError(f"subnormal float {x!r} rejected")
    s = format(x, ".17g")
    # keep floats recognisable as floats after decoding
    if "." not in s and "e" not in s and "n" not in s:
        s += ".0"
    return s


def _emit(obj, out: list) -> None:
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_float_text(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, dict):
        out.append("{")
        for i, key in enumerate(sorted(obj)):
            if not isinstance(key, str):
                raise EncodingError(f"non-string key {key!r}")
            if i:
                out.append(",")
            out.append(json.dumps(key, ensure_ascii=False))
            out.append(":")
            _emit(obj[key], out)
        out.append("}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        out.append("[")
        for i, item in enumerate(obj):
            if i:
                out.append(",")
            _emit(item, out)
        out.append("]")
    else:
        raise EncodingError(f"cannot encode object of type {type(obj).__name__}")


def dumps(obj) -> str:
    out: list = []
    _emit(obj, out)
    return "".join(out)


def loads(text: str):
    return json.loads(text)
