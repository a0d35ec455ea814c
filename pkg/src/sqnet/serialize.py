"""JSON value-vector documents.

Sketches use::

    {"version": 1, "pooling": "mean|sum|max|pnorm|lse", "p": float|null,
     "m": int, "count": float, "map_fingerprint": "hex16",
     "values": [hex-float, ...], "dp": {"epsilon": float, "delta": float}|null}

Other payloads (covariance estimates, network checkpoints, stream sketches)
share the ``version``/``values`` layout and add a ``kind`` tag. Values are
written with :meth:`float.hex` so round trips are bit-exact; readers also
accept plain JSON numbers.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ParseError, VersionError
from .sketch import DPInfo, Pooling, Sketch

__all__ = [
    "FORMAT_VERSION",
    "encode_values",
    "decode_values",
    "sketch_to_dict",
    "sketch_from_dict",
    "serialize_sketch",
    "deserialize_sketch",
    "dumps_document",
    "loads_document",
]

FORMAT_VERSION = 1


def encode_values(values) -> list[str]:
    return [float(v).hex() for v in np.asarray(values, dtype=float).reshape(-1)]


def decode_values(raw, where: str = "values") -> np.ndarray:
    if not isinstance(raw, list):
        raise ParseError(f"{where} must be a list", where)
    out = np.empty(len(raw))
    for i, v in enumerate(raw):
        try:
            if isinstance(v, str):
                out[i] = float.fromhex(v)
            elif isinstance(v, (int, float)) and not isinstance(v, bool):
                out[i] = float(v)
            else:
                raise TypeError
        except (TypeError, ValueError):
            raise ParseError(f"bad numeric value {v!r}", f"{where}[{i}]") from None
    return out


def _parse_json(data) -> dict:
    if isinstance(data, (bytes, bytearray)):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError("document is not valid UTF-8", exc.start) from None
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc.msg}", exc.pos) from None
    if not isinstance(doc, dict):
        raise ParseError("document must be a JSON object", 0)
    version = doc.get("version")
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported document version {version!r} (expected {FORMAT_VERSION})")
    return doc


def _require(doc: dict, key: str, types):
    if key not in doc:
        raise ParseError(f"missing field {key!r}", key)
    value = doc[key]
    if not isinstance(value, types) or isinstance(value, bool):
        raise ParseError(f"field {key!r} has the wrong type", key)
    return value


def sketch_to_dict(s: Sketch) -> dict:
    return {
        "version": FORMAT_VERSION,
        "pooling": s.pooling.kind,
        "p": s.pooling.p,
        "m": s.m,
        "count": s.count,
        "map_fingerprint": s.map_fingerprint,
        "values": encode_values(s.values),
        "dp": None if s.dp is None else {"epsilon": s.dp.epsilon, "delta": s.dp.delta},
    }


def sketch_from_dict(doc: dict) -> Sketch:
    kind = doc.get("kind", "sketch")
    if kind != "sketch":
        raise ParseError(f"expected a sketch document, got kind {kind!r}", "kind")
    pooling_name = _require(doc, "pooling", str)
    p = doc.get("p")
    try:
        pooling = Pooling(pooling_name, None if pooling_name != "pnorm" else float(p))
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), "pooling") from None
    m = _require(doc, "m", int)
    count = float(_require(doc, "count", (int, float)))
    fp = _require(doc, "map_fingerprint", str)
    values = decode_values(_require(doc, "values", list))
    if values.size != m:
        raise ParseError(f"m={m} but {values.size} values given", "values")
    dp = doc.get("dp")
    dp_info = None
    if dp is not None:
        if not isinstance(dp, dict):
            raise ParseError("dp must be an object or null", "dp")
        dp_info = DPInfo(float(_require(dp, "epsilon", (int, float))), float(_require(dp, "delta", (int, float))))
    try:
        return Sketch(values, count, pooling, fp, dp_info)
    except ValueError as exc:
        raise ParseError(str(exc), "values") from None


def serialize_sketch(s: Sketch) -> bytes:
    return json.dumps(sketch_to_dict(s), indent=None).encode("utf-8")


def deserialize_sketch(data) -> Sketch:
    return sketch_from_dict(_parse_json(data))


def dumps_document(kind: str, values, **fields) -> bytes:
    doc = {"version": FORMAT_VERSION, "kind": kind}
    doc.update(fields)
    doc["values"] = encode_values(values)
    return json.dumps(doc).encode("utf-8")


def loads_document(data, kind: str | None = None) -> tuple[dict, np.ndarray]:
    """Parse a tagged value-vector document, returning ``(fields, values)``."""
    doc = _parse_json(data)
    found = doc.get("kind", "sketch")
    if kind is not None and found != kind:
        raise ParseError(f"expected kind {kind!r}, got {found!r}", "kind")
    values = decode_values(_require(doc, "values", list))
    return doc, values
