"""Binary model container.

Layout (all integers little-endian)::

    0   8 bytes   magic "BLSRDG01"
    8   u32       format version
    12  u32       section count N
    16  N x 48    section table: name (24 bytes, NUL padded), u32 kind,
                  u32 CRC32 of the payload, u64 payload offset, u64 payload length
    ..            payloads

Section ``meta`` (kind 0) is UTF-8 JSON; every other section (kind 1) is a
C-order float64 array whose shape is recorded in ``meta``.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict

import numpy as np

from .full import FullState
from .learners import RecursiveInputState, SqrtInputState, SqrtNodeState
from .linalg import BatchConfig
from .network import EnhancementGroup, FeatureGroup, NetworkLayout, NetworkParams

__all__ = ["ChecksumError", "ModelFileError", "VersionError", "inspect_model", "load_model", "load_params", "save_model"]

MAGIC = b"BLSRDG01"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sII")
_ENTRY = struct.Struct("<24sIIQQ")
_JSON, _F64 = 0, 1

_KINDS = {
    RecursiveInputState: "rec-input",
    SqrtInputState: "sqrt-input",
    SqrtNodeState: "sqrt-node",
    FullState: "full",
}


class ModelFileError(ValueError):
    pass


class VersionError(ModelFileError):
    pass


class ChecksumError(ModelFileError):
    def __init__(self, section):
        self.section = section
        super().__init__(f"checksum mismatch in section {section!r}")


def _params_to_sections(params):
    arrays = {}
    for i, g in enumerate(params.features):
        arrays[f"z{i}.weight"] = g.weight
        arrays[f"z{i}.bias"] = g.bias
    for j, g in enumerate(params.enhancements):
        arrays[f"h{j}.weight"] = g.weight
        arrays[f"h{j}.bias"] = g.bias
    meta = {
        "input_dim": params.input_dim,
        "layout": asdict(params.layout),
        "sources": [list(g.sources) for g in params.enhancements],
        "order": [list(o) for o in params.order],
        "seeds": list(params.seeds),
        "features": params.n,
    }
    return meta, arrays


def _params_from_sections(meta, arrays):
    features = tuple(
        FeatureGroup(arrays[f"z{i}.weight"], arrays[f"z{i}.bias"]) for i in range(meta["features"])
    )
    enhancements = tuple(
        EnhancementGroup(arrays[f"h{j}.weight"], arrays[f"h{j}.bias"], tuple(src))
        for j, src in enumerate(meta["sources"])
    )
    return NetworkParams(
        meta["input_dim"],
        NetworkLayout(**meta["layout"]),
        features,
        enhancements,
        tuple((kind, idx) for kind, idx in meta["order"]),
        tuple(meta["seeds"]),
    )


def _state_arrays(state):
    if isinstance(state, RecursiveInputState):
        return {"q": state.q, "w": state.w}
    arrays = {"f": state.f, "w": state.w}
    if isinstance(state, (SqrtNodeState, FullState)):
        arrays.update(a=state.a, y=state.y)
    if isinstance(state, FullState) and state.x is not None:
        arrays["x"] = state.x
    return arrays


def save_model(state, path, params=None):
    """Write ``state``; ``params`` defaults to the network stored on the state, if any."""
    kind = _KINDS.get(type(state))
    if kind is None:
        raise TypeError(f"cannot save {type(state).__name__}")
    arrays = _state_arrays(state)
    params = params if params is not None else getattr(state, "params", None)
    meta = {
        "kind": kind,
        "lam": state.cfg.lam,
        "batch": state.cfg.batch,
        "counts": {
            "l": int(state.l if kind == "full" else state.samples),
            "k": int(state.w.shape[0]),
            "c": int(state.w.shape[1]),
            "n": params.n if params is not None else 0,
            "m": params.m if params is not None else 0,
        },
    }
    if kind in ("rec-input", "sqrt-input"):
        meta["samples"] = state.samples
    meta["batches"] = getattr(state, "batches", getattr(state, "updates", 0))
    if params is not None:
        pmeta, parrays = _params_to_sections(params)
        meta["params"] = pmeta
        arrays.update({f"p.{name}": arr for name, arr in parrays.items()})
    meta["arrays"] = {name: list(arr.shape) for name, arr in arrays.items()}

    payloads = [("meta", _JSON, json.dumps(meta, sort_keys=True).encode("utf-8"))]
    for name, arr in arrays.items():
        payloads.append((name, _F64, np.ascontiguousarray(arr, dtype="<f8").tobytes()))
    offset = _HEADER.size + _ENTRY.size * len(payloads)
    table = []
    for name, kind_code, blob in payloads:
        encoded = name.encode("ascii")
        if len(encoded) > 24:
            raise ValueError(f"section name too long: {name}")
        table.append(_ENTRY.pack(encoded, kind_code, zlib.crc32(blob), offset, len(blob)))
        offset += len(blob)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, len(payloads)))
        fh.writelines(table)
        fh.writelines(blob for _, _, blob in payloads)


def _read_sections(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ModelFileError("file too short for a model header")
    magic, version, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise VersionError(f"not a model file (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported format version {version}, expected {FORMAT_VERSION}")
    if len(raw) < _HEADER.size + _ENTRY.size * count:
        raise ModelFileError("file too short for its section table")
    sections = {}
    for i in range(count):
        name, kind, crc, offset, length = _ENTRY.unpack_from(raw, _HEADER.size + i * _ENTRY.size)
        name = name.rstrip(b"\0").decode("ascii")
        blob = raw[offset : offset + length]
        if len(blob) != length:
            raise ModelFileError(f"section {name!r} runs past the end of the file")
        if zlib.crc32(blob) != crc:
            raise ChecksumError(name)
        sections[name] = (kind, blob)
    if "meta" not in sections:
        raise ModelFileError("missing meta section")
    return sections


def inspect_model(path):
    """Metadata of a saved model without materializing the arrays."""
    sections = _read_sections(path)
    meta = json.loads(sections["meta"][1].decode("utf-8"))
    meta["format_version"] = FORMAT_VERSION
    meta["sections"] = {name: len(blob) for name, (_, blob) in sections.items()}
    return meta


def _load(path):
    sections = _read_sections(path)
    meta = json.loads(sections["meta"][1].decode("utf-8"))
    arrays = {}
    for name, shape in meta["arrays"].items():
        if name not in sections:
            raise ModelFileError(f"missing section {name!r}")
        arrays[name] = np.frombuffer(sections[name][1], dtype="<f8").astype(np.float64).reshape(shape)
    params = None
    if "params" in meta:
        parrays = {name[2:]: arr for name, arr in arrays.items() if name.startswith("p.")}
        params = _params_from_sections(meta["params"], parrays)
    return meta, arrays, params


def load_params(path):
    """Network parameters stored with a model, or None."""
    return _load(path)[2]


def load_model(path):
    meta, arrays, params = _load(path)
    cfg = BatchConfig(meta["lam"], meta["batch"])
    kind = meta["kind"]
    if kind == "rec-input":
        return RecursiveInputState(arrays["q"], arrays["w"], cfg, meta["samples"], meta["batches"])
    if kind == "sqrt-input":
        return SqrtInputState(arrays["f"], arrays["w"], cfg, meta["samples"], meta["batches"])
    if kind == "sqrt-node":
        return SqrtNodeState(arrays["f"], arrays["w"], arrays["a"], arrays["y"], cfg, meta["batches"])
    if kind == "full":
        return FullState(
            arrays["f"], arrays["w"], arrays["a"], arrays["y"], cfg, params, arrays.get("x"), meta["batches"]
        )
    raise ModelFileError(f"unknown state kind {kind!r}")
