"""Binary checkpoint container.

Layout::

    b"HRHNCKPT"                 8-byte magic
    uint32 LE                   format version
    uint64 LE                   header length H
    H bytes                     UTF-8 JSON header (sorted keys)
    payloads                    one per parameter, row-major '<f4', in header order

The header carries the model config, the variant, any extra run metadata
and a ``params`` table of ``{name, shape, offset, nbytes}``. Writing is
deterministic, so save -> load -> save reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import HrhnParams, ModelConfig, VariantConfig, init_params

MAGIC = b"HRHNCKPT"
FORMAT_VERSION = 1
PAYLOAD_DTYPE = "<f4"


class CheckpointError(ValueError):
    pass


def to_bytes(params: HrhnParams, extra: dict | None = None) -> bytes:
    table = []
    payloads = []
    offset = 0
    for p in params.parameters():
        raw = np.ascontiguousarray(p.data, dtype=PAYLOAD_DTYPE).tobytes(order="C")
        table.append({"name": p.name, "shape": list(p.shape), "offset": offset, "nbytes": len(raw)})
        payloads.append(raw)
        offset += len(raw)
    v = params.variant
    header = {
        "format": "hrhn-checkpoint",
        "version": FORMAT_VERSION,
        "dtype": PAYLOAD_DTYPE,
        "model": params.config.to_dict(),
        "variant": {"use_conv_frontend": v.use_conv_frontend, "attention_mode": v.attention_mode, "layer": v.layer},
        "extra": extra or {},
        "params": table,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(blob)) + blob + b"".join(payloads)


def save(path, params: HrhnParams, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(params, extra))
    return path


def read_header(buf: bytes) -> tuple[dict, int]:
    if buf[:8] != MAGIC:
        raise CheckpointError("not an HRHN checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<IQ", buf, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = 8 + 12
    header = json.loads(buf[start : start + hlen].decode("utf-8"))
    return header, start + hlen


def from_bytes(buf: bytes) -> tuple[HrhnParams, dict]:
    header, base = read_header(buf)
    config = ModelConfig(**header["model"])
    variant = VariantConfig(**header["variant"])
    params = init_params(config, variant, seed=0)
    state = {}
    for entry in header["params"]:
        lo = base + entry["offset"]
        hi = lo + entry["nbytes"]
        if hi > len(buf):
            raise CheckpointError(f"truncated payload for {entry['name']}")
        arr = np.frombuffer(buf[lo:hi], dtype=header["dtype"]).reshape(entry["shape"])
        state[entry["name"]] = arr.astype(np.float32)
    params.load_state_dict(state)
    return params, header.get("extra", {})


def load(path) -> tuple[HrhnParams, dict]:
    return from_bytes(Path(path).read_bytes())
