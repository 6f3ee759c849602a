"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic     4 bytes   b"RKGC"
    version   u32
    kind      u16 length + utf-8 ("model" or "dataset")
    header    u32 length + utf-8 JSON (sorted keys)
    count     u32
    records   count x (u16 name length, name, u8 ndim, ndim x u64 dims,
                       prod(dims) x float64 payload)
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .nn import MlpSpec, ModelParams

MAGIC = b"RKGC"
VERSION = 1


class CheckpointError(IOError):
    pass


def encode(kind: str, header: dict, records) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    kb = kind.encode()
    parts += [struct.pack("<H", len(kb)), kb]
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts += [struct.pack("<I", len(hb)), hb]
    records = list(records)
    parts.append(struct.pack("<I", len(records)))
    for name, value in records:
        nb = name.encode()
        arr = np.ascontiguousarray(value, dtype="<f8")
        parts += [struct.pack("<H", len(nb)), nb, struct.pack("<B", arr.ndim)]
        parts += [struct.pack("<Q", d) for d in arr.shape]
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode(blob: bytes, source: str = "<bytes>") -> tuple[str, dict, list[tuple[str, np.ndarray]]]:
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (bad magic bytes {blob[:4]!r})")
    try:
        (version,) = struct.unpack_from("<I", blob, 4)
        if version != VERSION:
            raise CheckpointError(
                f"{source}: incompatible checkpoint version {version} (this build reads version {VERSION})"
            )
        pos = 8
        (n,) = struct.unpack_from("<H", blob, pos)
        kind = blob[pos + 2 : pos + 2 + n].decode()
        pos += 2 + n
        (n,) = struct.unpack_from("<I", blob, pos)
        header = json.loads(blob[pos + 4 : pos + 4 + n].decode())
        pos += 4 + n
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        records = []
        for _ in range(count):
            (n,) = struct.unpack_from("<H", blob, pos)
            name = blob[pos + 2 : pos + 2 + n].decode()
            pos += 2 + n
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}Q", blob, pos)
            pos += 8 * ndim
            size = int(np.prod(shape)) if ndim else 1
            if pos + 8 * size > len(blob):
                raise CheckpointError(f"{source}: truncated payload for record {name!r}")
            arr = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * size
            records.append((name, arr))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: corrupted checkpoint ({exc})") from exc
    if pos != len(blob):
        raise CheckpointError(f"{source}: {len(blob) - pos} trailing bytes")
    return kind, header, records


def save_model(path, params: ModelParams, spec: MlpSpec) -> None:
    header = {"spec": spec.to_dict(), "frozen": params.frozen}
    Path(path).write_bytes(encode("model", header, params.items()))


def load_model(path) -> tuple[ModelParams, MlpSpec]:
    path = Path(path)
    kind, header, records = decode(path.read_bytes(), str(path))
    if kind != "model":
        raise CheckpointError(f"{path}: expected a model checkpoint, found {kind!r}")
    return ModelParams(records, frozen=bool(header.get("frozen", False))), MlpSpec.from_dict(header["spec"])


def verify_roundtrip(path) -> bool:
    """Load and re-encode; True when the bytes reproduce exactly."""
    path = Path(path)
    blob = path.read_bytes()
    kind, header, records = decode(blob, str(path))
    return encode(kind, header, records) == blob
