"""
Binary weight file (.lada).

Layout, all integers little-endian:
    b"LADA" | u16 version
    u32 header count | per header: u32 byte length, UTF-8 JSON object
    u32 tensor count | per tensor: u16 tag length, UTF-8 tag, u32 ndim, ndim x u32 dims, raw <f8 values
"""
import json
import struct
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from src.app.core.errors import InputError

MAGIC = b"LADA"
FORMAT_VERSION = 1


def encode_weights(headers: List[dict], tensors: List[Tuple[str, np.ndarray]]) -> bytes:
    chunks = [MAGIC, struct.pack("<H", FORMAT_VERSION), struct.pack("<I", len(headers))]
    for record in headers:
        payload = json.dumps(record, sort_keys=True).encode("utf-8")
        chunks.append(struct.pack("<I", len(payload)))
        chunks.append(payload)

    chunks.append(struct.pack("<I", len(tensors)))
    for tag, array in tensors:
        tag_bytes = tag.encode("utf-8")
        array = np.ascontiguousarray(array, dtype="<f8")
        chunks.append(struct.pack("<H", len(tag_bytes)))
        chunks.append(tag_bytes)
        chunks.append(struct.pack("<I", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(array.tobytes(order="C"))
    return b"".join(chunks)


def decode_weights(blob: bytes) -> Tuple[List[dict], Dict[str, np.ndarray]]:
    if blob[:4] != MAGIC:
        raise InputError("Not a LADA weight file (bad magic)")
    offset = 4

    def take(fmt: str):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(blob):
            raise InputError("Truncated weight file")
        values = struct.unpack_from(fmt, blob, offset)
        offset += size
        return values

    def take_bytes(length: int, what: str) -> bytes:
        nonlocal offset
        if offset + length > len(blob):
            raise InputError(f"Truncated {what}")
        chunk = blob[offset:offset + length]
        offset += length
        return chunk

    (version,) = take("<H")
    if version != FORMAT_VERSION:
        raise InputError(f"Unsupported weight file version {version}")

    headers = []
    (n_headers,) = take("<I")
    for _ in range(n_headers):
        (length,) = take("<I")
        try:
            headers.append(json.loads(take_bytes(length, "header").decode("utf-8")))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise InputError(f"Corrupt weight file header: {e}") from e

    tensors: Dict[str, np.ndarray] = {}
    (n_tensors,) = take("<I")
    for _ in range(n_tensors):
        (tag_len,) = take("<H")
        tag = take_bytes(tag_len, "tensor tag").decode("utf-8", errors="replace")
        (ndim,) = take("<I")
        dims = take(f"<{ndim}I") if ndim else ()
        count = int(np.prod(dims)) if ndim else 1
        raw = take_bytes(count * 8, f"tensor '{tag}'")
        tensors[tag] = np.frombuffer(raw, dtype="<f8", count=count).reshape(dims).astype(np.float64)
    return headers, tensors


def save_weights(path, headers: List[dict], tensors: List[Tuple[str, np.ndarray]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_weights(headers, tensors))
    return path


def load_weights(path) -> Tuple[List[dict], Dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Weight file not found: {path}")
    return decode_weights(path.read_bytes())
