"""
Flat parameter container shared by checkpoints and extractor weights.

Layout (all integers little-endian)::

    magic      4 bytes  b"VGPC"
    version    uint16   FORMAT_VERSION
    count      uint32   number of entries
    entry*     uint16 name length, utf-8 name,
               uint8 dtype code, uint8 ndim, ndim x uint32 extents,
               uint64 byte length, raw little-endian values

Each container has a JSON sidecar manifest (``<file>.json``) carrying the
container's sha256 plus whatever the writer wants to record.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping, Union

import numpy as np
import torch

from .exceptions import CheckpointError, ManifestError

MAGIC = b"VGPC"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sHI")
_DTYPES = {
    0: (torch.float32, np.dtype("<f4")),
    1: (torch.float64, np.dtype("<f8")),
    2: (torch.int64, np.dtype("<i8")),
    3: (torch.uint8, np.dtype("u1")),
}
_CODES = {torch_dtype: code for code, (torch_dtype, _) in _DTYPES.items()}

PathLike = Union[str, os.PathLike]


def manifest_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def _encode(name: str, tensor: torch.Tensor) -> bytes:
    tensor = tensor.detach().cpu().contiguous()
    if tensor.dtype not in _CODES:
        raise CheckpointError(f"cannot store '{name}' with dtype {tensor.dtype}")
    code = _CODES[tensor.dtype]
    raw = tensor.numpy().astype(_DTYPES[code][1], copy=False).tobytes()
    encoded_name = name.encode("utf-8")
    return b"".join(
        [
            struct.pack("<H", len(encoded_name)),
            encoded_name,
            struct.pack("<BB", code, tensor.dim()),
            struct.pack(f"<{tensor.dim()}I", *tensor.shape),
            struct.pack("<Q", len(raw)),
            raw,
        ]
    )


def dumps(tensors: Mapping[str, torch.Tensor]) -> bytes:
    body = [_HEADER.pack(MAGIC, FORMAT_VERSION, len(tensors))]
    body.extend(_encode(name, tensor) for name, tensor in tensors.items())
    return b"".join(body)


def loads(blob: bytes) -> "OrderedDict[str, torch.Tensor]":
    try:
        magic, version, count = _HEADER.unpack_from(blob, 0)
    except struct.error as exc:
        raise CheckpointError("container is truncated") from exc
    if magic != MAGIC:
        raise CheckpointError("not a parameter container (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported container version {version}")

    tensors: "OrderedDict[str, torch.Tensor]" = OrderedDict()
    offset = _HEADER.size
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset:offset + name_len].decode("utf-8")
            offset += name_len
            code, ndim = struct.unpack_from("<BB", blob, offset)
            offset += 2
            shape = struct.unpack_from(f"<{ndim}I", blob, offset)
            offset += 4 * ndim
            (nbytes,) = struct.unpack_from("<Q", blob, offset)
            offset += 8
            if code not in _DTYPES or offset + nbytes > len(blob):
                raise CheckpointError(f"corrupt entry '{name}'")
            _, np_dtype = _DTYPES[code]
            values = np.frombuffer(blob, dtype=np_dtype, count=nbytes // np_dtype.itemsize, offset=offset)
            offset += nbytes
            tensors[name] = torch.from_numpy(values.astype(np_dtype.newbyteorder("="))).reshape(shape)
    except struct.error as exc:
        raise CheckpointError("container is truncated") from exc
    return tensors


def save(path: PathLike, tensors: Mapping[str, torch.Tensor], manifest: Mapping = None) -> str:
    """Write the container and its manifest; returns the container's sha256.

    The container is written to a temporary name and renamed into place, so a
    failed write (disk full) never leaves a half-written file under ``path``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = dumps(tensors)
    digest = hashlib.sha256(blob).hexdigest()

    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)

    payload = dict(manifest or {})
    payload.update({"format_version": FORMAT_VERSION, "sha256": digest})
    manifest_path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))
    return digest


def load(path: PathLike, verify: bool = True):
    """Return ``(tensors, manifest)``; with ``verify`` the sha256 must match."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"no such container: {path}")
    blob = path.read_bytes()
    sidecar = manifest_path(path)
    manifest = json.loads(sidecar.read_text()) if sidecar.is_file() else {}
    if verify:
        expected = manifest.get("sha256")
        if expected is None:
            raise ManifestError(f"{path} has no manifest with a content hash")
        if hashlib.sha256(blob).hexdigest() != expected:
            raise ManifestError(f"content hash of {path} does not match its manifest")
    return loads(blob), manifest
