"""Binary containers: GFT1 frame-sequence files and GCK1 named-array files.

GFT1 layout (little-endian): magic ``GFT1``, u32 frame count, u32 dims,
f32 frame rate, then ``frames x dims`` f32 values row-major. Missing frames
are encoded as NaN.

GCK1 layout (little-endian): magic ``GCK1``, u32 version, u32 JSON length,
JSON config block (utf-8), then zero or more named f64 arrays, each as
u32 name length, name (utf-8), u32 rank, u32 dims[rank], payload.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import CheckpointError, DataError

GFT_MAGIC = b"GFT1"
ARRAY_MAGIC = b"GCK1"
ARRAY_VERSION = 1


def write_frames(path, data, frame_rate: float = 15.0) -> None:
    """Write a (frames, dims) array as a GFT1 file with f32 payload."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DataError(f"frame data must be a non-empty 2D array, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(GFT_MAGIC)
        fh.write(struct.pack("<IIf", arr.shape[0], arr.shape[1], float(frame_rate)))
        fh.write(arr.astype("<f4").tobytes(order="C"))


def read_frames(path, expect_dims: int | None = None) -> tuple[np.ndarray, float]:
    """Read a GFT1 file; returns (float64 (frames, dims) array, frame_rate)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != GFT_MAGIC:
        raise DataError(f"{path}: not a GFT1 file (bad magic)")
    if len(blob) < 16:
        raise DataError(f"{path}: truncated GFT1 header")
    frames, dims, frame_rate = struct.unpack_from("<IIf", blob, 4)
    if frames < 1 or dims < 1:
        raise DataError(f"{path}: empty frame sequence")
    payload = blob[16:]
    expected = frames * dims * 4
    if len(payload) != expected:
        raise DataError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    if expect_dims is not None and dims != expect_dims:
        raise DataError(f"{path}: has {dims} dims, expected {expect_dims}")
    data = np.frombuffer(payload, dtype="<f4").reshape(frames, dims).astype(np.float64)
    return data, float(frame_rate)


def write_arrays(path, config: dict, arrays: dict[str, np.ndarray],
                 version: int = ARRAY_VERSION) -> None:
    """Write a GCK1 file: a JSON config block plus named f64 arrays.

    Arrays are written in sorted name order so identical contents always
    produce identical bytes.
    """
    config_blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(ARRAY_MAGIC)
        fh.write(struct.pack("<II", version, len(config_blob)))
        fh.write(config_blob)
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype=np.float64)
            name_blob = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_blob)))
            fh.write(name_blob)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes(order="C"))


def read_arrays(path) -> tuple[int, dict, dict[str, np.ndarray]]:
    """Read a GCK1 file; returns (version, config, {name: float64 array})."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != ARRAY_MAGIC:
        raise CheckpointError(f"{path}: not a GCK1 file (bad magic)")
    if len(blob) < 12:
        raise CheckpointError(f"{path}: truncated header")
    version, config_len = struct.unpack_from("<II", blob, 4)
    offset = 12
    if offset + config_len > len(blob):
        raise CheckpointError(f"{path}: truncated config block")
    try:
        config = json.loads(blob[offset:offset + config_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: invalid config block: {exc}") from exc
    offset += config_len

    arrays: dict[str, np.ndarray] = {}
    while offset < len(blob):
        try:
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset:offset + name_len].decode("utf-8")
            if len(blob) < offset + name_len:
                raise CheckpointError(f"{path}: truncated array name")
            offset += name_len
            (rank,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            shape = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            count = int(np.prod(shape, dtype=np.int64)) if rank else 1
            nbytes = count * 8
            if offset + nbytes > len(blob):
                raise CheckpointError(f"{path}: truncated payload for array '{name}'")
            if name in arrays:
                raise CheckpointError(f"{path}: duplicate array '{name}'")
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
            arrays[name] = arr.reshape(shape).astype(np.float64)
            offset += nbytes
        except (struct.error, UnicodeDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt array record: {exc}") from exc
    return version, config, arrays
