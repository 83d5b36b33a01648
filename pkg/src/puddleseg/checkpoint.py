"""Versioned binary container for named tensors.

Layout (all little-endian):

    magic "PSGC" | u32 version | u32 tensor_count | u32 config_len
    config bytes (utf-8, flat key = value text)
    per tensor, sorted by name:
        u16 name_len | name bytes | u8 dtype_code | u8 flags(bit0: frozen)
        u8 rank | u32 dims[rank] | u64 offset | u64 nbytes
    payload blob (raw tensor bytes, C order)
    u32 crc32 over everything above

Round-tripping a file through load/save reproduces it byte for byte.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptFile, VersionMismatch

MAGIC = b"PSGC"
FORMAT_VERSION = 1

_DTYPE_CODES = {0: "<f4", 1: "<f8", 2: "<u8", 3: "<i8"}
_CODES_BY_KIND = {np.dtype("float32"): 0, np.dtype("float64"): 1,
                  np.dtype("uint64"): 2, np.dtype("int64"): 3}


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    frozen: dict[str, bool] = field(default_factory=dict)
    config_text: str = ""
    version: int = FORMAT_VERSION


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    names = sorted(ckpt.tensors)
    config = ckpt.config_text.encode("utf-8")
    header = bytearray()
    header += MAGIC
    header += struct.pack("<III", FORMAT_VERSION, len(names), len(config))
    header += config
    payload = bytearray()
    for name in names:
        arr = np.ascontiguousarray(ckpt.tensors[name])
        if arr.dtype not in _CODES_BY_KIND:
            raise TypeError(f"unsupported tensor dtype {arr.dtype} for {name!r}")
        code = _CODES_BY_KIND[arr.dtype]
        raw = arr.astype(_DTYPE_CODES[code], copy=False).tobytes()
        nb = name.encode("utf-8")
        flags = 1 if ckpt.frozen.get(name, False) else 0
        header += struct.pack("<H", len(nb)) + nb
        header += struct.pack("<BBB", code, flags, arr.ndim)
        header += struct.pack(f"<{arr.ndim}I", *arr.shape)
        header += struct.pack("<QQ", len(payload), len(raw))
        payload += raw
    body = bytes(header) + bytes(payload)
    crc = zlib.crc32(body) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", crc))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 16:
        raise CorruptFile("checkpoint file is truncated")
    body, crc_raw = blob[:-4], blob[-4:]
    (crc_stored,) = struct.unpack("<I", crc_raw)
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise CorruptFile("checkpoint checksum mismatch")
    if body[:4] != MAGIC:
        raise CorruptFile("bad magic; not a checkpoint file")
    try:
        version, count, config_len = struct.unpack_from("<III", body, 4)
        if version != FORMAT_VERSION:
            raise VersionMismatch(
                f"checkpoint version {version}, expected {FORMAT_VERSION}")
        off = 16
        config_text = body[off:off + config_len].decode("utf-8")
        off += config_len
        entries = []
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", body, off)
            off += 2
            name = body[off:off + name_len].decode("utf-8")
            off += name_len
            code, flags, rank = struct.unpack_from("<BBB", body, off)
            off += 3
            dims = struct.unpack_from(f"<{rank}I", body, off)
            off += 4 * rank
            payload_off, nbytes = struct.unpack_from("<QQ", body, off)
            off += 16
            entries.append((name, code, flags, dims, payload_off, nbytes))
        payload_start = off
        tensors, frozen = {}, {}
        for name, code, flags, dims, payload_off, nbytes in entries:
            start = payload_start + payload_off
            raw = body[start:start + nbytes]
            if len(raw) != nbytes:
                raise CorruptFile(f"payload for {name!r} is truncated")
            arr = np.frombuffer(raw, dtype=_DTYPE_CODES[code]).reshape(dims).copy()
            tensors[name] = arr
            frozen[name] = bool(flags & 1)
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise CorruptFile(f"malformed checkpoint: {exc}") from exc
    return Checkpoint(tensors=tensors, frozen=frozen,
                      config_text=config_text, version=version)


def rng_state_to_tensor(gen: np.random.Generator) -> np.ndarray:
    """Serialize a PCG64 generator state into a u64[6] tensor."""
    st = gen.bit_generator.state
    s = st["state"]["state"]
    inc = st["state"]["inc"]
    mask = (1 << 64) - 1
    return np.array([
        s & mask, (s >> 64) & mask,
        inc & mask, (inc >> 64) & mask,
        int(st["has_uint32"]), int(st["uinteger"]),
    ], dtype=np.uint64)


def rng_state_from_tensor(vec: np.ndarray) -> np.random.Generator:
    gen = np.random.default_rng(0)
    vals = [int(x) for x in vec]
    gen.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": vals[0] | (vals[1] << 64),
                  "inc": vals[2] | (vals[3] << 64)},
        "has_uint32": vals[4],
        "uinteger": vals[5],
    }
    return gen
