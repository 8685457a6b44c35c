"""Binary checkpoint files (``VNTC``).

Layout, all little-endian::

    magic "VNTC" | version u16 | arch_len u32 | arch text (UTF-8)
    repeated tensor records:
        name_len u16 | name (UTF-8) | dtype u8 | rank u8 | dims u32 * rank | payload f32
    CRC32 u32 over everything before it

Tensor names are namespaced: ``param.*``, ``mask.*``, ``skipmask.*``,
``scale.*``, ``opt.*`` and ``meta.*``.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._io import atomic_write_bytes
from .errors import ChecksumError, HeaderError, TruncatedError, VersionError
from .graph import NetworkGraph, from_spec_text, to_spec_text

MAGIC = b"VNTC"
FORMAT_VERSION = 1
DTYPE_F32 = 0
HISTORY_COLUMNS = ("epoch", "train_rmse", "val_rmse", "wall_seconds")


@dataclass
class Checkpoint:
    graph: NetworkGraph
    optimizer_state: dict | None = None
    epoch: int = 0
    history: list = field(default_factory=list)  # dicts keyed by HISTORY_COLUMNS


def _tensor_record(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype != np.float32:
        raise HeaderError(f"tensor {name!r} is {arr.dtype}; checkpoints store float32 only")
    raw = name.encode("utf-8")
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<BB", DTYPE_F32, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def checkpoint_tensors(ckpt: Checkpoint) -> list:
    g = ckpt.graph
    out = [(f"param.{k}", v) for k, v in sorted(g.params.items())]
    out += [(f"mask.{k}", v) for k, v in sorted(g.masks.items())]
    out += [(f"skipmask.{e.name}", e.mask.astype(np.float32)) for e in g.skip_edges]
    out += [(f"scale.{k}", np.asarray(v, np.float32)) for k, v in sorted(g.scaling.items())]
    if ckpt.optimizer_state is not None:
        for k, v in sorted(ckpt.optimizer_state.items()):
            out.append((f"opt.{k}", np.asarray(v, np.float32)))
    out.append(("meta.epoch", np.array([ckpt.epoch], np.float32)))
    hist = np.array([[row[c] for c in HISTORY_COLUMNS] for row in ckpt.history],
                    dtype=np.float32).reshape(len(ckpt.history), len(HISTORY_COLUMNS))
    out.append(("meta.history", hist))
    return out


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    arch = to_spec_text(ckpt.graph).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(arch)), arch]
    parts += [_tensor_record(n, a) for n, a in checkpoint_tensors(ckpt)]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(graph: NetworkGraph, state: dict | None, path, epoch: int = 0,
                    history=None) -> Path:
    """Write ``graph`` plus optional optimizer ``state`` atomically."""
    ckpt = Checkpoint(graph, state, epoch, list(history or []))
    return atomic_write_bytes(path, encode_checkpoint(ckpt))


def _read(fmt: str, blob: bytes, off: int, end: int):
    size = struct.calcsize(fmt)
    if off + size > end:
        raise TruncatedError("checkpoint ends inside a record", off)
    return struct.unpack_from(fmt, blob, off), off + size


def decode_checkpoint(blob: bytes, eval_only: bool = False) -> Checkpoint:
    if len(blob) < 10 or blob[:4] != MAGIC:
        raise HeaderError("not a VNTC checkpoint (bad magic)")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    if len(blob) < 14:
        raise TruncatedError("checkpoint shorter than its fixed header", len(blob))
    end = len(blob) - 4
    (stored,) = struct.unpack_from("<I", blob, end)
    if zlib.crc32(blob[:end]) != stored:
        raise ChecksumError("checkpoint CRC32 mismatch")
    (arch_len,), off = _read("<I", blob, 6, end)
    if off + arch_len > end:
        raise TruncatedError("checkpoint ends inside the architecture text", off)
    graph = from_spec_text(blob[off:off + arch_len].decode("utf-8"))
    off += arch_len
    tensors = {}
    while off < end:
        (nlen,), off = _read("<H", blob, off, end)
        if off + nlen > end:
            raise TruncatedError("checkpoint ends inside a tensor name", off)
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (dtype, rank), off = _read("<BB", blob, off, end)
        if dtype != DTYPE_F32:
            raise HeaderError(f"tensor {name!r}: unknown dtype code {dtype}")
        dims, off = _read(f"<{rank}I", blob, off, end)
        count = int(np.prod(dims)) if rank else 1
        if off + 4 * count > end:
            raise TruncatedError(f"checkpoint ends inside tensor {name!r}", off)
        tensors[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=off).astype(np.float32).reshape(dims)
        off += 4 * count

    opt = {}
    for name, arr in tensors.items():
        kind, _, key = name.partition(".")
        if kind == "param":
            graph.params[key] = arr
        elif kind == "mask":
            graph.masks[key] = arr
        elif kind == "scale":
            graph.scaling[key] = arr
        elif kind == "opt":
            opt[key] = arr
    edges = {e.name: e for e in graph.skip_edges}
    for name, arr in tensors.items():
        if name.startswith("skipmask."):
            key = name.split(".", 1)[1]
            if key not in edges:
                raise HeaderError(f"skip mask {key!r} has no matching edge in the architecture text")
            edges[key].mask = arr
    hist = tensors.get("meta.history", np.zeros((0, len(HISTORY_COLUMNS)), np.float32))
    history = [dict(zip(HISTORY_COLUMNS, (float(v) for v in row))) for row in hist]
    for row in history:
        row["epoch"] = int(row["epoch"])
    epoch = int(tensors.get("meta.epoch", np.zeros(1))[0])
    state = None if eval_only else (opt if opt else None)
    return Checkpoint(graph, state, epoch, history)


def load_checkpoint(path, eval_only: bool = False) -> Checkpoint:
    """Read a checkpoint; ``eval_only`` drops optimizer state but keeps history."""
    return decode_checkpoint(Path(path).read_bytes(), eval_only=eval_only)


def history_csv(history) -> str:
    lines = [",".join(HISTORY_COLUMNS)]
    for row in history:
        lines.append(f"{int(row['epoch'])},{row['train_rmse']:.6f},{row['val_rmse']:.6f},{row['wall_seconds']:.3f}")
    return "\n".join(lines) + "\n"
