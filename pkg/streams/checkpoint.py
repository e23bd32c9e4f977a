"""Binary checkpoints: the canonical architecture text followed by raw parameter tensors.

Layout (little-endian): ``b'STNT'``, u32 format version, u32 text length
and the UTF-8 description from ``zoo.dumps``, u32 graph node count, then per
distinct parameter tensor in graph order a u32 rank, one u32 per dim and
the float32 data.
"""
import struct
from pathlib import Path

import numpy as np
import structlog

from . import zoo
from .exceptions import CheckpointError
from .graph import compile_graph

log = structlog.get_logger(__name__)

MAGIC = b'STNT'
VERSION = 1

_U32 = struct.Struct('<I')
_FLOAT = np.dtype('<f4')


def dump_bytes(graph) -> bytes:
    text = zoo.dumps(graph.desc).encode('utf-8')
    chunks = [MAGIC, _U32.pack(VERSION), _U32.pack(len(text)), text, _U32.pack(len(graph.layers))]
    for param in graph.parameters():
        chunks.append(_U32.pack(param.value.ndim))
        chunks.extend(_U32.pack(d) for d in param.value.shape)
        chunks.append(np.ascontiguousarray(param.value, dtype=_FLOAT).tobytes())
    return b''.join(chunks)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, size):
        if self.pos + size > len(self.data):
            raise CheckpointError(f"truncated file: wanted {size} bytes at offset {self.pos}")
        chunk = self.data[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def u32(self):
        return _U32.unpack(self.take(4))[0]


def load_bytes(data, precision='float32'):
    reader = _Reader(data)
    if reader.take(4) != MAGIC:
        raise CheckpointError("bad magic")
    version = reader.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    try:
        text = reader.take(reader.u32()).decode('utf-8')
    except UnicodeDecodeError:
        raise CheckpointError("architecture text is not valid UTF-8") from None
    desc = zoo.loads(text)
    graph = compile_graph(desc, precision=precision)
    nodes = reader.u32()
    if nodes != len(graph.layers):
        raise CheckpointError(f"node count {nodes} disagrees with the architecture ({len(graph.layers)})")
    for param in graph.parameters():
        rank = reader.u32()
        shape = tuple(reader.u32() for _ in range(rank))
        if shape != param.value.shape:
            raise CheckpointError(f"shape disagreement for {param.node}.{param.name}: file {shape}, architecture {param.value.shape}")
        count = int(np.prod(shape, dtype=np.int64))
        values = np.frombuffer(reader.take(count * _FLOAT.itemsize), dtype=_FLOAT).reshape(shape)
        param.value[...] = values
    if reader.pos != len(data):
        raise CheckpointError(f"{len(data) - reader.pos} trailing bytes after the last tensor")
    return graph


def save_checkpoint(graph, path) -> Path:
    path = Path(path)
    data = dump_bytes(graph)
    path.write_bytes(data)
    log.info("checkpoint saved", graph=graph.name, path=str(path), bytes=len(data))
    return path


def load_checkpoint(path, precision='float32'):
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint {path} does not exist")
    graph = load_bytes(path.read_bytes(), precision=precision)
    log.info("checkpoint loaded", graph=graph.name, path=str(path))
    return graph
