import json
import os
import struct
from pathlib import Path
from typing import Dict, NamedTuple, Union

import numpy as np

MAGIC = b"MLKW"
VERSION = 1
SEPARATOR = "/"


class CheckpointError(ValueError):
    """Checkpoint file is malformed, truncated or of another format version."""


class Checkpoint(NamedTuple):
    """Loaded checkpoint.

    Attributes:
        params (dict): Nested float32 parameter arrays.

        metadata (dict): Training metadata (step, seed, config hash, kind, ...).

        version (int): Format version.
    """

    params: dict
    metadata: dict
    version: int = VERSION


def flatten(tree: dict, prefix: str = "") -> Dict[str, np.ndarray]:
    """Flatten nested dictionaries to ``"a/b/c"`` names."""
    flat = {}
    for key in sorted(tree):
        if SEPARATOR in key:
            raise CheckpointError(f"Parameter name {key} contains {SEPARATOR}")
        name = f"{prefix}{key}"
        if isinstance(tree[key], dict):
            flat.update(flatten(tree[key], name + SEPARATOR))
        else:
            flat[name] = tree[key]
    return flat


def unflatten(flat: Dict[str, np.ndarray]) -> dict:
    """Inverse of :func:`flatten`."""
    tree = {}
    for name, value in flat.items():
        node = tree
        *parents, leaf = name.split(SEPARATOR)
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return tree


def save_checkpoint(path: Union[str, Path], params: dict, metadata: dict = None):
    r"""Write parameters and metadata to a checkpoint file.

    Layout (little endian): magic ``MLKW``, u32 version, u32 metadata length and UTF-8
    JSON metadata, u32 parameter count, then per parameter a u32 name length, the UTF-8
    name, u32 rank, u64 dimensions and raw float32 values. Parameters are sorted by
    name and metadata keys are sorted, so equal content gives equal bytes. The file is
    written next to its destination and moved into place.

    Args:
        path (str): Destination.

        params (dict): Nested parameter arrays; stored as float32.

        metadata (dict, optional): JSON-serialisable metadata.
    """
    flat = flatten(params)
    meta = {} if metadata is None else metadata
    meta = json.dumps(meta, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", VERSION, len(meta)), meta]
    chunks.append(struct.pack("<I", len(flat)))
    for name in sorted(flat):
        value = np.asarray(flat[name], dtype="<f4")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)) + encoded)
        chunks.append(struct.pack(f"<I{value.ndim}Q", value.ndim, *value.shape))
        chunks.append(value.tobytes(order="C"))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(b"".join(chunks))
    os.replace(tmp, path)


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Read a checkpoint file.

    Args:
        path (str): Checkpoint path.

    Raises:
        CheckpointError: Missing file, wrong magic or version, truncation or trailing
            bytes. Nothing is returned from a partially read file.

    Returns:
        Checkpoint: Parameters (float32 numpy arrays) and metadata.
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint {path} does not exist")
    with open(path, "rb") as f:
        data = f.read()
    reader = _Reader(data, path)
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {VERSION}")
    (meta_len,) = reader.unpack("<I")
    try:
        metadata = json.loads(reader.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt metadata ({e})") from e
    (count,) = reader.unpack("<I")
    flat = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<I")
        try:
            name = reader.take(name_len).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError(f"{path}: corrupt parameter name") from e
        (rank,) = reader.unpack("<I")
        shape = reader.unpack(f"<{rank}Q") if rank else ()
        size = int(np.prod(shape, dtype=np.int64))
        values = np.frombuffer(reader.take(4 * size), dtype="<f4").reshape(shape)
        flat[name] = values.astype(np.float32)
    if reader.offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - reader.offset} trailing bytes")
    return Checkpoint(unflatten(flat), metadata, version)


class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data = data
        self.path = path
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.data[self.offset : self.offset + n]
        self.offset += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))
