# core/checkpoint.py
from __future__ import annotations

import logging
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from core.network import NetParams, shape_table

logger = logging.getLogger("pi_a3c.checkpoint")

MAGIC = b"PIA3CNET"
FORMAT_VERSION = 1
# magic, version, shape-table sha256, parameter count, board size
HEADER = struct.Struct("<8sI32sQI")


class CheckpointError(RuntimeError):
    pass


def params_to_bytes(params: NetParams) -> bytes:
    table = params.table
    header = HEADER.pack(MAGIC, FORMAT_VERSION, table.digest(), table.total, params.board_size)
    return header + params.flat.astype("<f4").tobytes()


def params_from_bytes(data: bytes, *, expected_board_size: Optional[int] = None) -> NetParams:
    if len(data) < HEADER.size:
        raise CheckpointError("checkpoint truncated before end of header")
    magic, version, digest, count, board_size = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"not a network checkpoint (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if expected_board_size is not None and board_size != expected_board_size:
        raise CheckpointError(
            f"architecture mismatch: checkpoint is for {board_size}x{board_size}, "
            f"expected {expected_board_size}x{expected_board_size}"
        )
    table = shape_table(board_size)
    if digest != table.digest() or count != table.total:
        raise CheckpointError("architecture hash mismatch: checkpoint does not match this network")
    body = data[HEADER.size:]
    if len(body) != 4 * count:
        raise CheckpointError(f"expected {4 * count} parameter bytes, found {len(body)}")
    flat = np.frombuffer(body, dtype="<f4").astype(np.float64)
    if not np.isfinite(flat).all():
        raise CheckpointError("checkpoint holds non-finite parameters")
    return NetParams(flat=flat, board_size=board_size)


def save_checkpoint(path: Union[str, Path], params: NetParams) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(params_to_bytes(params))
    tmp.replace(path)
    logger.debug("checkpoint written: %s", path)
    return path


def load_checkpoint(path: Union[str, Path], *, expected_board_size: Optional[int] = None) -> NetParams:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"unreadable checkpoint {path}: {e}") from e
    return params_from_bytes(data, expected_board_size=expected_board_size)
