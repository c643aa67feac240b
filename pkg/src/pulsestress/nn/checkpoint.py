"""Versioned binary model checkpoints.

Layout (all integers little-endian, see README for the byte-level contract):

    magic   12 bytes  b"PSTRESSCKPT1"
    variant u8        0 = cnn, 1 = hcnn
    classes u8
    step    u64
    rates   3 x f32   dropout rates (input, block, feature)
    count   u32       number of tensors
    tensor  repeated  name_len u32, name utf-8, rank u32, extents u32 each,
                      data float32 row-major

Tensors are written sorted by name; parameter tensors keep their plain names,
running statistics and Adam buffers are namespaced ("bn_stats/", "adam_m/",
"adam_v/") so a checkpoint restores training state exactly.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from ..errors import SchemaError
from .model import ModelState

MAGIC = b"PSTRESSCKPT1"
_VARIANTS = {"cnn": 0, "hcnn": 1}
_VARIANT_NAMES = {v: k for k, v in _VARIANTS.items()}


def _tensor_map(model: ModelState) -> dict[str, np.ndarray]:
    tensors = dict(model.params)
    tensors.update({f"bn_stats/{k}": v for k, v in model.bn_stats.items()})
    tensors.update({f"adam_m/{k}": v for k, v in model.adam_m.items()})
    tensors.update({f"adam_v/{k}": v for k, v in model.adam_v.items()})
    return tensors


def save_model(model: ModelState, path: str | os.PathLike) -> str:
    """Write a checkpoint atomically (temp file + rename)."""
    path = os.fspath(path)
    tensors = _tensor_map(model)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BBQ", _VARIANTS[model.variant], model.n_classes, model.step))
        fh.write(
            struct.pack(
                "<3f", model.dropout_input, model.dropout_block, model.dropout_feature
            )
        )
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            data = np.ascontiguousarray(tensors[name], dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())
    os.replace(tmp, path)
    return path


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise SchemaError("checkpoint truncated")
    return buf


def load_model(path: str | os.PathLike) -> ModelState:
    """Read a checkpoint written by save_model.

    Raises:
        SchemaError: wrong magic, unknown variant, or truncated file.
    """
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC)) != MAGIC:
            raise SchemaError(f"{path}: not a model checkpoint (bad magic)")
        variant_tag, n_classes, step = struct.unpack("<BBQ", _read_exact(fh, 10))
        if variant_tag not in _VARIANT_NAMES:
            raise SchemaError(f"{path}: unknown variant tag {variant_tag}")
        d_in, d_block, d_feat = struct.unpack("<3f", _read_exact(fh, 12))
        (count,) = struct.unpack("<I", _read_exact(fh, 4))

        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
            name = _read_exact(fh, name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4))
            shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
            n_items = int(np.prod(shape)) if rank else 1
            data = np.frombuffer(_read_exact(fh, 4 * n_items), dtype="<f4")
            tensors[name] = data.reshape(shape).copy()

    params, bn_stats, adam_m, adam_v = {}, {}, {}, {}
    for name, arr in tensors.items():
        if name.startswith("bn_stats/"):
            bn_stats[name[len("bn_stats/"):]] = arr
        elif name.startswith("adam_m/"):
            adam_m[name[len("adam_m/"):]] = arr
        elif name.startswith("adam_v/"):
            adam_v[name[len("adam_v/"):]] = arr
        else:
            params[name] = arr
    return ModelState(
        variant=_VARIANT_NAMES[variant_tag],
        n_classes=n_classes,
        params=params,
        bn_stats=bn_stats,
        adam_m=adam_m,
        adam_v=adam_v,
        step=step,
        dropout_input=d_in,
        dropout_block=d_block,
        dropout_feature=d_feat,
    )
