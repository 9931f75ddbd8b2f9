"""File formats: PNG images, binary tensors (INRT), checkpoints (INRC), CSV.

Both binary formats are little-endian regardless of platform. A tensor block
is:

    magic "INRT" | u16 version | u32 H, W, C | u8 precision (32|64) | raw data

row-major with the channel axis innermost. A checkpoint is:

    magic "INRC" | u16 version | u32 header_len | JSON header | tensor blocks

where the header carries the model spec and bookkeeping flags, and the
tensor blocks hold every parameter array and batch-norm statistic in a fixed
layer walk. Round-trips are bit-exact.
"""
from __future__ import annotations

import json
import struct

import numpy as np
from PIL import Image

from .models import Model, ModelSpec, build_model
from .ops import check_tensor
from .rng import seeded_rng

TENSOR_MAGIC = b"INRT"
CHECKPOINT_MAGIC = b"INRC"
FORMAT_VERSION = 1


class FormatError(Exception):
    """Base class for file-format failures."""


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


def load_image(path) -> np.ndarray:
    """Decode an 8-bit PNG to a float32 (H, W, C) tensor in [0, 1]."""
    try:
        with Image.open(path) as img:
            if img.mode == "L":
                arr = np.asarray(img, dtype=np.uint8)[:, :, None]
            else:
                arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except Exception as exc:
        raise ValueError(f"cannot read image {path}: {exc}") from exc
    return arr.astype(np.float32) / np.float32(255.0)


def save_image(tensor: np.ndarray, path) -> None:
    """Clamp to [0, 1], quantize (round half away from zero), write PNG."""
    check_tensor(tensor, "image")
    clipped = np.clip(tensor, 0.0, 1.0).astype(np.float64)
    q = np.floor(clipped * 255.0 + 0.5).astype(np.uint8)
    if q.shape[2] == 1:
        Image.fromarray(q[:, :, 0], mode="L").save(path, format="PNG")
    elif q.shape[2] == 3:
        Image.fromarray(q, mode="RGB").save(path, format="PNG")
    else:
        raise ValueError(f"can only write 1- or 3-channel images, got {q.shape[2]}")


def _write_tensor_block(f, tensor: np.ndarray) -> None:
    h, w, c = tensor.shape
    bits = 32 if tensor.dtype == np.float32 else 64
    f.write(TENSOR_MAGIC)
    f.write(struct.pack("<HIIIB", FORMAT_VERSION, h, w, c, bits))
    f.write(np.ascontiguousarray(tensor, dtype=f"<f{bits // 8}").tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise TruncatedFileError(f"unexpected end of file while reading {what}")
    return data


def _read_tensor_block(f) -> np.ndarray:
    magic = _read_exact(f, 4, "magic")
    if magic != TENSOR_MAGIC:
        raise BadMagicError(f"expected {TENSOR_MAGIC!r}, found {magic!r}")
    version, h, w, c, bits = struct.unpack("<HIIIB", _read_exact(f, 15, "header"))
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"tensor format version {version}")
    if bits not in (32, 64):
        raise FormatError(f"bad precision tag {bits}")
    nbytes = h * w * c * (bits // 8)
    data = np.frombuffer(_read_exact(f, nbytes, "tensor data"), dtype=f"<f{bits // 8}")
    dtype = np.float32 if bits == 32 else np.float64
    return data.astype(dtype, copy=True).reshape(h, w, c)


def save_tensor(tensor: np.ndarray, path) -> None:
    check_tensor(tensor, "tensor")
    with open(path, "wb") as f:
        _write_tensor_block(f, tensor)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        tensor = _read_tensor_block(f)
        if f.read(1):
            raise FormatError("trailing bytes after tensor data")
    return tensor


def _state_arrays(model: Model):
    """Every parameter array and recorded statistic, in checkpoint order."""
    for block in model.blocks:
        kernels = [block.main] + [k for k, _ in block.branches] \
            + [k for k, _ in block.pw_chain]
        if block.gate_fc1 is not None:
            kernels += [block.gate_fc1, block.gate_fc2]
        bns = ([block.bn_main] if block.bn_main is not None else []) \
            + [bn for _, bn in block.branches] + [bn for _, bn in block.pw_chain]
        for kern in kernels:
            yield kern.weights, (kern.k * kern.k, kern.cin, kern.cout)
            yield kern.bias, (1, 1, kern.cout)
        for bn in bns:
            for arr in (bn.gamma, bn.beta, bn.mu, bn.var):
                yield arr, (1, 1, bn.channels)


def save_checkpoint(model: Model, path) -> None:
    header = {
        "spec": model.spec.to_dict(),
        "precision": model.precision,
        "stats_captured": model.stats_captured,
        "train_shape": list(model.train_shape) if model.train_shape else None,
        "locked_shape": list(model.locked_shape) if model.locked_shape else None,
        "bn_eps": [float(bn.eps) for bn in _all_bns(model)],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<HI", FORMAT_VERSION, len(blob)))
        f.write(blob)
        for arr, shape3d in _state_arrays(model):
            _write_tensor_block(f, arr.reshape(shape3d))


def _all_bns(model: Model):
    for block in model.blocks:
        if block.bn_main is not None:
            yield block.bn_main
        for _, bn in block.branches:
            yield bn
        for _, bn in block.pw_chain:
            yield bn


def load_checkpoint(path) -> Model:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise BadMagicError(f"expected {CHECKPOINT_MAGIC!r}, found {magic!r}")
        version, hlen = struct.unpack("<HI", _read_exact(f, 6, "header"))
        if version != FORMAT_VERSION:
            raise UnsupportedVersionError(f"checkpoint format version {version}")
        try:
            header = json.loads(_read_exact(f, hlen, "spec header").decode("utf-8"))
            spec = ModelSpec.from_dict(header["spec"])
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"bad checkpoint header: {exc}") from exc
        precision = header.get("precision", 32)
        model = build_model(spec, seeded_rng(0), precision=precision)
        for arr, shape3d in _state_arrays(model):
            block = _read_tensor_block(f)
            if block.shape != shape3d:
                raise FormatError(f"stored array shape {block.shape} does not "
                                  f"match the model spec's {shape3d}")
            arr[...] = block.reshape(arr.shape).astype(arr.dtype)
        for bn, eps in zip(_all_bns(model), header.get("bn_eps", [])):
            bn.eps = float(eps)
        if f.read(1):
            raise FormatError("trailing bytes after checkpoint data")
    model.stats_captured = bool(header.get("stats_captured", False))
    ts = header.get("train_shape")
    model.train_shape = tuple(ts) if ts else None
    ls = header.get("locked_shape")
    model.locked_shape = tuple(ls) if ls else None
    return model


def write_csv(path, header: list[str], rows) -> None:
    """Comma-separated, '.' decimal point, line-feed terminators."""
    with open(path, "w", newline="") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(str(v) for v in row) + "\n")
