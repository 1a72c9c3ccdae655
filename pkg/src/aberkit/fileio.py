"""Binary tensor container and PNG image I/O.

Tensor container ("MLTN"): magic bytes b"MLTN", format version u16, dtype
code u8 (1=float32, 2=float64, 3=complex128), rank u8, one u64 per extent,
then the raw little-endian payload in row-major order.

Images are 8- or 16-bit PNG on disk and linear [0,1] float32 [C,H,W] in
memory (stored sample values are treated as linear, no transfer curve).
"""

from __future__ import annotations

import struct
from pathlib import Path

import cv2
import numpy as np

from .tensor import ContractError, Tensor

MAGIC = b"MLTN"
VERSION = 1

_DTYPE_CODES = {
    np.dtype(np.float32): 1,
    np.dtype(np.float64): 2,
    np.dtype(np.complex128): 3,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def tensor_to_bytes(t: Tensor) -> bytes:
    code = _DTYPE_CODES.get(t.dtype)
    if code is None:
        raise ContractError(f"unsupported dtype {t.dtype}")
    head = MAGIC + struct.pack("<HBB", VERSION, code, t.ndim)
    head += struct.pack(f"<{t.ndim}Q", *t.shape) if t.ndim else b""
    payload = np.ascontiguousarray(t.data)
    if payload.dtype.byteorder == ">":
        payload = payload.byteswap()
    return head + payload.tobytes()


def tensor_from_bytes(buf: bytes) -> Tensor:
    if buf[:4] != MAGIC:
        raise ContractError("not an MLTN container")
    version, code, rank = struct.unpack_from("<HBB", buf, 4)
    if version != VERSION:
        raise ContractError(f"unsupported container version {version}")
    dtype = _CODE_DTYPES.get(code)
    if dtype is None:
        raise ContractError(f"unknown dtype code {code}")
    off = 8
    shape = struct.unpack_from(f"<{rank}Q", buf, off) if rank else ()
    off += 8 * rank
    count = int(np.prod(shape)) if rank else 1
    data = np.frombuffer(buf, dtype=dtype.newbyteorder("<"), count=count, offset=off)
    return Tensor(data.astype(dtype).reshape(shape))


def save_tensor(path, t: Tensor):
    Path(path).write_bytes(tensor_to_bytes(t))


def load_tensor(path) -> Tensor:
    return tensor_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# PNG


def read_image(path) -> Tensor:
    """Read an 8- or 16-bit PNG as float32 [C,H,W] in [0,1]."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IOError(f"cannot read image {path}")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise IOError(f"unsupported sample type {raw.dtype} in {path}")
    if raw.ndim == 2:
        raw = raw[:, :, None].repeat(3, axis=2)
    elif raw.shape[2] == 4:
        raw = raw[:, :, :3]
    rgb = raw[:, :, ::-1]  # cv2 loads BGR
    arr = (rgb.astype(np.float32) / scale).transpose(2, 0, 1)
    return Tensor(arr)


def write_image(path, t: Tensor, depth: int = 8):
    """Write [C,H,W] (or [H,W]) values clamped to [0,1] as PNG."""
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    if arr.ndim == 2:
        arr = arr[None].repeat(3, axis=0)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ContractError(f"expected [3,H,W] image, got {arr.shape}")
    arr = np.clip(arr.astype(np.float64), 0.0, 1.0)
    if depth == 8:
        q = np.rint(arr * 255.0).astype(np.uint8)
    elif depth == 16:
        q = np.rint(arr * 65535.0).astype(np.uint16)
    else:
        raise ContractError("depth must be 8 or 16")
    bgr = q.transpose(1, 2, 0)[:, :, ::-1]
    if not cv2.imwrite(str(path), np.ascontiguousarray(bgr)):
        raise IOError(f"cannot write image {path}")
