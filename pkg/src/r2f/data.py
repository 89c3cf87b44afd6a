"""Desk-scale dataset in IDX files.

IDX layout (big-endian): two zero bytes, a dtype code (0x08 = u8), the rank,
one u32 per dimension, then the raw values. Images are ``N x 28 x 28`` u8
(magic 0x00000803), labels ``N`` u8 (magic 0x00000801).
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import DecodeError
from .nn import quant

IMAGE_MAGIC, LABEL_MAGIC = 0x803, 0x801
INPUT_EXP = -7
SIDE = 28
N_TEST = 500


@dataclass
class Dataset:
    images: np.ndarray  # (N, 28, 28) uint8
    labels: np.ndarray  # (N,) uint8

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        return Dataset(self.images[idx], self.labels[idx])

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1 if len(self) else 0


def write_idx(path, arr):
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    head = bytes([0, 0, 0x08, arr.ndim]) + np.asarray(arr.shape, dtype=">u4").tobytes()
    with open(path, "wb") as f:
        f.write(head + arr.tobytes())


def read_idx(path, magic=None):
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 4 or buf[0] or buf[1] or buf[2] != 0x08:
        raise DecodeError("bad magic", f"{path} is not a u8 IDX file")
    ndim = buf[3]
    if magic is not None and int.from_bytes(buf[:4], "big") != magic:
        raise DecodeError("bad magic", f"{path}: expected {magic:#010x}")
    if len(buf) < 4 + 4 * ndim:
        raise DecodeError("truncated", f"{path}: dimension table")
    dims = tuple(int(d) for d in np.frombuffer(buf, ">u4", ndim, 4))
    body = buf[4 + 4 * ndim:]
    if len(body) != int(np.prod(dims)):
        raise DecodeError("dims", f"{path}: dims {dims} need {int(np.prod(dims))} bytes, have {len(body)}")
    return np.frombuffer(body, np.uint8).reshape(dims).copy()


def _paths(root, split):
    return (os.path.join(root, f"{split}-images.idx3-ubyte"),
            os.path.join(root, f"{split}-labels.idx1-ubyte"))


def load_dataset(root, split="train"):
    img_path, lab_path = _paths(root, split)
    images = read_idx(img_path, IMAGE_MAGIC)
    labels = read_idx(lab_path, LABEL_MAGIC)
    if images.ndim != 3 or images.shape[1:] != (SIDE, SIDE):
        raise DecodeError("dims", f"images must be N x {SIDE} x {SIDE}, got {images.shape}")
    if labels.ndim != 1 or len(labels) != len(images):
        raise DecodeError("dims", f"{len(labels)} labels for {len(images)} images")
    return Dataset(images, labels)


def save_dataset(root, split, ds: Dataset):
    os.makedirs(root, exist_ok=True)
    img_path, lab_path = _paths(root, split)
    write_idx(img_path, ds.images)
    write_idx(lab_path, ds.labels)


def digits_28(seed=0):
    """The 8x8 sklearn digits, upsampled to 24x24 and padded to 28x28; (train, test)."""
    from scipy.ndimage import zoom
    from sklearn.datasets import load_digits

    d = load_digits()
    small = d.images / 16.0
    big = np.clip(zoom(small, (1, 3, 3), order=1), 0.0, 1.0)
    images = np.zeros((len(big), SIDE, SIDE), dtype=np.uint8)
    images[:, 2:26, 2:26] = np.round(big * 255).astype(np.uint8)
    labels = d.target.astype(np.uint8)
    perm = np.random.default_rng(seed).permutation(len(labels))
    test, train = perm[:N_TEST], perm[N_TEST:]
    return Dataset(images[train], labels[train]), Dataset(images[test], labels[test])


def ensure_digits(root):
    """Write the digits IDX files under ``root`` unless already present."""
    if not all(os.path.exists(p) for s in ("train", "test") for p in _paths(root, s)):
        train, test = digits_28()
        save_dataset(root, "train", train)
        save_dataset(root, "test", test)
    return load_dataset(root, "train"), load_dataset(root, "test")


def default_root():
    return os.environ.get("R2F_DATA", os.path.join(os.path.expanduser("~"), ".cache", "r2f", "data"))


def to_input(images, exp=INPUT_EXP):
    """u8 pixels -> int8 network input (N, 1, 28, 28) at scale 2**exp over pixel/256."""
    x = np.asarray(images, dtype=np.float64) / 256.0
    return quant.quantize(x, exp)[:, None]


def to_float_input(images, exp=INPUT_EXP):
    """The value the quantized input represents, as float64."""
    return quant.dequantize(to_input(images, exp), exp)
