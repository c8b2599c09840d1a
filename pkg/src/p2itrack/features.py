"""Feature-map providers: P2IF binary files and handcrafted descriptors.

The handcrafted provider is a deterministic, training-free stand-in for a
learned encoder: every 8x8 image patch becomes a 10-channel descriptor
(mean intensity, intensity std, 8-bin gradient-orientation histogram),
L2-normalized so downstream dot products behave like cosine similarities.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core import FeatureMap, NonFiniteValue, P2ITrackError

P2IF_MAGIC = b"P2IF"
P2IF_VERSION = 1

STRIDE = 8
HANDCRAFTED_DIM = 10
N_ORIENT_BINS = 8


class BadMagic(P2ITrackError):
    pass


class DimMismatch(P2ITrackError):
    pass


class EmptyImage(P2ITrackError):
    pass


def save_features(path: str | Path, fmap: FeatureMap) -> None:
    """Write a FeatureMap in P2IF binary form.

    Layout: magic "P2IF", u32 version=1, u32 h, u32 w, u32 d, then
    h*w*d float32 little-endian in (row, col, channel) order.
    """
    data = np.ascontiguousarray(fmap.data, dtype="<f4")
    header = P2IF_MAGIC + struct.pack("<IIII", P2IF_VERSION, fmap.h, fmap.w, fmap.d)
    with open(path, "wb") as f:
        f.write(header)
        f.write(data.tobytes())


def load_features(path: str | Path, stride: int = STRIDE) -> FeatureMap:
    """Read a P2IF file; values are bit-exact to what was saved."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 20 or raw[:4] != P2IF_MAGIC:
        raise BadMagic(f"{path}: not a P2IF file")
    version, h, w, d = struct.unpack("<IIII", raw[4:20])
    if version != P2IF_VERSION:
        raise BadMagic(f"{path}: unsupported P2IF version {version}")
    payload = raw[20:]
    expected = h * w * d * 4
    if len(payload) != expected:
        raise DimMismatch(
            f"{path}: header says {h}x{w}x{d} ({expected} bytes), "
            f"payload has {len(payload)}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(h, w, d)
    if not np.all(np.isfinite(data)):
        raise NonFiniteValue(f"{path}: non-finite feature values")
    return FeatureMap(data.copy(), stride=stride)


def _pad_to_multiple(image: np.ndarray, multiple: int) -> np.ndarray:
    h, w = image.shape
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph or pw:
        image = np.pad(image, ((0, ph), (0, pw)), mode="edge")
    return image


def handcrafted_features(image: np.ndarray) -> FeatureMap:
    """Descriptor grid for a grayscale image, one 10-vector per 8x8 patch.

    Gradients use central differences (one-sided at the borders); the
    orientation histogram is magnitude-weighted over 8 equal angle bins.
    Each descriptor is L2-normalized; an all-zero descriptor (possible
    only for a zero patch) falls back to the unit vector on channel 0.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.size == 0:
        raise EmptyImage(f"expected a non-empty 2-d grid, got shape {image.shape}")
    image = _pad_to_multiple(image, STRIDE)
    h, w = image.shape
    gh, gw = h // STRIDE, w // STRIDE

    gy, gx = np.gradient(image)
    mag = np.hypot(gy, gx)
    theta = np.arctan2(gy, gx)  # [-pi, pi]
    bins = np.floor((theta + np.pi) / (2 * np.pi / N_ORIENT_BINS)).astype(np.int64)
    bins = np.clip(bins, 0, N_ORIENT_BINS - 1)

    patches = image.reshape(gh, STRIDE, gw, STRIDE)
    desc = np.zeros((gh, gw, HANDCRAFTED_DIM), dtype=np.float64)
    desc[:, :, 0] = patches.mean(axis=(1, 3))
    desc[:, :, 1] = patches.std(axis=(1, 3))

    mag_p = mag.reshape(gh, STRIDE, gw, STRIDE)
    bin_p = bins.reshape(gh, STRIDE, gw, STRIDE)
    for b in range(N_ORIENT_BINS):
        desc[:, :, 2 + b] = np.where(bin_p == b, mag_p, 0.0).sum(axis=(1, 3))

    norms = np.linalg.norm(desc, axis=2, keepdims=True)
    zero = norms[:, :, 0] < 1e-12
    norms[norms < 1e-12] = 1.0
    desc /= norms
    desc[zero, 0] = 1.0
    return FeatureMap(desc.astype(np.float32), stride=STRIDE)


class FileBackedProvider:
    """Serves per-frame FeatureMaps from a directory of P2IF files.

    Files are named ``%06d.p2if`` by 1-based frame index.
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def get(self, frame: int) -> FeatureMap:
        return load_features(self.directory / f"{frame:06d}.p2if")


class HandcraftedProvider:
    """Computes handcrafted features from grayscale images on demand.

    ``loader`` maps a 1-based frame index to a 2-d float grid in [0, 1].
    """

    def __init__(self, loader):
        self.loader = loader

    def get(self, frame: int) -> FeatureMap:
        return handcrafted_features(self.loader(frame))


def image_dir_loader(directory: str | Path):
    """Frame loader over ``%06d.png`` grayscale images, scaled to [0, 1]."""
    from PIL import Image

    directory = Path(directory)

    def load(frame: int) -> np.ndarray:
        path = directory / f"{frame:06d}.png"
        with Image.open(path) as img:
            arr = np.asarray(img.convert("L"), dtype=np.float64)
        return arr / 255.0

    return load
