"""Dataset readers, patch sequences and procedural corruptions.

Images are float64 arrays shaped (H, W, C) with values in [0, 1]; batches add
a leading axis. Patches are scanned row-major over the patch grid, and each
patch is flattened in (row, col, channel) order.
"""

from __future__ import annotations

import gzip
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.ndimage

from .errors import FormatError, ShapeError
from .numerics import DTYPE, RngStream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_PIXELS = 32 * 32 * 3


@dataclass(frozen=True)
class ImageBatch:
    images: np.ndarray
    labels: np.ndarray
    num_classes: int = 10

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ShapeError(f"images must be (batch, H, W, C), got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ShapeError(f"{self.images.shape[0]} images but labels have shape {self.labels.shape}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, index) -> ImageBatch:
        return ImageBatch(self.images[index], self.labels[index], self.num_classes)

    def head(self, n: int) -> ImageBatch:
        return self.subset(slice(0, n))


# -- readers -----------------------------------------------------------------


def _read_maybe_gzip(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            return gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise FormatError(f"{path}: corrupt gzip stream ({exc})", offset=0) from None
    return raw


def _parse_idx(raw: bytes, expected_magic: int, ndim: int, path) -> np.ndarray:
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated IDX header", offset=len(raw))
    magic = int.from_bytes(raw[:4], "big")
    if magic != expected_magic:
        raise FormatError(f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}", offset=0)
    dims = [int.from_bytes(raw[4 + 4 * i : 8 + 4 * i], "big") for i in range(ndim)]
    need = header + int(np.prod(dims))
    if len(raw) < need:
        raise FormatError(f"{path}: truncated IDX payload, expected {need} bytes, got {len(raw)}", offset=len(raw))
    if len(raw) > need:
        raise FormatError(f"{path}: {len(raw) - need} trailing bytes after IDX payload", offset=need)
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_mnist_idx(images_path, labels_path) -> ImageBatch:
    images = _parse_idx(_read_maybe_gzip(images_path), IDX_IMAGES_MAGIC, 3, images_path)
    labels = _parse_idx(_read_maybe_gzip(labels_path), IDX_LABELS_MAGIC, 1, labels_path)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    x = (images.astype(DTYPE) / 255.0)[..., None]
    return ImageBatch(x, labels.astype(np.int64), 10)


def write_mnist_idx(batch: ImageBatch, images_path, labels_path, compress: bool = False) -> None:
    """Inverse of :func:`load_mnist_idx`, for fixtures and round trips."""
    imgs = np.rint(batch.images[..., 0] * 255).astype(np.uint8)
    n, h, w = imgs.shape
    img_raw = IDX_IMAGES_MAGIC.to_bytes(4, "big") + b"".join(d.to_bytes(4, "big") for d in (n, h, w)) + imgs.tobytes()
    lab_raw = IDX_LABELS_MAGIC.to_bytes(4, "big") + n.to_bytes(4, "big") + batch.labels.astype(np.uint8).tobytes()
    opener = gzip.compress if compress else (lambda b: b)
    Path(images_path).write_bytes(opener(img_raw))
    Path(labels_path).write_bytes(opener(lab_raw))


def _load_cifar(paths, label_bytes: int, num_classes: int) -> ImageBatch:
    if isinstance(paths, (str, Path)):
        paths = [paths]
    record = label_bytes + CIFAR_PIXELS
    images, labels = [], []
    for p in paths:
        raw = Path(p).read_bytes()
        if len(raw) % record:
            whole = len(raw) - len(raw) % record
            raise FormatError(f"{p}: length {len(raw)} is not a multiple of {record}", offset=whole)
        recs = np.frombuffer(raw, dtype=np.uint8).reshape(-1, record)
        labels.append(recs[:, label_bytes - 1].astype(np.int64))
        # stored channel-planar: 1024 R, 1024 G, 1024 B
        planes = recs[:, label_bytes:].reshape(-1, 3, 32, 32)
        images.append(planes.transpose(0, 2, 3, 1).astype(DTYPE) / 255.0)
    return ImageBatch(np.concatenate(images), np.concatenate(labels), num_classes)


def load_cifar10_bin(paths) -> ImageBatch:
    return _load_cifar(paths, 1, 10)


def load_cifar100_bin(paths) -> ImageBatch:
    """CIFAR-100 records carry a coarse and a fine label byte; the fine label is used."""
    return _load_cifar(paths, 2, 100)


def write_cifar10_bin(batch: ImageBatch, path) -> None:
    pix = np.rint(batch.images * 255).astype(np.uint8).transpose(0, 3, 1, 2).reshape(len(batch), -1)
    recs = np.concatenate([batch.labels.astype(np.uint8)[:, None], pix], axis=1)
    Path(path).write_bytes(recs.tobytes())


# -- patches -----------------------------------------------------------------


def _check_patch_size(h: int, w: int, p: int) -> None:
    if p < 1 or h % p or w % p:
        raise ShapeError(f"patch size {p} does not divide image size {h}x{w}")


def extract_patches(img, p: int) -> np.ndarray:
    """(H, W, C) image -> (T, P*P*C) patch sequence with T = HW / P^2.

    Also accepts a (B, H, W, C) batch and returns (B, T, P*P*C).
    """
    a = np.asarray(img, dtype=DTYPE)
    single = a.ndim == 3
    if single:
        a = a[None]
    if a.ndim != 4:
        raise ShapeError(f"expected (H, W, C) or (B, H, W, C), got {a.shape}")
    b, h, w, c = a.shape
    _check_patch_size(h, w, p)
    seq = a.reshape(b, h // p, p, w // p, p, c).transpose(0, 1, 3, 2, 4, 5).reshape(b, (h // p) * (w // p), p * p * c)
    return seq[0] if single else seq


def reassemble_patches(seq, h: int, w: int, c: int, p: int) -> np.ndarray:
    a = np.asarray(seq, dtype=DTYPE)
    single = a.ndim == 2
    if single:
        a = a[None]
    _check_patch_size(h, w, p)
    b = a.shape[0]
    if a.shape[1:] != ((h // p) * (w // p), p * p * c):
        raise ShapeError(f"sequence shape {a.shape[1:]} does not match a {h}x{w}x{c} image with P={p}")
    img = a.reshape(b, h // p, w // p, p, p, c).transpose(0, 1, 3, 2, 4, 5).reshape(b, h, w, c)
    return img[0] if single else img


# -- corruptions -------------------------------------------------------------


def corruption_table() -> dict:
    """Severity parameters, loaded from the JSON document shipped with the package."""
    text = resources.files("vir").joinpath("data/corruptions.json").read_text()
    return json.loads(text)


CORRUPTIONS = ("gaussian_noise", "shot_noise", "defocus_blur", "contrast")


@dataclass(frozen=True)
class CorruptionKind:
    name: str
    severity: int

    def __post_init__(self):
        if self.name not in CORRUPTIONS:
            raise ValueError(f"unknown corruption {self.name!r}; choose from {CORRUPTIONS}")
        if not 1 <= self.severity <= 5:
            raise ValueError(f"severity must be in 1..5, got {self.severity}")

    @property
    def parameter(self) -> float:
        return corruption_table()[self.name]["values"][self.severity - 1]


def disk_kernel(radius: float) -> np.ndarray:
    r = int(np.ceil(radius))
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    k = (xx**2 + yy**2 <= radius**2).astype(DTYPE)
    return k / k.sum()


def gaussian_noise(img: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    return img + rng.normal(0.0, sigma, img.shape)


def shot_noise(img: np.ndarray, photons: float, rng: np.random.Generator) -> np.ndarray:
    return rng.poisson(img * photons) / photons


def defocus_blur(img: np.ndarray, radius: float) -> np.ndarray:
    k = disk_kernel(radius)
    # blur spatial axes only, per channel (and per image for batches)
    kernel = k.reshape((1,) * (img.ndim - 3) + k.shape + (1,))
    return scipy.ndimage.convolve(img, kernel, mode="reflect")


def contrast(img: np.ndarray, c: float) -> np.ndarray:
    mean = img.mean(axis=(-3, -2, -1), keepdims=True)
    return (1.0 - c) * img + c * mean


def corrupt(img, kind: CorruptionKind, stream: RngStream) -> np.ndarray:
    """Apply one corruption to an image or a batch; the result is clamped to [0, 1]."""
    a = np.asarray(img, dtype=DTYPE)
    if a.ndim not in (3, 4):
        raise ShapeError(f"expected (H, W, C) or (B, H, W, C), got {a.shape}")
    v = kind.parameter
    if kind.name == "gaussian_noise":
        out = gaussian_noise(a, v, stream.generator())
    elif kind.name == "shot_noise":
        out = shot_noise(a, v, stream.generator())
    elif kind.name == "defocus_blur":
        out = defocus_blur(a, v)
    else:
        out = contrast(a, v)
    return np.clip(out, 0.0, 1.0)
