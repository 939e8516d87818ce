"""IDX ingestion, desk-scale MNIST preparation and the synthetic group-pose dataset."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .nets import Family, input_transform

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
UBYTE = 0x08


class IdxFormatError(ValueError):
    def __init__(self, message: str, offset: int, path=None):
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{message} (at byte offset {offset})")
        self.offset = offset
        self.path = path


@dataclass(eq=False)
class Dataset:
    images: np.ndarray          # [N, C, *spatial], values in [0, 1]
    labels: np.ndarray          # [N] int64
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return int(self.meta.get("num_classes", self.labels.max() + 1 if len(self) else 0))

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.images[index], self.labels[index], dict(self.meta))


def _open(path):
    return gzip.open(path, "rb") if str(path).endswith(".gz") else open(path, "rb")


def read_idx(path, expected_ndim: int | None = None) -> np.ndarray:
    """Parse an unsigned-byte IDX file (big-endian dimension header)."""
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4:
        raise IdxFormatError("file too short for the magic number", len(raw), path)
    if raw[0] != 0 or raw[1] != 0:
        raise IdxFormatError(f"bad magic 0x{int.from_bytes(raw[:4], 'big'):08x}", 0, path)
    if raw[2] != UBYTE:
        raise IdxFormatError(f"unsupported element type 0x{raw[2]:02x}", 2, path)
    ndim = raw[3]
    if expected_ndim is not None and ndim != expected_ndim:
        raise IdxFormatError(
            f"bad magic 0x{int.from_bytes(raw[:4], 'big'):08x}: expected "
            f"0x{0x800 + expected_ndim:08x}", 3, path)
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise IdxFormatError("truncated dimension header", len(raw), path)
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) - head < count:
        raise IdxFormatError(f"truncated data: need {count} bytes, have {len(raw) - head}",
                             len(raw), path)
    if len(raw) - head > count:
        raise IdxFormatError("trailing bytes after data", head + count, path)
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=head).reshape(dims)


def write_idx(path, array) -> None:
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise ValueError("IDX export expects uint8 data")
    header = bytes([0, 0, UBYTE, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as f:
        f.write(header + np.ascontiguousarray(arr).tobytes())


def load_idx(images_path, labels_path, limit: int | None = None) -> Dataset:
    """Load an image/label IDX pair, scaled to [0, 1] and truncated to ``limit``."""
    imgs = read_idx(images_path)
    if imgs.ndim < 3:
        raise IdxFormatError(f"image file has {imgs.ndim} dims, expected >= 3", 3, images_path)
    labels = read_idx(labels_path, expected_ndim=1)
    if len(imgs) != len(labels):
        raise IdxFormatError(
            f"{len(imgs)} images but {len(labels)} labels", 4, labels_path)
    if limit is not None:
        imgs, labels = imgs[:limit], labels[:limit]
    images = imgs.astype(np.float64) / 255.0
    if images.ndim == 3:
        images = images[:, None]
    meta = {"name": os.path.basename(str(images_path)), "source": str(images_path),
            "normalization": "x/255"}
    if len(labels):
        meta["num_classes"] = int(labels.max()) + 1
    return Dataset(images, labels.astype(np.int64), meta)


def save_idx(dataset: Dataset, images_path, labels_path) -> None:
    """Export as uint8 IDX; values are quantized to k/255."""
    imgs = dataset.images
    if imgs.shape[1] == 1 and imgs.ndim == 4:
        imgs = imgs[:, 0]
    write_idx(images_path, np.rint(np.clip(imgs, 0, 1) * 255).astype(np.uint8))
    write_idx(labels_path, dataset.labels.astype(np.uint8))


def downscale2x(ds: Dataset) -> Dataset:
    """2x2 average pooling over the two trailing spatial axes."""
    x = ds.images
    h, w = x.shape[-2] // 2 * 2, x.shape[-1] // 2 * 2
    x = x[..., :h, :w]
    pooled = x.reshape(x.shape[:-2] + (h // 2, 2, w // 2, 2)).mean(axis=(-3, -1))
    return Dataset(pooled, ds.labels.copy(), dict(ds.meta, downscaled="2x2 mean"))


def load_mnist_desk(directory, n_train: int = 2048, n_test: int = 1024):
    """First ``n_train``/``n_test`` MNIST images, downscaled to 14x14."""
    def find(stem):
        for name in (stem, stem + ".gz"):
            p = os.path.join(directory, name)
            if os.path.exists(p):
                return p
        raise FileNotFoundError(os.path.join(directory, stem))

    train = load_idx(find("train-images-idx3-ubyte"), find("train-labels-idx1-ubyte"), n_train)
    test = load_idx(find("t10k-images-idx3-ubyte"), find("t10k-labels-idx1-ubyte"), n_test)
    return downscale2x(train), downscale2x(test)


# --- synthetic group-structured data ------------------------------------------------

# 3x3 motifs; the second is the mirror image of the first, so the two classes
# have identical pixel statistics and are not related by any rotation.
MOTIFS = (
    np.array([[1, 0, 0],
              [1, 0, 0],
              [1, 1, 0]], dtype=np.float64),
    np.array([[0, 0, 1],
              [0, 0, 1],
              [0, 1, 1]], dtype=np.float64),
)


def make_templates(family: Family, num_classes: int = 2, period: int | None = None) -> np.ndarray:
    """Class templates ``[K, 1, *input_shape]``: a motif tiled with the given period.

    For the scale family slice ``s`` of the stack is the tiling blurred by a
    box of half-width ``s``, so the scale axis carries class-specific structure.
    """
    if num_classes > len(MOTIFS):
        raise ValueError(f"at most {len(MOTIFS)} classes are available")
    n = family.input_shape[-1]
    period = period or n
    out = []
    for k in range(num_classes):
        img = np.zeros((n, n))
        for i in range(0, n - 2, period):
            for j in range(0, n - 2, period):
                img[i:i + 3, j:j + 3] += MOTIFS[k]
        if family.name == "scale":
            stack = [_box_blur(img, s) for s in range(family.input_shape[0])]
            img = np.stack(stack)
        out.append(img[None])
    return np.stack(out)


def _box_blur(img, radius):
    if radius == 0:
        return img.copy()
    acc = np.zeros_like(img)
    for di in range(-radius, radius + 1):
        for dj in range(-radius, radius + 1):
            acc += np.roll(img, (di, dj), axis=(0, 1))
    return acc / (2 * radius + 1) ** 2


def synth_dataset(num_per_class: int, family: Family, rng, num_classes: int = 2,
                  noise: float = 0.0, period: int | None = None) -> Dataset:
    """Class templates at uniformly sampled group poses plus Gaussian pixel noise.

    The whole dataset is min-max scaled to [0, 1] with one affine map, which
    commutes with every group action.
    """
    templates = make_templates(family, num_classes, period)
    G = family.group
    n = num_per_class * num_classes
    labels = np.repeat(np.arange(num_classes), num_per_class)
    labels = labels[rng.permutation(n)]
    poses = rng.integers(G.order, size=n)
    images = np.stack([input_transform(templates[c], G, int(g)) for c, g in zip(labels, poses)])
    if noise:
        images = images + noise * rng.normal(size=images.shape)
    lo, hi = images.min(), images.max()
    images = (images - lo) / (hi - lo) if hi > lo else np.zeros_like(images)
    meta = {"name": f"synth-{family.name}", "source": "synthetic", "normalization": "min-max",
            "num_classes": num_classes, "noise": noise, "poses": poses.tolist()}
    return Dataset(images, labels.astype(np.int64), meta)


def oracle_features(ds: Dataset, family: Family, num_classes: int = 2,
                    period: int | None = None) -> np.ndarray:
    """Group-max correlation with each class template (pose-invariant by construction)."""
    templates = make_templates(family, num_classes, period)
    G = family.group
    feats = np.empty((len(ds), num_classes))
    x = ds.images.reshape(len(ds), -1)
    x = x - x.mean(axis=1, keepdims=True)
    for k in range(num_classes):
        posed = np.stack([input_transform(templates[k], G, g).reshape(-1) for g in range(G.order)])
        posed = posed - posed.mean(axis=1, keepdims=True)
        feats[:, k] = (x @ posed.T).max(axis=1)
    return feats
