"""Labelled image sets: CIFAR-10 binary ingestion, synthetic shapes and protocol splits."""
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import structlog
from PIL import Image, ImageDraw

from .exceptions import DatasetError

log = structlog.get_logger(__name__)

IMAGE_SHAPE = (32, 32, 3)
RECORD_BYTES = 1 + 32 * 32 * 3
BATCH_RECORDS = 10000
BATCH_FILE_BYTES = BATCH_RECORDS * RECORD_BYTES

TRAIN_FILES = tuple(f'data_batch_{i}.bin' for i in range(1, 6))
TEST_FILE = 'test_batch.bin'
TEST_ID_OFFSET = 50000


@dataclass(frozen=True, eq=False)
class LabeledImageSet:
    """uint8 images (N, H, W, 3) with labels, stable source ids and a provenance tag."""

    images: np.ndarray
    labels: np.ndarray
    ids: np.ndarray
    provenance: str = 'clean'
    num_classes: int = 10

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[-1] != 3:
            raise DatasetError(f"images must be (N, H, W, 3), got {self.images.shape}")
        if self.images.dtype != np.uint8:
            raise DatasetError(f"images must be uint8, got {self.images.dtype}")
        n = self.images.shape[0]
        if self.labels.shape != (n,) or self.ids.shape != (n,):
            raise DatasetError(f"{n} images but labels {self.labels.shape} and ids {self.ids.shape}")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DatasetError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return self.images.shape[0]

    def __repr__(self):
        return f"LabeledImageSet(n={len(self)}, provenance={self.provenance!r})"

    def take(self, indices, provenance=None):
        indices = np.asarray(indices, dtype=np.intp)
        return LabeledImageSet(
            images=self.images[indices], labels=self.labels[indices], ids=self.ids[indices],
            provenance=self.provenance if provenance is None else provenance,
            num_classes=self.num_classes,
        )

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.num_classes)

    @classmethod
    def concat(cls, sets, provenance):
        sets = list(sets)
        if not sets:
            raise DatasetError("nothing to concatenate")
        return cls(
            images=np.concatenate([s.images for s in sets]),
            labels=np.concatenate([s.labels for s in sets]),
            ids=np.concatenate([s.ids for s in sets]),
            provenance=provenance,
            num_classes=max(s.num_classes for s in sets),
        )


def empty_set(num_classes=10, provenance='clean'):
    return LabeledImageSet(
        images=np.zeros((0,) + IMAGE_SHAPE, dtype=np.uint8),
        labels=np.zeros(0, dtype=np.int64), ids=np.zeros(0, dtype=np.int64),
        provenance=provenance, num_classes=num_classes,
    )


def _decode_records(raw, path):
    records = raw.reshape(-1, RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise DatasetError(f"{path}: record {bad} has label byte {labels[bad]} > 9")
    images = records[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return np.ascontiguousarray(images), labels


def _read_batch(path):
    if not path.is_file():
        raise DatasetError(f"missing file {path}")
    size = path.stat().st_size
    if size != BATCH_FILE_BYTES:
        raise DatasetError(f"wrong file size for {path}: {size} bytes, expected {BATCH_FILE_BYTES}")
    return _decode_records(np.fromfile(path, dtype=np.uint8), path)


def _batch_dir(directory):
    directory = Path(directory)
    nested = directory / 'cifar-10-batches-bin'
    return nested if nested.is_dir() else directory


def load_cifar10(directory) -> tuple:
    """(train, test) from the CIFAR-10 binary files; ids 0..49999 for train, 50000.. for test."""
    directory = _batch_dir(directory)
    parts = [_read_batch(directory / name) for name in TRAIN_FILES]
    train_images = np.concatenate([p[0] for p in parts])
    train_labels = np.concatenate([p[1] for p in parts])
    test_images, test_labels = _read_batch(directory / TEST_FILE)
    train = LabeledImageSet(train_images, train_labels, np.arange(len(train_labels), dtype=np.int64))
    test = LabeledImageSet(
        test_images, test_labels, np.arange(len(test_labels), dtype=np.int64) + TEST_ID_OFFSET,
    )
    log.info("dataset loaded", source='cifar10', directory=str(directory), train=len(train), test=len(test))
    return train, test


def write_records(data, path):
    """Dump a set as CIFAR-10 records (label byte, then planar R, G, B)."""
    if data.images.shape[1:] != IMAGE_SHAPE:
        raise DatasetError(f"records hold 32x32x3 images, got {data.images.shape[1:]}")
    planar = data.images.transpose(0, 3, 1, 2).reshape(len(data), -1)
    records = np.concatenate([data.labels.astype(np.uint8)[:, None], planar], axis=1)
    path = Path(path)
    path.write_bytes(records.tobytes())
    return path


def read_records(path, first_id=0, provenance='clean'):
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"missing file {path}")
    size = path.stat().st_size
    if size % RECORD_BYTES:
        raise DatasetError(f"wrong file size for {path}: {size} is not a multiple of {RECORD_BYTES}")
    images, labels = _decode_records(np.fromfile(path, dtype=np.uint8), path)
    ids = np.arange(len(labels), dtype=np.int64) + first_id
    return LabeledImageSet(images, labels, ids, provenance=provenance)


def load_image(path):
    """An RGB image file as an HxWx3 uint8 array."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert('RGB'), dtype=np.uint8).copy()
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot read image {path}: {exc}") from None


def _draw_shape(draw, kind, box, fill):
    x0, y0, x1, y1 = box
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    w, h = x1 - x0, y1 - y0
    if kind == 0:
        draw.ellipse(box, fill=fill)
    elif kind == 1:
        draw.rectangle(box, fill=fill)
    elif kind == 2:
        draw.polygon([(cx, y0), (x1, y1), (x0, y1)], fill=fill)
    elif kind == 3:
        draw.polygon([(cx, y0), (x1, cy), (cx, y1), (x0, cy)], fill=fill)
    elif kind == 4:
        draw.rectangle((x0, cy - h / 6, x1, cy + h / 6), fill=fill)
        draw.rectangle((cx - w / 6, y0, cx + w / 6, y1), fill=fill)
    elif kind == 5:
        draw.ellipse(box, outline=fill, width=max(2, int(w / 5)))
    elif kind == 6:
        draw.rectangle((x0, cy - h / 5, x1, cy + h / 5), fill=fill)
    elif kind == 7:
        draw.rectangle((cx - w / 5, y0, cx + w / 5, y1), fill=fill)
    elif kind == 8:
        draw.polygon([(x0, y0), (x1, y0), (cx, y1)], fill=fill)
    else:
        draw.rectangle(box, outline=fill, width=max(2, int(w / 5)))


SHAPE_KINDS = 10


def synth_shapes(n, classes=10, seed=0) -> LabeledImageSet:
    """Filled shapes at random position, scale and intensity; class ``c`` draws shape ``c % 10``.

    Classes beyond ten reuse the outlines with a different colour channel.
    """
    if classes < 1:
        raise DatasetError("classes must be >= 1")
    if classes > n:
        raise DatasetError(f"cannot balance {classes} classes over {n} images")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % classes).astype(np.int64)
    images = np.empty((n,) + IMAGE_SHAPE, dtype=np.uint8)
    for i, label in enumerate(labels):
        background = int(rng.integers(0, 70))
        img = Image.new('RGB', IMAGE_SHAPE[:2], (background,) * 3)
        size = rng.uniform(12, 26)
        x0 = rng.uniform(0, 32 - size)
        y0 = rng.uniform(0, 32 - size)
        fill = [int(v) for v in rng.integers(110, 256, size=3)]
        fill[int(label // SHAPE_KINDS) % 3] = 255
        _draw_shape(ImageDraw.Draw(img), int(label % SHAPE_KINDS), (x0, y0, x0 + size, y0 + size), tuple(fill))
        noisy = np.asarray(img, dtype=np.int16) + rng.integers(-8, 9, size=IMAGE_SHAPE)
        images[i] = np.clip(noisy, 0, 255)
    data = LabeledImageSet(images, labels, np.arange(n, dtype=np.int64), provenance='synth', num_classes=classes)
    log.info("dataset loaded", source='synth', n=n, classes=classes, seed=seed)
    return data


def _stratified_pick(labels, num_classes, total, rng):
    """Indices of ``total`` samples, each class getting its share by largest remainder."""
    counts = np.bincount(labels, minlength=num_classes)
    exact = counts * (total / len(labels))
    quotas = np.floor(exact).astype(np.int64)
    remainder = total - int(quotas.sum())
    if remainder > 0:
        # stable sort keeps ties in class order
        order = np.argsort(-(exact - quotas), kind='stable')
        quotas[order[:remainder]] += 1
    picked = []
    for c in range(num_classes):
        members = np.flatnonzero(labels == c)
        picked.append(rng.permutation(members)[:quotas[c]])
    return np.sort(np.concatenate(picked)) if picked else np.zeros(0, dtype=np.intp)


def _split_size(fraction, n):
    return int(np.floor(fraction * n + 0.5))


def augmentation_split(corrupted, fraction=0.5, seed=0, stratified=True):
    """Partition a corrupted set into (to_train, to_test) with round(fraction * N) going to training."""
    if len(corrupted) == 0:
        raise DatasetError("cannot split an empty set")
    if not 0 < fraction < 1:
        raise DatasetError(f"fraction must lie in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    total = _split_size(fraction, len(corrupted))
    if stratified:
        chosen = _stratified_pick(corrupted.labels, corrupted.num_classes, total, rng)
    else:
        chosen = np.sort(rng.permutation(len(corrupted))[:total])
    mask = np.zeros(len(corrupted), dtype=bool)
    mask[chosen] = True
    return corrupted.take(np.flatnonzero(mask)), corrupted.take(np.flatnonzero(~mask))


def subset(data, n, seed=0):
    """A label-stratified subset of ``n`` images, kept in source order."""
    if not 0 < n <= len(data):
        raise DatasetError(f"subset size must lie in [1, {len(data)}], got {n}")
    rng = np.random.default_rng(seed)
    return data.take(_stratified_pick(data.labels, data.num_classes, n, rng))
