"""MedMNIST-format ingestion and deterministic few-shot sampling.

Archives are .npz files (ZIP of NPY v1.0 arrays) named train_images,
train_labels, val_images, val_labels, test_images, test_labels; images are
28x28 uint8 with 1 or 3 channels.  numpy's own loader already parses that
layout, so ingestion here is validation + normalization: grayscale gets
replicated to 3 channels, pixels scale by 1/255, val/test keep their content
and order untouched.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError, UsageError
from .rng import PermStream, fnv1a64, mix64, tag

DATASET_NAMES = (
    "bloodmnist",
    "pathmnist",
    "breastmnist",
    "pneumoniamnist",
    "dermamnist",
    "octmnist",
    "organamnist",
)

_SPLITS = ("train", "val", "test")


@dataclass
class ImageBatch:
    images: np.ndarray  # float32, (b, 28, 28, 3), values in [0,1]
    labels: np.ndarray  # int64, (b,)
    ids: np.ndarray  # int64, (b,): indices into the originating split

    def __len__(self):
        return self.images.shape[0]

    def take(self, idx) -> "ImageBatch":
        idx = np.asarray(idx)
        return ImageBatch(self.images[idx], self.labels[idx], self.ids[idx])


@dataclass
class Dataset:
    name: str
    splits: dict  # split name -> ImageBatch
    num_classes: int

    @property
    def task(self) -> str:
        return "binary" if self.num_classes == 2 else "multiclass"

    @property
    def train(self) -> ImageBatch:
        return self.splits["train"]

    @property
    def val(self) -> ImageBatch:
        return self.splits["val"]

    @property
    def test(self) -> ImageBatch:
        return self.splits["test"]


def _check_images(name: str, arr: np.ndarray) -> np.ndarray:
    if arr.dtype != np.uint8:
        raise FormatError(f"{name}: expected uint8 images, got {arr.dtype}")
    if arr.ndim == 3:
        arr = arr[..., None]
    if arr.ndim != 4 or arr.shape[1] != 28 or arr.shape[2] != 28:
        raise FormatError(f"{name}: expected (n, 28, 28[, c]) images, got {arr.shape}")
    if arr.shape[3] == 1:
        arr = np.repeat(arr, 3, axis=3)
    elif arr.shape[3] != 3:
        raise FormatError(f"{name}: expected 1 or 3 channels, got {arr.shape[3]}")
    return arr


def _check_labels(name: str, arr: np.ndarray, n: int) -> np.ndarray:
    if arr.dtype.kind not in "iu":
        raise FormatError(f"{name}: expected integer labels, got {arr.dtype}")
    flat = arr.reshape(-1).astype(np.int64)
    if flat.shape[0] != n:
        raise FormatError(f"{name}: {flat.shape[0]} labels for {n} images")
    if flat.size and flat.min() < 0:
        raise FormatError(f"{name}: negative label {flat.min()}")
    return flat


def load_npz(path, name: str | None = None) -> Dataset:
    """Load one dataset archive; see the module docstring for the layout."""
    if name is None:
        name = os.path.splitext(os.path.basename(os.fspath(path)))[0]
    with np.load(path) as npz:
        present = set(npz.files)
        splits = {}
        for split in _SPLITS:
            for suffix in ("images", "labels"):
                if f"{split}_{suffix}" not in present:
                    raise FormatError(f"{path}: missing array {split}_{suffix}")
            images = _check_images(f"{split}_images", npz[f"{split}_images"])
            labels = _check_labels(f"{split}_labels", npz[f"{split}_labels"], images.shape[0])
            splits[split] = ImageBatch(
                images=(images.astype(np.float32) / np.float32(255.0)),
                labels=labels,
                ids=np.arange(images.shape[0], dtype=np.int64),
            )
    num_classes = int(max(b.labels.max(initial=0) for b in splits.values())) + 1
    return Dataset(name=name, splits=splits, num_classes=max(num_classes, 2))


def fewshot_subset(ds: Dataset, per_class: int, seed: int) -> ImageBatch:
    """Up to per_class training examples from each class, in class order.

    Sampling is without replacement from a stream keyed by (seed, dataset
    name, class), so subsets reproduce across platforms and processes.
    Classes with fewer than per_class examples contribute all of theirs.
    """
    if per_class < 1:
        raise UsageError(f"per_class must be >= 1, got {per_class}")
    train = ds.train
    chosen = []
    for cls in range(ds.num_classes):
        pool = np.flatnonzero(train.labels == cls)
        if pool.size == 0:
            raise DataError(f"{ds.name}: class {cls} has no training examples")
        stream = PermStream(mix64(seed, tag("subset"), fnv1a64(ds.name), cls))
        picks = stream.sample_indices(pool.size, min(per_class, pool.size))
        chosen.append(pool[picks])
    return train.take(np.concatenate(chosen))


def batches(batch: ImageBatch, batch_size: int, epoch_seed: int):
    """One epoch of batches under a full shuffle drawn from epoch_seed."""
    if batch_size < 1:
        raise UsageError(f"batch_size must be >= 1, got {batch_size}")
    n = len(batch)
    perm = np.array(PermStream(epoch_seed).permutation(n), dtype=np.int64)
    return [batch.take(perm[i : i + batch_size]) for i in range(0, n, batch_size)]


def epoch_seed(run_seed: int, dataset_name: str, epoch: int) -> int:
    return mix64(run_seed, tag("shuffle"), fnv1a64(dataset_name), epoch)


def find_data_dir(explicit=None):
    """Resolve the dataset directory: flag value, then PERMUBENCH_DATA_DIR."""
    if explicit:
        return os.fspath(explicit)
    env = os.environ.get("PERMUBENCH_DATA_DIR")
    return env if env else None


def dataset_path(data_dir, name: str) -> str:
    return os.path.join(data_dir, f"{name.lower()}.npz")
