"""Online stream construction with clear or blurry task boundaries.

A stream plan is an ordered view over a dataset: class-incremental order
(tasks of disjoint classes under a random label permutation, shuffled
within task) optionally reshuffled into blurry boundaries by repeatedly
drawing a half-normal index into the remaining clear sequence.  Plans are
pure seeded functions of their inputs; iteration yields each dataset
index exactly once.

Also here: multi-view batch augmentation, the CIFAR-10 binary reader
(records of 1 label byte + 3072 pixel bytes, R then G then B planes,
row-major 32x32), and a synthetic Gaussian-blob generator for desk-scale
experiments.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import MalformedFileError

__all__ = [
    "LabeledBatch",
    "Dataset",
    "TaskSchedule",
    "StreamPlan",
    "make_clear_stream",
    "blurry_shuffle",
    "iter_batches",
    "multi_view",
    "make_vector_aug",
    "make_crop_flip_aug",
    "load_cifar10_binary",
    "standardize_channels",
    "synth_blobs",
    "split_by_task",
    "write_manifest",
    "class_proportion_table",
    "write_class_proportions",
]

CIFAR_RECORD = 3073
CIFAR_PIXELS = 3072


@dataclass(frozen=True)
class LabeledBatch:
    """A matrix of input vectors with integer class labels."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=float)
        labels = np.asarray(self.labels, dtype=int)
        if inputs.ndim != 2 or labels.ndim != 1 or inputs.shape[0] != labels.shape[0]:
            raise ValueError("inputs must be (b, D) with one label per row")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @staticmethod
    def concat(parts):
        parts = [p for p in parts if len(p) > 0]
        if not parts:
            raise ValueError("nothing to concatenate")
        return LabeledBatch(np.concatenate([p.inputs for p in parts]),
                            np.concatenate([p.labels for p in parts]))


@dataclass(frozen=True)
class Dataset:
    """Full labelled dataset; rows are flat input vectors."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=float)
        labels = np.asarray(self.labels, dtype=int)
        if inputs.ndim != 2 or labels.ndim != 1 or inputs.shape[0] != labels.shape[0]:
            raise ValueError("inputs must be (N, D) with one label per row")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class TaskSchedule:
    """Disjoint equal-size class-to-task assignment under a label permutation."""

    num_tasks: int
    classes_per_task: int
    label_permutation: np.ndarray
    seed: int = 0

    def __post_init__(self):
        perm = np.asarray(self.label_permutation, dtype=int)
        object.__setattr__(self, "label_permutation", perm)
        L = self.num_tasks * self.classes_per_task
        if self.num_tasks < 1 or self.classes_per_task < 1:
            raise ValueError("num_tasks and classes_per_task must be >= 1")
        if sorted(perm.tolist()) != list(range(L)):
            raise ValueError(
                f"label_permutation must be a permutation of 0..{L - 1}"
            )

    @classmethod
    def make(cls, num_tasks: int, classes_per_task: int, seed: int,
             shuffle_labels: bool = True) -> "TaskSchedule":
        """Random label order (identity permutation if shuffle_labels=False)."""
        L = num_tasks * classes_per_task
        rng = np.random.default_rng(seed)
        perm = rng.permutation(L) if shuffle_labels else np.arange(L)
        return cls(num_tasks, classes_per_task, perm, seed)

    @property
    def num_classes(self) -> int:
        return self.num_tasks * self.classes_per_task

    def classes_of_task(self, k: int) -> np.ndarray:
        lo = k * self.classes_per_task
        return self.label_permutation[lo: lo + self.classes_per_task]

    def task_of_class(self) -> dict[int, int]:
        return {int(c): k for k in range(self.num_tasks)
                for c in self.classes_of_task(k)}


@dataclass(frozen=True)
class StreamPlan:
    """Ordered single-pass view over a dataset.

    order[i] is the dataset index presented at position i; task_ids[i] is
    the task that sample belongs to (bookkeeping for evaluation and
    manifests only -- the training path never sees it).
    """

    dataset: Dataset
    order: np.ndarray
    task_ids: np.ndarray
    blurred: bool
    schedule: TaskSchedule

    def __len__(self) -> int:
        return self.order.shape[0]


def make_clear_stream(dataset: Dataset, schedule: TaskSchedule) -> StreamPlan:
    """Task-by-task order, shuffled within task by the schedule seed."""
    rng = np.random.default_rng(np.random.SeedSequence((schedule.seed, 0xC1EA2)))
    chunks = []
    task_ids = []
    for k in range(schedule.num_tasks):
        classes = schedule.classes_of_task(k)
        mask = np.isin(dataset.labels, classes)
        for c in classes:
            if not np.any(dataset.labels == c):
                raise ValueError(f"dataset has no samples for scheduled class {int(c)}")
        idx = np.nonzero(mask)[0]
        rng.shuffle(idx)
        chunks.append(idx)
        task_ids.append(np.full(idx.shape[0], k))
    return StreamPlan(dataset, np.concatenate(chunks), np.concatenate(task_ids),
                      blurred=False, schedule=schedule)


class _IndexedPool:
    """Fenwick-tree pool supporting `pop k-th remaining element` in O(log n)."""

    def __init__(self, n: int):
        self.n = n
        self.size = n
        self.tree = np.zeros(n + 1, dtype=np.int64)
        for i in range(1, n + 1):
            self.tree[i] += 1
            j = i + (i & -i)
            if j <= n:
                self.tree[j] += self.tree[i]

    def pop(self, k: int) -> int:
        """Remove and return the original position of the k-th (0-based)
        remaining element."""
        if not 0 <= k < self.size:
            raise IndexError(k)
        target = k + 1
        pos = 0
        mask = 1 << (self.n.bit_length())
        while mask:
            nxt = pos + mask
            if nxt <= self.n and self.tree[nxt] < target:
                target -= self.tree[nxt]
                pos = nxt
            mask >>= 1
        idx = pos + 1
        while idx <= self.n:
            self.tree[idx] -= 1
            idx += idx & -idx
        self.size -= 1
        return pos


def blurry_shuffle(plan: StreamPlan, sigma: float, seed: int) -> StreamPlan:
    """Reshuffle a clear plan into blurry task boundaries.

    Repeatedly samples i ~ HalfNormal(sigma), takes
    index = min(floor(i), remaining - 1), and moves that element from the
    clear sequence to the output.  The output is a permutation of the
    input; sigma -> 0 gives the identity.  The continuous draw is floored
    and clamped (the discretisation is a choice, documented here, not
    implied by the half-normal itself).
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    n = len(plan)
    if sigma == 0.0 or n == 0:
        return StreamPlan(plan.dataset, plan.order.copy(), plan.task_ids.copy(),
                          blurred=True, schedule=plan.schedule)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xB1E44)))
    draws = np.abs(rng.standard_normal(n)) * sigma
    pool = _IndexedPool(n)
    out = np.empty(n, dtype=np.int64)
    for pos in range(n):
        remaining = n - pos
        k = min(int(draws[pos]), remaining - 1)
        out[pos] = pool.pop(k)
    return StreamPlan(plan.dataset, plan.order[out], plan.task_ids[out],
                      blurred=True, schedule=plan.schedule)


def iter_batches(plan: StreamPlan, batch_size: int):
    """Yield consecutive LabeledBatch views of the plan (single pass)."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    for lo in range(0, len(plan), batch_size):
        idx = plan.order[lo: lo + batch_size]
        yield LabeledBatch(plan.dataset.inputs[idx], plan.dataset.labels[idx])


def multi_view(batch: LabeledBatch, n: int, aug, rng) -> LabeledBatch:
    """Original batch plus n augmented copies; labels replicated.

    aug(inputs, rng) must return a new array and leave its input alone.
    n = 0 returns the batch unchanged.
    """
    if n < 0:
        raise ValueError("view count must be >= 0")
    if n == 0 or len(batch) == 0:
        return batch
    views = [batch.inputs]
    for _ in range(n):
        views.append(aug(batch.inputs, rng))
    return LabeledBatch(np.concatenate(views), np.tile(batch.labels, n + 1))


def make_vector_aug(noise_scale: float = 0.0, scale_jitter: float = 0.0,
                    dropout: float = 0.0):
    """Augmentation for plain vector data.

    Additive Gaussian noise (noise_scale), multiplicative scaling by
    1 + U(-scale_jitter, scale_jitter), and independent coordinate dropout
    with the given probability.  Never mutates the source batch.
    """
    if not 0.0 <= dropout < 1.0:
        raise ValueError("dropout must be in [0, 1)")

    def aug(inputs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        out = np.array(inputs, copy=True)
        if noise_scale > 0.0:
            out += rng.normal(0.0, noise_scale, size=out.shape)
        if scale_jitter > 0.0:
            out *= 1.0 + rng.uniform(-scale_jitter, scale_jitter, size=(out.shape[0], 1))
        if dropout > 0.0:
            out *= rng.random(out.shape) >= dropout
        return out

    return aug


def make_crop_flip_aug(height: int = 32, width: int = 32, channels: int = 3,
                       pad: int = 4):
    """Random crop with reflect padding plus horizontal flip (p = 0.5).

    Operates on flattened channel-plane images (C x H x W row-major), the
    layout produced by the CIFAR-10 reader.
    """

    def aug(inputs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        b = inputs.shape[0]
        imgs = inputs.reshape(b, channels, height, width)
        padded = np.pad(imgs, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="reflect")
        out = np.empty_like(imgs)
        offs = rng.integers(0, 2 * pad + 1, size=(b, 2))
        flips = rng.random(b) < 0.5
        for i in range(b):
            oy, ox = offs[i]
            crop = padded[i, :, oy: oy + height, ox: ox + width]
            out[i] = crop[:, :, ::-1] if flips[i] else crop
        return out.reshape(b, channels * height * width)

    return aug


def load_cifar10_binary(path, scale: bool = True) -> Dataset:
    """Parse a CIFAR-10 binary batch file.

    Records are 3073 bytes: 1 label byte in [0, 9], then 3072 pixel bytes
    (red plane, green plane, blue plane; each 32x32 row-major).  Pixels
    are scaled to [0, 1] unless scale=False.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) == 0 or len(raw) % CIFAR_RECORD != 0:
        raise MalformedFileError(
            f"{path}: size {len(raw)} is not a positive multiple of {CIFAR_RECORD};"
            f" trailing fragment starts at byte offset {len(raw) - len(raw) % CIFAR_RECORD}",
            offset=len(raw) - len(raw) % CIFAR_RECORD,
        )
    data = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = data[:, 0].astype(int)
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        first = int(bad[0])
        raise MalformedFileError(
            f"{path}: invalid label {labels[first]} at byte offset {first * CIFAR_RECORD}",
            offset=first * CIFAR_RECORD,
        )
    pixels = data[:, 1:].astype(float)
    if scale:
        pixels /= 255.0
    return Dataset(pixels, labels)


def standardize_channels(inputs: np.ndarray, channels: int = 3):
    """Per-channel standardisation; returns (standardised, mean, std)."""
    b, dim = inputs.shape
    per = dim // channels
    planes = inputs.reshape(b, channels, per)
    mean = planes.mean(axis=(0, 2))
    std = planes.std(axis=(0, 2))
    std = np.where(std < 1e-12, 1.0, std)
    out = (planes - mean[None, :, None]) / std[None, :, None]
    return out.reshape(b, dim), mean, std


def synth_blobs(num_classes: int, per_class: int, input_dim: int,
                spread: float, seed: int) -> Dataset:
    """Isotropic Gaussian clusters with random unit-separated centers.

    Centers are drawn at random and rescaled so the minimum pairwise
    distance is exactly 1; each class then gets `per_class` samples at
    N(center, spread^2 I).  Deterministic given the seed.
    """
    if min(num_classes, per_class, input_dim) < 1 or spread < 0:
        raise ValueError("blob parameters must be positive")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xB70B5)))
    centers = rng.normal(size=(num_classes, input_dim))
    if num_classes > 1:
        dists = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=-1)
        min_dist = dists[np.triu_indices(num_classes, 1)].min()
        if min_dist < 1e-9:
            raise ValueError("degenerate random centers; try another seed")
        centers /= min_dist
    inputs = np.repeat(centers, per_class, axis=0)
    inputs = inputs + rng.normal(0.0, spread, size=inputs.shape) if spread > 0 else inputs.copy()
    labels = np.repeat(np.arange(num_classes), per_class)
    return Dataset(inputs, labels)


def split_by_task(dataset: Dataset, schedule: TaskSchedule) -> list[Dataset]:
    """Per-task sub-datasets (e.g. held-out test splits)."""
    out = []
    for k in range(schedule.num_tasks):
        mask = np.isin(dataset.labels, schedule.classes_of_task(k))
        out.append(Dataset(dataset.inputs[mask], dataset.labels[mask]))
    return out


def write_manifest(plan: StreamPlan, path, header_lines=()):
    """Audit CSV of the exact sample order: position, index, label, task."""
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["position", "dataset_index", "label", "task_id"])
        labels = plan.dataset.labels[plan.order]
        for pos in range(len(plan)):
            writer.writerow([pos, int(plan.order[pos]), int(labels[pos]),
                             int(plan.task_ids[pos])])


def class_proportion_table(plan: StreamPlan, window: int = 500):
    """Windowed class proportions along the stream (plot-ready).

    Returns (positions, class_ids, proportions) where proportions[i, j]
    is the fraction of class class_ids[j] within the window ending at
    positions[i].
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    labels = plan.dataset.labels[plan.order]
    class_ids = np.unique(plan.dataset.labels)
    onehot = labels[:, None] == class_ids[None, :]
    csum = np.cumsum(onehot, axis=0).astype(float)
    n = len(plan)
    positions = np.arange(window, n + 1, max(1, window // 5))
    rows = []
    for pos in positions:
        hi = csum[pos - 1]
        lo = csum[pos - window - 1] if pos - window - 1 >= 0 else np.zeros_like(hi)
        rows.append((hi - lo) / window)
    return positions, class_ids, np.array(rows)


def write_class_proportions(plan: StreamPlan, path, window: int = 500,
                            header_lines=()):
    positions, class_ids, props = class_proportion_table(plan, window)
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["position"] + [f"class_{int(c)}" for c in class_ids])
        for pos, row in zip(positions, props):
            writer.writerow([int(pos)] + [f"{v:.6f}" for v in row])
