"""Fixed-capacity replay memory with reservoir insertion.

Classic per-item reservoir rule: while fewer than `capacity` items have
been offered, store everything; afterwards the t-th offered item (1-based)
replaces a uniformly random slot with probability capacity / t.  Every
item ever offered therefore sits in memory with equal probability
capacity / total at all times.

Updates are per item even when a batch is offered, since the uniformity
guarantee is a per-item property.  Raw inputs are stored (not latents):
the training loop re-encodes memory data every step.

Single-writer: the training loop owns updates; concurrent readers are
fine between updates.
"""

from __future__ import annotations

import json

import numpy as np

from .streams import LabeledBatch

__all__ = ["ReservoirMemory"]


class ReservoirMemory:
    """Reservoir of labelled samples with a stream-position counter."""

    def __init__(self, capacity: int, seed=0):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = capacity
        self.stream_count = 0
        self._rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self._inputs: np.ndarray | None = None
        self._labels: np.ndarray | None = None
        self._stored = 0

    def __len__(self) -> int:
        return self._stored

    def update(self, batch: LabeledBatch) -> "ReservoirMemory":
        """Offer every item of the batch to the reservoir, in order."""
        if len(batch) == 0:
            return self
        if self._inputs is None and self.capacity > 0:
            dim = batch.inputs.shape[1]
            self._inputs = np.empty((self.capacity, dim))
            self._labels = np.empty(self.capacity, dtype=int)
        for i in range(len(batch)):
            self.stream_count += 1
            if self.capacity == 0:
                continue
            if self._stored < self.capacity:
                self._inputs[self._stored] = batch.inputs[i]
                self._labels[self._stored] = batch.labels[i]
                self._stored += 1
            else:
                # slot j < capacity with probability capacity / stream_count
                j = int(self._rng.integers(0, self.stream_count))
                if j < self.capacity:
                    self._inputs[j] = batch.inputs[i]
                    self._labels[j] = batch.labels[i]
        return self

    def retrieve(self, k: int, rng=None) -> LabeledBatch:
        """Uniform sample of min(k, stored) items without replacement."""
        if k < 0:
            raise ValueError("retrieval size must be >= 0")
        take = min(k, self._stored)
        if take == 0:
            dim = 0 if self._inputs is None else self._inputs.shape[1]
            return LabeledBatch(np.empty((0, dim)), np.empty(0, dtype=int))
        gen = rng if rng is not None else self._rng
        idx = gen.choice(self._stored, size=take, replace=False)
        return LabeledBatch(self._inputs[idx].copy(), self._labels[idx].copy())

    def dump(self) -> LabeledBatch:
        """All stored samples (copy), for the evaluation phase."""
        if self._stored == 0:
            dim = 0 if self._inputs is None else self._inputs.shape[1]
            return LabeledBatch(np.empty((0, dim)), np.empty(0, dtype=int))
        return LabeledBatch(self._inputs[: self._stored].copy(),
                            self._labels[: self._stored].copy())

    def save(self, path, extra_meta: dict | None = None):
        """Snapshot to .npz: inputs, labels, capacity, stream_count, plus an
        optional JSON metadata blob (the CLI stores the run config there)."""
        content = self.dump()
        meta = np.frombuffer(json.dumps(extra_meta or {}).encode(), dtype=np.uint8)
        np.savez(path, inputs=content.inputs, labels=content.labels,
                 capacity=np.array(self.capacity),
                 stream_count=np.array(self.stream_count), meta=meta)

    @classmethod
    def load(cls, path, seed=0) -> "ReservoirMemory":
        with np.load(path) as data:
            mem = cls(int(data["capacity"]), seed=seed)
            stored = data["inputs"].shape[0]
            if stored:
                mem._inputs = np.empty((mem.capacity, data["inputs"].shape[1]))
                mem._labels = np.empty(mem.capacity, dtype=int)
                mem._inputs[:stored] = data["inputs"]
                mem._labels[:stored] = data["labels"]
            mem._stored = stored
            mem.stream_count = int(data["stream_count"])
        return mem
