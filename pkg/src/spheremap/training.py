"""The online training loop and its evaluation phase.

Per stream batch, in this exact order: retrieve a uniform memory batch,
union it with the stream batch, augment the union into a multi-view
batch, encode, take one Adam step on the posterior loss, then offer the
stream batch (only) to the reservoir.  The step function receives no
task information of any kind; task ids exist solely in the evaluation
schedule and exported artifacts.

Evaluation fits a nearest-class-mean classifier on the trunk
representations of everything currently in memory (the only data
available at evaluation time) and scores each task's held-out set by
cosine similarity, filling one row of the lower-triangular accuracy
matrix per checkpoint.  Clear-boundary runs check in at task boundaries;
blurry runs use a fixed sample cadence, since boundaries are then
meaningless.  With an empty memory there is nothing to fit: the row is
scored zero and flagged.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .encoder import AdamState, Encoder, NetworkSpec, adam_step
from .losses import LossConfig, map_log_loss
from .replay import ReservoirMemory
from .streams import Dataset, LabeledBatch, StreamPlan, iter_batches, multi_view

__all__ = [
    "TrainConfig",
    "MetricsRow",
    "AccuracyMatrix",
    "final_average_accuracy",
    "NCMClassifier",
    "ncm_fit",
    "ncm_predict",
    "ncm_accuracy",
    "RunResult",
    "train_run",
    "write_metrics_csv",
    "write_accuracy_csv",
]


@dataclass(frozen=True)
class TrainConfig:
    """Sizes, loss, optimizer and seed for one run."""

    loss: LossConfig
    net: NetworkSpec
    stream_batch: int = 10
    mem_batch: int = 64
    views: int = 5
    memory_capacity: int = 200
    lr: float = 0.01
    eval_every: int | None = None
    seed: int = 0

    def __post_init__(self):
        if min(self.stream_batch, self.mem_batch) < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.views < 0:
            raise ValueError("views must be >= 0")
        if self.memory_capacity < 0:
            raise ValueError("memory capacity must be >= 0")
        if self.eval_every is not None and self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.net.output_dim != self.loss.dim:
            raise ValueError("network output dimension must equal the loss dimension")


@dataclass(frozen=True)
class MetricsRow:
    step: int
    loss: float
    classes_in_batch: int
    memory_size: int


class AccuracyMatrix:
    """Lower-triangular task accuracies: entry (k, j) is the accuracy on
    task j's test set at checkpoint k."""

    def __init__(self, num_tasks: int):
        if num_tasks < 1:
            raise ValueError("need at least one task")
        self.num_tasks = num_tasks
        self.values = np.full((num_tasks, num_tasks), np.nan)

    def record(self, k: int, j: int, acc: float):
        if not 0 <= j <= k < self.num_tasks:
            raise ValueError(f"entry ({k}, {j}) outside the lower triangle")
        if not 0.0 <= acc <= 1.0:
            raise ValueError(f"accuracy {acc} outside [0, 1]")
        self.values[k, j] = acc

    @property
    def last_row(self) -> np.ndarray:
        return self.values[-1]


def final_average_accuracy(matrix: AccuracyMatrix) -> float:
    """Mean of the last row: average accuracy over all tasks at the end."""
    row = matrix.last_row
    if np.any(np.isnan(row)):
        raise ValueError("accuracy matrix last row is incomplete")
    return float(np.mean(row))


@dataclass(frozen=True)
class NCMClassifier:
    """Per-class normalized mean directions in trunk-representation space."""

    classes: np.ndarray
    means: np.ndarray
    missing: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))


def ncm_fit(encoder: Encoder, data: LabeledBatch, num_classes: int | None = None) -> NCMClassifier:
    """Class means of trunk representations, L2-normalized.

    Classes not present in `data` cannot be predicted; they are reported
    in `missing` when `num_classes` is given.
    """
    if len(data) == 0:
        raise ValueError("cannot fit class means on an empty memory")
    h = encoder.trunk_forward(data.inputs)
    classes = np.unique(data.labels)
    means = np.empty((classes.shape[0], h.shape[1]))
    for i, c in enumerate(classes):
        m = h[data.labels == c].mean(axis=0)
        means[i] = m / max(np.linalg.norm(m), 1e-12)
    missing = (np.setdiff1d(np.arange(num_classes), classes)
               if num_classes is not None else np.empty(0, dtype=int))
    return NCMClassifier(classes, means, missing)


def ncm_predict(clf: NCMClassifier, encoder: Encoder, x: np.ndarray) -> np.ndarray:
    """Cosine-similarity argmax over fitted class means; ties break to the
    lowest class index (classes are kept sorted)."""
    if clf.classes.size == 0:
        raise ValueError("classifier has no fitted classes")
    h = encoder.trunk_forward(np.atleast_2d(np.asarray(x, dtype=float)))
    norms = np.maximum(np.linalg.norm(h, axis=1, keepdims=True), 1e-12)
    sims = (h / norms) @ clf.means.T
    return clf.classes[np.argmax(sims, axis=1)]


def ncm_accuracy(clf: NCMClassifier, encoder: Encoder, data: Dataset) -> float:
    if len(data) == 0:
        raise ValueError("empty test set")
    pred = ncm_predict(clf, encoder, data.inputs)
    return float(np.mean(pred == data.labels))


@dataclass
class RunResult:
    encoder: Encoder
    memory: ReservoirMemory
    accuracy: AccuracyMatrix
    metrics: list
    summary: dict


def _spawn_rngs(seed: int):
    """Deterministic per-role generators: (init, augment, retrieve, memory)."""
    children = np.random.SeedSequence(seed).spawn(4)
    return tuple(np.random.default_rng(c) for c in children)


def _checkpoint_positions(plan: StreamPlan, num_tasks: int, eval_every: int | None):
    n = len(plan)
    if eval_every is None and not plan.blurred:
        ends = []
        for k in range(num_tasks):
            pos = np.nonzero(plan.task_ids == k)[0]
            if pos.size == 0:
                raise ValueError(f"stream plan has no samples for task {k}")
            ends.append(int(pos.max()) + 1)
        return ends
    cadence = eval_every if eval_every is not None else -(-n // num_tasks)
    ckpts = [min(cadence * (k + 1), n) for k in range(num_tasks)]
    ckpts[-1] = n
    return ckpts


def _train_step(encoder, adam, loss_cfg, memory, batch, mem_batch, views, aug,
                rng_aug, rng_retrieve):
    """One online step; sees a labelled batch and nothing else."""
    retrieved = memory.retrieve(mem_batch, rng=rng_retrieve)
    combined = LabeledBatch.concat([batch, retrieved])
    viewed = multi_view(combined, views, aug, rng_aug)
    z, _, tape = encoder.forward(viewed.inputs)
    loss, grad_z = map_log_loss(loss_cfg, z, viewed.labels)
    grads = encoder.backward(tape, grad_z)
    adam_step(adam, encoder.params, grads)
    encoder.bump_version()
    memory.update(batch)
    return loss, len(np.unique(viewed.labels))


def train_run(cfg: TrainConfig, plan: StreamPlan, test_sets: list, aug) -> RunResult:
    """Run the full online loop over a single-pass stream plan.

    test_sets is one held-out Dataset per task; aug(inputs, rng) is the
    view augmentation.  Returns the trained encoder, final memory, the
    accuracy matrix, the per-step metrics log, and a summary dict.
    """
    num_tasks = len(test_sets)
    if num_tasks != plan.schedule.num_tasks:
        raise ValueError("one test set per scheduled task is required")
    started = time.perf_counter()
    rng_init, rng_aug, rng_retrieve, rng_mem = _spawn_rngs(cfg.seed)
    encoder = Encoder(cfg.net, seed=rng_init)
    adam = AdamState(lr=cfg.lr)
    memory = ReservoirMemory(cfg.memory_capacity, seed=rng_mem)
    matrix = AccuracyMatrix(num_tasks)
    metrics: list[MetricsRow] = []
    ckpts = _checkpoint_positions(plan, num_tasks, cfg.eval_every)

    memory_empty_at_eval = False
    consumed = 0
    next_ckpt = 0
    for step, batch in enumerate(iter_batches(plan, cfg.stream_batch)):
        loss, n_classes = _train_step(
            encoder, adam, cfg.loss, memory, batch, cfg.mem_batch, cfg.views,
            aug, rng_aug, rng_retrieve,
        )
        metrics.append(MetricsRow(step, loss, n_classes, len(memory)))
        consumed += len(batch)
        while next_ckpt < num_tasks and consumed >= ckpts[next_ckpt]:
            dump = memory.dump()
            if len(dump) == 0:
                memory_empty_at_eval = True
                for j in range(next_ckpt + 1):
                    matrix.record(next_ckpt, j, 0.0)
            else:
                clf = ncm_fit(encoder, dump, num_classes=cfg.loss.num_classes)
                for j in range(next_ckpt + 1):
                    matrix.record(next_ckpt, j, ncm_accuracy(clf, encoder, test_sets[j]))
            next_ckpt += 1

    final_aa = final_average_accuracy(matrix)
    summary = {
        "final_aa": final_aa,
        "per_task_accuracy": [float(v) for v in matrix.last_row],
        "steps": len(metrics),
        "samples_seen": consumed,
        "memory_size": len(memory),
        "memory_empty_at_eval": memory_empty_at_eval,
        "wall_time_s": time.perf_counter() - started,
    }
    return RunResult(encoder, memory, matrix, metrics, summary)


def write_metrics_csv(path, metrics, header_lines=()):
    """Per-step log: step, loss, classes_in_batch, memory_size."""
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "classes_in_batch", "memory_size"])
        for row in metrics:
            writer.writerow([row.step, f"{row.loss:.10f}", row.classes_in_batch,
                             row.memory_size])


def write_accuracy_csv(path, matrix: AccuracyMatrix, header_lines=()):
    """K x K accuracy matrix; upper triangle is empty."""
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow([f"task_{j}" for j in range(matrix.num_tasks)])
        for k in range(matrix.num_tasks):
            writer.writerow([
                "" if np.isnan(matrix.values[k, j]) else f"{matrix.values[k, j]:.6f}"
                for j in range(matrix.num_tasks)
            ])
