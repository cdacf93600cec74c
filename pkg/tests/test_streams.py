"""Tests for stream construction, augmentation, and data loading."""

import os

import numpy as np
import pytest

from spheremap.errors import MalformedFileError
from spheremap.streams import (
    CIFAR_RECORD,
    Dataset,
    LabeledBatch,
    TaskSchedule,
    blurry_shuffle,
    class_proportion_table,
    iter_batches,
    load_cifar10_binary,
    make_clear_stream,
    make_crop_flip_aug,
    make_vector_aug,
    multi_view,
    split_by_task,
    standardize_channels,
    synth_blobs,
    write_manifest,
)


def tiny_dataset(per_class=3, classes=4, dim=2, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(classes), per_class)
    return Dataset(rng.normal(size=(classes * per_class, dim)), labels)


def overlap_fraction(plan):
    """Mean over consecutive task pairs of the fraction of task-(k+1)
    samples appearing before the last task-k sample."""
    tids = plan.task_ids
    fracs = []
    for k in range(plan.schedule.num_tasks - 1):
        last_k = np.nonzero(tids == k)[0].max()
        nxt = np.nonzero(tids == k + 1)[0]
        fracs.append(np.mean(nxt < last_k))
    return float(np.mean(fracs))


class TestSchedule:
    def test_identity_permutation_keeps_natural_order(self):
        sched = TaskSchedule.make(2, 2, seed=0, shuffle_labels=False)
        np.testing.assert_array_equal(sched.classes_of_task(0), [0, 1])
        np.testing.assert_array_equal(sched.classes_of_task(1), [2, 3])

    def test_partition_is_disjoint_and_total(self):
        sched = TaskSchedule.make(3, 2, seed=5)
        seen = np.concatenate([sched.classes_of_task(k) for k in range(3)])
        assert sorted(seen.tolist()) == list(range(6))

    def test_bad_permutation(self):
        with pytest.raises(ValueError):
            TaskSchedule(2, 2, np.array([0, 1, 2, 2]))


class TestClearStream:
    def test_task_blocks_in_order(self):
        ds = tiny_dataset(per_class=3, classes=2)
        sched = TaskSchedule(2, 1, np.array([0, 1]))
        plan = make_clear_stream(ds, sched)
        labels = ds.labels[plan.order]
        assert np.all(labels[:3] == 0) and np.all(labels[3:] == 1)

    def test_seed_changes_within_task_order_only(self):
        ds = tiny_dataset(per_class=50, classes=2)
        s1 = TaskSchedule(2, 1, np.array([0, 1]), seed=1)
        s2 = TaskSchedule(2, 1, np.array([0, 1]), seed=2)
        p1, p2 = make_clear_stream(ds, s1), make_clear_stream(ds, s2)
        np.testing.assert_array_equal(p1.task_ids, p2.task_ids)
        assert not np.array_equal(p1.order, p2.order)
        np.testing.assert_array_equal(np.sort(p1.order[:50]), np.sort(p2.order[:50]))

    def test_single_pass(self):
        ds = tiny_dataset()
        plan = make_clear_stream(ds, TaskSchedule.make(2, 2, seed=3))
        assert sorted(plan.order.tolist()) == list(range(len(ds)))
        batches = list(iter_batches(plan, 5))
        assert sum(len(b) for b in batches) == len(ds)

    def test_label_permutation_changes_assignment_not_counts(self):
        ds = tiny_dataset(per_class=4, classes=4)
        a = make_clear_stream(ds, TaskSchedule(2, 2, np.array([0, 1, 2, 3])))
        b = make_clear_stream(ds, TaskSchedule(2, 2, np.array([2, 3, 0, 1])))
        assert len(a) == len(b) == len(ds)
        la = ds.labels[a.order[a.task_ids == 0]]
        lb = ds.labels[b.order[b.task_ids == 0]]
        assert set(la.tolist()) == {0, 1} and set(lb.tolist()) == {2, 3}

    def test_missing_class(self):
        ds = tiny_dataset(classes=3)
        with pytest.raises(ValueError, match="no samples"):
            make_clear_stream(ds, TaskSchedule.make(2, 2, seed=0))


class TestBlurryShuffle:
    def test_sigma_zero_is_identity(self):
        ds = tiny_dataset(per_class=20, classes=3, seed=1)
        plan = make_clear_stream(ds, TaskSchedule.make(3, 1, seed=0))
        for sigma in (0.0, 1e-9):
            blurred = blurry_shuffle(plan, sigma, seed=7)
            np.testing.assert_array_equal(blurred.order, plan.order)

    def test_always_a_permutation(self):
        ds = tiny_dataset(per_class=30, classes=3, seed=2)
        plan = make_clear_stream(ds, TaskSchedule.make(3, 1, seed=0))
        for sigma in (5.0, 50.0, 5000.0):
            blurred = blurry_shuffle(plan, sigma, seed=11)
            assert sorted(blurred.order.tolist()) == sorted(plan.order.tolist())

    def test_heavy_overlap_at_large_sigma(self):
        # the qualitative mixing picture: consecutive task populations
        # interleave heavily when the shuffle scale spans task lengths
        ds = tiny_dataset(per_class=2000, classes=3, seed=3)
        plan = make_clear_stream(ds, TaskSchedule.make(3, 1, seed=0))
        fracs = [overlap_fraction(blurry_shuffle(plan, 1500.0, seed=s)) for s in range(20)]
        assert np.mean(fracs) > 0.2

    def test_displacement_grows_with_sigma(self):
        ds = tiny_dataset(per_class=600, classes=3, seed=4)
        plan = make_clear_stream(ds, TaskSchedule.make(3, 1, seed=0))
        early = len(plan) // 10
        means = []
        for sigma in (10.0, 100.0, 1000.0):
            disp = []
            for s in range(50):
                blurred = blurry_shuffle(plan, sigma, seed=s)
                new_pos = np.empty(len(plan), dtype=int)
                # position of each original stream slot in the blurred order
                orig_pos = {int(d): i for i, d in enumerate(plan.order)}
                for pos, d in enumerate(blurred.order):
                    new_pos[orig_pos[int(d)]] = pos
                disp.append(np.mean(new_pos[:early] - np.arange(early)))
            means.append(np.mean(disp))
        assert means[0] < means[1] < means[2]


class TestMultiView:
    def test_zero_views_unchanged(self):
        batch = LabeledBatch(np.ones((3, 2)), np.array([0, 1, 0]))
        out = multi_view(batch, 0, make_vector_aug(noise_scale=1.0), np.random.default_rng(0))
        assert out is batch

    def test_five_views_sixfold(self):
        batch = LabeledBatch(np.ones((4, 2)), np.array([0, 1, 2, 3]))
        out = multi_view(batch, 5, make_vector_aug(noise_scale=0.1), np.random.default_rng(0))
        assert len(out) == 24
        np.testing.assert_array_equal(out.inputs[:4], batch.inputs)
        np.testing.assert_array_equal(out.labels, np.tile(batch.labels, 6))

    def test_source_not_mutated(self):
        rng = np.random.default_rng(0)
        inputs = np.ones((3, 4))
        batch = LabeledBatch(inputs, np.zeros(3, dtype=int))
        before = batch.inputs.copy()
        for aug in (make_vector_aug(0.5, 0.2, 0.1), make_crop_flip_aug(2, 2, 1, 1)):
            multi_view(LabeledBatch(np.ones((3, 4)), np.zeros(3, dtype=int)), 2, aug, rng)
        np.testing.assert_array_equal(batch.inputs, before)

    def test_crop_flip_shapes_and_values(self):
        rng = np.random.default_rng(1)
        aug = make_crop_flip_aug(height=4, width=4, channels=2, pad=1)
        x = rng.normal(size=(5, 32))
        out = aug(x, rng)
        assert out.shape == x.shape
        assert not np.array_equal(out, x)


class TestCifarLoader:
    def test_handcrafted_records(self, tmp_path):
        rec = bytearray()
        rec.append(7)
        rec += bytes([0] * 1024) + bytes([255] * 1024) + bytes([128] * 1024)
        rec.append(2)
        rec += bytes(range(256)) * 4 + bytes([1] * 1024) + bytes([2] * 1024)
        path = tmp_path / "batch.bin"
        path.write_bytes(bytes(rec))
        ds = load_cifar10_binary(path)
        assert len(ds) == 2
        np.testing.assert_array_equal(ds.labels, [7, 2])
        assert ds.inputs[0, 0] == 0.0
        assert ds.inputs[0, 1024] == 1.0
        assert ds.inputs[0, 2048] == pytest.approx(128 / 255)
        assert ds.inputs[1, 255] == 1.0

    def test_truncated_file_names_offset(self, tmp_path):
        path = tmp_path / "trunc.bin"
        path.write_bytes(bytes(CIFAR_RECORD + 10))
        with pytest.raises(MalformedFileError) as err:
            load_cifar10_binary(path)
        assert err.value.offset == CIFAR_RECORD
        assert str(CIFAR_RECORD) in str(err.value)

    def test_bad_label_offset(self, tmp_path):
        rec = bytearray(bytes(CIFAR_RECORD))
        rec += bytes([11]) + bytes(CIFAR_RECORD - 1)
        path = tmp_path / "bad.bin"
        path.write_bytes(bytes(rec))
        with pytest.raises(MalformedFileError) as err:
            load_cifar10_binary(path)
        assert err.value.offset == CIFAR_RECORD

    def test_standardize(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(size=(50, 12))
        out, mean, std = standardize_channels(x, channels=3)
        planes = out.reshape(50, 3, 4)
        np.testing.assert_allclose(planes.mean(axis=(0, 2)), 0.0, atol=1e-12)
        np.testing.assert_allclose(planes.std(axis=(0, 2)), 1.0, atol=1e-12)

    @pytest.mark.skipif(
        not os.path.isfile(os.path.join(os.environ.get("CIFAR10_DIR", ""),
                                        "data_batch_1.bin")),
        reason="set CIFAR10_DIR to a directory with the official binary batches",
    )
    def test_official_batch_file(self):
        ds = load_cifar10_binary(os.path.join(os.environ["CIFAR10_DIR"],
                                              "data_batch_1.bin"))
        assert len(ds) == 10_000
        assert set(np.unique(ds.labels)) <= set(range(10))
        assert ds.inputs.min() >= 0.0 and ds.inputs.max() <= 1.0


class TestSynthBlobs:
    def test_zero_spread_collapses_clusters(self):
        ds = synth_blobs(3, 5, 4, 0.0, seed=0)
        for c in range(3):
            rows = ds.inputs[ds.labels == c]
            assert np.all(rows == rows[0])

    def test_unit_separation(self):
        ds = synth_blobs(6, 1, 5, 0.0, seed=1)
        d = np.linalg.norm(ds.inputs[:, None, :] - ds.inputs[None, :, :], axis=-1)
        off = d[np.triu_indices(6, 1)]
        assert off.min() == pytest.approx(1.0, rel=1e-12)

    def test_margin_separability_nearest_center(self):
        ds = synth_blobs(6, 40, 8, 0.1, seed=2)
        centers = np.stack([ds.inputs[ds.labels == c].mean(axis=0) for c in range(6)])
        dists = np.linalg.norm(ds.inputs[:, None, :] - centers[None, :, :], axis=-1)
        pred = np.argmin(dists, axis=1)
        assert np.mean(pred == ds.labels) == 1.0

    def test_deterministic(self):
        a = synth_blobs(4, 10, 3, 0.2, seed=9)
        b = synth_blobs(4, 10, 3, 0.2, seed=9)
        np.testing.assert_array_equal(a.inputs, b.inputs)


class TestExports:
    def test_manifest_roundtrip(self, tmp_path):
        ds = tiny_dataset(per_class=5, classes=2, seed=5)
        plan = make_clear_stream(ds, TaskSchedule.make(2, 1, seed=1))
        path = tmp_path / "manifest.csv"
        write_manifest(plan, path, header_lines=["seed = 1"])
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "# seed = 1"
        assert lines[1] == "position,dataset_index,label,task_id"
        assert len(lines) == 2 + len(ds)
        tid = [int(l.split(",")[3]) for l in lines[2:]]
        assert tid == sorted(tid)

    def test_proportions_sum_to_one(self):
        ds = tiny_dataset(per_class=100, classes=3, seed=6)
        plan = make_clear_stream(ds, TaskSchedule.make(3, 1, seed=1))
        _, _, props = class_proportion_table(plan, window=30)
        np.testing.assert_allclose(props.sum(axis=1), 1.0, atol=1e-12)

    def test_split_by_task(self):
        ds = tiny_dataset(per_class=4, classes=4)
        sched = TaskSchedule(2, 2, np.array([3, 1, 0, 2]))
        parts = split_by_task(ds, sched)
        assert set(parts[0].labels.tolist()) == {3, 1}
        assert set(parts[1].labels.tolist()) == {0, 2}
