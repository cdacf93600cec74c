"""Tests for the posterior losses.

Oracles: a plain softmax cross-entropy implementation (exact for the vMF
case), central finite differences for gradients, and small hand-worked
cases.
"""

import math

import numpy as np
import pytest

import helpers
from spheremap.losses import LossConfig, class_directions, map_log_loss


def softmax_cross_entropy(logits, y_col):
    """Reference mean NLL of a softmax over the given logits."""
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    return float(np.mean(lse - logits[np.arange(len(y_col)), y_col]))


def random_latent_batch(rng, b, d, n_classes):
    z = helpers.random_unit(rng, d, n=b)
    labels = rng.integers(0, n_classes, size=b)
    # ensure at least two classes when possible
    if n_classes >= 2 and len(np.unique(labels)) == 1:
        labels[0] = (labels[0] + 1) % n_classes
    return z, labels


def fd_gradient(cfg, z, labels, h=1e-6):
    """Central finite differences of the loss in ambient coordinates.

    Latent rows are renormalised after each perturbation would break the
    unit-norm precondition, so instead we perturb and renormalise inside
    the kernel evaluation by lifting the validation: here we simply keep
    perturbations small enough that the norm check (1e-6) still passes
    and rely on the loss being defined by the cosine values.
    """
    grad = np.zeros_like(z)
    for i in range(z.shape[0]):
        for j in range(z.shape[1]):
            zp = z.copy()
            zp[i, j] += h
            lp, _ = map_log_loss(cfg, zp, labels)
            zm = z.copy()
            zm[i, j] -= h
            lm, _ = map_log_loss(cfg, zm, labels)
            grad[i, j] = (lp - lm) / (2 * h)
    return grad


class TestClassDirections:
    def test_fixed_basis(self):
        cfg = LossConfig("vmf", 1.0, 4, 4)
        z = np.eye(4)[:3]
        labels = np.array([0, 1, 2])
        dirs = class_directions(cfg, z, labels)
        np.testing.assert_array_equal(dirs[2], np.array([0.0, 0.0, 1.0, 0.0]))

    def test_spherical_single_row(self):
        cfg = LossConfig("vmf", 1.0, 3, 3, mean_mode="spherical_estimate")
        z = np.array([[0.6, 0.8, 0.0], [0.0, 0.0, 1.0]])
        labels = np.array([1, 2])
        dirs = class_directions(cfg, z, labels)
        np.testing.assert_allclose(dirs[1], z[0], atol=1e-12)

    def test_spherical_symmetric_pair(self):
        cfg = LossConfig("vmf", 1.0, 2, 2, mean_mode="spherical_estimate")
        z = np.array([[1.0, 0.0], [0.0, 1.0]])
        labels = np.array([0, 0])
        dirs = class_directions(cfg, z, labels)
        np.testing.assert_allclose(dirs[0], np.array([1.0, 1.0]) / math.sqrt(2.0), atol=1e-12)

    def test_degenerate_mean(self):
        cfg = LossConfig("vmf", 1.0, 2, 2, mean_mode="spherical_estimate")
        z = np.array([[1.0, 0.0], [-1.0, 0.0]])
        labels = np.array([0, 0])
        with pytest.raises(ValueError, match="degenerate"):
            class_directions(cfg, z, labels)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            LossConfig("vmf", 1.0, 3, 5)      # more classes than dims
        with pytest.raises(ValueError):
            LossConfig("vmf", 0.0, 3, 2)      # kappa must be positive
        with pytest.raises(ValueError):
            LossConfig("huber", 1.0, 3, 2)


class TestMapLogLoss:
    def test_single_class_batch_is_zero(self):
        cfg = LossConfig("vmf", 2.0, 4, 4)
        rng = np.random.default_rng(0)
        z = helpers.random_unit(rng, 4, n=5)
        labels = np.full(5, 2)
        loss, grad = map_log_loss(cfg, z, labels)
        assert loss == 0.0
        np.testing.assert_array_equal(grad, np.zeros_like(z))

    def test_two_class_hand_case(self):
        # z = e1 with label 0, C_B = {0, 1}: two-term softmax with logits (1, 0)
        cfg = LossConfig("vmf", 1.0, 2, 2)
        z = np.array([[1.0, 0.0], [0.0, 1.0]])
        labels = np.array([0, 1])
        loss, _ = map_log_loss(cfg, z, labels)
        # both samples are symmetric, so the mean equals the single-sample value
        assert loss == pytest.approx(0.3132616875182228, rel=1e-12)

    def test_vmf_equals_cross_entropy(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            d = int(rng.integers(2, 9))
            L = int(rng.integers(2, d + 1))
            b = int(rng.integers(2, 12))
            kappa = float(rng.uniform(0.2, 9.0))
            cfg = LossConfig("vmf", kappa, d, L)
            z, labels = random_latent_batch(rng, b, d, L)
            present = np.unique(labels)
            col = {c: j for j, c in enumerate(present)}
            logits = kappa * z[:, present]
            ref = softmax_cross_entropy(logits, np.array([col[c] for c in labels]))
            loss, _ = map_log_loss(cfg, z, labels)
            assert loss == pytest.approx(ref, abs=1e-12)

    @pytest.mark.parametrize("kind,kappa", [("vmf", 2.0), ("agd", math.sqrt(0.2))])
    def test_gradient_matches_finite_differences(self, kind, kappa):
        rng = np.random.default_rng(7)
        cfg = LossConfig(kind, kappa, 5, 4)
        z, labels = random_latent_batch(rng, 8, 5, 4)
        _, grad = map_log_loss(cfg, z, labels)
        fd = fd_gradient(cfg, z, labels)
        np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-9)

    def test_vmf_gradient_form(self):
        # grad_i = kappa (sum_c p_c mu_c - mu_{y_i}) / b for fixed basis
        rng = np.random.default_rng(9)
        cfg = LossConfig("vmf", 3.0, 4, 3)
        z, labels = random_latent_batch(rng, 6, 4, 3)
        loss, grad = map_log_loss(cfg, z, labels)
        present = np.unique(labels)
        dirs = np.eye(4)[present]
        logits = 3.0 * z @ dirs.T
        p = np.exp(logits - logits.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        col = {c: j for j, c in enumerate(present)}
        onehot = np.zeros_like(p)
        onehot[np.arange(len(labels)), [col[c] for c in labels]] = 1.0
        ref = 3.0 * (p - onehot) @ dirs / len(labels)
        np.testing.assert_allclose(grad, ref, atol=1e-12)

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(13)
        for kind, kappa in (("vmf", 1.5), ("agd", 0.8)):
            for _ in range(10):
                cfg = LossConfig(kind, kappa, 6, 5)
                z, labels = random_latent_batch(rng, 7, 6, 5)
                loss, _ = map_log_loss(cfg, z, labels)
                assert loss >= 0.0

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(17)
        cfg = LossConfig("agd", 1.0, 5, 4)
        z, labels = random_latent_batch(rng, 9, 5, 4)
        perm = rng.permutation(9)
        loss_a, grad_a = map_log_loss(cfg, z, labels)
        loss_b, grad_b = map_log_loss(cfg, z[perm], labels[perm])
        assert loss_b == pytest.approx(loss_a, rel=1e-14)
        np.testing.assert_allclose(grad_b, grad_a[perm], atol=1e-14)

    def test_class_relabeling_symmetry(self):
        # permuting class ids permutes which basis vectors are used but
        # leaves the loss unchanged
        rng = np.random.default_rng(19)
        cfg = LossConfig("vmf", 2.0, 5, 5)
        z, labels = random_latent_batch(rng, 8, 5, 5)
        sigma = rng.permutation(5)
        # relabel c -> sigma[c] and move coordinate c to slot sigma[c], so
        # that each sample keeps the same cosine with its class direction
        z_perm = z[:, np.argsort(sigma)]
        loss_a, _ = map_log_loss(cfg, z, labels)
        loss_b, _ = map_log_loss(cfg, z_perm, sigma[labels])
        assert loss_b == pytest.approx(loss_a, rel=1e-12)

    def test_descent_step_decreases_loss(self):
        rng = np.random.default_rng(23)
        eta = 1e-3
        for trial in range(100):
            kind = "vmf" if trial % 2 == 0 else "agd"
            cfg = LossConfig(kind, 1.5, 5, 4)
            z, labels = random_latent_batch(rng, 6, 5, 4)
            if len(np.unique(labels)) < 2:
                continue
            loss, grad = map_log_loss(cfg, z, labels)
            z_new = z - eta * grad
            z_new /= np.linalg.norm(z_new, axis=1, keepdims=True)
            loss_new, _ = map_log_loss(cfg, z_new, labels)
            assert loss_new < loss

    def test_unrepresented_candidates_are_noops(self):
        rng = np.random.default_rng(29)
        cfg = LossConfig("agd", 1.0, 6, 6)
        z, labels = random_latent_batch(rng, 5, 6, 3)
        base_loss, base_grad = map_log_loss(cfg, z, labels)
        loss, grad = map_log_loss(cfg, z, labels, candidates=[0, 1, 2, 3, 4, 5])
        assert loss == base_loss
        np.testing.assert_array_equal(grad, base_grad)

    def test_candidates_must_cover_batch(self):
        cfg = LossConfig("vmf", 1.0, 3, 3)
        z = np.eye(3)[:2]
        labels = np.array([0, 1])
        with pytest.raises(ValueError):
            map_log_loss(cfg, z, labels, candidates=[0])

    def test_spherical_mode_runs_with_frozen_directions(self):
        rng = np.random.default_rng(31)
        cfg = LossConfig("vmf", 2.0, 4, 3, mean_mode="spherical_estimate")
        z, labels = random_latent_batch(rng, 8, 4, 3)
        loss, grad = map_log_loss(cfg, z, labels)
        assert math.isfinite(loss) and loss >= 0.0
        assert grad.shape == z.shape

    def test_empty_and_mismatched_batches(self):
        cfg = LossConfig("vmf", 1.0, 3, 3)
        with pytest.raises(ValueError):
            map_log_loss(cfg, np.zeros((0, 3)), np.zeros(0, dtype=int))
        with pytest.raises(ValueError):
            map_log_loss(cfg, np.eye(4)[:2], np.array([0, 1]))
