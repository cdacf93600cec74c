"""Posterior classification losses on the sphere.

For a batch of unit latents z_i with labels y_i, the loss is the mean
negative log posterior over the classes present in the batch,

    -(1/b) sum_i log [ g(mu_{y_i} . z_i) / sum_{c in C_B} g(mu_c . z_i) ],

with g either the vMF kernel exp(kappa t) or the angular-Gaussian kernel.
Class priors follow the batch rule: 1 for classes in the batch, 0
otherwise, so the sum runs over C_B only.  Mean directions are either
pinned to standard basis vectors (`fixed_basis`, requires num_classes <=
dim) or estimated as normalized per-class batch means
(`spherical_estimate`, treated as constants by the gradient).

The vMF case is algebraically identical to softmax cross-entropy on
logits kappa * z restricted to the batch classes, which doubles as a
complete reference implementation in the tests.

Reduction is mean over the batch rather than a sum, so the learning rate
does not scale with batch size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .distributions import agd_log_kernel, agd_log_kernel_ratio

__all__ = ["LossConfig", "class_directions", "map_log_loss"]

_UNIT_TOL = 1e-6


@dataclass(frozen=True)
class LossConfig:
    """Configuration of the posterior loss.

    kind : "vmf" or "agd"
    kappa : concentration (> 0 for a non-degenerate objective)
    dim : latent dimension d
    num_classes : number of classes L; fixed directions need L <= d
    mean_mode : "fixed_basis" or "spherical_estimate"
    tol : series truncation tolerance for the agd kernel
    """

    kind: str
    kappa: float
    dim: int
    num_classes: int
    mean_mode: str = "fixed_basis"
    tol: float = 1e-12

    def __post_init__(self):
        if self.kind not in ("vmf", "agd"):
            raise ValueError(f"loss kind must be 'vmf' or 'agd', got {self.kind!r}")
        if self.mean_mode not in ("fixed_basis", "spherical_estimate"):
            raise ValueError(f"unknown mean_mode {self.mean_mode!r}")
        if self.kappa <= 0.0:
            raise ValueError("kappa must be > 0 for a non-degenerate objective")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if self.num_classes > self.dim:
            raise ValueError(
                f"one-hot directions need dim >= num_classes "
                f"(got dim={self.dim}, num_classes={self.num_classes})"
            )


def _check_batch(cfg: LossConfig, z: np.ndarray, labels: np.ndarray):
    z = np.asarray(z, dtype=float)
    labels = np.asarray(labels)
    if z.ndim != 2 or labels.ndim != 1 or z.shape[0] != labels.shape[0]:
        raise ValueError("z must be (b, d) with one label per row")
    if z.shape[0] == 0:
        raise ValueError("empty batch")
    if z.shape[1] != cfg.dim:
        raise ValueError(f"latents have dimension {z.shape[1]}, config says {cfg.dim}")
    norms = np.linalg.norm(z, axis=1)
    if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
        raise ValueError("latent rows must be unit norm (within 1e-6)")
    if np.any(labels < 0) or np.any(labels >= cfg.num_classes):
        raise ValueError("labels out of range")
    return z, labels.astype(int)


def class_directions(cfg: LossConfig, z, labels) -> dict[int, np.ndarray]:
    """Mean direction per class present in the batch.

    fixed_basis pins class c to the standard basis vector e_c regardless
    of the batch content; spherical_estimate returns the normalized
    arithmetic mean of the class rows and fails on degenerate means.
    """
    z, labels = _check_batch(cfg, z, labels)
    present = np.unique(labels)
    if cfg.mean_mode == "fixed_basis":
        eye = np.eye(cfg.dim)
        return {int(c): eye[int(c)] for c in present}
    dirs: dict[int, np.ndarray] = {}
    for c in present:
        mean = z[labels == c].mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm < 1e-12:
            raise ValueError(f"degenerate spherical mean for class {int(c)}")
        dirs[int(c)] = mean / norm
    return dirs


def map_log_loss(cfg: LossConfig, z, labels, candidates=None):
    """Mean negative log posterior and its gradient with respect to z.

    Parameters
    ----------
    cfg : LossConfig
    z : (b, d) array of unit-norm latents
    labels : (b,) integer labels
    candidates : optional iterable of candidate class ids.  Classes absent
        from the batch carry prior 0 and drop out, so passing extra ids
        changes nothing; present classes may not be excluded.

    Returns
    -------
    (loss, grad) : float and (b, d) array; grad is the ambient-space
        gradient (tangential projection happens in the encoder's
        normalization backward).
    """
    z, labels = _check_batch(cfg, z, labels)
    b = z.shape[0]
    present = np.unique(labels)
    if candidates is not None:
        cand = np.unique(np.asarray(list(candidates), dtype=int))
        if not np.all(np.isin(present, cand)):
            raise ValueError("candidate set must contain every class in the batch")
        # batch-prior rule: pi = 0 off-batch, so extra candidates drop out

    dirs_map = class_directions(cfg, z, labels)
    dirs = np.stack([dirs_map[int(c)] for c in present])        # (C, d)
    col_of = {int(c): j for j, c in enumerate(present)}
    y_col = np.array([col_of[int(c)] for c in labels])

    t = z @ dirs.T                                              # (b, C)
    t = np.clip(t, -1.0, 1.0)
    if cfg.kind == "vmf":
        log_g = cfg.kappa * t
        dlog_g = np.full_like(t, cfg.kappa)
    else:
        log_g = agd_log_kernel(t, cfg.kappa, cfg.dim, cfg.tol)
        dlog_g = agd_log_kernel_ratio(t, cfg.kappa, cfg.dim, cfg.tol)

    log_denom = logsumexp(log_g, axis=1)
    loss = float(np.mean(log_denom - log_g[np.arange(b), y_col]))

    post = np.exp(log_g - log_denom[:, None])                  # (b, C)
    weight = post.copy()
    weight[np.arange(b), y_col] -= 1.0
    grad = (weight * dlog_g) @ dirs / b
    return loss, grad
