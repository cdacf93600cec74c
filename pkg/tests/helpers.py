"""Shared helpers for the test suite (oracle-side utilities only)."""

import numpy as np


def random_spd(rng, d, eig_lo=0.2, eig_hi=5.0):
    """Random SPD matrix with eigenvalues in [eig_lo, eig_hi]."""
    q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    evals = rng.uniform(eig_lo, eig_hi, size=d)
    return q @ np.diag(evals) @ q.T


def random_unit(rng, d, n=None):
    """Uniform random unit vector(s)."""
    shape = (d,) if n is None else (n, d)
    v = rng.normal(size=shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def random_projected_params(rng, d, mu_max=4.0, eig_lo=0.2, eig_hi=5.0):
    """Random (mu, sigma) in the documented test envelope."""
    mu = rng.normal(size=d)
    mu *= rng.uniform(0.0, mu_max) / max(np.linalg.norm(mu), 1e-12)
    return mu, random_spd(rng, d, eig_lo, eig_hi)


def fibonacci_sphere(n):
    """Quasi-uniform lattice of n nodes on S^2 (stratified in z)."""
    i = np.arange(n)
    golden = (1.0 + 5.0 ** 0.5) / 2.0
    z = 1.0 - (2.0 * i + 1.0) / n
    theta = 2.0 * np.pi * i / golden
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


def circle_points(n):
    """n evenly spaced points on S^1 (trapezoid nodes, endpoint excluded)."""
    ang = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


def random_rotation(rng, d):
    """Haar-ish random rotation matrix (QR with sign fix, det forced +1)."""
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def sphere_binned_counts(samples, logpdf, n_z=16, n_az=16, quad=6, min_expected=20.0):
    """Equal-area (z, azimuth) bins on S^2: observed counts plus analytic
    bin probabilities by midpoint quadrature, sparse bins merged so the
    chi-square statistic stays valid."""
    z_edges = np.linspace(-1.0, 1.0, n_z + 1)
    az_edges = np.linspace(-np.pi, np.pi, n_az + 1)
    zi = np.clip(np.digitize(samples[:, 2], z_edges) - 1, 0, n_z - 1)
    az = np.arctan2(samples[:, 1], samples[:, 0])
    ai = np.clip(np.digitize(az, az_edges) - 1, 0, n_az - 1)
    counts = np.bincount(zi * n_az + ai, minlength=n_z * n_az).astype(float)

    probs = np.empty(n_z * n_az)
    offsets = (np.arange(quad) + 0.5) / quad
    for i in range(n_z):
        z0, z1 = z_edges[i], z_edges[i + 1]
        zs = z0 + offsets * (z1 - z0)
        for j in range(n_az):
            a0, a1 = az_edges[j], az_edges[j + 1]
            azs = a0 + offsets * (a1 - a0)
            zz, aa = np.meshgrid(zs, azs, indexing="ij")
            r = np.sqrt(np.maximum(0.0, 1.0 - zz.ravel() ** 2))
            pts = np.stack([r * np.cos(aa.ravel()), r * np.sin(aa.ravel()),
                            zz.ravel()], axis=1)
            probs[i * n_az + j] = np.exp(logpdf(pts)).mean() * (z1 - z0) * (a1 - a0)
    probs /= probs.sum()

    order = np.argsort(probs)
    counts, probs = counts[order], probs[order]
    total = counts.sum()
    merged_c, merged_p = [], []
    acc_c = acc_p = 0.0
    for c, q in zip(counts, probs):
        acc_c += c
        acc_p += q
        if acc_p * total >= min_expected:
            merged_c.append(acc_c)
            merged_p.append(acc_p)
            acc_c = acc_p = 0.0
    merged_c[-1] += acc_c
    merged_p[-1] += acc_p
    return np.array(merged_c), np.array(merged_p) / sum(merged_p)


def write_fake_cifar(dirpath, classes=4, per_class_train=520, per_class_test=120,
                     seed=0, noise=25.0):
    """Synthesize CIFAR-10-format binary batches with learnable classes.

    Byte layout matches the official files exactly (3073-byte records:
    label byte + 3 x 1024 channel planes).  Each class gets a distinct
    smooth color pattern plus pixel noise, so nearest-mean classification
    is possible but not trivial.
    """
    import os

    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.arange(32), np.arange(32), indexing="ij")
    patterns = []
    for c in range(classes):
        chans = []
        for ch in range(3):
            a, b, phase = rng.uniform(0.5, 2.0, 3)
            plane = 128 + 90 * np.sin(a * xx / 6 + phase) * np.cos(b * yy / 6 + c)
            chans.append(plane)
        patterns.append(np.stack(chans))

    def render(path, per_class):
        records = []
        for c in range(classes):
            for _ in range(per_class):
                img = patterns[c] + rng.normal(0, noise, size=(3, 32, 32))
                img = np.clip(img, 0, 255).astype(np.uint8)
                records.append(bytes([c]) + img.tobytes())
        order = rng.permutation(len(records))
        with open(path, "wb") as fh:
            for i in order:
                fh.write(records[i])

    render(os.path.join(dirpath, "data_batch_1.bin"), per_class_train)
    render(os.path.join(dirpath, "test_batch.bin"), per_class_test)
    return dirpath
