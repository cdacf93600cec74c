"""Command-line interface.

Subcommands
-----------
train          one online run; writes metrics.csv, accuracy_matrix.csv,
               summary.json, checkpoint.npz, memory.npz and figures into
               a per-run directory named <config-hash>-s<seed>
sweep          repeat train over one parameter's values x several seeds;
               writes sweep_<param>.csv (value, mean, std) and a figure
density-check  numerical self-test of the sphere densities (printed
               pass/fail per check, exit 1 on any failure)
export-stream  stream order manifest plus windowed class proportions

Configuration is a flat `key = value` text file given with --config;
explicit command-line flags override file values, which override the
built-in defaults shown in --help.  Every artifact embeds the resolved
configuration; CSV outputs are byte-reproducible for a fixed config and
seed (timestamps only appear in summary.json).  The output root is
--out, or the SPHEREMAP_OUT environment variable, or ./runs.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import reporting
from .distributions import (
    IsotropicParams,
    ProjectedNormalParams,
    agd_logpdf,
    log_unit_sphere_area,
    projected_normal_logpdf_closed,
    projected_normal_logpdf_recursive,
    projected_normal_logpdf_series,
    sample_projected_normal,
    vmf_logpdf,
)
from .encoder import mlp_spec, save_checkpoint
from .errors import MalformedFileError
from .losses import LossConfig
from .special import gammaln, halfline_moment, log_parabolic_cylinder_neg
from .streams import (
    Dataset,
    TaskSchedule,
    blurry_shuffle,
    load_cifar10_binary,
    make_clear_stream,
    make_crop_flip_aug,
    make_vector_aug,
    split_by_task,
    standardize_channels,
    synth_blobs,
    write_class_proportions,
    write_manifest,
)
from .training import (
    TrainConfig,
    train_run,
    write_accuracy_csv,
    write_metrics_csv,
)

OUT_ENV = "SPHEREMAP_OUT"
SWEEPABLE = ("kappa2", "views", "mean_mode", "blur_sigma", "memory")


class ConfigError(Exception):
    """Bad configuration: reported with exit code 2."""


@dataclass
class RunConfig:
    """Resolved run configuration; field names double as config-file keys."""

    dataset: str = "blobs"
    tasks: int = 3
    classes_per_task: int = 2
    per_class: int = 200
    per_class_test: int = 100
    input_dim: int = 8
    spread: float = 0.1
    data_dir: str = ""
    standardize: bool = False
    shuffle_labels: bool = True
    blur_sigma: float = 0.0
    loss: str = "agd"
    kappa2: float = -1.0          # -1 resolves to the per-loss default
    latent_dim: int = 16
    mean_mode: str = "fixed_basis"
    trunk: str = "64"
    head: str = "32"
    views: int = 5
    stream_batch: int = 10
    mem_batch: int = 64
    memory: int = 200
    lr: float = 0.01
    eval_every: int = 0
    aug: str = "auto"
    window: int = 500
    figures: bool = True
    seed: int = 0
    out: str = ""

    def resolve(self) -> "RunConfig":
        if self.kappa2 <= 0.0:
            # concentration optima differ per kernel
            self.kappa2 = 0.2 if self.loss == "agd" else 7.0
        if not self.out:
            self.out = os.environ.get(OUT_ENV, "runs")
        return self

    def validate(self):
        if self.dataset not in ("blobs", "cifar10-subset"):
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        if self.loss not in ("vmf", "agd"):
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.mean_mode not in ("fixed_basis", "spherical_estimate"):
            raise ConfigError(f"unknown mean_mode {self.mean_mode!r}")
        if self.aug not in ("auto", "noise", "crop-flip", "none"):
            raise ConfigError(f"unknown aug {self.aug!r}")
        if min(self.tasks, self.classes_per_task, self.per_class,
               self.per_class_test, self.stream_batch, self.mem_batch) < 1:
            raise ConfigError("counts and batch sizes must be >= 1")
        if self.views < 0 or self.memory < 0 or self.blur_sigma < 0:
            raise ConfigError("views, memory and blur_sigma must be >= 0")
        num_classes = self.tasks * self.classes_per_task
        if num_classes > self.latent_dim:
            raise ConfigError(
                f"latent_dim must be >= number of classes "
                f"({self.latent_dim} < {num_classes}): one-hot directions need room"
            )
        if self.dataset == "cifar10-subset":
            if num_classes > 10:
                raise ConfigError("cifar10-subset supports at most 10 classes")
            if not self.data_dir:
                raise ConfigError("cifar10-subset needs --data-dir")
            if not os.path.isdir(self.data_dir):
                raise ConfigError(f"data_dir {self.data_dir!r} does not exist")
        try:
            widths(self.trunk)
            widths(self.head)
        except ValueError as exc:
            raise ConfigError(f"bad layer widths: {exc}") from None

    def echo(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        payload = {k: v for k, v in self.echo().items() if k not in ("out", "seed")}
        return hashlib.sha1(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:10]

    def header_lines(self) -> list:
        return [f"{k} = {v}" for k, v in sorted(self.echo().items())]


def widths(text: str) -> tuple:
    try:
        vals = tuple(int(tok) for tok in str(text).split(",") if tok.strip())
    except ValueError:
        raise ValueError(f"{text!r} is not a comma list of integers")
    if not vals or min(vals) < 1:
        raise ValueError(f"{text!r} must list positive widths")
    return vals


_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, kind, raw):
    if kind is bool:
        text = str(raw).strip().lower()
        if text in _BOOL_TRUE:
            return True
        if text in _BOOL_FALSE:
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected {kind.__name__}, got {raw!r}") from None


def read_config_file(path) -> dict:
    """Flat `key = value` file; # starts a comment; unknown keys rejected."""
    if not os.path.isfile(path):
        raise ConfigError(f"config file {path!r} not found")
    known = {f.name: f.type for f in fields(RunConfig)}
    types = {"int": int, "float": float, "str": str, "bool": bool}
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, _, value = body.partition("=")
            key = key.strip()
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            kind = types.get(str(known[key]), str) if isinstance(known[key], str) else known[key]
            out[key] = _coerce(key, kind, value.strip())
    return out


def build_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        for key, value in read_config_file(args.config).items():
            setattr(cfg, key, value)
    for f in fields(RunConfig):
        value = getattr(args, f.name.replace("-", "_"), None)
        if value is not None:
            setattr(cfg, f.name, value)
    cfg.resolve()
    cfg.validate()
    return cfg


def _add_run_flags(parser):
    cfg = RunConfig()
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--dataset", choices=["blobs", "cifar10-subset"],
                        help=f"data source (default {cfg.dataset})")
    parser.add_argument("--tasks", type=int, help=f"number of tasks (default {cfg.tasks})")
    parser.add_argument("--classes-per-task", dest="classes_per_task", type=int,
                        help=f"classes per task (default {cfg.classes_per_task})")
    parser.add_argument("--per-class", dest="per_class", type=int,
                        help=f"training samples per class (default {cfg.per_class})")
    parser.add_argument("--per-class-test", dest="per_class_test", type=int,
                        help=f"held-out samples per class (default {cfg.per_class_test})")
    parser.add_argument("--input-dim", dest="input_dim", type=int,
                        help=f"blob input dimension (default {cfg.input_dim})")
    parser.add_argument("--spread", type=float,
                        help=f"blob intra-class spread; centers are unit-separated "
                             f"(default {cfg.spread})")
    parser.add_argument("--data-dir", dest="data_dir",
                        help="directory with CIFAR-10 binary batch files")
    parser.add_argument("--standardize", action="store_true", default=None,
                        help="per-channel standardization of image data")
    parser.add_argument("--keep-label-order", dest="shuffle_labels",
                        action="store_false", default=None,
                        help="disable the random label order (labels are shuffled by default)")
    parser.add_argument("--blur-sigma", dest="blur_sigma", type=float,
                        help=f"half-normal scale for blurry boundaries; 0 keeps them clear "
                             f"(default {cfg.blur_sigma})")
    parser.add_argument("--loss", choices=["vmf", "agd"],
                        help=f"posterior kernel (default {cfg.loss})")
    parser.add_argument("--kappa2", type=float,
                        help="squared concentration (default: 0.2 for agd, 7 for vmf, "
                             "the accuracy optima of the respective kernels)")
    parser.add_argument("--latent-dim", dest="latent_dim", type=int,
                        help=f"loss-space dimension, >= number of classes (default {cfg.latent_dim})")
    parser.add_argument("--mean-mode", dest="mean_mode",
                        choices=["fixed_basis", "spherical_estimate"],
                        help=f"class directions: pinned basis vectors or per-batch "
                             f"spherical means (default {cfg.mean_mode})")
    parser.add_argument("--trunk", help=f"trunk widths, comma list (default {cfg.trunk})")
    parser.add_argument("--head", help=f"projection head widths, comma list (default {cfg.head})")
    parser.add_argument("--views", type=int,
                        help=f"augmented views added per sample (default {cfg.views})")
    parser.add_argument("--stream-batch", dest="stream_batch", type=int,
                        help=f"incoming batch size (default {cfg.stream_batch})")
    parser.add_argument("--mem-batch", dest="mem_batch", type=int,
                        help=f"memory retrieval size (default {cfg.mem_batch})")
    parser.add_argument("--memory", type=int,
                        help=f"replay memory capacity (default {cfg.memory})")
    parser.add_argument("--lr", type=float, help=f"Adam learning rate (default {cfg.lr})")
    parser.add_argument("--eval-every", dest="eval_every", type=int,
                        help="checkpoint cadence in samples; 0 = task boundaries for "
                             "clear streams, even cadence for blurry ones")
    parser.add_argument("--aug", choices=["auto", "noise", "crop-flip", "none"],
                        help="view augmentation (auto: noise for blobs, crop-flip for images)")
    parser.add_argument("--window", type=int,
                        help=f"window for class-proportion export (default {cfg.window})")
    parser.add_argument("--no-figures", dest="figures", action="store_false", default=None,
                        help="skip PNG rendering (CSV output only)")
    parser.add_argument("--seed", type=int, help=f"run seed (default {cfg.seed})")
    parser.add_argument("--out", help=f"output root (default ${OUT_ENV} or ./runs)")


def load_data(cfg: RunConfig):
    """Build (train Dataset, test Dataset) per the config."""
    num_classes = cfg.tasks * cfg.classes_per_task
    if cfg.dataset == "blobs":
        train = synth_blobs(num_classes, cfg.per_class, cfg.input_dim, cfg.spread, cfg.seed)
        test = synth_blobs(num_classes, cfg.per_class + cfg.per_class_test,
                           cfg.input_dim, cfg.spread, cfg.seed)
        # held-out rows: same centers, disjoint noise draws
        keep = np.concatenate([
            np.arange(cfg.per_class, cfg.per_class + cfg.per_class_test)
            + c * (cfg.per_class + cfg.per_class_test)
            for c in range(num_classes)
        ])
        return train, Dataset(test.inputs[keep], test.labels[keep])

    train_parts, test_ds = [], None
    for name in ("data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin",
                 "data_batch_4.bin", "data_batch_5.bin"):
        path = os.path.join(cfg.data_dir, name)
        if os.path.isfile(path):
            train_parts.append(load_cifar10_binary(path))
    test_path = os.path.join(cfg.data_dir, "test_batch.bin")
    if os.path.isfile(test_path):
        test_ds = load_cifar10_binary(test_path)
    if not train_parts or test_ds is None:
        raise ConfigError(
            f"{cfg.data_dir!r} must contain data_batch_*.bin and test_batch.bin"
        )
    inputs = np.concatenate([d.inputs for d in train_parts])
    labels = np.concatenate([d.labels for d in train_parts])

    def subset(x, y, per):
        keep = np.concatenate([np.nonzero(y == c)[0][:per] for c in range(num_classes)])
        return x[keep], y[keep]

    tr_x, tr_y = subset(inputs, labels, cfg.per_class)
    te_x, te_y = subset(test_ds.inputs, test_ds.labels, cfg.per_class_test)
    if cfg.standardize:
        tr_x, mean, std = standardize_channels(tr_x)
        per = te_x.shape[1] // 3
        te_x = ((te_x.reshape(-1, 3, per) - mean[None, :, None]) / std[None, :, None]
                ).reshape(te_x.shape)
    return Dataset(tr_x, tr_y), Dataset(te_x, te_y)


def make_aug(cfg: RunConfig):
    kind = cfg.aug
    if kind == "auto":
        kind = "crop-flip" if cfg.dataset == "cifar10-subset" else "noise"
    if kind == "none":
        return lambda inputs, rng: np.array(inputs, copy=True)
    if kind == "crop-flip":
        return make_crop_flip_aug()
    return make_vector_aug(noise_scale=0.05 * cfg.spread if cfg.dataset == "blobs" else 0.02)


def build_plan(cfg: RunConfig, train: Dataset):
    schedule = TaskSchedule.make(cfg.tasks, cfg.classes_per_task, cfg.seed,
                                 shuffle_labels=cfg.shuffle_labels)
    plan = make_clear_stream(train, schedule)
    if cfg.blur_sigma > 0.0:
        plan = blurry_shuffle(plan, cfg.blur_sigma, cfg.seed)
    return plan, schedule


def to_train_config(cfg: RunConfig) -> TrainConfig:
    num_classes = cfg.tasks * cfg.classes_per_task
    input_dim = cfg.input_dim if cfg.dataset == "blobs" else 3072
    loss = LossConfig(cfg.loss, math.sqrt(cfg.kappa2), cfg.latent_dim, num_classes,
                      mean_mode=cfg.mean_mode)
    net = mlp_spec(input_dim, widths(cfg.trunk), widths(cfg.head), cfg.latent_dim)
    return TrainConfig(loss, net, stream_batch=cfg.stream_batch, mem_batch=cfg.mem_batch,
                       views=cfg.views, memory_capacity=cfg.memory, lr=cfg.lr,
                       eval_every=cfg.eval_every or None, seed=cfg.seed)


def run_dir(cfg: RunConfig) -> str:
    path = os.path.join(cfg.out, f"{cfg.hash()}-s{cfg.seed}")
    os.makedirs(path, exist_ok=True)
    return path


def execute_run(cfg: RunConfig):
    """One full training run; returns (RunResult, run directory)."""
    train, test = load_data(cfg)
    plan, schedule = build_plan(cfg, train)
    result = train_run(to_train_config(cfg), plan, split_by_task(test, schedule),
                       make_aug(cfg))
    return result, plan


def cmd_train(args) -> int:
    cfg = build_config(args)
    result, _ = execute_run(cfg)
    out = run_dir(cfg)
    header = cfg.header_lines()
    write_metrics_csv(os.path.join(out, "metrics.csv"), result.metrics, header)
    write_accuracy_csv(os.path.join(out, "accuracy_matrix.csv"), result.accuracy, header)
    with open(os.path.join(out, "config.txt"), "w") as fh:
        fh.write("\n".join(header) + "\n")
    summary = {
        "config": cfg.echo(),
        "config_hash": cfg.hash(),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        **result.summary,
    }
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    save_checkpoint(result.encoder, os.path.join(out, "checkpoint.npz"),
                    extra_meta={"config": cfg.echo()})
    result.memory.save(os.path.join(out, "memory.npz"),
                       extra_meta={"config": cfg.echo()})
    if cfg.figures:
        reporting.save_loss_curve(result.metrics, os.path.join(out, "loss_curve.png"))
        reporting.save_accuracy_matrix_figure(result.accuracy,
                                              os.path.join(out, "accuracy_matrix.png"))
    print(f"final average accuracy: {result.summary['final_aa']:.4f}")
    print(f"artifacts: {out}")
    return 0


def _sweep_values(param: str, raw: str):
    if param not in SWEEPABLE:
        raise ConfigError(f"unknown sweep parameter {param!r}; choose from {SWEEPABLE}")
    toks = [t.strip() for t in raw.split(",") if t.strip()]
    if not toks:
        raise ConfigError("sweep needs at least one value")
    if param == "mean_mode":
        return toks
    if param in ("views", "memory"):
        return [_coerce(param, int, t) for t in toks]
    return [_coerce(param, float, t) for t in toks]


def cmd_sweep(args) -> int:
    cfg = build_config(args)
    values = _sweep_values(args.param, args.values)
    n_seeds = args.sweep_seeds
    if n_seeds < 1:
        raise ConfigError("--sweep-seeds must be >= 1")
    out = run_dir(cfg)
    rows = []
    for value in values:
        finals = []
        for s in range(n_seeds):
            run_cfg = RunConfig(**cfg.echo())
            setattr(run_cfg, args.param, value)
            run_cfg.seed = cfg.seed + s
            run_cfg.validate()
            result, _ = execute_run(run_cfg)
            finals.append(result.summary["final_aa"])
        rows.append((value, float(np.mean(finals)), float(np.std(finals))))
        print(f"{args.param} = {value}: final AA {rows[-1][1]:.4f} +/- {rows[-1][2]:.4f}")
    csv_path = os.path.join(out, f"sweep_{args.param}.csv")
    with open(csv_path, "w") as fh:
        for line in cfg.header_lines():
            fh.write(f"# {line}\n")
        fh.write(f"# sweep_seeds = {n_seeds}\n")
        fh.write(f"{args.param},final_aa_mean,final_aa_std\n")
        for value, mean, std in rows:
            fh.write(f"{value},{mean:.6f},{std:.6f}\n")
    if cfg.figures:
        reporting.save_sweep_figure([r[0] for r in rows], [r[1] for r in rows],
                                    [r[2] for r in rows], args.param,
                                    os.path.join(out, f"sweep_{args.param}.png"))
    print(f"artifacts: {csv_path}")
    return 0


def cmd_export_stream(args) -> int:
    cfg = build_config(args)
    train, _ = load_data(cfg)
    plan, _ = build_plan(cfg, train)
    out = run_dir(cfg)
    header = cfg.header_lines()
    manifest = os.path.join(out, "manifest.csv")
    proportions = os.path.join(out, "class_proportions.csv")
    write_manifest(plan, manifest, header)
    window = min(cfg.window, max(1, len(plan) // 4))
    write_class_proportions(plan, proportions, window, header)
    if cfg.figures:
        from .streams import class_proportion_table

        positions, class_ids, props = class_proportion_table(plan, window)
        reporting.save_class_proportions_figure(
            positions, class_ids, props, os.path.join(out, "class_proportions.png"))
    print(f"artifacts: {manifest}")
    return 0


# ---------------------------------------------------------------------------
# density self-check


def _sphere_binned_counts(samples, logpdf, n_z=16, n_az=16, quad=6, min_expected=20.0):
    """Equal-area (z, azimuth) bins on S^2: observed counts and analytic
    probabilities (midpoint quadrature), with sparse bins merged."""
    z_edges = np.linspace(-1.0, 1.0, n_z + 1)
    a_edges = np.linspace(-math.pi, math.pi, n_az + 1)
    zi = np.clip(np.digitize(samples[:, 2], z_edges) - 1, 0, n_z - 1)
    ai = np.clip(np.digitize(np.arctan2(samples[:, 1], samples[:, 0]), a_edges) - 1,
                 0, n_az - 1)
    counts = np.bincount(zi * n_az + ai, minlength=n_z * n_az).astype(float)
    probs = np.empty(n_z * n_az)
    offsets = (np.arange(quad) + 0.5) / quad
    for iz in range(n_z):
        zc = z_edges[iz] + offsets * (z_edges[iz + 1] - z_edges[iz])
        for ia in range(n_az):
            ac = a_edges[ia] + offsets * (a_edges[ia + 1] - a_edges[ia])
            zz, aa = np.meshgrid(zc, ac, indexing="ij")
            rr = np.sqrt(np.maximum(0.0, 1.0 - zz.ravel() ** 2))
            pts = np.stack([rr * np.cos(aa.ravel()), rr * np.sin(aa.ravel()),
                            zz.ravel()], axis=1)
            probs[iz * n_az + ia] = (np.exp(logpdf(pts)).mean()
                                     * (z_edges[iz + 1] - z_edges[iz])
                                     * (a_edges[ia + 1] - a_edges[ia]))
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


def _check(name, max_err, bound, lines, extra=""):
    ok = max_err <= bound
    status = "PASS" if ok else "FAIL"
    lines.append(f"[{status}] {name}: max error {max_err:.3e} (bound {bound:.0e}){extra}")
    return ok


def cmd_density_check(args) -> int:
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    inject = args.inject_prefactor_bug
    lines = []
    ok = True

    def rec_logpdf(u, p):
        val = projected_normal_logpdf_recursive(u, p)
        # negative control: the (2 pi)^(1/2) prefactor slip of the printed
        # first form, reinstated on demand to prove the checks can fail
        return val + (0.5 * math.log(2.0 * math.pi) if inject else 0.0)

    # three-route agreement
    worst = 0.0
    for d in (2, 3, 5, 10):
        for _ in range(50):
            mu = rng.normal(size=d)
            mu *= rng.uniform(0, 4) / max(np.linalg.norm(mu), 1e-12)
            q, _ = np.linalg.qr(rng.normal(size=(d, d)))
            sigma = q @ np.diag(rng.uniform(0.2, 5.0, size=d)) @ q.T
            u = rng.normal(size=d)
            u /= np.linalg.norm(u)
            p = ProjectedNormalParams(mu, sigma)
            a = rec_logpdf(u, p)
            b = projected_normal_logpdf_series(u, p)
            c = projected_normal_logpdf_closed(u, p)
            worst = max(worst, abs(a - b), abs(a - c), abs(b - c))
    ok &= _check("three-route log-pdf agreement (d in 2,3,5,10)", worst, 1e-8, lines)

    # normalization of the isotropic kernels on S^1 (trapezoid)
    ang = np.linspace(0.0, 2.0 * math.pi, 100_000, endpoint=False)
    circle = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    worst = 0.0
    for _ in range(5):
        kappa = float(rng.uniform(0.1, 4.0))
        mu = circle[int(rng.integers(0, len(circle)))]
        params = IsotropicParams(mu, kappa)
        for pdf in (vmf_logpdf, agd_logpdf):
            total = float(np.exp(pdf(circle, params)).mean() * 2.0 * math.pi)
            worst = max(worst, abs(total - 1.0))
    ok &= _check("kernel normalization on S^1", worst, 1e-6, lines)

    # normalization of the angular-Gaussian density on S^2 (lattice MC)
    n = 1_000_000
    i = np.arange(n)
    golden = (1 + 5 ** 0.5) / 2
    z = 1 - (2 * i + 1) / n
    theta = 2 * np.pi * i / golden
    r = np.sqrt(np.maximum(0.0, 1 - z * z))
    sphere = np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)
    worst = 0.0
    for _ in range(5):
        kappa = float(rng.uniform(0.1, 4.0))
        mu = sphere[int(rng.integers(0, n))]
        params = IsotropicParams(mu, kappa)
        total = float(np.exp(agd_logpdf(sphere, params)).mean() * 4.0 * math.pi)
        worst = max(worst, abs(total - 1.0))
    # general anisotropic density through the recursive route
    mu = rng.normal(size=3)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    sigma = q @ np.diag(rng.uniform(0.3, 3.0, size=3)) @ q.T
    p = ProjectedNormalParams(mu, sigma)
    total = float(np.exp(rec_logpdf(sphere, p)).mean() * 4.0 * math.pi)
    worst = max(worst, abs(total - 1.0))
    ok &= _check("density normalization on S^2", worst, 1e-3, lines)

    # sampler goodness of fit (chi-square over equal-area bins; expected
    # probabilities by per-bin midpoint quadrature of the analytic density,
    # sparse bins merged to keep the statistic valid)
    from scipy.stats import chisquare

    p = ProjectedNormalParams(np.array([0.9, -0.3, 0.5]),
                              np.diag([1.2, 0.8, 1.0]))
    samples = sample_projected_normal(p, 1_000_000, seed=123)
    counts, probs = _sphere_binned_counts(samples, lambda pts: rec_logpdf(pts, p))
    _, pval = chisquare(counts, probs * counts.sum())
    status = "PASS" if pval > 0.01 else "FAIL"
    lines.append(f"[{status}] sampler chi-square goodness of fit: p = {pval:.4f} (need > 0.01)")
    ok &= pval > 0.01

    # parabolic cylinder vs half-line recursion through the exact identity
    worst = 0.0
    for d in range(1, 9):
        for gam in np.linspace(-3.0, 3.0, 13):
            lhs = log_parabolic_cylinder_neg(d, -float(gam))
            rhs = (0.5 * math.log(2.0 * math.pi) + 0.25 * gam * gam
                   + math.log(halfline_moment(d, float(gam))) - gammaln(d))
            worst = max(worst, abs(lhs - rhs))
    ok &= _check("cylinder-function vs moment-recursion identity", worst, 1e-8, lines)

    lines.append("")
    lines.append("resolved density conventions (verified by the checks above):")
    lines.append("  recursive form : prefactor (2 pi)^(-(d-1)/2), shifted-mean argument")
    lines.append("                   gamma = u'S^-1 mu / sqrt(u'S^-1 u)")
    lines.append("  series form    : term (sqrt(2) gamma)^k Gamma((d+k)/2) / (k! Gamma(d/2))")
    lines.append("  closed form    : prefactor (2 pi)^(-d/2), factor "
                 "exp(gamma^2/4) Gamma(d) D_(-d)(-gamma)")
    lines.append(f"  uniform-limit constant: 1/omega_(d-1), "
                 f"log omega_2 = {log_unit_sphere_area(3):.12f}")
    print("\n".join(lines))
    return 0 if ok else 1


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spheremap",
        description="MAP representation learning on the unit sphere, with replay, "
                    "over online class-incremental streams.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one online training pass")
    _add_run_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_sweep = sub.add_parser("sweep", help="sweep one parameter over seeds")
    _add_run_flags(p_sweep)
    p_sweep.add_argument("--param", required=True, choices=list(SWEEPABLE),
                         help="parameter to sweep")
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated values for the swept parameter")
    p_sweep.add_argument("--sweep-seeds", dest="sweep_seeds", type=int, default=3,
                         help="seeds per value (default 3)")
    p_sweep.set_defaults(func=cmd_sweep)

    p_check = sub.add_parser("density-check",
                             help="numerical self-test of the sphere densities")
    p_check.add_argument("--seed", type=int, help="randomization seed (default 0)")
    p_check.add_argument("--inject-prefactor-bug", action="store_true",
                         help="negative control: skew one density constant and "
                              "watch the checks fail")
    p_check.set_defaults(func=cmd_density_check)

    p_export = sub.add_parser("export-stream",
                              help="write the stream manifest and class proportions")
    _add_run_flags(p_export)
    p_export.set_defaults(func=cmd_export_stream)

    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except MalformedFileError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
