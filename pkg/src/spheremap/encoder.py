"""A small differentiable encoder with hand-derived reverse-mode gradients.

The network is a trunk (representation layers) followed by a projection
head, ending in row-wise L2 normalization onto the sphere.  Training uses
the full network output z; inference drops the head and uses the trunk
representation h, so anything done to the head after training cannot
affect evaluation.

Layers are described as tuples: ("dense", in_dim, out_dim), ("relu",),
("l2norm",).  The forward pass returns a tape of intermediates consumed
exactly once by the matching backward pass; parameter updates invalidate
outstanding tapes.

Normalization backward: with n = ||zhat|| and z = zhat / max(n, 1e-8),
the Jacobian for n above the floor is (I - z z') / n, so gradients
parallel to z are annihilated.  Below the floor the map is linear with
slope 1/1e-8 (degenerate inputs stay finite).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NetworkSpec",
    "mlp_spec",
    "Encoder",
    "AdamState",
    "adam_step",
    "save_checkpoint",
    "load_checkpoint",
]

_NORM_FLOOR = 1e-8
_CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    """Layer list plus the index where the trunk ends and the head begins."""

    layers: tuple
    split: int

    def __post_init__(self):
        layers = tuple(tuple(l) for l in self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers or layers[-1] != ("l2norm",):
            raise ValueError("final layer must be ('l2norm',)")
        if not 0 < self.split < len(layers):
            raise ValueError("split must cut the layer list in two non-empty parts")
        width = None
        for layer in layers:
            if layer[0] == "dense":
                _, din, dout = layer
                if din < 1 or dout < 1:
                    raise ValueError(f"bad dense dims {layer}")
                if width is not None and din != width:
                    raise ValueError(f"dense input {din} does not match previous width {width}")
                width = dout
            elif layer[0] in ("relu", "l2norm"):
                if len(layer) != 1:
                    raise ValueError(f"layer {layer} takes no arguments")
            else:
                raise ValueError(f"unknown layer kind {layer[0]!r}")

    @property
    def input_dim(self) -> int:
        return next(l[1] for l in self.layers if l[0] == "dense")

    @property
    def output_dim(self) -> int:
        return next(l[2] for l in reversed(self.layers) if l[0] == "dense")

    @property
    def trunk_dim(self) -> int:
        return next(l[2] for l in reversed(self.layers[: self.split]) if l[0] == "dense")


def mlp_spec(input_dim: int, trunk: tuple, head: tuple, out_dim: int) -> NetworkSpec:
    """ReLU MLP spec: trunk widths, then head widths, then normalized output.

    Every trunk layer (including the last one before the head) is
    ReLU-activated; head hidden layers are ReLU-activated and the final
    projection feeds the normalization.
    """
    if not trunk:
        raise ValueError("trunk needs at least one layer")
    layers = []
    width = input_dim
    for w in trunk:
        layers += [("dense", width, w), ("relu",)]
        width = w
    split = len(layers)
    for w in head:
        layers += [("dense", width, w), ("relu",)]
        width = w
    layers += [("dense", width, out_dim), ("l2norm",)]
    return NetworkSpec(tuple(layers), split)


@dataclass
class Tape:
    """Intermediates of one forward pass, tied to a parameter version."""

    version: int
    saved: list = field(default_factory=list)
    batch: int = 0


class Encoder:
    """MLP encoder with explicit forward/backward passes.

    Parameters are kept in a flat dict {"W0": ..., "b0": ...} indexed by
    dense-layer position.  A forward pass on a frozen encoder is
    thread-safe; forward/backward/update cycles are single-owner.
    """

    def __init__(self, spec: NetworkSpec, seed=0):
        self.spec = spec
        self.params: dict[str, np.ndarray] = {}
        self._version = 0
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        for idx, layer in enumerate(spec.layers):
            if layer[0] != "dense":
                continue
            _, din, dout = layer
            bound = np.sqrt(6.0 / din)
            self.params[f"W{idx}"] = rng.uniform(-bound, bound, size=(din, dout))
            self.params[f"b{idx}"] = np.zeros(dout)

    def forward(self, x: np.ndarray):
        """Run the network; returns (z, h, tape).

        z : (b, out_dim) unit rows (full network)
        h : (b, trunk_dim) trunk representations (used at evaluation time)
        """
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise ValueError(
                f"input must be (b, {self.spec.input_dim}), got {x.shape}"
            )
        tape = Tape(version=self._version, batch=x.shape[0])
        h = None
        out = x
        for idx, layer in enumerate(self.spec.layers):
            if layer[0] == "dense":
                tape.saved.append(("dense", idx, out))
                out = out @ self.params[f"W{idx}"] + self.params[f"b{idx}"]
            elif layer[0] == "relu":
                tape.saved.append(("relu", idx, out))
                out = np.maximum(out, 0.0)
            else:  # l2norm
                norms = np.linalg.norm(out, axis=1)
                denom = np.maximum(norms, _NORM_FLOOR)
                z = out / denom[:, None]
                tape.saved.append(("l2norm", idx, (z, norms, denom)))
                out = z
            if idx == self.spec.split - 1:
                h = out
        return out, h, tape

    def trunk_forward(self, x: np.ndarray) -> np.ndarray:
        """Trunk representations h only (inference path, head dropped)."""
        x = np.asarray(x, dtype=float)
        out = x
        for idx, layer in enumerate(self.spec.layers[: self.spec.split]):
            if layer[0] == "dense":
                out = out @ self.params[f"W{idx}"] + self.params[f"b{idx}"]
            elif layer[0] == "relu":
                out = np.maximum(out, 0.0)
        return out

    def backward(self, tape: Tape, grad_z: np.ndarray) -> dict[str, np.ndarray]:
        """Exact reverse-mode gradients of sum(grad_z * z) wrt parameters."""
        if tape.version != self._version:
            raise ValueError("stale tape: parameters changed since the forward pass")
        grad_z = np.asarray(grad_z, dtype=float)
        if grad_z.shape[0] != tape.batch:
            raise ValueError("grad batch does not match the taped forward pass")
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        g = grad_z
        for kind, idx, saved in reversed(tape.saved):
            if kind == "l2norm":
                z, norms, denom = saved
                radial = np.einsum("ij,ij->i", z, g)
                above = norms >= _NORM_FLOOR
                g = np.where(above[:, None],
                             (g - z * radial[:, None]) / denom[:, None],
                             g / _NORM_FLOOR)
            elif kind == "relu":
                g = g * (saved > 0.0)
            else:  # dense
                grads[f"W{idx}"] = saved.T @ g
                grads[f"b{idx}"] = g.sum(axis=0)
                g = g @ self.params[f"W{idx}"].T
        return grads

    def bump_version(self):
        """Invalidate outstanding tapes (called after parameter updates)."""
        self._version += 1


@dataclass
class AdamState:
    """First/second moment accumulators and step counter for Adam."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """One standard Adam update with bias correction; mutates params."""
    if state.step == 0:
        state.m = {k: np.zeros_like(p) for k, p in params.items()}
        state.v = {k: np.zeros_like(p) for k, p in params.items()}
    if set(grads) != set(params):
        raise ValueError("gradient keys do not match parameter keys")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {key}")
        state.m[key] = state.beta1 * state.m[key] + (1.0 - state.beta1) * g
        state.v[key] = state.beta2 * state.v[key] + (1.0 - state.beta2) * g * g
        m_hat = state.m[key] / bc1
        v_hat = state.v[key] / bc2
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


def save_checkpoint(encoder: Encoder, path, extra_meta: dict | None = None):
    """Write the encoder to a versioned .npz container.

    Layout: key "meta" holds a JSON string with {version, layers, split}
    plus any extra metadata (the CLI stores the resolved run config here);
    each dense layer idx contributes row-major arrays "W{idx}" and
    "b{idx}".  See the README for the format contract.
    """
    meta = json.dumps({
        "version": _CHECKPOINT_VERSION,
        "layers": [list(l) for l in encoder.spec.layers],
        "split": encoder.spec.split,
        **(extra_meta or {}),
    })
    arrays = {k: np.ascontiguousarray(v) for k, v in encoder.params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.frombuffer(meta.encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path) -> Encoder:
    """Load an encoder written by `save_checkpoint`."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("version") != _CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        spec = NetworkSpec(tuple(tuple(l) for l in meta["layers"]), meta["split"])
        enc = Encoder(spec, seed=0)
        for key in enc.params:
            enc.params[key] = np.array(data[key])
    return enc
