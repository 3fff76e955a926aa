"""Fully-connected spiking stacks: layers, encoding, loss, unrolled forward.

A model is a stack of blocks (linear -> optional batch-norm -> LIF) followed
by a linear classifier read out at every timestep; classification uses the
temporal mean of the per-timestep outputs. Two batch-norm flavours are
supported: ``tdbn`` pools statistics over time and batch jointly, ``spatial``
normalizes each timestep over the batch independently.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace

import numpy as np

from .neuron import NeuronParams, init_state, lif_step, lif_step_soft
from .tensor import DenseArray, RngState, asarray, matmul, randn

BN_MODES = ("tdbn", "spatial")

CHECKPOINT_MAGIC = b"RBP1"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# layers and model


@dataclass
class LinearLayer:
    weight: DenseArray  # [out, in]
    bias: DenseArray | None = None  # [out]


@dataclass
class BNLayer:
    gamma: DenseArray
    beta: DenseArray
    mode: str
    eps: float = 1e-5
    momentum: float = 0.9  # retention factor for running statistics
    mu_run: DenseArray = None
    var_run: DenseArray = None

    def __post_init__(self):
        if self.mode not in BN_MODES:
            raise ValueError(f"unknown bn mode {self.mode!r}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.mu_run is None:
            self.mu_run = np.zeros_like(self.gamma)
        if self.var_run is None:
            self.var_run = np.ones_like(self.gamma)


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description: widths, timesteps, neuron and BN settings."""

    in_features: int
    hidden: tuple[int, ...]
    n_classes: int
    T: int
    neuron: NeuronParams = NeuronParams()
    bn: str | None = None  # None, "tdbn" or "spatial"
    bias: bool = False

    def __post_init__(self):
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if len(self.hidden) < 1:
            raise ValueError("at least one hidden layer is required")
        if self.bn is not None and self.bn not in BN_MODES:
            raise ValueError(f"unknown bn mode {self.bn!r}")


@dataclass
class Block:
    linear: LinearLayer
    bn: BNLayer | None = None


@dataclass
class Model:
    spec: ModelSpec
    blocks: list[Block]
    classifier: LinearLayer

    def parameters(self) -> dict[str, DenseArray]:
        """Trainable arrays keyed by '<block>.<kind>' / 'classifier.<kind>'."""
        params: dict[str, DenseArray] = {}
        for i, blk in enumerate(self.blocks):
            params[f"{i}.weight"] = blk.linear.weight
            if blk.linear.bias is not None:
                params[f"{i}.bias"] = blk.linear.bias
            if blk.bn is not None:
                params[f"{i}.gamma"] = blk.bn.gamma
                params[f"{i}.beta"] = blk.bn.beta
        params["classifier.weight"] = self.classifier.weight
        if self.classifier.bias is not None:
            params["classifier.bias"] = self.classifier.bias
        return params

    def with_timesteps(self, T: int) -> "Model":
        """Same parameters viewed under a different simulation length."""
        return Model(spec=replace(self.spec, T=T), blocks=self.blocks, classifier=self.classifier)


def init_model(spec: ModelSpec, rng: RngState) -> Model:
    """He-style init: weight std sqrt(2 / fan_in), biases and beta at zero."""
    widths = (spec.in_features,) + spec.hidden
    blocks = []
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        w = randn(rng.derive(i), (fan_out, fan_in)) * np.sqrt(2.0 / fan_in)
        lin = LinearLayer(weight=w, bias=np.zeros(fan_out) if spec.bias else None)
        bn = None
        if spec.bn is not None:
            bn = BNLayer(gamma=np.ones(fan_out), beta=np.zeros(fan_out), mode=spec.bn)
        blocks.append(Block(linear=lin, bn=bn))
    w = randn(rng.derive(len(blocks)), (spec.n_classes, widths[-1])) * np.sqrt(2.0 / widths[-1])
    classifier = LinearLayer(weight=w, bias=np.zeros(spec.n_classes) if spec.bias else None)
    return Model(spec=spec, blocks=blocks, classifier=classifier)


@dataclass
class Batch:
    """One mini-batch: intensities in [0, 1] and integer class labels."""

    x: DenseArray  # [B, F]
    y: np.ndarray  # [B] ints in [0, n_classes)
    n_classes: int

    def __post_init__(self):
        if not np.all(np.isfinite(self.x)):
            raise ValueError("non-finite batch inputs")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ValueError(f"labels outside [0, {self.n_classes})")


# ---------------------------------------------------------------------------
# encoding and loss


def direct_encode(x: DenseArray, T: int) -> DenseArray:
    """Replicate the input along a leading time axis (same frame at every t)."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    x = asarray(x)
    return np.repeat(x[None, :, :], T, axis=0)


def ce_loss(mean_logits: DenseArray, labels) -> tuple[float, DenseArray]:
    """Softmax cross-entropy averaged over the batch.

    Returns (loss, dloss) where dloss is the exact gradient with respect to
    the logits: (softmax - onehot) / batch_size.
    """
    logits = asarray(mean_logits)
    labels = np.asarray(labels)
    b = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    sez = ez.sum(axis=1, keepdims=True)
    nll = np.log(sez[:, 0]) - z[np.arange(b), labels]
    loss = float(nll.mean())
    d = ez / sez
    d[np.arange(b), labels] -= 1.0
    return loss, d / b


# ---------------------------------------------------------------------------
# batch normalization


@dataclass
class TdbnStats:
    """Forward-pass record for time-pooled BN (statistics over all (t, b))."""

    xhat: DenseArray  # [T,B,F]
    inv: DenseArray  # [F], 1/sqrt(var + eps)
    mu: DenseArray  # [F]
    var: DenseArray  # [F]


@dataclass
class SpatialStats:
    """Forward-pass record for one timestep of per-step BN."""

    xhat: DenseArray  # [B,F]
    inv: DenseArray  # [F]
    mu: DenseArray  # [F]
    var: DenseArray  # [F]


def _update_running(layer: BNLayer, mu, var):
    m = layer.momentum
    layer.mu_run = m * layer.mu_run + (1.0 - m) * mu
    layer.var_run = m * layer.var_run + (1.0 - m) * var


def tdbn_forward(I: DenseArray, layer: BNLayer, training: bool = True) -> tuple[DenseArray, TdbnStats]:
    """Normalize [T,B,F] currents with per-feature stats pooled over (t, b)."""
    if layer.mode != "tdbn":
        raise ValueError(f"tdbn_forward called on mode {layer.mode!r}")
    if I.ndim != 3 or I.shape[0] * I.shape[1] < 2:
        raise ValueError(f"need [T,B,F] input with T*B >= 2, got shape {I.shape}")
    mu = I.mean(axis=(0, 1))
    var = I.var(axis=(0, 1))
    inv = 1.0 / np.sqrt(var + layer.eps)
    xhat = (I - mu) * inv
    out = layer.gamma * xhat + layer.beta
    if training:
        _update_running(layer, mu, var)
    return out, TdbnStats(xhat=xhat, inv=inv, mu=mu, var=var)


def spatialbn_step(I_t: DenseArray, layer: BNLayer, training: bool = True) -> tuple[DenseArray, SpatialStats]:
    """Normalize one timestep [B,F] with per-feature batch statistics."""
    if layer.mode != "spatial":
        raise ValueError(f"spatialbn_step called on mode {layer.mode!r}")
    if I_t.ndim != 2 or I_t.shape[0] < 2:
        raise ValueError(f"need [B,F] input with B >= 2, got shape {I_t.shape}")
    mu = I_t.mean(axis=0)
    var = I_t.var(axis=0)
    inv = 1.0 / np.sqrt(var + layer.eps)
    xhat = (I_t - mu) * inv
    out = layer.gamma * xhat + layer.beta
    if training:
        _update_running(layer, mu, var)
    return out, SpatialStats(xhat=xhat, inv=inv, mu=mu, var=var)


def bn_eval(I: DenseArray, layer: BNLayer) -> DenseArray:
    """Inference-mode BN: affine map from running statistics."""
    inv = 1.0 / np.sqrt(layer.var_run + layer.eps)
    return layer.gamma * (I - layer.mu_run) * inv + layer.beta


# ---------------------------------------------------------------------------
# unrolled forward


@dataclass
class LayerRecord:
    """Everything the backward pass needs for one block, all timesteps."""

    u: DenseArray  # [T,B,F]
    s: DenseArray  # [T,B,F]
    bn_xhat: DenseArray | None = None  # [T,B,F]
    bn_inv: DenseArray | None = None  # [F] for tdbn, [T,F] for spatial


@dataclass
class ActivationCache:
    """Per-timestep activations retained by the unrolled forward for BPTT."""

    encoded: DenseArray  # [T,B,F0]
    layers: list[LayerRecord]
    outputs: DenseArray  # [T,B,C]
    soft: bool = False

    def presyn(self, layer_index: int) -> DenseArray:
        """Presynaptic train feeding block `layer_index` (input for block 0)."""
        if layer_index == 0:
            return self.encoded
        return self.layers[layer_index - 1].s

    def byte_size(self) -> int:
        """Exact payload bytes of all retained arrays (not process RSS)."""
        total = self.encoded.nbytes + self.outputs.nbytes
        for rec in self.layers:
            total += rec.u.nbytes + rec.s.nbytes
            if rec.bn_xhat is not None:
                total += rec.bn_xhat.nbytes + rec.bn_inv.nbytes
        return total


def linear_apply(layer: LinearLayer, x: DenseArray) -> DenseArray:
    out = matmul(x, layer.weight.T)
    if layer.bias is not None:
        out = out + layer.bias
    return out


def model_forward_bptt(
    model: Model,
    encoded: DenseArray,
    training: bool = True,
    spike_mode: str = "binary",
) -> tuple[DenseArray, ActivationCache]:
    """Full unrolled forward pass; caches every per-timestep activation.

    Returns (outputs, cache) where outputs[t] = classifier(s_t of last block).
    In "soft" mode the hard threshold is replaced by its logistic relaxation,
    which makes the whole computation differentiable.
    """
    spec = model.spec
    T = spec.T
    if spike_mode not in ("binary", "soft"):
        raise ValueError(f"unknown spike mode {spike_mode!r}")
    encoded = asarray(encoded)
    if encoded.ndim != 3 or encoded.shape[0] != T:
        raise ValueError(f"encoded input must be [T={T}, B, F], got shape {encoded.shape}")
    step = lif_step if spike_mode == "binary" else lif_step_soft

    x = encoded
    records: list[LayerRecord] = []
    for li, blk in enumerate(model.blocks):
        try:
            cur = np.stack([linear_apply(blk.linear, x[t]) for t in range(T)])
        except ValueError as err:
            raise ValueError(f"layer {li}: {err}") from err
        bn_xhat = bn_inv = None
        if blk.bn is not None:
            if blk.bn.mode == "tdbn":
                cur, stats = tdbn_forward(cur, blk.bn, training=training)
                bn_xhat, bn_inv = stats.xhat, stats.inv
            else:
                outs, xh, invs = [], [], []
                for t in range(T):
                    o, st = spatialbn_step(cur[t], blk.bn, training=training)
                    outs.append(o)
                    xh.append(st.xhat)
                    invs.append(st.inv)
                cur = np.stack(outs)
                bn_xhat = np.stack(xh)
                bn_inv = np.stack(invs)
        state = init_state(cur.shape[1:])
        us, ss = [], []
        for t in range(T):
            state = step(state, cur[t], spec.neuron)
            us.append(state.u)
            ss.append(state.s)
        records.append(LayerRecord(u=np.stack(us), s=np.stack(ss), bn_xhat=bn_xhat, bn_inv=bn_inv))
        x = records[-1].s
    try:
        outputs = np.stack([linear_apply(model.classifier, x[t]) for t in range(T)])
    except ValueError as err:
        raise ValueError(f"classifier layer: {err}") from err
    cache = ActivationCache(encoded=encoded, layers=records, outputs=outputs, soft=spike_mode == "soft")
    return outputs, cache


def forward_eval(
    model: Model,
    encoded: DenseArray,
    shuffle_rng: np.random.Generator | None = None,
    shuffle_deeper: bool = False,
) -> DenseArray:
    """Inference forward: running BN statistics, no cache.

    When `shuffle_rng` is given, the time axis of the network input is
    permuted independently per (sample, neuron) before the first layer;
    `shuffle_deeper` additionally permutes every block's spike train before
    it feeds the next linear layer. Permutations preserve per-neuron counts.
    """
    spec = model.spec
    T = spec.T
    encoded = asarray(encoded)
    if encoded.shape[0] != T:
        raise ValueError(f"encoded input must have time extent {T}, got {encoded.shape[0]}")
    x = encoded
    if shuffle_rng is not None:
        x = permute_time(x, shuffle_rng)
    for blk in model.blocks:
        cur = np.stack([linear_apply(blk.linear, x[t]) for t in range(T)])
        if blk.bn is not None:
            cur = bn_eval(cur, blk.bn)
        state = init_state(cur.shape[1:])
        ss = []
        for t in range(T):
            state = lif_step(state, cur[t], spec.neuron)
            ss.append(state.s)
        x = np.stack(ss)
        if shuffle_rng is not None and shuffle_deeper:
            x = permute_time(x, shuffle_rng)
    return np.stack([linear_apply(model.classifier, x[t]) for t in range(T)])


def permute_time(train: DenseArray, rng: np.random.Generator) -> DenseArray:
    """Independently permute the time axis of every (sample, neuron) series."""
    keys = rng.random(train.shape)
    order = np.argsort(keys, axis=0)
    return np.take_along_axis(train, order, axis=0)


# ---------------------------------------------------------------------------
# checkpoint container: magic "RBP1", JSON header, then raw float64-LE arrays


def save_model(model: Model, path) -> None:
    spec = model.spec
    entries: list[tuple[str, DenseArray]] = []
    for name, arr in model.parameters().items():
        entries.append((name, arr))
    for i, blk in enumerate(model.blocks):
        if blk.bn is not None:
            entries.append((f"{i}.mu_run", blk.bn.mu_run))
            entries.append((f"{i}.var_run", blk.bn.var_run))
    header = {
        "version": CHECKPOINT_VERSION,
        "spec": {
            "in_features": spec.in_features,
            "hidden": list(spec.hidden),
            "n_classes": spec.n_classes,
            "T": spec.T,
            "bn": spec.bn,
            "bias": spec.bias,
            "v_th": spec.neuron.v_th,
            "lam": spec.neuron.lam,
            "alpha": spec.neuron.alpha,
        },
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in entries],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for _, arr in entries:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path) -> Model:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        if header["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header['version']}")
        arrays: dict[str, DenseArray] = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(8 * count)
            if len(buf) != 8 * count:
                raise ValueError(f"truncated checkpoint payload at array {entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
    s = header["spec"]
    spec = ModelSpec(
        in_features=s["in_features"],
        hidden=tuple(s["hidden"]),
        n_classes=s["n_classes"],
        T=s["T"],
        neuron=NeuronParams(v_th=s["v_th"], lam=s["lam"], alpha=s["alpha"]),
        bn=s["bn"],
        bias=s["bias"],
    )
    blocks = []
    for i in range(len(spec.hidden)):
        lin = LinearLayer(weight=arrays[f"{i}.weight"], bias=arrays.get(f"{i}.bias"))
        bn = None
        if spec.bn is not None:
            bn = BNLayer(
                gamma=arrays[f"{i}.gamma"],
                beta=arrays[f"{i}.beta"],
                mode=spec.bn,
                mu_run=arrays[f"{i}.mu_run"],
                var_run=arrays[f"{i}.var_run"],
            )
        blocks.append(Block(linear=lin, bn=bn))
    classifier = LinearLayer(weight=arrays["classifier.weight"], bias=arrays.get("classifier.bias"))
    return Model(spec=spec, blocks=blocks, classifier=classifier)
