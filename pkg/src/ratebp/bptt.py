"""Exact surrogate-gradient reverse pass through the unrolled spiking graph.

Within one block the membrane-potential gradient obeys the reverse-time
recursion

    du_t = (ds_t - lam * v_th * du_{t+1}) * g_t + lam * du_{t+1},   du_{T+1} = 0

where ds_t is the spatial gradient arriving from the layer above at timestep
t and g_t is the surrogate derivative at u_t. The lam * v_th coupling is the
derivative of the subtraction reset; `detach_reset` drops it for ablations.
Weight gradients accumulate du_t (flowed through BN where present) against
the presynaptic trains over all timesteps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .neuron import NeuronParams, surrogate_grad
from .network import ActivationCache, BNLayer, LayerRecord, Model, matmul
from .tensor import DenseArray

# parameter gradients keyed exactly like Model.parameters()
GradientSet = dict[str, np.ndarray]


@dataclass
class BpttInternals:
    """Optional instrumentation mirroring the forward arrays.

    delta_s[l][t]: spatial-only gradient arriving at s_t of block l from the
    layer above. delta_I[l][t]: total gradient at the block's input current
    I_t (before BN when the block has one).
    """

    delta_s: list[DenseArray]
    delta_I: list[DenseArray]


def lif_backward_recursion(
    ds: DenseArray, u: DenseArray, p: NeuronParams, detach_reset: bool = False
) -> DenseArray:
    """Reverse-time membrane gradients for one block.

    ds, u: [T, ...] spatial gradients and cached potentials. Returns du with
    the same shape.
    """
    T = ds.shape[0]
    g = surrogate_grad(u - p.v_th, p.alpha)
    du = np.zeros(ds.shape[1:])
    out = np.empty_like(ds)
    for t in range(T - 1, -1, -1):
        if detach_reset:
            du = ds[t] * g[t] + p.lam * du
        else:
            du = (ds[t] - p.lam * p.v_th * du) * g[t] + p.lam * du
        out[t] = du
    return out


def _tdbn_backward(d_post: DenseArray, rec: LayerRecord, bn: BNLayer):
    # statistics pooled over (t, b); standard BN backward with N = T*B
    xhat, inv = rec.bn_xhat, rec.bn_inv
    dgamma = (d_post * xhat).sum(axis=(0, 1))
    dbeta = d_post.sum(axis=(0, 1))
    dxhat = d_post * bn.gamma
    m1 = dxhat.mean(axis=(0, 1))
    m2 = (dxhat * xhat).mean(axis=(0, 1))
    dI = inv * (dxhat - m1 - xhat * m2)
    return dI, dgamma, dbeta


def _spatial_backward(d_post: DenseArray, rec: LayerRecord, bn: BNLayer):
    # independent batch statistics at every timestep
    xhat, inv = rec.bn_xhat, rec.bn_inv
    dgamma = (d_post * xhat).sum(axis=(0, 1))
    dbeta = d_post.sum(axis=(0, 1))
    dxhat = d_post * bn.gamma
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dI = inv[:, None, :] * (dxhat - m1 - xhat * m2)
    return dI, dgamma, dbeta


def bptt_backward(
    model: Model,
    cache: ActivationCache,
    dloss: DenseArray,
    instrument: bool = False,
    detach_reset: bool = False,
) -> tuple[GradientSet, BpttInternals | None]:
    """Gradients of the mean-output loss for every trainable parameter.

    `dloss` is the loss gradient with respect to the temporal mean of the
    outputs, shape [B, C]. The cache must come from `model_forward_bptt` on
    the same model.
    """
    spec = model.spec
    T = spec.T
    if len(cache.layers) != len(model.blocks):
        raise ValueError(
            f"cache has {len(cache.layers)} layer records for {len(model.blocks)} blocks"
        )
    for li, rec in enumerate(cache.layers):
        if rec.u.shape[0] != T:
            raise ValueError(f"layer {li}: cache time extent {rec.u.shape[0]} != T={T}")

    grads: GradientSet = {}
    d_out = dloss / T  # dL/do_t, identical at every timestep
    sL = cache.layers[-1].s
    grads["classifier.weight"] = matmul(d_out.T, sL.sum(axis=0))
    if model.classifier.bias is not None:
        grads["classifier.bias"] = dloss.sum(axis=0)

    # spatial gradients into the top block's spikes: constant in t
    ds = np.repeat(matmul(d_out, model.classifier.weight)[None], T, axis=0)

    internals = BpttInternals(delta_s=[None] * len(model.blocks), delta_I=[None] * len(model.blocks))
    for li in range(len(model.blocks) - 1, -1, -1):
        blk = model.blocks[li]
        rec = cache.layers[li]
        du = lif_backward_recursion(ds, rec.u, spec.neuron, detach_reset=detach_reset)
        if blk.bn is not None:
            if blk.bn.mode == "tdbn":
                dI, dgamma, dbeta = _tdbn_backward(du, rec, blk.bn)
            else:
                dI, dgamma, dbeta = _spatial_backward(du, rec, blk.bn)
            grads[f"{li}.gamma"] = dgamma
            grads[f"{li}.beta"] = dbeta
        else:
            dI = du
        if instrument:
            internals.delta_s[li] = ds
            internals.delta_I[li] = dI
        presyn = cache.presyn(li)
        f_out, f_in = blk.linear.weight.shape
        b = dloss.shape[0]
        flat_dI = dI.reshape(T * b, f_out)
        grads[f"{li}.weight"] = matmul(flat_dI.T, presyn.reshape(T * b, f_in))
        if blk.linear.bias is not None:
            grads[f"{li}.bias"] = dI.sum(axis=(0, 1))
        ds = matmul(flat_dI, blk.linear.weight).reshape(T, b, f_in)

    return grads, (internals if instrument else None)


# ---------------------------------------------------------------------------
# optimizer


def sgd_update(
    params: dict[str, DenseArray],
    grads: GradientSet,
    lr: float,
    momentum: float = 0.9,
    weight_decay: float = 0.0,
    velocity: dict[str, DenseArray] | None = None,
) -> dict[str, DenseArray]:
    """In-place SGD step: v <- m*v + g + wd*p; p <- p - lr*v. Returns v."""
    if not lr > 0:
        raise ValueError(f"lr must be positive, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise ValueError(f"momentum must be in [0, 1), got {momentum}")
    if velocity is None:
        velocity = {k: np.zeros_like(p) for k, p in params.items()}
    for key, p in params.items():
        g = grads[key]
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for parameter {key!r}; step aborted")
        v = velocity[key]
        v *= momentum
        v += g
        if weight_decay:
            v += weight_decay * p
        p -= lr * v
    return velocity


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """Cosine annealing from lr0 at step 0 down to 0 at total_steps."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr0 * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0
