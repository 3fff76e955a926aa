"""Rate-based gradients: forward-time eligibility traces, spatial-only backward.

The spiking forward pass is exactly the one BPTT sees, but instead of caching
per-timestep activations each block keeps three per-neuron traces:

    rho_t = 1 + rho_{t-1} * (lam - lam * v_th * g'_{t-1})        (rho_1 = 1)
    g_t   = running temporal mean of  g'_t * rho_t
    e_t   = running temporal mean of the spikes (exact: kept as count / t)

where g'_t is the surrogate derivative at u_t. After T steps e_T is the
firing rate r and g_T estimates dr/dc, the sensitivity of the rate to the
layer's average input current c = E_t[I_t]. The backward pass is then a
single sweep over layers with no time loop:

    dr^l = dc^{l+1} @ W^{l+1};  dc^l = dr^l * g_T^l;  dW^l = dc^l^T @ r^{l-1}

Two schedules produce identical traces for BN-free stacks: "rate_m" runs the
time loop inside each layer (pairs with tdbn), "rate_s" runs it outside
(pairs with per-step spatial BN).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .bptt import GradientSet
from .neuron import NeuronParams, init_state, lif_step, surrogate_grad
from .network import (
    BNLayer,
    Model,
    linear_apply,
    matmul,
    spatialbn_step,
    tdbn_forward,
)
from .tensor import DenseArray

RATE_MODES = ("rate_m", "rate_s")
SPATIAL_BN_RATE_MODES = ("exact", "diagonal")


# ---------------------------------------------------------------------------
# per-layer traces


@dataclass
class LayerTraces:
    """Per-neuron running state after `t` timesteps.

    `e` is held exactly as spike_sum / t so that e_T reproduces the temporal
    spike mean bit-for-bit; `g` uses the running-mean recurrence; `surr_prev`
    is the surrogate derivative at the previous potential, consumed by the
    next rho update.
    """

    e: DenseArray
    rho: DenseArray
    g: DenseArray
    t: int
    spike_sum: DenseArray
    surr_prev: DenseArray


def init_traces(shape) -> LayerTraces:
    z = np.zeros(shape)
    return LayerTraces(e=z, rho=z, g=z, t=0, spike_sum=z, surr_prev=z)


def trace_update(traces: LayerTraces, u_t: DenseArray, s_t: DenseArray, p: NeuronParams) -> LayerTraces:
    """Advance the eligibility traces by one timestep."""
    if u_t.shape != traces.e.shape or s_t.shape != traces.e.shape:
        raise ValueError(
            f"trace state mismatch: traces {traces.e.shape} at step {traces.t}, "
            f"update arrays {u_t.shape}/{s_t.shape}"
        )
    t = traces.t + 1
    if t == 1:
        rho = np.ones_like(u_t)
    else:
        rho = 1.0 + traces.rho * (p.lam - p.lam * p.v_th * traces.surr_prev)
    surr = surrogate_grad(u_t - p.v_th, p.alpha)
    spike_sum = traces.spike_sum + s_t
    e = spike_sum / t
    g = ((t - 1) * traces.g + surr * rho) / t
    return LayerTraces(e=e, rho=rho, g=g, t=t, spike_sum=spike_sum, surr_prev=surr)


# ---------------------------------------------------------------------------
# BN rate-side state


@dataclass
class TdbnRateTrace:
    """Backward state for time-pooled BN on the rate path.

    The normalizer keeps its forward value 1/sqrt(var_global + eps) but is
    differentiated as a function of the batch statistics of c, so the
    backward is the standard batch formula evaluated with the global inv.
    """

    xhat_c: DenseArray  # [B,F], (c - mu) * inv
    inv: DenseArray  # [F]


@dataclass
class SpatialExactRateTrace:
    """Per-step normalized activations kept for the exact E[chi] backward."""

    xhat_t: DenseArray  # [T,B,F]
    inv_t: DenseArray  # [T,F]


@dataclass
class SpatialDiagRateTrace:
    """O(1) running means; drops the mu/sigma batch-coupling terms."""

    inv_mean: DenseArray  # [F]
    xhat_mean: DenseArray  # [B,F]


@dataclass
class RateLayerState:
    e: DenseArray  # r^l, [B,F]
    g: DenseArray  # E[varkappa_t], [B,F]
    bn: TdbnRateTrace | SpatialExactRateTrace | SpatialDiagRateTrace | None = None


@dataclass
class RateCache:
    """Finalized traces: what the spatial backward needs, nothing per-t.

    The only per-timestep arrays live in SpatialExactRateTrace entries (BN
    layers under the exact spatial mode); LIF/linear bookkeeping is a fixed
    number of arrays regardless of T.
    """

    input_rate: DenseArray  # r^0, [B,F0]
    layers: list[RateLayerState]
    T: int
    finalized: bool = True
    trace_seconds: float = 0.0

    @property
    def classifier_rate(self) -> DenseArray:
        return self.layers[-1].e

    def byte_size(self) -> int:
        total = self.input_rate.nbytes
        for st in self.layers:
            total += st.e.nbytes + st.g.nbytes
            if isinstance(st.bn, TdbnRateTrace):
                total += st.bn.xhat_c.nbytes + st.bn.inv.nbytes
            elif isinstance(st.bn, SpatialExactRateTrace):
                total += st.bn.xhat_t.nbytes + st.bn.inv_t.nbytes
            elif isinstance(st.bn, SpatialDiagRateTrace):
                total += st.bn.inv_mean.nbytes + st.bn.xhat_mean.nbytes
        return total

    def stored_array_count(self) -> int:
        """Number of retained arrays for LIF/linear layers (T-independent)."""
        return 1 + 2 * len(self.layers)


# ---------------------------------------------------------------------------
# forward


def rate_forward(
    model: Model,
    encoded: DenseArray,
    mode: str,
    spatial_bn_rate: str = "exact",
    collect_timing: bool = False,
    debug_check_traces: bool = False,
) -> tuple[DenseArray, RateCache]:
    """Spiking forward identical to `model_forward_bptt`, trace accumulation.

    Per-timestep activations are discarded once the traces absorb them: after
    each step in "rate_s", after each block's time loop in "rate_m". Returns
    the per-timestep outputs (bit-identical to the BPTT forward) and the
    finalized cache.
    """
    spec = model.spec
    T = spec.T
    if mode not in RATE_MODES:
        raise ValueError(f"unknown rate mode {mode!r}")
    if spatial_bn_rate not in SPATIAL_BN_RATE_MODES:
        raise ValueError(f"unknown spatial bn handling {spatial_bn_rate!r}")
    if spec.bn == "tdbn" and mode != "rate_m":
        raise ValueError("tdbn requires the rate_m schedule")
    if spec.bn == "spatial" and mode != "rate_s":
        raise ValueError("spatial bn requires the rate_s schedule")
    if encoded.ndim != 3 or encoded.shape[0] != T:
        raise ValueError(f"encoded input must be [T={T}, B, F], got shape {encoded.shape}")

    if mode == "rate_m":
        outputs, cache, spikes = _forward_multi_step(model, encoded, collect_timing, debug_check_traces)
    else:
        outputs, cache, spikes = _forward_single_step(
            model, encoded, spatial_bn_rate, collect_timing, debug_check_traces
        )

    if debug_check_traces:
        for li, s_stack in enumerate(spikes):
            exact = s_stack.mean(axis=0)
            if not np.array_equal(cache.layers[li].e, exact):
                raise AssertionError(f"layer {li}: e_T diverged from the exact temporal spike mean")
    return outputs, cache


def _forward_multi_step(model, encoded, collect_timing, keep_spikes):
    spec = model.spec
    T = spec.T
    p = spec.neuron
    clock = time.perf_counter
    trace_seconds = 0.0

    input_sum = np.zeros(encoded.shape[1:])
    for t in range(T):
        input_sum = input_sum + encoded[t]
    input_rate = input_sum / T

    x = encoded
    states: list[RateLayerState] = []
    debug_spikes = []
    for blk in model.blocks:
        cur = np.stack([linear_apply(blk.linear, x[t]) for t in range(T)])
        bn_trace = None
        if blk.bn is not None:  # tdbn: normalize with stats pooled over (t, b)
            pre_bn_sum = cur.sum(axis=0)
            cur, stats = tdbn_forward(cur, blk.bn, training=True)
            c = pre_bn_sum / T
            bn_trace = TdbnRateTrace(xhat_c=(c - stats.mu) * stats.inv, inv=stats.inv)
        state = init_state(cur.shape[1:])
        traces = init_traces(cur.shape[1:])
        ss = []
        for t in range(T):
            state = lif_step(state, cur[t], p)
            t0 = clock()
            traces = trace_update(traces, state.u, state.s, p)
            trace_seconds += clock() - t0
            ss.append(state.s)
        x = np.stack(ss)  # consumed by the next block, then dropped
        if keep_spikes:
            debug_spikes.append(x)
        states.append(RateLayerState(e=traces.e, g=traces.g, bn=bn_trace))
    outputs = np.stack([linear_apply(model.classifier, x[t]) for t in range(T)])
    cache = RateCache(input_rate=input_rate, layers=states, T=T, trace_seconds=trace_seconds if collect_timing else 0.0)
    return outputs, cache, debug_spikes


def _forward_single_step(model, encoded, spatial_bn_rate, collect_timing, keep_spikes):
    spec = model.spec
    T = spec.T
    p = spec.neuron
    n_blocks = len(model.blocks)
    clock = time.perf_counter
    trace_seconds = 0.0

    neuron_states = [None] * n_blocks
    traces: list[LayerTraces | None] = [None] * n_blocks
    bn_xhat: list[list] = [[] for _ in range(n_blocks)]
    bn_inv: list[list] = [[] for _ in range(n_blocks)]
    bn_inv_sum = [None] * n_blocks
    bn_xhat_sum = [None] * n_blocks
    input_sum = np.zeros(encoded.shape[1:])
    debug_spikes = [[] for _ in range(n_blocks)]

    out_ts = []
    for t in range(T):
        xt = encoded[t]
        input_sum = input_sum + xt
        for li, blk in enumerate(model.blocks):
            cur = linear_apply(blk.linear, xt)
            if blk.bn is not None:  # spatial: per-step batch statistics
                cur, stats = spatialbn_step(cur, blk.bn, training=True)
                if spatial_bn_rate == "exact":
                    bn_xhat[li].append(stats.xhat)
                    bn_inv[li].append(stats.inv)
                else:
                    bn_inv_sum[li] = stats.inv if bn_inv_sum[li] is None else bn_inv_sum[li] + stats.inv
                    bn_xhat_sum[li] = stats.xhat if bn_xhat_sum[li] is None else bn_xhat_sum[li] + stats.xhat
            if neuron_states[li] is None:
                neuron_states[li] = init_state(cur.shape)
                traces[li] = init_traces(cur.shape)
            neuron_states[li] = lif_step(neuron_states[li], cur, p)
            t0 = clock()
            traces[li] = trace_update(traces[li], neuron_states[li].u, neuron_states[li].s, p)
            trace_seconds += clock() - t0
            xt = neuron_states[li].s
            if keep_spikes:
                debug_spikes[li].append(xt)
        out_ts.append(linear_apply(model.classifier, xt))

    states = []
    for li, blk in enumerate(model.blocks):
        bn_trace = None
        if blk.bn is not None:
            if spatial_bn_rate == "exact":
                bn_trace = SpatialExactRateTrace(xhat_t=np.stack(bn_xhat[li]), inv_t=np.stack(bn_inv[li]))
            else:
                bn_trace = SpatialDiagRateTrace(inv_mean=bn_inv_sum[li] / T, xhat_mean=bn_xhat_sum[li] / T)
        states.append(RateLayerState(e=traces[li].e, g=traces[li].g, bn=bn_trace))
    cache = RateCache(
        input_rate=input_sum / T,
        layers=states,
        T=T,
        trace_seconds=trace_seconds if collect_timing else 0.0,
    )
    return np.stack(out_ts), cache, [np.stack(s) for s in debug_spikes] if keep_spikes else []


def rate_logits(model: Model, cache: RateCache) -> DenseArray:
    """Classifier applied to the firing rate: c^L = W^L r^L (+ bias)."""
    return linear_apply(model.classifier, cache.classifier_rate)


# ---------------------------------------------------------------------------
# backward


def _tdbn_rate_backward(dct: DenseArray, trace: TdbnRateTrace, bn: BNLayer):
    dgamma = (dct * trace.xhat_c).sum(axis=0)
    dbeta = dct.sum(axis=0)
    dxhat = dct * bn.gamma
    m1 = dxhat.mean(axis=0)
    m2 = (dxhat * trace.xhat_c).mean(axis=0)
    dc = trace.inv * (dxhat - m1 - trace.xhat_c * m2)
    return dc, dgamma, dbeta


def _spatial_exact_rate_backward(dct: DenseArray, trace: SpatialExactRateTrace, bn: BNLayer):
    # per-step full BN backward applied to the time-constant upstream
    # gradient, then averaged over t
    T = trace.xhat_t.shape[0]
    xhat_mean = trace.xhat_t.sum(axis=0) / T
    dgamma = (dct * xhat_mean).sum(axis=0)
    dbeta = dct.sum(axis=0)
    dxhat = dct * bn.gamma  # [B,F], same at every t
    m1 = dxhat.mean(axis=0)
    m2 = (dxhat[None] * trace.xhat_t).mean(axis=1)  # [T,F]
    per_t = trace.inv_t[:, None, :] * (dxhat[None] - m1 - trace.xhat_t * m2[:, None, :])
    return per_t.sum(axis=0) / T, dgamma, dbeta


def _spatial_diag_rate_backward(dct: DenseArray, trace: SpatialDiagRateTrace, bn: BNLayer):
    dgamma = (dct * trace.xhat_mean).sum(axis=0)
    dbeta = dct.sum(axis=0)
    dc = dct * bn.gamma * trace.inv_mean
    return dc, dgamma, dbeta


def rate_backward(model: Model, cache: RateCache, dloss: DenseArray) -> GradientSet:
    """One spatial sweep from the classifier down; no time loop.

    `dloss` is the loss gradient with respect to the rate logits c^L = W^L r^L,
    shape [B, C].
    """
    if not cache.finalized:
        raise ValueError("rate cache is not finalized")
    if len(cache.layers) != len(model.blocks):
        raise ValueError(
            f"cache has {len(cache.layers)} layer states for {len(model.blocks)} blocks"
        )
    grads: GradientSet = {}
    grads["classifier.weight"] = matmul(dloss.T, cache.classifier_rate)
    if model.classifier.bias is not None:
        grads["classifier.bias"] = dloss.sum(axis=0)
    dr = matmul(dloss, model.classifier.weight)
    for li in range(len(model.blocks) - 1, -1, -1):
        blk = model.blocks[li]
        st = cache.layers[li]
        dct = dr * st.g  # through the neuron via the mean estimator
        if blk.bn is not None:
            if isinstance(st.bn, TdbnRateTrace):
                dc, dgamma, dbeta = _tdbn_rate_backward(dct, st.bn, blk.bn)
            elif isinstance(st.bn, SpatialExactRateTrace):
                dc, dgamma, dbeta = _spatial_exact_rate_backward(dct, st.bn, blk.bn)
            else:
                dc, dgamma, dbeta = _spatial_diag_rate_backward(dct, st.bn, blk.bn)
            grads[f"{li}.gamma"] = dgamma
            grads[f"{li}.beta"] = dbeta
        else:
            dc = dct
        presyn_rate = cache.input_rate if li == 0 else cache.layers[li - 1].e
        grads[f"{li}.weight"] = matmul(dc.T, presyn_rate)
        if blk.linear.bias is not None:
            grads[f"{li}.bias"] = dc.sum(axis=0)
        dr = matmul(dc, blk.linear.weight)
    return grads
