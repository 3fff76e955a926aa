"""Empirical studies: temporal-independence metrics, shuffle robustness,
firing-rate statistics, and backward-phase cost profiling.

All cosines are computed over flattened whole-layer tensors, one scalar per
layer per mini-batch; distributions come from repeating over batches. Memory
numbers are exact bookkeeping of the arrays each trainer retains for its
backward pass, not allocator samples.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .bptt import bptt_backward
from .network import Model, ce_loss, direct_encode, forward_eval, model_forward_bptt
from .oracle import CompareReport, grad_compare, kappa_sums, temporal_jacobian
from .rate import rate_backward, rate_forward, rate_logits
from .tensor import DenseArray, RngState

COST_CSV_SCHEMA = "profile-v1"
RATES_CSV_SCHEMA = "rates-v1"


def default_rate_mode(model: Model) -> str:
    return "rate_s" if model.spec.bn == "spatial" else "rate_m"


# ---------------------------------------------------------------------------
# temporal-independence metrics


@dataclass
class LayerAssumption:
    cos_a1: float  # cos< E[ds_t * kappa_t], E[ds_t] * E[kappa_t] >
    rho_corr: float  # correlation of ds_t and kappa_t after temporal centering
    cos_a2: float  # cos< E[outer(dI_t, presyn_t)], outer(E[dI_t], E[presyn_t]) >


@dataclass
class AssumptionReport:
    layers: list[LayerAssumption]
    a3: CompareReport  # rate vs BPTT gradients on the same forward

    def as_dict(self) -> dict:
        return {
            "layers": [
                {"cos_a1": l.cos_a1, "rho_corr": l.rho_corr, "cos_a2": l.cos_a2}
                for l in self.layers
            ],
            "a3": self.a3.as_dict(),
        }


def _cos_flat(x: np.ndarray, y: np.ndarray) -> float:
    x = x.reshape(-1)
    y = y.reshape(-1)
    dxx = float(np.dot(x, x))
    dyy = float(np.dot(y, y))
    if dxx == 0.0 and dyy == 0.0:
        return 1.0
    if dxx == 0.0 or dyy == 0.0:
        return 0.0
    return float(np.clip(np.dot(x, y) / np.sqrt(dxx * dyy), -1.0, 1.0))


def centered_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Temporal correlation via the covariance formula.

    a, b: [T, ...]. Covariances/variances are taken elementwise over the time
    axis and pooled over the remaining axes; zero variance yields 0.
    """
    cov = (a * b).mean(axis=0) - a.mean(axis=0) * b.mean(axis=0)
    var_a = a.var(axis=0)
    var_b = b.var(axis=0)
    denom = float(np.sqrt(var_a.sum() * var_b.sum()))
    if denom == 0.0:
        return 0.0
    return float(np.clip(cov.sum() / denom, -1.0, 1.0))


def assumption_metrics(model: Model, x: DenseArray, y, spatial_bn_rate: str = "exact") -> AssumptionReport:
    """Instrumented BPTT + oracle kappa + simultaneous rate backward.

    Needs T >= 2: with a single timestep there are no temporal statistics.
    """
    spec = model.spec
    if spec.T < 2:
        raise ValueError("temporal statistics are undefined at T = 1")
    encoded = direct_encode(x, spec.T)
    outputs, cache = model_forward_bptt(model, encoded, training=True)
    _, dloss = ce_loss(outputs.mean(axis=0), y)
    grads_bptt, internals = bptt_backward(model, cache, dloss, instrument=True)

    _, rcache = rate_forward(model, encoded, default_rate_mode(model), spatial_bn_rate=spatial_bn_rate)
    _, dloss_rate = ce_loss(rate_logits(model, rcache), y)
    grads_rate = rate_backward(model, rcache, dloss_rate)
    a3 = grad_compare(grads_rate, grads_bptt)

    layers = []
    for li in range(len(model.blocks)):
        jac = temporal_jacobian(cache.layers[li].u, spec.neuron)
        _, kappa = kappa_sums(jac)  # row sums: inputs feeding each spike
        ds = internals.delta_s[li]
        d_in = internals.delta_I[li]
        presyn = cache.presyn(li)
        cos_a1 = _cos_flat((ds * kappa).mean(axis=0), ds.mean(axis=0) * kappa.mean(axis=0))
        rho = centered_correlation(ds, kappa)
        prod_mean = np.einsum("tbi,tbj->ij", d_in, presyn) / spec.T
        mean_prod = np.einsum("bi,bj->ij", d_in.mean(axis=0), presyn.mean(axis=0))
        cos_a2 = _cos_flat(prod_mean, mean_prod)
        layers.append(LayerAssumption(cos_a1=cos_a1, rho_corr=rho, cos_a2=cos_a2))
    return AssumptionReport(layers=layers, a3=a3)


# ---------------------------------------------------------------------------
# temporal shuffle robustness


def _accuracy(model: Model, images, labels, batch_size, rng=None, shuffle_deeper=False) -> float:
    n = len(labels)
    correct = 0
    for start in range(0, n, batch_size):
        xb = images[start : start + batch_size]
        yb = labels[start : start + batch_size]
        encoded = direct_encode(xb, model.spec.T)
        outputs = forward_eval(model, encoded, shuffle_rng=rng, shuffle_deeper=shuffle_deeper)
        pred = outputs.mean(axis=0).argmax(axis=1)
        correct += int((pred == yb).sum())
    return correct / n


def shuffle_eval(
    model: Model,
    images: DenseArray,
    labels,
    seed: int,
    batch_size: int = 256,
    shuffle_deeper: bool = False,
) -> tuple[float, float]:
    """Accuracy with and without per-neuron temporal shuffling of the input.

    The permutation is drawn per (sample, neuron) from `seed` and provably
    preserves every per-neuron spike count; by default only the network input
    is shuffled, `shuffle_deeper` extends it to every block boundary.
    """
    if model.spec.T < 2:
        raise ValueError("temporal shuffling is undefined at T = 1")
    acc_plain = _accuracy(model, images, labels, batch_size)
    rng = RngState(seed).gen
    acc_shuffled = _accuracy(model, images, labels, batch_size, rng=rng, shuffle_deeper=shuffle_deeper)
    return acc_plain, acc_shuffled


# ---------------------------------------------------------------------------
# firing-rate statistics


@dataclass
class FiringStats:
    per_layer_per_t: np.ndarray  # [L, T] mean spike rate over batch x features
    temporal_mean: np.ndarray  # [L]

    def to_csv_text(self) -> str:
        lines = [f"# schema={RATES_CSV_SCHEMA}", "layer,timestep,rate"]
        L, T = self.per_layer_per_t.shape
        for l in range(L):
            for t in range(T):
                lines.append(f"{l},{t},{self.per_layer_per_t[l, t]:.10g}")
        return "\n".join(lines) + "\n"


def firing_stats(model: Model, images: DenseArray, batch_size: int = 256) -> FiringStats:
    """Mean firing rate per layer per timestep over a dataset, and its
    temporal mean."""
    L = len(model.blocks)
    T = model.spec.T
    sums = np.zeros((L, T))
    weight = 0
    for start in range(0, len(images), batch_size):
        xb = images[start : start + batch_size]
        encoded = direct_encode(xb, T)
        _, cache = model_forward_bptt(model, encoded, training=False)
        b = xb.shape[0]
        for li in range(L):
            sums[li] += cache.layers[li].s.mean(axis=(1, 2)) * b
        weight += b
    rates = sums / weight
    return FiringStats(per_layer_per_t=rates, temporal_mean=rates.mean(axis=1))


# ---------------------------------------------------------------------------
# backward cost profiling


@dataclass
class CostRow:
    method: str
    T: int
    backward_seconds: float
    cache_bytes: int
    trace_seconds: float  # eligibility bookkeeping during forward; rate only


@dataclass
class CostProfile:
    rows: list[CostRow]

    def to_csv_text(self) -> str:
        lines = [
            f"# schema={COST_CSV_SCHEMA}",
            "method,timesteps,backward_seconds,cache_bytes,trace_seconds",
        ]
        for r in self.rows:
            lines.append(
                f"{r.method},{r.T},{r.backward_seconds:.6g},{r.cache_bytes},{r.trace_seconds:.6g}"
            )
        return "\n".join(lines) + "\n"


def profile_costs(
    model: Model,
    x: DenseArray,
    y,
    T_list: list[int],
    methods: list[str],
    repeats: int = 5,
) -> CostProfile:
    """Median backward wall time and exact cache bytes per (method, T).

    Runs single-threaded where the BLAS allows it. Timed repeats are
    interleaved across all (method, T) cells so a transient system slowdown
    lands in every cell's sample set instead of skewing one median; the same
    byte-accounting routine (sum of retained array payloads) serves both
    trainers.
    """
    if repeats < 5:
        raise ValueError("need at least 5 repeats")
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # ratios are unaffected by the thread count
        from contextlib import nullcontext

        threadpool_limits = lambda limits: nullcontext()  # noqa: E731

    clock = time.perf_counter
    with threadpool_limits(limits=1):
        tasks = []  # (method, T, backward closure, cache bytes, trace seconds)
        for T in T_list:
            m = model.with_timesteps(T)
            encoded = direct_encode(x, T)
            for method in methods:
                if method == "bptt":
                    outputs, cache = model_forward_bptt(m, encoded, training=True)
                    _, dloss = ce_loss(outputs.mean(axis=0), y)

                    def run(m=m, cache=cache, dloss=dloss):
                        bptt_backward(m, cache, dloss)

                    tasks.append((method, T, run, cache.byte_size(), 0.0))
                elif method in ("rate_m", "rate_s"):
                    trace_times = []
                    rcache = None
                    for _ in range(repeats + 1):  # first run is the warmup
                        _, rcache = rate_forward(m, encoded, method, collect_timing=True)
                        trace_times.append(rcache.trace_seconds)
                    _, dloss = ce_loss(rate_logits(m, rcache), y)

                    def run(m=m, rcache=rcache, dloss=dloss):
                        rate_backward(m, rcache, dloss)

                    tasks.append((method, T, run, rcache.byte_size(),
                                  float(np.median(trace_times[1:]))))
                else:
                    raise ValueError(f"unknown method {method!r}")

        samples: list[list[float]] = [[] for _ in tasks]
        for _ in range(2):  # warmups, discarded
            for _, _, run, _, _ in tasks:
                run()
        for _ in range(repeats):
            for i, (_, _, run, _, _) in enumerate(tasks):
                t0 = clock()
                run()
                samples[i].append(clock() - t0)

    rows = [
        CostRow(method=method, T=T, backward_seconds=float(np.median(samples[i])),
                cache_bytes=nbytes, trace_seconds=trace_sec)
        for i, (method, T, _, nbytes, trace_sec) in enumerate(tasks)
    ]
    return CostProfile(rows=rows)
