"""Self-contained verification battery behind `ratebp verify`.

Each check recomputes its expected values from an independent route (hand
arithmetic, brute-force enumeration, finite differences, or an algebraic
identity) and reports PASS/FAIL against a fixed tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bptt import bptt_backward
from .network import (
    ModelSpec,
    ce_loss,
    direct_encode,
    init_model,
    model_forward_bptt,
    tdbn_forward,
    BNLayer,
)
from .neuron import NeuronParams, NeuronState, lif_step, soft_spike, surrogate_grad
from .oracle import fd_gradient_sampled, fd_relative_errors, kappa_sums, temporal_jacobian
from .rate import rate_backward, rate_forward, rate_logits
from .tensor import RngState, matmul


@dataclass
class CheckResult:
    name: str
    tolerance: str
    observed: str
    ok: bool


def _rel_err(a, b):
    denom = max(float(np.linalg.norm(b)), 1e-300)
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b))) / denom


def check_matmul_oracle() -> CheckResult:
    rng = RngState(7)
    a = rng.gen.standard_normal((5, 7))
    b = rng.gen.standard_normal((7, 3))
    ref = np.zeros((5, 3))
    for i in range(5):
        for j in range(3):
            for k in range(7):
                ref[i, j] += a[i, k] * b[k, j]
    err = float(np.max(np.abs(matmul(a, b) - ref)))
    return CheckResult("matmul vs triple-loop", "1e-12", f"{err:.3g}", err < 1e-12)


def check_lif_hand() -> CheckResult:
    p = NeuronParams(v_th=1.0, lam=0.2)
    st = lif_step(NeuronState(u=np.array([0.9]), s=np.array([1.0])), np.array([0.5]), p)
    err = abs(float(st.u[0]) - 0.48)
    fired = lif_step(NeuronState(u=np.zeros(1), s=np.zeros(1)), np.array([1.0]), p)
    ok = err < 1e-15 and st.s[0] == 0.0 and fired.s[0] == 1.0
    return CheckResult("LIF hand values + threshold tie", "1e-15", f"{err:.3g}", ok)


def check_surrogate() -> CheckResult:
    peak = float(surrogate_grad(np.array([0.0]), 4.0)[0])
    hand = float(surrogate_grad(np.array([0.5]), 4.0)[0])
    sig2 = 1.0 / (1.0 + np.exp(-2.0))
    err = max(abs(peak - 1.0), abs(hand - 4.0 * sig2 * (1.0 - sig2)))
    return CheckResult("surrogate peak and hand value", "1e-12", f"{err:.3g}", err < 1e-12)


def check_soft_spike_fd() -> CheckResult:
    p = NeuronParams()
    rng = RngState(11)
    u = rng.gen.uniform(0.0, 2.0, size=64)
    h = 1e-6
    fd = (soft_spike(u + h, p) - soft_spike(u - h, p)) / (2 * h)
    err = float(np.max(np.abs(fd - surrogate_grad(u - p.v_th, p.alpha))))
    return CheckResult("soft-spike derivative vs FD", "1e-6", f"{err:.3g}", err < 1e-6)


def check_trace_fixture() -> CheckResult:
    # T=2, lam=0.2, v_th=1, u=(0,0): E[varkappa] = 0.077217
    p = NeuronParams()
    u = np.zeros((2, 1, 1))
    varkappa, _ = kappa_sums(temporal_jacobian(u, p))
    observed = float(varkappa.mean(axis=0)[0, 0])
    err = abs(observed - 0.077217)
    return CheckResult("hand fixture E[varkappa]=0.077217", "1e-6", f"{err:.3g}", err < 1e-6)


def check_trace_identity() -> CheckResult:
    from .rate import init_traces, trace_update

    p = NeuronParams()
    rng = RngState(13)
    worst = 0.0
    for T in range(1, 9):
        u = rng.gen.uniform(-1.0, 3.0, size=(T, 4, 3))
        s = np.where(u - p.v_th >= 0, 1.0, 0.0)
        traces = init_traces((4, 3))
        for t in range(T):
            traces = trace_update(traces, u[t], s[t], p)
        varkappa, _ = kappa_sums(temporal_jacobian(u, p))
        worst = max(worst, float(np.max(np.abs(traces.g - varkappa.mean(axis=0)))))
    return CheckResult("g_T vs mean(varkappa) over random trajectories", "1e-10", f"{worst:.3g}", worst < 1e-10)


def _dual_grads(model, x, y, mode):
    encoded = direct_encode(x, model.spec.T)
    outputs, cache = model_forward_bptt(model, encoded, training=True)
    _, dloss = ce_loss(outputs.mean(axis=0), y)
    gb, _ = bptt_backward(model, cache, dloss)
    _, rcache = rate_forward(model, encoded, mode)
    _, dloss_r = ce_loss(rate_logits(model, rcache), y)
    gr = rate_backward(model, rcache, dloss_r)
    return gb, gr


def check_t1_equivalence() -> CheckResult:
    rng = RngState(17)
    worst = 0.0
    for trial in range(5):
        spec = ModelSpec(in_features=6, hidden=(8, 5), n_classes=3, T=1)
        model = init_model(spec, rng.derive(trial))
        x = rng.gen.uniform(0, 1, size=(4, 6))
        y = rng.gen.integers(0, 3, size=4)
        gb, gr = _dual_grads(model, x, y, "rate_m")
        worst = max(worst, max(_rel_err(gr[k], gb[k]) for k in gb))
    return CheckResult("T=1 rate vs BPTT gradients", "1e-10", f"{worst:.3g}", worst < 1e-10)


def check_classifier_identity() -> CheckResult:
    rng = RngState(19)
    spec = ModelSpec(in_features=6, hidden=(10,), n_classes=4, T=4)
    model = init_model(spec, rng.derive(0))
    x = rng.gen.uniform(0, 1, size=(5, 6))
    y = rng.gen.integers(0, 4, size=5)
    gb, gr = _dual_grads(model, x, y, "rate_m")
    err = _rel_err(gr["classifier.weight"], gb["classifier.weight"])
    return CheckResult("classifier gradient identity at T=4", "1e-10", f"{err:.3g}", err < 1e-10)


def check_e_trace_exact() -> CheckResult:
    rng = RngState(23)
    spec = ModelSpec(in_features=5, hidden=(7, 7), n_classes=3, T=6)
    model = init_model(spec, rng.derive(0))
    x = rng.gen.uniform(0, 1, size=(4, 5))
    encoded = direct_encode(x, 6)
    _, cache = model_forward_bptt(model, encoded, training=True)
    _, rcache = rate_forward(model, encoded, "rate_m")
    ok = all(
        np.array_equal(rcache.layers[li].e, cache.layers[li].s.mean(axis=0))
        for li in range(len(model.blocks))
    )
    return CheckResult("e_T equals exact temporal spike mean", "bit-exact", "equal" if ok else "DIFFERS", ok)


def check_tdbn_forward_identity() -> CheckResult:
    rng = RngState(29)
    I = rng.gen.standard_normal((4, 6, 5))
    layer = BNLayer(gamma=rng.gen.uniform(0.5, 1.5, 5), beta=rng.gen.uniform(-1, 1, 5), mode="tdbn")
    out, stats = tdbn_forward(I, layer, training=False)
    c = I.mean(axis=0)
    rate_side = layer.gamma * (c - stats.mu) * stats.inv + layer.beta
    err = float(np.max(np.abs(rate_side - out.mean(axis=0))))
    return CheckResult("tdbn rate-side forward identity", "1e-12", f"{err:.3g}", err < 1e-12)


def check_mode_equivalence() -> CheckResult:
    rng = RngState(31)
    spec = ModelSpec(in_features=6, hidden=(9, 9), n_classes=3, T=4)
    model = init_model(spec, rng.derive(0))
    x = rng.gen.uniform(0, 1, size=(5, 6))
    y = rng.gen.integers(0, 3, size=5)
    encoded = direct_encode(x, 4)
    out_m, cm = rate_forward(model, encoded, "rate_m")
    out_s, cs = rate_forward(model, encoded, "rate_s")
    _, dloss = ce_loss(rate_logits(model, cm), y)
    gm = rate_backward(model, cm, dloss)
    gs = rate_backward(model, cs, dloss)
    ok = (
        np.array_equal(out_m, out_s)
        and all(np.array_equal(gm[k], gs[k]) for k in gm)
    )
    return CheckResult("rate_m / rate_s bit equality (BN-free)", "bit-exact", "equal" if ok else "DIFFERS", ok)


def check_soft_fd_spot() -> CheckResult:
    rng = RngState(37)
    spec = ModelSpec(in_features=5, hidden=(6,), n_classes=3, T=2)
    model = init_model(spec, rng.derive(0))
    x = rng.gen.uniform(0, 1, size=(4, 5))
    y = rng.gen.integers(0, 3, size=4)
    encoded = direct_encode(x, 2)
    outputs, cache = model_forward_bptt(model, encoded, training=True, spike_mode="soft")
    _, dloss = ce_loss(outputs.mean(axis=0), y)
    grads, _ = bptt_backward(model, cache, dloss)
    sampled = fd_gradient_sampled(model, x, y, step=1e-5, rng=rng.derive(1), samples_per_param=20)
    med = float(np.median(fd_relative_errors(grads, sampled)))
    return CheckResult("soft-mode BPTT vs finite differences", "1e-5 (median)", f"{med:.3g}", med < 1e-5)


def check_memory_bookkeeping() -> CheckResult:
    rng = RngState(41)
    spec = ModelSpec(in_features=8, hidden=(12, 12), n_classes=4, T=1)
    model = init_model(spec, rng.derive(0))
    x = rng.gen.uniform(0, 1, size=(6, 8))
    sizes_b, sizes_r = {}, {}
    for T in (1, 4):
        m = model.with_timesteps(T)
        encoded = direct_encode(x, T)
        _, cache = model_forward_bptt(m, encoded, training=True)
        _, rcache = rate_forward(m, encoded, "rate_m")
        sizes_b[T] = cache.byte_size()
        sizes_r[T] = rcache.byte_size()
    ratio = sizes_b[4] / sizes_b[1]
    ok = sizes_r[1] == sizes_r[4] and 0.9 * 4 <= ratio <= 1.1 * 4
    return CheckResult(
        "cache bytes: rate constant, BPTT ~T", "ratio in [3.6, 4.4]",
        f"rate {sizes_r[1]}=={sizes_r[4]}, bptt ratio {ratio:.2f}", ok,
    )


def check_loss_agreement() -> CheckResult:
    rng = RngState(43)
    spec = ModelSpec(in_features=6, hidden=(8,), n_classes=3, T=5)
    model = init_model(spec, rng.derive(0))
    x = rng.gen.uniform(0, 1, size=(4, 6))
    y = rng.gen.integers(0, 3, size=4)
    encoded = direct_encode(x, 5)
    outputs, _ = model_forward_bptt(model, encoded, training=True)
    loss_b, _ = ce_loss(outputs.mean(axis=0), y)
    _, rcache = rate_forward(model, encoded, "rate_m")
    loss_r, _ = ce_loss(rate_logits(model, rcache), y)
    err = abs(loss_b - loss_r)
    return CheckResult("loss agreement on shared forward", "1e-10", f"{err:.3g}", err < 1e-10)


ALL_CHECKS = [
    check_matmul_oracle,
    check_lif_hand,
    check_surrogate,
    check_soft_spike_fd,
    check_trace_fixture,
    check_trace_identity,
    check_t1_equivalence,
    check_classifier_identity,
    check_e_trace_exact,
    check_tdbn_forward_identity,
    check_mode_equivalence,
    check_soft_fd_spot,
    check_memory_bookkeeping,
    check_loss_agreement,
]


def run_all() -> list[CheckResult]:
    return [fn() for fn in ALL_CHECKS]
