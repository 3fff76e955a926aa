"""Independent brute-force references the trainers are verified against.

Nothing here shares code with the recursive backward passes: the temporal
Jacobian is unrolled product-by-product, and finite differences perturb one
scalar parameter at a time on the soft (differentiable) forward.
"""

from __future__ import annotations

from dataclasses import dataclass
from statistics import median

import numpy as np

from .bptt import GradientSet
from .neuron import NeuronParams, surrogate_grad
from .network import Model, ce_loss, direct_encode, model_forward_bptt
from .tensor import DenseArray, RngState


@dataclass
class TemporalJacobian:
    """J[tau, t] = d s_tau / d u_t for one block, stored per neuron.

    Strictly zero for tau < t; the diagonal is the surrogate derivative.
    Shape [T, T, *feature_shape].
    """

    J: DenseArray


def temporal_jacobian(u_traj: DenseArray, p: NeuronParams) -> TemporalJacobian:
    """Unroll the within-layer spike/potential Jacobian from a u trajectory."""
    u_traj = np.asarray(u_traj, dtype=np.float64)
    T = u_traj.shape[0]
    g = surrogate_grad(u_traj - p.v_th, p.alpha)
    fac = p.lam - p.lam * p.v_th * g  # d u_{i+1} / d u_i including the reset path
    J = np.zeros((T, T) + u_traj.shape[1:])
    for tau in range(T):
        J[tau, tau] = g[tau]
        prod = np.ones(u_traj.shape[1:])
        for t in range(tau - 1, -1, -1):
            prod = prod * fac[t]
            J[tau, t] = g[tau] * prod
    return TemporalJacobian(J=J)


def kappa_sums(jac: TemporalJacobian) -> tuple[DenseArray, DenseArray]:
    """Column and row sums of the temporal Jacobian.

    varkappa_t = sum_tau J[tau, t] (all spikes downstream of input t);
    kappa_t = sum_tau J[t, tau] (all inputs upstream of spike t). Their
    temporal means coincide: both equal the total sum divided by T.
    """
    varkappa = jac.J.sum(axis=0)
    kappa = jac.J.sum(axis=1)
    return varkappa, kappa


# ---------------------------------------------------------------------------
# finite differences (soft mode only: the binary loss is piecewise constant)


def _soft_loss(model: Model, x: DenseArray, y) -> float:
    encoded = direct_encode(x, model.spec.T)
    outputs, _ = model_forward_bptt(model, encoded, training=True, spike_mode="soft")
    loss, _ = ce_loss(outputs.mean(axis=0), y)
    if not np.isfinite(loss):
        raise ValueError("non-finite loss during finite differencing")
    return loss


def _fd_one(model, x, y, arr, flat_index, step):
    flat = arr.reshape(-1)
    orig = flat[flat_index]
    flat[flat_index] = orig + step
    lp = _soft_loss(model, x, y)
    flat[flat_index] = orig - step
    lm = _soft_loss(model, x, y)
    flat[flat_index] = orig
    return (lp - lm) / (2.0 * step)


def _check_step(step: float):
    if not 1e-6 <= step <= 1e-4:
        raise ValueError(f"fd step must lie in [1e-6, 1e-4], got {step}")


def fd_gradient(model: Model, x: DenseArray, y, step: float = 1e-5) -> GradientSet:
    """Central differences of the soft-mode loss for every scalar parameter."""
    _check_step(step)
    grads: GradientSet = {}
    for key, arr in model.parameters().items():
        out = np.empty(arr.size)
        for i in range(arr.size):
            out[i] = _fd_one(model, x, y, arr, i, step)
        grads[key] = out.reshape(arr.shape)
    return grads


def fd_gradient_sampled(
    model: Model,
    x: DenseArray,
    y,
    step: float,
    rng: RngState,
    samples_per_param: int = 200,
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Central differences on a random coordinate subset of each parameter.

    Returns {key: (flat_indices, fd_values)}; arrays smaller than the sample
    budget are covered exhaustively.
    """
    _check_step(step)
    out: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for key, arr in model.parameters().items():
        if arr.size <= samples_per_param:
            idx = np.arange(arr.size)
        else:
            idx = np.sort(rng.gen.choice(arr.size, size=samples_per_param, replace=False))
        vals = np.array([_fd_one(model, x, y, arr, int(i), step) for i in idx])
        out[key] = (idx, vals)
    return out


def fd_relative_errors(analytic: GradientSet, sampled: dict[str, tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Per-coordinate |analytic - fd| / max(|analytic|, |fd|, 1e-10), flattened."""
    errs = []
    for key, (idx, fd_vals) in sampled.items():
        an = analytic[key].reshape(-1)[idx]
        denom = np.maximum(np.maximum(np.abs(an), np.abs(fd_vals)), 1e-10)
        errs.append(np.abs(an - fd_vals) / denom)
    return np.concatenate(errs)


# ---------------------------------------------------------------------------
# gradient comparison


@dataclass
class KeyComparison:
    cosine: float
    rel_l2: float  # ||a - b|| / ||a||, normalized by the first argument
    max_abs: float


@dataclass
class CompareReport:
    """Per-parameter agreement metrics between two gradient sets."""

    per_key: dict[str, KeyComparison]
    median_cosine: float
    median_rel_l2: float
    median_max_abs: float

    def as_dict(self) -> dict:
        return {
            "norm_convention": "rel_l2 = |a - b| / |a| (first argument)",
            "per_key": {
                k: {"cosine": c.cosine, "rel_l2": c.rel_l2, "max_abs": c.max_abs}
                for k, c in self.per_key.items()
            },
            "median_cosine": self.median_cosine,
            "median_rel_l2": self.median_rel_l2,
            "median_max_abs": self.median_max_abs,
        }


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    # dot-product form: exact +-1.0 for (anti)parallel inputs
    daa = float(np.dot(a, a))
    dbb = float(np.dot(b, b))
    if daa == 0.0 and dbb == 0.0:
        return 1.0
    if daa == 0.0 or dbb == 0.0:
        return 0.0
    return float(np.clip(np.dot(a, b) / np.sqrt(daa * dbb), -1.0, 1.0))


def grad_compare(a: GradientSet, b: GradientSet) -> CompareReport:
    """Cosine, relative L2 (w.r.t. a) and max-abs error per parameter key."""
    if set(a.keys()) != set(b.keys()):
        raise ValueError(
            f"gradient key mismatch: {sorted(set(a) ^ set(b))} not shared"
        )
    per_key = {}
    for key in sorted(a.keys()):
        fa = a[key].reshape(-1)
        fb = b[key].reshape(-1)
        na = float(np.linalg.norm(fa))
        diff = float(np.linalg.norm(fa - fb))
        per_key[key] = KeyComparison(
            cosine=_cosine(fa, fb),
            rel_l2=diff / na if na > 0 else (0.0 if diff == 0.0 else float("inf")),
            max_abs=float(np.max(np.abs(fa - fb))) if fa.size else 0.0,
        )
    return CompareReport(
        per_key=per_key,
        median_cosine=median(c.cosine for c in per_key.values()),
        median_rel_l2=median(c.rel_l2 for c in per_key.values()),
        median_max_abs=median(c.max_abs for c in per_key.values()),
    )
