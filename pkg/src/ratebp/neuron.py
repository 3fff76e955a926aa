"""Leaky integrate-and-fire dynamics and the sigmoid surrogate derivative.

The discrete neuron update is

    u_t = lam * (u_{t-1} - v_th * s_{t-1}) + I_t
    s_t = 1 where u_t - v_th >= 0 else 0

i.e. a leaky membrane with a subtraction reset applied inside the decay, and
a hard threshold that fires at exact equality. The threshold's derivative is
replaced in backward passes by a scaled logistic bump (``surrogate_grad``);
``soft_spike`` is a differentiable relaxation of the threshold whose exact
derivative equals the surrogate, used only to make losses smooth enough for
finite-difference verification.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import DenseArray, asarray


@dataclass(frozen=True)
class NeuronParams:
    """Threshold, membrane decay and surrogate sharpness.

    Defaults: v_th=1, lam=0.2, alpha=4 (peak surrogate derivative alpha/4 = 1).
    """

    v_th: float = 1.0
    lam: float = 0.2
    alpha: float = 4.0

    def __post_init__(self):
        if not self.v_th > 0:
            raise ValueError(f"v_th must be positive, got {self.v_th}")
        if not 0.0 < self.lam <= 1.0:
            raise ValueError(f"lam must be in (0, 1], got {self.lam}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


@dataclass
class NeuronState:
    u: DenseArray  # membrane potential
    s: DenseArray  # binary spikes in {0, 1} (soft values in soft mode)


def init_state(shape) -> NeuronState:
    """Resting state at the start of a sample window: u = 0, s = 0."""
    return NeuronState(u=np.zeros(shape), s=np.zeros(shape))


def lif_step(state_prev: NeuronState, input_current: DenseArray, p: NeuronParams) -> NeuronState:
    """One discrete LIF update. Fires at exact threshold equality (H(0)=1)."""
    input_current = asarray(input_current)
    if state_prev.u.shape != input_current.shape or state_prev.s.shape != input_current.shape:
        raise ValueError(
            f"state/input shape mismatch: u {state_prev.u.shape}, "
            f"s {state_prev.s.shape}, input {input_current.shape}"
        )
    if not np.all(np.isfinite(input_current)):
        raise ValueError("non-finite input current")
    u = p.lam * (state_prev.u - p.v_th * state_prev.s) + input_current
    s = np.where(u - p.v_th >= 0.0, 1.0, 0.0)
    return NeuronState(u=u, s=s)


def lif_step_soft(state_prev: NeuronState, input_current: DenseArray, p: NeuronParams) -> NeuronState:
    """LIF update with the threshold replaced by its logistic relaxation."""
    input_current = asarray(input_current)
    if not np.all(np.isfinite(input_current)):
        raise ValueError("non-finite input current")
    u = p.lam * (state_prev.u - p.v_th * state_prev.s) + input_current
    return NeuronState(u=u, s=_sigmoid(p.alpha * (u - p.v_th)))


def _sigmoid(z: DenseArray) -> DenseArray:
    # branch on sign so exp never sees a large positive argument
    z = asarray(z)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def surrogate_grad(x: DenseArray, alpha: float) -> DenseArray:
    """Pseudo-derivative of the spike threshold at x = u - v_th.

    Elementwise alpha * sig(alpha x) * (1 - sig(alpha x)): even in x,
    strictly positive, peak alpha/4 at x = 0. Evaluated as
    alpha * t / (1 + t)^2 with t = exp(-alpha |x|), which is exactly
    symmetric and avoids the 1 - sig cancellation in the tails.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    t = np.exp(-alpha * np.abs(asarray(x)))
    return alpha * t / (1.0 + t) ** 2


def soft_spike(u: DenseArray, p: NeuronParams) -> DenseArray:
    """sig(alpha (u - v_th)); its exact derivative is surrogate_grad(u - v_th)."""
    return _sigmoid(p.alpha * (asarray(u) - p.v_th))
