"""Spiking-network training engine: surrogate-gradient BPTT and rate-based
backpropagation, with brute-force oracles and cost-measurement tooling."""

from .bptt import BpttInternals, GradientSet, bptt_backward, cosine_lr, sgd_update
from .config import ExperimentConfig
from .data import DatasetHandle, gen_synthetic, load_idx, save_idx
from .network import (
    ActivationCache,
    Batch,
    BNLayer,
    LinearLayer,
    Model,
    ModelSpec,
    ce_loss,
    direct_encode,
    forward_eval,
    init_model,
    load_model,
    model_forward_bptt,
    save_model,
    spatialbn_step,
    tdbn_forward,
)
from .neuron import NeuronParams, NeuronState, lif_step, soft_spike, surrogate_grad
from .oracle import (
    CompareReport,
    fd_gradient,
    fd_gradient_sampled,
    grad_compare,
    kappa_sums,
    temporal_jacobian,
)
from .rate import LayerTraces, RateCache, rate_backward, rate_forward, trace_update
from .tensor import DenseArray, RngState, matmul, randn, reduce_mean
from .train import TrainingDiverged, evaluate, train

__version__ = "0.1.0"
