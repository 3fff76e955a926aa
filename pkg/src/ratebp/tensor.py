"""Dense-array substrate: conventions and seeded randomness.

Arrays are plain numpy float64 ndarrays in row-major (C) order. This module
pins the numeric conventions (64-bit everywhere, named deterministic RNG)
and the validation behaviour the rest of the engine builds on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# All numeric state in the engine is carried as float64 ndarrays.
DenseArray = np.ndarray

RNG_ALGORITHM = "pcg64"


@dataclass
class RngState:
    """Deterministic random stream; identical seed -> identical samples."""

    seed: int
    algorithm: str = RNG_ALGORITHM
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        if self.algorithm != RNG_ALGORITHM:
            raise ValueError(f"unknown rng algorithm {self.algorithm!r}")
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    @property
    def gen(self) -> np.random.Generator:
        return self._gen

    def derive(self, stream: int) -> "RngState":
        """Independent child stream, stable across runs and platforms."""
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(stream,))
        child_seed = int(ss.generate_state(1, dtype=np.uint64)[0])
        return RngState(child_seed)


def asarray(x) -> DenseArray:
    return np.asarray(x, dtype=np.float64)


def matmul(a: DenseArray, b: DenseArray) -> DenseArray:
    """Standard matrix product of two 2-d arrays."""
    a = asarray(a)
    b = asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def reduce_mean(a: DenseArray, axis: int) -> DenseArray:
    """Arithmetic mean along one axis; the output drops that axis."""
    a = asarray(a)
    if not -a.ndim <= axis < a.ndim:
        raise ValueError(f"axis {axis} out of range for shape {a.shape}")
    if a.shape[axis] == 0:
        raise ValueError(f"cannot reduce empty axis {axis} of shape {a.shape}")
    return a.mean(axis=axis)


def randn(rng: RngState, shape) -> DenseArray:
    """I.i.d. standard normal samples, deterministic per seed."""
    shape = tuple(int(s) for s in (shape if np.iterable(shape) else (shape,)))
    if any(s < 0 for s in shape):
        raise ValueError(f"invalid shape {shape}")
    return rng.gen.standard_normal(shape, dtype=np.float64)
