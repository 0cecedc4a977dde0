"""
Fully connected ReLU network written directly in numpy.

Layers are affine maps y = W x + b with W of shape (out, in); hidden layers
use ReLU (derivative 0 at 0), the last layer is linear. Inputs are
standardized and outputs de-standardized inside forward, so callers always
work in physical units.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.errors import DimensionMismatch

POSE_SIZES = (219, 128, 16, 6)


@dataclass
class ForwardCache:
    """Per-layer inputs and pre-activations of one forward pass."""

    inputs: List[np.ndarray]
    pre_activations: List[np.ndarray]
    output: np.ndarray


@dataclass
class MLPModel:
    """ReLU MLP with fixed layer sizes.

    Attributes:
        layer_sizes: (D_in, h_1, ..., D_out)
        weights: Per-layer (out, in) matrices
        biases: Per-layer (out,) vectors
        input_shift, input_scale: Input standardization x -> (x - shift) / scale
        output_shift, output_scale: Output map o -> shift + scale * o
        standardized: Whether the standardization was fitted to data
    """

    layer_sizes: Tuple[int, ...]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    input_shift: np.ndarray = None
    input_scale: np.ndarray = None
    output_shift: np.ndarray = None
    output_scale: np.ndarray = None
    standardized: bool = False

    def __post_init__(self) -> None:
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 2:
            raise ValueError(f"Need at least input and output sizes, got {self.layer_sizes}")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("One weight matrix and bias vector per layer expected")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_sizes[i + 1], self.layer_sizes[i])
            if W.shape != expected or b.shape != (expected[0],):
                raise ValueError(f"Layer {i} has shapes {W.shape}/{b.shape}, expected {expected}")
        d_in, d_out = self.layer_sizes[0], self.layer_sizes[-1]
        self.input_shift = _vector(self.input_shift, d_in, 0.0)
        self.input_scale = _vector(self.input_scale, d_in, 1.0)
        self.output_shift = _vector(self.output_shift, d_out, 0.0)
        self.output_scale = _vector(self.output_scale, d_out, 1.0)

    @classmethod
    def initialize(cls, layer_sizes: Sequence[int] = POSE_SIZES, seed: int = 0) -> "MLPModel":
        """He-normal weights and zero biases."""
        rng = np.random.default_rng(seed)
        sizes = tuple(int(s) for s in layer_sizes)
        weights = [rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_out, fan_in)) for fan_in, fan_out in zip(sizes, sizes[1:])]
        biases = [np.zeros(fan_out) for fan_out in sizes[1:]]
        return cls(sizes, weights, biases)

    @classmethod
    def zeros(cls, layer_sizes: Sequence[int]) -> "MLPModel":
        sizes = tuple(int(s) for s in layer_sizes)
        return cls(sizes, [np.zeros((o, i)) for i, o in zip(sizes, sizes[1:])], [np.zeros(o) for o in sizes[1:]])

    # ------------------------------------------------------------
    # Shapes and parameters
    # ------------------------------------------------------------

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameter_count(self, last: Optional[int] = None) -> int:
        layers = range(self.n_layers) if last is None else range(max(0, self.n_layers - last), self.n_layers)
        return int(sum(self.weights[i].size + self.biases[i].size for i in layers))

    @property
    def n_last(self) -> int:
        """Parameters in the last two layers (the Bayesian block)."""
        return self.parameter_count(last=2)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([W.reshape(-1), b]) for W, b in zip(self.weights, self.biases)])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.parameter_count():
            raise DimensionMismatch(f"Expected {self.parameter_count()} parameters, got {flat.size}")
        offset = 0
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = flat[offset : offset + W.size].reshape(W.shape).copy()
            offset += W.size
            self.biases[i] = flat[offset : offset + b.size].copy()
            offset += b.size

    def copy(self) -> "MLPModel":
        return MLPModel(
            self.layer_sizes,
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.input_shift.copy(),
            self.input_scale.copy(),
            self.output_shift.copy(),
            self.output_scale.copy(),
            self.standardized,
        )

    # ------------------------------------------------------------
    # Forward / backward
    # ------------------------------------------------------------

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise DimensionMismatch(f"Expected input width {self.input_dim}, got shape {X.shape}")
        return X

    def forward_cache(self, X: np.ndarray) -> ForwardCache:
        X = self._check(X)
        h = (X - self.input_shift) / self.input_scale
        inputs, pre = [], []
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            z = h @ W.T + b
            pre.append(z)
            h = np.maximum(z, 0.0) if i < self.n_layers - 1 else z
        return ForwardCache(inputs, pre, self.output_shift + self.output_scale * h)

    def forward(self, X: np.ndarray) -> np.ndarray:
        """Outputs for a (B, D_in) batch, or a single (D_out,) row for a vector input."""
        single = np.asarray(X).ndim == 1
        out = self.forward_cache(X).output
        return out[0] if single else out

    def backward(self, cache: ForwardCache, grad_output: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray]]:
        """Parameter gradients given dL/d(output) for the cached batch."""
        delta = np.asarray(grad_output, dtype=float).reshape(cache.output.shape) * self.output_scale
        grad_W: List[np.ndarray] = [None] * self.n_layers
        grad_b: List[np.ndarray] = [None] * self.n_layers
        for i in reversed(range(self.n_layers)):
            grad_W[i] = delta.T @ cache.inputs[i]
            grad_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i]) * (cache.pre_activations[i - 1] > 0.0)
        return grad_W, grad_b

    def flat_gradient(self, grad_W: List[np.ndarray], grad_b: List[np.ndarray]) -> np.ndarray:
        return np.concatenate([np.concatenate([gW.reshape(-1), gb]) for gW, gb in zip(grad_W, grad_b)])

    # ------------------------------------------------------------
    # Last-layer quantities
    # ------------------------------------------------------------

    def head_activations(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Inputs of the last two layers for a batch.

        Returns:
            (h1, mask, h2): input of the second-to-last layer, its ReLU mask and
            the input of the last layer. For a single-layer model h1 and mask
            are empty.
        """
        cache = self.forward_cache(X)
        if self.n_layers == 1:
            empty = np.zeros((len(cache.output), 0))
            return empty, empty, cache.inputs[-1]
        mask = (cache.pre_activations[-2] > 0.0).astype(float)
        return cache.inputs[-2], mask, cache.inputs[-1]

    def jacobian_head(self, x: np.ndarray) -> np.ndarray:
        """Exact Jacobian of the outputs w.r.t. the last two layers' parameters.

        Column order is [W_{L-1} (row-major), b_{L-1}, W_L (row-major), b_L];
        for a single-layer model only [W_L, b_L].

        Returns:
            (D_out, n_last) matrix
        """
        h1, mask, h2 = self.head_activations(x)
        h1, mask, h2 = h1[0], mask[0], h2[0]
        W_last = self.weights[-1]
        d_out, d_hidden = W_last.shape
        scale = self.output_scale
        blocks = []
        if self.n_layers > 1:
            # d out_k / d a_i = s_k W_L[k, i] m_i
            gate = scale[:, None] * W_last * mask[None, :]
            blocks.append(np.einsum("ki,j->kij", gate, h1).reshape(d_out, -1))
            blocks.append(gate)
        blocks.append(np.einsum("k,kl,j->klj", scale, np.eye(d_out), h2).reshape(d_out, -1))
        blocks.append(np.diag(scale))
        return np.concatenate(blocks, axis=1)


def _vector(value: Optional[np.ndarray], size: int, fill: float) -> np.ndarray:
    if value is None:
        return np.full(size, fill)
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.size != size:
        raise DimensionMismatch(f"Expected a vector of length {size}, got {arr.size}")
    return arr.copy()


def spectral_lipschitz(model: MLPModel) -> float:
    """Product of layer spectral norms, scaled by the standardization maps."""
    bound = float(np.max(1.0 / model.input_scale)) * float(np.max(np.abs(model.output_scale)))
    for W in model.weights:
        bound *= float(np.linalg.norm(W, 2))
    return bound
