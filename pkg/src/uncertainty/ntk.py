"""
Neural tangent kernel of the regressor restricted to its last two layers.

For output k the kernel is sigma_p^2 J_k(x) . J_k(x'), where J_k is row k
of the head Jacobian. With cached activations (h1, ReLU mask m, h2) and the
last layer's row w_k scaled by the output scale s_k it has the closed form

    k_k(x, x') = sigma_p^2 s_k^2 [ (w_k^2 . (m o m')) (h1 . h1' + 1) + h2 . h2' + 1 ]

which is what the Gram routines evaluate; the Jacobian form is kept for
checks and for the weight-space posterior.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.regressor.features import PooledFeature
from src.regressor.mlp import MLPModel

N_OUTPUTS = 6


@dataclass(frozen=True)
class HeadCache:
    """Last-layer activations of a batch of inputs.

    Attributes:
        h1: (N, H1) input of the second-to-last layer (empty for 1-layer models)
        mask: (N, H2) ReLU mask of the second-to-last layer
        h2: (N, H2) input of the last layer
    """

    h1: np.ndarray
    mask: np.ndarray
    h2: np.ndarray

    def __len__(self) -> int:
        return len(self.h2)

    @classmethod
    def from_model(cls, model: MLPModel, X: np.ndarray) -> "HeadCache":
        h1, mask, h2 = model.head_activations(np.atleast_2d(np.asarray(X, dtype=float)))
        return cls(h1, mask, h2)

    def take(self, index: np.ndarray) -> "HeadCache":
        return HeadCache(self.h1[index], self.mask[index], self.h2[index])


def _squared_head_rows(model: MLPModel) -> np.ndarray:
    """(D_out, H2) matrix of (s_k w_k)^2."""
    return (model.output_scale[:, None] * model.weights[-1]) ** 2


def ntk_gram(model: MLPModel, a: HeadCache, b: HeadCache, output: int, prior_scale: float = 1.0) -> np.ndarray:
    """(N_a, N_b) kernel matrix of one output."""
    scale_sq = model.output_scale[output] ** 2
    last = a.h2 @ b.h2.T + 1.0
    if model.n_layers == 1:
        return prior_scale * scale_sq * last
    gate = (a.mask * _squared_head_rows(model)[output]) @ b.mask.T
    return prior_scale * (gate * (a.h1 @ b.h1.T + 1.0) + scale_sq * last)


def ntk_diagonal(model: MLPModel, a: HeadCache, prior_scale: float = 1.0) -> np.ndarray:
    """(N, D_out) self-kernels k_k(x, x)."""
    scale_sq = model.output_scale ** 2
    last = np.sum(a.h2 * a.h2, axis=1) + 1.0
    diag = scale_sq[None, :] * last[:, None]
    if model.n_layers > 1:
        gate = a.mask @ _squared_head_rows(model).T
        diag = diag + gate * (np.sum(a.h1 * a.h1, axis=1) + 1.0)[:, None]
    return prior_scale * diag


def ntk_kernel(model: MLPModel, pf_a: PooledFeature, pf_b: PooledFeature, prior_scale: float = 1.0) -> np.ndarray:
    """Per-output inner products of head Jacobian rows, shape (6,)."""
    J_a = model.jacobian_head(np.asarray(pf_a.vector, dtype=float))
    J_b = model.jacobian_head(np.asarray(pf_b.vector, dtype=float))
    return prior_scale * np.sum(J_a * J_b, axis=1)


def jacobian_rows(model: MLPModel, cache: HeadCache, output: int) -> np.ndarray:
    """(N, n_last) Jacobian rows of one output for a batch, same column order as jacobian_head."""
    n = len(cache)
    W_last = model.weights[-1]
    d_out, d_hidden = W_last.shape
    s = model.output_scale[output]
    blocks = []
    if model.n_layers > 1:
        gate = s * W_last[output][None, :] * cache.mask
        blocks.append((gate[:, :, None] * cache.h1[:, None, :]).reshape(n, -1))
        blocks.append(gate)
    last = np.zeros((n, d_out, d_hidden))
    last[:, output, :] = s * cache.h2
    blocks.append(last.reshape(n, -1))
    bias = np.zeros((n, d_out))
    bias[:, output] = s
    blocks.append(bias)
    return np.concatenate(blocks, axis=1)


def cosine_distance_sq(
    model: MLPModel,
    a: HeadCache,
    b: HeadCache,
    output: int,
    diag_a: Optional[np.ndarray] = None,
    diag_b: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Squared NTK-induced cosine distance 2 - 2 k(x,x') / sqrt(k(x,x) k(x',x'))."""
    diag_a = ntk_diagonal(model, a)[:, output] if diag_a is None else diag_a
    diag_b = ntk_diagonal(model, b)[:, output] if diag_b is None else diag_b
    gram = ntk_gram(model, a, b, output)
    norm = np.sqrt(np.outer(diag_a, diag_b))
    cosine = np.clip(gram / np.where(norm > 0, norm, 1.0), -1.0, 1.0)
    return 2.0 - 2.0 * cosine
