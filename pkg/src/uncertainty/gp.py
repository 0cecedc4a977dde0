"""
GP experts over the regressor's NTK and their hard-gated mixture.

An expert caches one factorization per output. In function space that is
the Cholesky factor of K + sigma_n^2 I over the N training inputs; in weight
space it is the Cholesky factor of the posterior precision
Sigma_0^{-1} + Phi^T Phi / sigma_n^2 over the n_last head parameters. Both
give the same predictive variance; the cheaper one is picked automatically.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular

from src.errors import SingularSystem, UnknownRegime
from src.geometry.se3 import Covariance6
from src.regressor.features import PooledFeature
from src.regressor.mlp import MLPModel
from src.uncertainty.ntk import N_OUTPUTS, HeadCache, jacobian_rows, ntk_diagonal, ntk_gram

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
Formulation = Literal["function", "weight"]


@dataclass(frozen=True)
class AleatoricCorrection:
    """Calibration residuals smoothed under the NTK cosine distance.

    Attributes:
        cache: Head activations of the calibration inputs
        residual_sq: (N_c, 6) squared calibration residuals
        self_kernel: (N_c, 6) k_k(x_j, x_j)
        bandwidth: (6,) Gaussian smoothing bandwidths
    """

    cache: HeadCache
    residual_sq: np.ndarray
    self_kernel: np.ndarray
    bandwidth: np.ndarray


@dataclass
class GPExpert:
    """Per-regime NTK Gaussian process.

    Attributes:
        regime_id: Regime the expert serves
        model: Regressor whose NTK defines the kernel
        train_cache: Head activations of the N training inputs
        sigma_n: (6,) observation noise std per output
        prior_scale: sigma_p^2 with Sigma_0 = sigma_p^2 I
        formulation: "function" or "weight"
        factors: One lower Cholesky factor per output
        aleatoric: Optional input-dependent noise correction
    """

    regime_id: int
    model: MLPModel = field(repr=False)
    train_cache: HeadCache = field(repr=False)
    sigma_n: np.ndarray
    prior_scale: float
    formulation: Formulation
    factors: List[np.ndarray] = field(repr=False)
    aleatoric: Optional[AleatoricCorrection] = field(default=None, repr=False)
    cache_hash: str = ""

    def __post_init__(self) -> None:
        self.sigma_n = np.asarray(self.sigma_n, dtype=float).reshape(N_OUTPUTS)
        if np.any(self.sigma_n <= 0):
            raise ValueError(f"sigma_n must be positive, got {self.sigma_n}")
        if not self.cache_hash:
            self.cache_hash = cache_hash(self)

    @property
    def n_train(self) -> int:
        return len(self.train_cache)

    @property
    def n_last(self) -> int:
        return self.model.n_last


# ============================================================
# Fitting
# ============================================================


def _cholesky(matrix: np.ndarray, jitter: float, what: str) -> np.ndarray:
    try:
        return cholesky(matrix, lower=True)
    except LinAlgError:
        logger.warning(f"⚠️  {what} not positive definite; retrying with jitter {jitter:g}")
    try:
        return cholesky(matrix + jitter * np.eye(len(matrix)), lower=True)
    except LinAlgError as e:
        raise SingularSystem(f"{what} singular even with jitter {jitter:g}") from e


def choose_formulation(n_train: int, n_last: int, requested: str = "auto") -> Formulation:
    if requested in ("function", "weight"):
        return requested
    return "weight" if n_train > n_last else "function"


def fit_expert(
    model: MLPModel,
    train_features: np.ndarray,
    sigma_n: Sequence[float],
    prior_scale: float = 1.0,
    regime_id: int = 0,
    formulation: str = "auto",
    jitter: float = 1e-8,
) -> GPExpert:
    """Fit an NTK GP expert on a regime's training inputs.

    Args:
        model: Trained regressor
        train_features: (N, D_in) pooled training features
        sigma_n: Per-output noise std (scalar broadcasts)
        prior_scale: sigma_p^2
        regime_id: Regime served
        formulation: "auto", "function" or "weight"
        jitter: Diagonal added on a failed factorization

    Raises:
        ValueError: If there are no training inputs
        SingularSystem: If a system stays singular after jitter
    """
    X = np.atleast_2d(np.asarray(train_features, dtype=float))
    if X.size == 0 or len(X) == 0:
        raise ValueError("fit_expert needs at least one training input")
    sigma_n = np.broadcast_to(np.asarray(sigma_n, dtype=float), (N_OUTPUTS,)).copy()
    cache = HeadCache.from_model(model, X)
    chosen = choose_formulation(len(X), model.n_last, formulation)
    factors = []
    for k in range(N_OUTPUTS):
        noise = sigma_n[k] ** 2
        if chosen == "function":
            system = ntk_gram(model, cache, cache, k, prior_scale) + noise * np.eye(len(X))
            factors.append(_cholesky(system, jitter, f"Kernel system of output {k}"))
        else:
            phi = jacobian_rows(model, cache, k)
            precision = phi.T @ phi / noise + np.eye(phi.shape[1]) / prior_scale
            factors.append(_cholesky(precision, jitter, f"Weight precision of output {k}"))
    expert = GPExpert(regime_id, model, cache, sigma_n, float(prior_scale), chosen, factors)
    logger.info(f"🧮 Fitted {chosen}-space expert for regime {regime_id}: N={len(X)}, n_last={model.n_last}")
    return expert


# ============================================================
# Prediction
# ============================================================


def posterior_variance(expert: GPExpert, X: np.ndarray) -> np.ndarray:
    """(N, 6) GP posterior variances, excluding the noise term."""
    model = expert.model
    test = HeadCache.from_model(model, X)
    prior = ntk_diagonal(model, test, expert.prior_scale)
    out = np.empty_like(prior)
    for k in range(N_OUTPUTS):
        L = expert.factors[k]
        if expert.formulation == "function":
            cross = ntk_gram(model, expert.train_cache, test, k, expert.prior_scale)
            v = solve_triangular(L, cross, lower=True)
            out[:, k] = prior[:, k] - np.sum(v * v, axis=0)
        else:
            v = solve_triangular(L, jacobian_rows(model, test, k).T, lower=True)
            out[:, k] = np.sum(v * v, axis=0)
    return np.maximum(out, 0.0)


def predict_cov(expert: GPExpert, pf_test: PooledFeature) -> Covariance6:
    """Diagonal covariance: posterior variance plus sigma_n^2 per output."""
    var = posterior_variance(expert, np.asarray(pf_test.vector, dtype=float))[0]
    return Covariance6.diagonal(var + expert.sigma_n ** 2)


@dataclass
class MoEGP:
    """Hard-gated mixture with exactly one expert per regime."""

    experts: Dict[int, GPExpert]

    def __post_init__(self) -> None:
        for regime_id, expert in self.experts.items():
            if expert.regime_id != regime_id:
                raise ValueError(f"Expert for regime {expert.regime_id} registered under {regime_id}")

    @property
    def size(self) -> int:
        return len(self.experts)

    def gate(self, state: int) -> GPExpert:
        """g_m(s) = I(s = m).

        Raises:
            UnknownRegime: If no expert serves the state
        """
        try:
            return self.experts[int(state)]
        except KeyError:
            raise UnknownRegime(f"No expert for regime {state}; experts cover {sorted(self.experts)}") from None


def gate(moe: MoEGP, state: int) -> GPExpert:
    return moe.gate(state)


# ============================================================
# Cache hashing and serialization
# ============================================================


def _arrays(expert: GPExpert) -> List[Tuple[str, np.ndarray]]:
    arrays = [
        ("h1", expert.train_cache.h1),
        ("mask", expert.train_cache.mask),
        ("h2", expert.train_cache.h2),
    ]
    arrays += [(f"factor_{k}", f) for k, f in enumerate(expert.factors)]
    if expert.aleatoric is not None:
        a = expert.aleatoric
        arrays += [
            ("cal_h1", a.cache.h1),
            ("cal_mask", a.cache.mask),
            ("cal_h2", a.cache.h2),
            ("cal_residual_sq", a.residual_sq),
            ("cal_self_kernel", a.self_kernel),
            ("cal_bandwidth", a.bandwidth),
        ]
    return arrays


def cache_hash(expert: GPExpert) -> str:
    """SHA-256 over the expert's settings, cached activations and factorizations."""
    digest = hashlib.sha256()
    digest.update(json.dumps([expert.regime_id, expert.formulation, repr(expert.prior_scale)]).encode())
    digest.update(np.ascontiguousarray(expert.sigma_n, dtype="<f8").tobytes())
    for W in expert.model.weights[-2:]:
        digest.update(np.ascontiguousarray(W, dtype="<f8").tobytes())
    digest.update(np.ascontiguousarray(expert.model.output_scale, dtype="<f8").tobytes())
    for _, arr in _arrays(expert):
        digest.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return digest.hexdigest()


def verify_cache(expert: GPExpert) -> bool:
    """True when the stored hash matches the expert's current contents."""
    return cache_hash(expert) == expert.cache_hash


def save_expert(path: PathLike, expert: GPExpert, config_hash: str = "") -> Path:
    """Write `<path>` (JSON header) and `<path>.bin` (little-endian float64 blobs)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    layout, offset = [], 0
    with open(path.with_suffix(".bin"), "wb") as fh:
        for name, arr in _arrays(expert):
            data = np.ascontiguousarray(arr, dtype="<f8")
            fh.write(data.tobytes())
            layout.append({"name": name, "shape": list(data.shape), "offset": offset})
            offset += data.size
    header = {
        "regime_id": expert.regime_id,
        "sigma_n": expert.sigma_n.tolist(),
        "prior_scale": expert.prior_scale,
        "n_train": expert.n_train,
        "n_last": expert.n_last,
        "formulation": expert.formulation,
        "cache_hash": expert.cache_hash,
        "config_hash": config_hash,
        "arrays": layout,
    }
    path.write_text(json.dumps(header, indent=2) + "\n", encoding="utf-8")
    return path


def load_expert(path: PathLike, model: MLPModel) -> GPExpert:
    """Read an expert written by save_expert and check its cache hash.

    Raises:
        FileNotFoundError: If the header or blob file is missing
        ValueError: If the recomputed hash differs from the stored one
    """
    path = Path(path)
    header = json.loads(path.read_text(encoding="utf-8"))
    blob = np.fromfile(path.with_suffix(".bin"), dtype="<f8")
    arrays: Dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        size = int(np.prod(entry["shape"]))
        arrays[entry["name"]] = blob[entry["offset"] : entry["offset"] + size].reshape(entry["shape"]).astype(float)
    aleatoric = None
    if "cal_h2" in arrays:
        aleatoric = AleatoricCorrection(
            HeadCache(arrays["cal_h1"], arrays["cal_mask"], arrays["cal_h2"]),
            arrays["cal_residual_sq"],
            arrays["cal_self_kernel"],
            arrays["cal_bandwidth"],
        )
    expert = GPExpert(
        regime_id=int(header["regime_id"]),
        model=model,
        train_cache=HeadCache(arrays["h1"], arrays["mask"], arrays["h2"]),
        sigma_n=np.asarray(header["sigma_n"], dtype=float),
        prior_scale=float(header["prior_scale"]),
        formulation=header["formulation"],
        factors=[arrays[f"factor_{k}"] for k in range(N_OUTPUTS)],
        aleatoric=aleatoric,
        cache_hash=header["cache_hash"],
    )
    if not verify_cache(expert):
        raise ValueError(f"Expert cache at {path} does not match its hash (stale model or corrupted blob)")
    return expert
