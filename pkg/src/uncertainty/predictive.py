"""
Full predictive distribution of the proposed method (RT+GP).

The mean is the regressor's pre-ICP output; the covariance comes from the
gated expert plus the aleatoric correction. The GP posterior mean is never
used.
"""

from typing import Optional

import numpy as np

from src.geometry.se3 import Covariance6, LieVector
from src.regressor.features import PooledFeature
from src.regressor.mlp import MLPModel
from src.uncertainty.aleatoric import aleatoric_batch
from src.uncertainty.gp import MoEGP, posterior_variance
from src.uncertainty.types import PredictiveDistribution


def predict_full(
    moe: MoEGP,
    state: int,
    pf: PooledFeature,
    model: Optional[MLPModel] = None,
) -> PredictiveDistribution:
    """Mean and covariance for one pooled feature in regime `state`.

    Args:
        moe: Expert mixture
        state: Active regime, selects the expert
        pf: Pooled features of the measured cloud
        model: Regressor providing the mean (the gated expert's model by default)

    Raises:
        UnknownRegime: If no expert serves the state
    """
    expert = moe.gate(state)
    model = model or expert.model
    x = np.asarray(pf.vector, dtype=float)
    mean = model.forward(x)
    variance = posterior_variance(expert, x)[0] + expert.sigma_n ** 2 + aleatoric_batch(expert, x)[0]
    return PredictiveDistribution(LieVector.from_array(mean), Covariance6.diagonal(variance))
