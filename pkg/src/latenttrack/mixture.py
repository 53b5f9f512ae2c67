"""Equal-weight Gaussian mixtures built from K predictive components."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, ndtr

from .nn import LOG_2PI


@dataclass(frozen=True)
class Mixture:
    means: np.ndarray  # (K,)
    variances: np.ndarray  # (K,)
    mix_mean: float
    var_alea: float
    var_epi: float
    var_tot: float

    @property
    def k(self) -> int:
        return self.means.shape[0]

    def nll(self, y: float) -> float:
        return mixture_nll(y, self.means, self.variances)

    def cdf(self, y: float) -> float:
        return float(np.mean(ndtr((y - self.means) / np.sqrt(self.variances))))


def mixture_from_components(means, variances) -> Mixture:
    """Combine component moments by the law of total variance.

    Epistemic variance is the population (divide-by-K) variance of the
    component means; ``var_tot`` is formed as the sum of the two parts so the
    decomposition holds exactly in floating point.
    """
    means = np.asarray(means, dtype=np.float64).reshape(-1)
    variances = np.asarray(variances, dtype=np.float64).reshape(-1)
    mix_mean = float(np.mean(means))
    var_alea = float(np.mean(variances))
    var_epi = float(np.mean((means - mix_mean) ** 2))
    return Mixture(means, variances, mix_mean, var_alea, var_epi, var_alea + var_epi)


def mixture_nll(y: float, means, variances) -> float:
    """``-log((1/K) sum_k N(y; m_k, v_k))`` via log-sum-exp."""
    means = np.asarray(means, dtype=np.float64).reshape(-1)
    variances = np.asarray(variances, dtype=np.float64).reshape(-1)
    logp = -0.5 * (np.log(variances) + (y - means) ** 2 / variances + LOG_2PI)
    return float(-(logsumexp(logp) - np.log(means.shape[0])))
