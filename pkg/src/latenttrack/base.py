"""Common streaming interface shared by LatentTrack and every baseline."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .mixture import Mixture
from .nn import Module
from .state import FilterState


class VariantError(ValueError):
    """Operation invoked on a model variant that does not support it."""


def check_finite(name: str, value) -> np.ndarray:
    arr = np.asarray(value.data if isinstance(value, Tensor) else value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


class StreamModel(Module):
    """A model that predicts ``y_t`` from ``x_t`` and the past, then absorbs ``(x_t, y_t)``.

    Stateful models override :meth:`step_loss`; static models are trained on
    windows instead (see :mod:`latenttrack.baselines`).
    """

    kind: str = ""
    stateful: bool = True

    def config(self) -> dict:
        """Constructor keyword arguments (used by checkpoints)."""
        return dict(self._config)

    def init_state(self, n_samples: int = 1) -> FilterState:
        raise NotImplementedError

    def step_loss(self, state: FilterState, x, y, beta: float, k: int, rng: np.random.Generator):
        """Per-step ELBO under the live graph: ``(elbo, next_state, diagnostics)``."""
        raise NotImplementedError

    def predict_step(self, state: FilterState, x, k: int, rng: np.random.Generator) -> Mixture:
        raise NotImplementedError

    def update_step(self, state: FilterState, x, y, rng: np.random.Generator, k: int = 1) -> FilterState:
        raise NotImplementedError
