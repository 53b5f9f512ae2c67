"""Central finite-difference checks of reverse-mode gradients on tiny models."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .baselines import DSSM, VRNN, BayesByBackprop
from .model import LatentTrack

STEP = 1e-5
TOLERANCE = 1e-5


@dataclass
class GradCheckResult:
    name: str
    draws: int
    max_rel_error: float
    n_params: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a||, ||n||)`` (0 when both vanish)."""
    den = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    return 0.0 if den == 0 else float(np.linalg.norm(analytic - numeric) / den)


def check_gradients(params, loss_fn: Callable[[], ad.Tensor], step: float = STEP) -> float:
    """Compare backward() against central differences over every parameter entry."""
    for p in params:
        p.grad = None
    loss = loss_fn()
    ad.backward(loss)
    analytic = np.concatenate([np.zeros(p.size) if p.grad is None else p.grad.reshape(-1) for p in params])
    numeric = np.empty_like(analytic)
    i = 0
    with ad.no_grad():
        for p in params:
            flat = p.data.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + step
                up = loss_fn().item()
                flat[j] = orig - step
                down = loss_fn().item()
                flat[j] = orig
                numeric[i] = (up - down) / (2 * step)
                i += 1
    return relative_error(analytic, numeric)


# -- objectives on tiny models -------------------------------------------------------
# Each factory returns (parameters, loss closure) for one random draw.

X_DIM, D_Z, D_H = 2, 2, 3


def _inputs(rng):
    return rng.standard_normal(X_DIM), rng.standard_normal(1), 0.5 * rng.standard_normal(D_H)


def lt_unstructured(seed: int):
    rng = np.random.default_rng(seed)
    m = LatentTrack(X_DIM, d_z=D_Z, d_h=D_H, d_e=2, pred_hidden=2, variant="unstructured", seed=seed)
    x, y, h = _inputs(rng)
    eps = rng.standard_normal((2, D_Z))
    return m.parameters(), lambda: -m.step_elbo_unstructured(h, x, y, 2, 0.7, eps=eps)[0]


def lt_structured(seed: int):
    rng = np.random.default_rng(seed)
    m = LatentTrack(X_DIM, d_z=D_Z, d_h=D_H, d_e=2, pred_hidden=2, variant="structured", seed=seed)
    x, y, h = _inputs(rng)
    z_prev = rng.standard_normal((2, D_Z))
    eps = rng.standard_normal((2, D_Z))
    return m.parameters(), lambda: -m.step_elbo_structured(h, z_prev, x, y, 2, 0.7, eps=eps)[0]


def vrnn(seed: int):
    rng = np.random.default_rng(seed)
    m = VRNN(X_DIM, d_z=D_Z, d_h=D_H, d_feat=2, hidden=3, seed=seed)
    x, y, h = _inputs(rng)
    eps = rng.standard_normal(D_Z)
    return m.parameters(), lambda: -m.step_elbo(h, x, y, 0.7, eps=eps)[0]


def dssm(seed: int):
    rng = np.random.default_rng(seed)
    m = DSSM(X_DIM, d_z=D_Z, d_h=D_H, d_e=2, hidden=3, seed=seed)
    x, y, h = _inputs(rng)
    eps = rng.standard_normal(D_Z)
    return m.parameters(), lambda: -m.step_elbo(h, x, y, 0.7, eps=eps)[0]


def bbb(seed: int):
    rng = np.random.default_rng(seed)
    # a moderate posterior spread keeps the sampled pre-activation variance well conditioned
    m = BayesByBackprop(X_DIM, hidden=3, init_logvar=-3.0, seed=seed)
    X = rng.standard_normal((4, X_DIM))
    Y = rng.standard_normal(4)
    w = rng.uniform(0.2, 1.0, 4)
    return m.parameters(), lambda: m.window_loss(X, Y, w, 0.7, np.random.default_rng(seed), n_data=10)


OBJECTIVES = {
    "lt_unstructured": lt_unstructured,
    "lt_structured": lt_structured,
    "vrnn": vrnn,
    "dssm": dssm,
    "bbb": bbb,
}


def run_gradcheck(draws: int = 20, names=None, step: float = STEP) -> list[GradCheckResult]:
    out = []
    for name in names or OBJECTIVES:
        errs = []
        n = 0
        for d in range(draws):
            params, fn = OBJECTIVES[name](1000 + d)
            n = sum(p.size for p in params)
            errs.append(check_gradients(params, fn, step))
        out.append(GradCheckResult(name, draws, max(errs), n))
    return out
