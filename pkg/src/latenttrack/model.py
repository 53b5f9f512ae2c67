"""LatentTrack: latent filtering where the latent generates predictor weights.

A GRU summarizes encoded observations. Linear heads on the summary give the
causal prior (or, in the structured variant, a transition kernel that also
sees the previous latent) and the amortized posterior. A linear hypernetwork
maps each latent sample to the full weight vector of a small tanh MLP with a
Gaussian mean/log-variance output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .base import StreamModel, VariantError, check_finite
from .mixture import Mixture, mixture_from_components
from .nn import (
    LOGVAR_MAX,
    LOGVAR_MIN,
    GRUCell,
    Linear,
    Module,
    gaussian_kl,
    gaussian_nll,
    split_gaussian,
)
from .state import FilterState

VARIANTS = ("structured", "unstructured")


class LatentBelief(NamedTuple):
    mean: Tensor
    logvar: Tensor

    def numpy(self) -> tuple[np.ndarray, np.ndarray]:
        return self.mean.data, self.logvar.data


def predictor_manifest(x_dim: int, hidden: int) -> list[tuple[str, tuple[int, ...]]]:
    """Names and shapes of the generated predictor's tensors, in theta order."""
    return [
        ("w1", (hidden, x_dim)),
        ("b1", (hidden,)),
        ("w_mean", (1, hidden)),
        ("b_mean", (1,)),
        ("w_logvar", (1, hidden)),
        ("b_logvar", (1,)),
    ]


def predictor_forward(x, w1, b1, w_mean, b_mean, w_logvar, b_logvar) -> tuple[Tensor, Tensor]:
    """One-hidden-layer tanh MLP with a Gaussian head.

    Weight tensors may carry leading batch axes (one predictor per latent
    sample); ``x`` is a single input vector.
    """
    hid = ad.tanh(ad.matmul(w1, x) + b1)
    col = ad.reshape(hid, hid.shape + (1,))
    batch = hid.shape[:-1]
    mean = ad.reshape(ad.matmul(w_mean, col), batch + (1,)) + b_mean
    logvar = ad.reshape(ad.matmul(w_logvar, col), batch + (1,)) + b_logvar
    return mean, ad.clamp(logvar, LOGVAR_MIN, LOGVAR_MAX)


@dataclass
class GeneratedPredictor:
    theta: Tensor  # (..., n_theta)
    manifest: list[tuple[str, tuple[int, ...]]]

    def __post_init__(self):
        total = sum(int(np.prod(s)) for _, s in self.manifest)
        if self.theta.shape[-1] != total:
            raise ad.ShapeError(f"theta length {self.theta.shape[-1]} != manifest total {total}")

    def tensors(self) -> dict[str, Tensor]:
        batch = self.theta.shape[:-1]
        out = {}
        off = 0
        for name, shape in self.manifest:
            n = int(np.prod(shape))
            out[name] = ad.reshape(self.theta[..., off : off + n], batch + tuple(shape))
            off += n
        return out

    def __call__(self, x) -> tuple[Tensor, Tensor]:
        return predictor_forward(x, **self.tensors())


class PredictorNet(Module):
    """Directly parameterized predictor with the generated network's layout."""

    def __init__(self, weights: dict[str, np.ndarray]):
        for name, arr in weights.items():
            setattr(self, name, Tensor(arr, requires_grad=True))

    def __call__(self, x):
        return predictor_forward(x, **{n: p for n, p in self.named_parameters()})


class LatentTrack(StreamModel):
    kind = "latenttrack"

    def __init__(
        self,
        x_dim: int,
        d_z: int = 8,
        d_h: int = 64,
        d_e: int = 8,
        pred_hidden: int = 4,
        variant: str = "structured",
        seed: int = 0,
    ):
        if variant not in VARIANTS:
            raise VariantError(f"unknown variant {variant!r}")
        self._config = dict(
            x_dim=x_dim, d_z=d_z, d_h=d_h, d_e=d_e, pred_hidden=pred_hidden, variant=variant, seed=seed
        )
        self.x_dim, self.d_z, self.d_h, self.d_e = x_dim, d_z, d_h, d_e
        self.variant = variant
        self.manifest = predictor_manifest(x_dim, pred_hidden)
        self.n_theta = sum(int(np.prod(s)) for _, s in self.manifest)
        rng = np.random.default_rng(seed)

        self.enc = Linear(x_dim + 1, d_e, rng)
        self.gru = GRUCell(d_e, d_h, rng)
        if variant == "structured":
            self.trans_head = Linear(d_h + d_z, 2 * d_z, rng)
        else:
            self.prior_head = Linear(d_h, 2 * d_z, rng)
        self.post_head = Linear(d_h, 2 * d_z, rng)
        self.hyper = Linear(d_z, self.n_theta, rng)
        self.hyper.weight.data *= self._hyper_row_scale()[:, None]
        # the posterior head only feeds the carried latent of the structured path
        self.inference_exclude = ("post_head",) if variant == "unstructured" else ()

    @property
    def structured(self) -> bool:
        return self.variant == "structured"

    def _hyper_row_scale(self) -> np.ndarray:
        # each generated entry gets the fan-in scale of the predictor layer it feeds
        hidden = self.manifest[0][1][0]
        scale = []
        for name, shape in self.manifest:
            fan_in = self.x_dim if name in ("w1", "b1") else hidden
            scale.extend([1.0 / math.sqrt(fan_in)] * int(np.prod(shape)))
        return np.asarray(scale)

    # -- building blocks ---------------------------------------------------------
    def encode_step(self, x, y) -> Tensor:
        x = check_finite("x", x)
        y = check_finite("y", y).reshape(-1)
        return ad.tanh(self.enc(Tensor(np.concatenate([x, y]))))

    def prior_belief(self, h_prev) -> LatentBelief:
        if self.structured:
            raise VariantError("structured LatentTrack has no marginal prior head; use transition_belief")
        return LatentBelief(*split_gaussian(self.prior_head(h_prev), self.d_z))

    def posterior_belief(self, h) -> LatentBelief:
        return LatentBelief(*split_gaussian(self.post_head(h), self.d_z))

    def transition_belief(self, h_prev, z_prev) -> LatentBelief:
        if not self.structured:
            raise VariantError("transition_belief requires the structured variant")
        h_prev, z_prev = ad.as_tensor(h_prev), ad.as_tensor(z_prev)
        if z_prev.ndim > 1:
            h_prev = ad.broadcast_to(h_prev, z_prev.shape[:-1] + (self.d_h,))
        inp = ad.concat([h_prev, z_prev], axis=-1)
        return LatentBelief(*split_gaussian(self.trans_head(inp), self.d_z))

    @staticmethod
    def sample_latent(belief: LatentBelief, eps) -> Tensor:
        return belief.mean + ad.exp(0.5 * belief.logvar) * eps

    def generate_weights(self, z) -> GeneratedPredictor:
        return GeneratedPredictor(self.hyper(z), self.manifest)

    def predict(self, predictor: GeneratedPredictor, x) -> tuple[Tensor, Tensor]:
        return predictor(Tensor(check_finite("x", x)))

    def _expected_nll(self, belief: LatentBelief, x, y, eps) -> tuple[Tensor, Tensor]:
        z = self.sample_latent(belief, eps)
        mean, logvar = self.predict(self.generate_weights(z), x)
        k = eps.shape[0]
        y_b = np.full((k, 1), float(np.asarray(y).reshape(-1)[0]))
        return gaussian_nll(y_b, mean, logvar) * (1.0 / k), z

    # -- objectives ----------------------------------------------------------------
    def step_elbo_unstructured(self, h_prev, x, y, k: int, beta: float, rng=None, eps=None):
        """Filtering ELBO with KL to the marginal one-step prior."""
        if k < 1:
            raise ValueError("K must be >= 1")
        if self.structured:
            raise VariantError("step_elbo_unstructured requires the unstructured variant")
        h_prev = ad.as_tensor(h_prev)
        prior = self.prior_belief(h_prev)
        h = self.gru(h_prev, self.encode_step(x, y))
        post = self.posterior_belief(h)
        eps = rng.standard_normal((k, self.d_z)) if eps is None else np.asarray(eps)
        nll, z = self._expected_nll(post, x, y, eps)
        kl = gaussian_kl(post.mean, post.logvar, prior.mean, prior.logvar)
        elbo = -nll - beta * kl
        return elbo, h, {"nll": nll.item(), "kl": kl.item(), "z": z}

    def step_elbo_structured(self, h_prev, z_prev, x, y, k: int, beta: float, rng=None, eps=None):
        """ELBO whose KL targets the transition kernel, averaged over previous-latent samples."""
        if k < 1:
            raise ValueError("K must be >= 1")
        if not self.structured:
            raise VariantError("step_elbo_structured requires the structured variant")
        h_prev, z_prev = ad.as_tensor(h_prev), ad.as_tensor(z_prev)
        if z_prev.ndim == 1:
            z_prev = ad.reshape(z_prev, (1, self.d_z))
        trans = self.transition_belief(h_prev, z_prev)
        h = self.gru(h_prev, self.encode_step(x, y))
        post = self.posterior_belief(h)
        eps = rng.standard_normal((k, self.d_z)) if eps is None else np.asarray(eps)
        nll, z = self._expected_nll(post, x, y, eps)
        m = z_prev.shape[0]
        kl = gaussian_kl(post.mean, post.logvar, trans.mean, trans.logvar) * (1.0 / m)
        elbo = -nll - beta * kl
        return elbo, h, z, {"nll": nll.item(), "kl": kl.item()}

    # -- streaming interface -------------------------------------------------------
    def init_state(self, n_samples: int = 1) -> FilterState:
        z = np.zeros((n_samples, self.d_z)) if self.structured else None
        return FilterState(h=np.zeros(self.d_h), z=z, t=0)

    def step_loss(self, state, x, y, beta, k, rng):
        if self.structured:
            z_prev = state.z if state.z is not None else np.zeros((1, self.d_z))
            elbo, h, z, diag = self.step_elbo_structured(state.h, z_prev, x, y, k, beta, rng=rng)
            return elbo, state.advance(h, z), diag
        elbo, h, diag = self.step_elbo_unstructured(state.h, x, y, k, beta, rng=rng)
        diag.pop("z")
        return elbo, state.advance(h), diag

    def latent_belief_for_prediction(self, state: FilterState) -> LatentBelief:
        """Causal belief over ``z_t`` (one row per carried sample when structured)."""
        if self.structured:
            return self.transition_belief(state.h, state.z)
        return self.prior_belief(state.h)

    def predictive_mixture(self, state: FilterState, x, k: int, rng) -> Mixture:
        if k < 1:
            raise ValueError("K must be >= 1")
        with no_grad():
            belief = self.latent_belief_for_prediction(state)
            mean, logvar = belief.mean.data, belief.logvar.data
            eps = rng.standard_normal((k, self.d_z))
            if mean.ndim == 2 and mean.shape[0] != k:
                # carried samples are recycled cyclically onto the K components
                idx = np.arange(k) % mean.shape[0]
                mean, logvar = mean[idx], logvar[idx]
            z = mean + np.exp(0.5 * logvar) * eps
            mu, lv = self.predict(self.generate_weights(Tensor(z)), x)
        return mixture_from_components(mu.data[:, 0], np.exp(lv.data[:, 0]))

    def predict_step(self, state, x, k, rng) -> Mixture:
        return self.predictive_mixture(state, x, k, rng)

    def update_step(self, state, x, y, rng, k: int = 1) -> FilterState:
        with no_grad():
            h = self.gru(ad.as_tensor(state.h), self.encode_step(x, y))
            z = None
            if self.structured:
                post = self.posterior_belief(h)
                n = state.z.shape[0] if state.z is not None else k
                z = self.sample_latent(post, rng.standard_normal((n, self.d_z))).data
        return state.advance(h.data, z)
