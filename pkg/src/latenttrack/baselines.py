"""Sequential (VRNN, DSSM) and static (MC-Dropout, BBB, Deep Ensembles) baselines."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .base import StreamModel, check_finite
from .mixture import Mixture, mixture_from_components
from .nn import (
    LOGVAR_MAX,
    LOGVAR_MIN,
    MLP,
    GRUCell,
    Linear,
    _uniform,
    gaussian_kl,
    gaussian_nll,
    split_gaussian,
)
from .state import FilterState


def _row(*parts) -> Tensor:
    """Concatenate vectors (Tensors or arrays) along the last axis, broadcasting batch axes."""
    ts = [ad.as_tensor(p) for p in parts]
    batch = ()
    for t in ts:
        if t.ndim > 1:
            batch = t.shape[:-1]
    if batch:
        ts = [ad.broadcast_to(t, batch + t.shape[-1:]) if t.ndim == 1 else t for t in ts]
    return ad.concat(ts, axis=-1)


class _LatentRnnBaseline(StreamModel):
    """Shared pieces of the two latent-variable recurrent baselines."""

    d_z: int
    d_h: int

    def _nll_kl(self, post, prior, mean, logvar, y):
        nll = gaussian_nll(np.reshape(float(np.asarray(y).reshape(-1)[0]), (1,)), mean, logvar)
        kl = gaussian_kl(post[0], post[1], prior[0], prior[1])
        return nll, kl

    def init_state(self, n_samples: int = 1) -> FilterState:
        return FilterState(h=np.zeros(self.d_h), t=0)

    def step_loss(self, state, x, y, beta, k, rng):
        elbo, h, diag = self.step_elbo(state.h, x, y, beta, rng=rng)
        return elbo, state.advance(h), diag


class VRNN(_LatentRnnBaseline):
    """Latent-in-the-dynamics baseline: the GRU consumes features of the sampled latent."""

    kind = "vrnn"

    def __init__(self, x_dim: int, d_z: int = 8, d_h: int = 64, d_feat: int = 8, hidden: int = 16, seed: int = 0):
        self._config = dict(x_dim=x_dim, d_z=d_z, d_h=d_h, d_feat=d_feat, hidden=hidden, seed=seed)
        self.x_dim, self.d_z, self.d_h = x_dim, d_z, d_h
        rng = np.random.default_rng(seed)
        self.phi_x = Linear(x_dim, d_feat, rng)
        self.phi_z = Linear(d_z, d_feat, rng)
        self.gru = GRUCell(2 * d_feat, d_h, rng)
        self.prior = MLP([d_h, hidden, 2 * d_z], rng)
        self.dec = MLP([d_h + d_z + x_dim, hidden, 2], rng)
        self.post = MLP([d_h + x_dim + 1, hidden, 2 * d_z], rng)

    def _advance(self, h_prev, x, z) -> Tensor:
        fx = ad.tanh(self.phi_x(x))
        fz = ad.tanh(self.phi_z(z))
        return self.gru(h_prev, _row(fx, fz))

    def _decode(self, h, z, x):
        return split_gaussian(self.dec(_row(h, z, x)), 1)

    def step_elbo(self, h_prev, x, y, beta, rng=None, eps=None):
        x = check_finite("x", x)
        y = check_finite("y", y).reshape(-1)
        h_prev = ad.as_tensor(h_prev)
        prior = split_gaussian(self.prior(h_prev), self.d_z)
        post = split_gaussian(self.post(_row(h_prev, x, y)), self.d_z)
        eps = rng.standard_normal(self.d_z) if eps is None else np.asarray(eps)
        z = post[0] + ad.exp(0.5 * post[1]) * eps
        h = self._advance(h_prev, x, z)
        mean, logvar = self._decode(h, z, x)
        nll, kl = self._nll_kl(post, prior, mean, logvar, y)
        return -nll - beta * kl, h, {"nll": nll.item(), "kl": kl.item()}

    def predict_step(self, state, x, k, rng) -> Mixture:
        x = check_finite("x", x)
        with no_grad():
            h_prev = Tensor(state.h)
            pm, plv = split_gaussian(self.prior(h_prev), self.d_z)
            z = pm.data + np.exp(0.5 * plv.data) * rng.standard_normal((k, self.d_z))
            h = self._advance(ad.broadcast_to(h_prev, (k, self.d_h)), x, Tensor(z))
            mean, logvar = self._decode(h, z, x)
        return mixture_from_components(mean.data[:, 0], np.exp(logvar.data[:, 0]))

    def update_step(self, state, x, y, rng, k: int = 1) -> FilterState:
        x = check_finite("x", x)
        y = check_finite("y", y).reshape(-1)
        with no_grad():
            h_prev = Tensor(state.h)
            qm, _ = split_gaussian(self.post(_row(h_prev, x, y)), self.d_z)
            h = self._advance(h_prev, x, qm)
        return state.advance(h.data)


class DSSM(_LatentRnnBaseline):
    """Observation-driven recurrence with an auxiliary latent on the emission.

    The decoder reads the summary *before* the current pair is absorbed, so a
    prediction of ``y_t`` never sees ``y_t``.
    """

    kind = "dssm"
    inference_exclude = ("post.",)

    def __init__(self, x_dim: int, d_z: int = 8, d_h: int = 64, d_e: int = 16, hidden: int = 16, seed: int = 0):
        self._config = dict(x_dim=x_dim, d_z=d_z, d_h=d_h, d_e=d_e, hidden=hidden, seed=seed)
        self.x_dim, self.d_z, self.d_h = x_dim, d_z, d_h
        rng = np.random.default_rng(seed)
        self.phi_e = Linear(x_dim + 1, d_e, rng)
        self.gru = GRUCell(d_e, d_h, rng)
        self.prior = MLP([d_h, hidden, 2 * d_z], rng)
        self.dec = MLP([d_h + d_z + x_dim, hidden, 2], rng)
        self.post = MLP([d_h + d_e, hidden, 2 * d_z], rng)

    def _encode(self, x, y) -> Tensor:
        return ad.tanh(self.phi_e(np.concatenate([x, y])))

    def step_elbo(self, h_prev, x, y, beta, rng=None, eps=None):
        x = check_finite("x", x)
        y = check_finite("y", y).reshape(-1)
        h_prev = ad.as_tensor(h_prev)
        prior = split_gaussian(self.prior(h_prev), self.d_z)
        e = self._encode(x, y)
        h = self.gru(h_prev, e)
        post = split_gaussian(self.post(_row(h_prev, e)), self.d_z)
        eps = rng.standard_normal(self.d_z) if eps is None else np.asarray(eps)
        z = post[0] + ad.exp(0.5 * post[1]) * eps
        mean, logvar = split_gaussian(self.dec(_row(h_prev, z, x)), 1)
        nll, kl = self._nll_kl(post, prior, mean, logvar, y)
        return -nll - beta * kl, h, {"nll": nll.item(), "kl": kl.item()}

    def predict_step(self, state, x, k, rng) -> Mixture:
        x = check_finite("x", x)
        with no_grad():
            h_prev = Tensor(state.h)
            pm, plv = split_gaussian(self.prior(h_prev), self.d_z)
            z = pm.data + np.exp(0.5 * plv.data) * rng.standard_normal((k, self.d_z))
            mean, logvar = split_gaussian(self.dec(_row(h_prev, z, x)), 1)
        return mixture_from_components(mean.data[:, 0], np.exp(logvar.data[:, 0]))

    def update_step(self, state, x, y, rng, k: int = 1) -> FilterState:
        x = check_finite("x", x)
        y = check_finite("y", y).reshape(-1)
        with no_grad():
            h = self.gru(Tensor(state.h), self._encode(x, y))
        return state.advance(h.data)


# -- static models ---------------------------------------------------------------


class StaticModel(StreamModel):
    """Window-trained regressor with no temporal state."""

    stateful = False
    uses_kl = False

    def init_state(self, n_samples: int = 1) -> FilterState:
        return FilterState(h=None, t=0)

    def update_step(self, state, x, y, rng, k: int = 1) -> FilterState:
        return state.advance(None)

    def window_nll(self, X: np.ndarray, Y: np.ndarray, rng) -> Tensor:
        """Per-row Gaussian NLL, shape (n,) (for ensembles summed over members)."""
        raise NotImplementedError

    def weight_kl(self) -> Tensor:
        return Tensor(0.0)

    def window_loss(self, X, Y, weights, beta: float, rng, n_data: int = 1) -> Tensor:
        """Recency-weighted mean NLL (+ ``beta * KL / n_data`` for weight-posterior models)."""
        X = check_finite("x", X)
        Y = check_finite("y", Y).reshape(-1)
        if X.shape[0] == 0:
            raise ValueError("empty window")
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        nll = self.window_nll(X, Y, rng)
        loss = ad.tsum(nll * w) * (1.0 / max(w.sum(), 1e-8))
        if self.uses_kl and beta > 0:
            loss = loss + self.weight_kl() * (beta / n_data)
        return loss


def _rowwise_nll(y, mean, logvar) -> Tensor:
    resid = Tensor(y) - mean
    return 0.5 * (logvar + resid * resid * ad.exp(-logvar) + np.log(2 * np.pi))


class MCDropout(StaticModel):
    kind = "mc_dropout"

    def __init__(self, x_dim: int, hidden: int = 160, p: float = 0.1, seed: int = 0):
        self._config = dict(x_dim=x_dim, hidden=hidden, p=p, seed=seed)
        self.x_dim, self.hidden, self.p = x_dim, hidden, p
        rng = np.random.default_rng(seed)
        self.l0 = Linear(x_dim, hidden, rng)
        self.l1 = Linear(hidden, 2, rng)

    def _mask(self, rng, shape) -> np.ndarray:
        if self.p <= 0:
            return np.ones(shape)
        return (rng.random(shape) >= self.p) / (1.0 - self.p)

    def _forward(self, X, mask):
        hid = ad.tanh(self.l0(X)) * mask
        out = self.l1(hid)
        return out[..., 0], ad.clamp(out[..., 1], LOGVAR_MIN, LOGVAR_MAX)

    def window_nll(self, X, Y, rng):
        mean, logvar = self._forward(X, self._mask(rng, (X.shape[0], self.hidden)))
        return _rowwise_nll(Y, mean, logvar)

    def predict_step(self, state, x, k, rng) -> Mixture:
        x = check_finite("x", x)
        with no_grad():
            mean, logvar = self._forward(x, self._mask(rng, (k, self.hidden)))
        return mixture_from_components(mean.data, np.exp(logvar.data))


class DeepEnsemble(StaticModel):
    """M independently initialized MLPs held as stacked parameter tensors."""

    kind = "deep_ensemble"

    def __init__(self, x_dim: int, hidden: int = 16, members: int = 10, seed: int = 0):
        self._config = dict(x_dim=x_dim, hidden=hidden, members=members, seed=seed)
        self.x_dim, self.hidden, self.members = x_dim, hidden, members
        rng = np.random.default_rng(seed)
        self.w1 = Tensor(_uniform(rng, (members, hidden, x_dim), x_dim), requires_grad=True)
        self.b1 = Tensor(np.zeros((members, hidden)), requires_grad=True)
        self.w2 = Tensor(_uniform(rng, (members, 2, hidden), hidden), requires_grad=True)
        self.b2 = Tensor(np.zeros((members, 2)), requires_grad=True)

    def _forward(self, X):
        # X: (n, x_dim) or (x_dim,) -> outputs (members, n) or (members,)
        X = np.atleast_2d(X)
        hid = ad.tanh(ad.matmul(X, ad.transpose(self.w1)) + ad.reshape(self.b1, (self.members, 1, self.hidden)))
        out = ad.matmul(hid, ad.transpose(self.w2)) + ad.reshape(self.b2, (self.members, 1, 2))
        return out[..., 0], ad.clamp(out[..., 1], LOGVAR_MIN, LOGVAR_MAX)

    def window_nll(self, X, Y, rng):
        mean, logvar = self._forward(X)
        return ad.tsum(_rowwise_nll(Y, mean, logvar), axis=0)

    def predict_step(self, state, x, k, rng) -> Mixture:
        x = check_finite("x", x)
        with no_grad():
            mean, logvar = self._forward(x)
        return mixture_from_components(mean.data[:, 0], np.exp(logvar.data[:, 0]))


class BayesByBackprop(StaticModel):
    """Mean-field Gaussian weights under a standard-normal prior.

    Sampling uses local reparameterization: pre-activations are drawn from
    their exact Gaussian marginals given the input, which matches drawing the
    weights themselves for a single input row.
    """

    kind = "bbb"
    uses_kl = True

    def __init__(self, x_dim: int, hidden: int = 84, init_logvar: float = -9.0, seed: int = 0):
        self._config = dict(x_dim=x_dim, hidden=hidden, init_logvar=init_logvar, seed=seed)
        self.x_dim, self.hidden = x_dim, hidden
        rng = np.random.default_rng(seed)
        shapes = {"w1": (hidden, x_dim), "b1": (hidden,), "w2": (2, hidden), "b2": (2,)}
        fan = {"w1": x_dim, "b1": x_dim, "w2": hidden, "b2": hidden}
        for name, shape in shapes.items():
            mu = _uniform(rng, shape, fan[name]) if name.startswith("w") else np.zeros(shape)
            setattr(self, name + "_mu", Tensor(mu, requires_grad=True))
            setattr(self, name + "_logvar", Tensor(np.full(shape, init_logvar), requires_grad=True))

    def _lv(self, name) -> Tensor:
        return ad.clamp(getattr(self, name + "_logvar"), LOGVAR_MIN, LOGVAR_MAX)

    def _sample_layer(self, inp, w, b, eps):
        m = ad.matmul(inp, ad.transpose(getattr(self, w + "_mu"))) + getattr(self, b + "_mu")
        v = ad.matmul(inp * inp, ad.transpose(ad.exp(self._lv(w)))) + ad.exp(self._lv(b))
        return m + ad.exp(0.5 * ad.log(v)) * eps

    def _forward(self, X, rng):
        n = X.shape[0]
        a1 = self._sample_layer(X, "w1", "b1", rng.standard_normal((n, self.hidden)))
        out = self._sample_layer(ad.tanh(a1), "w2", "b2", rng.standard_normal((n, 2)))
        return out[..., 0], ad.clamp(out[..., 1], LOGVAR_MIN, LOGVAR_MAX)

    def window_nll(self, X, Y, rng):
        mean, logvar = self._forward(np.atleast_2d(X), rng)
        return _rowwise_nll(Y, mean, logvar)

    def weight_kl(self) -> Tensor:
        total = Tensor(0.0)
        for name in ("w1", "b1", "w2", "b2"):
            mu = getattr(self, name + "_mu")
            total = total + gaussian_kl(mu, self._lv(name), np.zeros(mu.shape), np.zeros(mu.shape))
        return total

    def predict_step(self, state, x, k, rng) -> Mixture:
        x = check_finite("x", x)
        with no_grad():
            mean, logvar = self._forward(np.broadcast_to(x, (k, x.shape[-1])), rng)
        return mixture_from_components(mean.data, np.exp(logvar.data))
