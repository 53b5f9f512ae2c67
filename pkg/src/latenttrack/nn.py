"""Parameterized building blocks on top of :mod:`latenttrack.autodiff`."""

from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LOGVAR_MIN = -12.0
LOGVAR_MAX = 12.0
LOG_2PI = math.log(2.0 * math.pi)


class Module:
    """Container that registers Tensor parameters and child modules by attribute."""

    # name prefixes of parameters unused at inference time
    inference_exclude: tuple[str, ...] = ()

    def __setattr__(self, key, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self.__dict__.setdefault("_params", OrderedDict())[key] = value
        elif isinstance(value, Module):
            self.__dict__.setdefault("_modules", OrderedDict())[key] = value
        object.__setattr__(self, key, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self.__dict__.get("_params", {}).items():
            yield prefix + name, p
        for name, m in self.__dict__.get("_modules", {}).items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.data.copy()) for n, p in self.named_parameters())

    def load_state_dict(self, state) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        unknown = set(state) - set(params)
        if missing or unknown:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unknown={sorted(unknown)}")
        for name, arr in state.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != params[name].shape:
                raise ValueError(f"{name}: shape {arr.shape} != {params[name].shape}")
            params[name].data = arr.copy()

    def count_params(self) -> dict[str, int]:
        return count_params(self)


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    """``y = x W^T + b`` with ``W`` stored as [out x in]."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        self.n_in, self.n_out = n_in, n_out
        self.weight = Tensor(_uniform(rng, (n_out, n_in), n_in), requires_grad=True)
        if bias:
            self.bias = Tensor(np.zeros(n_out), requires_grad=True)
        else:
            self.bias = None

    def __call__(self, x) -> Tensor:
        out = ad.matmul(x, ad.transpose(self.weight))
        return out + self.bias if self.bias is not None else out


class MLP(Module):
    """Stack of Linear layers with tanh between them (none after the last)."""

    def __init__(self, sizes: list[int], rng: np.random.Generator):
        self.sizes = list(sizes)
        self.n_layers = len(sizes) - 1
        for i in range(self.n_layers):
            setattr(self, f"l{i}", Linear(sizes[i], sizes[i + 1], rng))

    def layers(self) -> list[Linear]:
        return [getattr(self, f"l{i}") for i in range(self.n_layers)]

    def __call__(self, x) -> Tensor:
        layers = self.layers()
        for i, layer in enumerate(layers):
            x = layer(x)
            if i < len(layers) - 1:
                x = ad.tanh(x)
        return x


class GRUCell(Module):
    """Gated recurrent unit.

    Gate blocks are stacked in the order (reset, update, candidate)::

        r  = sigmoid(W_ir e + W_hr h + b_r)
        u  = sigmoid(W_iu e + W_hu h + b_u)
        n  = tanh(W_in e + r * (W_hn h) + b_n)
        h' = (1 - u) * h + u * n
    """

    def __init__(self, n_in: int, n_hidden: int, rng: np.random.Generator):
        self.n_in, self.n_hidden = n_in, n_hidden
        H = n_hidden
        self.w_input = Tensor(_uniform(rng, (3 * H, n_in), n_in), requires_grad=True)
        self.w_hidden = Tensor(_uniform(rng, (3 * H, H), H), requires_grad=True)
        self.bias = Tensor(np.zeros(3 * H), requires_grad=True)

    def __call__(self, h, e) -> Tensor:
        h, e = ad.as_tensor(h), ad.as_tensor(e)
        H = self.n_hidden
        if h.shape[-1] != H or e.shape[-1] != self.n_in:
            raise ad.ShapeError(
                f"gru_step: state {h.shape} / input {e.shape} do not match cell ({H}, {self.n_in})"
            )
        gi = ad.matmul(e, ad.transpose(self.w_input)) + self.bias
        gh = ad.matmul(h, ad.transpose(self.w_hidden))
        r = ad.sigmoid(gi[..., :H] + gh[..., :H])
        u = ad.sigmoid(gi[..., H : 2 * H] + gh[..., H : 2 * H])
        n = ad.tanh(gi[..., 2 * H :] + r * gh[..., 2 * H :])
        return h + u * (n - h)


def gru_step(cell: GRUCell, h_prev, e) -> Tensor:
    return cell(h_prev, e)


def split_gaussian(out: Tensor, dim: int) -> tuple[Tensor, Tensor]:
    """Split a ``2*dim`` head output into (mean, clamped logvar)."""
    mean = out[..., :dim]
    logvar = ad.clamp(out[..., dim:], LOGVAR_MIN, LOGVAR_MAX)
    return mean, logvar


class GaussianHead(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.mean_head = Linear(n_in, n_out, rng)
        self.logvar_head = Linear(n_in, n_out, rng)

    def __call__(self, x) -> tuple[Tensor, Tensor]:
        return self.mean_head(x), ad.clamp(self.logvar_head(x), LOGVAR_MIN, LOGVAR_MAX)


def gaussian_nll(y, mean, logvar) -> Tensor:
    """Negative Gaussian log-density summed over every entry."""
    y, mean, logvar = ad.as_tensor(y), ad.as_tensor(mean), ad.as_tensor(logvar)
    resid = y - mean
    terms = logvar + resid * resid * ad.exp(-logvar) + LOG_2PI
    return 0.5 * ad.tsum(terms)


def gaussian_kl(q_mean, q_logvar, p_mean, p_logvar) -> Tensor:
    """KL(q || p) between diagonal Gaussians, summed over every entry."""
    q_mean, q_logvar = ad.as_tensor(q_mean), ad.as_tensor(q_logvar)
    p_mean, p_logvar = ad.as_tensor(p_mean), ad.as_tensor(p_logvar)
    diff = q_mean - p_mean
    inv_p = ad.exp(-p_logvar)
    terms = (ad.exp(q_logvar) + diff * diff) * inv_p - 1.0 + p_logvar - q_logvar
    return 0.5 * ad.tsum(terms)


def init_params(sizes: list[int], seed: int) -> MLP:
    """Build an MLP with the standard initialization from a 64-bit seed."""
    return MLP(sizes, np.random.default_rng(seed))


def count_params(model: Module) -> dict[str, int]:
    """Total trainable parameters and those active at inference time."""
    total = 0
    inference = 0
    for name, p in model.named_parameters():
        total += p.size
        if not any(name.startswith(prefix) for prefix in model.inference_exclude):
            inference += p.size
    return {"total": total, "inference_time": inference}
