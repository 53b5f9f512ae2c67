"""Online training schedules, credit weighting, KL annealing and Adam."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .base import StreamModel
from .state import FilterState

log = logging.getLogger(__name__)

TRAIN_LOG_SCHEMA = "latenttrack.train-log/1"
ALGORITHMS = ("chunk_stride", "exact_rolling", "approx_stride")


@dataclass
class TrainConfig:
    window: int = 256
    stride: int = 32
    recency: float = 0.9
    surprise_alpha: float = 0.0
    surprise_decay: float = 0.99
    beta_max: float = 1.0
    beta_warmup: int = 575
    k_train: int = 1
    epochs: int = 6
    seed: int = 0
    algorithm: str = "chunk_stride"
    lr: float = 1e-4
    grad_clip: float = 1.0
    detach_checkpoint: bool = True
    eps: float = 1e-8

    def __post_init__(self):
        if self.window < 1 or self.stride < 1:
            raise ValueError("window and stride must be >= 1")
        if not 0.0 < self.recency <= 1.0:
            raise ValueError("recency must lie in (0, 1]")
        if self.surprise_alpha < 0:
            raise ValueError("surprise_alpha must be >= 0")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")


# -- credit weighting and schedules -------------------------------------------------


def recency_weights(t: int, taus, lam: float) -> np.ndarray:
    """``lam ** (t - tau)`` for each tau <= t, as plain (gradient-free) floats."""
    taus = np.asarray(taus)
    if np.any(taus > t):
        raise ValueError("recency weights require tau <= t")
    return np.power(float(lam), (t - taus).astype(np.float64))


def surprise_weights(base, nll, ema, alpha: float) -> np.ndarray:
    """Scale recency weights by ``exp(alpha * max(nll - ema, 0))``."""
    excess = np.maximum(np.asarray(nll, dtype=np.float64) - np.asarray(ema, dtype=np.float64), 0.0)
    return np.asarray(base, dtype=np.float64) * np.exp(alpha * excess)


class NllEma:
    """Exponential moving average of per-step NLL; ``value`` is read before each update."""

    def __init__(self, decay: float = 0.99):
        self.decay = decay
        self.value: float | None = None

    def update(self, nll: float) -> float:
        """Return the EMA *before* absorbing ``nll``."""
        prev = nll if self.value is None else self.value
        if np.isfinite(nll):
            self.value = nll if self.value is None else self.decay * self.value + (1 - self.decay) * nll
        return prev


def beta_schedule(u: int, warmup: int, beta_max: float = 1.0) -> float:
    if u < 0:
        raise ValueError("update index must be >= 0")
    if warmup <= 0:
        return beta_max
    return beta_max * min(1.0, u / warmup)


class Adam:
    """Adam with global l2-norm gradient clipping.

    Parameters are replaced rather than modified in place so a graph built
    before the step keeps seeing the values it was built with.
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, clip: float | None = 1.0):
        self.params = list(params)
        self.lr, self.betas, self.eps, self.clip = lr, betas, eps, clip
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0
        self.skipped = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> dict:
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
        if not np.isfinite(norm):
            self.skipped += 1
            log.warning("non-finite gradient norm; update skipped")
            return {"grad_norm": norm, "skipped": True}
        scale = 1.0
        if self.clip is not None and norm > self.clip:
            scale = self.clip / norm
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1 - b1**self.step_count
        c2 = 1 - b2**self.step_count
        for i, (p, g) in enumerate(zip(self.params, grads)):
            g = g * scale
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            p.data = p.data - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
        return {"grad_norm": norm, "skipped": False}

    def state_dict(self) -> dict:
        return {"m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v], "step": self.step_count}


def adam_step(params, grads, state: dict, lr: float, clip: float) -> dict:
    """Functional wrapper: assign ``grads`` and apply one step of the Adam held in ``state``."""
    opt = state.setdefault("opt", Adam(params, lr=lr, clip=clip))
    for p, g in zip(params, grads):
        p.grad = np.asarray(g, dtype=np.float64)
    return opt.step()


# -- training log ------------------------------------------------------------------


@dataclass
class StepRecord:
    step: int
    epoch: int
    elbo: float
    nll: float
    kl: float
    beta: float
    grad_norm: float | None = None
    wall_ms: float = 0.0


@dataclass
class TrainLog:
    records: list[StepRecord] = field(default_factory=list)
    update_losses: list[float] = field(default_factory=list)
    n_updates: int = 0
    n_skipped: int = 0

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps({"schema": TRAIN_LOG_SCHEMA}) + "\n")
            for r in self.records:
                fh.write(json.dumps(asdict(r), allow_nan=True) + "\n")

    @staticmethod
    def load(path) -> "TrainLog":
        out = TrainLog()
        with open(path) as fh:
            header = json.loads(fh.readline())
            if header.get("schema") != TRAIN_LOG_SCHEMA:
                raise ValueError(f"unexpected training-log schema {header!r}")
            for line in fh:
                out.records.append(StepRecord(**json.loads(line)))
        return out

    def elbo_series(self) -> np.ndarray:
        return np.array([r.elbo for r in self.records])


# -- shared machinery ----------------------------------------------------------------


def step_rng(seed: int, epoch: int, t: int) -> np.random.Generator:
    """Noise source keyed by (seed, epoch, step) so recomputed steps redraw identical noise."""
    return np.random.default_rng([seed, epoch, t])


class _Trainer:
    def __init__(self, model: StreamModel, cfg: TrainConfig, warmup: int | None = None):
        self.model, self.cfg = model, cfg
        self.opt = Adam(model.parameters(), lr=cfg.lr, clip=cfg.grad_clip)
        self.warmup = cfg.beta_warmup if warmup is None else warmup
        self.log = TrainLog()
        self.ema = NllEma(cfg.surprise_decay)
        self.nll_hist: dict[int, tuple[float, float]] = {}

    @property
    def beta(self) -> float:
        return beta_schedule(self.opt.step_count, self.warmup, self.cfg.beta_max)

    def record(self, epoch, t, elbo, diag, beta, t0) -> None:
        nll = diag["nll"]
        self.nll_hist[t] = (nll, self.ema.update(nll))
        self.log.records.append(
            StepRecord(
                step=t,
                epoch=epoch,
                elbo=float(elbo.item()),
                nll=nll,
                kl=diag["kl"],
                beta=beta,
                wall_ms=(time.perf_counter() - t0) * 1e3,
            )
        )

    def weights(self, t_end: int, taus: list[int]) -> np.ndarray:
        w = recency_weights(t_end, np.asarray(taus), self.cfg.recency)
        if self.cfg.surprise_alpha > 0:
            nll, ema = zip(*(self.nll_hist[tau] for tau in taus))
            w = surprise_weights(w, nll, ema, self.cfg.surprise_alpha)
        return w

    def update(self, elbos: list[Tensor], taus: list[int], t_end: int) -> float:
        """One optimizer step on ``-sum(w * elbo) / max(sum(w), eps)``; returns that loss."""
        w = self.weights(t_end, taus)
        acc = elbos[0] * float(w[0])
        for e, wi in zip(elbos[1:], w[1:]):
            acc = acc + e * float(wi)
        loss = -acc * (1.0 / max(float(w.sum()), self.cfg.eps))
        value = loss.item()
        self.log.update_losses.append(value)
        if not np.isfinite(value):
            self.log.n_skipped += 1
            log.warning("non-finite window loss at t=%d; update skipped", t_end)
            return value
        self.opt.zero_grad()
        ad.backward(loss)
        info = self.opt.step()
        if info["skipped"]:
            self.log.n_skipped += 1
        else:
            self.log.n_updates += 1
        if self.log.records:
            self.log.records[-1].grad_norm = info["grad_norm"]
        return value


def _stream_arrays(stream):
    x = np.asarray(stream.x, dtype=np.float64)
    y = np.asarray(stream.y, dtype=np.float64).reshape(-1)
    if len(y) == 0:
        raise ValueError("empty training stream")
    return x, y


# -- Algorithm: chunked TBPTT ---------------------------------------------------------


def train_chunk_stride(model: StreamModel, stream, cfg: TrainConfig, trainer: _Trainer | None = None):
    """Accumulate weighted per-step ELBOs over W-step chunks; one update per chunk.

    The recurrent state is detached at each chunk boundary. A trailing partial
    chunk is flushed with an update at the final step.
    """
    x, y = _stream_arrays(stream)
    T = len(y)
    tr = trainer or _Trainer(model, cfg)
    for epoch in range(cfg.epochs):
        state = model.init_state(cfg.k_train)
        elbos, taus = [], []
        for t in range(T):
            t0 = time.perf_counter()
            beta = tr.beta
            elbo, state, diag = model.step_loss(state, x[t], y[t], beta, cfg.k_train, step_rng(cfg.seed, epoch, t))
            tr.record(epoch, t, elbo, diag, beta, t0)
            elbos.append(elbo)
            taus.append(t)
            if len(elbos) == cfg.window or t == T - 1:
                tr.update(elbos, taus, t)
                elbos, taus = [], []
                state = state.detached()
    return model, tr.log


# -- Algorithm: exact rolling window -------------------------------------------------


def train_exact_rolling(model: StreamModel, stream, cfg: TrainConfig, trainer: _Trainer | None = None):
    """Every S steps (and at the end) recompute the last W steps under current parameters.

    Detached states from a no-graph pass seed each recompute; with the detach
    checkpoint enabled the recomputed state replaces the stored one.
    """
    x, y = _stream_arrays(stream)
    T = len(y)
    W, S = cfg.window, cfg.stride
    tr = trainer or _Trainer(model, cfg)
    for epoch in range(cfg.epochs):
        det: dict[int, FilterState] = {-1: model.init_state(cfg.k_train)}
        for t in range(T):
            with no_grad():
                _, det[t], _ = model.step_loss(det[t - 1], x[t], y[t], tr.beta, cfg.k_train, step_rng(cfg.seed, epoch, t))
            det.pop(t - W - 1, None)
            if (t + 1) % S == 0 or t == T - 1:
                t_min = max(0, t - W + 1)
                state = det[t_min - 1]
                beta = tr.beta
                elbos, taus = [], []
                for tau in range(t_min, t + 1):
                    t0 = time.perf_counter()
                    elbo, state, diag = model.step_loss(state, x[tau], y[tau], beta, cfg.k_train, step_rng(cfg.seed, epoch, tau))
                    if tau == t:
                        tr.record(epoch, tau, elbo, diag, beta, t0)
                    else:
                        tr.nll_hist.setdefault(tau, (diag["nll"], diag["nll"]))
                    elbos.append(elbo)
                    taus.append(tau)
                tr.update(elbos, taus, t)
                if cfg.detach_checkpoint:
                    det[t] = state.detached()
    return model, tr.log


# -- Algorithm: micro-steps + window-end TBPTT ---------------------------------------


def train_approx_stride(model: StreamModel, stream, cfg: TrainConfig, trainer: _Trainer | None = None):
    """Short-horizon micro-steps every S steps, plus a full recompute at each window end."""
    x, y = _stream_arrays(stream)
    T = len(y)
    W, S = cfg.window, cfg.stride
    tr = trainer or _Trainer(model, cfg)
    for epoch in range(cfg.epochs):
        start_state = model.init_state(cfg.k_train)  # detached state entering the window
        state = start_state
        t0_idx = 0
        for t in range(T):
            rng_t = step_rng(cfg.seed, epoch, t)
            pos = t - t0_idx + 1
            beta = tr.beta
            if pos % S == 0 and pos < W:
                tick = time.perf_counter()
                elbo, _, diag = model.step_loss(state.detached(), x[t], y[t], beta, cfg.k_train, rng_t)
                tr.record(epoch, t, elbo, diag, beta, tick)
                tr.update([elbo], [t], t)
            with no_grad():
                _, state, diag = model.step_loss(state, x[t], y[t], beta, cfg.k_train, rng_t)
            if not (pos % S == 0 and pos < W):
                tr.nll_hist[t] = (diag["nll"], tr.ema.update(diag["nll"]))
            if pos == W or t == T - 1:
                t_min = t0_idx
                rstate = start_state
                beta = tr.beta
                elbos, taus = [], []
                for tau in range(t_min, t + 1):
                    tick = time.perf_counter()
                    elbo, rstate, diag = model.step_loss(rstate, x[tau], y[tau], beta, cfg.k_train, step_rng(cfg.seed, epoch, tau))
                    if tau == t:
                        tr.record(epoch, tau, elbo, diag, beta, tick)
                    elbos.append(elbo)
                    taus.append(tau)
                tr.update(elbos, taus, t)
                state = rstate.detached()
                start_state = state
                t0_idx = t + 1
    return model, tr.log


def train_stateful(model: StreamModel, stream, cfg: TrainConfig):
    fn = {
        "chunk_stride": train_chunk_stride,
        "exact_rolling": train_exact_rolling,
        "approx_stride": train_approx_stride,
    }[cfg.algorithm]
    return fn(model, stream, cfg)


# -- static baselines ----------------------------------------------------------------


def static_fit_window(model, X, Y, weights, opt: Adam, beta: float, rng, n_data: int = 1) -> float:
    """One optimizer step on the recency-weighted window objective."""
    loss = model.window_loss(X, Y, weights, beta, rng, n_data=n_data)
    value = loss.item()
    if not np.isfinite(value):
        return value
    opt.zero_grad()
    ad.backward(loss)
    opt.step()
    return value


def sliding_windows(n: int, window: int, stride: int) -> list[tuple[int, int]]:
    """Half-open [start, end) windows of length <= W ending every S steps (and at n)."""
    ends = list(range(stride, n + 1, stride))
    if not ends or ends[-1] != n:
        ends.append(n)
    return [(max(0, e - window), e) for e in ends]


def train_static(model, stream, cfg: TrainConfig, warmup: int = 4600):
    """Sliding-window training for models without temporal state."""
    x, y = _stream_arrays(stream)
    opt = Adam(model.parameters(), lr=cfg.lr, clip=cfg.grad_clip)
    tlog = TrainLog()
    for epoch in range(cfg.epochs):
        for i, (s, e) in enumerate(sliding_windows(len(y), cfg.window, cfg.stride)):
            tick = time.perf_counter()
            beta = beta_schedule(opt.step_count, warmup, cfg.beta_max) if model.uses_kl else 0.0
            w = recency_weights(e - 1, np.arange(s, e), cfg.recency)
            loss = static_fit_window(model, x[s:e], y[s:e], w, opt, beta, step_rng(cfg.seed, epoch, i), n_data=len(y))
            tlog.update_losses.append(loss)
            tlog.records.append(
                StepRecord(step=e - 1, epoch=epoch, elbo=-loss, nll=loss, kl=0.0, beta=beta,
                           grad_norm=None, wall_ms=(time.perf_counter() - tick) * 1e3)
            )
    tlog.n_updates = opt.step_count
    tlog.n_skipped = opt.skipped
    return model, tlog
