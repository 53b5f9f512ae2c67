"""Gradient-free causal evaluation over a held-out stream."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .mixture import Mixture
from .state import FilterState

SERIES_SCHEMA = "latenttrack.metric-series/1"
SERIES_COLUMNS = ("t", "y", "mix_mean", "var_alea", "var_epi", "var_tot", "nll", "mse")


class OrderingError(ValueError):
    """Stream steps are not strictly increasing."""


@dataclass
class MetricSeries:
    t: np.ndarray
    y: np.ndarray
    mix_mean: np.ndarray
    var_alea: np.ndarray
    var_epi: np.ndarray
    var_tot: np.ndarray
    nll: np.ndarray
    mse: np.ndarray
    manifest: dict = field(default_factory=dict)
    # per-step component moments, kept in memory for PIT; not persisted
    components: list[tuple[np.ndarray, np.ndarray]] | None = None

    def __len__(self) -> int:
        return len(self.t)

    def columns(self) -> dict[str, np.ndarray]:
        return {c: getattr(self, c) for c in SERIES_COLUMNS}

    def save(self, path) -> None:
        path = Path(path)
        with path.open("w") as fh:
            fh.write(f"# schema: {SERIES_SCHEMA}\n")
            fh.write("\t".join(SERIES_COLUMNS) + "\n")
            cols = [self.t] + [getattr(self, c) for c in SERIES_COLUMNS[1:]]
            for i in range(len(self)):
                fh.write(str(int(cols[0][i])) + "\t" + "\t".join(repr(float(c[i])) for c in cols[1:]) + "\n")
        path.with_suffix(".json").write_text(json.dumps(self.manifest, indent=2, sort_keys=True) + "\n")
        if self.components is not None:
            means = np.stack([m for m, _ in self.components])
            variances = np.stack([v for _, v in self.components])
            np.savez(path.with_suffix(".components.npz"), means=means, variances=variances)

    @classmethod
    def load(cls, path) -> "MetricSeries":
        path = Path(path)
        with path.open() as fh:
            schema = fh.readline().strip()
            if schema != f"# schema: {SERIES_SCHEMA}":
                raise ValueError(f"{path}: unexpected schema line {schema!r}")
            header = fh.readline().strip().split("\t")
            if tuple(header) != SERIES_COLUMNS:
                raise ValueError(f"{path}: unexpected columns {header}")
            data = np.loadtxt(fh, delimiter="\t", ndmin=2)
        manifest_path = path.with_suffix(".json")
        manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else {}
        comps = None
        comp_path = path.with_suffix(".components.npz")
        if comp_path.exists():
            with np.load(comp_path) as z:
                comps = list(zip(z["means"], z["variances"]))
        return cls(data[:, 0].astype(np.int64), *(data[:, i].copy() for i in range(1, 8)), manifest=manifest,
                   components=comps)


EVAL_TAG, WARM_TAG = 1_000_003, 1_000_033


def eval_rng(seed: int, t: int, tag: int = EVAL_TAG) -> np.random.Generator:
    return np.random.default_rng([seed, tag, t])


def stream_evaluate(
    model,
    stream,
    k: int = 100,
    seed: int = 0,
    manifest: dict | None = None,
    state: FilterState | None = None,
    after_step: Callable[[int, np.ndarray, float], None] | None = None,
    keep_components: bool = True,
) -> MetricSeries:
    """Predict each ``y_t`` from the causal prior path, score it, then absorb ``(x_t, y_t)``.

    ``state`` defaults to a fresh state; passing the state reached at the end
    of a warm-up pass continues filtering from there. ``after_step`` is called
    once the state update for step ``t`` is done (used for online retraining
    of static models).
    """
    steps = np.asarray(stream.t)
    if len(steps) > 1 and np.any(np.diff(steps) <= 0):
        bad = int(np.argmax(np.diff(steps) <= 0)) + 1
        raise OrderingError(f"stream step {bad} (t={steps[bad]}) does not follow t={steps[bad - 1]}")
    x = np.asarray(stream.x, dtype=np.float64)
    y = np.asarray(stream.y, dtype=np.float64).reshape(-1)
    T = len(y)
    out = {c: np.empty(T) for c in SERIES_COLUMNS[1:]}
    comps = [] if keep_components else None
    state = model.init_state(k) if state is None else state
    for i in range(T):
        rng = eval_rng(seed, int(steps[i]))
        mix: Mixture = model.predict_step(state, x[i], k, rng)
        out["y"][i] = y[i]
        out["mix_mean"][i] = mix.mix_mean
        out["var_alea"][i] = mix.var_alea
        out["var_epi"][i] = mix.var_epi
        out["var_tot"][i] = mix.var_tot
        out["nll"][i] = mix.nll(y[i])
        out["mse"][i] = (y[i] - mix.mix_mean) ** 2
        if comps is not None:
            comps.append((mix.means, mix.variances))
        state = model.update_step(state, x[i], y[i], rng, k)
        if after_step is not None:
            after_step(i, x[i], y[i])
    return MetricSeries(steps.astype(np.int64), **out, manifest=dict(manifest or {}), components=comps)


def warm_state(model, stream, k: int, seed: int = 0) -> FilterState:
    """Filter (without predicting) through ``stream`` and return the final state."""
    state = model.init_state(k)
    x = np.asarray(stream.x, dtype=np.float64)
    y = np.asarray(stream.y, dtype=np.float64).reshape(-1)
    for i in range(len(y)):
        state = model.update_step(state, x[i], y[i], eval_rng(seed, i, WARM_TAG), k)
    return FilterState(h=state.h, z=state.z, t=0)


@dataclass
class CostProbe:
    horizons: list[int]
    state_bytes: list[int]
    step_seconds: list[float]
    step_counter: list[int]

    @property
    def latency_ratio(self) -> float:
        return self.step_seconds[-1] / self.step_seconds[0]


def per_step_cost_probe(model, x_dim: int, horizons=(100, 1000, 10_000), k: int = 100, seed: int = 0,
                        timing_steps: int = 200) -> CostProbe:
    """Run the predict/update loop and measure state size and per-step time at each horizon.

    Per-step time at a horizon is the median over ``timing_steps`` steps taken
    right after the horizon is reached.
    """
    rng = np.random.default_rng(seed)
    horizons = sorted(int(h) for h in horizons)
    state = model.init_state(k)
    sizes, times, counters = [], [], []
    t = 0

    def one_step(state, t):
        xt = rng.standard_normal(x_dim)
        yt = float(rng.standard_normal())
        r = eval_rng(seed, t)
        model.predict_step(state, xt, k, r)
        return model.update_step(state, xt, yt, r, k)

    for hz in horizons:
        while t < hz:
            state = one_step(state, t)
            t += 1
        counters.append(state.t)
        sizes.append(len(state.to_bytes()))
        samples = []
        for _ in range(timing_steps):
            tick = time.perf_counter()
            state = one_step(state, t)
            samples.append(time.perf_counter() - tick)
            t += 1
        times.append(float(np.median(samples)))
    return CostProbe(horizons, sizes, times, counters)
