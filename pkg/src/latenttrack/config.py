"""Flat ``key = value`` experiment configuration and the parameter-budget solver."""

from __future__ import annotations

import dataclasses
import hashlib
import itertools
from dataclasses import dataclass, field, fields
from pathlib import Path

from .training import ALGORITHMS, TrainConfig

FORMAT_VERSION = 1
MODEL_KINDS = ("lt_structured", "lt_unstructured", "vrnn", "dssm", "mc_dropout", "bbb", "deep_ensemble")
STATEFUL_KINDS = ("lt_structured", "lt_unstructured", "vrnn", "dssm")
SYNTH_KINDS = ("regime_switch", "seasonal_drift", "anomaly_spike")

# reference parameter ledger: kind -> (total, active at inference)
BUDGET_TARGETS = {
    "lt_structured": (20_709, 20_709),
    "lt_unstructured": (21_888, 20_848),
    "vrnn": (20_758, 20_758),
    "dssm": (22_262, 20_630),
    "bbb": (20_060, 20_060),
    "mc_dropout": (19_112, 19_112),
    "deep_ensemble": (19_100, 19_100),
}
INFERENCE_TARGET = 20_000
TOTAL_TOL = 0.10
INFERENCE_TOL = 0.05


class ConfigError(ValueError):
    pass


def parse_seeds(text: str) -> list[int]:
    """``"a..b"`` (inclusive) or a comma-separated list."""
    text = str(text).strip()
    try:
        if ".." in text:
            a, b = text.split("..")
            lo, hi = int(a), int(b)
            if hi < lo:
                raise ConfigError(f"empty seed range {text!r}")
            return list(range(lo, hi + 1))
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad seed spec {text!r}") from exc


def format_seeds(seeds: list[int]) -> str:
    if seeds and seeds == list(range(seeds[0], seeds[-1] + 1)) and len(seeds) > 1:
        return f"{seeds[0]}..{seeds[-1]}"
    return ",".join(str(s) for s in seeds)


@dataclass
class ExperimentConfig:
    # data
    dataset: str = "synth"  # "synth" or "jena"
    jena_path: str = ""
    synth_kind: str = "regime_switch"
    synth_length: int = 5000
    synth_seed: int = 0
    synth_regimes: int = 2
    split_fraction: float = 0.7
    history_len: int = 8
    horizon: int = 6
    downsample: int = 6
    # model
    model: str = "lt_structured"
    d_z: int = 8
    d_h: int = 64
    widths: str = "auto"  # "auto" runs the budget solver, else "name=v,name=v"
    budget_total: int = 0  # 0 = reference ledger value for the model kind
    budget_inference: int = INFERENCE_TARGET
    dropout: float = 0.1
    members: int = 10
    # training
    algorithm: str = "chunk_stride"
    window: int = 256
    stride: int = 32
    recency: float = 0.9
    surprise_alpha: float = 0.0
    beta_max: float = 1.0
    warmup_stateful: int = 575
    warmup_static: int = 4600
    k_train: int = 1
    epochs: int = 6
    lr: float = 1e-4
    grad_clip: float = 1.0
    static_online: bool = False
    # evaluation / orchestration
    k_eval: int = 100
    seeds: list[int] = field(default_factory=lambda: list(range(25)))
    out: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        checks = [
            (self.dataset in ("synth", "jena"), "dataset must be synth or jena"),
            (self.synth_kind in SYNTH_KINDS, f"synth_kind must be one of {SYNTH_KINDS}"),
            (self.model in MODEL_KINDS, f"model must be one of {MODEL_KINDS}"),
            (self.algorithm in ALGORITHMS, f"algorithm must be one of {ALGORITHMS}"),
            (0.0 < self.split_fraction < 1.0, "split_fraction must lie in (0, 1)"),
            (0.0 < self.recency <= 1.0, "recency must lie in (0, 1]"),
            (0.0 <= self.dropout < 1.0, "dropout must lie in [0, 1)"),
            (self.lr > 0, "lr must be > 0"),
            (self.grad_clip > 0, "grad_clip must be > 0"),
            (self.beta_max >= 0, "beta_max must be >= 0"),
            (self.surprise_alpha >= 0, "surprise_alpha must be >= 0"),
            (len(self.seeds) > 0, "seeds must be non-empty"),
            (self.budget_total >= 0 and self.budget_inference > 0, "budget targets must be positive"),
        ]
        for name in ("synth_length", "synth_regimes", "history_len", "horizon", "downsample", "d_z", "d_h", "members",
                     "window", "stride", "k_train", "epochs", "k_eval"):
            checks.append((getattr(self, name) >= 1, f"{name} must be >= 1"))
        for name in ("warmup_stateful", "warmup_static"):
            checks.append((getattr(self, name) >= 0, f"{name} must be >= 0"))
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        if self.dataset == "jena" and not self.jena_path:
            raise ConfigError("dataset = jena requires jena_path")
        parse_widths(self.widths)

    @property
    def stateful(self) -> bool:
        return self.model in STATEFUL_KINDS

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            window=self.window, stride=self.stride, recency=self.recency, surprise_alpha=self.surprise_alpha,
            beta_max=self.beta_max, beta_warmup=self.warmup_stateful if self.stateful else self.warmup_static,
            k_train=self.k_train, epochs=self.epochs, seed=seed, algorithm=self.algorithm, lr=self.lr,
            grad_clip=self.grad_clip,
        )

    def targets(self) -> tuple[int, int]:
        total = self.budget_total or BUDGET_TARGETS[self.model][0]
        return total, self.budget_inference

    # -- text form ---------------------------------------------------------------
    def serialize(self) -> str:
        lines = [f"format_version = {FORMAT_VERSION}"]
        for f in fields(self):
            lines.append(f"{f.name} = {_format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        """Content hash of the resolved config, excluding where outputs go."""
        text = dataclasses.replace(self, out="").serialize()
        return hashlib.sha256(text.encode()).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(self.serialize())


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return format_seeds(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind.startswith("list"):
            return parse_seeds(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from exc
    return raw


def parse_pairs(lines, source: str = "<config>") -> dict:
    values = {}
    for no, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{no}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key == "format_version":
            if raw != str(FORMAT_VERSION):
                raise ConfigError(f"{source}:{no}: unsupported format_version {raw}")
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{source}:{no}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def resolve_config(path=None, overrides=()) -> ExperimentConfig:
    """Defaults, then the file (if any), then ``key=value`` overrides."""
    values = {}
    if path is not None:
        values.update(parse_pairs(Path(path).read_text().splitlines(), str(path)))
    values.update(parse_pairs(overrides, "--set"))
    return ExperimentConfig(**values)


def parse_config_text(text: str) -> ExperimentConfig:
    return ExperimentConfig(**parse_pairs(text.splitlines()))


def parse_widths(text: str) -> dict[str, int] | None:
    if text == "auto":
        return None
    out = {}
    for item in text.split(","):
        if "=" not in item:
            raise ConfigError(f"widths: expected name=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = int(v)
        except ValueError as exc:
            raise ConfigError(f"widths: {item!r} is not an integer") from exc
    return out


# -- parameter counts ------------------------------------------------------------------


def _lin(a, b):
    return a * b + b


def _mlp(a, h, b):
    return _lin(a, h) + _lin(h, b)


def _gru(n_in, H):
    return 3 * H * n_in + 3 * H * H + 3 * H


def param_counts(kind: str, x_dim: int, widths: dict, d_z: int = 8, d_h: int = 64, members: int = 10) -> tuple[int, int]:
    """(total, inference-time) parameter counts without building the model."""
    w = widths
    if kind in ("lt_structured", "lt_unstructured"):
        n_theta = w["pred_hidden"] * (x_dim + 3) + 2
        core = _lin(x_dim + 1, w["d_e"]) + _gru(w["d_e"], d_h) + _lin(d_z, n_theta)
        post = _lin(d_h, 2 * d_z)
        if kind == "lt_structured":
            total = core + _lin(d_h + d_z, 2 * d_z) + post
            return total, total
        total = core + _lin(d_h, 2 * d_z) + post
        return total, total - post
    if kind == "vrnn":
        f, h = w["d_feat"], w["hidden"]
        total = (_lin(x_dim, f) + _lin(d_z, f) + _gru(2 * f, d_h) + _mlp(d_h, h, 2 * d_z)
                 + _mlp(d_h + d_z + x_dim, h, 2) + _mlp(d_h + x_dim + 1, h, 2 * d_z))
        return total, total
    if kind == "dssm":
        e, h = w["d_e"], w["hidden"]
        post = _mlp(d_h + e, h, 2 * d_z)
        total = _lin(x_dim + 1, e) + _gru(e, d_h) + _mlp(d_h, h, 2 * d_z) + _mlp(d_h + d_z + x_dim, h, 2) + post
        return total, total - post
    if kind == "mc_dropout":
        n = _mlp(x_dim, w["hidden"], 2)
        return n, n
    if kind == "deep_ensemble":
        n = members * _mlp(x_dim, w["hidden"], 2)
        return n, n
    if kind == "bbb":
        n = 2 * _mlp(x_dim, w["hidden"], 2)
        return n, n
    raise ConfigError(f"unknown model kind {kind!r}")


# free widths searched per kind, with inclusive ranges
WIDTH_SPACE = {
    "lt_structured": {"d_e": (1, 64), "pred_hidden": (2, 64)},
    "lt_unstructured": {"d_e": (1, 64), "pred_hidden": (2, 64)},
    "vrnn": {"d_feat": (1, 64), "hidden": (1, 128)},
    "dssm": {"d_e": (1, 64), "hidden": (1, 128)},
    "mc_dropout": {"hidden": (1, 4096)},
    "deep_ensemble": {"hidden": (1, 512)},
    "bbb": {"hidden": (1, 2048)},
}


@dataclass
class BudgetSolution:
    kind: str
    widths: dict[str, int]
    total: int
    inference_time: int
    target_total: int
    target_inference: int
    feasible: bool

    def row(self) -> str:
        w = ",".join(f"{k}={v}" for k, v in self.widths.items())
        flag = "ok" if self.feasible else "INFEASIBLE"
        return f"{self.kind}\t{self.total}\t{self.inference_time}\t{self.target_total}\t{w}\t{flag}"


def solve_budget(kind: str, x_dim: int, target_total: int | None = None, target_inference: int = INFERENCE_TARGET,
                 d_z: int = 8, d_h: int = 64, members: int = 10, space: dict | None = None,
                 counter=None) -> BudgetSolution:
    """Exhaustive search over the free widths.

    Minimizes ``|total - target_total|`` subject to total within 10% of its
    target and inference-time count within 5% of ``target_inference``; ties
    go to the smaller inference-time gap, then to the lexicographically
    smallest widths. When nothing is feasible the closest assignment is
    returned with ``feasible=False``.
    """
    if target_total is None:
        target_total = BUDGET_TARGETS[kind][0]
    if target_total <= 0 or target_inference <= 0:
        raise ConfigError("budget targets must be positive")
    space = space or WIDTH_SPACE[kind]
    count = counter or (lambda w: param_counts(kind, x_dim, w, d_z=d_z, d_h=d_h, members=members))
    names = list(space)
    best = None
    for combo in itertools.product(*(range(lo, hi + 1) for lo, hi in space.values())):
        w = dict(zip(names, combo))
        total, inf = count(w)
        ok = abs(total - target_total) <= TOTAL_TOL * target_total and abs(inf - target_inference) <= INFERENCE_TOL * target_inference
        key = (not ok, abs(total - target_total), abs(inf - target_inference), combo)
        if best is None or key < best[0]:
            best = (key, w, total, inf, ok)
    _, w, total, inf, ok = best
    return BudgetSolution(kind, w, total, inf, target_total, target_inference, ok)
