"""Experiment orchestration: build, train, evaluate, persist and aggregate runs."""

from __future__ import annotations

import json
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import metrics
from .baselines import DSSM, VRNN, BayesByBackprop, DeepEnsemble, MCDropout
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, parse_config_text, parse_widths, solve_budget
from .data import jena_stream, synth_stream
from .inference import MetricSeries, stream_evaluate, warm_state
from .model import LatentTrack
from .training import Adam, beta_schedule, recency_weights, static_fit_window, step_rng, train_static, train_stateful

log = logging.getLogger(__name__)

ONLINE_TAG = 1_000_019
TABLE_COLUMNS = ("mean", "median", "trimmed_mean", "trimmed_median", "pct_rank1", "pct_rank_le2")


class ExperimentError(RuntimeError):
    pass


def load_data(cfg: ExperimentConfig):
    if cfg.dataset == "jena":
        return jena_stream(cfg.jena_path, factor=cfg.downsample, history_len=cfg.history_len, horizon=cfg.horizon,
                           split_fraction=cfg.split_fraction)
    return synth_stream(cfg.synth_kind, cfg.synth_length, seed=cfg.synth_seed, n_regimes=cfg.synth_regimes,
                        split_fraction=cfg.split_fraction)


def resolve_widths(cfg: ExperimentConfig, x_dim: int) -> dict[str, int]:
    widths = parse_widths(cfg.widths)
    if widths is not None:
        return widths
    total, inference = cfg.targets()
    sol = solve_budget(cfg.model, x_dim, total, inference, d_z=cfg.d_z, d_h=cfg.d_h, members=cfg.members)
    if not sol.feasible:
        log.warning("no width assignment meets the budget for %s; using closest: %s", cfg.model, sol.row())
    return sol.widths


def build_model(cfg: ExperimentConfig, x_dim: int, seed: int, widths: dict | None = None):
    w = resolve_widths(cfg, x_dim) if widths is None else widths
    kind = cfg.model
    if kind in ("lt_structured", "lt_unstructured"):
        return LatentTrack(x_dim, d_z=cfg.d_z, d_h=cfg.d_h, d_e=w["d_e"], pred_hidden=w["pred_hidden"],
                           variant=kind[3:], seed=seed)
    if kind == "vrnn":
        return VRNN(x_dim, d_z=cfg.d_z, d_h=cfg.d_h, d_feat=w["d_feat"], hidden=w["hidden"], seed=seed)
    if kind == "dssm":
        return DSSM(x_dim, d_z=cfg.d_z, d_h=cfg.d_h, d_e=w["d_e"], hidden=w["hidden"], seed=seed)
    if kind == "mc_dropout":
        return MCDropout(x_dim, hidden=w["hidden"], p=cfg.dropout, seed=seed)
    if kind == "deep_ensemble":
        return DeepEnsemble(x_dim, hidden=w["hidden"], members=cfg.members, seed=seed)
    if kind == "bbb":
        return BayesByBackprop(x_dim, hidden=w["hidden"], seed=seed)
    raise ExperimentError(f"unknown model kind {kind!r}")


def train_model(cfg: ExperimentConfig, model, stream, seed: int):
    tcfg = cfg.train_config(seed)
    if model.stateful:
        return train_stateful(model, stream.train(), tcfg)
    return train_static(model, stream.train(), tcfg, warmup=cfg.warmup_static)


class _OnlineRefit:
    """Keeps fitting a static model on the trailing window during evaluation (one step every S)."""

    def __init__(self, cfg: ExperimentConfig, model, history_x, history_y, seed: int):
        self.cfg, self.model, self.seed = cfg, model, seed
        self.x = list(history_x[-cfg.window:])
        self.y = list(history_y[-cfg.window:])
        self.opt = Adam(model.parameters(), lr=cfg.lr, clip=cfg.grad_clip)
        self.n = 0

    def __call__(self, i, x, y):
        self.x.append(np.asarray(x))
        self.y.append(float(y))
        self.x, self.y = self.x[-self.cfg.window:], self.y[-self.cfg.window:]
        self.n += 1
        if self.n % self.cfg.stride:
            return
        X, Y = np.vstack(self.x), np.asarray(self.y)
        w = recency_weights(len(Y) - 1, np.arange(len(Y)), self.cfg.recency)
        beta = beta_schedule(self.opt.step_count, self.cfg.warmup_static, self.cfg.beta_max) if self.model.uses_kl else 0.0
        static_fit_window(self.model, X, Y, w, self.opt, beta, step_rng(self.seed, ONLINE_TAG, i), n_data=len(Y))


def evaluate_model(cfg: ExperimentConfig, model, stream, seed: int, manifest: dict | None = None) -> MetricSeries:
    """Filter through the training segment, then score every evaluation step causally."""
    train, ev = stream.train(), stream.evaluation()
    state = warm_state(model, train, cfg.k_eval, seed) if model.stateful else None
    hook = None
    if not model.stateful and cfg.static_online:
        hook = _OnlineRefit(cfg, model, train.x, train.y, seed)
    return stream_evaluate(model, ev, k=cfg.k_eval, seed=seed, manifest=manifest, state=state, after_step=hook)


# -- run directories -----------------------------------------------------------------


def run_dir_for(cfg: ExperimentConfig, root) -> Path:
    return Path(root) / f"{cfg.model}-{cfg.hash()[:12]}"


def _claim_run_dir(cfg: ExperimentConfig, root) -> Path:
    d = run_dir_for(cfg, root)
    cfg_path = d / "config.txt"
    text = cfg.serialize()
    if cfg_path.exists():
        old = parse_config_text(cfg_path.read_text())
        if old.hash() != cfg.hash():
            raise ExperimentError(f"{d}: existing run has a different config with a colliding hash prefix")
    d.mkdir(parents=True, exist_ok=True)
    cfg_path.write_text(text)
    return d


def run_seed(cfg: ExperimentConfig, seed: int, run_dir) -> dict:
    run_dir = Path(run_dir)
    stream = load_data(cfg)
    widths = resolve_widths(cfg, stream.x_dim)
    model = build_model(cfg, stream.x_dim, seed, widths)
    counts = model.count_params()
    manifest = {
        "model": cfg.model,
        "seed": seed,
        "config_hash": cfg.hash(),
        "dataset_hash": stream.content_hash(),
        "widths": widths,
        "params_total": counts["total"],
        "params_inference": counts["inference_time"],
    }
    model, tlog = train_model(cfg, model, stream, seed)
    series = evaluate_model(cfg, model, stream, seed, manifest)
    seed_dir = run_dir / f"seed-{seed:03d}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, seed_dir / "checkpoint", extra={"config_hash": cfg.hash(), "seed": seed})
    tlog.dump(seed_dir / "train_log.jsonl")
    manifest.update(
        n_updates=tlog.n_updates,
        n_skipped=tlog.n_skipped,
        n_eval=len(series),
        n_nonfinite_nll=int((~np.isfinite(series.nll)).sum()),
    )
    series.manifest = manifest
    series.save(seed_dir / "series.tsv")
    (seed_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _run_seed_safe(args):
    cfg, seed, run_dir = args
    try:
        return seed, run_seed(cfg, seed, run_dir), None
    except Exception:  # noqa: BLE001 - failures are reported per seed
        return seed, None, traceback.format_exc()


def load_runs(run_dir) -> dict[int, MetricSeries]:
    run_dir = Path(run_dir)
    out = {}
    for d in sorted(run_dir.glob("seed-*")):
        if (d / "series.tsv").exists():
            out[int(d.name.split("-")[1])] = MetricSeries.load(d / "series.tsv")
    return out


def aggregate(run_dir, tau: float = 1e6) -> dict:
    """Per-seed temporal summaries plus across-seed medians and failure analysis."""
    runs = load_runs(run_dir)
    if not runs:
        raise ExperimentError(f"{run_dir}: no completed seeds")
    seeds = sorted(runs)
    per_seed = {s: {m: metrics.temporal_summary(getattr(runs[s], m)) for m in ("nll", "mse")} for s in seeds}
    fa = metrics.failure_analysis([runs[s].nll for s in seeds], tau)
    out = {
        "seeds": seeds,
        "per_seed": {str(s): v for s, v in per_seed.items()},
        "median_of_seeds": {
            m: {k: float(np.median([per_seed[s][m][k] for s in seeds])) for k in ("mean", "median", "trimmed_mean", "trimmed_median")}
            for m in ("nll", "mse")
        },
        "failure_rate": fa["failure_rate"],
        "tau": tau,
        "peak_nll": {str(s): float(p) for s, p in zip(seeds, fa["peaks"])},
        "representative_seed": metrics.representative_seed({s: per_seed[s]["nll"]["mean"] for s in seeds}),
        "nonfinite_fraction": {str(s): float((~np.isfinite(runs[s].nll)).mean()) for s in seeds},
    }
    return out


def run_experiment(cfg: ExperimentConfig, root=None, jobs: int = 1) -> tuple[Path, list[int]]:
    """Run every seed, aggregate, emit figure data. Returns (run dir, failed seeds)."""
    root = root or cfg.out or "runs"
    run_dir = _claim_run_dir(cfg, root)
    tasks = [(cfg, s, run_dir) for s in cfg.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_seed_safe, tasks))
    else:
        results = [_run_seed_safe(t) for t in tasks]
    failed = []
    for seed, _, err in results:
        if err is not None:
            failed.append(seed)
            log.error("seed %d failed:\n%s", seed, err)
    if len(failed) < len(cfg.seeds):
        agg = aggregate(run_dir)
        (run_dir / "aggregate.json").write_text(json.dumps(agg, indent=2, sort_keys=True) + "\n")
        metrics.emit_figure_data({cfg.model: load_runs(run_dir)}, out_dir=run_dir / "figures")
    return run_dir, failed


def load_model(seed_dir):
    return load_checkpoint(Path(seed_dir) / "checkpoint")


# -- comparison ----------------------------------------------------------------------


def _run_manifest(run_dir) -> tuple[str, dict[int, MetricSeries]]:
    runs = load_runs(run_dir)
    if not runs:
        raise ExperimentError(f"{run_dir}: no completed seeds")
    name = next(iter(runs.values())).manifest.get("model", Path(run_dir).name)
    return name, runs


def compare(run_dirs) -> dict:
    """Table-style comparison across models: four temporal summaries and two rank percentages.

    The summaries are across-seed medians of per-seed values; rank percentages
    are averaged over seeds shared by all models. Runs on different datasets
    are refused.
    """
    models: dict[str, dict[int, MetricSeries]] = {}
    hashes = set()
    for d in run_dirs:
        name, runs = _run_manifest(d)
        if name in models:
            raise ExperimentError(f"model {name!r} given twice")
        models[name] = runs
        hashes |= {r.manifest.get("dataset_hash") for r in runs.values()}
    if len(hashes) != 1:
        raise ExperimentError(f"refusing to compare runs over different datasets: {sorted(map(str, hashes))}")
    names = list(models)
    shared = sorted(set.intersection(*(set(r) for r in models.values())))
    report = {"models": names, "seeds": shared, "dataset_hash": hashes.pop(), "metrics": {}}
    for metric in ("nll", "mse"):
        table = {n: {} for n in names}
        for n in names:
            sums = [metrics.temporal_summary(getattr(models[n][s], metric)) for s in sorted(models[n])]
            for k in TABLE_COLUMNS[:4]:
                table[n][k] = float(np.median([s[k] for s in sums]))
        r1 = {n: [] for n in names}
        r2 = {n: [] for n in names}
        for s in shared:
            mat = [np.where(np.isfinite(getattr(models[n][s], metric)), getattr(models[n][s], metric), np.inf) for n in names]
            st = metrics.rank_stats(mat, names)
            for n in names:
                r1[n].append(st["pct_rank1"][n])
                r2[n].append(st["pct_rank_le2"][n])
        for n in names:
            table[n]["pct_rank1"] = float(np.mean(r1[n])) if shared else float("nan")
            table[n]["pct_rank_le2"] = float(np.mean(r2[n])) if shared else float("nan")
        report["metrics"][metric] = table
    return report


def format_report(report: dict) -> str:
    lines = []
    for metric, table in report["metrics"].items():
        lines.append(f"[{metric.upper()}]")
        lines.append("model\t" + "\t".join(TABLE_COLUMNS))
        for n in report["models"]:
            lines.append(n + "\t" + "\t".join(f"{table[n][c]:.6g}" for c in TABLE_COLUMNS))
        lines.append("")
    return "\n".join(lines)


def emit_figures(run_dirs, out_dir, which=metrics.FIGURES) -> list[Path]:
    runs = {}
    for d in run_dirs:
        name, r = _run_manifest(d)
        runs[name] = r
    return metrics.emit_figure_data(runs, which=which, out_dir=out_dir)
