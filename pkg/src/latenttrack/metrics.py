"""Temporal summaries, per-step ranks, failure analysis and calibration diagnostics."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from scipy.special import ndtr

FIGURE_SCHEMA = "latenttrack.figure-data/1"
FIGURES = ("mean_vs_t", "var_decomp", "mse_var", "nll_vs_t", "rank_grid", "ccdf", "pit", "calib")


def _finite(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    return v[np.isfinite(v)]


def trim_top(values, fraction: float = 0.01) -> np.ndarray:
    """Drop the ``ceil(fraction * N)`` largest values."""
    v = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    n_drop = int(math.ceil(fraction * len(v)))
    return v[: len(v) - n_drop] if n_drop < len(v) else v[:0]


def lower_median(values) -> float:
    v = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    return float(v[(len(v) - 1) // 2])


def temporal_summary(series, trim: float = 0.01) -> dict[str, float]:
    """Mean, median and their top-trimmed variants over the finite entries of ``series``.

    Non-finite entries are excluded and reported as ``n_nonfinite``.
    """
    raw = np.asarray(series, dtype=np.float64).reshape(-1)
    v = _finite(raw)
    if len(v) == 0:
        raise ValueError("temporal_summary of an empty series")
    trimmed = trim_top(v, trim)
    if len(trimmed) == 0:
        trimmed = v
    return {
        "mean": float(np.mean(v)),
        "median": lower_median(v),
        "trimmed_mean": float(np.mean(trimmed)),
        "trimmed_median": lower_median(trimmed),
        "n": int(len(v)),
        "n_nonfinite": int(len(raw) - len(v)),
    }


def step_ranks(matrix) -> np.ndarray:
    """Ascending per-column ranks; ties share the minimum rank."""
    m = np.asarray(matrix, dtype=np.float64)
    # rank = 1 + number of models strictly better at that step
    return 1 + (m[None, :, :] < m[:, None, :]).sum(axis=1)


def rank_stats(matrix, names=None) -> dict:
    """Percent of steps each model ranks first / within the top two, and the top-3 grid."""
    rows = [np.asarray(r, dtype=np.float64) for r in matrix]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValueError("rank_stats needs a non-empty rectangular models x T matrix")
    m = np.vstack(rows)
    if np.isnan(m).any():
        raise ValueError("rank_stats: missing (NaN) entries")
    names = list(names) if names is not None else list(range(m.shape[0]))
    ranks = step_ranks(m)
    T = m.shape[1]
    pct1 = 100.0 * (ranks == 1).sum(axis=1) / T
    pct2 = 100.0 * (ranks <= 2).sum(axis=1) / T
    order = np.lexsort((np.broadcast_to(np.arange(m.shape[0])[:, None], m.shape), m), axis=0)
    top = order[: min(3, m.shape[0])].T
    return {
        "names": names,
        "pct_rank1": {n: float(p) for n, p in zip(names, pct1)},
        "pct_rank_le2": {n: float(p) for n, p in zip(names, pct2)},
        "ranks": ranks,
        "top3": [[names[i] for i in row] for row in top],
    }


def failure_analysis(peaks_or_runs, tau: float = 1e6) -> dict:
    """Per-run peak NLL, its empirical CCDF and the fraction of runs whose peak exceeds ``tau``.

    Accepts either per-run NLL series or precomputed peaks. Non-finite values
    count as infinitely large.
    """
    peaks = []
    for run in peaks_or_runs:
        arr = np.asarray(run, dtype=np.float64).reshape(-1)
        arr = np.where(np.isfinite(arr), arr, np.inf)
        peaks.append(float(arr.max()))
    peaks = np.asarray(peaks)
    if len(peaks) == 0:
        raise ValueError("failure_analysis needs at least one run")
    xs = np.sort(peaks)
    ccdf = np.array([(peaks > x).mean() for x in xs])
    return {
        "peaks": peaks,
        "ccdf_x": xs,
        "ccdf_y": ccdf,
        "failure_rate": float((peaks > tau).mean()),
    }


def ccdf_at(peaks, x: float) -> float:
    """Right-continuous empirical ``P(peak > x)``."""
    return float((np.asarray(peaks, dtype=np.float64) > x).mean())


def representative_seed(means: dict) -> int:
    """Seed whose temporal-mean NLL is closest to the across-seed median (ties: lowest id)."""
    if not means:
        raise ValueError("representative_seed needs at least one run")
    seeds = sorted(means)
    vals = np.array([means[s] for s in seeds], dtype=np.float64)
    med = np.median(vals)
    dist = np.abs(vals - med)
    return seeds[int(np.argmin(dist))]


def pit_values(y, means, variances) -> np.ndarray:
    """Mixture CDF at each realized target; ``means``/``variances`` are (T, K)."""
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    sd = np.sqrt(np.atleast_2d(np.asarray(variances, dtype=np.float64)))
    return np.clip(ndtr((y - means) / sd).mean(axis=1), 0.0, 1.0)


def pit_histogram(y, means, variances, bins: int = 10) -> dict:
    u = pit_values(y, means, variances)
    counts, edges = np.histogram(u, bins=bins, range=(0.0, 1.0))
    return {"u": u, "counts": counts, "edges": edges, "density": counts / max(len(u), 1) * bins}


def calibration_curve(var_tot, sq_err, bins: int = 10) -> dict:
    """Mean squared error per equal-count bin of predicted total variance.

    Both series are first clipped to their own [1, 99] percentile ranges.
    Quantile edges that coincide are merged, so a constant variance series
    yields a single bin.
    """
    v = np.asarray(var_tot, dtype=np.float64).reshape(-1)
    e = np.asarray(sq_err, dtype=np.float64).reshape(-1)
    if len(v) != len(e):
        raise ValueError("variance and error series must be aligned")
    if len(v) < bins:
        raise ValueError(f"need at least {bins} points for {bins} bins, got {len(v)}")
    v = np.clip(v, *np.percentile(v, [1, 99]))
    e = np.clip(e, *np.percentile(e, [1, 99]))
    edges = np.unique(np.quantile(v, np.linspace(0.0, 1.0, bins + 1)))
    nb = max(len(edges) - 1, 1)
    idx = np.clip(np.searchsorted(edges, v, side="right") - 1, 0, nb - 1)
    mean_var = np.array([v[idx == b].mean() if np.any(idx == b) else np.nan for b in range(nb)])
    mean_err = np.array([e[idx == b].mean() if np.any(idx == b) else np.nan for b in range(nb)])
    counts = np.bincount(idx, minlength=nb)
    keep = counts > 0
    return {"mean_var": mean_var[keep], "mean_sq_err": mean_err[keep], "counts": counts[keep], "edges": edges}


# -- figure data --------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (str, np.str_)):
        return str(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_columns(path, header: list[str], rows) -> None:
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"# schema: {FIGURE_SCHEMA}\n")
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(c) for c in row) + "\n")


def clip_percentile(values, lo: float = 1.0, hi: float = 99.0) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    finite = v[np.isfinite(v)]
    if len(finite) == 0:
        return v
    a, b = np.percentile(finite, [lo, hi])
    return np.clip(v, a, b)


def emit_figure_data(runs: dict, which=FIGURES, out_dir=".", representative: dict | None = None,
                     tau: float = 1e6, bins: int = 10) -> list[Path]:
    """Write figure-feeding tables for a set of runs.

    ``runs`` maps model name -> {seed: MetricSeries}. Per-time-step figures use
    one representative seed per model (``representative`` overrides the
    choice). Clipped variants accompany the raw tables for the mean, MSE and
    NLL traces.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = list(runs)
    if not names:
        raise ValueError("no runs to emit")
    for n in names:
        if not runs[n]:
            raise ValueError(f"missing runs for model {n!r}")
    rep = dict(representative or {})
    for n in names:
        if n not in rep:
            rep[n] = representative_seed({s: float(np.mean(_finite(r.nll))) for s, r in runs[n].items()})
        if rep[n] not in runs[n]:
            raise ValueError(f"missing run: model {n!r} seed {rep[n]}")
    reps = {n: runs[n][rep[n]] for n in names}
    t = reps[names[0]].t
    for n in names:
        if len(reps[n]) != len(t):
            raise ValueError("representative runs have different lengths")
    written: list[Path] = []

    def per_t(fname, fields, clipped=False):
        header = ["t"] + ([] if "y" not in fields else ["y"])
        cols = [t] + ([reps[names[0]].y] if "y" in fields else [])
        for n in names:
            for f in fields:
                if f == "y":
                    continue
                header.append(f"{n}:{f}")
                col = getattr(reps[n], f)
                cols.append(clip_percentile(col) if clipped else col)
        p = out_dir / fname
        write_columns(p, header, zip(*cols))
        written.append(p)

    if "mean_vs_t" in which:
        per_t("mean_vs_t.tsv", ["y", "mix_mean"])
        per_t("mean_vs_t_clipped.tsv", ["y", "mix_mean"], clipped=True)
    if "var_decomp" in which:
        per_t("var_decomp.tsv", ["var_alea", "var_epi", "var_tot"])
    if "mse_var" in which:
        per_t("mse_var.tsv", ["mse", "var_tot"])
        per_t("mse_var_clipped.tsv", ["mse", "var_tot"], clipped=True)
    if "nll_vs_t" in which:
        per_t("nll_vs_t.tsv", ["nll"])
        per_t("nll_vs_t_clipped.tsv", ["nll"], clipped=True)
    if "rank_grid" in which:
        for metric in ("nll", "mse"):
            mat = [np.where(np.isfinite(getattr(reps[n], metric)), getattr(reps[n], metric), np.inf) for n in names]
            stats = rank_stats(mat, names)
            p = out_dir / f"rank_grid_{metric}.tsv"
            write_columns(p, ["rank1", "rank2", "rank3"][: len(stats["top3"][0])], stats["top3"])
            written.append(p)
    if "ccdf" in which:
        rows = []
        for n in names:
            seeds = sorted(runs[n])
            fa = failure_analysis([runs[n][s].nll for s in seeds], tau)
            for x, c in zip(fa["ccdf_x"], fa["ccdf_y"]):
                rows.append((n, x, c))
        p = out_dir / "ccdf.tsv"
        write_columns(p, ["model", "peak_nll", "ccdf"], rows)
        written.append(p)
    if "pit" in which:
        rows = []
        for n in names:
            r = reps[n]
            if r.components is None:
                raise ValueError(f"run for {n!r} lacks mixture components needed for PIT")
            means = np.stack([m for m, _ in r.components])
            variances = np.stack([v for _, v in r.components])
            h = pit_histogram(r.y, means, variances, bins)
            for b in range(bins):
                rows.append((n, h["edges"][b], h["edges"][b + 1], int(h["counts"][b]), h["density"][b]))
        p = out_dir / "pit.tsv"
        write_columns(p, ["model", "bin_left", "bin_right", "count", "density"], rows)
        written.append(p)
    if "calib" in which:
        rows = []
        for n in names:
            r = reps[n]
            ok = np.isfinite(r.var_tot) & np.isfinite(r.mse)
            c = calibration_curve(r.var_tot[ok], r.mse[ok], bins)
            for b, (mv, me, cnt) in enumerate(zip(c["mean_var"], c["mean_sq_err"], c["counts"])):
                rows.append((n, b, mv, me, int(cnt)))
        p = out_dir / "calib.tsv"
        write_columns(p, ["model", "bin", "mean_var", "mean_sq_err", "count"], rows)
        written.append(p)
    return written
