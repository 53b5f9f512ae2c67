"""The twelve acceptance criteria, one test each.

Each test records a PASS/FAIL/SKIP line that is printed in the terminal
summary, then asserts.
"""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import norm

import oracles
from conftest import ACCEPTANCE
from latenttrack import experiment, metrics
from latenttrack.baselines import DSSM, VRNN, BayesByBackprop, DeepEnsemble, MCDropout
from latenttrack.config import BUDGET_TARGETS, MODEL_KINDS, ExperimentConfig, solve_budget
from latenttrack.data import Stream, synth_stream
from latenttrack.gradcheck import TOLERANCE, run_gradcheck
from latenttrack.inference import per_step_cost_probe, stream_evaluate
from latenttrack.mixture import mixture_nll
from latenttrack.model import LatentTrack
from latenttrack.nn import gaussian_kl
from latenttrack.training import TrainConfig, train_chunk_stride, train_exact_rolling

JENA = os.environ.get("LATENTTRACK_JENA", "")

# desk-scale schedule shared by every model in the directional check
DESK = dict(synth_kind="regime_switch", synth_length=5000, window=64, stride=8, lr=1e-2, warmup_stateful=165,
            warmup_static=165, epochs=6, k_eval=100)


def record(n, ok, detail):
    ACCEPTANCE[n] = ("PASS" if ok else "FAIL", detail)
    return ok


# 1 ---------------------------------------------------------------------------------
def test_c01_gradient_suite():
    tick = time.perf_counter()
    results = run_gradcheck(draws=20)
    elapsed = time.perf_counter() - tick
    worst = max(r.max_rel_error for r in results)
    ok = all(r.passed and r.draws >= 20 for r in results) and len(results) == 5 and elapsed < 120
    detail = ", ".join(f"{r.name} {r.max_rel_error:.1e}" for r in results) + f"; {elapsed:.0f}s"
    assert record(1, ok, f"max rel err {worst:.1e} < {TOLERANCE:g} ({detail})")


# 2 ---------------------------------------------------------------------------------
def test_c02_closed_forms_vs_oracles():
    rng = np.random.default_rng(2)
    kl_err = 0.0
    for _ in range(100):
        mq, mp = rng.normal(size=2), rng.normal(size=2)
        lq, lp = rng.uniform(-2, 2, 2), rng.uniform(-2, 2, 2)
        closed = gaussian_kl(mq, lq, mp, lp).item()
        quad = 0.0
        for a, b, c, d in zip(mq, np.exp(lq), mp, np.exp(lp)):
            sa, sc = math.sqrt(b), math.sqrt(d)
            f = lambda z: norm.pdf(z, a, sa) * (norm.logpdf(z, a, sa) - norm.logpdf(z, c, sc))
            quad += integrate.quad(f, a - 12 * sa, a + 12 * sa, epsabs=1e-12, epsrel=1e-12, limit=200)[0]
        kl_err = max(kl_err, abs(closed - quad))
    mix_err = 0.0
    for _ in range(1000):
        k = int(rng.integers(1, 40))
        m, v, y = rng.normal(size=k), np.exp(rng.uniform(-2, 2, k)), rng.normal(scale=2)
        mix_err = max(mix_err, abs(mixture_nll(y, m, v) - oracles.mixture_density_nll(y, m, v)))
    ok = kl_err < 1e-6 and mix_err < 1e-12
    assert record(2, ok, f"KL vs quadrature max err {kl_err:.1e} (<1e-6); mixture NLL max err {mix_err:.1e} (<1e-12)")


# 3 ---------------------------------------------------------------------------------
def test_c03_structured_bound_is_tighter_prior_free():
    rng = np.random.default_rng(3)
    gaps = []
    for inst in range(50):
        m = LatentTrack(2, d_z=1, d_h=3, d_e=2, pred_hidden=2, variant="structured", seed=inst)
        m.trans_head.weight.data *= rng.uniform(0.5, 4.0)
        h_prev, h_t = rng.standard_normal(3), rng.standard_normal(3)
        z_prev = m.sample_latent(m.posterior_belief(h_prev), rng.standard_normal((100_000, 1))).data
        trans = m.transition_belief(h_prev, z_prev)
        q = m.posterior_belief(h_t)
        tm, tv = trans.mean.data[:, 0], np.exp(trans.logvar.data[:, 0])
        qm, qv = float(q.mean.data[0]), float(np.exp(q.logvar.data[0]))
        expected_kl = float(np.mean(0.5 * ((qv + (qm - tm) ** 2) / tv - 1 + np.log(tv) - np.log(qv))))
        marginal_kl = oracles.kl_to_mixture_quadrature(qm, qv, tm, tv)
        # identical likelihood terms, so bound_structured <= bound_marginal  <=>  E[KL] >= KL(marginal)
        gaps.append(expected_kl - marginal_kl)
    ok = min(gaps) >= -1e-8
    assert record(3, ok, f"50/50 instances E[KL(q||trans)] - KL(q||marginal) >= 0 (min gap {min(gaps):.2e}, 1e5 samples)")


# 4 ---------------------------------------------------------------------------------
def test_c04_total_variance_identity_every_step():
    stream = synth_stream("regime_switch", 5000, seed=0)
    bad, steps = {}, 0
    for kind in MODEL_KINDS:
        cfg = ExperimentConfig(model=kind, seeds=[0])
        model = experiment.build_model(cfg, stream.x_dim, 0)
        s = stream_evaluate(model, stream, k=100, seed=0, keep_components=False)
        steps += len(s)
        bad[kind] = int(np.sum(s.var_tot != s.var_alea + s.var_epi))
    ok = sum(bad.values()) == 0
    assert record(4, ok, f"{steps} evaluation steps over 7 models, exact mismatches {sum(bad.values())}")


# 5 ---------------------------------------------------------------------------------
def _predictions(make, stream, online):
    model = make()
    hook = None
    if online:
        cfg = ExperimentConfig(model="mc_dropout", window=8, stride=2, lr=1e-2, static_online=True)
        hist = synth_stream("regime_switch", 6, seed=99)  # stands in for the training segment
        hook = experiment._OnlineRefit(cfg, model, hist.x, hist.y, 0)
    s = stream_evaluate(model, stream, k=8, seed=5, after_step=hook, keep_components=True)
    return [np.concatenate(c) for c in s.components]


PATHS = {
    "lt_structured": (lambda: LatentTrack(3, d_z=2, d_h=5, d_e=3, pred_hidden=3, seed=1), False),
    "lt_unstructured": (lambda: LatentTrack(3, d_z=2, d_h=5, d_e=3, pred_hidden=3, variant="unstructured", seed=1), False),
    "vrnn": (lambda: VRNN(3, d_z=2, d_h=5, seed=1), False),
    "dssm": (lambda: DSSM(3, d_z=2, d_h=5, seed=1), False),
    "static (mc_dropout online refit, ensemble, bbb)": (None, True),
}


def test_c05_causality_suite():
    T = 16
    rng = np.random.default_rng(5)
    base = synth_stream("regime_switch", T, seed=5)
    violations = {}
    for name, (make, _) in PATHS.items():
        makers = [(make, False)] if make else [(lambda: MCDropout(3, hidden=6, seed=1), True),
                                                (lambda: DeepEnsemble(3, hidden=4, members=3, seed=1), False),
                                                (lambda: BayesByBackprop(3, hidden=5, seed=1), False)]
        count = 0
        for mk, online in makers:
            ref = _predictions(mk, base, online)
            for t in range(T):
                x, y = base.x.copy(), base.y.copy()
                y[t:] += rng.normal(scale=3.0, size=T - t)
                x[t + 1 :] += rng.normal(size=(T - t - 1, 3))
                new = _predictions(mk, Stream(x, y, base.t, base.split), online)
                count += sum(not np.array_equal(ref[s], new[s]) for s in range(t + 1))
        violations[name] = count
    ok = sum(violations.values()) == 0
    assert record(5, ok, f"5 model paths x {T} cut points, bit-level violations {sum(violations.values())}")


# 6 ---------------------------------------------------------------------------------
def test_c06_budget_ledger():
    rows, ok = [], True
    for kind in MODEL_KINDS:
        sol = solve_budget(kind, 116)
        target = BUDGET_TARGETS[kind][0]
        within = abs(sol.total - target) <= 0.10 * target and abs(sol.inference_time - 20_000) <= 0.05 * 20_000
        ok &= within and sol.feasible
        rows.append(f"{kind} {sol.total}/{sol.inference_time}")
    assert record(6, ok, "; ".join(rows))


# 7 ---------------------------------------------------------------------------------
def _desk_trimmed_medians(kind, seeds=range(5)):
    out = []
    for s in seeds:
        cfg = ExperimentConfig(model=kind, seeds=[s], **DESK)
        stream = experiment.load_data(cfg)
        model = experiment.build_model(cfg, stream.x_dim, s)
        model, _ = experiment.train_model(cfg, model, stream, s)
        series = experiment.evaluate_model(cfg, model, stream, s)
        out.append(metrics.temporal_summary(series.nll)["trimmed_median"])
    return out


@pytest.mark.slow
def test_c07_desk_scale_ordering():
    tick = time.perf_counter()
    res = {k: _desk_trimmed_medians(k) for k in ("lt_structured", "vrnn", "dssm")}
    med = {k: float(np.median(v)) for k, v in res.items()}
    elapsed = (time.perf_counter() - tick) / 60
    ok = med["lt_structured"] < med["vrnn"] and med["lt_structured"] < med["dssm"]
    detail = ", ".join(f"{k} {v:.3f}" for k, v in med.items())
    assert record(7, ok, f"median-of-seeds trimmed-median NLL: {detail}; {elapsed:.1f} min")


# 8 ---------------------------------------------------------------------------------
ANOMALY = {**DESK, "synth_kind": "anomaly_spike"}


def spike_response(series, idx):
    """(peak offset, first recovered offset) for NLL and total variance.

    Recovered means back down to at most the pre-spike 50-step median plus
    10% of its magnitude.
    """
    out = {}
    for f in ("nll", "var_tot"):
        v = getattr(series, f)
        base = float(np.median(v[idx - 50 : idx]))
        peak = int(np.argmax(v)) - idx
        rec = next((d for d in range(1, 4) if v[idx + d] <= base + 0.1 * abs(base)), None)
        out[f] = (peak, rec)
    return out


@pytest.mark.slow
def test_c08_anomaly_spike_response():
    failures, summary = [], []
    for kind in MODEL_KINDS:
        cfg = ExperimentConfig(model=kind, seeds=[0], **ANOMALY)
        stream = experiment.load_data(cfg)
        model = experiment.build_model(cfg, stream.x_dim, 0)
        model, _ = experiment.train_model(cfg, model, stream, 0)
        series = experiment.evaluate_model(cfg, model, stream, 0)
        resp = spike_response(series, stream.manifest["anomaly_index"] - stream.split)
        for f, (peak, rec) in resp.items():
            if abs(peak) > 1 or rec is None:
                failures.append(f"{kind}:{f} peak {peak:+d} recovered {rec}")
        summary.append(f"{kind} {resp['nll'][0]:+d}/{resp['var_tot'][0]:+d}")
    ok = not failures
    assert record(8, ok, ("all 7 models peak at spike+-1 and recover within 3 steps" if ok else "; ".join(failures)))


# 9 ---------------------------------------------------------------------------------
def test_c09_metric_oracles():
    rng = np.random.default_rng(9)
    mism = {"trimmed": 0, "ranks": 0, "failure": 0, "representative": 0, "calibration": 0}
    rel = lambda a, b: abs(a - b) <= 1e-12 * max(1.0, abs(a), abs(b))
    for _ in range(1000):
        v = rng.standard_normal(int(rng.integers(1, 300))) * 10
        got, ref = metrics.temporal_summary(v), oracles.trimmed_stats(v)
        mism["trimmed"] += not (got["median"] == ref["median"] and got["trimmed_median"] == ref["trimmed_median"]
                                and rel(got["mean"], ref["mean"]) and rel(got["trimmed_mean"], ref["trimmed_mean"]))
        mat = rng.integers(0, 4, (int(rng.integers(1, 8)), int(rng.integers(1, 30)))).astype(float)
        st = metrics.rank_stats(mat)
        r1, r2, top3 = oracles.rank_percentages(mat)
        mism["ranks"] += not (list(st["pct_rank1"].values()) == r1 and list(st["pct_rank_le2"].values()) == r2 and st["top3"] == top3)
        peaks, tau = 10.0 ** rng.uniform(0, 9, int(rng.integers(1, 30))), 10.0 ** rng.uniform(0, 9)
        mism["failure"] += metrics.failure_analysis(peaks, tau)["failure_rate"] != oracles.failure_rate(peaks, tau)
        n = int(rng.integers(1, 26))
        means = dict(zip(rng.choice(500, n, replace=False).tolist(), rng.integers(0, 5, n).astype(float)))
        mism["representative"] += metrics.representative_seed(means) != oracles.representative(means)
        nv, bins = int(rng.integers(12, 200)), int(rng.integers(2, 12))
        var = np.exp(rng.normal(size=nv))
        err = rng.chisquare(1, nv) * var
        c = metrics.calibration_curve(var, err, bins)
        mv, me, cnt = oracles.calibration_groupby(var, err, bins)
        mism["calibration"] += not (c["counts"].tolist() == cnt and all(map(rel, c["mean_var"], mv))
                                    and all(map(rel, c["mean_sq_err"], me)))
    ok = sum(mism.values()) == 0
    assert record(9, ok, "1000 trials x 5 metrics, mismatches " + ", ".join(f"{k}={v}" for k, v in mism.items()))


# 10 --------------------------------------------------------------------------------
def test_c10_exact_rolling_equals_chunk_stride():
    stream = synth_stream("regime_switch", 3 * 16, seed=10)
    cfg = TrainConfig(window=16, stride=16, epochs=1, lr=1e-2, beta_warmup=2, k_train=2, seed=10)
    make = lambda: LatentTrack(3, d_z=3, d_h=6, d_e=4, pred_hidden=3, seed=10)
    _, a = train_chunk_stride(make(), stream, cfg)
    _, b = train_exact_rolling(make(), stream, cfg)
    ok = len(a.update_losses) == 3 and a.update_losses == b.update_losses
    assert record(10, ok, f"3 window losses, bitwise equal: {a.update_losses == b.update_losses}")


# 11 --------------------------------------------------------------------------------
def test_c11_constant_time_inference():
    cfg = ExperimentConfig(model="lt_structured", seeds=[0])
    model = experiment.build_model(cfg, 3, 0)
    probe = per_step_cost_probe(model, 3, horizons=(100, 1000, 10_000), k=100, seed=0)
    same_size = len(set(probe.state_bytes)) == 1
    ok = same_size and probe.latency_ratio < 2.0
    assert record(11, ok, f"state bytes {probe.state_bytes}, latency ratio 1e4/1e2 = {probe.latency_ratio:.2f}")


# 12 --------------------------------------------------------------------------------
@pytest.mark.slow
def test_c12_jena_end_to_end(tmp_path):
    if not JENA or not Path(JENA).exists():
        ACCEPTANCE[12] = ("SKIP", "no weather CSV supplied (set LATENTTRACK_JENA)")
        pytest.skip("set LATENTTRACK_JENA to the weather CSV to run this check")
    run_dirs, nonfinite = [], {}
    for kind in MODEL_KINDS:
        cfg = ExperimentConfig(model=kind, dataset="jena", jena_path=JENA, epochs=2, seeds=[0, 1, 2])
        run_dir, failed = experiment.run_experiment(cfg, tmp_path)
        assert not failed
        agg = experiment.aggregate(run_dir)
        nonfinite[kind] = max(agg["nonfinite_fraction"].values())
        run_dirs.append(run_dir)
    report = experiment.format_report(experiment.compare(run_dirs))
    written = {p.name for p in experiment.emit_figures(run_dirs, tmp_path / "figures")}
    products = {"mean_vs_t.tsv", "var_decomp.tsv", "mse_var.tsv", "nll_vs_t.tsv", "rank_grid_nll.tsv", "ccdf.tsv",
                "pit.tsv", "calib.tsv"}
    ok = products <= written and all(c in report for c in experiment.TABLE_COLUMNS) and max(nonfinite.values()) < 0.01
    assert record(12, ok, f"figures {len(products & written)}/8, worst non-finite fraction {max(nonfinite.values()):.4f}")
