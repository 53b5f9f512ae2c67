"""Independent reference implementations used by the test-suite.

Everything here is written in plain Python/NumPy loops, deliberately
avoiding the package's own helpers, so agreement is meaningful.
"""

import math

import numpy as np
from scipy import integrate
from scipy.special import logsumexp


# -- metrics -----------------------------------------------------------------------


def trimmed_stats(values):
    v = sorted(float(x) for x in values if math.isfinite(x))
    n = len(v)
    keep = v[: n - math.ceil(0.01 * n)] or v
    lower_mid = lambda s: s[(len(s) - 1) // 2]
    return {
        "mean": sum(v) / n,
        "median": lower_mid(v),
        "trimmed_mean": sum(keep) / len(keep),
        "trimmed_median": lower_mid(keep),
    }


def rank_percentages(matrix):
    m = np.asarray(matrix, dtype=float)
    n_models, T = m.shape
    r1 = [0] * n_models
    r2 = [0] * n_models
    top3 = []
    for t in range(T):
        col = m[:, t]
        order = np.argsort(col, kind="stable")
        top3.append(list(order[:3]))
        for i in range(n_models):
            rank = 1 + sum(1 for j in range(n_models) if col[j] < col[i])
            r1[i] += rank == 1
            r2[i] += rank <= 2
    return [100.0 * c / T for c in r1], [100.0 * c / T for c in r2], top3


def failure_rate(peaks, tau):
    return sum(1 for p in peaks if p > tau) / len(peaks)


def representative(means):
    seeds = sorted(means)
    vals = sorted(means[s] for s in seeds)
    n = len(vals)
    med = vals[n // 2] if n % 2 else 0.5 * (vals[n // 2 - 1] + vals[n // 2])
    best = None
    for s in seeds:
        d = abs(means[s] - med)
        if best is None or d < best[0]:
            best = (d, s)
    return best[1]


def calibration_groupby(var, err, bins):
    var, err = np.asarray(var, float), np.asarray(err, float)
    lo_v, hi_v = np.percentile(var, [1, 99])
    lo_e, hi_e = np.percentile(err, [1, 99])
    v = [min(max(a, lo_v), hi_v) for a in var]
    e = [min(max(a, lo_e), hi_e) for a in err]
    edges = sorted(set(np.quantile(v, np.linspace(0, 1, bins + 1)).tolist()))
    nb = max(len(edges) - 1, 1)
    groups = {}
    for a, b in zip(v, e):
        k = 0
        for j in range(nb):
            if a >= edges[j]:
                k = j
        groups.setdefault(k, []).append((a, b))
    keys = sorted(groups)
    return (
        [sum(a for a, _ in groups[k]) / len(groups[k]) for k in keys],
        [sum(b for _, b in groups[k]) / len(groups[k]) for k in keys],
        [len(groups[k]) for k in keys],
    )


# -- densities ---------------------------------------------------------------------


def mixture_density_nll(y, means, variances):
    dens = sum(math.exp(-0.5 * (y - m) ** 2 / v) / math.sqrt(2 * math.pi * v) for m, v in zip(means, variances))
    return -math.log(dens / len(means))


def kl_to_mixture_quadrature(qm, qv, comp_means, comp_vars):
    """KL(N(qm, qv) || (1/M) sum_j N(comp_means_j, comp_vars_j)) by adaptive quadrature."""
    cm, cv = np.asarray(comp_means, float), np.asarray(comp_vars, float)
    sq = math.sqrt(qv)

    def integrand(z):
        logq = -0.5 * (math.log(2 * math.pi * qv) + (z - qm) ** 2 / qv)
        logp = logsumexp(-0.5 * (np.log(2 * np.pi * cv) + (z - cm) ** 2 / cv)) - math.log(len(cm))
        return math.exp(logq) * (logq - logp)

    val, _ = integrate.quad(integrand, qm - 12 * sq, qm + 12 * sq, epsabs=1e-10, epsrel=1e-10, limit=400)
    return val
