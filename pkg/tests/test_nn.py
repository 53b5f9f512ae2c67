import math

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import norm

from latenttrack import autodiff as ad
from latenttrack.autodiff import Tensor
from latenttrack.gradcheck import check_gradients
from latenttrack.nn import (
    LOGVAR_MAX,
    LOGVAR_MIN,
    MLP,
    GaussianHead,
    GRUCell,
    Linear,
    count_params,
    gaussian_kl,
    gaussian_nll,
    gru_step,
    init_params,
)


def kl_quadrature(mq, vq, mp, vp):
    """Per-dimension KL(q||p) by adaptive quadrature over the bulk of q."""
    total = 0.0
    for a, b, c, d in zip(mq, vq, mp, vp):
        sq = math.sqrt(b)
        f = lambda z: norm.pdf(z, a, sq) * (norm.logpdf(z, a, sq) - norm.logpdf(z, c, math.sqrt(d)))
        val, _ = integrate.quad(f, a - 12 * sq, a + 12 * sq, epsabs=1e-12, epsrel=1e-12, limit=200)
        total += val
    return total


def test_linear_param_count():
    assert count_params(Linear(8, 64, np.random.default_rng(0)))["total"] == 576


def test_gru_zero_weights_zero_state():
    cell = GRUCell(3, 4, np.random.default_rng(0))
    for p in cell.parameters():
        p.data[...] = 0.0
    h = gru_step(cell, np.zeros(4), np.array([1.0, -2.0, 0.5]))
    np.testing.assert_array_equal(h.data, np.zeros(4))


def test_gru_zero_weights_halves_state():
    cell = GRUCell(2, 3, np.random.default_rng(0))
    for p in cell.parameters():
        p.data[...] = 0.0
    v = np.array([0.4, -0.2, 0.9])
    h = gru_step(cell, v, np.array([5.0, -5.0]))
    np.testing.assert_allclose(h.data, 0.5 * v, rtol=0, atol=1e-15)


def _gru_scalar_oracle(cell, h, e):
    """Loop-based evaluation of the documented gate equations."""
    H = cell.n_hidden
    Wi, Wh, b = cell.w_input.data, cell.w_hidden.data, cell.bias.data
    out = np.empty(H)
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    for j in range(H):
        def pre(block, with_hidden=True):
            row = block * H + j
            a = sum(Wi[row, k] * e[k] for k in range(len(e))) + b[row]
            hh = sum(Wh[row, k] * h[k] for k in range(H))
            return a, hh
        ar, hr = pre(0)
        r = sig(ar + hr)
        au, hu = pre(1)
        u = sig(au + hu)
        an, hn = pre(2)
        n = math.tanh(an + r * hn)
        out[j] = (1 - u) * h[j] + u * n
    return out


def test_gru_matches_scalar_oracle():
    rng = np.random.default_rng(3)
    cell = GRUCell(3, 4, rng)
    cell.bias.data = rng.standard_normal(12)
    for _ in range(10):
        h, e = np.tanh(rng.standard_normal(4)), rng.standard_normal(3)
        np.testing.assert_allclose(gru_step(cell, h, e).data, _gru_scalar_oracle(cell, h, e), rtol=1e-13, atol=1e-14)


def test_gru_shape_error():
    cell = GRUCell(3, 4, np.random.default_rng(0))
    with pytest.raises(ad.ShapeError):
        gru_step(cell, np.zeros(5), np.zeros(3))


def test_gru_gradients_match_finite_differences():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        cell = GRUCell(3, 4, rng)
        cell.bias.data = 0.3 * rng.standard_normal(12)
        h, e = np.tanh(rng.standard_normal(4)), rng.standard_normal(3)
        assert check_gradients(cell.parameters(), lambda: ad.tsum(gru_step(cell, h, e))) < 1e-5


def test_gru_state_stays_bounded():
    rng = np.random.default_rng(0)
    cell = GRUCell(4, 8, rng)
    inputs = 5.0 * rng.standard_normal((100_000, 4))
    with ad.no_grad():
        h = np.zeros(8)
        for e in inputs:
            h = gru_step(cell, h, e).data
            assert np.all(np.abs(h) < 1.0)


def test_nll_zero_at_matched_precision():
    assert gaussian_nll([0.3], [0.3], [-math.log(2 * math.pi)]).item() == pytest.approx(0.0, abs=1e-15)


def test_nll_unit_variance_residual_free():
    out = gaussian_nll(np.full(3, 1.0), np.full(3, 1.0), np.zeros(3)).item()
    assert out == pytest.approx(3 * 0.5 * math.log(2 * math.pi), rel=1e-15)
    assert 0.5 * math.log(2 * math.pi) == pytest.approx(0.918939, abs=1e-6)


def test_nll_matches_direct_density():
    rng = np.random.default_rng(5)
    for _ in range(200):
        y, m, lv = rng.standard_normal(4), rng.standard_normal(4), rng.uniform(-3, 3, 4)
        direct = -np.sum(np.log(np.exp(-0.5 * (y - m) ** 2 / np.exp(lv)) / np.sqrt(2 * np.pi * np.exp(lv))))
        assert abs(gaussian_nll(y, m, lv).item() - direct) < 1e-12


def test_nll_minimized_at_target():
    y = np.array([0.7, -1.2])
    mean = Tensor(y.copy(), requires_grad=True)
    ad.backward(gaussian_nll(y, mean, np.array([0.4, -0.3])))
    np.testing.assert_array_equal(mean.grad, np.zeros(2))


def test_kl_identical_is_zero():
    m, lv = np.array([0.3, -1.0]), np.array([0.5, -0.2])
    assert gaussian_kl(m, lv, m, lv).item() == pytest.approx(0.0, abs=1e-15)


def test_kl_unit_shift_against_quadrature():
    closed = gaussian_kl([1.0], [0.0], [0.0], [0.0]).item()
    assert closed == pytest.approx(0.5, abs=1e-15)
    assert kl_quadrature([1.0], [1.0], [0.0], [1.0]) == pytest.approx(0.5, abs=1e-9)


def test_kl_random_pairs_against_quadrature():
    rng = np.random.default_rng(11)
    for _ in range(20):
        mq, mp = rng.standard_normal(8), rng.standard_normal(8)
        lq, lp = rng.uniform(-2, 2, 8), rng.uniform(-2, 2, 8)
        closed = gaussian_kl(mq, lq, mp, lp).item()
        assert abs(closed - kl_quadrature(mq, np.exp(lq), mp, np.exp(lp))) < 1e-6


def test_kl_nonnegative():
    rng = np.random.default_rng(12)
    for _ in range(500):
        args = [rng.standard_normal(3) * 3 for _ in range(4)]
        assert gaussian_kl(*args).item() >= 0.0


def test_gaussian_head_clamps_logvar():
    head = GaussianHead(2, 3, np.random.default_rng(0))
    head.logvar_head.bias.data[:] = [100.0, -100.0, 0.0]
    _, lv = head(np.zeros(2))
    np.testing.assert_array_equal(lv.data, [LOGVAR_MAX, LOGVAR_MIN, 0.0])
    assert np.all(np.exp(lv.data) > 0)


def test_init_deterministic_and_seed_dependent():
    a = init_params([4, 8, 2], 7)
    b = init_params([4, 8, 2], 7)
    c = init_params([4, 8, 2], 8)
    for (n, p), (_, q), (_, r) in zip(a.named_parameters(), b.named_parameters(), c.named_parameters()):
        assert np.array_equal(p.data, q.data)
        if "weight" in n:
            assert not np.array_equal(p.data, r.data)
        else:
            np.testing.assert_array_equal(p.data, 0.0)


def test_init_uniform_variance():
    lin = Linear(100, 100, np.random.default_rng(0))
    bound = 1.0 / math.sqrt(100)
    assert np.var(lin.weight.data) == pytest.approx(bound**2 / 3, rel=0.1)
    assert np.abs(lin.weight.data).max() <= bound


def test_mlp_state_dict_roundtrip():
    m = MLP([3, 5, 2], np.random.default_rng(0))
    other = MLP([3, 5, 2], np.random.default_rng(1))
    other.load_state_dict(m.state_dict())
    x = np.array([0.1, 0.2, -0.3])
    np.testing.assert_array_equal(m(x).data, other(x).data)
    assert count_params(m)["total"] == 3 * 5 + 5 + 5 * 2 + 2
