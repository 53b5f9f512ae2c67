import math

import numpy as np
import pytest

from latenttrack.data import (
    DataError,
    Table,
    build_stream,
    downsample,
    jena_stream,
    load_jena,
    load_stream,
    save_stream,
    synth_stream,
    time_features,
)

FIXTURE = """Date Time,p (mbar),T (degC),rh (%)
01.01.2009 00:10:00,996.52,-8.02,93.3
01.01.2009 00:20:00,996.57,-8.41,93.4
01.01.2009 00:30:00,996.53,-8.51,93.9
"""


def write(tmp_path, text, name="jena.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_fixture(tmp_path):
    t = load_jena(write(tmp_path, FIXTURE))
    assert len(t) == 3
    assert t.columns == ["p (mbar)", "T (degC)", "rh (%)"]
    # hand-summed column totals
    np.testing.assert_allclose(t.values.sum(axis=0), [2989.62, -24.94, 280.6], rtol=0, atol=1e-9)
    assert t.timestamps[1].minute == 20


def test_non_numeric_cell_reports_line(tmp_path):
    bad = FIXTURE.replace("-8.41", "n/a")
    with pytest.raises(DataError, match=":3:"):
        load_jena(write(tmp_path, bad))


def test_ragged_row_reports_line(tmp_path):
    with pytest.raises(DataError, match=":4:"):
        load_jena(write(tmp_path, FIXTURE.replace("93.9", "93.9,1")))


def test_empty_file_rejected(tmp_path):
    with pytest.raises(DataError):
        load_jena(write(tmp_path, ""))


def test_semicolon_delimiter(tmp_path):
    t = load_jena(write(tmp_path, FIXTURE.replace(",", ";")), delimiter=";")
    assert t.values.shape == (3, 3)


def test_downsample():
    t = Table(["a"], np.arange(12.0).reshape(12, 1))
    np.testing.assert_array_equal(downsample(t, 6).values[:, 0], [0, 6])
    np.testing.assert_array_equal(downsample(t, 1).values, t.values)
    assert len(downsample(Table(["a"], np.zeros((100, 1))), 6)) == 17
    with pytest.raises(ValueError):
        downsample(t, 0)


def ramp_table(n=60, seed=0):
    rng = np.random.default_rng(seed)
    return Table(["T (degC)", "p"], rng.normal(size=(n, 2)).cumsum(axis=0))


def test_constant_table_h1():
    s = build_stream(Table(["T (degC)", "p"], np.full((20, 2), 4.0)), history_len=1, horizon=6)
    # history part is constant; only the time encodings move
    np.testing.assert_array_equal(s.x[:, :2], np.broadcast_to(s.x[0, :2], (len(s), 2)))
    np.testing.assert_array_equal(s.y, 4.0)


def test_target_is_horizon_ahead():
    t = ramp_table()
    s = build_stream(t, history_len=3, horizon=6)
    # newest history row of step i is raw row i + H - 1
    np.testing.assert_array_equal(s.y, t.values[3 - 1 + 6 :, 0])
    assert len(s) == 60 - 3 + 1 - 6


def test_insufficient_length():
    with pytest.raises(DataError):
        build_stream(ramp_table(10), history_len=4, horizon=6)


def test_normalization_uses_train_rows_only():
    t = ramp_table(80)
    s = build_stream(t, history_len=4, horizon=6)
    t2 = Table(t.columns, t.values.copy())
    last_visible = s.split - 1 + 4 - 1
    t2.values[last_visible + 1 :] *= 50.0
    s2 = build_stream(t2, history_len=4, horizon=6)
    np.testing.assert_array_equal(s.x[: s.split], s2.x[: s.split])


def test_no_future_leakage_in_features():
    t = ramp_table(80)
    s = build_stream(t, history_len=4, horizon=6, normalize=False)
    for cut in (10, 30, 55):
        t2 = Table(t.columns, t.values.copy())
        t2.values[cut + 1 :] = 999.0
        s2 = build_stream(t2, history_len=4, horizon=6, normalize=False)
        n_safe = cut - 4 + 2  # steps whose newest row is <= cut
        np.testing.assert_array_equal(s.x[:n_safe], s2.x[:n_safe])
        assert not np.array_equal(s.x[n_safe], s2.x[n_safe])


def test_split_is_exact():
    s = build_stream(ramp_table(100), history_len=2, horizon=6, split_fraction=0.7)
    assert s.split == math.floor(0.7 * len(s))
    assert len(s.train()) + len(s.evaluation()) == len(s)
    assert s.evaluation().t[0] == s.train().t[-1] + 1


def test_time_encodings_unit_circle(tmp_path):
    tf = time_features(None, 50, 6.0)
    np.testing.assert_allclose(tf[:, 0] ** 2 + tf[:, 1] ** 2, 1.0, rtol=0, atol=1e-15)
    np.testing.assert_allclose(tf[:, 2] ** 2 + tf[:, 3] ** 2, 1.0, rtol=0, atol=1e-15)
    rows = ["Date Time,T (degC),p"]
    for i in range(120):
        rows.append(f"{1 + i // 144:02d}.01.2009 {(i * 10 // 60) % 24:02d}:{i * 10 % 60:02d}:00,{i * 0.1},{1000 + i}")
    s = jena_stream(write(tmp_path, "\n".join(rows) + "\n"), factor=6, history_len=2)
    assert s.manifest["effective_step_hours"] == 1.0
    assert s.x.shape[1] == 2 * 2 + 4


@pytest.mark.parametrize("kind", ["regime_switch", "seasonal_drift", "anomaly_spike"])
def test_synth_determinism(kind):
    a, b = synth_stream(kind, 300, seed=5), synth_stream(kind, 300, seed=5)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.y, b.y)
    assert not np.array_equal(a.y, synth_stream(kind, 300, seed=6).y)


def test_regime_switch_zero_noise_is_piecewise_linear():
    s = synth_stream("regime_switch", 600, seed=1, n_switches=5, n_regimes=3, noise=0.0)
    coefs = np.array(s.manifest["coefficients"])
    bounds = [0] + s.manifest["switch_points"] + [600]
    for r, (lo, hi) in enumerate(zip(bounds[:-1], bounds[1:])):
        np.testing.assert_allclose(s.y[lo:hi], s.x[lo:hi] @ coefs[r % 3], rtol=0, atol=1e-14)
    assert s.manifest["switch_points"] == [100, 200, 300, 400, 500]


def test_anomaly_index_recorded():
    s = synth_stream("anomaly_spike", 400, seed=0, anomaly_index=250)
    assert s.manifest["anomaly_index"] == 250
    assert int(np.argmax(np.abs(s.y))) == 250
    # the spike only enters features through the next step's lagged target
    assert s.x[251, 0] == s.y[250]
    assert abs(s.x[250, 0]) < 5


def test_synth_rejects_bad_arguments():
    with pytest.raises(ValueError):
        synth_stream("regime_switch", 0)
    with pytest.raises(ValueError):
        synth_stream("nope", 10)


def test_stream_cache_roundtrip(tmp_path):
    s = synth_stream("seasonal_drift", 50, seed=2)
    save_stream(s, tmp_path / "s.tsv")
    back = load_stream(tmp_path / "s.tsv")
    np.testing.assert_array_equal(back.x, s.x)
    np.testing.assert_array_equal(back.y, s.y)
    assert back.split == s.split and back.content_hash() == s.content_hash()
    (tmp_path / "bad.tsv").write_text("# schema: other\n")
    with pytest.raises(DataError):
        load_stream(tmp_path / "bad.tsv")
