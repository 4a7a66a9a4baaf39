import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from epipinn import trainer as T
from epipinn.autodiff_net import ConstantNet
from epipinn.data_pipeline import scale_time_and_counts
from epipinn.errors import EmptyWindow, LengthMismatch, ZeroReferenceNorm
from epipinn.evaluation import (ErrorReport, band_stats, forecast, multi_run_stats, relative_l2,
                                sequential_window_protocol, window_mask, windowed_error,
                                write_bands_csv, write_forecast_csv)
from epipinn.scenarios import build_data, case_spec
from epipinn.sir_models import ModelParams

P = ModelParams()
DAYS = np.arange(90.0)
finite = st.floats(-1e6, 1e6, allow_nan=False)


def test_relative_l2_examples():
    y = np.linspace(1, 5, 90)
    assert relative_l2(y, y) == 0
    assert relative_l2(2 * y, y) == pytest.approx(1.0, rel=1e-15)
    assert relative_l2(np.zeros(90), y) == 1.0
    with pytest.raises(ZeroReferenceNorm):
        relative_l2(y, np.zeros(90))
    with pytest.raises(LengthMismatch):
        relative_l2(y[:-1], y)


@settings(max_examples=50)
@given(arrays(float, 20, elements=finite), arrays(float, 20, elements=finite),
       st.floats(-1e3, 1e3).filter(lambda a: abs(a) > 1e-3))
def test_relative_l2_scale_invariance_and_triangle(p, y, a):
    if np.linalg.norm(y) < 1e-6:
        return
    e = relative_l2(p, y)
    assert relative_l2(a * p, a * y) == pytest.approx(e, rel=1e-9, abs=1e-12)
    assert e <= (np.linalg.norm(p) + np.linalg.norm(y)) / np.linalg.norm(y) * (1 + 1e-12)


def test_windowed_error():
    y = np.linspace(1, 3, 90)
    p = y * 1.1
    assert windowed_error(p, y, DAYS, 90) == relative_l2(p, y)
    q = y.copy()
    q[:20] = 99.0
    assert windowed_error(q, y, DAYS, 70) == 0
    assert window_mask(DAYS, 70).sum() == 70 and window_mask(DAYS, 70)[20]
    # residuals (3, 4, 0) over reference (0, 0, 5)
    assert windowed_error([3.0, 4.0, 5.0], [0.0, 0.0, 5.0], [0.0, 1.0, 2.0], 3) == pytest.approx(1.0)
    with pytest.raises(EmptyWindow):
        windowed_error(p, y, DAYS, 0)
    with pytest.raises(ValueError):
        window_mask(DAYS, 91)
    with pytest.raises(LengthMismatch):
        windowed_error(p, y, DAYS[:-1], 10)


def test_error_report_json():
    r = ErrorReport(1, "full_split", {"S": 1e-3}, {"beta_last70d": 0.01}, {"beta_hat": 0.6},
                    {"data": 2.0, "physics": 1.5}, {"S": 7801}, 0)
    assert r.total_wall_time == 3.5
    import json
    back = ErrorReport.from_dict(json.loads(r.to_json()))
    assert back == r
    assert r.to_json() == back.to_json()
    with pytest.raises(ValueError):
        ErrorReport(1, "x", {"S": -1.0})


def test_band_stats_and_multi_run(tmp_path):
    y = np.linspace(0, 1, 10)
    c = 0.3
    mean, std = band_stats([y, y + 2 * c])
    assert np.allclose(std, c * np.sqrt(2), rtol=1e-12)
    assert np.allclose(mean, y + c)
    stats = multi_run_stats(lambda s: {"I": y.copy()}, n_runs=4, base_seed=7)
    assert stats["seeds"] == [7, 8, 9, 10]
    assert np.array_equal(stats["mean"]["I"], y) and np.all(stats["std"]["I"] == 0)
    write_bands_csv(tmp_path / "b.csv", np.arange(10.0), stats)
    assert len((tmp_path / "b.csv").read_text().splitlines()) == 11
    with pytest.raises(ValueError):
        multi_run_stats(lambda s: {}, n_runs=1)


def _plateau_obs():
    return scale_time_and_counts(DAYS, np.full(90, 5e4), P, 1e5)


def _short_model(t_end_days=60):
    cfg = T.TrainConfig(strategy="reduced_split", epochs_data=3, epochs_physics=3, n_collocation=100)
    obs = _plateau_obs().window(t_end_days)
    return T.train(cfg, obs, 1.0, t_end_days / 90)


def test_forecast_shape_and_continuity(tmp_path):
    m = _short_model()
    fb = forecast(m, 15)
    assert np.array_equal(fb.days, np.arange(61.0, 76.0))
    assert np.array_equal(fb.train_days, np.arange(0.0, 61.0))
    # continuity at the window end: same network, same point
    at_end = T.predict(m, [60.0])
    for q in fb.train_values:
        assert fb.train_values[q][-1] == pytest.approx(at_end[q][0], rel=1e-12)
    empty = forecast(m, 0)
    assert empty.days.size == 0 and all(v.size == 0 for v in empty.values.values())
    write_forecast_csv(tmp_path / "f.csv", fb)
    rows = list(csv.reader(open(tmp_path / "f.csv")))
    assert rows[0] == ["t_days", "quantity", "value", "kind"]
    assert {r[3] for r in rows[1:]} == {"train", "forecast"}
    assert len(rows) == 1 + 2 * (61 + 15)


def test_forecast_constant_networks_flat():
    m = _short_model()
    m.networks = {"I": ConstantNet(0.4), "Rt": ConstantNet(1.0)}
    fb = forecast(m, 15)
    assert np.allclose(fb.values["I"], fb.train_values["I"][-1], rtol=1e-12)
    assert np.allclose(fb.values["Rt"], 1.0)


def test_forecast_plateau_fixture():
    cfg = T.TrainConfig(strategy="reduced_split", epochs_data=300, epochs_physics=100,
                        n_collocation=1000, seed=2)
    m = T.train(cfg, _plateau_obs().window(60), 1.0, 60 / 90)
    fb = forecast(m, 15)
    assert np.all(np.abs(fb.values["I"] / 5e4 - 1) <= 0.10)


def test_sequential_window_protocol_continuation(monkeypatch):
    spec = case_spec(7)
    data = build_data(spec)
    starts = []
    orig = T._run_phase

    def spy(model, phase, *a, **kw):
        starts.append({r: n.params.copy() for r, n in model.networks.items()})
        return orig(model, phase, *a, **kw)

    monkeypatch.setattr(T, "_run_phase", spy)
    out = sequential_window_protocol(spec, data=data, epochs_data=2, epochs_physics=2,
                                     n_collocation=100, window_epochs_data=2, window_epochs_physics=2)
    assert len(out) == 4
    assert [b.window_end for _, b in out] == [15.0, 30.0, 45.0, 60.0]
    # phases per window: 2 for the split strategy; window 2 starts where window 1 ended
    first_model = out[0][0]
    w2_start = starts[2]
    for role, net in first_model.networks.items():
        assert np.array_equal(w2_start[role], net.params)
    last = out[-1][1]
    assert np.array_equal(last.days, np.arange(61.0, 76.0))
    for v in last.values.values():
        assert np.all(np.isfinite(v)) and np.all(v >= 0)
    with pytest.raises(ValueError):
        sequential_window_protocol(spec, windows=(30, 15), data=data)
