"""Error metrics, multi-run statistics and forecasting by extrapolation."""
from __future__ import annotations

import copy
import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import EmptyWindow, LengthMismatch, ZeroReferenceNorm


def relative_l2(predicted, reference):
    """``||pred - ref||_2 / ||ref||_2``."""
    p = np.asarray(predicted, dtype=float)
    r = np.asarray(reference, dtype=float)
    if p.shape != r.shape:
        raise LengthMismatch(f"series shapes differ: {p.shape} vs {r.shape}")
    den = np.linalg.norm(r)
    if den == 0:
        raise ZeroReferenceNorm("reference series has zero norm")
    return float(np.linalg.norm(p - r) / den)


def window_mask(days, last_k):
    """Grid points among the final ``last_k`` days, endpoint included."""
    days = np.asarray(days, dtype=float)
    if last_k <= 0 or days.size == 0:
        raise EmptyWindow("window must contain at least one day")
    if last_k > days[-1] - days[0] + 1 + 1e-9:
        raise ValueError(f"window of {last_k} days exceeds the grid")
    return days > days[-1] - last_k + 1e-9


def windowed_error(predicted, reference, days, last_k):
    """Relative L2 error restricted to the final ``last_k`` days of ``days``."""
    p = np.asarray(predicted, dtype=float)
    r = np.asarray(reference, dtype=float)
    if p.shape != r.shape or r.shape != np.shape(days):
        raise LengthMismatch("series and grid must have equal length")
    m = window_mask(days, last_k)
    if not m.any():
        raise EmptyWindow("no grid points in the window")
    return relative_l2(p[m], r[m])


@dataclass
class ErrorReport:
    case_id: int
    strategy: str
    errors: dict = field(default_factory=dict)
    windowed: dict = field(default_factory=dict)
    estimates: dict = field(default_factory=dict)
    wall_time_s: dict = field(default_factory=dict)
    n_params: dict = field(default_factory=dict)
    seed: int | None = None
    runs: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, v in {**self.errors, **self.windowed}.items():
            if not v >= 0:
                raise ValueError(f"error {k} must be nonnegative, got {v}")

    @property
    def total_wall_time(self):
        return float(sum(self.wall_time_s.values()))

    def to_dict(self):
        d = asdict(self)
        d["total_wall_time_s"] = self.total_wall_time
        return d

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d.pop("total_wall_time_s", None)
        return cls(**d)


def _n_params(model):
    return {role: int(net.n_params) for role, net in sorted(model.networks.items())}


def evaluate_model(model, data, case_id=0, windows=None):
    """Score a trained model against the references in ``data``.

    Every quantity present both in the prediction and in ``data.reference``
    gets a full-grid error; ``windows`` maps a quantity to a last-k-days
    window for the windowed variant.
    """
    from .trainer import predict

    days = data.eval_days
    pred = predict(model, days)
    errors, windowed = {}, {}
    for q, ref in data.reference.items():
        if q in pred and not q.startswith("ref_"):
            errors[q] = relative_l2(pred[q], ref)
    if "sigma" in pred and "ref_sigma" in data.reference:
        errors["sigma"] = relative_l2(pred["sigma"], data.reference["ref_sigma"])
    for q, k in sorted((windows or {}).items()):
        if q in errors:
            ref = data.reference.get(q, data.reference.get(f"ref_{q}"))
            windowed[f"{q}_last{k}d"] = windowed_error(pred[q], ref, days, k)
    estimates = {}
    if "beta" in model.config.constant_roles and "beta" in model.networks:
        estimates["beta_hat"] = float(model.networks["beta"].value)
    if "sigma" in model.config.constant_roles and "sigma" in model.networks:
        estimates["sigma_hat"] = float(model.networks["sigma"].value)
    return ErrorReport(case_id, model.strategy, errors, windowed, estimates,
                       dict(model.wall_time_s), _n_params(model), model.config.seed)


# -- repeated runs -----------------------------------------------------------------------------


def band_stats(series):
    """Per-point mean and sample standard deviation of equally long series."""
    arr = np.asarray(series, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 2:
        raise ValueError("need at least two runs")
    return arr.mean(axis=0), arr.std(axis=0, ddof=1)


def multi_run_stats(runner, n_runs=10, base_seed=0, quantities=None):
    """Run ``runner(seed)`` for seeds ``base_seed + i`` and aggregate.

    ``runner`` returns a dict of equally long prediction arrays (for instance
    ``lambda s: predict(train(...seed=s...), days)``).  Returns
    ``{"seeds": [...], "mean": {q: ...}, "std": {q: ...}, "outputs": [...]}``.
    """
    if n_runs < 2:
        raise ValueError("n_runs must be at least 2")
    seeds = [base_seed + i for i in range(n_runs)]
    outputs = [runner(s) for s in seeds]
    names = quantities or sorted(outputs[0])
    mean, std = {}, {}
    for q in names:
        mean[q], std[q] = band_stats([o[q] for o in outputs])
    return {"seeds": seeds, "mean": mean, "std": std, "outputs": outputs}


def write_bands_csv(path, days, stats):
    """Tidy ``t_days,quantity,mean,std`` table."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t_days", "quantity", "mean", "std"])
        for q in sorted(stats["mean"]):
            for t, m, s in zip(days, stats["mean"][q], stats["std"][q]):
                w.writerow([repr(float(t)), q, repr(float(m)), repr(float(s))])


# -- forecasting ---------------------------------------------------------------------------------


@dataclass
class ForecastBundle:
    window_end: float
    horizon: int
    days: np.ndarray
    values: dict
    train_days: np.ndarray
    train_values: dict

    def rows(self):
        for kind, days, vals in (("train", self.train_days, self.train_values),
                                 ("forecast", self.days, self.values)):
            for q in sorted(vals):
                for t, v in zip(days, vals[q]):
                    yield float(t), q, float(v), kind


def forecast(model, horizon_days=15):
    """Extrapolate every network past the training window, one point per day."""
    from .trainer import predict

    sc = model.scales
    t_end = sc.t0 + model.t_end_scaled * sc.T
    t_end = float(np.round(t_end, 9))
    days = t_end + np.arange(1, int(horizon_days) + 1, dtype=float)
    train_days = np.arange(sc.t0, t_end + 1e-9, 1.0)
    values = predict(model, days) if days.size else {}
    if not days.size:
        values = {q: np.zeros(0) for q in predict(model, train_days[-1:])}
    return ForecastBundle(t_end, int(horizon_days), days, values, train_days,
                          predict(model, train_days))


def write_forecast_csv(path, bundles):
    """``t_days,quantity,value,kind`` for one bundle or a list (with a window column)."""
    if isinstance(bundles, ForecastBundle):
        bundles = [bundles]
    multi = len(bundles) > 1
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t_days", "quantity", "value", "kind"] + (["window_end"] if multi else []))
        for b in bundles:
            for t, q, v, kind in b.rows():
                w.writerow([repr(t), q, repr(v), kind] + ([repr(b.window_end)] if multi else []))


def sequential_window_protocol(spec, windows=(15, 30, 45, 60), horizon=15, seed=None,
                               data=None, **train_overrides):
    """Train on growing windows ``[t0, t0+w]``, forecasting after each.

    The first window trains from scratch; each later window continues from
    the previous networks and optimizer state.  Returns a list of
    ``(model_snapshot, ForecastBundle)``.
    """
    from .scenarios import build_data
    from .trainer import continue_training, train

    if not windows:
        raise ValueError("need at least one window")
    if any(b <= a for a, b in zip(windows, windows[1:])):
        raise ValueError("windows must be strictly increasing")
    if seed is not None:
        train_overrides["seed"] = seed
    cfg = spec.train_config(**train_overrides)
    data = build_data(spec) if data is None else data
    obs_all = data.observations
    params = data.params
    last = params.t0 + max(windows) + horizon
    if obs_all.times_days[-1] < last - 1 - 1e-9 and spec.synthetic is False:
        raise ValueError(f"data cover {obs_all.times_days[-1]:g} days, need {last:g}")
    out = []
    model = None
    for i, w in enumerate(windows):
        obs = obs_all.window(params.t0 + w)
        t_end_s = w / params.horizon
        if model is None:
            model = train(cfg, obs, params.I0, t_end_s)
        else:
            model = continue_training(model, obs, t_end_s, i)
        out.append((copy.deepcopy(model), forecast(model, horizon)))
    return out
