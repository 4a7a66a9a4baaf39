"""Declarative scenario descriptions for Cases 1-7 and their data.

A ScenarioSpec fully determines the reference model, the noise, the training
strategy and the seeds.  ``build_data`` turns it into training observations
plus the reference series used for scoring.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .data_pipeline import (gen_gaussian_obs, gen_poisson_obs, load_surveillance_csv,
                            read_surveillance_csv, scale_time_and_counts, subsample_weekly)
from .errors import ConfigError
from .sir_models import (ModelParams, RateFunction, daily_increments, read_rate_csv,
                         simulate_epidemic)
from .trainer import TrainConfig

CASE_IDS = (1, 2, 3, 4, 5, 6, 7)
SYNTHETIC_CASES = (1, 2, 3, 4, 5)

# two Gaussian bumps over a low baseline; gives two infection waves with peak
# prevalence about two orders of magnitude below the constant-beta case
TWO_WAVE_BETA = RateFunction("two_wave", (0.12, 0.5, 10.0, 21.0, 0.2, 66.0, 12.0))
CASE5_SIGMA = RateFunction("piecewise", (0.2, 0.18, 0.1, 0.06, 0.05), (0.0, 20.0, 40.0, 60.0, 120.0))
EARLY_RT = 3.012
EARLY_RT_DAYS = 20.0


def bundled(name):
    """Path of a data file shipped with the package."""
    return Path(str(resources.files("epipinn") / "data" / name))


@dataclass
class ScenarioSpec:
    case_id: int
    variant: str
    strategy: str = "split"
    params: dict = field(default_factory=dict)
    beta: dict | None = None
    rt: dict | None = None
    rt_csv: str | None = None
    rt_clamp_days: float | None = None
    sigma: dict | None = None
    infection_noise: str = "poisson"
    noise_cv: float = 0.4
    hosp_noise: str = "poisson"
    C: float | None = 1e5
    C_H: float | None = 1e3
    cadence: str = "daily"
    data_csv: str | None = None
    reference_csv: str | None = None
    alpha_r: float = 6.0
    data_seed: int = 1
    train: dict = field(default_factory=dict)
    windows: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.case_id not in CASE_IDS and self.case_id != 0:
            raise ConfigError(f"unknown case {self.case_id}")
        if self.variant not in ("full", "reduced", "hosp", "hosp_I"):
            raise ConfigError(f"unknown model variant {self.variant!r}")
        if self.strategy not in ("joint", "split"):
            raise ConfigError("strategy is 'joint' or 'split'")
        if self.cadence not in ("daily", "weekly"):
            raise ConfigError("cadence is 'daily' or 'weekly'")
        if self.infection_noise not in ("poisson", "gaussian", "none"):
            raise ConfigError(f"unknown noise model {self.infection_noise!r}")
        if self.hosp_noise not in ("poisson", "none"):
            raise ConfigError(f"unknown noise model {self.hosp_noise!r}")
        if self.variant == "hosp_I" and self.data_csv is None:
            raise ConfigError("the daily-infection model needs a surveillance CSV")
        if self.data_csv is None and self.beta is None and self.rt is None and self.rt_csv is None:
            raise ConfigError("synthetic scenario needs beta, rt or rt_csv")
        self.model_params()
        self.train_config()

    @property
    def synthetic(self):
        return self.data_csv is None

    def model_params(self):
        return ModelParams(**self.params)

    def train_config(self, **overrides):
        d = dict(self.train)
        d.update(overrides)
        d["strategy"] = f"{self.variant}_{self.strategy}"
        unknown = set(d) - set(TrainConfig.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown training setting(s): {', '.join(sorted(unknown))}")
        return TrainConfig(**d)

    def rate(self, name):
        if name == "rt" and self.rt_csv is not None:
            return read_rate_csv(_resolve(self.rt_csv), self.rt_clamp_days,
                                 EARLY_RT if self.rt_clamp_days else None)
        d = getattr(self, name)
        return None if d is None else RateFunction.from_dict(d)

    def to_dict(self):
        return asdict(self)

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown scenario field(s): {', '.join(sorted(extra))}")
        if "case_id" not in d or "variant" not in d:
            raise ConfigError("scenario needs case_id and variant")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(d)

    def with_strategy(self, strategy):
        return replace(self, strategy=strategy)


def _resolve(path):
    p = Path(path)
    if not p.is_absolute() and not p.exists() and bundled(p.name).exists():
        return bundled(p.name)
    return p


def case_spec(case_id, strategy="split", weekly=False, **train):
    """The shipped definition of Case ``case_id`` (1-7)."""
    if case_id not in CASE_IDS:
        raise ConfigError(f"unknown case {case_id}")
    base = dict(case_id=case_id, strategy=strategy, train=dict(train))
    if case_id == 1:
        base["train"].setdefault("constant_roles", ["beta"])
        s = ScenarioSpec(variant="full", params={"tf": 90.0}, beta=RateFunction.constant(0.6).to_dict(),
                         cadence="weekly" if weekly else "daily", **base)
        return s
    if weekly:
        raise ConfigError("weekly data is only defined for Case 1")
    if case_id == 2:
        return ScenarioSpec(variant="full", params={"tf": 90.0}, beta=TWO_WAVE_BETA.to_dict(),
                            windows={"beta": 70, "Rt": 70}, **base)
    if case_id == 3:
        return ScenarioSpec(variant="full", params={"tf": 90.0}, rt_csv="iss_rt_standin.csv",
                            rt_clamp_days=EARLY_RT_DAYS, windows={"beta": 70, "Rt": 70}, **base)
    if case_id == 4:
        return ScenarioSpec(variant="reduced", params={"tf": 120.0}, beta=TWO_WAVE_BETA.to_dict(),
                            infection_noise="gaussian", windows={"Rt": 100}, **base)
    if case_id == 5:
        return ScenarioSpec(variant="hosp", params={"tf": 120.0}, beta=TWO_WAVE_BETA.to_dict(),
                            sigma=CASE5_SIGMA.to_dict(), infection_noise="gaussian",
                            windows={"Rt": 100, "sigma": 100}, **base)
    if case_id == 6:
        base["train"].setdefault("constant_roles", ["sigma"])
    return ScenarioSpec(variant="hosp_I", params={"tf": 90.0}, data_csv="surveillance_standin.csv",
                        reference_csv="surveillance_standin_reference.csv", C=None, C_H=None, **base)


@dataclass
class ScenarioData:
    """Training observations plus reference series on the evaluation grid."""

    observations: object
    eval_days: np.ndarray
    reference: dict
    params: ModelParams
    trajectory: object = None


def eval_grid(params):
    """Integer days ``t0 .. tf-1``: one point per day of the window."""
    return params.t0 + np.arange(int(round(params.horizon)), dtype=float)


def _reference_from_traj(spec, traj, days, params):
    sub = traj.at_days(days)
    ref = {"S": sub["S"], "I": sub["I"], "R": sub["R"], "beta": sub["beta"], "Rt": sub["Rt"]}
    if spec.variant in ("hosp", "hosp_I"):
        ref["sigma"] = sub["sigma"]
        ref["Delta_H"] = daily_increments(traj, "Sigma_H", days, params.delta)
    return ref


def simulate_reference(spec):
    """Noise-free trajectory of a synthetic scenario."""
    params = spec.model_params()
    beta, rt, sigma = spec.rate("beta"), spec.rate("rt"), spec.rate("sigma")
    if beta is not None and rt is not None:
        raise ConfigError("give either beta or rt, not both")
    return simulate_epidemic(params, beta=beta, rt=rt, sigma=sigma)


def build_data(spec, seed=None):
    """Observations and references for ``spec``.

    ``seed`` overrides ``spec.data_seed`` for the noise draws.
    """
    seed = spec.data_seed if seed is None else seed
    params = spec.model_params()
    days = eval_grid(params)
    if not spec.synthetic:
        return _build_surveillance(spec, params, days)
    traj = simulate_reference(spec)
    ref = _reference_from_traj(spec, traj, days, params)
    ss = np.random.SeedSequence(seed)
    inf_ss, hosp_ss = ss.spawn(2)
    if spec.infection_noise == "poisson":
        I_obs = gen_poisson_obs(ref["I"], np.random.default_rng(inf_ss))
    elif spec.infection_noise == "gaussian":
        I_obs = gen_gaussian_obs(ref["I"], np.random.default_rng(inf_ss), spec.noise_cv)
    else:
        I_obs = ref["I"].copy()
    H_obs = None
    if spec.variant == "hosp":
        H_obs = ref["Delta_H"]
        if spec.hosp_noise == "poisson":
            H_obs = gen_poisson_obs(H_obs, np.random.default_rng(hosp_ss))
    C = spec.C if spec.C is not None else float(I_obs.max())
    C_H = spec.C_H if spec.C_H is not None else (float(H_obs.max()) if H_obs is not None else 1.0)
    obs = scale_time_and_counts(days, I_obs, params, C, C_H if H_obs is not None else 1.0,
                                hospitalizations=H_obs)
    if spec.cadence == "weekly":
        obs = subsample_weekly(obs)
    return ScenarioData(obs, days, ref, params, traj)


def read_reference_csv(path):
    """Columns of a ``t_days,...`` reference table as arrays."""
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=float, encoding="utf-8")
    return {name: np.atleast_1d(data[name]) for name in data.dtype.names}


def _build_surveillance(spec, params, days):
    path = _resolve(spec.data_csv)
    dates, _, _ = read_surveillance_csv(path)
    if len(dates) < days.size:
        raise ConfigError(f"{path}: {len(dates)} rows, need {days.size}")
    full = load_surveillance_csv(path, replace(params, tf=params.t0 + len(dates)),
                                 spec.alpha_r, spec.C, spec.C_H)
    obs = full.window(days[-1])
    obs = replace(obs, times_scaled=(obs.times_days - params.t0) / params.horizon,
                  scales=replace(obs.scales, tf=params.tf))
    ref = {"Delta_I": obs.infections(), "Delta_H": obs.hospitalizations()}
    if spec.reference_csv is not None:
        table = read_reference_csv(_resolve(spec.reference_csv))
        t = table.pop("t_days")
        for name, col in table.items():
            ref[f"ref_{name}"] = np.interp(days, t, col)
        if "Rt" in table:
            ref["Rt"] = ref.pop("ref_Rt")
    elif spec.rt_csv is not None:
        ref["Rt"] = spec.rate("rt")(days)
    return ScenarioData(obs, days, ref, params)


def surveillance_series(spec):
    """Full-length unscaled series of a surveillance scenario, for forecasting checks."""
    path = _resolve(spec.data_csv)
    dates, cases, hosp = read_surveillance_csv(path)
    out = {"t_days": spec.model_params().t0 + np.arange(len(dates), dtype=float),
           "Delta_I": cases * spec.alpha_r, "Delta_H": hosp}
    if spec.reference_csv is not None:
        out.update({f"ref_{k}": v for k, v in read_reference_csv(_resolve(spec.reference_csv)).items()
                    if k != "t_days"})
    return out


# -- bundled stand-in data ------------------------------------------------------------------

STANDIN_RT = RateFunction("piecewise", (EARLY_RT, EARLY_RT, 2.2, 1.3, 0.9, 0.75, 0.68, 0.72, 0.78),
                          (0.0, 20.0, 25.0, 30.0, 35.0, 45.0, 60.0, 75.0, 90.0))
STANDIN_SIGMA = RateFunction("piecewise", (0.23, 0.23, 0.12, 0.05, 0.03, 0.03),
                             (0.0, 9.0, 18.0, 28.0, 40.0, 90.0))
STANDIN_START = "2020-02-21"
STANDIN_DAYS = 90
STANDIN_I0 = 4.0


def make_standin_data(out_dir, seed=2020, alpha_r=6.0):
    """Write the synthetic stand-ins for the surveillance data and R_t table.

    Files: ``iss_rt_standin.csv`` (``t_days,value``),
    ``surveillance_standin.csv`` (``date,new_cases,new_hospitalizations``;
    cases are true new infections divided by ``alpha_r`` with Poisson noise)
    and ``surveillance_standin_reference.csv`` with the noise-free series.
    """
    from .data_pipeline import write_surveillance_csv
    from .sir_models import write_rate_csv

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    days = np.arange(STANDIN_DAYS, dtype=float)
    write_rate_csv(out / "iss_rt_standin.csv", STANDIN_RT.knots, STANDIN_RT.values)
    params = ModelParams(I0=STANDIN_I0, tf=float(STANDIN_DAYS))
    traj = simulate_epidemic(params, rt=STANDIN_RT, sigma=STANDIN_SIGMA)
    dI = daily_increments(traj, "Sigma_I", days, params.delta)
    dH = daily_increments(traj, "Sigma_H", days, params.delta)
    case_ss, hosp_ss = np.random.SeedSequence(seed).spawn(2)
    cases = gen_poisson_obs(dI / alpha_r, np.random.default_rng(case_ss))
    hosp = gen_poisson_obs(dH, np.random.default_rng(hosp_ss))
    write_surveillance_csv(out / "surveillance_standin.csv", STANDIN_START, cases, hosp)
    with open(out / "surveillance_standin_reference.csv", "w", encoding="utf-8") as fh:
        fh.write("t_days,Rt,sigma,Delta_I,Delta_H\n")
        for row in zip(days, STANDIN_RT(days), STANDIN_SIGMA(days), dI, dH):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    return out
