"""Observation generation, scaling and ingestion."""
from __future__ import annotations

import csv
import datetime as dt
import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import (MissingColumn, NegativeCount, NegativeMean, NonContiguousDates,
                     OutOfWindow, WrongCadence)
from .losses import ScalingConstants

NORMAL_POISSON_CUTOFF = 1e7


@dataclass
class ObservationSet:
    """Scaled training observations.

    ``infections_kind`` is ``"I"`` (prevalence) or ``"dI"`` (daily new
    infections).  ``hospitalizations_scaled`` is ``None`` unless daily
    hospitalizations are observed.
    """

    times_days: np.ndarray
    times_scaled: np.ndarray
    infections_scaled: np.ndarray | None
    scales: ScalingConstants
    infections_kind: str = "I"
    hospitalizations_scaled: np.ndarray | None = None
    cadence: str = "daily"
    start_date: str | None = None

    @property
    def n_data(self):
        return self.times_days.size

    def infections(self):
        """Unscaled infection counts."""
        return None if self.infections_scaled is None else self.infections_scaled * self.scales.C

    def hospitalizations(self):
        if self.hospitalizations_scaled is None:
            return None
        return self.hospitalizations_scaled * self.scales.C_H

    def window(self, t_end_days):
        """Observations with ``t <= t_end_days``."""
        keep = self.times_days <= t_end_days + 1e-9
        return replace(
            self,
            times_days=self.times_days[keep],
            times_scaled=self.times_scaled[keep],
            infections_scaled=None if self.infections_scaled is None else self.infections_scaled[keep],
            hospitalizations_scaled=(None if self.hospitalizations_scaled is None
                                     else self.hospitalizations_scaled[keep]),
        )


def scale_time(t, t0, tf):
    return (np.asarray(t, dtype=float) - t0) / (tf - t0)


def scale_time_and_counts(times, infections, params, C, C_H=1.0, hospitalizations=None,
                          infections_kind="I", cadence="daily", start_date=None):
    """Map raw days and counts to the dimensionless training variables."""
    times = np.asarray(times, dtype=float)
    if np.any(times < params.t0 - 1e-9) or np.any(times > params.tf + 1e-9):
        raise OutOfWindow(f"times must lie in [{params.t0}, {params.tf}]")
    if np.any(np.diff(times) <= 0):
        raise ValueError("observation times must be strictly increasing")
    sc = ScalingConstants(C=float(C), N=params.N, delta=params.delta, t0=params.t0,
                          tf=params.tf, C_H=float(C_H))
    inf = None if infections is None else np.asarray(infections, dtype=float) / sc.C
    hosp = None if hospitalizations is None else np.asarray(hospitalizations, dtype=float) / sc.C_H
    for arr in (inf, hosp):
        if arr is not None and (arr.shape != times.shape or np.any(arr < 0) or not np.all(np.isfinite(arr))):
            raise ValueError("counts must be finite, nonnegative and match the times")
    return ObservationSet(times, scale_time(times, params.t0, params.tf), inf, sc,
                          infections_kind, hosp, cadence, start_date)


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def gen_poisson_obs(means, seed):
    """Independent Poisson counts with the given means.

    Above 1e7 a rounded normal with matching mean and variance is used.
    """
    means = np.asarray(means, dtype=float)
    if np.any(means < 0) or not np.all(np.isfinite(means)):
        raise NegativeMean("Poisson means must be finite and nonnegative")
    rng = _rng(seed)
    big = means > NORMAL_POISSON_CUTOFF
    out = np.empty(means.shape)
    out[~big] = rng.poisson(means[~big])
    if big.any():
        m = means[big]
        out[big] = np.rint(rng.normal(m, np.sqrt(m)))
    return out


def gen_gaussian_obs(means, seed, cv=0.4):
    """``mean + N(0, (cv*mean)^2)``, rounded, negatives set to zero."""
    means = np.asarray(means, dtype=float)
    if np.any(means < 0):
        raise NegativeMean("means must be nonnegative")
    rng = _rng(seed)
    return np.maximum(np.rint(means + rng.normal(0.0, 1.0, means.shape) * cv * means), 0.0)


def subsample_weekly(obs):
    """Keep every seventh day starting from the first."""
    if obs.cadence != "daily":
        raise WrongCadence(f"cannot subsample {obs.cadence} data")
    keep = np.flatnonzero(np.isclose(np.mod(obs.times_days - obs.times_days[0], 7.0), 0.0))
    return replace(
        obs,
        times_days=obs.times_days[keep],
        times_scaled=obs.times_scaled[keep],
        infections_scaled=None if obs.infections_scaled is None else obs.infections_scaled[keep],
        hospitalizations_scaled=(None if obs.hospitalizations_scaled is None
                                 else obs.hospitalizations_scaled[keep]),
        cadence="weekly",
    )


SURVEILLANCE_COLUMNS = ("date", "new_cases", "new_hospitalizations")


def read_surveillance_csv(path):
    """Raw rows ``(dates, new_cases, new_hospitalizations)`` with validation."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in SURVEILLANCE_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise MissingColumn(f"{path}: missing column(s) {', '.join(missing)}")
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    dates = [dt.date.fromisoformat(r["date"].strip()) for r in rows]
    for a, b in zip(dates, dates[1:]):
        if (b - a).days != 1:
            raise NonContiguousDates(f"{path}: gap or disorder between {a} and {b}")
    cases = np.array([float(r["new_cases"]) for r in rows])
    hosp = np.array([float(r["new_hospitalizations"]) for r in rows])
    if np.any(cases < 0) or np.any(hosp < 0):
        raise NegativeCount(f"{path}: negative counts")
    return dates, cases, hosp


def load_surveillance_csv(path, params, alpha_r=6.0, C=None, C_H=None):
    """Daily cases (times the reporting ratio) and hospitalizations, scaled.

    ``C`` and ``C_H`` default to the maxima of the corrected cases and of the
    hospitalizations over the file.  Day 0 is the first date; ``params``
    supplies N, delta and the window ``[t0, tf]`` (``tf`` is typically the
    number of rows).
    """
    dates, cases, hosp = read_surveillance_csv(path)
    cases = cases * alpha_r
    C = float(cases.max()) if C is None else C
    C_H = float(hosp.max()) if C_H is None else C_H
    if C <= 0 or C_H <= 0:
        raise ValueError(f"{path}: all-zero series cannot be scaled")
    days = params.t0 + np.arange(len(dates), dtype=float)
    return scale_time_and_counts(days, cases, params, C, C_H, hospitalizations=hosp,
                                 infections_kind="dI", start_date=dates[0].isoformat())


def write_surveillance_csv(path, start_date, cases, hosp):
    start = dt.date.fromisoformat(start_date)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SURVEILLANCE_COLUMNS)
        for k, (c, h) in enumerate(zip(cases, hosp)):
            w.writerow([(start + dt.timedelta(days=k)).isoformat(), int(c), int(h)])


def export_dataset(obs, path, provenance):
    """Write ``t_days,observed_I[,observed_dH,observed_dI]`` plus a JSON sidecar."""
    cols = {}
    if obs.infections_kind == "I":
        cols["observed_I"] = obs.infections()
    if obs.hospitalizations_scaled is not None:
        cols["observed_dH"] = obs.hospitalizations()
    if obs.infections_kind == "dI":
        cols["observed_dI"] = obs.infections()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t_days", *cols])
        for i, t in enumerate(obs.times_days):
            w.writerow([repr(float(t)), *(repr(float(v[i])) for v in cols.values())])
    sidecar = dict(provenance)
    sidecar["scales"] = obs.scales.to_dict()
    sidecar["cadence"] = obs.cadence
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
