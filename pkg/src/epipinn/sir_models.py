"""SIR-family right-hand sides, a fixed-step RK4 integrator and rate functions.

These give the ground truth for synthetic scenarios and serve as oracles in
the tests.  Counts are in individuals and time in days throughout.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, NonFiniteState, StepTooLarge

RK4_STEP = 0.1


@dataclass(frozen=True)
class ModelParams:
    N: float = 56e6
    delta: float = 0.2
    I0: float = 1.0
    t0: float = 0.0
    tf: float = 90.0

    def __post_init__(self):
        if not self.N > 0:
            raise ConfigError("N must be positive")
        if not self.delta > 0:
            raise ConfigError("delta must be positive")
        if not 0 < self.I0 < self.N:
            raise ConfigError("need 0 < I0 < N")
        if not self.tf > self.t0:
            raise ConfigError("need tf > t0")

    @property
    def horizon(self):
        return self.tf - self.t0


@dataclass(frozen=True)
class RateFunction:
    """Time-dependent coefficient: beta (1/day), R_t or sigma (dimensionless).

    ``kind`` is ``constant`` (``values=(c,)``), ``piecewise`` (``knots`` and
    ``values``, linear in between, constant outside) or ``two_wave``
    (``values=(b0, a1, t1, w1, a2, t2, w2)``, a baseline plus two Gaussian
    bumps).
    """

    kind: str
    values: tuple
    knots: tuple = ()

    def __post_init__(self):
        if self.kind == "constant":
            if len(self.values) != 1:
                raise ConfigError("constant rate takes exactly one value")
        elif self.kind == "piecewise":
            k = np.asarray(self.knots, dtype=float)
            if len(self.knots) != len(self.values) or len(self.knots) < 1:
                raise ConfigError("piecewise rate needs matching knots and values")
            if np.any(np.diff(k) <= 0):
                raise ConfigError("piecewise knots must be strictly increasing")
        elif self.kind == "two_wave":
            if len(self.values) != 7:
                raise ConfigError("two_wave rate takes (b0, a1, t1, w1, a2, t2, w2)")
        else:
            raise ConfigError(f"unknown rate kind {self.kind!r}")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.full(t.shape, float(self.values[0])) if t.ndim else float(self.values[0])
        if self.kind == "piecewise":
            out = np.interp(t, self.knots, self.values)
            return out if t.ndim else float(out)
        b0, a1, t1, w1, a2, t2, w2 = self.values
        out = b0 + a1 * np.exp(-((t - t1) / w1) ** 2) + a2 * np.exp(-((t - t2) / w2) ** 2)
        return out if t.ndim else float(out)

    def to_dict(self):
        return {"kind": self.kind, "values": list(self.values), "knots": list(self.knots)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], tuple(d["values"]), tuple(d.get("knots", ())))

    @classmethod
    def constant(cls, c):
        return cls("constant", (float(c),))


def read_rate_csv(path, clamp_until=None, clamp_value=None):
    """Read a ``t_days,value`` table into a piecewise-linear RateFunction.

    With ``clamp_until``, every knot at ``t < clamp_until`` is replaced by
    ``clamp_value`` (the early free-transmission phase).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"t_days", "value"} <= set(reader.fieldnames):
            raise ConfigError(f"{path}: expected header t_days,value")
        rows = [(float(r["t_days"]), float(r["value"])) for r in reader]
    if not rows:
        raise ConfigError(f"{path}: empty rate table")
    t, v = map(np.array, zip(*rows))
    if np.any(np.diff(t) <= 0):
        raise ConfigError(f"{path}: t_days must be strictly increasing")
    if clamp_until is not None:
        v = np.where(t < clamp_until, clamp_value, v)
    return RateFunction("piecewise", tuple(v.tolist()), tuple(t.tolist()))


def write_rate_csv(path, times, values):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t_days", "value"])
        for t, v in zip(times, values):
            w.writerow([repr(float(t)), repr(float(v))])


@dataclass
class EpidemicTrajectory:
    times: np.ndarray
    states: np.ndarray  # (n_times, n_compartments)
    labels: tuple
    N: float
    extras: dict = field(default_factory=dict)

    def __getitem__(self, label):
        if label in self.extras:
            return self.extras[label]
        return self.states[:, self.labels.index(label)]

    def at_days(self, days):
        """Restrict to the grid points closest to the given days."""
        days = np.asarray(days, dtype=float)
        idx = np.rint((days - self.times[0]) / (self.times[1] - self.times[0])).astype(int)
        if np.any(np.abs(self.times[idx] - days) > 1e-9):
            raise ValueError("requested days are not on the integration grid")
        extras = {k: np.asarray(v)[idx] for k, v in self.extras.items()}
        return EpidemicTrajectory(self.times[idx], self.states[idx], self.labels, self.N, extras)

    def to_csv(self, path):
        names = list(self.labels) + list(self.extras)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t_days", *names])
            for i, t in enumerate(self.times):
                w.writerow([repr(float(t)), *(repr(float(self[n][i])) for n in names)])


# -- right-hand sides ---------------------------------------------------------------


def sir_rhs(state, beta, params):
    """Classic SIR: returns (dS, dI, dR)."""
    S, I, R = state
    flow = beta / params.N * I * S
    rem = params.delta * I
    return np.array([-flow, flow - rem, rem])


def reduced_rhs(I, Rt, params):
    """dI/dt of the reproduction-number form of SIR."""
    return params.delta * (Rt - 1.0) * I


def hosp_rhs(state, Rt, sigma, params, cumulative_infections=False):
    """Hospitalization model in ``(Sigma_H, I, S)`` order.

    With ``cumulative_infections`` the third component is the cumulative
    infections ``Sigma_I`` and its derivative is ``+delta*Rt*I``.
    """
    _, I, _ = state
    d = params.delta
    third = d * Rt * I if cumulative_infections else -Rt * d * I
    return np.array([d * sigma * I, d * (Rt - 1.0) * I, third])


def effective_R(beta, delta, S, N):
    if delta == 0:
        raise ZeroDivisionError("delta must be nonzero")
    return beta / delta * S / N


def integrate_rk4(rhs, y0, times, bound=None):
    """Classic fourth-order Runge-Kutta on a uniform grid.

    ``rhs(t, y)`` returns dy/dt.  ``bound`` (typically ``10*N``) caps the state
    magnitude; exceeding it raises StepTooLarge.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2:
        raise ValueError("need at least two grid points")
    steps = np.diff(times)
    if np.any(steps <= 0):
        raise ValueError("grid must be strictly increasing")
    h = steps[0]
    if not np.allclose(steps, h, rtol=1e-9, atol=0):
        raise ValueError("grid must be uniform")
    y = np.array(y0, dtype=float)
    out = np.empty((times.size, y.size))
    out[0] = y
    for i in range(times.size - 1):
        t = times[i]
        k1 = rhs(t, y)
        k2 = rhs(t + h / 2, y + h / 2 * k1)
        k3 = rhs(t + h / 2, y + h / 2 * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise NonFiniteState(f"non-finite state at t={times[i + 1]}")
        if bound is not None and np.max(np.abs(y)) > bound:
            raise StepTooLarge(f"state exceeded {bound:g} at t={times[i + 1]}")
        out[i + 1] = y
    return out


def rk4_grid(params, step=RK4_STEP, t_end=None):
    t_end = params.tf if t_end is None else t_end
    n = int(round((t_end - params.t0) / step))
    return params.t0 + step * np.arange(n + 1)


def simulate_sir(params, beta, step=RK4_STEP):
    """Full SIR trajectory for a transmission-rate function ``beta(t)``."""
    times = rk4_grid(params, step)
    y0 = [params.N - params.I0, params.I0, 0.0]
    states = integrate_rk4(lambda t, y: sir_rhs(y, beta(t), params), y0, times, bound=10 * params.N)
    return EpidemicTrajectory(times, states, ("S", "I", "R"), params.N)


def simulate_epidemic(params, beta=None, rt=None, sigma=None, step=RK4_STEP, t_end=None):
    """SIR plus cumulative hospitalizations and infections.

    Transmission is driven either by ``beta(t)`` (force of infection
    ``beta*S*I/N``) or by ``rt(t)`` (``delta*R_t*I``), never both.  Returns
    states ``S, I, R, Sigma_H, Sigma_I`` with ``beta`` and ``Rt`` (and
    ``sigma`` when given) on the same grid as extras.
    """
    if (beta is None) == (rt is None):
        raise ConfigError("give exactly one of beta and rt")
    sig = sigma if sigma is not None else RateFunction.constant(0.0)
    N, d = params.N, params.delta

    def rhs(t, y):
        S, I = y[0], y[1]
        flow = beta(t) * I * S / N if beta is not None else d * rt(t) * I
        return np.array([-flow, flow - d * I, d * I, d * sig(t) * I, flow])

    times = rk4_grid(params, step, t_end)
    y0 = [N - params.I0, params.I0, 0.0, 0.0, 0.0]
    states = integrate_rk4(rhs, y0, times, bound=10 * N)
    S = states[:, 0]
    if beta is not None:
        b = beta(times)
        R_t = b / d * S / N
    else:
        R_t = rt(times)
        b = R_t * d * N / S
    extras = {"beta": b, "Rt": R_t}
    if sigma is not None:
        extras["sigma"] = sigma(times)
    return EpidemicTrajectory(times, states, ("S", "I", "R", "Sigma_H", "Sigma_I"), N, extras)


def daily_increments(traj, label, days, delta):
    """``X(t) - X(t-1)`` at the given integer days.

    The first day has no previous value; there the instantaneous rate at
    ``t0`` is used instead.
    """
    days = np.asarray(days, dtype=float)
    cum = traj[label]
    step = traj.times[1] - traj.times[0]
    per_day = int(round(1.0 / step))
    idx = np.rint((days - traj.times[0]) / step).astype(int)
    prev = np.clip(idx - per_day, 0, None)
    out = cum[idx] - cum[prev]
    first = idx < per_day
    if np.any(first):
        I0 = traj["I"][0]
        rate = traj["sigma"][0] if label == "Sigma_H" else traj["Rt"][0]
        out[first] = delta * rate * I0
    return out
