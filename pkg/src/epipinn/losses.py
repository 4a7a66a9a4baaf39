"""Loss functionals for the full, reduced and hospitalization PINN variants.

Every loss is a (weighted) mean of squared pointwise residuals.  Residuals
are exposed separately, each returning ``(r, partials)`` where ``partials``
maps an input name to ``dr/d(input)`` elementwise.  The trainer chains those
partials into network adjoints; the public ``loss_*`` functions only need
the values.

Input names: ``S, dS, I, dI, beta, Rt, sigma, dsigma, H, dH, DI`` for the
scaled network outputs (``H`` is the scaled daily hospitalizations and
``DI`` the scaled daily infections) and their ``t_s`` derivatives.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import LengthMismatch, SigmaUnderflow

SIGMA_FLOOR = 1e-6


@dataclass
class LossWeights:
    omega_D: float = 1.0
    omega_S: float = 1.0
    omega_I: float = 1.0
    omega_R: float = 1.0
    omega_S0: float = 1.0
    omega_I0: float = 1.0
    omega_R0: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be nonnegative")

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class ScalingConstants:
    """Count scales and the derived coefficients of the scaled SIR system.

    ``C1 = (tf-t0) C / N`` multiplies the infection term and
    ``C2 = (tf-t0) delta`` the removal term of the scaled equations.
    """

    C: float
    N: float
    delta: float
    t0: float
    tf: float
    C_H: float = 1.0

    def __post_init__(self):
        if not (self.C > 0 and self.C_H > 0):
            raise ValueError("scales must be positive")

    @property
    def T(self):
        return float(self.tf - self.t0)

    @property
    def C1(self):
        return self.T * self.C / self.N

    @property
    def C2(self):
        return self.T * self.delta

    @property
    def k_reduced(self):
        """delta*(tf-t0), the growth coefficient of the scaled reduced model."""
        return self.delta * self.T

    def to_dict(self):
        return {"C": self.C, "N": self.N, "delta": self.delta, "t0": self.t0,
                "tf": self.tf, "C_H": self.C_H}


def _same_length(*arrays):
    n = {np.size(a) for a in arrays if np.ndim(a) > 0}
    if len(n) > 1:
        raise LengthMismatch(f"inputs have different lengths {sorted(n)}")


def _check_sigma(sigma):
    if np.min(sigma) < SIGMA_FLOOR:
        raise SigmaUnderflow(f"sigma fell to {np.min(sigma):.3g} (< {SIGMA_FLOOR:g})")


def _msq(r, w=1.0):
    r = np.asarray(r)
    return float(w * np.mean(r * r)) if r.size else 0.0


# -- pointwise residuals ------------------------------------------------------------


def res_data(pred, obs):
    _same_length(pred, obs)
    return pred - obs, {"pred": 1.0}


def res_ode_S(S, dS, I, beta, sc):
    f = sc.C1 * beta
    return dS + f * I * S, {"dS": 1.0, "S": f * I, "I": f * S, "beta": sc.C1 * I * S}


def res_ode_I(S, I, dI, beta, sc):
    f = sc.C1 * beta
    return (dI - f * I * S + sc.C2 * I,
            {"dI": 1.0, "S": -f * I, "I": sc.C2 - f * S, "beta": -sc.C1 * I * S})


def res_ode_R(I, dI, dS, sc):
    # R = N/C - I - S, so dR/dt_s = -dI - dS
    return -dI - dS - sc.C2 * I, {"dI": -1.0, "dS": -1.0, "I": -sc.C2}


def res_ic(S0, I0, sc, I_init):
    """Initial misfits of S, I and the implied R at t_s = 0."""
    s = S0 - (sc.N - I_init) / sc.C
    i = I0 - I_init / sc.C
    r = sc.N / sc.C - I0 - S0
    return (s, {"S": 1.0}), (i, {"I": 1.0}), (r, {"S": -1.0, "I": -1.0})


def res_reduced(I, dI, Rt, sc):
    k = sc.k_reduced
    return dI - k * (Rt - 1.0) * I, {"dI": 1.0, "I": -k * (Rt - 1.0), "Rt": -k * I}


def res_hosp_link(H, I, sigma, sc):
    a = sc.delta * sc.C / sc.C_H
    return H - a * sigma * I, {"H": 1.0, "sigma": -a * I, "I": -a * sigma}


def res_incidence_link(DI, I, Rt, sc):
    d = sc.delta
    return DI - d * Rt * I, {"DI": 1.0, "Rt": -d * I, "I": -d * Rt}


def res_split_hosp_data(H, sigma, obs, sc):
    """Infections implied by hospitalizations minus observed infections."""
    _check_sigma(sigma)
    b = sc.C_H / (sc.delta * sc.C)
    q = H / sigma
    return b * q - obs, {"H": b / sigma, "sigma": -b * q / sigma}


def res_split_HI_data(H, sigma, Rt, obs, sc):
    """Daily infections implied by hospitalizations minus observations."""
    _check_sigma(sigma)
    a = sc.C_H / sc.C
    q = H / sigma
    return a * Rt * q - obs, {"H": a * Rt / sigma, "sigma": -a * Rt * q / sigma, "Rt": a * q}


def res_split_ode(H, dH, sigma, dsigma, Rt, sc):
    """Reduced-model residual with I replaced by C_H H / (delta C sigma).

    ``(C_H/C) [ d/dt_s (H / (delta sigma)) - (tf-t0)(Rt-1) H/sigma ]``; the
    quotient derivative comes from both networks' input derivatives.
    """
    _check_sigma(sigma)
    a = sc.C_H / sc.C
    inv_d = 1.0 / sc.delta
    T = sc.T
    q = H / sigma
    dq = dH / sigma - H * dsigma / (sigma * sigma)
    g = Rt - 1.0
    r = a * (inv_d * dq - T * g * q)
    s2 = sigma * sigma
    partials = {
        "H": a * (-inv_d * dsigma / s2 - T * g / sigma),
        "dH": a * inv_d / sigma,
        "sigma": a * (inv_d * (-dH / s2 + 2.0 * H * dsigma / (s2 * sigma)) + T * g * H / s2),
        "dsigma": -a * inv_d * H / s2,
        "Rt": -a * T * q,
    }
    return r, partials


# -- loss values -----------------------------------------------------------------------


def loss_data(pred, obs, omega_D=1.0):
    _same_length(pred, obs)
    return _msq(res_data(np.asarray(pred), np.asarray(obs))[0], omega_D)


def loss_ode_full(S, dS, I, dI, beta, sc, weights=None):
    w = weights or LossWeights()
    _same_length(S, dS, I, dI, beta)
    S, dS, I, dI, beta = map(np.asarray, (S, dS, I, dI, beta))
    return (_msq(res_ode_S(S, dS, I, beta, sc)[0], w.omega_S)
            + _msq(res_ode_I(S, I, dI, beta, sc)[0], w.omega_I)
            + _msq(res_ode_R(I, dI, dS, sc)[0], w.omega_R))


def loss_ic(S0, I0, sc, I_init, weights=None, R0=None):
    """Initial-condition misfit; ``R0`` defaults to ``N/C - I0 - S0``."""
    w = weights or LossWeights()
    (s, _), (i, _), (r, _) = res_ic(S0, I0, sc, I_init)
    if R0 is not None:
        r = R0
    return w.omega_S0 * s * s + w.omega_I0 * i * i + w.omega_R0 * r * r


def loss_joint_full(S, dS, I, dI, beta, I_at_data, obs, S0, I0, sc, I_init, weights=None):
    w = weights or LossWeights()
    return (loss_data(I_at_data, obs, w.omega_D) + loss_ode_full(S, dS, I, dI, beta, sc, w)
            + loss_ic(S0, I0, sc, I_init, w))


def loss_split_full_phase2(S, dS, I, dI, beta, S0, I0, sc, I_init, weights=None):
    return loss_ode_full(S, dS, I, dI, beta, sc, weights) + loss_ic(S0, I0, sc, I_init, weights)


def loss_reduced_ode(I, dI, Rt, sc):
    _same_length(I, dI, Rt)
    return _msq(res_reduced(np.asarray(I), np.asarray(dI), np.asarray(Rt), sc)[0])


def loss_reduced_joint(I_at_data, obs, I, dI, Rt, sc):
    return loss_data(I_at_data, obs) + loss_reduced_ode(I, dI, Rt, sc)


def loss_reduced_split(I, dI, Rt, sc):
    return loss_reduced_ode(I, dI, Rt, sc)


def loss_H(H_at_data, obs):
    return loss_data(H_at_data, obs)


def loss_hosp_ode(H, I, dI, sigma, Rt, sc):
    _same_length(H, I, dI, sigma, Rt)
    H, I, dI, sigma, Rt = map(np.asarray, (H, I, dI, sigma, Rt))
    return _msq(res_reduced(I, dI, Rt, sc)[0]) + _msq(res_hosp_link(H, I, sigma, sc)[0])


def loss_hosp_joint(I_at_data, obs_I, H_at_data, obs_H, H, I, dI, sigma, Rt, sc):
    return (loss_data(I_at_data, obs_I) + loss_H(H_at_data, obs_H)
            + loss_hosp_ode(H, I, dI, sigma, Rt, sc))


def I_from_H(H, sigma, sc):
    sigma = np.asarray(sigma, dtype=float)
    _check_sigma(sigma)
    return sc.C_H * np.asarray(H) / (sc.delta * sc.C * sigma)


def loss_hosp_split(H_at_data, sigma_at_data, obs_I, H, dH, sigma, dsigma, Rt, sc):
    H_at_data, sigma_at_data, obs_I = map(np.asarray, (H_at_data, sigma_at_data, obs_I))
    _same_length(H_at_data, sigma_at_data, obs_I)
    _same_length(H, dH, sigma, dsigma, Rt)
    data = _msq(res_split_hosp_data(H_at_data, sigma_at_data, obs_I, sc)[0])
    H, dH, sigma, dsigma, Rt = map(np.asarray, (H, dH, sigma, dsigma, Rt))
    return data + _msq(res_split_ode(H, dH, sigma, dsigma, Rt, sc)[0])


def loss_I(DI_at_data, obs):
    return loss_data(DI_at_data, obs)


def loss_HI_ode(H, DI, I, dI, sigma, Rt, sc):
    _same_length(H, DI, I, dI, sigma, Rt)
    H, DI, I, dI, sigma, Rt = map(np.asarray, (H, DI, I, dI, sigma, Rt))
    return (_msq(res_reduced(I, dI, Rt, sc)[0]) + _msq(res_hosp_link(H, I, sigma, sc)[0])
            + _msq(res_incidence_link(DI, I, Rt, sc)[0]))


def loss_HI_joint(DI_at_data, obs_DI, H_at_data, obs_H, H, DI, I, dI, sigma, Rt, sc):
    return (loss_I(DI_at_data, obs_DI) + loss_H(H_at_data, obs_H)
            + loss_HI_ode(H, DI, I, dI, sigma, Rt, sc))


def deltaI_from_H(H, sigma, Rt, sc):
    sigma = np.asarray(sigma, dtype=float)
    _check_sigma(sigma)
    return sc.C_H * np.asarray(Rt) * np.asarray(H) / (sc.C * sigma)


def loss_HI_split(H_at_data, sigma_at_data, Rt_at_data, obs_DI, H, dH, sigma, dsigma, Rt, sc):
    H_at_data, sigma_at_data, Rt_at_data, obs_DI = map(
        np.asarray, (H_at_data, sigma_at_data, Rt_at_data, obs_DI))
    _same_length(H_at_data, sigma_at_data, Rt_at_data, obs_DI)
    _same_length(H, dH, sigma, dsigma, Rt)
    data = _msq(res_split_HI_data(H_at_data, sigma_at_data, Rt_at_data, obs_DI, sc)[0])
    H, dH, sigma, dsigma, Rt = map(np.asarray, (H, dH, sigma, dsigma, Rt))
    return data + _msq(res_split_ode(H, dH, sigma, dsigma, Rt, sc)[0])


# -- adaptive weights ----------------------------------------------------------------------


def adapt_weights_ntk(traces, previous=None, smoothing=0.0):
    """Loss weights inversely proportional to per-term NTK traces.

    ``traces`` maps weight names (``omega_*``) to the trace estimate of each
    active term.  The raw target is ``sum(traces) / trace_k``, rescaled to
    mean 1.  With ``previous`` weights the result is blended as
    ``smoothing*previous + (1-smoothing)*target`` and renormalized.  A term
    with zero trace keeps its previous weight.  Returns a dict of the active
    weights.
    """
    names = list(traces)
    tr = np.array([float(traces[n]) for n in names])
    prev = np.array([1.0 if previous is None else float(previous[n]) for n in names])
    ok = tr > 0
    new = prev.copy()
    if ok.any():
        target = tr[ok].sum() / tr[ok]
        target *= ok.sum() / target.sum()
        if previous is None:
            new[ok] = target
        else:
            new[ok] = smoothing * prev[ok] + (1.0 - smoothing) * target
    new *= len(new) / new.sum()
    return dict(zip(names, new.tolist()))


def write_loss_history_csv(path, history):
    """One row per epoch: ``epoch,total,<terms>...,lr,<weights>...``."""
    if not history:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,total,lr\n")
        return
    terms, wnames = [], []
    for row in history:
        for k in row["terms"]:
            if k not in terms:
                terms.append(k)
        for k in row.get("weights", {}):
            if k not in wnames:
                wnames.append(k)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "total", *terms, "lr", *wnames])
        for row in history:
            w.writerow([row["epoch"], repr(float(row["total"])),
                        *(repr(float(row["terms"][k])) if k in row["terms"] else "" for k in terms),
                        repr(float(row["lr"])),
                        *(repr(float(row["weights"][k])) if k in row.get("weights", {}) else ""
                          for k in wnames)])
