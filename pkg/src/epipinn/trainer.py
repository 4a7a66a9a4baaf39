"""Training loops for every PINN strategy.

A strategy is a list of phases; each phase names the networks it trains, the
networks it only reads, and the loss terms it minimizes.  Joint strategies
have one phase; split strategies fit the data-attached network first and then
train the remaining networks on the physics with that network frozen.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import losses as L
from .autodiff_net import (AdamState, ConstantNet, LrSchedule, adam_step, init_glorot,
                           lr_on_plateau, net_from_dict)
from .errors import ConfigError, DivergedLoss

log = logging.getLogger(__name__)

STRATEGIES = ("full_joint", "full_split", "reduced_joint", "reduced_split",
              "hosp_joint", "hosp_split", "hosp_I_joint", "hosp_I_split")

DEFAULT_ARCHITECTURES = {
    "S": [50] * 4, "I": [50] * 4, "H": [50] * 4, "DI": [50] * 4,
    "beta": [100] * 4, "Rt": [100] * 4, "sigma": [5] * 10,
}

# input name -> (network role, "u" value | "du" input derivative)
KEYS = {
    "S": ("S", "u"), "dS": ("S", "du"), "I": ("I", "u"), "dI": ("I", "du"),
    "beta": ("beta", "u"), "Rt": ("Rt", "u"), "sigma": ("sigma", "u"),
    "dsigma": ("sigma", "du"), "H": ("H", "u"), "dH": ("H", "du"), "DI": ("DI", "u"),
}


@dataclass
class TrainConfig:
    strategy: str = "full_split"
    epochs_joint: int = 5000
    epochs_data: int | None = None
    epochs_physics: int = 1000
    batch_joint: int = 100
    batch_data: int = 10
    batch_physics: int = 100
    n_collocation: int = 6000
    lr_init: float = 1e-3
    seed: int = 0
    architectures: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_ARCHITECTURES.items()})
    constant_roles: list = field(default_factory=list)
    constant_init: dict = field(default_factory=lambda: {"beta": 0.5, "sigma": 0.1, "Rt": 1.0})
    sigma_init: float = 0.1
    sigma_output_scale: float = 0.1
    ntk: bool = True
    ntk_period: int = 50
    ntk_smoothing: float = 0.5
    ntk_points: int = 256
    plateau_patience: int = 300
    plateau_min_delta: float = 1e-4
    lr_floor: float = 1e-5
    positivity: str = "hard"
    fresh_adam_phase2: bool = True
    full_batch_max_data: int = 13
    divergence_factor: float = 1e6
    dtype: str = "float32"
    window_epochs_data: int | None = None
    window_epochs_physics: int | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        for name in ("epochs_joint", "epochs_physics", "batch_joint", "batch_data",
                     "batch_physics", "n_collocation", "ntk_period"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.epochs_data is not None and self.epochs_data <= 0:
            raise ConfigError("epochs_data must be positive")
        if self.positivity not in ("hard", "weak"):
            raise ConfigError("positivity is 'hard' or 'weak'")
        if not 0 < self.lr_init <= 1e-3 + 1e-15:
            raise ConfigError("lr_init must lie in (0, 0.001]")

    @property
    def variant(self):
        return self.strategy.rsplit("_", 1)[0]

    @property
    def split(self):
        return self.strategy.endswith("_split")

    def data_epochs(self, n_data):
        if self.epochs_data is not None:
            return self.epochs_data
        return 1000 if n_data <= self.full_batch_max_data else 3000

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class Term:
    name: str
    kind: str  # "data" | "colloc" | "ic"
    inputs: tuple
    fn: Callable
    weight: str | None = None


@dataclass
class Phase:
    name: str
    trainable: tuple
    frozen: tuple
    terms: list
    epochs: int
    batch: int
    ntk: bool = False


@dataclass
class TrainedModel:
    variant: str
    strategy: str
    networks: dict
    scales: L.ScalingConstants
    config: TrainConfig
    I_init: float
    loss_history: list = field(default_factory=list)
    wall_time_s: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)
    t_end_scaled: float = 1.0
    optimizer: dict = field(default_factory=dict)
    schedules: dict = field(default_factory=dict)

    def save(self, directory):
        """Snapshot: one JSON per network, config/scales JSON, loss-history CSV."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for role, net in self.networks.items():
            (d / f"net_{role}.json").write_text(json.dumps(net.to_dict()))
        meta = {
            "variant": self.variant, "strategy": self.strategy,
            "scales": self.scales.to_dict(), "config": self.config.to_dict(),
            "I_init": self.I_init, "wall_time_s": self.wall_time_s,
            "weights": self.weights, "t_end_scaled": self.t_end_scaled,
            "roles": sorted(self.networks),
        }
        (d / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        L.write_loss_history_csv(d / "loss_history.csv", self.loss_history)
        for phase in sorted({row["phase"] for row in self.loss_history}):
            L.write_loss_history_csv(d / f"loss_history_{phase}.csv",
                                     [r for r in self.loss_history if r["phase"] == phase])

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        meta = json.loads((d / "model.json").read_text())
        nets = {r: net_from_dict(json.loads((d / f"net_{r}.json").read_text())) for r in meta["roles"]}
        return cls(meta["variant"], meta["strategy"], nets, L.ScalingConstants(**meta["scales"]),
                   TrainConfig.from_dict(meta["config"]), meta["I_init"],
                   wall_time_s=meta["wall_time_s"], weights=meta["weights"],
                   t_end_scaled=meta["t_end_scaled"])

    @property
    def total_wall_time(self):
        return float(sum(self.wall_time_s.values()))

    @property
    def n_epochs(self):
        return len(self.loss_history)


def sample_collocation(n, seed, upper=1.0):
    """``n`` i.i.d. uniform scaled times on ``[0, upper]``."""
    if n <= 0:
        raise ConfigError("number of collocation points must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.uniform(0.0, upper, n)


# -- term tables ------------------------------------------------------------------------


def _data_term(name, key, obs_key, weight=None):
    return Term(name, "data", (key, obs_key), lambda c: (c[key] - c[obs_key], {key: 1.0}), weight)


def _terms(variant, sc, I_init):
    """All loss terms of a model variant, keyed by name."""
    t = {}
    if variant == "full":
        t["data"] = _data_term("data", "I", "obs_I", "omega_D")
        t["ode_S"] = Term("ode_S", "colloc", ("S", "dS", "I", "beta"),
                          lambda c: L.res_ode_S(c["S"], c["dS"], c["I"], c["beta"], sc), "omega_S")
        t["ode_I"] = Term("ode_I", "colloc", ("S", "I", "dI", "beta"),
                          lambda c: L.res_ode_I(c["S"], c["I"], c["dI"], c["beta"], sc), "omega_I")
        t["ode_R"] = Term("ode_R", "colloc", ("I", "dI", "dS"),
                          lambda c: L.res_ode_R(c["I"], c["dI"], c["dS"], sc), "omega_R")
        for i, (name, w) in enumerate((("ic_S", "omega_S0"), ("ic_I", "omega_I0"), ("ic_R", "omega_R0"))):
            t[name] = Term(name, "ic", ("S", "I"),
                           lambda c, i=i: L.res_ic(c["S"], c["I"], sc, I_init)[i], w)
        return t
    red = Term("ode_I", "colloc", ("I", "dI", "Rt"), lambda c: L.res_reduced(c["I"], c["dI"], c["Rt"], sc))
    if variant == "reduced":
        t["data"] = _data_term("data", "I", "obs_I")
        t["ode_I"] = red
        return t
    link = Term("link_H", "colloc", ("H", "I", "sigma"),
                lambda c: L.res_hosp_link(c["H"], c["I"], c["sigma"], sc))
    split_ode = Term("ode_split", "colloc", ("H", "dH", "sigma", "dsigma", "Rt"),
                     lambda c: L.res_split_ode(c["H"], c["dH"], c["sigma"], c["dsigma"], c["Rt"], sc))
    t["data_H"] = _data_term("data_H", "H", "obs_H")
    t["ode_I"] = red
    t["link_H"] = link
    t["ode_split"] = split_ode
    if variant == "hosp":
        t["data_I"] = _data_term("data_I", "I", "obs_I")
        t["data_split"] = Term("data_split", "data", ("H", "sigma", "obs_I"),
                               lambda c: L.res_split_hosp_data(c["H"], c["sigma"], c["obs_I"], sc))
        return t
    if variant == "hosp_I":
        t["data_DI"] = _data_term("data_DI", "DI", "obs_DI")
        t["link_DI"] = Term("link_DI", "colloc", ("DI", "I", "Rt"),
                            lambda c: L.res_incidence_link(c["DI"], c["I"], c["Rt"], sc))
        t["data_split"] = Term("data_split", "data", ("H", "sigma", "Rt", "obs_DI"),
                               lambda c: L.res_split_HI_data(c["H"], c["sigma"], c["Rt"], c["obs_DI"], sc))
        return t
    raise ConfigError(f"unknown variant {variant!r}")


ROLES = {
    "full": ("S", "I", "beta"),
    "reduced": ("I", "Rt"),
    "hosp": ("I", "H", "sigma", "Rt"),
    "hosp_I": ("DI", "H", "I", "sigma", "Rt"),
}

JOINT_TERMS = {
    "full": ["data", "ode_S", "ode_I", "ode_R", "ic_S", "ic_I", "ic_R"],
    "reduced": ["data", "ode_I"],
    "hosp": ["data_I", "data_H", "ode_I", "link_H"],
    "hosp_I": ["data_DI", "data_H", "ode_I", "link_H", "link_DI"],
}

# split: (data-attached role, phase-1 term, phase-2 trainable roles, phase-2 terms)
SPLIT = {
    "full": ("I", "data", ("S", "beta"), ["ode_S", "ode_I", "ode_R", "ic_S", "ic_I", "ic_R"]),
    "reduced": ("I", "data", ("Rt",), ["ode_I"]),
    "hosp": ("H", "data_H", ("sigma", "Rt"), ["data_split", "ode_split"]),
    "hosp_I": ("H", "data_H", ("sigma", "Rt"), ["data_split", "ode_split"]),
}


def split_roles(variant):
    """Roles that exist as networks in the split strategy of ``variant``."""
    first, _, rest, _ = SPLIT[variant]
    return (first,) + rest


def _positivity_terms(roles, nets):
    out = []
    for role in roles:
        net = nets[role]
        if getattr(net, "output_constraint", "square") == "none" and role in ("S", "I", "H", "DI", "beta", "Rt", "sigma"):
            key = role
            out.append(Term(f"pos_{role}", "colloc", (key,),
                            lambda c, key=key: (np.minimum(c[key], 0.0), {key: (c[key] < 0).astype(c[key].dtype)})))
    return out


def build_phases(cfg, sc, I_init, n_data, nets):
    variant = cfg.variant
    terms = _terms(variant, sc, I_init)
    weighted = variant == "full" and cfg.ntk
    if not cfg.split:
        roles = ROLES[variant]
        ts = [terms[n] for n in JOINT_TERMS[variant]] + _positivity_terms(roles, nets)
        return [Phase("joint", roles, (), ts, cfg.epochs_joint, cfg.batch_joint, ntk=weighted)]
    first, t1, rest, t2 = SPLIT[variant]
    p1_terms = [Term(terms[t1].name, "data", terms[t1].inputs, terms[t1].fn, None)]
    p1_terms += _positivity_terms((first,), nets)
    batch = n_data if n_data <= cfg.full_batch_max_data else cfg.batch_data
    p1 = Phase("data", (first,), (), p1_terms, cfg.data_epochs(n_data), batch)
    p2_terms = [terms[n] for n in t2] + _positivity_terms(rest, nets)
    p2 = Phase("physics", rest, (first,), p2_terms, cfg.epochs_physics, cfg.batch_physics, ntk=weighted)
    return [p1, p2]


# -- network construction ---------------------------------------------------------------------


def init_networks(cfg, roles, seed_seq):
    """Glorot-initialized networks (or scalars) for the given roles."""
    dtype = np.dtype(cfg.dtype)
    constraint = "square" if cfg.positivity == "hard" else "none"
    nets = {}
    children = seed_seq.spawn(len(roles))
    for role, child in zip(roles, children):
        seed = int(child.generate_state(1)[0])
        if role in cfg.constant_roles:
            value = cfg.constant_init.get(role, 1.0)
            nets[role] = ConstantNet(value, "square", seed=seed, dtype=dtype)
            continue
        hidden = cfg.architectures[role]
        net = init_glorot([1, *hidden, 1], seed, output_constraint=constraint, dtype=dtype)
        if role == "sigma":
            # sigma divides the hospitalization residuals, so it must start away from 0
            # everywhere; full-size Glorot output weights can swing the pre-output through
            # zero somewhere in [0, 1], so they are shrunk around a bias of sqrt(sigma_init)
            W_out, b_out = net.layers()[-1]
            W_out *= cfg.sigma_output_scale
            b_out[...] = np.sqrt(cfg.sigma_init) if constraint == "square" else cfg.sigma_init
        nets[role] = net
    return nets


# -- batch evaluation -----------------------------------------------------------------------------


def _needs_tangent(role, terms):
    dkeys = {k for k, (r, c) in KEYS.items() if r == role and c == "du"}
    return any(k in t.inputs for t in terms for k in dkeys)


def _batch_step(nets, phase, weights, t_pts, slices, obs, grads=True, per_term_traces=False):
    """Loss (and parameter gradients) on one batch.

    ``t_pts`` are the stacked evaluation times; ``slices`` maps a point kind
    to its slice of ``t_pts``.  Returns ``(total, term_values, grads)``; with
    ``per_term_traces`` the third item is ``{weight_name: trace}``.
    """
    roles = phase.trainable + phase.frozen
    ev = {}
    for role in roles:
        u, du, cache = nets[role].evaluate(t_pts, tangent=_needs_tangent(role, phase.terms))
        ev[role] = (u, du, cache)
    n_all = t_pts.shape[0]
    dt = nets[phase.trainable[0]].dtype
    adj = {r: [np.zeros(n_all, dt), np.zeros(n_all, dt)] for r in phase.trainable}
    total = 0.0
    values = {}
    traces = {}
    for term in phase.terms:
        sl = slices.get(term.kind)
        if sl is None or sl.stop <= sl.start:
            values[term.name] = 0.0
            continue
        n = sl.stop - sl.start
        ctx = {}
        for key in term.inputs:
            if key.startswith("obs_"):
                ctx[key] = obs[key]
            else:
                role, comp = KEYS[key]
                ctx[key] = ev[role][0][sl] if comp == "u" else ev[role][1][sl]
        r, partials = term.fn(ctx)
        w = weights.get(term.weight, 1.0) if term.weight else 1.0
        val = float(w * np.mean(r * r))
        values[term.name] = val
        total += val
        if per_term_traces:
            if term.weight is None:
                continue
            sq = np.zeros(n)
            for role in phase.trainable:
                gu = np.zeros(n_all, dt)
                gdu = np.zeros(n_all, dt)
                hit = False
                for key, p in partials.items():
                    kr, comp = KEYS.get(key, (None, None))
                    if kr != role:
                        continue
                    hit = True
                    (gu if comp == "u" else gdu)[sl] += p
                if not hit:
                    continue
                cache = ev[role][2]
                has_tangent = ev[role][1] is not None
                sq += nets[role].backward(cache, gu, gdu if has_tangent else None, per_sample=True)[sl]
            traces[term.weight] = float(np.mean(sq))
            continue
        if not grads:
            continue
        coef = (2.0 * w / n) * r
        for key, p in partials.items():
            role, comp = KEYS.get(key, (None, None))
            if role in adj:
                adj[role][0 if comp == "u" else 1][sl] += coef * p
    if per_term_traces:
        return total, values, traces
    if not grads:
        return total, values, None
    out = {}
    for role in phase.trainable:
        u, du, cache = ev[role]
        out[role] = nets[role].backward(cache, adj[role][0], adj[role][1] if du is not None else None)
    return total, values, out


def _stack_points(t_data, t_col, with_ic, dt):
    parts = [t_data, t_col] + ([np.zeros(1)] if with_ic else [])
    t = np.concatenate(parts).astype(dt)
    nd, nc = t_data.size, t_col.size
    slices = {"data": slice(0, nd), "colloc": slice(nd, nd + nc)}
    if with_ic:
        slices["ic"] = slice(nd + nc, nd + nc + 1)
    return t, slices


def _obs_arrays(obs, idx, dt):
    out = {}
    if obs.infections_scaled is not None:
        key = "obs_I" if obs.infections_kind == "I" else "obs_DI"
        out[key] = obs.infections_scaled[idx].astype(dt)
    if obs.hospitalizations_scaled is not None:
        out["obs_H"] = obs.hospitalizations_scaled[idx].astype(dt)
    return out


def _ntk_update(nets, phase, weights, obs, colloc_ntk, cfg):
    kinds = {t.kind for t in phase.terms}
    dt = nets[phase.trainable[0]].dtype
    t_data = obs.times_scaled if "data" in kinds else np.zeros(0)
    t_col = colloc_ntk if "colloc" in kinds else np.zeros(0)
    t_pts, slices = _stack_points(t_data, t_col, "ic" in kinds, dt)
    idx = np.arange(t_data.size)
    _, _, traces = _batch_step(nets, phase, weights, t_pts, slices, _obs_arrays(obs, idx, dt),
                               per_term_traces=True)
    if not traces:
        return weights
    prev = {k: weights.get(k, 1.0) for k in traces}
    new = L.adapt_weights_ntk(traces, prev, cfg.ntk_smoothing)
    out = dict(weights)
    out.update(new)
    return out


def _run_phase(model, phase, obs, colloc, rng, epoch_offset, fresh_optimizer=True):
    cfg = model.config
    nets = model.networks
    dt = np.dtype(cfg.dtype)
    kinds = {t.kind for t in phase.terms}
    nd = obs.n_data if "data" in kinds else 0
    nc = colloc.size if "colloc" in kinds else 0
    with_ic = "ic" in kinds
    n_total = nd + nc
    t_data_all = obs.times_scaled
    if fresh_optimizer or phase.name not in model.optimizer:
        model.optimizer[phase.name] = {r: AdamState.zeros_like(nets[r].params) for r in phase.trainable}
    # the schedule restarts with every call: a longer window is new data, not stagnation
    model.schedules[phase.name] = LrSchedule(cfg.lr_init, cfg.plateau_patience,
                                             cfg.plateau_min_delta, cfg.lr_floor)
    states = model.optimizer[phase.name]
    sched = model.schedules[phase.name]
    weights = dict(model.weights) if phase.ntk else {}
    ntk_col = colloc[: min(cfg.ntk_points, colloc.size)] if phase.ntk else None
    first_loss = None
    start = time.perf_counter()
    for epoch in range(phase.epochs):
        if phase.ntk and epoch % cfg.ntk_period == 0:
            weights = _ntk_update(nets, phase, weights, obs, ntk_col, cfg)
        lr = sched.current_lr
        perm = rng.permutation(n_total) if phase.batch < n_total else np.arange(n_total)
        batch_losses = []
        term_sums = {}
        for b0 in range(0, n_total, phase.batch):
            chunk = perm[b0:b0 + phase.batch]
            di = chunk[chunk < nd]
            ci = chunk[chunk >= nd] - nd
            t_pts, slices = _stack_points(t_data_all[di], colloc[ci], with_ic, dt)
            loss, values, grads = _batch_step(nets, phase, weights, t_pts, slices,
                                              _obs_arrays(obs, di, dt))
            for role, g in grads.items():
                adam_step(nets[role].params, g, states[role], lr)
            batch_losses.append(loss)
            for k, v in values.items():
                term_sums[k] = term_sums.get(k, 0.0) + v
        epoch_loss = float(np.mean(batch_losses))
        if first_loss is None:
            first_loss = epoch_loss
        if not np.isfinite(epoch_loss) or epoch_loss > cfg.divergence_factor * max(first_loss, 1e-300):
            raise DivergedLoss(f"{phase.name} loss {epoch_loss:.3g} at epoch {epoch} "
                               f"(first epoch {first_loss:.3g})")
        model.loss_history.append({
            "epoch": epoch_offset + epoch, "phase": phase.name, "total": epoch_loss,
            "terms": {k: v / len(batch_losses) for k, v in term_sums.items()},
            "lr": lr, "weights": dict(weights),
        })
        lr_on_plateau(sched, epoch_loss)
        if epoch % 500 == 0 or epoch == phase.epochs - 1:
            log.debug("%s epoch %d loss %.4g lr %.2g", phase.name, epoch, epoch_loss, lr)
    if phase.ntk:
        model.weights = weights
    model.wall_time_s[phase.name] = model.wall_time_s.get(phase.name, 0.0) + time.perf_counter() - start
    return epoch_offset + phase.epochs


def _check_observations(variant, obs):
    need_I = variant in ("full", "reduced", "hosp")
    if need_I and (obs.infections_scaled is None or obs.infections_kind != "I"):
        raise ConfigError(f"{variant} model needs infection prevalence data")
    if variant == "hosp_I" and (obs.infections_scaled is None or obs.infections_kind != "dI"):
        raise ConfigError("hosp_I model needs daily new-infection data")
    if variant in ("hosp", "hosp_I") and obs.hospitalizations_scaled is None:
        raise ConfigError(f"{variant} model needs hospitalization data")


def _new_model(cfg, obs, I_init, t_end_scaled):
    variant = cfg.variant
    _check_observations(variant, obs)
    ss = np.random.SeedSequence(cfg.seed)
    net_ss, col_ss, shuffle_ss = ss.spawn(3)
    roles = split_roles(variant) if cfg.split else ROLES[variant]
    nets = init_networks(cfg, roles, net_ss)
    model = TrainedModel(variant, cfg.strategy, nets, obs.scales, cfg, float(I_init),
                         weights=L.LossWeights().as_dict() if variant == "full" else {},
                         t_end_scaled=float(t_end_scaled))
    colloc = sample_collocation(cfg.n_collocation, np.random.default_rng(col_ss), t_end_scaled)
    rng = np.random.default_rng(shuffle_ss)
    return model, colloc, rng


def train(cfg, obs, I_init=1.0, t_end_scaled=None):
    """Train a fresh model on ``obs`` with the strategy in ``cfg``."""
    if t_end_scaled is None:
        t_end_scaled = 1.0
    model, colloc, rng = _new_model(cfg, obs, I_init, t_end_scaled)
    phases = build_phases(cfg, obs.scales, model.I_init, obs.n_data, model.networks)
    offset = 0
    for k, phase in enumerate(phases):
        fresh = True if k == 0 else cfg.fresh_adam_phase2
        offset = _run_phase(model, phase, obs, colloc, rng, offset, fresh_optimizer=fresh)
    model._rng = rng
    return model


def train_joint(config, observations, I_init=1.0, t_end_scaled=None):
    if config.split:
        raise ConfigError(f"{config.strategy} is not a joint strategy")
    return train(config, observations, I_init, t_end_scaled)


def train_split(config, observations, I_init=1.0, t_end_scaled=None):
    if not config.split:
        raise ConfigError(f"{config.strategy} is not a split strategy")
    return train(config, observations, I_init, t_end_scaled)


def continue_training(model, obs, t_end_scaled, window_index, epochs_data=None, epochs_physics=None):
    """Extend training of ``model`` to a longer window.

    Parameters and Adam moments carry over; the learning-rate schedule restarts.
    """
    cfg = model.config
    ed = epochs_data or cfg.window_epochs_data or cfg.epochs_physics
    ep = epochs_physics or cfg.window_epochs_physics or cfg.epochs_physics
    ss = np.random.SeedSequence([cfg.seed, window_index])
    col_ss, shuffle_ss = ss.spawn(2)
    colloc = sample_collocation(cfg.n_collocation, np.random.default_rng(col_ss), t_end_scaled)
    rng = np.random.default_rng(shuffle_ss)
    phases = build_phases(cfg, obs.scales, model.I_init, obs.n_data, model.networks)
    for phase in phases:
        phase.epochs = ed if phase.name == "data" else ep
    offset = model.n_epochs
    for phase in phases:
        offset = _run_phase(model, phase, obs, colloc, rng, offset, fresh_optimizer=False)
    model.t_end_scaled = float(t_end_scaled)
    return model


# -- prediction ----------------------------------------------------------------------------------------


def predict(model, t_days, params_delta=None):
    """Unscaled model quantities at the given days.

    Keys depend on the variant: ``S, I, R, beta, Rt`` (full), ``I, Rt``
    (reduced), ``I, Delta_H, sigma, Rt`` (hosp) and additionally ``Delta_I``
    (hosp_I).  Split hospitalization models derive ``I`` (and ``Delta_I``)
    from the hospitalization network and sigma.
    """
    sc = model.scales
    ts = (np.asarray(t_days, dtype=float) - sc.t0) / sc.T
    nets = model.networks
    # evaluate in float64 so values do not depend on how many points are batched together
    ev = {r: n.astype(np.float64).forward(ts) for r, n in nets.items()}
    out = {}
    if model.variant == "full":
        S, I = ev["S"] * sc.C, ev["I"] * sc.C
        out.update(S=S, I=I, R=sc.N - S - I, beta=ev["beta"])
        out["Rt"] = ev["beta"] / sc.delta * S / sc.N
        return out
    if model.variant == "reduced":
        out.update(I=ev["I"] * sc.C, Rt=ev["Rt"])
        return out
    out["Delta_H"] = ev["H"] * sc.C_H
    out["sigma"] = ev["sigma"]
    out["Rt"] = ev["Rt"]
    split = "I" not in nets
    if split:
        sigma = np.maximum(ev["sigma"], L.SIGMA_FLOOR)
        I_s = sc.C_H * ev["H"] / (sc.delta * sc.C * sigma)
    else:
        I_s = ev["I"]
    out["I"] = I_s * sc.C
    if model.variant == "hosp_I":
        out["Delta_I"] = (sc.delta * ev["Rt"] * I_s if split else ev["DI"]) * sc.C
    return out


# -- scenarios -------------------------------------------------------------------------------------


def write_trajectories_csv(path, days, predicted, reference):
    """Tidy ``t_days,quantity,predicted,reference`` table (reference may be blank)."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t_days", "quantity", "predicted", "reference"])
        for q in sorted(predicted):
            ref = reference.get(q, reference.get(f"ref_{q}"))
            for i, t in enumerate(days):
                w.writerow([repr(float(t)), q, repr(float(predicted[q][i])),
                            "" if ref is None else repr(float(ref[i]))])


def run_scenario(spec, out_dir=None, seed=None, data=None, **overrides):
    """Build data, train and evaluate one scenario.

    Returns ``(TrainedModel, ErrorReport)``.  With ``out_dir`` the scenario JSON, the
    dataset, the model snapshot, the predicted trajectories, a 15-day
    extrapolation past the window and the report are written there.
    """
    from .data_pipeline import export_dataset
    from .evaluation import evaluate_model, forecast, write_forecast_csv
    from .scenarios import build_data

    if seed is not None:
        overrides["seed"] = seed
    cfg = spec.train_config(**overrides)
    data = build_data(spec) if data is None else data
    model = train(cfg, data.observations, data.params.I0)
    report = evaluate_model(model, data, spec.case_id, spec.windows)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        spec.to_json(out / "spec.json")
        export_dataset(data.observations, out / "dataset.csv",
                       {"case_id": spec.case_id, "data_seed": spec.data_seed,
                        "noise": spec.infection_noise, "spec": spec.to_dict()})
        model.save(out / "model")
        write_trajectories_csv(out / "trajectories.csv", data.eval_days,
                               predict(model, data.eval_days), data.reference)
        write_forecast_csv(out / "forecast.csv", forecast(model, 15))
        report.to_json(out / "report.json")
    return model, report
