import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from epipinn import losses as L
from epipinn.errors import LengthMismatch, SigmaUnderflow
from epipinn.sir_models import ModelParams, RateFunction, simulate_epidemic

SC = L.ScalingConstants(C=1e5, N=56e6, delta=0.2, t0=0.0, tf=90.0, C_H=1e3)


def test_scaling_constants():
    assert SC.T == 90
    assert SC.C1 == pytest.approx(90 * 1e5 / 56e6)
    assert SC.C2 == pytest.approx(18.0)
    assert SC.k_reduced == pytest.approx(18.0)
    with pytest.raises(ValueError):
        L.ScalingConstants(C=0, N=1, delta=0.2, t0=0, tf=1)
    with pytest.raises(ValueError):
        L.LossWeights(omega_S=-1)


def test_loss_data_examples():
    assert L.loss_data([1.0, 2.0], [1.0, 2.0]) == 0
    assert L.loss_data([0.1, -0.3], [0.0, 0.0]) == pytest.approx(0.05)
    assert L.loss_data([0.1, -0.3], [0.0, 0.0], omega_D=2) == pytest.approx(0.1)
    with pytest.raises(LengthMismatch):
        L.loss_data([1.0], [1.0, 2.0])


def test_loss_ode_full_zero_state_and_one_point():
    z = np.zeros(4)
    assert L.loss_ode_full(z, z, z, z, z, SC) == 0
    S, dS, I, dI, b = 400.0, -30.0, 2.0, 5.0, 0.5
    f = SC.C1 * b
    rS = dS + f * I * S
    rI = dI - f * I * S + SC.C2 * I
    rR = -dI - dS - SC.C2 * I
    w = L.LossWeights(omega_S=2.0, omega_I=3.0, omega_R=0.5)
    expect = 2.0 * rS ** 2 + 3.0 * rI ** 2 + 0.5 * rR ** 2
    got = L.loss_ode_full([S], [dS], [I], [dI], [b], SC, w)
    assert got == pytest.approx(expect, rel=1e-13)
    with pytest.raises(LengthMismatch):
        L.loss_ode_full([S], [dS], [I, I], [dI], [b], SC)


def test_loss_ic():
    I_init = 1.0
    S0, I0 = (SC.N - I_init) / SC.C, I_init / SC.C
    assert L.loss_ic(S0, I0, SC, I_init) == pytest.approx(0.0, abs=1e-20)
    assert L.loss_ic(S0 + 0.1, I0, SC, I_init, R0=0.0) == pytest.approx(0.01)
    zero = L.LossWeights(*([0.0] * 7))
    assert L.loss_ic(S0 + 3, I0 - 1, SC, I_init, zero) == 0


def test_loss_reduced_examples():
    assert L.loss_reduced_ode([0.5, 1.5], [0.0, 0.0], [1.0, 1.0], SC) == 0
    assert L.loss_reduced_ode([0.5], [0.2], [3.0], SC) == pytest.approx(316.84)
    assert L.loss_reduced_ode([0.0, 0.0], [0.3, -0.1], [2.0, 5.0], SC) == pytest.approx((0.09 + 0.01) / 2)


def test_hosp_formulas():
    assert L.I_from_H(0.5, 0.05, SC) == pytest.approx(0.5)
    assert L.deltaI_from_H(0.5, 0.05, 2.0, SC) == pytest.approx(0.2)
    I = np.array([0.3, 0.9])
    H = SC.delta * SC.C * 0.1 * I / SC.C_H
    assert L.loss_hosp_ode(H, I, np.zeros(2), [0.1, 0.1], [1.0, 1.0], SC) == pytest.approx(0, abs=1e-28)
    assert L.loss_H(np.zeros(3), np.zeros(3)) == 0
    with pytest.raises(SigmaUnderflow):
        L.I_from_H(0.5, 1e-7, SC)
    with pytest.raises(SigmaUnderflow):
        L.res_split_ode(np.ones(2), np.ones(2), np.array([0.1, 0.0]), np.zeros(2), np.ones(2), SC)
    z = np.zeros(3)
    assert L.loss_HI_ode(z, z, z, z, z + 0.1, z, SC) == 0


def _partials_fd(fn, args, key_index, h=1e-6):
    a = [np.array(x, dtype=float) for x in args]
    out = []
    for name, i in key_index.items():
        up = [x.copy() for x in a]
        dn = [x.copy() for x in a]
        up[i] += h
        dn[i] -= h
        out.append((name, (fn(*up)[0] - fn(*dn)[0]) / (2 * h)))
    return out


def test_residual_partials_match_finite_differences():
    rng = np.random.default_rng(0)
    n = 5
    S, dS, I, dI = rng.uniform(1, 3, n), rng.normal(size=n), rng.uniform(0.1, 2, n), rng.normal(size=n)
    beta, Rt = rng.uniform(0.1, 0.8, n), rng.uniform(0.5, 3, n)
    H, dH, sig, dsig = rng.uniform(0.1, 2, n), rng.normal(size=n), rng.uniform(0.05, 0.3, n), rng.normal(0, 0.1, n)
    DI, obs = rng.uniform(0, 1, n), rng.uniform(0, 1, n)
    cases = [
        (lambda S, dS, I, b: L.res_ode_S(S, dS, I, b, SC), (S, dS, I, beta), {"S": 0, "dS": 1, "I": 2, "beta": 3}),
        (lambda S, I, dI, b: L.res_ode_I(S, I, dI, b, SC), (S, I, dI, beta), {"S": 0, "I": 1, "dI": 2, "beta": 3}),
        (lambda I, dI, dS: L.res_ode_R(I, dI, dS, SC), (I, dI, dS), {"I": 0, "dI": 1, "dS": 2}),
        (lambda I, dI, R: L.res_reduced(I, dI, R, SC), (I, dI, Rt), {"I": 0, "dI": 1, "Rt": 2}),
        (lambda H, I, s: L.res_hosp_link(H, I, s, SC), (H, I, sig), {"H": 0, "I": 1, "sigma": 2}),
        (lambda D, I, R: L.res_incidence_link(D, I, R, SC), (DI, I, Rt), {"DI": 0, "I": 1, "Rt": 2}),
        (lambda H, s: L.res_split_hosp_data(H, s, obs, SC), (H, sig), {"H": 0, "sigma": 1}),
        (lambda H, s, R: L.res_split_HI_data(H, s, R, obs, SC), (H, sig, Rt), {"H": 0, "sigma": 1, "Rt": 2}),
        (lambda H, dH, s, ds, R: L.res_split_ode(H, dH, s, ds, R, SC), (H, dH, sig, dsig, Rt),
         {"H": 0, "dH": 1, "sigma": 2, "dsigma": 3, "Rt": 4}),
    ]
    for fn, args, keys in cases:
        _, partials = fn(*args)
        for name, fd in _partials_fd(fn, args, keys):
            an = np.broadcast_to(partials[name], fd.shape)
            assert np.allclose(an, fd, rtol=1e-6, atol=1e-6 * max(1.0, np.abs(fd).max())), name


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, 6, elements=st.floats(0.01, 10)),
       hnp.arrays(np.float64, 6, elements=st.floats(-10, 10)),
       st.floats(0.01, 2.0))
def test_loss_additivity(vals, derivs, beta):
    S, I = vals, vals[::-1]
    dS, dI = derivs, derivs[::-1]
    b = np.full(6, beta)
    obs = vals * 0.9
    w = L.LossWeights(0.5, 1.5, 2.0, 0.3, 1.0, 4.0, 0.7)
    S0, I0 = float(S[0]), float(I[0])
    parts = L.loss_data(I, obs, w.omega_D) + L.loss_ode_full(S, dS, I, dI, b, SC, w) + L.loss_ic(S0, I0, SC, 1.0, w)
    assert L.loss_joint_full(S, dS, I, dI, b, I, obs, S0, I0, SC, 1.0, w) == pytest.approx(parts, rel=1e-12)
    p2 = L.loss_ode_full(S, dS, I, dI, b, SC, w) + L.loss_ic(S0, I0, SC, 1.0, w)
    assert L.loss_split_full_phase2(S, dS, I, dI, b, S0, I0, SC, 1.0, w) == pytest.approx(p2, rel=1e-12)
    Rt = b * 3
    red = L.loss_reduced_ode(I, dI, Rt, SC)
    assert L.loss_reduced_joint(I, obs, I, dI, Rt, SC) == pytest.approx(L.loss_data(I, obs) + red, rel=1e-12)
    assert L.loss_reduced_split(I, dI, Rt, SC) == red
    sig = vals / 20 + 0.01
    H = vals / 3
    hj = L.loss_hosp_joint(I, obs, H, obs, H, I, dI, sig, Rt, SC)
    assert hj == pytest.approx(L.loss_data(I, obs) + L.loss_H(H, obs) + L.loss_hosp_ode(H, I, dI, sig, Rt, SC),
                               rel=1e-12)
    hij = L.loss_HI_joint(I, obs, H, obs, H, I, I, dI, sig, Rt, SC)
    assert hij == pytest.approx(L.loss_I(I, obs) + L.loss_H(H, obs) + L.loss_HI_ode(H, I, I, dI, sig, Rt, SC),
                                rel=1e-12)
    for v in (hj, hij, parts, red):
        assert v >= 0


# -- residual roots on RK4 trajectories -------------------------------------------------------


def hermite(times, y, dy, tq):
    """Cubic Hermite interpolant of node values and slopes, with its derivative."""
    h = times[1] - times[0]
    k = np.clip(((tq - times[0]) // h).astype(int), 0, times.size - 2)
    s = (tq - times[k]) / h
    h00, h10, h01, h11 = 2 * s**3 - 3 * s**2 + 1, s**3 - 2 * s**2 + s, -2 * s**3 + 3 * s**2, s**3 - s**2
    d00, d10, d01, d11 = 6 * s**2 - 6 * s, 3 * s**2 - 4 * s + 1, -6 * s**2 + 6 * s, 3 * s**2 - 2 * s
    val = h00 * y[k] + h10 * h * dy[k] + h01 * y[k + 1] + h11 * h * dy[k + 1]
    der = (d00 * y[k] + d10 * h * dy[k] + d01 * y[k + 1] + d11 * h * dy[k + 1]) / h
    return val, der


def _fixture(beta, sigma, tq, step=0.01):
    p = ModelParams()
    traj = simulate_epidemic(p, beta=beta, sigma=sigma, step=step)
    t = traj.times
    S, I = traj["S"], traj["I"]
    b = beta(t)
    flow = b * I * S / p.N
    Sq, dSq = hermite(t, S, -flow, tq)
    Iq, dIq = hermite(t, I, flow - p.delta * I, tq)
    return p, Sq, dSq, Iq, dIq


@pytest.mark.parametrize("beta", [RateFunction.constant(0.6),
                                  RateFunction("two_wave", (0.12, 0.5, 10.0, 21.0, 0.2, 66.0, 12.0))])
def test_residual_root_property(beta):
    sigma = RateFunction("two_wave", (0.05, 0.1, 20.0, 15.0, 0.05, 60.0, 20.0))
    tq = np.random.default_rng(5).uniform(0, 90, 500)
    p, S, dS, I, dI = _fixture(beta, sigma, tq)
    T, C, C_H = p.horizon, 1e5, 1e3
    sc = L.ScalingConstants(C, p.N, p.delta, p.t0, p.tf, C_H)
    # scaled states and their t_s-derivatives
    Ss, Is = S / C, I / C
    dSs, dIs = dS * T / C, dI * T / C
    b = beta(tq)
    assert L.loss_ode_full(Ss, dSs, Is, dIs, b, sc) <= 1e-6
    Rt = b / p.delta * S / p.N
    assert L.loss_reduced_ode(Is, dIs, Rt, sc) <= 1e-6
    sig = sigma(tq)
    h = 1e-5
    dsig_dt = (sigma(tq + h) - sigma(tq - h)) / (2 * h)
    Hs = p.delta * sig * I / C_H
    dHs = p.delta * (dsig_dt * I + sig * dI) / C_H * T
    DI = p.delta * Rt * I / C
    assert L.loss_hosp_ode(Hs, Is, dIs, sig, Rt, sc) <= 1e-6
    assert L.loss_HI_ode(Hs, DI, Is, dIs, sig, Rt, sc) <= 1e-6
    # split residuals with I expressed through H and sigma
    assert L.loss_hosp_split(Hs, sig, Is, Hs, dHs, sig, dsig_dt * T, Rt, sc) <= 1e-6
    assert L.loss_HI_split(Hs, sig, Rt, DI, Hs, dHs, sig, dsig_dt * T, Rt, sc) <= 1e-6


# -- NTK weights ------------------------------------------------------------------------------------


def test_ntk_weights_examples():
    w = L.adapt_weights_ntk({"a": 2.0, "b": 2.0, "c": 2.0})
    assert all(v == pytest.approx(1.0) for v in w.values())
    w = L.adapt_weights_ntk({"a": 10.0, "b": 1.0, "c": 1.0})
    assert min(w, key=w.get) == "a"
    w = L.adapt_weights_ntk({"a": 1.0, "b": 4.0})
    assert w["a"] == pytest.approx(1.6) and w["b"] == pytest.approx(0.4)


def test_ntk_zero_trace_keeps_previous():
    w = L.adapt_weights_ntk({"a": 1.0, "b": 0.0, "c": 1.0}, {"a": 1.0, "b": 1.0, "c": 1.0})
    assert np.mean(list(w.values())) == pytest.approx(1.0)
    assert w["a"] == pytest.approx(w["c"])
    assert w["b"] == pytest.approx(1.0)


@given(st.lists(st.floats(1e-6, 1e6), min_size=2, max_size=7), st.randoms(use_true_random=False),
       st.floats(0, 0.9))
def test_ntk_mean_one_and_permutation_equivariant(traces, rnd, smoothing):
    names = [f"w{i}" for i in range(len(traces))]
    prev = {n: 1.0 for n in names}
    w = L.adapt_weights_ntk(dict(zip(names, traces)), prev, smoothing)
    assert np.mean(list(w.values())) == pytest.approx(1.0, rel=1e-12)
    order = names[:]
    rnd.shuffle(order)
    tr = dict(zip(names, traces))
    w2 = L.adapt_weights_ntk({n: tr[n] for n in order}, prev, smoothing)
    for n in names:
        assert w2[n] == pytest.approx(w[n], rel=1e-12)


def test_loss_history_csv(tmp_path):
    hist = [{"epoch": 0, "total": 1.0, "terms": {"data": 0.5, "ode_I": 0.5}, "lr": 1e-3, "weights": {"omega_D": 1.0}},
            {"epoch": 1, "total": 0.5, "terms": {"data": 0.25, "ode_I": 0.25}, "lr": 1e-3, "weights": {"omega_D": 1.0}}]
    p = tmp_path / "h.csv"
    L.write_loss_history_csv(p, hist)
    rows = p.read_text().splitlines()
    assert rows[0] == "epoch,total,data,ode_I,lr,omega_D"
    assert len(rows) == 3
