"""Small dense feed-forward networks with exact derivatives.

A network maps a scaled time ``t_s`` to a scalar.  Besides the output value
we propagate the input tangent ``d(out)/d(t_s)`` through the layers
(forward mode), and differentiate both value and tangent with respect to
every weight and bias (reverse mode).  That is all a time-dependent PINN
needs, and it keeps training in plain numpy.

Value rows and tangent rows are stacked into one ``(2B, n)`` array per layer
so that a single matmul serves both.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArchitecture, ShapeMismatch

ACTIVATIONS = ("tanh", "identity")
CONSTRAINTS = ("square", "none")


class DenseNet:
    """Fully connected ``1 -> ... -> 1`` network, parameters in one flat vector.

    Layer ``l`` holds ``W`` of shape ``(n_l, n_{l-1})`` and ``b`` of shape
    ``(n_l,)``.  Hidden layers use ``hidden_activation``; the output layer is
    affine, optionally squared (hard positivity).
    """

    def __init__(self, layer_sizes, params=None, hidden_activation="tanh",
                 output_constraint="square", seed=None, dtype=np.float64):
        sizes = tuple(int(n) for n in layer_sizes)
        if len(sizes) < 2 or any(n <= 0 for n in sizes):
            raise InvalidArchitecture(f"bad layer sizes {layer_sizes!r}")
        if sizes[0] != 1 or sizes[-1] != 1:
            raise InvalidArchitecture("input and output width must be 1")
        if hidden_activation not in ACTIVATIONS:
            raise InvalidArchitecture(f"unknown activation {hidden_activation!r}")
        if output_constraint not in CONSTRAINTS:
            raise InvalidArchitecture(f"unknown output constraint {output_constraint!r}")
        self.layer_sizes = sizes
        self.hidden_activation = hidden_activation
        self.output_constraint = output_constraint
        self.seed = seed
        n = sum(o * i + o for i, o in zip(sizes[:-1], sizes[1:]))
        if params is None:
            params = np.zeros(n, dtype=dtype)
        params = np.ascontiguousarray(params)
        if params.dtype not in (np.float32, np.float64):
            params = params.astype(np.float64)
        if params.shape != (n,):
            raise ShapeMismatch(f"expected {n} parameters, got {params.shape}")
        self.params = params
        self._slices = []
        pos = 0
        for i, o in zip(sizes[:-1], sizes[1:]):
            self._slices.append((slice(pos, pos + o * i), (o, i), slice(pos + o * i, pos + o * i + o)))
            pos += o * i + o

    @property
    def n_params(self):
        return self.params.size

    @property
    def dtype(self):
        return self.params.dtype

    def layers(self, flat=None):
        """(W, b) views into ``flat`` (default: the parameter vector)."""
        flat = self.params if flat is None else flat
        return [(flat[sw].reshape(shape), flat[sb]) for sw, shape, sb in self._slices]

    # -- evaluation ----------------------------------------------------------

    def evaluate(self, t, tangent=True):
        """Return ``(u, du_dt, cache)`` at the points ``t``.

        ``du_dt`` is ``None`` when ``tangent`` is False.
        """
        t = np.asarray(t, dtype=self.dtype).reshape(-1, 1)
        B = t.shape[0]
        x = np.vstack([t, np.ones_like(t)]) if tangent else t
        inputs, slopes = [], []
        layers = self.layers()
        last = len(layers) - 1
        tanh = self.hidden_activation == "tanh"
        for l, (W, b) in enumerate(layers):
            inputs.append(x)
            z = x @ W.T
            z[:B] += b
            if l == last:
                break
            if tanh:
                a = np.tanh(z[:B])
                s = 1.0 - a * a
                if tangent:
                    z[B:] *= s
                    z[:B] = a
                else:
                    z = a
                slopes.append(s)
            x = z
        y = z[:B, 0]
        dy = z[B:, 0] if tangent else None
        if self.output_constraint == "square":
            u = y * y
            du = 2.0 * y * dy if tangent else None
        else:
            u = y.copy()
            du = dy.copy() if tangent else None
        cache = (B, tangent, inputs, slopes, y, dy)
        return u, du, cache

    def forward(self, t):
        return self.evaluate(t, tangent=False)[0]

    def dinput(self, t):
        return self.evaluate(t, tangent=True)[1]

    # -- reverse mode ----------------------------------------------------------

    def backward(self, cache, gu, gdu=None, per_sample=False):
        """Pull adjoints of ``u`` (and ``du_dt``) back to the parameters.

        Returns the flat gradient of ``sum(gu*u + gdu*du)``; with
        ``per_sample`` it instead returns, per point, the squared norm of that
        point's own parameter gradient.
        """
        B, tangent, inputs, slopes, y, dy = cache
        dt = self.dtype
        gu = np.broadcast_to(np.asarray(gu, dtype=dt), (B,))
        if gdu is not None and not tangent:
            raise ValueError("tangent adjoint given but cache has no tangent")
        if tangent:
            gdu = np.zeros(B, dt) if gdu is None else np.broadcast_to(np.asarray(gdu, dtype=dt), (B,))
            G = np.empty((2 * B, 1), dt)
            if self.output_constraint == "square":
                G[:B, 0] = 2.0 * (y * gu + dy * gdu)
                G[B:, 0] = 2.0 * y * gdu
            else:
                G[:B, 0] = gu
                G[B:, 0] = gdu
        else:
            G = np.empty((B, 1), dt)
            G[:, 0] = 2.0 * y * gu if self.output_constraint == "square" else gu

        layers = self.layers()
        grad = None if per_sample else np.empty(self.n_params, dt)
        sq = np.zeros(B) if per_sample else None
        gviews = None if per_sample else self.layers(grad)
        for l in range(len(layers) - 1, -1, -1):
            x = inputs[l]
            if per_sample:
                g = G[:B]
                if tangent:
                    gd, a, da = G[B:], x[:B], x[B:]
                    sq += (np.einsum("ij,ij->i", g, g) * np.einsum("ij,ij->i", a, a)
                           + 2.0 * np.einsum("ij,ij->i", g, gd) * np.einsum("ij,ij->i", a, da)
                           + np.einsum("ij,ij->i", gd, gd) * np.einsum("ij,ij->i", da, da))
                else:
                    sq += np.einsum("ij,ij->i", g, g) * np.einsum("ij,ij->i", x, x)
                sq += np.einsum("ij,ij->i", g, g)
            else:
                gW, gb = gviews[l]
                np.dot(G.T, x, out=gW)
                gb[:] = G[:B].sum(axis=0)
            if l == 0:
                break
            gx = G @ layers[l][0]
            if slopes:
                s = slopes[l - 1]
                if tangent:
                    ga, gda = gx[:B], gx[B:]
                    a, da = x[:B], x[B:]
                    gx[:B] = s * ga - 2.0 * a * da * gda
                    gx[B:] = s * gda
                else:
                    gx *= s
            G = gx
        return sq if per_sample else grad

    def grad_params(self, t, upstream):
        """Gradient of ``sum(upstream * net(t))`` with respect to the parameters."""
        _, _, cache = self.evaluate(t, tangent=False)
        return self.backward(cache, upstream)

    def value_and_grads(self, t):
        """Output, input derivative and their per-point parameter Jacobians.

        Returns ``(u, du, Ju, Jdu)`` with ``J*`` of shape ``(B, n_params)``.
        Slow; meant for checks, not training.
        """
        t = np.asarray(t, dtype=float).reshape(-1)
        u, du, cache = self.evaluate(t)
        Ju = np.empty((t.size, self.n_params))
        Jdu = np.empty_like(Ju)
        for i in range(t.size):
            e = np.zeros(t.size)
            e[i] = 1.0
            Ju[i] = self.backward(cache, e, np.zeros(t.size))
            Jdu[i] = self.backward(cache, np.zeros(t.size), e)
        return u, du, Ju, Jdu

    # -- bookkeeping -------------------------------------------------------------

    def copy(self):
        return DenseNet(self.layer_sizes, self.params.copy(), self.hidden_activation,
                        self.output_constraint, self.seed)

    def astype(self, dtype):
        return DenseNet(self.layer_sizes, self.params.astype(dtype), self.hidden_activation,
                        self.output_constraint, self.seed)

    def to_dict(self):
        return {
            "kind": "dense",
            "layer_sizes": list(self.layer_sizes),
            "hidden_activation": self.hidden_activation,
            "output_constraint": self.output_constraint,
            "seed": self.seed,
            "dtype": self.dtype.name,
            "params": self.params.tolist(),
        }

    def __repr__(self):
        return (f"DenseNet({list(self.layer_sizes)}, {self.hidden_activation}, "
                f"{self.output_constraint}, n_params={self.n_params})")


class ConstantNet:
    """A single trainable scalar exposed through the network interface.

    Used for constant parameters (beta in the constant-rate case, sigma when
    held fixed in time).  With the square constraint the value is ``c**2``.
    """

    hidden_activation = "none"

    def __init__(self, value=1.0, output_constraint="square", params=None, seed=None,
                 dtype=np.float64):
        if output_constraint not in CONSTRAINTS:
            raise InvalidArchitecture(f"unknown output constraint {output_constraint!r}")
        self.output_constraint = output_constraint
        self.seed = seed
        if params is None:
            c = math.sqrt(value) if output_constraint == "square" else value
            params = np.array([c], dtype=dtype)
        self.params = np.ascontiguousarray(params).reshape(1)
        self.layer_sizes = (1,)

    @property
    def n_params(self):
        return 1

    @property
    def dtype(self):
        return self.params.dtype

    @property
    def value(self):
        c = self.params[0]
        return c * c if self.output_constraint == "square" else c

    def evaluate(self, t, tangent=True):
        B = np.asarray(t).reshape(-1).size
        u = np.full(B, self.value, dtype=self.dtype)
        du = np.zeros(B, self.dtype) if tangent else None
        return u, du, (B, tangent)

    def forward(self, t):
        return self.evaluate(t, tangent=False)[0]

    def dinput(self, t):
        return self.evaluate(t)[1]

    def backward(self, cache, gu, gdu=None, per_sample=False):
        B = cache[0]
        gu = np.broadcast_to(np.asarray(gu, dtype=self.dtype), (B,))
        scale = 2.0 * self.params[0] if self.output_constraint == "square" else 1.0
        if per_sample:
            return (scale * gu) ** 2
        return np.array([scale * gu.sum()], dtype=self.dtype)

    def grad_params(self, t, upstream):
        return self.backward(self.evaluate(t, tangent=False)[2], upstream)

    def copy(self):
        return ConstantNet(output_constraint=self.output_constraint,
                           params=self.params.copy(), seed=self.seed)

    def astype(self, dtype):
        return ConstantNet(output_constraint=self.output_constraint,
                           params=self.params.astype(dtype), seed=self.seed)

    def to_dict(self):
        return {"kind": "constant", "output_constraint": self.output_constraint,
                "seed": self.seed, "dtype": self.dtype.name, "params": self.params.tolist()}

    def __repr__(self):
        return f"ConstantNet(value={self.value!r})"


def init_glorot(layer_sizes, seed, hidden_activation="tanh", output_constraint="square",
                dtype=np.float64):
    """Glorot-uniform weights, zero biases; deterministic in ``seed``.

    Weights are drawn in float64 and then cast, so a float32 net is the
    rounded float64 net of the same seed.
    """
    net = DenseNet(layer_sizes, hidden_activation=hidden_activation,
                   output_constraint=output_constraint, seed=seed)
    rng = np.random.default_rng(seed)
    for W, b in net.layers():
        n_out, n_in = W.shape
        limit = math.sqrt(6.0 / (n_in + n_out))
        W[...] = rng.uniform(-limit, limit, size=W.shape)
        b[...] = 0.0
    return net if np.dtype(dtype) == np.float64 else net.astype(dtype)


def net_from_dict(d):
    params = np.array(d["params"], dtype=d.get("dtype", "float64"))
    if d["kind"] == "constant":
        return ConstantNet(output_constraint=d["output_constraint"], params=params,
                           seed=d.get("seed"))
    return DenseNet(d["layer_sizes"], params, d["hidden_activation"],
                    d["output_constraint"], d.get("seed"))


def save_net(net, path):
    Path(path).write_text(json.dumps(net.to_dict()))


def load_net(path):
    return net_from_dict(json.loads(Path(path).read_text()))


def forward(net, t_s):
    return net.forward(t_s)


def dinput(net, t_s):
    return net.dinput(t_s)


def grad_params(net, t_s, upstream):
    return net.grad_params(t_s, upstream)


# -- optimisation ----------------------------------------------------------------


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kw):
        return cls(np.zeros_like(params), np.zeros_like(params), **kw)


def adam_step(params, grads, state, lr):
    """Bias-corrected Adam update; modifies ``params`` and ``state`` in place."""
    grads = np.asarray(grads, dtype=params.dtype)
    if grads.shape != params.shape or state.first_moment.shape != params.shape:
        raise ShapeMismatch(f"params {params.shape} vs grads {grads.shape}")
    state.step_count += 1
    m, v = state.first_moment, state.second_moment
    m *= state.beta1
    m += (1.0 - state.beta1) * grads
    v *= state.beta2
    v += (1.0 - state.beta2) * grads * grads
    mhat_scale = 1.0 / (1.0 - state.beta1 ** state.step_count)
    vhat_scale = 1.0 / (1.0 - state.beta2 ** state.step_count)
    params -= lr * (m * mhat_scale) / (np.sqrt(v * vhat_scale) + state.epsilon)
    return params, state


@dataclass
class LrSchedule:
    """Reduce-on-plateau: halve the rate after ``patience`` stagnant epochs."""

    current_lr: float = 1e-3
    patience: int = 100
    min_delta: float = 1e-4
    floor: float = 1e-5
    factor: float = 0.5
    best: float = field(default=math.inf)
    wait: int = 0


def lr_on_plateau(schedule, epoch_loss):
    if epoch_loss < schedule.best * (1.0 - schedule.min_delta) or not math.isfinite(schedule.best):
        schedule.best = min(epoch_loss, schedule.best)
        schedule.wait = 0
    else:
        schedule.wait += 1
        if schedule.wait >= schedule.patience:
            schedule.current_lr = max(schedule.current_lr * schedule.factor, schedule.floor)
            schedule.wait = 0
    return schedule.current_lr
