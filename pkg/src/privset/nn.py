"""Dense numpy network core with hand-written backprop.

Every layer implements four passes:

* ``forward``            y = f(x; w)
* ``backward``           (dx, dw) from dy, optionally keeping a batch axis on dw
* ``tangent``            forward-mode derivative of y in a parameter direction
* ``backward_tangent``   forward-mode derivative of dx in the same direction

The last two give the mixed second derivative needed to push a loss defined on
parameter gradients back to the network input (see :meth:`Tape.input_grad_of`).

Parameters and gradients are plain lists of ``np.ndarray`` in layer order.
All code paths follow the dtype of the parameters, so gradient checks run the
very same functions in float64.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

ARCHITECTURES = ("convnet", "lenet", "mlp", "generator")
NORM_EPS = 1e-5


class NonFiniteError(ValueError):
    """Raised when a checked tensor contains NaN or Inf."""


def checked(array, name="tensor"):
    a = np.asarray(array)
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{name} contains non-finite values")
    return a


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description.

    ``input_shape`` is ``(C, H, W)`` for image data or ``(d,)`` for flat
    features. For the generator it is the *output* data shape and the input is
    ``latent_dim + num_classes`` wide (latent code concatenated with a one-hot
    label).
    """

    arch: str
    input_shape: tuple
    num_classes: int
    width: int = 128
    depth: int = 3
    hidden: tuple = (128, 128)
    latent_dim: int = 64

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.arch!r}")
        if not self.input_shape or any(s <= 0 for s in self.input_shape):
            raise ValueError(f"invalid input shape {self.input_shape}")
        if len(self.input_shape) not in (1, 3):
            raise ValueError("input shape must be (d,) or (C, H, W)")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if self.width < 1 or self.depth < 1 or self.latent_dim < 1:
            raise ValueError("width, depth and latent_dim must be positive")
        if self.arch == "mlp" and (not self.hidden or min(self.hidden) < 1):
            raise ValueError("mlp needs at least one hidden layer")
        if self.arch in ("convnet", "lenet") and len(self.input_shape) != 3:
            raise ValueError(f"{self.arch} needs (C, H, W) input")

    @property
    def in_shape(self):
        """Shape of one network input (without batch axis)."""
        if self.arch == "generator":
            return (self.latent_dim + self.num_classes,)
        return self.input_shape

    def to_dict(self):
        return {
            "arch": self.arch,
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "width": self.width,
            "depth": self.depth,
            "hidden": list(self.hidden),
            "latent_dim": self.latent_dim,
        }


# ---------------------------------------------------------------------------
# convolution helpers (stride 1, symmetric zero padding)


def _im2col(x, k, pad):
    b, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))  # b, c, ho, wo, k, k
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b, ho * wo, c * k * k)
    return cols, ho, wo


def conv2d(x, weight, pad):
    o, _, k, _ = weight.shape
    cols, ho, wo = _im2col(x, k, pad)
    y = cols @ weight.reshape(o, -1).T
    return y.transpose(0, 2, 1).reshape(x.shape[0], o, ho, wo)


def conv2d_input_grad(dy, weight, pad):
    k = weight.shape[2]
    flipped = weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    return conv2d(dy, np.ascontiguousarray(flipped), k - 1 - pad)


# ---------------------------------------------------------------------------
# layers


class Layer:
    shapes: list = []
    fan_in = 1
    kinds: tuple = ()

    def out_shape(self, in_shape):
        return in_shape


class Linear(Layer):
    kinds = ("weight", "bias")

    def __init__(self, n_in, n_out):
        self.shapes = [(n_out, n_in), (n_out,)]
        self.fan_in = n_in

    def out_shape(self, in_shape):
        return (self.shapes[0][0],)

    def forward(self, p, x):
        w, b = p
        return x @ w.T + b, x

    def backward(self, p, x, dy, per_example, need_dx):
        w, _ = p
        if per_example:
            grads = [dy[:, :, None] * x[:, None, :], dy]
        else:
            grads = [dy.T @ x, dy.sum(0)]
        return (dy @ w if need_dx else None), grads

    def tangent(self, p, t, x, xdot):
        w, _ = p
        u, ub = t
        ydot = x @ u.T + ub
        if xdot is not None:
            ydot = ydot + xdot @ w.T
        return ydot, None

    def backward_tangent(self, p, t, x, tc, dy, dydot):
        return dydot @ p[0] + dy @ t[0]


class Conv2d(Layer):
    kinds = ("weight", "bias")

    def __init__(self, c_in, c_out, k, pad):
        self.shapes = [(c_out, c_in, k, k), (c_out,)]
        self.fan_in = c_in * k * k
        self.k, self.pad = k, pad

    def out_shape(self, in_shape):
        _, h, w = in_shape
        delta = 2 * self.pad - self.k + 1
        if h + delta < 1 or w + delta < 1:
            raise ValueError(f"input {in_shape} too small for {self.k}x{self.k} conv")
        return (self.shapes[0][0], h + delta, w + delta)

    def forward(self, p, x):
        w, b = p
        cols, ho, wo = _im2col(x, self.k, self.pad)
        y = cols @ w.reshape(w.shape[0], -1).T + b
        return y.transpose(0, 2, 1).reshape(x.shape[0], w.shape[0], ho, wo), (cols, ho, wo)

    def backward(self, p, cache, dy, per_example, need_dx):
        w, _ = p
        cols = cache[0]
        bsz, o = dy.shape[:2]
        dyr = dy.reshape(bsz, o, -1)
        if per_example:
            grads = [(dyr @ cols).reshape((bsz,) + w.shape), dyr.sum(2)]
        else:
            gw = np.tensordot(dyr, cols, axes=([0, 2], [0, 1]))
            grads = [gw.reshape(w.shape), dyr.sum((0, 2))]
        dx = conv2d_input_grad(dy, w, self.pad) if need_dx else None
        return dx, grads

    def tangent(self, p, t, cache, xdot):
        w, _ = p
        u, ub = t
        cols, ho, wo = cache
        ydot = (cols @ u.reshape(u.shape[0], -1).T + ub).transpose(0, 2, 1)
        ydot = ydot.reshape(cols.shape[0], u.shape[0], ho, wo)
        if xdot is not None:
            ydot = ydot + conv2d(xdot, w, self.pad)
        return ydot, None

    def backward_tangent(self, p, t, cache, tc, dy, dydot):
        return conv2d_input_grad(dydot, p[0], self.pad) + conv2d_input_grad(dy, t[0], self.pad)


class InstanceNorm(Layer):
    """Per-example, per-channel normalization with learnable scale and shift."""

    kinds = ("scale", "shift")

    def __init__(self, channels):
        self.shapes = [(channels,), (channels,)]

    def forward(self, p, x):
        g, b = p
        xc = x - x.mean(axis=(2, 3), keepdims=True)
        s = np.sqrt((xc * xc).mean(axis=(2, 3), keepdims=True) + NORM_EPS)
        xh = xc / s
        return g[:, None, None] * xh + b[:, None, None], (xh, s)

    def backward(self, p, cache, dy, per_example, need_dx):
        g, _ = p
        xh, s = cache
        if per_example:
            grads = [(dy * xh).sum((2, 3)), dy.sum((2, 3))]
        else:
            grads = [(dy * xh).sum((0, 2, 3)), dy.sum((0, 2, 3))]
        dx = None
        if need_dx:
            dxh = g[:, None, None] * dy
            dx = (dxh - dxh.mean((2, 3), keepdims=True)
                  - xh * (dxh * xh).mean((2, 3), keepdims=True)) / s
        return dx, grads

    def tangent(self, p, t, cache, xdot):
        g, _ = p
        tg, tb = t
        xh, s = cache
        if xdot is None:
            return tg[:, None, None] * xh + tb[:, None, None], None
        sdot = (xh * xdot).mean((2, 3), keepdims=True)
        xhdot = (xdot - xdot.mean((2, 3), keepdims=True) - xh * sdot) / s
        ydot = tg[:, None, None] * xh + g[:, None, None] * xhdot + tb[:, None, None]
        return ydot, (xhdot, sdot)

    def backward_tangent(self, p, t, cache, tc, dy, dydot):
        g, _ = p
        tg, _ = t
        xh, s = cache
        dxh = g[:, None, None] * dy
        dxhdot = tg[:, None, None] * dy + g[:, None, None] * dydot
        m2 = (dxh * xh).mean((2, 3), keepdims=True)
        if tc is None:
            xhdot, sdot = 0.0, 0.0
        else:
            xhdot, sdot = tc
        m2dot = (dxhdot * xh + dxh * xhdot).mean((2, 3), keepdims=True)
        out = (dxhdot - dxhdot.mean((2, 3), keepdims=True) - xhdot * m2 - xh * m2dot) / s
        if tc is not None:
            base = dxh - dxh.mean((2, 3), keepdims=True) - xh * m2
            out = out - base * sdot / (s * s)
        return out


class _Stateless(Layer):
    """Layers without parameters that are linear in their input."""

    def forward(self, p, x):
        return self.apply(x), x.shape

    def backward(self, p, shape, dy, per_example, need_dx):
        return (self.adjoint(dy, shape) if need_dx else None), []

    def tangent(self, p, t, shape, xdot):
        return (None if xdot is None else self.apply(xdot)), None

    def backward_tangent(self, p, t, shape, tc, dy, dydot):
        return self.adjoint(dydot, shape)


class AvgPool2(_Stateless):
    """2x2 average pooling, stride 2; odd trailing rows/columns are dropped."""

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if h < 2 or w < 2:
            raise ValueError(f"input {in_shape} too small for 2x2 pooling")
        return (c, h // 2, w // 2)

    def apply(self, x):
        b, c, h, w = x.shape
        ho, wo = h // 2, w // 2
        return x[:, :, : 2 * ho, : 2 * wo].reshape(b, c, ho, 2, wo, 2).mean((3, 5))

    def adjoint(self, dy, shape):
        dx = np.zeros(shape, dtype=dy.dtype)
        ho, wo = dy.shape[2], dy.shape[3]
        dx[:, :, : 2 * ho, : 2 * wo] = np.repeat(np.repeat(dy, 2, axis=2), 2, axis=3) * 0.25
        return dx


class Upsample2(_Stateless):
    def out_shape(self, in_shape):
        c, h, w = in_shape
        return (c, 2 * h, 2 * w)

    def apply(self, x):
        return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)

    def adjoint(self, dy, shape):
        b, c, h, w = dy.shape
        return dy.reshape(b, c, h // 2, 2, w // 2, 2).sum((3, 5))


class Reshape(_Stateless):
    def __init__(self, shape):
        self.target = tuple(shape)

    def out_shape(self, in_shape):
        if math.prod(in_shape) != math.prod(self.target):
            raise ValueError(f"cannot reshape {in_shape} to {self.target}")
        return self.target

    def apply(self, x):
        return x.reshape((x.shape[0],) + self.target)

    def adjoint(self, dy, shape):
        return dy.reshape(shape)


class ReLU(Layer):
    def forward(self, p, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, p, mask, dy, per_example, need_dx):
        return (dy * mask if need_dx else None), []

    def tangent(self, p, t, mask, xdot):
        return (None if xdot is None else xdot * mask), None

    def backward_tangent(self, p, t, mask, tc, dy, dydot):
        return dydot * mask


class Tanh(Layer):
    def forward(self, p, x):
        y = np.tanh(x)
        return y, y

    def backward(self, p, y, dy, per_example, need_dx):
        return (dy * (1 - y * y) if need_dx else None), []

    def tangent(self, p, t, y, xdot):
        if xdot is None:
            return None, None
        ydot = xdot * (1 - y * y)
        return ydot, ydot

    def backward_tangent(self, p, t, y, ydot, dy, dydot):
        out = dydot * (1 - y * y)
        if ydot is not None:
            out = out - 2 * y * ydot * dy
        return out


# ---------------------------------------------------------------------------
# architectures


@dataclass
class Network:
    spec: NetworkSpec
    layers: list
    offsets: list = field(default_factory=list)
    out_shape: tuple = ()

    @property
    def param_shapes(self):
        return [s for layer in self.layers for s in layer.shapes]

    @property
    def param_kinds(self):
        return [k for layer in self.layers for k in layer.kinds]

    def split(self, flat):
        return [flat[a:b] for a, b in self.offsets]


def _generator_layers(spec):
    n_in = spec.latent_dim + spec.num_classes
    if len(spec.input_shape) == 1:
        hidden = spec.hidden[0]
        return [Linear(n_in, hidden), ReLU(), Linear(hidden, spec.input_shape[0]), Tanh()]
    c, h, w = spec.input_shape
    n_up = 0
    while n_up < 2 and h % 2 == 0 and w % 2 == 0 and h > 4 and w > 4:
        h, w, n_up = h // 2, w // 2, n_up + 1
    ch = spec.width
    layers = [Linear(n_in, ch * h * w), ReLU(), Reshape((ch, h, w))]
    for _ in range(n_up):
        layers += [Upsample2(), Conv2d(ch, ch, 3, 1), ReLU()]
    layers += [Conv2d(ch, c, 3, 1), Tanh()]
    return layers


def _classifier_layers(spec):
    L = spec.num_classes
    if spec.arch == "mlp":
        d = math.prod(spec.input_shape)
        layers = [Reshape((d,))]
        for h in spec.hidden:
            layers += [Linear(d, h), ReLU()]
            d = h
        return layers + [Linear(d, L)]
    c = spec.input_shape[0]
    if spec.arch == "convnet":
        layers = []
        for _ in range(spec.depth):
            layers += [Conv2d(c, spec.width, 3, 1), InstanceNorm(spec.width), ReLU(), AvgPool2()]
            c = spec.width
        return layers + [None]  # final FC sized after shape propagation
    # lenet-5 with relu
    return [
        Conv2d(c, 6, 5, 2), ReLU(), AvgPool2(),
        Conv2d(6, 16, 5, 0), ReLU(), AvgPool2(),
        None, Linear(0, 120), ReLU(), Linear(120, 84), ReLU(), Linear(84, L),
    ]


@functools.lru_cache(maxsize=64)
def build(spec: NetworkSpec) -> Network:
    """Instantiate the layer stack for ``spec`` and check shape consistency."""
    layers = _generator_layers(spec) if spec.arch == "generator" else _classifier_layers(spec)
    shape = spec.in_shape
    built = []
    for i, layer in enumerate(layers):
        if layer is None:
            d = math.prod(shape)
            layer = Reshape((d,))
            if spec.arch == "convnet":
                built += [layer, Linear(d, spec.num_classes)]
                shape = (spec.num_classes,)
                continue
            nxt = layers[i + 1]
            nxt.shapes = [(nxt.shapes[0][0], d), nxt.shapes[1]]
            nxt.fan_in = d
        shape = layer.out_shape(shape)
        built.append(layer)
    offsets, pos = [], 0
    for layer in built:
        offsets.append((pos, pos + len(layer.shapes)))
        pos += len(layer.shapes)
    expected = spec.input_shape if spec.arch == "generator" else (spec.num_classes,)
    if shape != expected:
        raise ValueError(f"architecture produces {shape}, expected {expected}")
    return Network(spec, built, offsets, shape)


def init_params(spec: NetworkSpec, seed: int, dtype=np.float32) -> list:
    """Kaiming-normal weights (std sqrt(2 / fan_in)), zero biases, unit norm scale."""
    net = build(spec)
    rng = np.random.default_rng(seed)
    params = []
    for layer in net.layers:
        for shape, kind in zip(layer.shapes, layer.kinds):
            if kind == "weight":
                std = math.sqrt(2.0 / layer.fan_in)
                params.append((rng.standard_normal(shape) * std).astype(dtype))
            elif kind == "scale":
                params.append(np.ones(shape, dtype=dtype))
            else:
                params.append(np.zeros(shape, dtype=dtype))
    return params


def num_params(spec: NetworkSpec) -> int:
    return sum(math.prod(s) for s in build(spec).param_shapes)


# ---------------------------------------------------------------------------
# passes


def _check_batch(net, params, batch):
    shapes = net.param_shapes
    if len(params) != len(shapes) or any(p.shape != s for p, s in zip(params, shapes)):
        raise ValueError("parameter shapes do not match the network spec")
    x = np.asarray(batch)
    if x.shape[1:] != net.spec.in_shape:
        raise ValueError(f"batch shape {x.shape[1:]} does not match input {net.spec.in_shape}")
    return checked(x, "batch").astype(params[0].dtype, copy=False)


def _check_labels(labels, n, num_classes):
    y = np.asarray(labels)
    if y.shape != (n,):
        raise ValueError("need one label per example")
    if n and (y.min() < 0 or y.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    return y.astype(np.int64, copy=False)


def _run_forward(net, params, x):
    caches = []
    for layer, (a, b) in zip(net.layers, net.offsets):
        x, cache = layer.forward(params[a:b], x)
        caches.append(cache)
    return x, caches


def _run_backward(net, params, caches, dy, per_example, need_input_grad):
    """Back-propagate ``dy``; returns (input grad, param grads, per-layer output grads)."""
    grads = [None] * len(params)
    deltas = [None] * len(net.layers)
    first = 0 if need_input_grad else _first_param_layer(net)
    for i in range(len(net.layers) - 1, -1, -1):
        layer, (a, b) = net.layers[i], net.offsets[i]
        deltas[i] = dy
        dy, g = layer.backward(params[a:b], caches[i], dy, per_example, i > first or need_input_grad)
        grads[a:b] = g
        if dy is None:
            break
    return dy, grads, deltas


def _first_param_layer(net):
    return next(i for i, layer in enumerate(net.layers) if layer.shapes)


def log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def forward(params, spec: NetworkSpec, batch):
    """Logits (or generator outputs) for ``batch``."""
    net = build(spec)
    out, _ = _run_forward(net, params, _check_batch(net, params, batch))
    return out


class Tape:
    """Forward and backward pass of the mean cross-entropy, kept for reuse.

    After construction ``loss`` and ``grads`` hold the batch loss and its
    parameter gradient; :meth:`input_grad_of` then differentiates a linear
    functional of those gradients with respect to the input batch.
    """

    def __init__(self, params, spec, batch, labels):
        self.net = build(spec)
        self.params = params
        x = _check_batch(self.net, params, batch)
        self.labels = _check_labels(labels, x.shape[0], spec.num_classes)
        n = x.shape[0]
        if n == 0:
            raise ValueError("empty batch")
        logits, self.caches = _run_forward(self.net, params, x)
        logp = log_softmax(logits)
        self.loss = float(-logp[np.arange(n), self.labels].mean())
        self.probs = np.exp(logp)
        dz = self.probs.copy()
        dz[np.arange(n), self.labels] -= 1
        dz /= n
        self.input_grad, self.grads, self.deltas = _run_backward(
            self.net, params, self.caches, dz, False, True
        )

    def input_grad_of(self, direction):
        """Gradient w.r.t. the input batch of ``<direction, grads>``.

        Uses symmetry of mixed partials: the input gradient of the directional
        derivative equals the parameter-direction derivative of the input
        gradient, evaluated in one forward-mode sweep over the stored passes.
        """
        net, params = self.net, self.params
        xdot, tcs = None, []
        for layer, (a, b), cache in zip(net.layers, net.offsets, self.caches):
            xdot, tc = layer.tangent(params[a:b], direction[a:b], cache, xdot)
            tcs.append(tc)
        n = self.probs.shape[0]
        p = self.probs
        dydot = p * (xdot - (p * xdot).sum(axis=1, keepdims=True)) / n
        for i in range(len(net.layers) - 1, -1, -1):
            layer, (a, b) = net.layers[i], net.offsets[i]
            dydot = layer.backward_tangent(
                params[a:b], direction[a:b], self.caches[i], tcs[i], self.deltas[i], dydot
            )
        return dydot


def loss_and_grad(params, spec: NetworkSpec, batch, labels):
    """Mean cross-entropy and its exact parameter gradient."""
    tape = Tape(params, spec, batch, labels)
    return tape.loss, tape.grads


def per_example_grads(params, spec: NetworkSpec, batch, labels):
    """Gradients of each example's own loss, stacked along a leading batch axis.

    Entry ``[g[i] for g in result]`` is the gradient for example ``i``. Nothing
    in the forward pass mixes examples, so one batched backward with the batch
    axis kept on the weight gradients is exact.
    """
    net = build(spec)
    x = _check_batch(net, params, batch)
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    y = _check_labels(labels, n, spec.num_classes)
    logits, caches = _run_forward(net, params, x)
    dz = np.exp(log_softmax(logits))
    dz[np.arange(n), y] -= 1
    _, grads, _ = _run_backward(net, params, caches, dz, True, False)
    return grads


def per_example_norms(params, spec: NetworkSpec, batch, labels):
    """L2 norm of each example's full parameter gradient.

    Dense layers use the factorization ``|outer(d, a)| = |d| |a|`` so their
    per-example gradients are never formed; other layers materialize theirs
    one layer at a time. Returns ``(norms, caches, dz)`` for reuse.
    """
    net = build(spec)
    x = _check_batch(net, params, batch)
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    y = _check_labels(labels, n, spec.num_classes)
    logits, caches = _run_forward(net, params, x)
    dz = np.exp(log_softmax(logits))
    dz[np.arange(n), y] -= 1
    sq = np.zeros(n, dtype=np.float64)
    dy = dz
    stop = _first_param_layer(net)
    for i in range(len(net.layers) - 1, stop - 1, -1):
        layer, (a, b) = net.layers[i], net.offsets[i]
        p = params[a:b]
        if isinstance(layer, Linear):
            d2 = np.einsum("ij,ij->i", dy, dy, dtype=np.float64)
            x2 = np.einsum("ij,ij->i", caches[i], caches[i], dtype=np.float64)
            sq += d2 * x2 + d2
        elif layer.shapes:
            _, grads = layer.backward(p, caches[i], dy, True, False)
            for g in grads:
                flat = g.reshape(n, -1)
                sq += np.einsum("ij,ij->i", flat, flat, dtype=np.float64)
        if i > stop:
            dy, _ = layer.backward(p, caches[i], dy, False, True)
    return np.sqrt(sq), (net, caches), dz


def clipped_grad_sum(params, spec: NetworkSpec, batch, labels, clip):
    """Sum over examples of per-example gradients rescaled to norm at most ``clip``.

    Every per-example gradient is linear in its own output delta, so scaling
    the deltas by the clip factors and running one batched backward gives the
    clipped sum exactly. ``clip=None`` returns the plain (unclipped) sum.
    """
    norms, (net, caches), dz = per_example_norms(params, spec, batch, labels)
    factors = np.ones_like(norms)
    if clip is not None:
        big = norms > clip
        factors[big] = clip / norms[big]
    scaled = dz * factors[:, None].astype(dz.dtype)
    _, grads, _ = _run_backward(net, params, caches, scaled, False, False)
    return grads, norms


def vjp(params, spec: NetworkSpec, batch, cotangent):
    """Pull ``cotangent`` (shaped like the outputs) back to (param grads, input grad)."""
    net = build(spec)
    x = _check_batch(net, params, batch)
    _, caches = _run_forward(net, params, x)
    dx, grads, _ = _run_backward(net, params, caches, cotangent, False, True)
    return grads, dx


def predict(params, spec: NetworkSpec, batch, chunk=1024):
    out = []
    for i in range(0, len(batch), chunk):
        out.append(forward(params, spec, batch[i : i + chunk]))
    return np.concatenate(out) if out else np.zeros((0, spec.num_classes))
