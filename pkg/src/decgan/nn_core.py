"""Dense feed-forward networks in float64 numpy with manual backprop and Adam.

Inputs are row batches of shape ``(batch, width)``; a 1-d input is treated as a
batch of one.  Parameters are exposed as a flat list ``[W0, b0, W1, b1, ...]``
with ``W`` shaped ``(in, out)`` so that gradients and optimizer state can be
zipped against them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("relu", "leaky_relu", "sigmoid", "linear")
BCE_EPS = 1e-7


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    in_width: int
    out_width: int
    activation: str = "linear"
    slope: float = 0.2  # leaky_relu only
    dropout: float = 0.0

    def __post_init__(self):
        if self.in_width < 1 or self.out_width < 1:
            raise NetworkError(f"layer widths must be >= 1, got {self.in_width}->{self.out_width}")
        if self.activation not in ACTIVATIONS:
            raise NetworkError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise NetworkError(f"dropout rate must lie in [0, 1), got {self.dropout}")

    def to_dict(self):
        return {"in_width": self.in_width, "out_width": self.out_width,
                "activation": self.activation, "slope": self.slope, "dropout": self.dropout}


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activate(spec: LayerSpec, z):
    if spec.activation == "relu":
        return np.maximum(z, 0.0)
    if spec.activation == "leaky_relu":
        return np.where(z > 0, z, spec.slope * z)
    if spec.activation == "sigmoid":
        return sigmoid(z)
    return z


def activation_grad(spec: LayerSpec, z, a):
    """Derivative of the activation at pre-activation ``z``; ReLU'(0)=0, LeakyReLU'(0)=slope."""
    if spec.activation == "relu":
        return (z > 0).astype(np.float64)
    if spec.activation == "leaky_relu":
        return np.where(z > 0, 1.0, spec.slope)
    if spec.activation == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


class DenseNetwork:
    def __init__(self, layers, weights, biases):
        layers = list(layers)
        if not layers:
            raise NetworkError("a network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_width != nxt.in_width:
                raise NetworkError(
                    f"layer widths do not chain: {prev.in_width}->{prev.out_width} "
                    f"then {nxt.in_width}->{nxt.out_width}")
        if len(weights) != len(layers) or len(biases) != len(layers):
            raise NetworkError("one weight matrix and bias vector per layer required")
        self.layers = layers
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64).reshape(-1) for b in biases]
        for spec, w, b in zip(layers, self.weights, self.biases):
            if w.shape != (spec.in_width, spec.out_width) or b.shape != (spec.out_width,):
                raise NetworkError(f"parameter shapes {w.shape}/{b.shape} do not match {spec}")

    @property
    def in_width(self):
        return self.layers[0].in_width

    @property
    def out_width(self):
        return self.layers[-1].out_width

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "DenseNetwork":
        return DenseNetwork(self.layers, [w.copy() for w in self.weights],
                            [b.copy() for b in self.biases])

    def get_state(self):
        return [p.copy() for p in self.params]

    def set_state(self, state):
        for p, s in zip(self.params, state):
            p[...] = s

    def to_dict(self):
        return {
            "layers": [s.to_dict() for s in self.layers],
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d):
        layers = [LayerSpec(**s) for s in d["layers"]]
        weights = [np.array(w, dtype=np.float64).reshape(s.in_width, s.out_width)
                   for w, s in zip(d["weights"], layers)]
        return cls(layers, weights, [np.array(b, dtype=np.float64) for b in d["biases"]])

    def __call__(self, x):
        return forward(self, x)[0]


def mlp_layers(widths, hidden_activation="relu", output_activation="sigmoid",
               slope=0.2, dropout=0.0) -> list[LayerSpec]:
    """Layer specs for ``widths = [in, h1, ..., out]``; dropout follows each hidden layer."""
    specs = []
    last = len(widths) - 2
    for i, (a, b) in enumerate(zip(widths, widths[1:])):
        if i == last:
            specs.append(LayerSpec(a, b, output_activation, slope))
        else:
            specs.append(LayerSpec(a, b, hidden_activation, slope, dropout))
    return specs


def init_network(layers, seed) -> DenseNetwork:
    """Glorot-uniform weights, zero biases."""
    layers = list(layers)
    for prev, nxt in zip(layers, layers[1:]):
        if prev.out_width != nxt.in_width:
            raise NetworkError(
                f"layer widths do not chain: {prev.in_width}->{prev.out_width} "
                f"then {nxt.in_width}->{nxt.out_width}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for spec in layers:
        limit = np.sqrt(6.0 / (spec.in_width + spec.out_width))
        weights.append(rng.uniform(-limit, limit, size=(spec.in_width, spec.out_width)))
        biases.append(np.zeros(spec.out_width))
    return DenseNetwork(layers, weights, biases)


@dataclass
class ForwardTrace:
    inputs: list = field(default_factory=list)  # input to each layer
    pre: list = field(default_factory=list)
    post: list = field(default_factory=list)  # activation before dropout
    masks: list = field(default_factory=list)  # None where no dropout applied
    layers: tuple = ()


def forward(net: DenseNetwork, x, training=False, rng=None):
    """Run the network on ``x``.

    Returns ``(output, trace)``.  In evaluation mode dropout is off and the
    result is a pure function of ``(net, x)``.  In training mode ``rng`` (a
    Generator or seed) drives the inverted-dropout masks.
    """
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.shape[1] != net.in_width:
        raise NetworkError(f"input width {a.shape[1]} does not match network input {net.in_width}")
    if training and not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    trace = ForwardTrace(layers=tuple(net.layers))
    for spec, w, b in zip(net.layers, net.weights, net.biases):
        trace.inputs.append(a)
        z = a @ w + b
        h = activate(spec, z)
        trace.pre.append(z)
        trace.post.append(h)
        mask = None
        if training and spec.dropout > 0:
            keep = 1.0 - spec.dropout
            mask = (rng.random(h.shape) < keep) / keep
            h = h * mask
        trace.masks.append(mask)
        a = h
    return a, trace


def backward(net: DenseNetwork, trace: ForwardTrace, grad_out, wrt_preactivation=False):
    """Reverse-mode gradients for the traced forward pass.

    ``grad_out`` is dL/d(output), shaped like the output.  With
    ``wrt_preactivation`` it is instead dL/d(final pre-activation), which lets
    callers pass the fused sigmoid+BCE gradient ``p - y``.

    Returns ``(grads, grad_input)`` with ``grads`` aligned to ``net.params``.
    """
    if tuple(net.layers) != trace.layers:
        raise NetworkError("trace was recorded on a different network")
    g = np.asarray(grad_out, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != trace.post[-1].shape:
        raise NetworkError(f"output gradient shape {g.shape} does not match {trace.post[-1].shape}")
    grads = [None] * (2 * len(net.layers))
    for k in range(len(net.layers) - 1, -1, -1):
        spec = net.layers[k]
        if k == len(net.layers) - 1 and wrt_preactivation:
            delta = g
        else:
            if trace.masks[k] is not None:
                g = g * trace.masks[k]
            delta = g * activation_grad(spec, trace.pre[k], trace.post[k])
        grads[2 * k] = trace.inputs[k].T @ delta
        grads[2 * k + 1] = delta.sum(axis=0)
        g = delta @ net.weights[k].T
    return grads, g


def bce_loss(p, y):
    """Elementwise binary cross-entropy with predictions clamped to [1e-7, 1-1e-7]."""
    p = np.clip(np.asarray(p, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)
    y = np.asarray(y, dtype=np.float64)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


def bce_grad(p, y):
    """d bce_loss / dp, zero where the clamp is active."""
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    g = -y / pc + (1.0 - y) / (1.0 - pc)
    return np.where((p < BCE_EPS) | (p > 1.0 - BCE_EPS), 0.0, g)


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0 or not self.eps > 0:
            raise NetworkError("learning rate and epsilon must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise NetworkError("beta1 and beta2 must lie in (0, 1)")

    @classmethod
    def for_params(cls, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params],
                   0, lr, beta1, beta2, eps)

    def copy(self):
        return AdamState([m.copy() for m in self.m], [v.copy() for v in self.v],
                         self.step, self.lr, self.beta1, self.beta2, self.eps)

    def to_dict(self):
        return {"m": [m.tolist() for m in self.m], "v": [v.tolist() for v in self.v],
                "step": self.step, "lr": self.lr, "beta1": self.beta1,
                "beta2": self.beta2, "eps": self.eps}

    @classmethod
    def from_dict(cls, d, like=None):
        def arrays(key):
            out = [np.array(a, dtype=np.float64) for a in d[key]]
            if like is not None:
                out = [a.reshape(p.shape) for a, p in zip(out, like)]
            return out
        return cls(arrays("m"), arrays("v"), d["step"], d["lr"], d["beta1"], d["beta2"], d["eps"])


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update, applied to ``params`` in place.

    Returns ``(params, state)`` for convenience.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise NetworkError("params, gradients and optimizer state differ in length")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != np.shape(g) or p.shape != m.shape:
            raise NetworkError(f"shape mismatch: param {p.shape}, grad {np.shape(g)}, state {m.shape}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# verification ----------------------------------------------------------------


def _loss(net, x, y):
    out, _ = forward(net, x)
    return float(bce_loss(out, y).sum())


def gradient_check(net: DenseNetwork, x, target, h=1e-5) -> float:
    """Max relative error between backprop and central differences of bce∘forward.

    Relative error per component is ``|ga - gn| / max(|ga|, |gn|, 1e-8)``.
    The network is evaluated without dropout.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(target, dtype=np.float64).reshape(-1, net.out_width)
    out, trace = forward(net, x)
    analytic, _ = backward(net, trace, bce_grad(out, y))
    worst = 0.0
    for p, ga in zip(net.params, analytic):
        flat = p.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = _loss(net, x, y)
            flat[i] = orig - h
            down = _loss(net, x, y)
            flat[i] = orig
            gn = (up - down) / (2.0 * h)
            denom = max(abs(gflat[i]), abs(gn), 1e-8)
            worst = max(worst, abs(gflat[i] - gn) / denom)
    return worst


def random_network(rng, max_width=16, max_depth=4, in_width=None) -> DenseNetwork:
    """Random net with mixed hidden activations and a sigmoid output, for gradient checks."""
    depth = int(rng.integers(1, max_depth + 1))
    widths = [int(in_width or rng.integers(1, max_width + 1))]
    widths += [int(rng.integers(1, max_width + 1)) for _ in range(depth - 1)]
    widths.append(1)
    layers = []
    for i, (a, b) in enumerate(zip(widths, widths[1:])):
        act = "sigmoid" if i == depth - 1 else ACTIVATIONS[int(rng.integers(len(ACTIVATIONS)))]
        layers.append(LayerSpec(a, b, act, slope=0.2))
    net = init_network(layers, rng)
    for b in net.biases:
        b[...] = rng.normal(0.0, 0.1, size=b.shape)
    return net


def gradcheck_suite(n_nets=100, seed=0, h=1e-5) -> list[float]:
    """Relative errors of :func:`gradient_check` over ``n_nets`` random networks."""
    rng = np.random.default_rng(seed)
    errors = []
    for _ in range(n_nets):
        net = random_network(rng)
        x = rng.standard_normal(net.in_width)
        y = float(rng.integers(0, 2))
        errors.append(gradient_check(net, x, y, h))
    return errors


# checkpoints -------------------------------------------------------------------


def save_checkpoint(path, networks: dict, optimizers: dict | None = None, extra: dict | None = None):
    """Write networks (and optional Adam states / metadata) as one JSON document.

    Python's float repr is used, so values round-trip bitwise.
    """
    doc = {
        "format": "decgan-checkpoint/1",
        "networks": {k: n.to_dict() for k, n in networks.items()},
        "optimizers": {k: s.to_dict() for k, s in (optimizers or {}).items()},
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_checkpoint(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    nets = {k: DenseNetwork.from_dict(d) for k, d in doc["networks"].items()}
    opts = {}
    for k, d in doc.get("optimizers", {}).items():
        like = nets[k].params if k in nets else None
        opts[k] = AdamState.from_dict(d, like)
    return nets, opts, doc.get("extra", {})
