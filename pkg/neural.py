"""
Minimal neural-network substrate with hand-derived gradients.

Dense networks and a GRU cell, explicit forward/backward passes, plain
gradient descent and Adam updates, Polyak averaging, and a portable text
checkpoint format. Everything runs in float64.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

logger = logging.getLogger(__name__)

ACTIVATIONS = ("tanh", "relu", "identity")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class NetworkError(Exception):
    """Base error for network operations."""

    def __init__(self, message: str, original_error: Optional[Exception] = None):
        super().__init__(message)
        self.original_error = original_error


class ShapeMismatchError(NetworkError):
    pass


class StaleCacheError(NetworkError):
    """Backward called with a cache from another input or older parameters."""
    pass


class EmptySequenceError(NetworkError):
    pass


def _activate(z: np.ndarray, name: str) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _activation_grad(z: np.ndarray, a: np.ndarray, name: str) -> np.ndarray:
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return np.where(z > 0.0, 1.0, 0.0)
    return np.ones_like(z)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class ParameterModule:
    """Shared bookkeeping for anything owning a flat list of parameter arrays."""

    def __init__(self):
        self.version = 0

    def parameters(self) -> list[np.ndarray]:
        raise NotImplementedError

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def bump(self):
        self.version += 1

    def apply_gradients(self, grads: "GradientSet", optimizer_state, lr: float):
        update(self.parameters(), grads.params, optimizer_state, lr)
        self.bump()

    def load_parameters(self, values: list[np.ndarray]):
        params = self.parameters()
        _check_shapes(params, values)
        for p, v in zip(params, values):
            p[...] = v
        self.bump()


@dataclass
class GradientSet:
    """Gradients aligned with an owner's parameters() order, plus the input gradient."""
    params: list[np.ndarray]
    input: Optional[np.ndarray] = None


@dataclass
class DenseLayer:
    weight: np.ndarray  # (fan_out, fan_in)
    bias: np.ndarray  # (fan_out,)
    activation: str = "identity"

    @property
    def fan_in(self) -> int:
        return self.weight.shape[1]

    @property
    def fan_out(self) -> int:
        return self.weight.shape[0]


class DenseNet(ParameterModule):
    """Ordered stack of affine layers, each followed by an activation."""

    def __init__(self, layers: list[DenseLayer]):
        super().__init__()
        if not layers:
            raise ShapeMismatchError("DenseNet needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.fan_out != nxt.fan_in:
                raise ShapeMismatchError(
                    f"Layer dimensions incompatible: {prev.fan_out} -> {nxt.fan_in}"
                )
        for layer in layers:
            if layer.activation not in ACTIVATIONS:
                raise NetworkError(f"Unknown activation: {layer.activation}")
            if layer.bias.shape != (layer.fan_out,):
                raise ShapeMismatchError(
                    f"Bias shape {layer.bias.shape} does not match {layer.fan_out} outputs"
                )
        self.layers = layers

    @classmethod
    def build(
        cls,
        sizes: list[int],
        activations: list[str],
        seed: Optional[int] = None,
        rng: Optional[np.random.Generator] = None,
    ) -> "DenseNet":
        """Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases."""
        if len(activations) != len(sizes) - 1:
            raise ShapeMismatchError(
                f"{len(sizes) - 1} layers need {len(sizes) - 1} activations, "
                f"got {len(activations)}"
            )
        if rng is None:
            rng = np.random.default_rng(seed)
        layers = []
        for fan_in, fan_out, act in zip(sizes, sizes[1:], activations):
            layers.append(DenseLayer(
                weight=_uniform(rng, fan_in, (fan_out, fan_in)),
                bias=_uniform(rng, fan_in, (fan_out,)),
                activation=act,
            ))
        return cls(layers)

    @classmethod
    def zeros(cls, sizes: list[int], activations: list[str]) -> "DenseNet":
        net = cls.build(sizes, activations, seed=0)
        for p in net.parameters():
            p[...] = 0.0
        return net

    @property
    def input_dim(self) -> int:
        return self.layers[0].fan_in

    @property
    def output_dim(self) -> int:
        return self.layers[-1].fan_out

    @property
    def sizes(self) -> list[int]:
        return [self.input_dim] + [layer.fan_out for layer in self.layers]

    @property
    def activations(self) -> list[str]:
        return [layer.activation for layer in self.layers]

    def parameters(self) -> list[np.ndarray]:
        params = []
        for layer in self.layers:
            params.extend([layer.weight, layer.bias])
        return params

    def copy(self) -> "DenseNet":
        return DenseNet([
            DenseLayer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers
        ])

    def __call__(self, x: np.ndarray) -> np.ndarray:
        y, _ = forward(self, x)
        return y


@dataclass
class ForwardCache:
    owner: int
    version: int
    inputs: list[np.ndarray]  # input to each layer, batch-major
    pre: list[np.ndarray]  # pre-activation of each layer
    post: list[np.ndarray]  # post-activation of each layer
    squeeze: bool = False


def forward(net: DenseNet, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Affine + activation composition; returns the output and a cache for backward."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    a = x.reshape(1, -1) if squeeze else x
    if a.ndim != 2 or a.shape[1] != net.input_dim:
        raise ShapeMismatchError(
            f"Input dimension {x.shape} does not match network input {net.input_dim}"
        )
    inputs, pre, post = [], [], []
    for layer in net.layers:
        inputs.append(a)
        z = a @ layer.weight.T + layer.bias
        a = _activate(z, layer.activation)
        pre.append(z)
        post.append(a)
    cache = ForwardCache(id(net), net.version, inputs, pre, post, squeeze)
    return (a[0] if squeeze else a), cache


def backward(net: DenseNet, cache: ForwardCache, grad_output: np.ndarray) -> GradientSet:
    """Reverse-mode gradients of sum(grad_output * y) w.r.t. every parameter and the input."""
    if cache.owner != id(net) or cache.version != net.version:
        raise StaleCacheError("Forward cache does not belong to the current parameters")
    g = np.asarray(grad_output, dtype=np.float64)
    g = g.reshape(1, -1) if cache.squeeze or g.ndim == 1 else g
    if g.shape != cache.post[-1].shape:
        raise ShapeMismatchError(
            f"grad_output shape {g.shape} does not match output {cache.post[-1].shape}"
        )
    grads = [None] * (2 * len(net.layers))
    for i in reversed(range(len(net.layers))):
        layer = net.layers[i]
        dz = g * _activation_grad(cache.pre[i], cache.post[i], layer.activation)
        grads[2 * i] = dz.T @ cache.inputs[i]
        grads[2 * i + 1] = dz.sum(axis=0)
        g = dz @ layer.weight
    grad_input = g[0] if cache.squeeze else g
    return GradientSet(params=grads, input=grad_input)


class GRUCell(ParameterModule):
    """
    Standard GRU with update gate z, reset gate r and candidate state:

        z = sigmoid(W_z x + U_z h + b_z)
        r = sigmoid(W_r x + U_r h + b_r)
        c = tanh(W_h x + U_h (r * h) + b_h)
        h' = (1 - z) * h + z * c
    """

    PARAM_NAMES = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")

    def __init__(self, input_size: int, hidden_size: int, seed: Optional[int] = None,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        if rng is None:
            rng = np.random.default_rng(seed)
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.params = {}
        for gate in ("z", "r", "h"):
            self.params[f"W_{gate}"] = _uniform(rng, input_size, (hidden_size, input_size))
            self.params[f"U_{gate}"] = _uniform(rng, hidden_size, (hidden_size, hidden_size))
            self.params[f"b_{gate}"] = _uniform(rng, hidden_size, (hidden_size,))

    def parameters(self) -> list[np.ndarray]:
        return [self.params[name] for name in self.PARAM_NAMES]

    def copy(self) -> "GRUCell":
        clone = GRUCell(self.input_size, self.hidden_size, seed=0)
        clone.load_parameters(self.parameters())
        clone.version = 0
        return clone


@dataclass
class GRUCache:
    owner: int
    version: int
    xs: list[np.ndarray] = field(default_factory=list)
    hs: list[np.ndarray] = field(default_factory=list)  # h_0 .. h_T
    zs: list[np.ndarray] = field(default_factory=list)
    rs: list[np.ndarray] = field(default_factory=list)
    cs: list[np.ndarray] = field(default_factory=list)
    squeeze: bool = False


def gru_forward(
    cell: GRUCell, sequence: np.ndarray, h0: Optional[np.ndarray] = None
) -> tuple[np.ndarray, GRUCache]:
    """Run the cell over a (T, I) or (T, N, I) sequence; returns the final hidden state."""
    seq = np.asarray(sequence, dtype=np.float64)
    if seq.shape[0] == 0:
        raise EmptySequenceError("GRU sequence must contain at least one step")
    squeeze = seq.ndim == 2
    if squeeze:
        seq = seq[:, None, :]
    if seq.ndim != 3 or seq.shape[2] != cell.input_size:
        raise ShapeMismatchError(
            f"Sequence shape {np.asarray(sequence).shape} does not match input {cell.input_size}"
        )
    p = cell.params
    n = seq.shape[1]
    h = np.zeros((n, cell.hidden_size)) if h0 is None else np.array(h0, dtype=np.float64).reshape(n, -1)
    cache = GRUCache(id(cell), cell.version, squeeze=squeeze)
    cache.hs.append(h)
    for x in seq:
        z = _sigmoid(x @ p["W_z"].T + h @ p["U_z"].T + p["b_z"])
        r = _sigmoid(x @ p["W_r"].T + h @ p["U_r"].T + p["b_r"])
        c = np.tanh(x @ p["W_h"].T + (r * h) @ p["U_h"].T + p["b_h"])
        h = (1.0 - z) * h + z * c
        cache.xs.append(x)
        cache.zs.append(z)
        cache.rs.append(r)
        cache.cs.append(c)
        cache.hs.append(h)
    return (h[0] if squeeze else h), cache


def gru_backward(cell: GRUCell, cache: GRUCache, grad_h: np.ndarray) -> GradientSet:
    """Backprop-through-time from a gradient on the final hidden state."""
    if cache.owner != id(cell) or cache.version != cell.version:
        raise StaleCacheError("GRU cache does not belong to the current parameters")
    p = cell.params
    dh = np.asarray(grad_h, dtype=np.float64).reshape(cache.hs[-1].shape)
    g = {name: np.zeros_like(p[name]) for name in GRUCell.PARAM_NAMES}
    dxs = []
    for t in reversed(range(len(cache.xs))):
        x, h_prev = cache.xs[t], cache.hs[t]
        z, r, c = cache.zs[t], cache.rs[t], cache.cs[t]

        dc = dh * z
        dz = dh * (c - h_prev)
        dh_prev = dh * (1.0 - z)

        da_h = dc * (1.0 - c * c)
        g["W_h"] += da_h.T @ x
        g["U_h"] += da_h.T @ (r * h_prev)
        g["b_h"] += da_h.sum(axis=0)
        d_rh = da_h @ p["U_h"]
        dr = d_rh * h_prev
        dh_prev += d_rh * r

        da_z = dz * z * (1.0 - z)
        g["W_z"] += da_z.T @ x
        g["U_z"] += da_z.T @ h_prev
        g["b_z"] += da_z.sum(axis=0)
        dh_prev += da_z @ p["U_z"]

        da_r = dr * r * (1.0 - r)
        g["W_r"] += da_r.T @ x
        g["U_r"] += da_r.T @ h_prev
        g["b_r"] += da_r.sum(axis=0)
        dh_prev += da_r @ p["U_r"]

        dxs.append(da_h @ p["W_h"] + da_z @ p["W_z"] + da_r @ p["W_r"])
        dh = dh_prev

    dx = np.stack(dxs[::-1])
    if cache.squeeze:
        dx = dx[:, 0, :]
    return GradientSet(params=[g[name] for name in GRUCell.PARAM_NAMES], input=dx)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def for_params(cls, params: list[np.ndarray]) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])


def _check_shapes(params: list[np.ndarray], others: list[np.ndarray]):
    if len(params) != len(others):
        raise ShapeMismatchError(f"Expected {len(params)} arrays, got {len(others)}")
    for p, o in zip(params, others):
        if p.shape != np.shape(o):
            raise ShapeMismatchError(f"Shape mismatch: {p.shape} vs {np.shape(o)}")


def update(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    optimizer_state: Optional[AdamState],
    lr: float,
) -> list[np.ndarray]:
    """In-place descent step: plain gradient descent when optimizer_state is None, else Adam."""
    _check_shapes(params, grads)
    if optimizer_state is None:
        for p, g in zip(params, grads):
            p -= lr * g
        return params

    _check_shapes(params, optimizer_state.m)
    s = optimizer_state
    s.t += 1
    correction1 = 1.0 - s.beta1 ** s.t
    correction2 = 1.0 - s.beta2 ** s.t
    for p, g, m, v in zip(params, grads, s.m, s.v):
        m *= s.beta1
        m += (1.0 - s.beta1) * g
        v *= s.beta2
        v += (1.0 - s.beta2) * g * g
        p -= lr * (m / correction1) / (np.sqrt(v / correction2) + s.eps)
    return params


ParamsLike = Union[ParameterModule, list]


def soft_update(target: ParamsLike, online: ParamsLike, rho: float) -> ParamsLike:
    """Polyak average in place: target <- rho * target + (1 - rho) * online."""
    if not 0.0 <= rho <= 1.0:
        raise NetworkError(f"rho must lie in [0, 1], got {rho}")
    target_params = target.parameters() if isinstance(target, ParameterModule) else target
    online_params = online.parameters() if isinstance(online, ParameterModule) else online
    _check_shapes(target_params, online_params)
    for t, o in zip(target_params, online_params):
        t *= rho
        t += (1.0 - rho) * o
    if isinstance(target, ParameterModule):
        target.bump()
    return target


def count_parameters(sizes: list[int]) -> int:
    """Analytic parameter count of a dense stack: sum of fan_in * fan_out + fan_out."""
    return int(sum(a * b + b for a, b in zip(sizes, sizes[1:])))


# Text checkpoints: a header line with dimensions, then one line per
# parameter array holding its row-major values in shortest round-trip decimal.

def _format_values(arr: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(arr).ravel())


def _parse_values(line: str, shape) -> np.ndarray:
    values = np.array([float(tok) for tok in line.split()], dtype=np.float64)
    expected = int(np.prod(shape)) if shape else 1
    if values.size != expected:
        raise ShapeMismatchError(f"Checkpoint line has {values.size} values, expected {expected}")
    return values.reshape(shape)


def dump_sections(sections: list) -> list[str]:
    """Serialize DenseNet / GRUCell / (name, values) sections to checkpoint lines."""
    lines = []
    for section in sections:
        if isinstance(section, DenseNet):
            lines.append("dense " + " ".join(str(s) for s in section.sizes))
            lines.append("activations " + " ".join(section.activations))
            lines.extend(_format_values(p) for p in section.parameters())
        elif isinstance(section, GRUCell):
            lines.append(f"gru {section.input_size} {section.hidden_size}")
            lines.extend(_format_values(p) for p in section.parameters())
        else:
            name, values = section
            lines.append(f"meta {name} {_format_values(np.atleast_1d(values))}".rstrip())
    return lines


def parse_sections(lines: list[str]) -> list:
    sections = []
    i = 0
    lines = [line.rstrip("\n") for line in lines if line.strip()]
    while i < len(lines):
        tokens = lines[i].split()
        kind = tokens[0]
        if kind == "dense":
            sizes = [int(t) for t in tokens[1:]]
            activations = lines[i + 1].split()[1:]
            net = DenseNet.zeros(sizes, activations)
            values = [
                _parse_values(lines[i + 2 + j], p.shape)
                for j, p in enumerate(net.parameters())
            ]
            net.load_parameters(values)
            net.version = 0
            sections.append(net)
            i += 2 + len(values)
        elif kind == "gru":
            cell = GRUCell(int(tokens[1]), int(tokens[2]), seed=0)
            values = [
                _parse_values(lines[i + 1 + j], p.shape)
                for j, p in enumerate(cell.parameters())
            ]
            cell.load_parameters(values)
            cell.version = 0
            sections.append(cell)
            i += 1 + len(values)
        elif kind == "meta":
            sections.append((tokens[1], np.array([float(t) for t in tokens[2:]])))
            i += 1
        else:
            raise NetworkError(f"Unknown checkpoint section '{kind}'")
    return sections


def save_checkpoint(path: str, sections: list):
    with open(path, "w") as f:
        f.write("\n".join(dump_sections(sections)) + "\n")


def load_checkpoint(path: str) -> list:
    try:
        with open(path, "r") as f:
            return parse_sections(f.readlines())
    except (IndexError, ValueError) as e:
        raise NetworkError(f"Malformed checkpoint {path}: {e}", original_error=e) from e
