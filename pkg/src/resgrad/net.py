"""Dense networks with exact input derivatives and parameter gradients.

The scalar-output MLP used by both benchmark stages lives here, together
with the derivative machinery every loss in the package is built from:
forward evaluation, first and pure second input derivatives (forward-mode
tangents pushed through a reverse-mode gradient), and gradients of scalar
losses with respect to all parameters.  Everything is float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import jax
import jax.numpy as jnp
import numpy as np

ACTIVATIONS = {
    "tanh": jnp.tanh,
    "silu": jax.nn.silu,
}

CHECKPOINT_MAGIC = b"RGNETCKP"
CHECKPOINT_VERSION = 1
_ACTIVATION_TAGS = {"tanh": 0, "silu": 1}
_TAG_ACTIVATIONS = {v: k for k, v in _ACTIVATION_TAGS.items()}


class NonFiniteLossError(RuntimeError):
    """A loss term or its parameter gradient stopped being finite."""

    def __init__(self, term: str, value: float):
        self.term = term
        self.value = value
        super().__init__(f"non-finite loss term {term!r} (value {value!r})")


@dataclass(frozen=True)
class NetworkParams:
    """Weights/biases of a dense scalar-output network.

    ``weights[i]`` has shape (fan_out, fan_in) and ``biases[i]`` shape
    (fan_out,), chaining ``layer_sizes`` from the input dimension down to the
    single output.
    """

    layer_sizes: tuple[int, ...]
    weights: tuple[jnp.ndarray, ...]
    biases: tuple[jnp.ndarray, ...]
    activation: str

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


def _params_flatten(net: NetworkParams):
    return list(net.weights) + list(net.biases), (net.layer_sizes, net.activation)


def _params_unflatten(aux, children) -> NetworkParams:
    layer_sizes, activation = aux
    n = len(layer_sizes) - 1
    return NetworkParams(layer_sizes, tuple(children[:n]), tuple(children[n:]), activation)


jax.tree_util.register_pytree_node(NetworkParams, _params_flatten, _params_unflatten)


@dataclass(frozen=True)
class DerivativeBundle:
    """Value, input gradient, and requested pure second input derivatives."""

    value: float
    grad: np.ndarray
    second: dict[int, float]


def init_mlp(layer_sizes: Sequence[int], activation: str, seed: int) -> NetworkParams:
    """Deterministic fan-in-scaled uniform initialization, zero biases."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 3:
        raise ValueError("need at least one hidden layer: got %r" % (sizes,))
    if sizes[-1] != 1:
        raise ValueError("output dimension must be 1, got %d" % sizes[-1])
    if any(s <= 0 for s in sizes):
        raise ValueError("layer sizes must be positive: %r" % (sizes,))
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        # Uniform on +-sqrt(3/fan_in): unit-variance-preserving for centered inputs.
        bound = np.sqrt(3.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(np.float64)
        weights.append(jnp.asarray(w))
        biases.append(jnp.zeros(fan_out, dtype=jnp.float64))
    return NetworkParams(sizes, tuple(weights), tuple(biases), activation)


def apply(net: NetworkParams, x: jnp.ndarray) -> jnp.ndarray:
    """Forward pass for a single input vector; returns a scalar."""
    act = ACTIVATIONS[net.activation]
    h = x
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        h = act(w @ h + b)
    w, b = net.weights[-1], net.biases[-1]
    return (w @ h + b)[0]


def evaluate(net: NetworkParams, x) -> float:
    x = _check_input(net, x)
    return float(apply(net, x))


def evaluate_batch(net: NetworkParams, xs) -> np.ndarray:
    xs = jnp.atleast_2d(jnp.asarray(xs, dtype=jnp.float64))
    if xs.shape[1] != net.input_dim:
        raise ValueError(f"expected input dim {net.input_dim}, got {xs.shape[1]}")
    return np.asarray(jax.vmap(lambda p: apply(net, p))(xs))


def value_grad_seconds(
    f: Callable[[jnp.ndarray], jnp.ndarray], x: jnp.ndarray, second_dirs: Iterable[int]
):
    """Value, gradient, and pure second derivatives of a scalar function.

    Second derivatives come from forward-mode tangents pushed through the
    reverse-mode gradient; the gradient computation is linearized once and
    shared across the requested directions.
    """
    value = f(x)
    grad, lin = jax.linearize(jax.grad(f), x)
    seconds = {}
    for i in second_dirs:
        e = jnp.zeros(x.shape, dtype=x.dtype).at[i].set(1.0)
        seconds[i] = lin(e)[i]
    return value, grad, seconds


def input_derivatives(
    net: NetworkParams, x, second_dirs: Iterable[int] = ()
) -> DerivativeBundle:
    """Exact value / input gradient / pure second derivatives at one point."""
    x = _check_input(net, x)
    dirs = tuple(int(i) for i in second_dirs)
    for i in dirs:
        if not 0 <= i < net.input_dim:
            raise ValueError(f"second-derivative index {i} out of range for dim {net.input_dim}")
    value, grad, seconds = value_grad_seconds(lambda p: apply(net, p), x, dirs)
    return DerivativeBundle(
        value=float(value),
        grad=np.asarray(grad),
        second={i: float(v) for i, v in seconds.items()},
    )


def laplacian_fn(f: Callable[[jnp.ndarray], jnp.ndarray], dims: int):
    """Sum of pure second derivatives of ``f`` over the first ``dims`` inputs."""
    grad_f = jax.grad(f)

    def lap(x):
        _, lin = jax.linearize(grad_f, x)
        total = 0.0
        for i in range(dims):
            e = jnp.zeros(x.shape, dtype=x.dtype).at[i].set(1.0)
            total = total + lin(e)[i]
        return total

    return lap


def parameter_gradient(
    net: NetworkParams,
    loss_terms: Mapping[str, Callable[[NetworkParams], jnp.ndarray]]
    | Callable[[NetworkParams], jnp.ndarray],
) -> tuple[float, np.ndarray]:
    """Value and flat parameter gradient of a scalar loss.

    ``loss_terms`` is either a single callable or a name->callable mapping
    whose values are summed; on a non-finite total or gradient the term
    responsible is identified in the raised error.  Accumulation order is
    the mapping's iteration order, so results are deterministic.
    """
    if callable(loss_terms):
        terms: Mapping[str, Callable] = {"loss": loss_terms}
    else:
        terms = loss_terms

    def total_loss(p: NetworkParams):
        acc = 0.0
        for fn in terms.values():
            acc = acc + fn(p)
        return acc

    value, grads = jax.value_and_grad(total_loss)(net)
    flat = flatten_params(grads)
    if not (np.isfinite(value) and np.all(np.isfinite(flat))):
        for name, fn in terms.items():
            v = float(fn(net))
            if not np.isfinite(v):
                raise NonFiniteLossError(name, v)
            g = flatten_params(jax.grad(lambda p: fn(p))(net))
            if not np.all(np.isfinite(g)):
                raise NonFiniteLossError(name + " (gradient)", v)
        raise NonFiniteLossError("total", float(value))
    return float(value), flat


def flatten_params(net: NetworkParams) -> np.ndarray:
    """Flat float64 vector: per layer, W row-major then b."""
    chunks = []
    for w, b in zip(net.weights, net.biases):
        chunks.append(np.asarray(w, dtype=np.float64).ravel())
        chunks.append(np.asarray(b, dtype=np.float64).ravel())
    return np.concatenate(chunks)


def unflatten_params(net: NetworkParams, flat: np.ndarray) -> NetworkParams:
    flat = np.asarray(flat, dtype=np.float64)
    if flat.size != net.n_params:
        raise ValueError(f"expected {net.n_params} parameters, got {flat.size}")
    weights = []
    biases = []
    pos = 0
    for w, b in zip(net.weights, net.biases):
        weights.append(jnp.asarray(flat[pos : pos + w.size].reshape(w.shape)))
        pos += w.size
        biases.append(jnp.asarray(flat[pos : pos + b.size]))
        pos += b.size
    return NetworkParams(net.layer_sizes, tuple(weights), tuple(biases), net.activation)


def save_checkpoint(net: NetworkParams, path) -> None:
    """Little-endian binary checkpoint; layout documented in the README."""
    flat = flatten_params(net)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<BB", CHECKPOINT_VERSION, _ACTIVATION_TAGS[net.activation]))
        fh.write(struct.pack("<H", len(net.layer_sizes)))
        fh.write(struct.pack(f"<{len(net.layer_sizes)}I", *net.layer_sizes))
        fh.write(struct.pack("<Q", flat.size))
        fh.write(flat.astype("<f8").tobytes())


def load_checkpoint(path) -> NetworkParams:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        version, act_tag = struct.unpack("<BB", fh.read(2))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (n_sizes,) = struct.unpack("<H", fh.read(2))
        sizes = struct.unpack(f"<{n_sizes}I", fh.read(4 * n_sizes))
        (n_params,) = struct.unpack("<Q", fh.read(8))
        flat = np.frombuffer(fh.read(8 * n_params), dtype="<f8")
    template = _empty_like(sizes, _TAG_ACTIVATIONS[act_tag])
    if flat.size != template.n_params:
        raise ValueError("checkpoint parameter count does not match header")
    return unflatten_params(template, flat)


def _empty_like(sizes: Sequence[int], activation: str) -> NetworkParams:
    sizes = tuple(int(s) for s in sizes)
    weights = tuple(jnp.zeros((b, a)) for a, b in zip(sizes[:-1], sizes[1:]))
    biases = tuple(jnp.zeros(b) for b in sizes[1:])
    return NetworkParams(sizes, weights, biases, activation)


def _check_input(net: NetworkParams, x) -> jnp.ndarray:
    x = jnp.asarray(x, dtype=jnp.float64)
    if x.shape != (net.input_dim,):
        raise ValueError(f"expected input shape ({net.input_dim},), got {x.shape}")
    return x
