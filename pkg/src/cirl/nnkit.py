"""Minimal dense-network toolkit.

Flat-parameter MLPs with hand-rolled reverse-mode gradients, a bias-corrected
Adam optimizer, a central-finite-difference gradient checker, and a small
binary checkpoint container. Everything is float64 and deterministic given
the RNG stream; there is no general autodiff, only the fixed graphs the rest
of the package needs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np


class ShapeError(ValueError):
    """Input shape inconsistent with the network layout."""


class NumericalError(RuntimeError):
    """Non-finite value where a finite one is required; aborts the run."""


ACTIVATIONS = ("relu", "tanh")


def param_count(layer_sizes: tuple[int, ...]) -> int:
    return sum(n_in * n_out + n_out for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]))


def param_layout(layer_sizes: tuple[int, ...]) -> list[tuple[slice, slice, tuple[int, int]]]:
    """Per layer: (weight slice, bias slice, (n_in, n_out)) into the flat vector."""
    layout = []
    offset = 0
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        w = slice(offset, offset + n_in * n_out)
        offset += n_in * n_out
        b = slice(offset, offset + n_out)
        offset += n_out
        layout.append((w, b, (n_in, n_out)))
    return layout


@dataclass
class DenseNet:
    """MLP over a flat float64 parameter vector.

    Hidden layers use `activation`; the output layer is linear. Two nets with
    equal layer_sizes, activation, and params are bit-identical functions.
    """

    layer_sizes: tuple[int, ...]
    activation: str
    params: np.ndarray
    layout: list[tuple[slice, slice, tuple[int, int]]] = field(repr=False, default=None)

    def __post_init__(self):
        self.layer_sizes = tuple(int(n) for n in self.layer_sizes)
        if len(self.layer_sizes) < 2 or any(n <= 0 for n in self.layer_sizes):
            raise ShapeError(f"need >=2 positive layer sizes, got {self.layer_sizes}")
        if self.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}")
        if self.layout is None:
            self.layout = param_layout(self.layer_sizes)
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (param_count(self.layer_sizes),):
            raise ShapeError(
                f"params length {self.params.shape} != {param_count(self.layer_sizes)} "
                f"required by layers {self.layer_sizes}"
            )

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    def with_params(self, params: np.ndarray) -> "DenseNet":
        return replace(self, params=np.asarray(params, dtype=np.float64))


def net_init(
    layer_sizes: tuple[int, ...], activation: str, rng: np.random.Generator
) -> DenseNet:
    """Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases."""
    layer_sizes = tuple(int(n) for n in layer_sizes)
    params = np.zeros(param_count(layer_sizes))
    for w, b, (n_in, n_out) in param_layout(layer_sizes):
        bound = np.sqrt(6.0 / (n_in + n_out))
        params[w] = rng.uniform(-bound, bound, size=n_in * n_out)
        params[b] = 0.0
    return DenseNet(layer_sizes, activation, params)


def _as_batch(x: np.ndarray, n_in: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
        squeeze = True
    elif x.ndim == 2:
        squeeze = False
    else:
        raise ShapeError(f"input must be 1-D or 2-D, got shape {x.shape}")
    if x.shape[1] != n_in:
        raise ShapeError(f"input width {x.shape[1]} != first layer size {n_in}")
    return x, squeeze


def forward(net: DenseNet, x: np.ndarray) -> np.ndarray:
    return forward_cached(net, x)[0]


def forward_cached(net: DenseNet, x: np.ndarray) -> tuple[np.ndarray, list]:
    """Forward pass keeping per-layer inputs for the backward pass."""
    h, squeeze = _as_batch(x, net.n_inputs)
    n_layers = len(net.layout)
    cache = []
    for i, (w, b, shape) in enumerate(net.layout):
        W = net.params[w].reshape(shape)
        z = h @ W + net.params[b]
        cache.append((h, z))
        if i < n_layers - 1:
            h = np.maximum(z, 0.0) if net.activation == "relu" else np.tanh(z)
        else:
            h = z
    return (h[0] if squeeze else h), cache


def backward_from_cache(
    net: DenseNet, cache: list, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Reverse pass; returns (param gradient, input gradient).

    grad_out has the output's shape; the result is the gradient of
    sum(output * grad_out) with respect to params and inputs.
    """
    g = np.asarray(grad_out, dtype=np.float64)
    squeeze = g.ndim == 1
    if squeeze:
        g = g[None, :]
    if g.shape != cache[-1][1].shape:
        raise ShapeError(f"grad_out shape {g.shape} != output shape {cache[-1][1].shape}")
    pgrad = np.zeros_like(net.params)
    n_layers = len(net.layout)
    for i in range(n_layers - 1, -1, -1):
        w, b, shape = net.layout[i]
        h_in, z = cache[i]
        if i < n_layers - 1:
            if net.activation == "relu":
                g = g * (z > 0.0)
            else:
                g = g * (1.0 - np.tanh(z) ** 2)
        pgrad[w] = (h_in.T @ g).ravel()
        pgrad[b] = g.sum(axis=0)
        W = net.params[w].reshape(shape)
        g = g @ W.T
    return pgrad, (g[0] if squeeze else g)


def backward(
    net: DenseNet, x: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of sum(forward(net, x) * grad_out) w.r.t. (params, x)."""
    _, cache = forward_cached(net, x)
    return backward_from_cache(net, cache, grad_out)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    step_count: int
    first_moment: np.ndarray
    second_moment: np.ndarray
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_init(n_params: int, learning_rate: float, beta1: float = 0.9,
              beta2: float = 0.999, epsilon: float = 1e-8) -> AdamState:
    return AdamState(0, np.zeros(n_params), np.zeros(n_params),
                     learning_rate, beta1, beta2, epsilon)


def adam_update(
    state: AdamState, params: np.ndarray, grads: np.ndarray
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam step. Rejects non-finite gradients."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.shape or grads.shape != state.first_moment.shape:
        raise ShapeError(
            f"params {params.shape}, grads {grads.shape}, moments {state.first_moment.shape} disagree"
        )
    if not np.all(np.isfinite(grads)):
        bad = int(np.flatnonzero(~np.isfinite(grads))[0])
        raise NumericalError(
            f"non-finite gradient at index {bad} "
            f"(nan={int(np.isnan(grads).sum())}, inf={int(np.isinf(grads).sum())})"
        )
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads**2
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new_params, replace(state, step_count=t, first_moment=m, second_moment=v)


# ---------------------------------------------------------------------------
# Finite-difference gradient checking


def grad_check(
    loss_fn,
    params: np.ndarray,
    tolerance: float = 1e-4,
    step: float = 1e-6,
    max_checks: int | None = None,
    rng: np.random.Generator | None = None,
) -> dict:
    """Compare analytic gradients to central finite differences.

    loss_fn(params) must deterministically return (loss, grad). Every
    coordinate is checked unless max_checks caps the sweep (then a seeded
    uniform subset is used). Relative error per coordinate is
    |analytic - fd| / max(|analytic|, |fd|, 1e-5); the floor sits above the
    central-difference roundoff scale (~1e-10 for O(1) losses at the default
    step), so near-zero coordinates are compared in absolute terms.
    """
    params = np.asarray(params, dtype=np.float64)
    _, analytic = loss_fn(params)
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != params.shape:
        raise ShapeError(f"grad shape {analytic.shape} != params shape {params.shape}")
    idx = np.arange(params.size)
    if max_checks is not None and params.size > max_checks:
        rng = np.random.default_rng(0) if rng is None else rng
        idx = np.sort(rng.choice(params.size, size=max_checks, replace=False))
    max_rel_err = 0.0
    worst = -1
    for i in idx:
        p_hi = params.copy()
        p_hi[i] += step
        p_lo = params.copy()
        p_lo[i] -= step
        fd = (loss_fn(p_hi)[0] - loss_fn(p_lo)[0]) / (2.0 * step)
        denom = max(abs(analytic[i]), abs(fd), 1e-5)
        rel = abs(analytic[i] - fd) / denom
        if rel > max_rel_err:
            max_rel_err = rel
            worst = int(i)
    return {
        "max_rel_err": float(max_rel_err),
        "pass": bool(max_rel_err < tolerance),
        "n_checked": int(idx.size),
        "worst_index": worst,
        "tolerance": float(tolerance),
    }


# ---------------------------------------------------------------------------
# Checkpoints
#
# Layout: magic "CIRL1" | uint32 version | uint32 manifest length |
# manifest JSON {name: [offset, length]} (offsets in float64 elements,
# relative to the data section) | little-endian float64 data.

CHECKPOINT_MAGIC = b"CIRL1"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    manifest = {}
    chunks = []
    offset = 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8").ravel()
        manifest[name] = [offset, int(a.size)]
        offset += a.size
        chunks.append(a.tobytes())
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(np.array(CHECKPOINT_VERSION, dtype="<u4").tobytes())
        f.write(np.array(len(blob), dtype="<u4").tobytes())
        f.write(blob)
        for c in chunks:
            f.write(c)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        version = int(np.frombuffer(f.read(4), dtype="<u4")[0])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        blob_len = int(np.frombuffer(f.read(4), dtype="<u4")[0])
        manifest = json.loads(f.read(blob_len).decode("utf-8"))
        data = np.frombuffer(f.read(), dtype="<f8")
    out = {}
    for name, (offset, length) in manifest.items():
        out[name] = np.array(data[offset : offset + length], dtype=np.float64)
    return out
