"""Dense float64 building blocks with hand-written backward passes.

Everything works on numpy arrays. Layers cache what their backward pass needs
during ``forward`` and accumulate parameter gradients into ``ParamBlock.grad``
during ``backward``; ``check_gradients`` is the finite-difference oracle that
certifies those backward passes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from drp.errors import DeterminismError, DimensionError

DTYPE = np.float64


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; the only entropy source used by the package."""
    return np.random.Generator(np.random.PCG64(seed))


@dataclass
class ParamBlock:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=DTYPE)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        elif self.grad.shape != self.value.shape:
            raise DimensionError(
                f"grad shape {self.grad.shape} != value shape {self.value.shape} for {self.name}"
            )

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size


def zero_grads(params: Sequence[ParamBlock]) -> None:
    for p in params:
        p.grad.fill(0.0)


def _shape_check(W: np.ndarray, b: np.ndarray, x: np.ndarray) -> None:
    if W.ndim != 2 or b.shape != (W.shape[0],) or x.shape[-1] != W.shape[1]:
        raise DimensionError(
            f"affine shapes do not conform: W{W.shape}, b{b.shape}, x{x.shape}"
        )


def affine(W: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``W @ x + b`` for a vector ``x`` or row-wise for a batch ``x`` of shape (B, n)."""
    W = np.asarray(W, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    x = np.asarray(x, dtype=DTYPE)
    _shape_check(W, b, x)
    return x @ W.T + b


def affine_backward(W: np.ndarray, x: np.ndarray, dy: np.ndarray):
    """Return ``(dW, db, dx)`` for ``y = affine(W, b, x)`` given upstream ``dy``."""
    if x.ndim == 1:
        return np.outer(dy, x), dy.copy(), W.T @ dy
    return dy.T @ x, dy.sum(axis=0), dy @ W


def sigmoid(x):
    """Logistic function evaluated without overflow for any finite input."""
    x = np.asarray(x, dtype=DTYPE)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid_backward(s, dy):
    return dy * s * (1.0 - s)


def relu(x):
    return np.maximum(x, 0.0)


class Dense:
    """Affine layer with an optional ReLU, parameters owned as ParamBlocks."""

    def __init__(self, name: str, n_in: int, n_out: int, rng: np.random.Generator,
                 activation: str | None = "relu", scale: float | None = None):
        if scale is None:
            # He-uniform before ReLU, Glorot-uniform otherwise
            scale = np.sqrt(6.0 / n_in) if activation == "relu" else np.sqrt(6.0 / (n_in + n_out))
        self.W = ParamBlock(f"{name}.W", rng.uniform(-scale, scale, size=(n_out, n_in)))
        self.b = ParamBlock(f"{name}.b", np.zeros(n_out))
        self.activation = activation
        self._x = None
        self._mask = None

    @property
    def params(self) -> list[ParamBlock]:
        return [self.W, self.b]

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        y = x @ self.W.value.T + self.b.value
        if self.activation == "relu":
            self._mask = y > 0.0
            y = np.where(self._mask, y, 0.0)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self.activation == "relu":
            dy = np.where(self._mask, dy, 0.0)
        self.W.grad += dy.T @ self._x
        self.b.grad += dy.sum(axis=0)
        return dy @ self.W.value


class Sequential:
    def __init__(self, layers: list[Dense]):
        self.layers = layers

    @property
    def params(self) -> list[ParamBlock]:
        return [p for layer in self.layers for p in layer.params]

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy


def mlp(name: str, widths: Sequence[int], rng: np.random.Generator,
        last_activation: str | None = "relu") -> Sequential:
    """Stack of Dense layers ``widths[0] -> widths[1] -> ...`` with ReLU between."""
    layers = []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        act = "relu" if i < len(widths) - 2 else last_activation
        layers.append(Dense(f"{name}.{i}", a, b, rng, activation=act))
    return Sequential(layers)


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    worst: str
    max_error: float
    tolerance: float
    passed: bool
    checked: int = 0
    kink_adjusted: int = 0

    def summary(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return (f"{flag} max_rel_err={self.max_error:.3e} (tol {self.tolerance:g}) "
                f"worst={self.worst} coords={self.checked} kink_adjusted={self.kink_adjusted}")


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))


def check_gradients(closure: Callable[[bool], float], params: Sequence[ParamBlock],
                    h: float = 1e-4, tolerance: float = 1e-5, n_samples: int = 64,
                    seed: int = 0, signature: Callable[[], bytes] | None = None,
                    min_step: float = 1e-7) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``closure(backward)`` must return the scalar loss for the current parameter
    values and, when ``backward`` is true, accumulate gradients into the blocks.
    Blocks with more than ``n_samples`` entries are subsampled: half of the
    picks come from coordinates with a nonzero analytic gradient so sparse
    blocks (embedding tables) are still exercised.

    ``signature`` optionally returns the piecewise-linear activation pattern of
    the last closure call (ReLU masks, clamp masks). When a +/-h stencil
    changes that pattern the loss is not differentiable inside the stencil, so
    the step is divided by 10 (down to ``min_step``) until it no longer does.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    zero_grads(params)
    loss_a = closure(True)
    analytic = [p.grad.copy() for p in params]
    zero_grads(params)
    loss_b = closure(True)
    if loss_a != loss_b or any(not np.array_equal(g, p.grad) for g, p in zip(analytic, params)):
        raise DeterminismError("closure returned different results for identical inputs")

    base_sig = signature() if signature is not None else None
    rng = make_rng(seed)
    errors: dict[str, float] = {}
    checked = 0
    adjusted = 0
    for p, g in zip(params, analytic):
        flat_v = p.value.reshape(-1)
        flat_g = g.reshape(-1)
        if p.size <= n_samples:
            coords = np.arange(p.size)
        else:
            nonzero = np.flatnonzero(flat_g)
            k = min(len(nonzero), n_samples // 2)
            picked = rng.choice(nonzero, size=k, replace=False) if k else np.empty(0, dtype=int)
            rest = np.setdiff1d(np.arange(p.size), picked)
            coords = np.concatenate([picked, rng.choice(rest, size=n_samples - k, replace=False)])
        worst = 0.0
        for c in coords:
            orig = flat_v[c]
            step = h
            while True:
                flat_v[c] = orig + step
                up = closure(False)
                sig_up = signature() if signature is not None else None
                flat_v[c] = orig - step
                down = closure(False)
                sig_down = signature() if signature is not None else None
                flat_v[c] = orig
                if sig_up == base_sig and sig_down == base_sig or step / 10.0 < min_step:
                    break
                step /= 10.0
            adjusted += step != h
            fd = (up - down) / (2.0 * step)
            worst = max(worst, relative_error(flat_g[c], fd))
        errors[p.name] = worst
        checked += len(coords)
    worst_name = max(errors, key=errors.get) if errors else ""
    max_err = errors[worst_name] if errors else 0.0
    return GradCheckReport(errors, worst_name, max_err, tolerance, max_err < tolerance, checked, adjusted)
