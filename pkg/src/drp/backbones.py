"""Relevance and preference backbones.

Each backbone maps the encoded triple to a hidden vector of width ``H`` and a
scalar effect ``sigmoid(w . hidden + b)``. ``backward`` takes upstream
gradients for either output (``None`` when unused) and returns ``(dq, dv, du)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from drp.errors import ConfigurationError
from drp.numerics import Dense, ParamBlock, make_rng, mlp, sigmoid

RELEVANCE_KINDS = ("DSSM", "QEM", "HEM")
PREFERENCE_KINDS = ("MLP", "DCN")


@dataclass(frozen=True)
class BackboneConfig:
    relevance: str = "DSSM"
    preference: str = "MLP"
    hidden: int = 32
    units: tuple[int, ...] = (64, 32, 1)

    def validate(self) -> None:
        if self.relevance not in RELEVANCE_KINDS:
            raise ConfigurationError(f"unknown relevance model {self.relevance!r}; expected one of {RELEVANCE_KINDS}")
        if self.preference not in PREFERENCE_KINDS:
            raise ConfigurationError(f"unknown preference model {self.preference!r}; expected one of {PREFERENCE_KINDS}")
        units = tuple(self.units)
        if len(units) < 2 or units[-1] != 1 or units[-2] != self.hidden:
            raise ConfigurationError(f"prediction units {units} must end with ({self.hidden}, 1)")


@dataclass
class BackboneOutput:
    effect: np.ndarray
    hidden: np.ndarray


class _Backbone:
    name = "backbone"

    def __init__(self, hidden: int, rng: np.random.Generator):
        self.decoder = Dense(f"{self.name}.decoder", hidden, 1, rng, activation=None)
        self._effect = None

    def _decode(self, hidden: np.ndarray) -> BackboneOutput:
        self._effect = sigmoid(self.decoder.forward(hidden)[:, 0])
        return BackboneOutput(self._effect, hidden)

    def _decode_backward(self, d_effect, d_hidden):
        dh = np.zeros_like(self.decoder._x) if d_hidden is None else d_hidden.copy()
        if d_effect is not None:
            s = self._effect
            dz = (d_effect * s * (1.0 - s))[:, None]
            dh += self.decoder.backward(dz)
        return dh

    @property
    def params(self) -> list[ParamBlock]:
        raise NotImplementedError


class DSSM(_Backbone):
    """Two towers; the hidden vector is the elementwise product of tower outputs."""

    name = "rm"

    def __init__(self, dim: int, hidden: int, units, rng):
        widths = (dim, *units[:-1])
        self.tower_q = mlp("rm.tower_q", widths, rng)
        self.tower_v = mlp("rm.tower_v", widths, rng)
        super().__init__(hidden, rng)

    @property
    def params(self):
        return self.tower_q.params + self.tower_v.params + self.decoder.params

    def forward(self, q, v, u) -> BackboneOutput:
        self._tq = self.tower_q.forward(q)
        self._tv = self.tower_v.forward(v)
        return self._decode(self._tq * self._tv)

    def backward(self, d_effect=None, d_hidden=None):
        dh = self._decode_backward(d_effect, d_hidden)
        dq = self.tower_q.backward(dh * self._tv)
        dv = self.tower_v.backward(dh * self._tq)
        return dq, dv, None


class QEM(_Backbone):
    """Single tower over ``concat(q, v)``."""

    name = "rm"

    def __init__(self, dim: int, hidden: int, units, rng):
        self.dim = dim
        self.tower = mlp("rm.tower", (2 * dim, *units[:-1]), rng)
        super().__init__(hidden, rng)

    @property
    def params(self):
        return self.tower.params + self.decoder.params

    def forward(self, q, v, u) -> BackboneOutput:
        return self._decode(self.tower.forward(np.concatenate([q, v], axis=1)))

    def backward(self, d_effect=None, d_hidden=None):
        dx = self.tower.backward(self._decode_backward(d_effect, d_hidden))
        return dx[:, : self.dim], dx[:, self.dim :], None


class HEM(QEM):
    """QEM tower on ``concat(m, v)`` with ``m = s q + (1 - s) u``, ``s = sigmoid(mix)``."""

    def __init__(self, dim: int, hidden: int, units, rng):
        super().__init__(dim, hidden, units, rng)
        self.mix = ParamBlock("rm.mix", np.zeros(1))

    @property
    def params(self):
        return [self.mix] + super().params

    def forward(self, q, v, u) -> BackboneOutput:
        s = float(sigmoid(self.mix.value)[0])
        self._s, self._q, self._u = s, q, u
        return super().forward(s * q + (1.0 - s) * u, v, None)

    def backward(self, d_effect=None, d_hidden=None):
        dm, dv, _ = super().backward(d_effect, d_hidden)
        s = self._s
        self.mix.grad[0] += s * (1.0 - s) * np.sum(dm * (self._q - self._u))
        return s * dm, dv, (1.0 - s) * dm


class MLPPreference(_Backbone):
    name = "pm"

    def __init__(self, dim: int, hidden: int, units, rng):
        self.dim = dim
        self.tower = mlp("pm.tower", (3 * dim, *units[:-1]), rng)
        super().__init__(hidden, rng)

    @property
    def params(self):
        return self.tower.params + self.decoder.params

    def forward(self, q, v, u) -> BackboneOutput:
        return self._decode(self.tower.forward(np.concatenate([q, v, u], axis=1)))

    def backward(self, d_effect=None, d_hidden=None):
        dx = self.tower.backward(self._decode_backward(d_effect, d_hidden))
        d = self.dim
        return dx[:, :d], dx[:, d : 2 * d], dx[:, 2 * d :]


class CrossLayer:
    """``x_next = x0 * (x . w) + b + x``."""

    def __init__(self, name: str, width: int, rng: np.random.Generator):
        lim = np.sqrt(6.0 / (width + 1))
        self.w = ParamBlock(f"{name}.w", rng.uniform(-lim, lim, size=width))
        self.b = ParamBlock(f"{name}.b", np.zeros(width))

    @property
    def params(self):
        return [self.w, self.b]

    def forward(self, x0, x):
        self._x0, self._x = x0, x
        self._s = x @ self.w.value
        return x0 * self._s[:, None] + self.b.value + x

    def backward(self, dy):
        """Return ``(dx0, dx)``."""
        ds = np.sum(dy * self._x0, axis=1)
        self.w.grad += self._x.T @ ds
        self.b.grad += dy.sum(axis=0)
        return dy * self._s[:, None], dy + ds[:, None] * self.w.value


class DCN(_Backbone):
    """Cross network in parallel with a deep branch, projected to ``H``."""

    name = "pm"
    n_cross = 2

    def __init__(self, dim: int, hidden: int, units, rng):
        self.dim = dim
        width = 3 * dim
        self.cross = [CrossLayer(f"pm.cross.{k}", width, rng) for k in range(self.n_cross)]
        self.deep = mlp("pm.deep", (width, *units[:-1]), rng)
        self.proj = Dense("pm.proj", width + hidden, hidden, rng, activation=None)
        self.width = width
        super().__init__(hidden, rng)

    @property
    def params(self):
        ps = [p for c in self.cross for p in c.params]
        return ps + self.deep.params + self.proj.params + self.decoder.params

    def forward(self, q, v, u) -> BackboneOutput:
        x0 = np.concatenate([q, v, u], axis=1)
        x = x0
        for layer in self.cross:
            x = layer.forward(x0, x)
        deep = self.deep.forward(x0)
        return self._decode(self.proj.forward(np.concatenate([x, deep], axis=1)))

    def backward(self, d_effect=None, d_hidden=None):
        dz = self.proj.backward(self._decode_backward(d_effect, d_hidden))
        dx, ddeep = dz[:, : self.width], dz[:, self.width :]
        dx0 = self.deep.backward(ddeep)
        for layer in reversed(self.cross):
            dx0_part, dx = layer.backward(dx)
            dx0 = dx0 + dx0_part
        dx0 = dx0 + dx  # first cross layer's residual input is x0 itself
        d = self.dim
        return dx0[:, :d], dx0[:, d : 2 * d], dx0[:, 2 * d :]


_RELEVANCE = {"DSSM": DSSM, "QEM": QEM, "HEM": HEM}
_PREFERENCE = {"MLP": MLPPreference, "DCN": DCN}


def build_relevance(kind: str, dim: int, cfg: BackboneConfig, seed: int):
    if kind not in _RELEVANCE:
        raise ConfigurationError(f"unknown relevance model {kind!r}")
    return _RELEVANCE[kind](dim, cfg.hidden, tuple(cfg.units), make_rng(seed))


def build_preference(kind: str, dim: int, cfg: BackboneConfig, seed: int):
    if kind not in _PREFERENCE:
        raise ConfigurationError(f"unknown preference model {kind!r}")
    return _PREFERENCE[kind](dim, cfg.hidden, tuple(cfg.units), make_rng(seed))


def relevance_forward(model, q, v, u) -> BackboneOutput:
    """Batch or single-vector relevance prediction; ``u`` only matters for HEM."""
    single = np.ndim(q) == 1
    out = model.forward(*(np.atleast_2d(a) for a in (q, v, u)))
    return BackboneOutput(out.effect[0], out.hidden[0]) if single else out


def preference_forward(model, q, v, u) -> BackboneOutput:
    single = np.ndim(q) == 1
    out = model.forward(*(np.atleast_2d(a) for a in (q, v, u)))
    return BackboneOutput(out.effect[0], out.hidden[0]) if single else out
