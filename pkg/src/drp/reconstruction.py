"""Preference editing in an orthonormal low-rank subspace and adaptive score fusion.

The free functions are the numeric contracts and accept scalars or batches.
``EditLayer``, ``PreferenceDecoder`` and ``FusionParams`` own trainable blocks
and provide the matching backward passes used by the full model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from drp.errors import DegeneracyError, DimensionError, DomainError
from drp.numerics import Dense, ParamBlock, Sequential, sigmoid

CLAMP_LO = 1e-7
CLAMP_HI = 1.0 - 1e-7


# --- projection -------------------------------------------------------------

def retract(O: np.ndarray) -> np.ndarray:
    """Row-orthonormal factor of ``O`` (D x H) via QR of ``O.T``, positive-diagonal convention."""
    O = np.asarray(O, dtype=np.float64)
    if O.ndim != 2 or O.shape[0] > O.shape[1]:
        raise DimensionError(f"projection must be D x H with D <= H, got {O.shape}")
    if not np.all(np.isfinite(O)):
        raise DegeneracyError("projection contains non-finite entries")
    Q, R = np.linalg.qr(O.T)
    diag = np.diag(R)
    if np.min(np.abs(diag)) < 1e-12:
        raise DegeneracyError("projection is rank deficient")
    return np.ascontiguousarray((Q * np.sign(diag)).T)


def orthonormality_defect(O: np.ndarray) -> float:
    """Frobenius norm of ``O O^T - I``."""
    return float(np.linalg.norm(O @ O.T - np.eye(O.shape[0])))


def random_projection(d: int, h: int, rng: np.random.Generator) -> np.ndarray:
    return retract(rng.standard_normal((d, h)))


# --- numeric contracts ------------------------------------------------------

def edit_preference(e_p, e_r, O) -> np.ndarray:
    """``O^T (O e_p - O e_r)``; vectors or (B, H) batches."""
    e_p = np.asarray(e_p, dtype=np.float64)
    e_r = np.asarray(e_r, dtype=np.float64)
    O = np.asarray(O, dtype=np.float64)
    if e_p.shape != e_r.shape or e_p.shape[-1] != O.shape[1]:
        raise DimensionError(f"edit shapes do not conform: e_p{e_p.shape}, e_r{e_r.shape}, O{O.shape}")
    return ((e_p - e_r) @ O.T) @ O


def decode_preference(e_pc, W_p, b_p):
    """``sigmoid(W_p . e_pc + b_p)``."""
    z = np.asarray(e_pc, dtype=np.float64) @ np.asarray(W_p, dtype=np.float64).reshape(-1) + np.asarray(b_p).reshape(-1)[0]
    return sigmoid(z)


def fixed_fusion(p, r, delta: float):
    """``r**delta * p``."""
    r = np.asarray(r, dtype=np.float64)
    if delta < 0 and np.any(r == 0):
        raise DomainError("relevance 0 with negative exponent")
    return np.power(r, delta) * p


@dataclass
class AreaProbabilities:
    p11: np.ndarray
    p10: np.ndarray
    p01: np.ndarray
    p00: np.ndarray

    def as_tuple(self):
        return self.p11, self.p10, self.p01, self.p00

    def total(self):
        return self.p11 + self.p10 + self.p01 + self.p00


def area_probabilities(p_c, r) -> AreaProbabilities:
    p_c = np.asarray(p_c, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    return AreaProbabilities(p_c * r, p_c * (1.0 - r), (1.0 - p_c) * r, (1.0 - p_c) * (1.0 - r))


def bilinear_weight(ap: AreaProbabilities, alpha, beta):
    a1, a0 = alpha
    b1, b0 = beta
    return ap.p11 * a1 * b1 + ap.p10 * a1 * b0 + ap.p01 * a0 * b1 + ap.p00 * a0 * b0


def global_fusion(ap: AreaProbabilities, r, delta: float, alpha, beta):
    """``r**(delta-1) * alpha M beta^T`` with ``M`` the 2x2 area matrix."""
    r = np.asarray(r, dtype=np.float64)
    if delta < 1 and np.any(r == 0):
        raise DomainError("relevance 0 with delta < 1")
    return np.power(r, delta - 1.0) * bilinear_weight(ap, alpha, beta)


def clamp_prob(x):
    return np.clip(x, CLAMP_LO, CLAMP_HI)


# --- trainable pieces -------------------------------------------------------

class EditLayer:
    """``e_pc = B^T (A (e_p - e_r))``.

    With ``orthogonal=True`` a single block ``O`` plays both roles and is kept
    row-orthonormal by ``retract_``; otherwise ``A`` and ``B`` are independent
    unconstrained matrices of the same shape.
    """

    def __init__(self, rank: int, hidden: int, rng: np.random.Generator, orthogonal: bool = True):
        if rank > hidden:
            raise DimensionError(f"rank {rank} exceeds hidden width {hidden}")
        self.orthogonal = orthogonal
        init = random_projection(rank, hidden, rng)
        if orthogonal:
            self.O = ParamBlock("edit.O", init)
            self.enc = self.dec = self.O
        else:
            self.enc = ParamBlock("edit.W1", init)
            self.dec = ParamBlock("edit.W2", init.copy())
        self.retractions = 0

    @property
    def params(self):
        return [self.O] if self.orthogonal else [self.enc, self.dec]

    def forward(self, e_p, e_r):
        self._diff = e_p - e_r
        self._z = self._diff @ self.enc.value.T
        return self._z @ self.dec.value

    def backward(self, d_epc):
        """Return ``d e_p``; ``d e_r`` is its negation."""
        dz = d_epc @ self.dec.value.T
        self.dec.grad += self._z.T @ d_epc
        self.enc.grad += dz.T @ self._diff
        return dz @ self.enc.value

    def retract_(self) -> None:
        if self.orthogonal:
            self.O.value[...] = retract(self.O.value)
            self.retractions += 1


class PreferenceDecoder:
    def __init__(self, hidden: int, rng: np.random.Generator):
        lim = np.sqrt(6.0 / (hidden + 1))
        self.W_p = ParamBlock("dec.W_p", rng.uniform(-lim, lim, size=(1, hidden)))
        self.b_p = ParamBlock("dec.b_p", np.zeros(1))

    @property
    def params(self):
        return [self.W_p, self.b_p]

    def forward(self, e_pc):
        self._e = e_pc
        self._p = sigmoid(e_pc @ self.W_p.value[0] + self.b_p.value[0])
        return self._p

    def backward(self, dp):
        dz = dp * self._p * (1.0 - self._p)
        self.W_p.grad[0] += dz @ self._e
        self.b_p.grad[0] += dz.sum()
        return dz[:, None] * self.W_p.value[0]


class FusionParams:
    """Fusion exponent, learnable area weights and the local corrector MLP."""

    def __init__(self, dim: int, rng: np.random.Generator, delta: float = 1.0,
                 alpha_init=(1.0, 0.5), beta_init=(1.0, 0.5), corrector_hidden: int = 32):
        self.delta = float(delta)
        self.alpha = ParamBlock("fusion.alpha", np.array(alpha_init, dtype=np.float64))
        self.beta = ParamBlock("fusion.beta", np.array(beta_init, dtype=np.float64))
        hidden = Dense("fusion.corrector.0", 3 * dim, corrector_hidden, rng, activation="relu")
        out = Dense("fusion.corrector.1", corrector_hidden, 1, rng, activation=None, scale=0.01)
        self.corrector = Sequential([hidden, out])

    @property
    def global_params(self):
        return [self.alpha, self.beta]

    @property
    def local_params(self):
        return self.corrector.params

    # global stage
    def global_forward(self, p, r):
        self._g_in = (p, r)
        ap = area_probabilities(p, r)
        self._ap = ap
        self._S = bilinear_weight(ap, self.alpha.value, self.beta.value)
        self._rpow = np.power(r, self.delta - 1.0)
        return self._rpow * self._S

    def global_backward(self, dg):
        """Return ``(dp, dr)``; accumulates alpha/beta grads."""
        p, r = self._g_in
        a1, a0 = self.alpha.value
        b1, b0 = self.beta.value
        ap = self._ap
        dS = dg * self._rpow
        self.alpha.grad[0] += np.sum(dS * (ap.p11 * b1 + ap.p10 * b0))
        self.alpha.grad[1] += np.sum(dS * (ap.p01 * b1 + ap.p00 * b0))
        self.beta.grad[0] += np.sum(dS * (ap.p11 * a1 + ap.p01 * a0))
        self.beta.grad[1] += np.sum(dS * (ap.p10 * a1 + ap.p00 * a0))
        w11, w10, w01, w00 = a1 * b1, a1 * b0, a0 * b1, a0 * b0
        dp = dS * (r * w11 + (1.0 - r) * w10 - r * w01 - (1.0 - r) * w00)
        dr = dS * (p * w11 - p * w10 + (1.0 - p) * w01 - (1.0 - p) * w00)
        if self.delta != 1.0:
            dr = dr + dg * (self.delta - 1.0) * np.power(r, self.delta - 2.0) * self._S
        return dp, dr

    # fixed stage
    def fixed_forward(self, p, r):
        self._f_in = (p, r)
        return np.power(r, self.delta) * p

    def fixed_backward(self, dy):
        p, r = self._f_in
        dp = dy * np.power(r, self.delta)
        dr = dy * self.delta * np.power(r, self.delta - 1.0) * p if self.delta != 0 else np.zeros_like(r)
        return dp, dr

    # local stage
    def local_forward(self, y, q, v, u):
        """Unclamped ``y * 2 sigmoid(corrector(concat(u, v, q)))``."""
        self._l_y = y
        self._F = 2.0 * sigmoid(self.corrector.forward(np.concatenate([u, v, q], axis=1))[:, 0])
        return y * self._F

    def local_backward(self, dout, dim: int):
        """Return ``(dy, dq, dv, du)``."""
        dy = dout * self._F
        s = self._F / 2.0
        dc = dout * self._l_y * 2.0 * s * (1.0 - s)
        dx = self.corrector.backward(dc[:, None])
        return dy, dx[:, 2 * dim :], dx[:, dim : 2 * dim], dx[:, :dim]


def local_fusion(y_g, q, v, u, fp: FusionParams):
    """``clamp(y_g * F(u, v, q))`` with ``F = 2 sigmoid(corrector logit)`` in (0, 2)."""
    single = np.ndim(q) == 1
    q2, v2, u2 = (np.atleast_2d(a) for a in (q, v, u))
    out = clamp_prob(fp.local_forward(np.atleast_1d(np.asarray(y_g, dtype=np.float64)), q2, v2, u2))
    return out[0] if single else out
