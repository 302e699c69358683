"""End-to-end scoring model and its ablation variants."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from drp.backbones import BackboneConfig, build_preference, build_relevance
from drp.data import Dataset
from drp.encoding import Encoder, FeatureSpec
from drp.errors import ConfigurationError
from drp.numerics import Dense, ParamBlock, make_rng, zero_grads
from drp.reconstruction import (
    CLAMP_HI,
    CLAMP_LO,
    EditLayer,
    FusionParams,
    PreferenceDecoder,
)

VARIANTS = ("FULL", "V1_NON_ORTHO", "V2_NO_FUSION", "V3_NO_GLOBAL", "V4_NO_LOCAL", "V5_NO_EDIT", "BASE_FIXED")


@dataclass(frozen=True)
class Wiring:
    edit: str | None  # "ortho", "free" or None
    global_fusion: bool
    local_fusion: bool


WIRING = {
    "FULL": Wiring("ortho", True, True),
    "V1_NON_ORTHO": Wiring("free", True, True),
    "V2_NO_FUSION": Wiring("ortho", False, False),
    "V3_NO_GLOBAL": Wiring("ortho", False, True),
    "V4_NO_LOCAL": Wiring("ortho", True, False),
    "V5_NO_EDIT": Wiring(None, True, True),
    "BASE_FIXED": Wiring(None, False, False),
}


def bce(y_hat, y):
    """Per-example ``-[y ln y_hat + (1-y) ln(1-y_hat)]``."""
    return -(y * np.log(y_hat) + (1.0 - y) * np.log(1.0 - y_hat))


class DRPModel:
    """Relevance + preference backbones joined by editing and fusion per ``variant``.

    ``forward`` returns a dict of stage scores: ``r``, ``p`` (raw preference),
    ``p_used`` (edited when editing is on), ``fixed``, ``global``, ``local``
    and ``final`` (clamped score fed to the loss). Stages a variant does not
    have repeat the previous stage.
    """

    def __init__(self, spec: FeatureSpec, backbone: BackboneConfig, variant: str = "FULL",
                 seed: int = 0, delta: float = 1.0, rank: int = 16,
                 alpha_init=(1.0, 0.5), beta_init=(1.0, 0.5)):
        if variant not in WIRING:
            raise ConfigurationError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        backbone.validate()
        self.spec = spec
        self.backbone = backbone
        self.variant = variant
        self.wiring = WIRING[variant]
        H = backbone.hidden
        self.encoder = Encoder(spec, seed)
        self.rm = build_relevance(backbone.relevance, spec.dim, backbone, seed + 1)
        self.pm = build_preference(backbone.preference, spec.dim, backbone, seed + 2)
        rng = make_rng(seed + 3)
        self.edit = None
        self.decoder = None
        if self.wiring.edit is not None:
            self.edit = EditLayer(rank, H, rng, orthogonal=self.wiring.edit == "ortho")
            self.decoder = PreferenceDecoder(H, rng)
        self.fusion = FusionParams(spec.dim, rng, delta=delta, alpha_init=alpha_init, beta_init=beta_init)
        self._cache = None

    @property
    def params(self) -> list[ParamBlock]:
        ps = self.encoder.params + self.rm.params + self.pm.params
        if self.edit is not None:
            ps += self.edit.params + self.decoder.params
        if self.wiring.global_fusion:
            ps += self.fusion.global_params
        if self.wiring.local_fusion:
            ps += self.fusion.local_params
        return ps

    def param_dict(self) -> dict[str, ParamBlock]:
        return {p.name: p for p in self.params}

    def forward(self, batch: Dataset) -> dict[str, np.ndarray]:
        w = self.wiring
        fp = self.fusion
        trip = self.encoder.forward(batch)
        q, v, u = trip.q, trip.v, trip.u
        rel = self.rm.forward(q, v, u)
        pref = self.pm.forward(q, v, u)
        r = rel.effect
        out = {"r": r, "p": pref.effect}
        if w.edit is not None:
            e_pc = self.edit.forward(pref.hidden, rel.hidden)
            p = self.decoder.forward(e_pc)
        else:
            p = pref.effect
        out["p_used"] = p
        fixed = fp.fixed_forward(p, r)
        out["fixed"] = fixed
        g = fp.global_forward(p, r) if w.global_fusion else fixed
        out["global"] = g
        if w.local_fusion:
            raw = fp.local_forward(g, q, v, u)
            out["local"] = np.clip(raw, CLAMP_LO, CLAMP_HI)
        else:
            raw = g
            out["local"] = g
        out["final"] = np.clip(raw, CLAMP_LO, CLAMP_HI)
        self._cache = (raw, q.shape[1])
        return out

    def backward(self, d_final: np.ndarray) -> None:
        """Backpropagate ``dL/d final`` (through the clamp) into every block."""
        w = self.wiring
        fp = self.fusion
        raw, dim = self._cache
        d_raw = np.where((raw > CLAMP_LO) & (raw < CLAMP_HI), d_final, 0.0)
        dq = dv = du = 0.0
        if w.local_fusion:
            dg, dq_l, dv_l, du_l = fp.local_backward(d_raw, dim)
            dq, dv, du = dq_l, dv_l, du_l
        else:
            dg = d_raw
        if w.global_fusion:
            dp, dr = fp.global_backward(dg)
        else:
            dp, dr = fp.fixed_backward(dg)
        if w.edit is not None:
            d_epc = self.decoder.backward(dp)
            de_p = self.edit.backward(d_epc)
            rq, rv, ru = self.rm.backward(dr, -de_p)
            pq, pv, pu = self.pm.backward(None, de_p)
        else:
            rq, rv, ru = self.rm.backward(dr, None)
            pq, pv, pu = self.pm.backward(dp, None)
        dq = dq + rq + pq
        dv = dv + rv + pv
        du = du + pu + (0.0 if ru is None else ru)
        self.encoder.backward(dq, dv, du)

    def loss(self, batch: Dataset, backward: bool = False, reduction: str = "mean") -> float:
        out = self.forward(batch)
        y = batch.label.astype(np.float64)
        yh = out["final"]
        losses = bce(yh, y)
        scale = 1.0 / len(y) if reduction == "mean" else 1.0
        if backward:
            self.backward(scale * (yh - y) / (yh * (1.0 - yh)))
        return float(losses.sum() * scale)

    def _dense_layers(self) -> list[Dense]:
        found, seen = [], set()

        def walk(obj):
            if id(obj) in seen:
                return
            seen.add(id(obj))
            if isinstance(obj, Dense):
                found.append(obj)
            elif isinstance(obj, (list, tuple)):
                for item in obj:
                    walk(item)
            elif hasattr(obj, "__dict__") and not isinstance(obj, np.ndarray):
                for item in vars(obj).values():
                    walk(item)

        walk([self.encoder, self.rm, self.pm, self.edit, self.decoder, self.fusion])
        return found

    def activation_signature(self) -> bytes:
        """Bit pattern of every ReLU and clamp decision in the last forward pass."""
        masks = [layer._mask for layer in self._dense_layers() if layer._mask is not None]
        raw = self._cache[0]
        masks.append((raw > CLAMP_LO) & (raw < CLAMP_HI))
        return b"".join(np.packbits(m.ravel()).tobytes() for m in masks)

    def zero_grads(self) -> None:
        zero_grads(self.params)

    def predict(self, data: Dataset, batch_size: int = 8192) -> dict[str, np.ndarray]:
        """Stage scores for every row of ``data``, computed in chunks."""
        parts: dict[str, list] = {}
        for start in range(0, len(data), batch_size):
            out = self.forward(data.take(np.arange(start, min(start + batch_size, len(data)))))
            for k, val in out.items():
                parts.setdefault(k, []).append(val)
        return {k: np.concatenate(v) for k, v in parts.items()}
