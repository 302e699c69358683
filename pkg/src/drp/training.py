"""Optimization loop, Adam, early stopping and checkpoint serialization."""

from __future__ import annotations

import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from drp import kernels
from drp.backbones import BackboneConfig
from drp.data import Dataset
from drp.encoding import FeatureSpec
from drp.errors import ConfigurationError, TrainingError
from drp.metrics import auc
from drp.model import VARIANTS, DRPModel, bce
from drp.numerics import ParamBlock, make_rng

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    variant: str = "FULL"
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 5
    seed: int = 0
    delta: float = 1.0
    rank_d: int = 16
    patience: int = 2
    alpha_init: tuple[float, float] = (1.0, 0.5)
    beta_init: tuple[float, float] = (1.0, 0.5)

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        for name in ("lr", "batch_size", "epochs", "rank_d", "patience"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"train.{name} must be positive, got {getattr(self, name)}")
        if self.delta < 0:
            raise ConfigurationError(f"train.delta must be non-negative, got {self.delta}")
        if self.seed < 0:
            raise ConfigurationError("train.seed must be non-negative")
        self.alpha_init = tuple(float(a) for a in self.alpha_init)
        self.beta_init = tuple(float(b) for b in self.beta_init)
        if len(self.alpha_init) != 2 or len(self.beta_init) != 2:
            raise ConfigurationError("alpha_init and beta_init must be pairs")


def bce_loss(y_hat, y):
    """Mean binary cross-entropy of already-clamped predictions."""
    return float(np.mean(bce(np.asarray(y_hat, dtype=np.float64), np.asarray(y, dtype=np.float64))))


class Adam:
    beta1 = 0.9
    beta2 = 0.999
    eps = 1e-8

    def __init__(self, params: list[ParamBlock], lr: float):
        self.params = params
        self.lr = lr
        self.m = [np.zeros(p.size) for p in params]
        self.v = [np.zeros(p.size) for p in params]
        self.step_count = 0

    def step(self) -> None:
        self.step_count += 1
        for p, m, v in zip(self.params, self.m, self.v):
            kernels.adam_update(p.value.reshape(-1), p.grad.reshape(-1), m, v, self.lr,
                                self.beta1, self.beta2, self.eps, self.step_count)


def adam_step(model: DRPModel, opt: Adam) -> None:
    """One Adam update; the orthogonal projection is retracted right after."""
    opt.step()
    if model.edit is not None:
        model.edit.retract_()


def build_model(spec: FeatureSpec, backbone: BackboneConfig, cfg: TrainConfig) -> DRPModel:
    return DRPModel(spec, backbone, cfg.variant, seed=cfg.seed, delta=cfg.delta,
                    rank=cfg.rank_d, alpha_init=cfg.alpha_init, beta_init=cfg.beta_init)


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    train: TrainConfig
    backbone: BackboneConfig
    spec: FeatureSpec
    epochs_trained: int
    val_auc: list[float] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)

    @classmethod
    def from_model(cls, model: DRPModel, cfg: TrainConfig, epochs: int, val_auc, train_loss):
        return cls({p.name: p.value.copy() for p in model.params}, cfg, model.backbone, model.spec,
                   epochs, list(val_auc), list(train_loss))

    def build_model(self) -> DRPModel:
        model = build_model(self.spec, self.backbone, self.train)
        blocks = model.param_dict()
        if set(blocks) != set(self.params):
            raise ConfigurationError("checkpoint parameters do not match the model layout")
        for name, value in self.params.items():
            if blocks[name].value.shape != value.shape:
                raise ConfigurationError(f"shape mismatch for {name}")
            blocks[name].value[...] = value
        return model

    def meta(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "train": asdict(self.train),
            "backbone": asdict(self.backbone),
            "spec": asdict(self.spec),
            "epochs_trained": self.epochs_trained,
            "val_auc": self.val_auc,
            "train_loss": self.train_loss,
            "param_names": sorted(self.params),
            "param_shapes": {k: list(v.shape) for k, v in sorted(self.params.items())},
        }

    def save(self, path) -> None:
        """Write a single ``.npz`` holding every parameter plus a JSON ``__meta__`` entry."""
        arrays = {f"param/{k}": v for k, v in self.params.items()}
        arrays["__meta__"] = np.frombuffer(json.dumps(self.meta(), sort_keys=True).encode(), dtype=np.uint8)
        buf = io.BytesIO()
        np.savez(buf, **arrays)
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with np.load(Path(path), allow_pickle=False) as z:
            meta = json.loads(bytes(z["__meta__"]).decode())
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ConfigurationError(f"unsupported checkpoint version {meta.get('version')!r}")
            params = {k[len("param/"):]: z[k].copy() for k in z.files if k.startswith("param/")}
        train = TrainConfig(**meta["train"])
        train.validate()
        backbone = BackboneConfig(**{**meta["backbone"], "units": tuple(meta["backbone"]["units"])})
        return cls(params, train, backbone, FeatureSpec(**meta["spec"]),
                   meta["epochs_trained"], meta["val_auc"], meta["train_loss"])


def evaluate_auc(model: DRPModel, data: Dataset) -> float:
    return auc(model.predict(data)["final"], data.label)


def train(cfg: TrainConfig, spec: FeatureSpec, backbone: BackboneConfig,
          train_data: Dataset, val_data: Dataset, epoch_log: list | None = None,
          model: DRPModel | None = None) -> Checkpoint:
    """Train ``cfg.variant`` on ``train_data`` and return the best-validation checkpoint."""
    cfg.validate()
    if len(train_data) == 0 or len(val_data) == 0:
        raise ConfigurationError("train and validation splits must be non-empty")
    if model is None:
        model = build_model(spec, backbone, cfg)
    opt = Adam(model.params, cfg.lr)
    rng = make_rng(cfg.seed + 104729)
    best = None
    best_auc = -np.inf
    aucs, losses = [], []
    stale = 0
    step = 0
    n = len(train_data)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = train_data.take(order[start : start + cfg.batch_size])
            model.zero_grads()
            loss = model.loss(batch, backward=True)
            step += 1
            if not np.isfinite(loss):
                raise TrainingError("loss is not finite", step)
            adam_step(model, opt)
            total += loss * len(batch)
        val = evaluate_auc(model, val_data)
        aucs.append(val)
        losses.append(total / n)
        log.info("epoch %d variant=%s train_loss=%.6f val_auc=%.6f", epoch, cfg.variant, total / n, val)
        if epoch_log is not None:
            epoch_log.append({"epoch": epoch, "train_loss": total / n, "val_auc": val})
        if val > best_auc:
            best_auc = val
            best = ({p.name: p.value.copy() for p in model.params}, epoch)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    params, _ = best
    return Checkpoint(params, cfg, backbone, spec, len(aucs), aucs, losses)
