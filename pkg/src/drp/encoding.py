"""ID embeddings and the user-sequence encoder producing the (q, v, u) triple."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from drp import kernels
from drp.data import Dataset, SessionExample
from drp.errors import ConfigurationError, VocabularyError
from drp.numerics import DTYPE, Dense, ParamBlock, make_rng

INIT_RANGE = 0.05


@dataclass(frozen=True)
class FeatureSpec:
    n_users: int
    n_queries: int
    n_items: int
    dim: int = 64

    def validate(self) -> None:
        for name in ("n_users", "n_queries", "n_items", "dim"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"FeatureSpec.{name} must be >= 1, got {getattr(self, name)}")


@dataclass
class EncodedTriple:
    q: np.ndarray
    v: np.ndarray
    u: np.ndarray


def init_tables(spec: FeatureSpec, seed: int) -> dict[str, ParamBlock]:
    spec.validate()
    rng = make_rng(seed)
    tables = {}
    for key, rows in (("user", spec.n_users), ("query", spec.n_queries), ("item", spec.n_items)):
        tables[key] = ParamBlock(
            f"emb.{key}", rng.uniform(-INIT_RANGE, INIT_RANGE, size=(rows, spec.dim))
        )
    return tables


class Encoder:
    """Embedding lookups plus ``u = affine(concat(user_emb, mean(history_emb)))``.

    Works on a batch (a ``Dataset`` slice); ``encode`` wraps the single-example case.
    """

    def __init__(self, spec: FeatureSpec, seed: int):
        self.spec = spec
        self.tables = init_tables(spec, seed)
        rng = make_rng(seed + 7919)
        self.user_proj = Dense("enc.user_proj", 2 * spec.dim, spec.dim, rng, activation=None)
        self._cache = None
        self.pooled = None  # mean-pooled history of the last forward batch

    @property
    def params(self) -> list[ParamBlock]:
        return [self.tables["user"], self.tables["query"], self.tables["item"], *self.user_proj.params]

    def check_ids(self, batch: Dataset) -> None:
        spec = self.spec
        for field, arr, size in (
            ("user_id", batch.user_id, spec.n_users),
            ("query_id", batch.query_id, spec.n_queries),
            ("item_id", batch.item_id, spec.n_items),
        ):
            bad = (arr < 0) | (arr >= size)
            if bad.any():
                raise VocabularyError(field, int(arr[bad][0]), size)
        width = batch.hist.shape[1]
        valid = np.arange(width)[None, :] < batch.hist_len[:, None]
        bad = valid & ((batch.hist < 0) | (batch.hist >= spec.n_items))
        if bad.any():
            raise VocabularyError("history", int(batch.hist[bad][0]), spec.n_items)

    def forward(self, batch: Dataset) -> EncodedTriple:
        self.check_ids(batch)
        t = self.tables
        q = t["query"].value[batch.query_id]
        v = t["item"].value[batch.item_id]
        ue = t["user"].value[batch.user_id]
        pooled = np.empty((len(batch), self.spec.dim), dtype=DTYPE)
        hist = np.ascontiguousarray(batch.hist, dtype=np.int32)
        lengths = np.ascontiguousarray(batch.hist_len, dtype=np.int64)
        kernels.mean_pool_forward(t["item"].value, hist, lengths, pooled)
        u = self.user_proj.forward(np.concatenate([ue, pooled], axis=1))
        self._cache = (batch, hist, lengths)
        self.pooled = pooled
        return EncodedTriple(q, v, u)

    def backward(self, dq: np.ndarray, dv: np.ndarray, du: np.ndarray) -> None:
        batch, hist, lengths = self._cache
        t = self.tables
        dim = self.spec.dim
        dx = self.user_proj.backward(du)
        kernels.scatter_add_rows(t["query"].grad, batch.query_id, np.ascontiguousarray(dq))
        kernels.scatter_add_rows(t["item"].grad, batch.item_id, np.ascontiguousarray(dv))
        kernels.scatter_add_rows(t["user"].grad, batch.user_id, np.ascontiguousarray(dx[:, :dim]))
        kernels.mean_pool_backward(t["item"].grad, hist, lengths, np.ascontiguousarray(dx[:, dim:]))


def encode(example: SessionExample, encoder: Encoder) -> EncodedTriple:
    """Encode one example; a pure function of the example and the encoder weights."""
    triple = encoder.forward(Dataset.from_examples([example]))
    return EncodedTriple(triple.q[0].copy(), triple.v[0].copy(), triple.u[0].copy())
