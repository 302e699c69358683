"""Example records and the columnar ``Dataset`` used for training and evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import ClassVar, Iterable, Iterator, Sequence

import numpy as np

HISTORY_MAX = 50

ORACLE_FIELDS = ("oracle_p", "oracle_r", "sensitivity", "area")


@dataclass(frozen=True)
class SessionExample:
    user_id: int
    query_id: int
    item_id: int
    history: tuple[int, ...]
    label: int
    timestamp: int
    session_id: int


@dataclass(frozen=True)
class LabeledExample(SessionExample):
    oracle_p: int = 0
    oracle_r: int = 0
    sensitivity: float = 0.0
    area: int = 0


def _pad_histories(histories: Sequence[Sequence[int]], width: int = HISTORY_MAX):
    n = len(histories)
    hist = np.full((n, width), -1, dtype=np.int32)
    lengths = np.zeros(n, dtype=np.int64)
    for i, h in enumerate(histories):
        h = list(h)[-width:]
        hist[i, : len(h)] = h
        lengths[i] = len(h)
    return hist, lengths


@dataclass
class Dataset:
    """Column-oriented impressions.

    ``hist`` is an (N, 50) int32 array holding each impression's most recent
    clicked items, oldest first, padded with -1; ``hist_len`` gives the valid
    prefix length. Oracle columns are ``None`` for real-style data.
    """

    user_id: np.ndarray
    query_id: np.ndarray
    item_id: np.ndarray
    hist: np.ndarray
    hist_len: np.ndarray
    label: np.ndarray
    timestamp: np.ndarray
    session_id: np.ndarray
    oracle_p: np.ndarray | None = None
    oracle_r: np.ndarray | None = None
    sensitivity: np.ndarray | None = None
    area: np.ndarray | None = None

    _columns: ClassVar[tuple[str, ...]] = (
        "user_id", "query_id", "item_id", "hist", "hist_len", "label", "timestamp",
        "session_id") + ORACLE_FIELDS

    def __len__(self) -> int:
        return len(self.label)

    @property
    def has_oracle(self) -> bool:
        return self.area is not None

    @classmethod
    def from_examples(cls, examples: Iterable[SessionExample]) -> "Dataset":
        examples = list(examples)
        hist, hist_len = _pad_histories([e.history for e in examples])

        def col(name, dtype):
            return np.array([getattr(e, name) for e in examples], dtype=dtype)

        oracle = bool(examples) and all(isinstance(e, LabeledExample) for e in examples)
        return cls(
            user_id=col("user_id", np.int64),
            query_id=col("query_id", np.int64),
            item_id=col("item_id", np.int64),
            hist=hist,
            hist_len=hist_len,
            label=col("label", np.int8),
            timestamp=col("timestamp", np.int64),
            session_id=col("session_id", np.int64),
            oracle_p=col("oracle_p", np.int8) if oracle else None,
            oracle_r=col("oracle_r", np.int8) if oracle else None,
            sensitivity=col("sensitivity", np.float64) if oracle else None,
            area=col("area", np.int8) if oracle else None,
        )

    def take(self, indices) -> "Dataset":
        idx = np.asarray(indices)
        kwargs = {}
        for name in self._columns:
            arr = getattr(self, name)
            kwargs[name] = None if arr is None else np.ascontiguousarray(arr[idx])
        return Dataset(**kwargs)

    def example(self, i: int) -> SessionExample:
        base = dict(
            user_id=int(self.user_id[i]),
            query_id=int(self.query_id[i]),
            item_id=int(self.item_id[i]),
            history=tuple(int(h) for h in self.hist[i, : self.hist_len[i]]),
            label=int(self.label[i]),
            timestamp=int(self.timestamp[i]),
            session_id=int(self.session_id[i]),
        )
        if not self.has_oracle:
            return SessionExample(**base)
        return LabeledExample(
            **base,
            oracle_p=int(self.oracle_p[i]),
            oracle_r=int(self.oracle_r[i]),
            sensitivity=float(self.sensitivity[i]),
            area=int(self.area[i]),
        )

    def __iter__(self) -> Iterator[SessionExample]:
        for i in range(len(self)):
            yield self.example(i)
