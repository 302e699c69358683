"""JSON-lines dataset files, vocabulary inference and session-atomic time splits.

File format: one JSON object per impression with the mandatory keys

    user_id, query_id, item_id, history, label, timestamp, session_id

(non-negative integer ids, ``history`` an array of item ids oldest first,
``label`` 0 or 1) and, for synthetic data, the oracle keys

    oracle_p, oracle_r, sensitivity, area

which must be present on every line or on none. ``write`` emits keys in this
order with compact separators, so ``load(write(d))`` round-trips exactly.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from drp.data import HISTORY_MAX, ORACLE_FIELDS, Dataset, _pad_histories
from drp.encoding import FeatureSpec
from drp.errors import ConfigurationError, ParseError, SchemaError

MANDATORY_KEYS = ("user_id", "query_id", "item_id", "history", "label", "timestamp", "session_id")
KEY_ORDER = MANDATORY_KEYS + ORACLE_FIELDS
_ID_KEYS = ("user_id", "query_id", "item_id", "session_id")


@dataclass
class LoadResult:
    dataset: Dataset
    spec: FeatureSpec
    skipped: list[int] = field(default_factory=list)  # line numbers dropped in lenient mode


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _check_record(obj, lineno: int) -> None:
    if not isinstance(obj, dict):
        raise SchemaError(lineno, "expected a JSON object")
    missing = [k for k in MANDATORY_KEYS if k not in obj]
    if missing:
        raise SchemaError(lineno, f"missing key(s) {', '.join(missing)}")
    unknown = set(obj) - set(KEY_ORDER)
    if unknown:
        raise SchemaError(lineno, f"unknown key(s) {', '.join(sorted(unknown))}")
    for k in _ID_KEYS:
        if not _is_int(obj[k]) or obj[k] < 0:
            raise SchemaError(lineno, f"{k} must be a non-negative integer, got {obj[k]!r}")
    if not _is_int(obj["timestamp"]):
        raise SchemaError(lineno, f"timestamp must be an integer, got {obj['timestamp']!r}")
    if obj["label"] not in (0, 1) or isinstance(obj["label"], bool):
        raise SchemaError(lineno, f"label must be 0 or 1, got {obj['label']!r}")
    hist = obj["history"]
    if not isinstance(hist, list) or not all(_is_int(h) and h >= 0 for h in hist):
        raise SchemaError(lineno, "history must be an array of non-negative integers")
    present = [k for k in ORACLE_FIELDS if k in obj]
    if present and len(present) != len(ORACLE_FIELDS):
        raise SchemaError(lineno, "oracle fields must be given all together")
    if present:
        for k in ("oracle_p", "oracle_r"):
            if obj[k] not in (0, 1) or isinstance(obj[k], bool):
                raise SchemaError(lineno, f"{k} must be 0 or 1")
        if not isinstance(obj["sensitivity"], (int, float)) or not 0.0 <= obj["sensitivity"] <= 1.0:
            raise SchemaError(lineno, "sensitivity must be a number in [0, 1]")
        if not _is_int(obj["area"]) or not 0 <= obj["area"] <= 5:
            raise SchemaError(lineno, "area must be an integer in 0..5")


def load(path, lenient: bool = False) -> LoadResult:
    """Parse a JSONL dataset, streaming line by line.

    Fail-fast by default: the first malformed line raises ``ParseError``
    (invalid JSON) or ``SchemaError`` (missing/invalid keys) naming its line
    number. With ``lenient=True`` bad lines are skipped and reported through
    a single ``UserWarning`` and ``LoadResult.skipped``.
    """
    records = []
    skipped = []
    with_oracle = None
    last_ts: dict[int, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(lineno, f"invalid JSON ({exc.msg})") from None
                _check_record(obj, lineno)
                has = "area" in obj
                if with_oracle is not None and has != with_oracle:
                    raise SchemaError(lineno, "oracle fields present on some lines but not others")
                sid = obj["session_id"]
                if sid in last_ts and obj["timestamp"] < last_ts[sid]:
                    raise SchemaError(lineno, f"timestamp decreases within session {sid}")
            except ParseError:
                if not lenient:
                    raise
                skipped.append(lineno)
                continue
            with_oracle = has
            last_ts[sid] = obj["timestamp"]
            records.append(obj)
    if skipped:
        warnings.warn(f"skipped {len(skipped)} malformed line(s): {skipped[:10]}", UserWarning, stacklevel=2)
    data = _records_to_dataset(records, bool(with_oracle))
    return LoadResult(data, infer_spec(data), skipped)


def _records_to_dataset(records: list[dict], oracle: bool) -> Dataset:
    hist, hist_len = _pad_histories([r["history"] for r in records], HISTORY_MAX)

    def col(key, dtype):
        return np.array([r[key] for r in records], dtype=dtype)

    return Dataset(
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


def infer_spec(data: Dataset, dim: int = 64) -> FeatureSpec:
    """Vocabulary sizes as ``max id + 1`` (0 for an empty dataset); items include history ids."""
    def size(*arrays):
        arrays = [a for a in arrays if a.size]
        return int(max(a.max() for a in arrays)) + 1 if arrays else 0

    valid_hist = data.hist[data.hist >= 0]
    return FeatureSpec(size(data.user_id), size(data.query_id), size(data.item_id, valid_hist), dim)


def _record(data: Dataset, i: int) -> dict:
    rec = {
        "user_id": int(data.user_id[i]),
        "query_id": int(data.query_id[i]),
        "item_id": int(data.item_id[i]),
        "history": data.hist[i, : data.hist_len[i]].tolist(),
        "label": int(data.label[i]),
        "timestamp": int(data.timestamp[i]),
        "session_id": int(data.session_id[i]),
    }
    if data.has_oracle:
        rec["oracle_p"] = int(data.oracle_p[i])
        rec["oracle_r"] = int(data.oracle_r[i])
        rec["sensitivity"] = float(data.sensitivity[i])
        rec["area"] = int(data.area[i])
    return rec


def write(data: Dataset, path) -> None:
    """Write ``data`` as JSONL in canonical key order (byte-stable for equal inputs)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i in range(len(data)):
            fh.write(json.dumps(_record(data, i), separators=(",", ":")))
            fh.write("\n")


# --- splitting ---------------------------------------------------------------

@dataclass
class Split:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray

    def apply(self, data: Dataset) -> tuple[Dataset, Dataset, Dataset]:
        return data.take(self.train), data.take(self.validation), data.take(self.test)

    def parts(self):
        return (("train", self.train), ("validation", self.validation), ("test", self.test))


def session_starts(data: Dataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(session ids, first timestamp per session, per-row index into them)``."""
    sessions, inverse = np.unique(data.session_id, return_inverse=True)
    starts = np.full(len(sessions), np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(starts, inverse, data.timestamp)
    return sessions, starts, inverse


def time_split(data: Dataset, fractions=(0.8, 0.1, 0.1)) -> Split:
    """Session-atomic split on session start time.

    The boundaries are the linear-interpolated quantiles of the session-start
    distribution at the cumulative fractions; a session whose start equals a
    boundary goes to the earlier split.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) <= 0 or not math.isclose(sum(fractions), 1.0):
        raise ConfigurationError(f"split fractions must be three positives summing to 1, got {fractions}")
    sessions, starts, inverse = session_starts(data)
    if len(sessions) < 3:
        raise ConfigurationError(f"time split needs at least 3 sessions, got {len(sessions)}")
    t1, t2 = np.quantile(starts.astype(np.float64), [fractions[0], fractions[0] + fractions[1]])
    part = np.where(starts <= t1, 0, np.where(starts <= t2, 1, 2))[inverse]
    split = Split(*(np.flatnonzero(part == k) for k in range(3)))
    for name, idx in split.parts():
        if idx.size == 0:
            raise ConfigurationError(f"time split left the {name} part empty")
    return split


def split_summary_csv(data: Dataset, split: Split) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("split", "n_examples", "n_sessions", "positive_rate", "t_min", "t_max"))
    for name, idx in split.parts():
        ts = data.timestamp[idx]
        w.writerow((name, len(idx), len(np.unique(data.session_id[idx])),
                    repr(float(data.label[idx].mean())), int(ts.min()), int(ts.max())))
    return buf.getvalue()

