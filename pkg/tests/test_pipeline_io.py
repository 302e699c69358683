"""JSONL loading/writing, vocabulary inference and time splits."""

import json

import numpy as np
import pytest

from drp.data import ORACLE_FIELDS, Dataset, SessionExample
from drp.errors import ConfigurationError, ParseError, SchemaError
from drp.pipeline_io import KEY_ORDER, load, split_summary_csv, time_split, write


def _line(**over):
    rec = {"user_id": 1, "query_id": 2, "item_id": 3, "history": [4, 5], "label": 1,
           "timestamp": 10, "session_id": 0}
    rec.update(over)
    return json.dumps(rec)


def _write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def _assert_same(a: Dataset, b: Dataset):
    for name in ("user_id", "query_id", "item_id", "hist", "hist_len", "label", "timestamp", "session_id"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    assert a.has_oracle == b.has_oracle
    if a.has_oracle:
        for name in ORACLE_FIELDS:
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


class TestLoad:
    def test_round_trip(self, tmp_path, small_world):
        _, data = small_world
        path = tmp_path / "d.jsonl"
        write(data, path)
        loaded = load(path)
        _assert_same(loaded.dataset, data)
        again = tmp_path / "e.jsonl"
        write(loaded.dataset, again)
        assert again.read_bytes() == path.read_bytes()

    def test_canonical_key_order(self, tmp_path, small_world):
        _, data = small_world
        path = tmp_path / "d.jsonl"
        write(data.take(np.arange(3)), path)
        first = json.loads(path.read_text().splitlines()[0])
        assert tuple(first) == KEY_ORDER

    def test_without_oracle(self, tmp_path):
        path = _write_lines(tmp_path / "d.jsonl", [_line(), _line(timestamp=11)])
        res = load(path)
        assert len(res.dataset) == 2 and not res.dataset.has_oracle
        assert res.dataset.example(0).history == (4, 5)

    def test_empty_file(self, tmp_path):
        res = load(_write_lines(tmp_path / "d.jsonl", []))
        assert len(res.dataset) == 0
        assert (res.spec.n_users, res.spec.n_queries, res.spec.n_items) == (0, 0, 0)
        with pytest.raises(ConfigurationError):
            time_split(res.dataset)

    def test_malformed_line_fail_fast(self, tmp_path):
        path = _write_lines(tmp_path / "d.jsonl", [_line(), _line(), _line(), "{not json"])
        with pytest.raises(ParseError) as exc:
            load(path)
        assert exc.value.line == 4 and "line 4" in str(exc.value)

    def test_malformed_line_lenient(self, tmp_path):
        path = _write_lines(tmp_path / "d.jsonl", [_line(), _line(), _line(), "{not json"])
        with pytest.warns(UserWarning, match="skipped 1"):
            res = load(path, lenient=True)
        assert len(res.dataset) == 3 and res.skipped == [4]

    def test_missing_key(self, tmp_path):
        rec = json.loads(_line())
        del rec["label"]
        path = _write_lines(tmp_path / "d.jsonl", [_line(), json.dumps(rec)])
        with pytest.raises(SchemaError, match="label") as exc:
            load(path)
        assert exc.value.line == 2

    @pytest.mark.parametrize("bad", [
        {"user_id": -1}, {"item_id": 1.5}, {"label": 2}, {"label": True},
        {"history": [1, "x"]}, {"extra": 1}, {"oracle_p": 1},
    ])
    def test_schema_violations(self, tmp_path, bad):
        with pytest.raises(SchemaError):
            load(_write_lines(tmp_path / "d.jsonl", [_line(**bad)]))

    def test_mixed_oracle_presence(self, tmp_path):
        oracle = dict(oracle_p=1, oracle_r=1, sensitivity=0.5, area=3)
        with pytest.raises(SchemaError, match="some lines"):
            load(_write_lines(tmp_path / "d.jsonl", [_line(**oracle), _line(timestamp=11)]))

    def test_decreasing_timestamp_in_session(self, tmp_path):
        with pytest.raises(SchemaError, match="decreases"):
            load(_write_lines(tmp_path / "d.jsonl", [_line(timestamp=5), _line(timestamp=4)]))

    def test_max_user_gives_vocab(self, tmp_path):
        path = _write_lines(tmp_path / "d.jsonl", [_line(user_id=41), _line(user_id=7, timestamp=11)])
        assert load(path).spec.n_users == 42

    def test_history_counts_toward_item_vocab(self, tmp_path):
        path = _write_lines(tmp_path / "d.jsonl", [_line(item_id=3, history=[99])])
        assert load(path).spec.n_items == 100


def _sessions_with_starts(starts):
    examples = []
    for sid, t in enumerate(starts):
        for k in range(2):
            examples.append(SessionExample(user_id=0, query_id=0, item_id=k, history=(), label=k,
                                           timestamp=int(t) * 10 + k, session_id=sid))
    return Dataset.from_examples(examples)


class TestTimeSplit:
    def test_ten_sessions(self):
        data = _sessions_with_starts(range(1, 11))
        split = time_split(data)
        tr, va, te = split.apply(data)
        assert sorted(set(tr.session_id.tolist())) == list(range(8))
        assert set(va.session_id.tolist()) == {8}
        assert set(te.session_id.tolist()) == {9}

    def test_identical_starts_leave_test_empty(self):
        with pytest.raises(ConfigurationError, match="empty"):
            time_split(_sessions_with_starts([5] * 10))

    def test_too_few_sessions(self):
        with pytest.raises(ConfigurationError, match="3 sessions"):
            time_split(_sessions_with_starts([1, 2]))

    @pytest.mark.parametrize("fractions", [(0.5, 0.5), (0.8, 0.3, -0.1), (0.7, 0.2, 0.2)])
    def test_bad_fractions(self, fractions):
        with pytest.raises(ConfigurationError):
            time_split(_sessions_with_starts(range(10)), fractions)

    def test_session_atomic_and_reproducible(self, small_world):
        _, data = small_world
        a, b = time_split(data), time_split(data)
        for (_, ia), (_, ib) in zip(a.parts(), b.parts()):
            np.testing.assert_array_equal(ia, ib)
        seen = [set(data.session_id[idx].tolist()) for _, idx in a.parts()]
        assert not (seen[0] & seen[1]) and not (seen[1] & seen[2]) and not (seen[0] & seen[2])
        assert sum(len(idx) for _, idx in a.parts()) == len(data)

    def test_summary_csv(self, small_world):
        _, data = small_world
        rows = split_summary_csv(data, time_split(data)).splitlines()
        assert rows[0].startswith("split,n_examples") and [r.split(",")[0] for r in rows[1:]] == [
            "train", "validation", "test"]
