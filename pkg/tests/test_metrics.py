from __future__ import annotations

import csv
import json

import pytest

from diffaccel.errors import ArtifactParseError, ContractViolation
from diffaccel.metrics import FIELDNAMES, MetricsLog, MetricsRow, read_metrics


def row(iteration, sw=0.5):
    return MetricsRow(iteration, 1.0 / iteration, sw, None, 0.8, 1e-4, 0.1, 2.5)


def test_log_writes_jsonl_and_csv(tmp_path):
    log = MetricsLog(tmp_path / "metrics.jsonl")
    log.append(row(10))
    log.append(row(20, sw=None))
    assert read_metrics(tmp_path / "metrics.jsonl") == log.rows
    with (tmp_path / "metrics.csv").open() as f:
        rows = list(csv.reader(f))
    assert rows[0] == FIELDNAMES
    assert len(rows) == 3
    assert rows[2][FIELDNAMES.index("sw_raw")] == ""


def test_rows_must_increase(tmp_path):
    log = MetricsLog()
    log.append(row(10))
    with pytest.raises(ContractViolation):
        log.append(row(10))


def test_truncate_after(tmp_path):
    path = tmp_path / "metrics.jsonl"
    log = MetricsLog(path)
    for it in (10, 20, 30):
        log.append(row(it))
    log.truncate_after(20)
    assert [r.iteration for r in read_metrics(path)] == [10, 20]
    with (tmp_path / "metrics.csv").open() as f:
        assert len(list(csv.reader(f))) == 3


def test_deterministic_ignores_wall_clock():
    a = row(10)
    b = MetricsRow(**{**a.to_dict(), "wall_clock": 99.0})
    assert a.deterministic() == b.deterministic()
    assert len(a.deterministic()) == len(FIELDNAMES) - 1


@pytest.mark.parametrize(
    ("text", "line", "field"),
    [
        ('{"iteration": 1}\n', 1, "train_loss"),
        ('{bad\n', 1, None),
        ("[1, 2]\n", 1, None),
    ],
)
def test_parse_errors_name_line_and_field(tmp_path, text, line, field):
    path = tmp_path / "m.jsonl"
    path.write_text(text)
    with pytest.raises(ArtifactParseError) as info:
        read_metrics(path)
    assert info.value.line == line
    assert info.value.field == field


def test_parse_errors_on_bad_values(tmp_path):
    good = row(10).to_dict()
    path = tmp_path / "m.jsonl"
    path.write_text(json.dumps(good) + "\n" + json.dumps({**good, "iteration": 11, "lr": "fast"}) + "\n")
    with pytest.raises(ArtifactParseError) as info:
        read_metrics(path)
    assert info.value.line == 2
    assert info.value.field == "lr"


def test_non_increasing_file_is_rejected(tmp_path):
    path = tmp_path / "m.jsonl"
    log = MetricsLog(path)
    log.append(row(20))
    with path.open("a") as f:
        f.write(path.read_text())
    with pytest.raises(ArtifactParseError) as info:
        read_metrics(path)
    assert info.value.line == 2
