from __future__ import annotations

import json

import pytest
from filelock import FileLock

from serialanon import io
from serialanon.cli import EXIT_OK, EXIT_USAGE, EXIT_VIOLATION, main
from serialanon.model import LinkageHistory


def _stats(tmp_path, entries):
    path = tmp_path / "stats.json"
    io.write_statistics(LinkageHistory({("o2", "chlamydia"): entries}), path)
    return path


def test_audit_groups_of_two_fails(tmp_path, capsys):
    path = _stats(tmp_path, [(1, 2, 1), (2, 2, 1)])
    assert main(["audit", "--stats", str(path), "--ell", "2"]) == EXIT_VIOLATION
    assert "o2,chlamydia,3/4" in capsys.readouterr().out


def test_audit_groups_of_four_passes(tmp_path):
    path = _stats(tmp_path, [(1, 4, 1), (2, 4, 1)])
    assert main(["audit", "--stats", str(path), "--ell", "2"]) == EXIT_OK


def test_schedule_geometric(capsys):
    assert main(["schedule", "--ell", "2", "--strategy", "geometric", "--alpha", "3", "--releases", "2"]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines == ["k,ratio,size", "1,6,6", "2,7.5,8"]


def test_schedule_needs_strategy_params(capsys):
    assert main(["schedule", "--ell", "2", "--strategy", "constant_ratio", "--releases", "2"]) == EXIT_USAGE


def test_verify(tmp_path, capsys):
    sc = tmp_path / "sc.json"
    sc.write_text(json.dumps({"target": "s", "releases": [{"counts": {"s": 1, "f": 1}}, {"counts": {"s": 1, "f": 1}}]}))
    assert main(["verify", "--scenario", str(sc)]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out == {"closed_form": "3/4", "oracle": "3/4", "equal": True}
    assert main(["verify", "--scenario", str(sc), "--budget", "2"]) == EXIT_USAGE


@pytest.fixture
def pipeline(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"total_records": 1200, "num_releases": 3, "registration_pool_size": 100}))
    data = tmp_path / "data"
    assert main(["generate", "--spec", str(spec), "--seed", "3", "--out", str(data)]) == EXIT_OK
    params = tmp_path / "params.json"
    params.write_text(json.dumps({"ell": 2, "strategy": "geometric", "alpha": 2, "seed": 5}))
    return tmp_path, data, params


def _anonymize(tmp, data, params, k, extra=()):
    return main(
        [
            "anonymize",
            "--release", str(data / f"T_{k}.csv"),
            "--stats", str(tmp / "stats.json"),
            "--params", str(params),
            "--registration", str(data / "registration.csv"),
            "--transient", str(data / "transient.txt"),
            "--out", str(tmp / f"A_{k}.csv"),
            "--report", str(tmp / f"R_{k}.json"),
            *extra,
        ]
    )


def test_pipeline_end_to_end(pipeline, capsys):
    tmp, data, params = pipeline
    for k in (1, 2, 3):
        assert _anonymize(tmp, data, params, k) == EXIT_OK
    assert main(["audit", "--stats", str(tmp / "stats.json"), "--ell", "2"]) == EXIT_OK
    report = json.loads((tmp / "R_3.json").read_text())
    assert report["release_index"] == 3 and report["version"] == 1
    capsys.readouterr()
    assert main(["evaluate", "--raw", str(data / "T_3.csv"), "--anon", str(tmp / "A_3.csv"), "--queries", "200", "--seed", "1"]) == EXIT_OK
    metrics = json.loads(capsys.readouterr().out)
    assert metrics["query_count"] == 200
    assert main(["evaluate", "--raw", str(data / "T_3.csv"), "--anon", str(tmp / "A_3.csv"), "--queries", "20", "--seed", "1", "--format", "csv"]) == EXIT_OK
    header, row = capsys.readouterr().out.strip().splitlines()
    assert header.startswith("average_relative_error,")


def test_anonymize_refuses_old_release(pipeline, capsys):
    tmp, data, params = pipeline
    assert _anonymize(tmp, data, params, 2) == EXIT_OK
    before = (tmp / "stats.json").read_text()
    assert _anonymize(tmp, data, params, 1) == EXIT_USAGE
    assert _anonymize(tmp, data, params, 2) == EXIT_USAGE
    assert (tmp / "stats.json").read_text() == before
    assert "refusing" in capsys.readouterr().err


def test_anonymize_respects_lock(pipeline):
    tmp, data, params = pipeline
    with FileLock(str(tmp / "stats.json") + ".lock"):
        assert _anonymize(tmp, data, params, 1, ["--lock-timeout", "0.1"]) == EXIT_USAGE
    assert not (tmp / "stats.json").exists()


def test_anonymize_is_deterministic(pipeline):
    tmp, data, params = pipeline
    outputs = []
    for run in range(2):
        (tmp / "stats.json").unlink(missing_ok=True)
        assert _anonymize(tmp, data, params, 1) == EXIT_OK
        outputs.append(((tmp / "A_1.csv").read_text(), (tmp / "stats.json").read_text()))
    assert outputs[0] == outputs[1]


def test_generate_requires_seed(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["generate", "--out", str(tmp_path)])
    assert exc.value.code == EXIT_USAGE


def test_bad_params_file(tmp_path, pipeline):
    tmp, data, _ = pipeline
    bad = tmp / "bad.json"
    bad.write_text(json.dumps({"ell": 2, "strategy": "geometric", "alpha": 2}))
    assert _anonymize(tmp, data, bad, 1) == EXIT_USAGE
