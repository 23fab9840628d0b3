import json

import pytest

from larag.cli import main


@pytest.fixture()
def bench_files(tmp_path):
    out = tmp_path / "bench.json"
    code = main(["bench", "--domain", "home_iot", "--seed", "7",
                 "--out", str(out)])
    assert code == 0
    return out, out.with_suffix(".timeline.json"), tmp_path


def test_bench_writes_dataset_and_timeline(bench_files, capsys):
    dataset, timeline, _ = bench_files
    assert dataset.exists() and timeline.exists()
    pairs = json.loads(dataset.read_text())
    assert len(pairs) == 800


def test_bench_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["bench", "--seed", "7", "--out", str(a)]) == 0
    assert main(["bench", "--seed", "7", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.with_suffix(".timeline.json").read_bytes() == \
        b.with_suffix(".timeline.json").read_bytes()


def test_bench_prints_split(tmp_path, capsys):
    main(["bench", "--seed", "1", "--out", str(tmp_path / "d.json")])
    out = capsys.readouterr().out
    assert "detection 300 / counting 300 / summary 200" in out


def test_bench_complex_prints_frequencies(tmp_path, capsys):
    main(["bench", "--seed", "1", "--complex", "--out", str(tmp_path / "d.json")])
    out = capsys.readouterr().out
    assert "expression types:" in out


def test_bench_unknown_domain_usage_error(tmp_path):
    assert main(["bench", "--domain", "spaceship",
                 "--out", str(tmp_path / "d.json")]) == 2


def test_ingest_and_reingest(bench_files, capsys):
    _, timeline, tmp = bench_files
    db = tmp / "events.db"
    assert main(["ingest", str(timeline), "--db", str(db)]) == 0
    first = capsys.readouterr().out
    assert "inserted" in first and "skipped 0" in first
    assert main(["ingest", str(timeline), "--db", str(db)]) == 0
    second = capsys.readouterr().out
    assert "inserted 0" in second


def test_ingest_malformed_log_data_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    db = tmp_path / "events.db"
    assert main(["ingest", str(bad), "--db", str(db)]) == 1
    assert "bad log" in capsys.readouterr().err


def test_ingest_missing_file_usage_error(tmp_path):
    assert main(["ingest", str(tmp_path / "ghost.json"),
                 "--db", str(tmp_path / "db")]) == 2


def test_eval_larag_oracle_scores_100(bench_files, capsys):
    dataset, timeline, tmp = bench_files
    db = tmp / "events.db"
    main(["ingest", str(timeline), "--db", str(db)])
    capsys.readouterr()
    out_path = tmp / "report.json"
    code = main(["eval", "--dataset", str(dataset), "--db", str(db),
                 "--pipeline", "larag", "--out", str(out_path)])
    assert code == 0
    report = json.loads(out_path.read_text())
    assert report["per_category"]["detection"] == pytest.approx(100.0)
    assert report["per_category"]["counting"] == pytest.approx(100.0)
    assert report["per_category_n"] == {"detection": 300, "counting": 300,
                                        "summary": 200}
    table = capsys.readouterr().out
    assert "Detection (%) (n=300)" in table


def test_eval_rag_smoke(bench_files, capsys, tmp_path):
    dataset, timeline, tmp = bench_files
    db = tmp / "events.db"
    main(["ingest", str(timeline), "--db", str(db)])
    capsys.readouterr()
    small = tmp_path / "small.json"
    pairs = json.loads(dataset.read_text())[:20]
    small.write_text(json.dumps(pairs))
    assert main(["eval", "--dataset", str(small), "--db", str(db),
                 "--pipeline", "rag", "--k", "5"]) == 0


def test_eval_text2sql_smoke(bench_files, capsys, tmp_path):
    dataset, timeline, tmp = bench_files
    db = tmp / "events.db"
    main(["ingest", str(timeline), "--db", str(db)])
    capsys.readouterr()
    small = tmp_path / "small.json"
    pairs = json.loads(dataset.read_text())[:20]
    small.write_text(json.dumps(pairs))
    assert main(["eval", "--dataset", str(small), "--db", str(db),
                 "--pipeline", "text2sql"]) == 0


def test_eval_missing_db_usage_error(bench_files):
    dataset, _, tmp = bench_files
    assert main(["eval", "--dataset", str(dataset),
                 "--db", str(tmp / "ghost.db")]) == 2


def test_eval_missing_dataset_usage_error(tmp_path):
    assert main(["eval", "--dataset", str(tmp_path / "ghost.json"),
                 "--db", ":memory:"]) == 2


def test_eval_parallel_jobs(bench_files, capsys, tmp_path):
    dataset, timeline, tmp = bench_files
    db = tmp / "events.db"
    main(["ingest", str(timeline), "--db", str(db)])
    capsys.readouterr()
    small = tmp_path / "small.json"
    pairs = json.loads(dataset.read_text())[:40]
    small.write_text(json.dumps(pairs))
    assert main(["eval", "--dataset", str(small), "--db", str(db),
                 "--jobs", "4"]) == 0


def test_timeres_eval_prints_categories(capsys):
    assert main(["timeres-eval"]) == 0
    out = capsys.readouterr().out
    assert "explicit_time_ranges" in out
    assert "combined" in out
    assert "overall" in out


def test_anomaly_command(tmp_path, capsys):
    log = {
        "audio_id": "m1",
        "recording_start": "2025-01-01T00:00:00Z",
        "events": [{"tag": "machine", "start_s": 100.0 * i + 50,
                    "end_s": 100.0 * i + 51, "confidence": 0.9,
                    "loudness_lufs": -20.0} for i in range(20)]
        + [{"tag": "machine", "start_s": 40000.0, "end_s": 40001.0,
            "confidence": 0.9, "loudness_lufs": -60.0}],
    }
    path = tmp_path / "log.json"
    path.write_text(json.dumps(log))
    db = tmp_path / "events.db"
    main(["ingest", str(path), "--db", str(db)])
    capsys.readouterr()
    assert main(["anomaly", "--db", str(db), "--audio-id", "m1",
                 "--kind", "loudness"]) == 0
    out = capsys.readouterr().out
    assert "machine" in out and "loudness" in out


def test_anomaly_unknown_audio_data_error(tmp_path, bench_files, capsys):
    _, timeline, tmp = bench_files
    db = tmp / "events.db"
    main(["ingest", str(timeline), "--db", str(db)])
    assert main(["anomaly", "--db", str(db), "--audio-id", "ghost"]) == 1
