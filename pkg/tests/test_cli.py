import io
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from hdmonitor import cli
from hdmonitor.simharness import ScenarioSpec, gen_stream
from hdmonitor.streamcore import DataError


def _csv(path, X, header=False):
    with open(path, "w") as fh:
        if header:
            fh.write(",".join(f"x{j}" for j in range(X.shape[1])) + "\n")
        for row in X:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    return str(path)


def _lines(path):
    return [json.loads(s) for s in open(path).read().splitlines()]


# ---- CSV parsing -----------------------------------------------------------------

def test_csv_header_detection():
    rows = list(cli.iter_csv_rows(io.StringIO("a,b\n1.5,2\n3,4e-1\n")))
    np.testing.assert_array_equal(np.vstack(rows), [[1.5, 2.0], [3.0, 0.4]])


def test_csv_errors():
    with pytest.raises(DataError):
        list(cli.iter_csv_rows(io.StringIO("1,2\n3\n")))
    with pytest.raises(DataError):
        list(cli.iter_csv_rows(io.StringIO("1,2\n3,nan\n")))
    with pytest.raises(DataError):
        list(cli.iter_csv_rows(io.StringIO("1,2\n3,x\n")))
    with pytest.raises(DataError):
        list(cli.iter_csv_rows(io.StringIO("1,2,3\n"), p=2))


def test_session_round_trip(tmp_path):
    s = cli.SessionConfig(monitor={"n": 10, "p": 3, "q_set": [2]}, input="a.csv", grid=16, reps=2000)
    again = cli.SessionConfig.from_dict(json.loads(json.dumps(s.to_dict())))
    assert again == s


# ---- calibrate ---------------------------------------------------------------------

def test_calibrate_idempotent(tmp_path):
    args = ["calibrate", "--q", "2", "--T", "2", "--boundary", "T1", "--grid", "8",
            "--reps", "2000", "--cache-dir", str(tmp_path)]
    out1, out2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert cli.main(args + ["--output", str(out1)]) == 0
    files = sorted(tmp_path.glob("cv_*.json"))
    assert len(files) == 3  # one per boundary
    before = {f: f.read_bytes() for f in files}
    assert cli.main(args + ["--output", str(out2)]) == 0
    assert {f: f.read_bytes() for f in files} == before
    assert _lines(out1)[0]["status"] == "created"
    assert _lines(out2)[0]["status"] == "exists"
    assert _lines(out1)[0]["quantiles"] == _lines(out2)[0]["quantiles"]


def test_calibrate_odd_q(tmp_path):
    assert cli.main(["calibrate", "--q", "3", "--cache-dir", str(tmp_path)]) == cli.EXIT_USAGE


def test_calibrate_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    rc = cli.main(["calibrate", "--q", "2", "--grid", "8", "--reps", "2000",
                   "--cache-dir", str(blocker / "sub")])
    assert rc == cli.EXIT_USAGE


def test_bad_flag_is_usage_error():
    with pytest.raises(SystemExit) as e:
        cli.main(["train", "--n", "abc"])
    assert e.value.code == cli.EXIT_USAGE


# ---- train -------------------------------------------------------------------------

def test_train_constant_rows(tmp_path):
    f = _csv(tmp_path / "c.csv", np.ones((20, 4)))
    rc = cli.main(["train", "--input", f, "--q", "2", "--output", str(tmp_path / "s.json")])
    assert rc == cli.EXIT_DATA


def test_train_two_rows(tmp_path):
    f = _csv(tmp_path / "c.csv", np.random.default_rng(0).standard_normal((2, 4)))
    assert cli.main(["train", "--input", f, "--q", "2"]) == cli.EXIT_DATA


def test_train_writes_session(tmp_path):
    X = np.random.default_rng(1).standard_normal((30, 6))
    f = _csv(tmp_path / "x.csv", X, header=True)
    out = tmp_path / "s.json"
    assert cli.main(["train", "--input", f, "--q", "2,6", "--seed", "3", "--output", str(out)]) == 0
    s = json.loads(out.read_text())
    assert s["monitor"]["n"] == 30 and s["monitor"]["p"] == 6 and s["monitor"]["q_set"] == [2, 6]
    assert set(s["estimates"]["lq"]) == {"2", "6"}
    assert s["estimates"]["method"]["6"]["kind"] == "incomplete"
    out2 = tmp_path / "s2.json"
    cli.main(["train", "--input", f, "--q", "2,6", "--seed", "3", "--output", str(out2)])
    assert json.loads(out2.read_text())["estimates"] == s["estimates"]


@pytest.mark.slow
def test_train_frob_unbiased(tmp_path):
    vals = []
    for seed in range(40):
        X = np.random.default_rng(seed).standard_normal((100, 20))
        f = _csv(tmp_path / "x.csv", X)
        out = tmp_path / "s.json"
        assert cli.main(["train", "--input", f, "--q", "2", "--output", str(out)]) == 0
        vals.append(json.loads(out.read_text())["estimates"]["frob_sq"])
    se = np.std(vals, ddof=1) / math.sqrt(len(vals))
    assert abs(np.mean(vals) - 20.0) <= 3 * se


# ---- monitor / locate ----------------------------------------------------------------

def _session(tmp_path, X1, q="2", boundary="T2", alpha="0.1"):
    f1 = _csv(tmp_path / "phase1.csv", X1)
    sess = tmp_path / "session.json"
    rc = cli.main(["train", "--input", f1, "--q", q, "--boundary", boundary,
                   "--alpha", alpha, "--output", str(sess)])
    assert rc == 0
    return f1, str(sess)


def test_monitor_alarm_matches_harness(tmp_path, cache_dir):
    # replication 50 of this scenario alarms at k = 135 in the harness (L2 / T2)
    sp = ScenarioSpec(n=100, p=50, delta=4.0, r_sparsity=50, k_star=126, reps=60, seed=2031,
                      q_set=(2,), boundary="T2")
    X = gen_stream(sp, 50)
    f1, sess = _session(tmp_path, X[:100])
    f2 = _csv(tmp_path / "stream.csv", X[100:])
    log = tmp_path / "log.jsonl"
    rc = cli.main(["monitor", "--config", sess, "--phase1", f1, "--input", f2,
                   "--output", str(log), "--cache-dir", str(cache_dir)])
    assert rc == cli.EXIT_ALARM
    recs = _lines(log)
    assert recs[-1]["event"] == "alarm" and recs[-1]["k_alarm"] == 135
    assert [r["k"] for r in recs[:-1]] == list(range(101, 136))
    assert recs[-2]["decision"] == "alarm"

    out = tmp_path / "loc.jsonl"
    rc = cli.main(["locate", "--config", sess, "--phase1", f1, "--input", f2,
                   "--output", str(out), "--cache-dir", str(cache_dir)])
    assert rc == cli.EXIT_ALARM
    loc = _lines(out)[0]
    assert loc["k_alarm"] == 135 and loc["m_hat"] == recs[-1]["m_hat"]


def test_monitor_no_alarm_small_alpha(tmp_path, cache_dir):
    X = gen_stream(ScenarioSpec(n=100, p=50, seed=12, reps=1), 0)
    f1, sess = _session(tmp_path, X[:100], boundary="T1", alpha="0.01")
    f2 = _csv(tmp_path / "stream.csv", X[100:])
    log = tmp_path / "log.jsonl"
    rc = cli.main(["monitor", "--config", sess, "--phase1", f1, "--input", f2,
                   "--output", str(log), "--cache-dir", str(cache_dir)])
    assert rc == cli.EXIT_OK
    recs = _lines(log)
    assert recs[-1] == {"event": "end", "status": "no_alarm", "k_last": 200}


def test_monitor_truncated(tmp_path, cache_dir):
    X = gen_stream(ScenarioSpec(n=100, p=50, seed=12, reps=1), 0)
    f1, sess = _session(tmp_path, X[:100], boundary="T1", alpha="0.01")
    f2 = _csv(tmp_path / "stream.csv", X[100:150])
    log = tmp_path / "log.jsonl"
    rc = cli.main(["monitor", "--config", sess, "--phase1", f1, "--input", f2,
                   "--output", str(log), "--cache-dir", str(cache_dir)])
    assert rc == cli.EXIT_OK
    assert _lines(log)[-1]["status"] == "truncated"


def test_monitor_short_row(tmp_path, cache_dir):
    X = gen_stream(ScenarioSpec(n=100, p=50, seed=13, reps=1), 0)
    f1, sess = _session(tmp_path, X[:100], boundary="T1", alpha="0.01")
    stream = tmp_path / "stream.csv"
    _csv(stream, X[100:105])
    with open(stream, "a") as fh:
        fh.write(",".join("0.5" for _ in range(49)) + "\n")
    log = tmp_path / "log.jsonl"
    rc = cli.main(["monitor", "--config", sess, "--phase1", f1, "--input", str(stream),
                   "--output", str(log), "--cache-dir", str(cache_dir)])
    assert rc == cli.EXIT_DATA
    recs = _lines(log)
    assert [r["k"] for r in recs[:5]] == list(range(101, 106))
    assert recs[-1]["event"] == "error" and recs[-1]["k"] == 106


def test_monitor_wrong_phase1(tmp_path, cache_dir):
    X = gen_stream(ScenarioSpec(n=100, p=50, seed=13, reps=1), 0)
    f1, sess = _session(tmp_path, X[:100])
    other = _csv(tmp_path / "other.csv", X[1:101])
    rc = cli.main(["monitor", "--config", sess, "--phase1", other, "--input", f1,
                   "--cache-dir", str(cache_dir)])
    assert rc == cli.EXIT_DATA


def test_monitor_needs_estimates(tmp_path):
    assert cli.main(["monitor", "--n", "10", "--p", "2"]) == cli.EXIT_USAGE


# ---- simulate ----------------------------------------------------------------------

def test_simulate_zero_reps(tmp_path):
    assert cli.main(["simulate", "--reps", "0", "--output", str(tmp_path / "r.jsonl")]) == cli.EXIT_USAGE


def test_simulate_deterministic(tmp_path, cache_dir):
    base = ["simulate", "--n", "100", "--p", "20", "--q", "2", "--boundary", "T1",
            "--reps", "20", "--seed", "4", "--delta", "2", "--cache-dir", str(cache_dir)]
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert cli.main(base + ["--output", str(a)]) == 0
    assert cli.main(base + ["--output", str(b), "--workers", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()
    recs = _lines(a)
    assert recs[0]["spec"]["k_star"] == 126
    assert recs[1]["rule"] == "L2" and recs[1]["reps_used"] == 20


def test_console_script_help():
    r = subprocess.run([sys.executable, "-m", "hdmonitor.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("calibrate", "train", "monitor", "locate", "simulate"):
        assert cmd in r.stdout
