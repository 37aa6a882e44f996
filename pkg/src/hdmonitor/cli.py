"""Command-line interface.

Subcommands::

    hdmonitor calibrate  simulate and cache critical-value tables
    hdmonitor train      estimate Phase-I norms from a CSV block
    hdmonitor monitor    run the online monitor over a CSV stream (JSONL event log)
    hdmonitor locate     run the monitor and report the estimated change location
    hdmonitor simulate   size / power / ADT experiment

Exit codes: 0 finished without alarm, 10 alarm, 1 usage or configuration
error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import limitlaw
from .adaptive import AdaptiveMonitor
from .sigma_norm import NormEstimates, PhaseIError, data_fingerprint, estimate_norms
from .simharness import Rule, ScenarioSpec, default_k_star, run_experiment
from .streamcore import BOUNDARIES, ConfigError, DataError, MonitorConfig, MonitorError, Observation

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_ALARM = 10


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---- session config ----------------------------------------------------------

@dataclass
class SessionConfig:
    monitor: dict = field(default_factory=dict)
    input: str | None = None
    output: str | None = None
    cache_dir: str | None = None
    incomplete_N: int | None = None
    grid: int | None = None
    reps: int | None = None
    estimates: dict | None = None

    def to_dict(self) -> dict:
        return {
            "monitor": self.monitor,
            "input": self.input,
            "output": self.output,
            "cache_dir": self.cache_dir,
            "incomplete_N": self.incomplete_N,
            "grid": self.grid,
            "reps": self.reps,
            "estimates": self.estimates,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SessionConfig":
        known = {"monitor", "input", "output", "cache_dir", "incomplete_N", "grid", "reps", "estimates"}
        mon = dict(d.get("monitor", {}))
        # flat config files: monitor keys at top level
        for k in ("n", "p", "q_set", "T", "alpha", "boundary", "seed"):
            if k in d and k not in known:
                mon.setdefault(k, d[k])
        return cls(monitor=mon, **{k: d.get(k) for k in known - {"monitor"}})


def _parse_q(values):
    if not values:
        return None
    out = []
    for v in values:
        for tok in str(v).split(","):
            tok = tok.strip()
            if tok:
                try:
                    out.append(int(tok))
                except ValueError:
                    raise UsageError(f"--q expects integers, got {tok!r}") from None
    return tuple(out)


def load_session(args) -> SessionConfig:
    sess = SessionConfig()
    if getattr(args, "config", None):
        try:
            sess = SessionConfig.from_dict(json.loads(Path(args.config).read_text()))
        except (OSError, ValueError) as e:
            raise UsageError(f"cannot read config {args.config}: {e}") from e
    mon = sess.monitor
    for name, key in (("n", "n"), ("p", "p"), ("T", "T"), ("alpha", "alpha"),
                      ("boundary", "boundary"), ("seed", "seed")):
        v = getattr(args, name, None)
        if v is not None:
            mon[key] = v
    q = _parse_q(getattr(args, "q", None))
    if q is not None:
        mon["q_set"] = list(q)
    for name in ("input", "output", "cache_dir", "incomplete_N", "grid", "reps"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(sess, name, v)
    return sess


# ---- CSV ---------------------------------------------------------------------

def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def iter_csv_rows(fh, p: int | None = None):
    """Yield float rows; a first row with any non-numeric cell is a header."""
    width = p
    for lineno, cells in enumerate(csv.reader(fh), start=1):
        if not cells or all(not c.strip() for c in cells):
            continue
        if lineno == 1 and not all(_is_number(c) for c in cells):
            continue
        try:
            row = [float(c) for c in cells]
        except ValueError:
            raise DataError(f"line {lineno}: non-numeric entry") from None
        if width is None:
            width = len(row)
        if len(row) != width:
            raise DataError(f"line {lineno}: expected {width} columns, got {len(row)}")
        arr = np.asarray(row)
        if not np.all(np.isfinite(arr)):
            raise DataError(f"line {lineno}: non-finite entry")
        yield arr


@contextmanager
def _open_in(path):
    if path in (None, "-"):
        yield sys.stdin
    else:
        try:
            fh = open(path, newline="")
        except OSError as e:
            raise UsageError(f"cannot open input {path}: {e}") from e
        with fh:
            yield fh


@contextmanager
def _open_out(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            yield fh


def read_csv(path, p=None) -> np.ndarray:
    with _open_in(path) as fh:
        rows = list(iter_csv_rows(fh, p))
    if not rows:
        raise DataError(f"no data rows in {path}")
    return np.vstack(rows)


def _emit(fh, rec: dict):
    fh.write(json.dumps(rec) + "\n")
    fh.flush()


# ---- commands -------------------------------------------------------------------

def cmd_calibrate(args) -> int:
    qs = _parse_q(args.q) or (2, 6)
    for q in qs:
        if q < 2 or q % 2 or q > 8:
            raise ConfigError(f"q must be an even integer in [2, 8], got {q}")
    T = 2.0 if args.T is None else args.T
    grid = 32 if args.grid is None else args.grid
    R = 100_000 if args.reps is None else args.reps
    seed = 0 if args.seed is None else args.seed
    boundaries = [args.boundary] if args.boundary else list(BOUNDARIES)
    cache = limitlaw.default_cache_dir() if args.cache_dir is None else Path(args.cache_dir)
    try:
        cache.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise UsageError(f"cache directory {cache} is not writable: {e}") from e
    with _open_out(args.output) as out:
        for q in qs:
            for b in boundaries:
                key = limitlaw.table_key(q, T, b, grid, R, seed)
                path = limitlaw.table_path(cache, key)
                status = "exists" if path.exists() else "created"
                tab = limitlaw.get_table(q, T, b, grid, R, seed, cache)
                _emit(out, {"status": status, "path": str(path), "key": key,
                            "quantiles": {str(a): v for a, v in tab.quantiles.items()}})
    return EXIT_OK


def cmd_train(args) -> int:
    sess = load_session(args)
    X = read_csv(sess.input, sess.monitor.get("p"))
    n, p = X.shape
    if "n" in sess.monitor and int(sess.monitor["n"]) != n:
        raise DataError(f"--n={sess.monitor['n']} but the training CSV has {n} rows")
    q_set = tuple(sess.monitor.get("q_set", (2, 6)))
    if n < max(4, 2 * max(q_set)):
        raise DataError(f"n={n} rows cannot support q_set={q_set}: need n >= {max(4, 2 * max(q_set))}")
    seed = int(sess.monitor.get("seed", 0))
    est = estimate_norms(X, q_set, N=sess.incomplete_N, seed=seed)
    sess.monitor.update({"n": n, "p": p, "q_set": list(q_set)})
    sess.estimates = est.to_dict()
    with _open_out(sess.output) as out:
        out.write(json.dumps(sess.to_dict(), indent=2) + "\n")
    return EXIT_OK


def _build_monitor(sess: SessionConfig, phase1_path):
    if sess.estimates is None:
        raise UsageError("no Phase-I estimates: pass --config with the output of 'train'")
    est = NormEstimates.from_dict(sess.estimates)
    cfg = MonitorConfig.from_dict(sess.monitor)
    if phase1_path is None:
        raise UsageError("--phase1 CSV (the training rows) is required")
    X1 = read_csv(phase1_path, cfg.p)
    if est.fingerprint and data_fingerprint(X1) != est.fingerprint:
        raise DataError("Phase-I CSV does not match the data the estimates were trained on")
    missing = set(cfg.q_set) - set(est.lq)
    if missing:
        raise UsageError(f"estimates lack q in {sorted(missing)}; retrain with that q_set")
    mon = AdaptiveMonitor(cfg, grid=sess.grid, R=sess.reps or 100_000, cache_dir=sess.cache_dir)
    mon.fit(X1, est)
    return mon


def _run_stream(mon: AdaptiveMonitor, fh, out):
    cfg = mon.config
    alarm = None
    for row in iter_csv_rows(fh, cfg.p):
        k = mon.t_now + 1
        res = mon.step(Observation(k, row))
        rec = {"k": k,
               "stats": {str(q): v for q, v in res.stats.items()},
               "thresholds": {str(q): v for q, v in res.thresholds.items()},
               "decision": "alarm" if res.alarm else "continue"}
        if out is not None:
            _emit(out, rec)
        if res.alarm is not None:
            alarm = res.alarm
            break
        if k == cfg.horizon:
            break
    return alarm


def cmd_monitor(args) -> int:
    sess = load_session(args)
    mon = _build_monitor(sess, args.phase1)
    with _open_out(sess.output) as out, _open_in(sess.input) as fh:
        try:
            alarm = _run_stream(mon, fh, out)
        except DataError as e:
            _emit(out, {"event": "error", "k": mon.t_now + 1, "message": str(e)})
            raise
        if alarm is not None:
            _emit(out, {"event": "alarm", **alarm.to_dict()})
            return EXIT_ALARM
        status = "no_alarm" if mon.t_now == mon.config.horizon else "truncated"
        _emit(out, {"event": "end", "status": status, "k_last": mon.t_now})
    return EXIT_OK


def cmd_locate(args) -> int:
    sess = load_session(args)
    mon = _build_monitor(sess, args.phase1)
    with _open_in(sess.input) as fh:
        alarm = _run_stream(mon, fh, None)
    with _open_out(sess.output) as out:
        if alarm is None:
            _emit(out, {"event": "no_alarm", "k_last": mon.t_now})
            return EXIT_OK
        q = args.locate_q if args.locate_q is not None else alarm.q_located
        _emit(out, {"event": "location", "k_alarm": alarm.k_alarm, "q": q,
                    "m_hat": mon.locate_change(q)})
    return EXIT_ALARM


def cmd_simulate(args) -> int:
    sess = load_session(args)
    m = sess.monitor
    n = int(m.get("n", 100))
    k_star = args.k_star
    if k_star is None and (args.delta or 0) > 0:
        k_star = default_k_star(n)
    spec = ScenarioSpec(
        n=n, p=int(m.get("p", 50)), T=float(m.get("T", 2.0)), rho=args.rho, delta=args.delta,
        r_sparsity=args.r_sparsity if args.r_sparsity is not None else int(m.get("p", 50)),
        k_star=k_star, reps=500 if args.reps is None else args.reps,
        alpha=float(m.get("alpha", 0.1)), boundary=m.get("boundary", "T1"),
        q_set=tuple(m.get("q_set", (2, 6))), seed=int(m.get("seed", 0)),
    )
    rules = Rule.standard(spec.q_set) if args.all_rules else None
    rep = run_experiment(spec, rules, grid=sess.grid, R=args.cv_reps,
                         cache_dir=sess.cache_dir, incomplete_N=sess.incomplete_N,
                         workers=args.workers)
    with _open_out(sess.output) as out:
        _emit(out, {"spec": rep.spec, "excluded": rep.excluded})
        for r in rep.to_dict()["rules"]:
            _emit(out, r)
    return EXIT_OK


# ---- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON session config (e.g. the output of 'train')")
    common.add_argument("--n", type=int, help="Phase-I length")
    common.add_argument("--p", type=int, help="dimension")
    common.add_argument("--q", action="append", help="even q values, comma separated or repeated")
    common.add_argument("--T", type=float, help="horizon multiplier (default 2)")
    common.add_argument("--alpha", type=float, help="global size (default 0.1)")
    common.add_argument("--boundary", choices=BOUNDARIES)
    common.add_argument("--grid", type=int, help="limit-grid points per unit time")
    common.add_argument("--reps", type=int, help="replications for critical-value simulation")
    common.add_argument("--seed", type=int)
    common.add_argument("--cache-dir", dest="cache_dir", help="critical-value cache (env HDMONITOR_CACHE)")
    common.add_argument("--input", help="CSV path or '-' for stdin")
    common.add_argument("--output", help="output path (default stdout)")
    common.add_argument("--incomplete-N", dest="incomplete_N", type=int,
                        help="tuple count for incomplete norm estimates (default 50 n)")

    p = _Parser(prog="hdmonitor", description="Closed-end high-dimensional mean-shift monitoring")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    s = sub.add_parser("calibrate", parents=[common], help="simulate critical-value tables")
    s.set_defaults(func=cmd_calibrate)
    s = sub.add_parser("train", parents=[common], help="estimate Phase-I norms")
    s.set_defaults(func=cmd_train)
    for name, func in (("monitor", cmd_monitor), ("locate", cmd_locate)):
        s = sub.add_parser(name, parents=[common], help=f"{name} a stream")
        s.add_argument("--phase1", help="CSV with the Phase-I rows used by 'train'")
        if name == "locate":
            s.add_argument("--locate-q", dest="locate_q", type=int,
                           help="statistic used for the location (default: triggering q)")
        s.set_defaults(func=func)
    s = sub.add_parser("simulate", parents=[common], help="size/power/ADT experiment")
    s.add_argument("--rho", type=float, default=0.0)
    s.add_argument("--delta", type=float, default=0.0)
    s.add_argument("--r-sparsity", dest="r_sparsity", type=int)
    s.add_argument("--k-star", dest="k_star", type=int)
    s.add_argument("--cv-reps", dest="cv_reps", type=int, default=100_000,
                   help="replications for the critical values (--reps counts experiment runs, default 500)")
    s.add_argument("--all-rules", action="store_true", help="report every q / Comb / boundary column")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as e:
        print(f"hdmonitor: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, PhaseIError) as e:
        print(f"hdmonitor: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except MonitorError as e:
        print(f"hdmonitor: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
