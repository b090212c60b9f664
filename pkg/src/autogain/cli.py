"""Command-line entry point.

    autogain simulate --config study1 --out runs/s1 --seed 42
    autogain replay runs/s1/trials.jsonl --config runs/s1/config.json --out runs/r1
    autogain analyze runs/s1/trials.jsonl --config runs/s1/config.json --trial 10
    autogain export runs/s1/gains_final.csv

Exit status: 0 on success, 2 for bad arguments or invalid input files,
3 for I/O failures.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config as config_mod
from .analysis import TargetSpec
from .config import Config, ConfigError
from .pipeline import AutoGain, record_report
from .simulation import run_session
from .transfer import GainTable, InputEvent, format_gain_csv, read_gain_csv

log = logging.getLogger("autogain")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3

METRICS_HEADER = ["block", "mean_abs_R_mm", "submovements_per_trial", "completion_proxy_s"]


class InputFormatError(ValueError):
    pass


# -- trajectory logs ------------------------------------------------------


@dataclass
class LoggedTrial:
    trial: int
    target: TargetSpec
    events: list[InputEvent]
    clicked: bool


def event_lines(trial: int, events, target: TargetSpec, hit: bool):
    """JSONL lines for one trial of the trajectory log."""
    last = len(events) - 1
    for i, e in enumerate(events):
        yield json.dumps(
            {
                "trial": trial,
                "t_ms": e.t,
                "dx": e.dx,
                "dy": e.dy,
                "target_cx": target.cx,
                "target_cy": target.cy,
                "target_w_mm": target.width,
                "click": bool(hit and i == last),
            }
        )


_NUMBER_FIELDS = ("t_ms", "target_cx", "target_cy", "target_w_mm")


def _parse_event(lineno: int, line: str) -> dict:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise InputFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(rec, dict):
        raise InputFormatError(f"line {lineno}: expected a JSON object")
    for key in ("trial", "dx", "dy"):
        v = rec.get(key)
        if isinstance(v, bool) or not isinstance(v, int):
            raise InputFormatError(f"line {lineno}: '{key}' must be an integer")
    for key in _NUMBER_FIELDS:
        v = rec.get(key)
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise InputFormatError(f"line {lineno}: '{key}' must be a finite number")
    if not rec["target_w_mm"] > 0:
        raise InputFormatError(f"line {lineno}: 'target_w_mm' must be > 0")
    if not isinstance(rec.get("click"), bool):
        raise InputFormatError(f"line {lineno}: 'click' must be true or false")
    return rec


def read_trajectory(stream) -> list[LoggedTrial]:
    """Parse a trajectory log. Events of a trial must be contiguous, share one
    target and have non-decreasing timestamps."""
    trials: list[LoggedTrial] = []
    seen: set[int] = set()
    last_t = 0.0
    for lineno, line in enumerate(stream, 1):
        if not line.strip():
            continue
        rec = _parse_event(lineno, line)
        target = TargetSpec(float(rec["target_cx"]), float(rec["target_cy"]), float(rec["target_w_mm"]))
        ev = InputEvent(float(rec["t_ms"]), rec["dx"], rec["dy"])
        cur = trials[-1] if trials else None
        if cur is None or rec["trial"] != cur.trial:
            if rec["trial"] in seen:
                raise InputFormatError(f"line {lineno}: trial {rec['trial']} is not contiguous")
            seen.add(rec["trial"])
            cur = LoggedTrial(rec["trial"], target, [], False)
            trials.append(cur)
        else:
            if target != cur.target:
                raise InputFormatError(f"line {lineno}: target changed within trial {cur.trial}")
            if ev.t < last_t:
                raise InputFormatError(f"line {lineno}: timestamp goes backwards")
        last_t = ev.t
        cur.events.append(ev)
        cur.clicked = cur.clicked or rec["click"]
    return trials


def replay_trials(cfg: Config, trials: list[LoggedTrial], on_records=None) -> AutoGain:
    """Feed logged trials through a fresh engine. Trials without a click are
    treated as aborted: analysed but not used for updates."""
    engine = AutoGain(cfg)
    for t in trials:
        engine.begin_trial()
        for ev in t.events:
            engine.move(ev)
        result = engine.end_trial(t.target, completed=t.clicked)
        if on_records is not None:
            on_records(t.trial, result.records)
    return engine


# -- output helpers -------------------------------------------------------


def metrics_csv(blocks) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for b in blocks:
        w.writerow([b.block, repr(b.mean_abs_R_mm), repr(b.submovements_per_trial), repr(b.completion_proxy_s)])
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(text)


def report_lines(trial: int, records):
    for i, rec in enumerate(records):
        yield json.dumps(record_report(trial, i, rec))


def summarize_table(g: GainTable) -> str:
    lines = ["bin  speed_range_mps       gain"]
    for j, (lo, gain) in enumerate(zip(g.bin_starts, g.gains)):
        lines.append(f"{j:3d}  [{lo:.4f}, {lo + g.bin_width:.4f})  {gain:.6g}")
    peak = int(np.argmax(g.gains))
    lines.append(f"bins: {len(g)}  bin width: {g.bin_width:g} m/s")
    lines.append(f"min gain: {g.gains.min():.6g}")
    lines.append(f"max gain: {g.gains.max():.6g}")
    lines.append(f"peak gain speed: {g.bin_centers[peak]:.4f} m/s (bin {peak})")
    return "\n".join(lines) + "\n"


# -- commands -------------------------------------------------------------


def _load_config(args) -> Config:
    cfg = config_mod.load(args.config) if args.config else Config()
    overrides: dict = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    session = {}
    if getattr(args, "trials", None) is not None:
        session["trials"] = args.trials
    if getattr(args, "snapshot_every", None) is not None:
        session["snapshot_every"] = args.snapshot_every
    if session:
        overrides["session"] = session
    return cfg.with_overrides(overrides) if overrides else cfg


def simulate_to(cfg: Config, out: Path) -> None:
    """Run one session and write all artifacts under ``out``."""
    gains_dir = out / "gains"
    gains_dir.mkdir(parents=True, exist_ok=True)
    _write(out / "config.json", cfg.to_json())
    with open(out / "trials.jsonl", "w", newline="\n", encoding="utf-8") as traj, open(
        out / "submovements.jsonl", "w", newline="\n", encoding="utf-8"
    ) as subs:

        def on_trial(i, trial, result, engine):
            for line in event_lines(i, trial.events, trial.task.target, trial.hit):
                traj.write(line + "\n")
            for line in report_lines(i, result.records):
                subs.write(line + "\n")
            every = cfg.session.snapshot_every
            if every and (i + 1) % every == 0:
                _write(gains_dir / f"trial_{i + 1}.csv", format_gain_csv(engine.table))

        result = run_session(cfg, on_trial=on_trial, keep_trials=False)
    _write(out / "metrics.csv", metrics_csv(result.metrics.blocks))
    _write(out / "gains_final.csv", format_gain_csv(result.final_table))
    m = result.metrics
    log.info(
        "%d trials, %d aborted, final p %.4f, classes %s",
        cfg.session.trials,
        m.aborted,
        m.p_trace[-1] if m.p_trace else cfg.kalman.p0,
        m.class_counts,
    )


def _sweep_job(job):
    cfg_dict, out = job
    simulate_to(config_mod.from_dict(cfg_dict), Path(out))
    return out


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    if args.sweep is None:
        simulate_to(cfg, out)
        return EXIT_OK
    try:
        overrides = json.loads(Path(args.sweep).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"sweep file: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(overrides, list) or not all(isinstance(o, dict) for o in overrides):
        raise ConfigError("sweep file: expected a JSON list of override objects")
    # validate every variant before starting any work
    variants = [cfg.with_overrides(o) for o in overrides]
    jobs = [(v.to_dict(), str(out / f"sweep_{k}")) for k, v in enumerate(variants)]
    with ProcessPoolExecutor(max_workers=args.jobs) as pool:
        for done in pool.map(_sweep_job, jobs):
            log.info("finished %s", done)
    return EXIT_OK


def _read_log(path) -> list[LoggedTrial]:
    with open(path, encoding="utf-8") as fh:
        return read_trajectory(fh)


def cmd_replay(args) -> int:
    cfg = _load_config(args)
    trials = _read_log(args.log)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines: list[str] = []
    engine = replay_trials(cfg, trials, lambda t, recs: lines.extend(report_lines(t, recs)))
    _write(out / "gains_final.csv", format_gain_csv(engine.table))
    _write(out / "submovements.jsonl", "".join(line + "\n" for line in lines))
    log.info("replayed %d trials, final p %.4f", len(trials), engine.filter.p)
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = _load_config(args)
    trials = _read_log(args.log)
    if args.trial is not None and args.trial not in {t.trial for t in trials}:
        raise InputFormatError(f"trial {args.trial} not found in {args.log}")

    def emit(trial, records):
        if args.trial is None or trial == args.trial:
            for line in report_lines(trial, records):
                sys.stdout.write(line + "\n")

    replay_trials(cfg, trials, emit)
    return EXIT_OK


def cmd_export(args) -> int:
    g = read_gain_csv(args.gains)
    sys.stdout.write(summarize_table(g))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="autogain", description="Adaptive speed-binned CD gain toolkit")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    sub = parser.add_subparsers(dest="command", required=True)

    def config_flag(p):
        p.add_argument("--config", metavar="PATH", help="session config JSON, or a preset name (default, study1, study2)")

    p = sub.add_parser("simulate", help="run a synthetic-user session")
    config_flag(p)
    p.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--trials", type=int, help="override the number of trials")
    p.add_argument("--snapshot-every", type=int, metavar="N", help="write gains/trial_<n>.csv every N trials")
    p.add_argument("--sweep", metavar="PATH", help="JSON list of config overrides, one isolated session each")
    p.add_argument("--jobs", type=int, default=None, help="worker processes for --sweep")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replay", help="run a recorded trajectory log through the update pipeline")
    p.add_argument("log", metavar="TRIALS_JSONL")
    config_flag(p)
    p.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("analyze", help="print the submovement report of a trajectory log")
    p.add_argument("log", metavar="TRIALS_JSONL")
    config_flag(p)
    p.add_argument("--trial", type=int, help="only report this trial")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("export", help="summarize a gain table CSV")
    p.add_argument("gains", metavar="GAINS_CSV")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InputFormatError) as exc:
        print(f"autogain: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        # malformed gain CSV and other content errors
        print(f"autogain: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"autogain: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
