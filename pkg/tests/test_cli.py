import json
import subprocess
import sys

import numpy as np
import pytest

from autogain.cli import main, read_trajectory, InputFormatError
from autogain.simulation import bell_profile
from autogain.transfer import GainTable, format_gain_csv, read_gain_csv

SMALL = ["--trials", "60", "--seed", "3"]


def simulate(tmp_path, *extra, name="run"):
    out = tmp_path / name
    assert main(["simulate", "--config", "study1", "--out", str(out), *SMALL, *extra]) == 0
    return out


def event(trial, t, dx, dy=0, cx=900.0, cy=400.0, w=5.0, click=False):
    return json.dumps(
        {"trial": trial, "t_ms": t, "dx": dx, "dy": dy, "target_cx": cx, "target_cy": cy, "target_w_mm": w, "click": click}
    )


def straight_trial(trial=0):
    """Noiseless bell towards a target 70 mm right of the screen centre."""
    res_in, res_out = 400 / 25.4, 1280 / 358.0
    cum = np.cumsum(bell_profile(40) * 70.0 * res_in)
    steps = np.diff(np.floor(cum + 0.5).astype(int), prepend=0)
    lines, t = [], 0.0
    for i, dx in enumerate(steps):
        lines.append(event(trial, t, int(dx), cx=640 + 70 * res_out, click=i == len(steps) - 1))
        t += 8.0
    return lines


class TestSimulate:
    def test_artifacts(self, tmp_path):
        out = simulate(tmp_path, "--snapshot-every", "20")
        names = sorted(p.name for p in out.iterdir())
        assert names == ["config.json", "gains", "gains_final.csv", "metrics.csv", "submovements.jsonl", "trials.jsonl"]
        assert sorted(p.name for p in (out / "gains").iterdir()) == ["trial_20.csv", "trial_40.csv", "trial_60.csv"]
        metrics = (out / "metrics.csv").read_bytes()
        assert b"\r" not in metrics
        lines = metrics.decode().splitlines()
        assert lines[0] == "block,mean_abs_R_mm,submovements_per_trial,completion_proxy_s"
        assert len(lines) == 2  # 60 trials, blocks of 80
        cfg = json.loads((out / "config.json").read_text())
        assert cfg["seed"] == 3 and cfg["session"]["trials"] == 60

    def test_trial_log_format(self, tmp_path):
        out = simulate(tmp_path)
        recs = [json.loads(l) for l in (out / "trials.jsonl").read_text().splitlines()]
        assert set(recs[0]) == {"trial", "t_ms", "dx", "dy", "target_cx", "target_cy", "target_w_mm", "click"}
        assert recs[0]["t_ms"] == 0.0
        by_trial = {}
        for r in recs:
            by_trial.setdefault(r["trial"], []).append(r)
        assert sorted(by_trial) == list(range(60))
        for evs in by_trial.values():
            assert sum(e["click"] for e in evs) <= 1
            assert not any(e["click"] for e in evs[:-1])

    def test_deterministic_bytes(self, tmp_path):
        a = simulate(tmp_path, name="a")
        b = simulate(tmp_path, name="b")
        for name in ("metrics.csv", "trials.jsonl", "gains_final.csv", "submovements.jsonl"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_zero_trials(self, tmp_path):
        out = tmp_path / "z"
        assert main(["simulate", "--out", str(out), "--trials", "0"]) == 0
        assert (out / "metrics.csv").read_text() == "block,mean_abs_R_mm,submovements_per_trial,completion_proxy_s\n"

    def test_missing_config(self, tmp_path, capsys):
        assert main(["simulate", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2
        assert "not found" in capsys.readouterr().err

    def test_invalid_config_names_field(self, tmp_path, capsys):
        path = tmp_path / "c.json"
        path.write_text('{"kalman": {"r": 0}}')
        assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
        assert "kalman.r" in capsys.readouterr().err
        assert not (tmp_path / "o").exists()

    def test_bad_flag(self):
        assert main(["simulate", "--trials", "many"]) == 2
        assert main([]) == 2

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["simulate", "--out", str(blocker / "sub"), "--trials", "1"]) == 3

    def test_sweep(self, tmp_path):
        sweep = tmp_path / "sweep.json"
        sweep.write_text(json.dumps([{"optimizer": {"c": 0}}, {"seed": 8}]))
        out = tmp_path / "sw"
        assert main(["simulate", "--out", str(out), "--trials", "20", "--sweep", str(sweep), "--jobs", "2"]) == 0
        zero = read_gain_csv(out / "sweep_0" / "gains_final.csv")
        assert np.all(zero.gains == 1.0)
        assert json.loads((out / "sweep_1" / "config.json").read_text())["seed"] == 8

    def test_sweep_validated_up_front(self, tmp_path):
        sweep = tmp_path / "sweep.json"
        sweep.write_text(json.dumps([{"seed": 1}, {"user": {"alpha": 0}}]))
        assert main(["simulate", "--out", str(tmp_path / "sw"), "--sweep", str(sweep)]) == 2
        assert not (tmp_path / "sw").exists()


class TestReplay:
    def test_round_trip(self, tmp_path):
        out = simulate(tmp_path)
        rep = tmp_path / "rep"
        assert main(["replay", str(out / "trials.jsonl"), "--config", str(out / "config.json"), "--out", str(rep)]) == 0
        assert (rep / "gains_final.csv").read_bytes() == (out / "gains_final.csv").read_bytes()
        assert (rep / "submovements.jsonl").read_bytes() == (out / "submovements.jsonl").read_bytes()

    def test_straight_trial(self, tmp_path):
        log = tmp_path / "t.jsonl"
        log.write_text("\n".join(straight_trial()) + "\n")
        assert main(["replay", str(log), "--out", str(tmp_path / "r")]) == 0
        reports = [json.loads(l) for l in (tmp_path / "r" / "submovements.jsonl").read_text().splitlines()]
        assert len(reports) == 1
        assert reports[0]["class"] == "normal" and reports[0]["ballistic"] and not reports[0]["clutched"]

    def test_mid_trial_gap(self, tmp_path):
        # two strokes separated by a 200 ms lift; the first is clutched
        first = [json.loads(l) for l in straight_trial(0)]
        second = [json.loads(l) for l in straight_trial(0)]
        t_end = first[-1]["t_ms"]
        for r in first:
            r["click"] = False
        for r in second:
            r["t_ms"] += t_end + 200.0
        log = tmp_path / "gap.jsonl"
        log.write_text("".join(json.dumps(r) + "\n" for r in first + second))
        assert main(["replay", str(log), "--out", str(tmp_path / "r")]) == 0
        reports = [json.loads(l) for l in (tmp_path / "r" / "submovements.jsonl").read_text().splitlines()]
        assert len(reports) == 2
        assert reports[0]["clutched"] and reports[0]["class"] in ("interrupted", "unaimed")
        assert not reports[1]["clutched"]

    def test_no_click_means_no_update(self, tmp_path):
        lines = [l.replace('"click": true', '"click": false') for l in straight_trial()]
        log = tmp_path / "t.jsonl"
        log.write_text("\n".join(lines) + "\n")
        assert main(["replay", str(log), "--out", str(tmp_path / "r")]) == 0
        g = read_gain_csv(tmp_path / "r" / "gains_final.csv")
        assert np.all(g.gains == 1.0) and len(g) == 64

    @pytest.mark.parametrize(
        "bad, lineno",
        [
            ("{not json", 2),
            ('{"trial": 0}', 2),
            (event(0, 8.0, 1.5), 2),
            (event(0, 8.0, 1, click="yes"), 2),
            (event(0, 8.0, 1, w=0.0), 2),
            (event(0, 8.0, 1, cx=1.0), 2),
            (event(0, -5.0, 1), 2),
        ],
    )
    def test_malformed_line(self, tmp_path, capsys, bad, lineno):
        log = tmp_path / "t.jsonl"
        log.write_text(event(0, 0.0, 1) + "\n" + bad + "\n")
        assert main(["replay", str(log), "--out", str(tmp_path / "r")]) == 2
        assert f"line {lineno}" in capsys.readouterr().err

    def test_non_contiguous_trial(self):
        lines = [event(0, 0, 1), event(1, 0, 1), event(0, 8, 1)]
        with pytest.raises(InputFormatError, match="line 3"):
            read_trajectory(lines)

    def test_missing_log(self, tmp_path):
        assert main(["replay", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "r")]) == 3


class TestAnalyze:
    def test_single_trial(self, tmp_path, capsys):
        out = simulate(tmp_path)
        capsys.readouterr()
        args = ["analyze", str(out / "trials.jsonl"), "--config", str(out / "config.json")]
        assert main(args + ["--trial", "5"]) == 0
        lines = capsys.readouterr().out.splitlines()
        expected = [l for l in (out / "submovements.jsonl").read_text().splitlines() if json.loads(l)["trial"] == 5]
        assert lines == expected
        assert main(args + ["--trial", "999"]) == 2


class TestExport:
    def test_constant_table(self, tmp_path, capsys):
        path = tmp_path / "g.csv"
        path.write_text(format_gain_csv(GainTable.constant(0.0079, 4)))
        assert main(["export", str(path)]) == 0
        out = capsys.readouterr().out
        assert "min gain: 1\n" in out and "max gain: 1\n" in out
        assert "[0.0079, 0.0158)" in out

    def test_peak_speed(self, tmp_path, capsys):
        path = tmp_path / "g.csv"
        path.write_text(format_gain_csv(GainTable(0.01, [1.0, 1.5, 3.0, 2.0])))
        assert main(["export", str(path)]) == 0
        assert "peak gain speed: 0.0250 m/s (bin 2)" in capsys.readouterr().out

    def test_session_table(self, tmp_path, capsys):
        out = simulate(tmp_path)
        capsys.readouterr()
        assert main(["export", str(out / "gains_final.csv")]) == 0
        assert "m/s" in capsys.readouterr().out

    @pytest.mark.parametrize("text", ["", "bin_start_mps,gain\n0.0,x\n0.1,1\n"])
    def test_malformed(self, tmp_path, text):
        path = tmp_path / "g.csv"
        path.write_text(text)
        assert main(["export", str(path)]) == 2


def test_console_script_module():
    proc = subprocess.run([sys.executable, "-m", "autogain.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "simulate" in proc.stdout and "export" in proc.stdout
