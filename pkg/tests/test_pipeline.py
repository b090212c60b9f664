import json

import numpy as np
import pytest

from autogain.analysis import TargetSpec
from autogain.config import Config
from autogain.pipeline import AutoGain, attach_lifts, record_report
from autogain.segmentation import SubmovementSpan
from autogain.simulation import bell_profile
from autogain.transfer import InputEvent


def bell_events(amp_counts, n=40, t0=0.0, dt=8.0):
    cum = np.cumsum(bell_profile(n) * amp_counts)
    steps = np.diff(np.floor(cum + 0.5).astype(int), prepend=0)
    return [InputEvent(t0 + i * dt, int(s), 0) for i, s in enumerate(steps)]


def run(engine, events, target, completed=True):
    engine.begin_trial()
    for e in events:
        engine.move(e)
    return engine.end_trial(target, completed)


def test_attach_lifts():
    spans = [SubmovementSpan(0, 5, 10), SubmovementSpan(10, 15, 20)]
    times = [8.0 * i for i in range(21)]
    assert attach_lifts(spans, times, 130.0) == spans
    times = times[:11] + [t + 200 for t in times[11:]]
    moved = attach_lifts(spans, times, 130.0)
    assert moved == [SubmovementSpan(0, 5, 11), SubmovementSpan(11, 15, 20)]


class TestEngine:
    def setup_method(self):
        self.cfg = Config()
        self.engine = AutoGain(self.cfg)
        cx, cy = self.engine.cursor.position
        # 80 mm to the right; the stroke covers 75 mm of it
        self.target = TargetSpec(cx + 80 * self.engine.device.res_out, cy, 4.0)
        self.events = bell_events(75 * self.cfg.device.res_in)

    def test_single_stroke(self):
        res = run(self.engine, self.events, self.target)
        assert len(res.records) == 1
        r = res.records[0]
        assert r.cls.value == "normal" and r.ballistic
        assert r.d_target == pytest.approx(80.0)
        assert r.d_c == pytest.approx(75.0, abs=0.1)
        # first update of p from 1.0 toward 75/80
        k = 1.2 / 41.2
        assert res.p == pytest.approx(1.0 + k * (r.d_c / 80.0 - 1.0))
        assert r.aiming_error == pytest.approx(res.p * 80.0 - r.d_c)

    def test_update_touches_only_used_bins(self):
        res = run(self.engine, self.events, self.target)
        used = res.records[0].occupancy
        changed = np.flatnonzero(self.engine.table.gains != 1.0)
        assert set(changed) <= set(np.flatnonzero(used))
        assert len(changed) > 0
        np.testing.assert_allclose(
            self.engine.table.gains[changed], 1.0 + 5e-5 * res.records[0].aiming_error
        )

    def test_incomplete_trial_changes_nothing(self):
        res = run(self.engine, self.events, self.target, completed=False)
        assert res.batch is None and res.p == 1.0
        assert np.all(self.engine.table.gains == 1.0)
        assert res.records[0].aiming_error is not None

    def test_empty_trial(self):
        res = run(self.engine, [], self.target)
        assert res.records == [] and res.batch is None

    def test_report_is_json(self):
        res = run(self.engine, self.events, self.target)
        line = json.loads(json.dumps(record_report(0, 0, res.records[0])))
        assert set(line) == {
            "trial", "index", "class", "ballistic", "clutched", "d_target_mm",
            "d_c_mm", "max_ang_dev_deg", "R_mm", "occupied_bins",
        }
        assert line["occupied_bins"] == sorted(line["occupied_bins"])

    def test_unaimed_bins_claimed_only_when_enabled(self):
        cfg = Config().with_overrides({"optimizer": {"unaimed_claims_bins": True}})
        # 5 mm remain after the first stroke; a 20 mm second stroke overshoots
        back = [InputEvent(e.t + 400.0, e.dx, 0) for e in bell_events(20 * cfg.device.res_in)]
        for c, expect_claim in ((self.cfg, False), (cfg, True)):
            engine = AutoGain(c)
            res = run(engine, self.events + back, self.target)
            assert [r.cls.value for r in res.records] == ["normal", "unaimed"]
            slow_bin = 1
            assert res.records[1].occupancy[slow_bin]
            claimed_by_unaimed = res.batch.occupancy.shape[0] == 2
            assert claimed_by_unaimed == expect_claim
