import numpy as np
import pytest

from mlah import config, harness
from mlah.hierarchy import IterationReport

TINY = {"run.iterations": "1", "run.seeds": "0, 1", "ppo.steps_per_iteration": "64",
        "ppo.epochs": "1", "ppo.minibatch_size": "32", "run.eval_episodes": "1",
        "env.max_episode_steps": "50", "mlah.hidden": "8, 8"}


def tiny(**kw):
    return config.build({**TINY, **kw})


def test_one_iteration_one_row_per_seed(tmp_path):
    results = harness.run(tiny(), str(tmp_path))
    assert len(results) == 2
    for r in results:
        logged = harness.read_runlog(r.paths["log"])
        assert len(logged.rows) == 1 and logged.rows[0]["status"] == "ok"
        assert logged.seed == r.log.seed and logged.config_hash == tiny().digest()
        for key in ("selections", "checkpoint", "meta"):
            assert key in r.paths


def test_runlog_round_trip_and_schema(tmp_path):
    log = harness.RunLog(3, "mlah", "abc", "0.1", 1000.0)
    rep = IterationReport(0, 64, 12.5, 50.0, 2, 40, 24, 0.375, 0.9, False, True)
    log.append(rep)
    path = tmp_path / "r.csv"
    harness.write_runlog(log, path)
    back = harness.read_runlog(path)
    assert back.rows == log.rows and back.normalizer == 1000.0

    text = path.read_text().replace("v1", "v2", 1)
    path.write_text(text)
    with pytest.raises(harness.SchemaError, match="version"):
        harness.read_runlog(path)
    path.write_text("iteration,x\n")
    with pytest.raises(harness.SchemaError):
        harness.read_runlog(path)


def test_bundle_round_trip_resumes_identically(tmp_path):
    cfg = tiny(**{"attack.kind": "bias", "schedule.mode": "markov", "schedule.m": "0.8",
                  "schedule.n": "0.2", "mlah.master": "learned"})
    r = harness.run_seed(cfg, 7, str(tmp_path))
    hier, cfg2, streams = harness.load_bundle(r.paths["checkpoint"])
    assert cfg2 == cfg and streams.seed == 7
    for name in hier.NETS:
        assert np.array_equal(getattr(hier, name).flat(), getattr(r.hierarchy, name).flat())
    _, _, again = harness.load_bundle(r.paths["checkpoint"])
    assert streams.action.random() == again.action.random()


def test_unwritable_output_dir(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError, match="not writable"):
        harness.run_seed(tiny(), 0, str(blocker / "sub"))


def test_numerical_failure_is_logged(tmp_path, monkeypatch):
    real = harness.train_iteration
    calls = []

    def flaky(*a, **kw):
        calls.append(1)
        if len(calls) == 2:
            raise FloatingPointError("injected")
        return real(*a, **kw)

    monkeypatch.setattr(harness, "train_iteration", flaky)
    with pytest.raises(harness.NumericalFailure):
        harness.run_seed(tiny(**{"run.iterations": "3"}), 0, str(tmp_path))
    rows = harness.read_runlog(tmp_path / "mlah_seed0.csv").rows
    assert [r["status"] for r in rows] == ["ok", "numerical_failure"]
    assert np.isnan(rows[1]["eval_return"])


def test_determinism_same_seed():
    a = harness.run_seed(tiny(**{"run.iterations": "2"}), 4)
    b = harness.run_seed(tiny(**{"run.iterations": "2"}), 4)
    assert a.log.rows == b.log.rows


def test_selections_round_trip(tmp_path):
    sel = [(np.array([0, 1, 1]), np.array([False, True, False])), (np.array([1]), np.array([True]))]
    path = tmp_path / "s.csv"
    harness.write_selections(sel, path)
    it, step, ctrl, flag = harness.read_selections(path)
    assert it.tolist() == [0, 0, 0, 1] and step.tolist() == [0, 1, 2, 0]
    assert ctrl.tolist() == [0, 1, 1, 1] and flag.tolist() == [0, 1, 0, 1]


def test_normalize_returns():
    n = harness.normalize_returns([500.0, 1000.0, 1100.0], 1000.0)
    assert n.values.tolist() == [0.5, 1.0, 1.1]
    assert n.above_max.tolist() == [False, False, True]
    with pytest.raises(ValueError):
        harness.normalize_returns([1.0], 0.0)


def test_final_value_and_selection_accuracy():
    assert harness.final_value(np.arange(20.0)) == pytest.approx(14.5)
    assert harness.final_value([3.0, 5.0]) == 4.0
    assert np.isnan(harness.final_value([]))
    sel = [(np.zeros(4, int), np.ones(4, bool))] * 3 + [(np.array([1, 0]), np.array([True, False]))]
    assert harness.selection_accuracy(sel) == 1.0
    assert harness.selection_accuracy(sel, 0.0) == pytest.approx(2 / 14)
    assert np.isnan(harness.selection_accuracy([]))


def test_normalize_by_own_max():
    ev = np.array([120.0, 480.0, 300.0])
    assert harness.normalize_returns(ev, ev.max()).values.max() == 1.0
