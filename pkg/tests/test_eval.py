import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eegsz import eval as ev, ingest, models
from eegsz.errors import ConfigError, SplitError


@settings(max_examples=60, deadline=None)
@given(st.integers(10, 80), st.integers(10, 80), st.integers(2, 10), st.integers(0, 10**6))
def test_folds_stratified_exhaustive(n0, n1, k, seed):
    labels = np.array([0] * n0 + [1] * n1)
    plan = ev.make_folds((labels, None), k, seed)
    tests = np.concatenate([plan.test_indices(f) for f in range(k)])
    assert np.array_equal(np.sort(tests), np.arange(n0 + n1))
    for f in range(k):
        idx = plan.test_indices(f)
        expected = len(idx) * n1 / (n0 + n1)
        assert abs(np.sum(labels[idx]) - expected) <= 1.0 + 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(10, 20), st.integers(1, 5), st.integers(0, 10**6))
def test_folds_subject_aware(n_subjects, per_subject, seed):
    labels, subjects = [], []
    for s in range(2 * n_subjects):
        labels += [s % 2] * per_subject
        subjects += [f"s{s}"] * per_subject
    plan = ev.make_folds((np.array(labels), subjects), 10, seed, subject_aware=True)
    owner = {}
    for i, s in enumerate(subjects):
        assert owner.setdefault(s, plan.assignments[i]) == plan.assignments[i]


def test_folds_28_subjects():
    labels = np.repeat([0, 1], 14 * 3)
    subjects = [f"s{i // 3}" for i in range(84)]
    plan = ev.make_folds((labels, subjects), 10, 0, subject_aware=True)
    assert len({(s, plan.assignments[i]) for i, s in enumerate(subjects)}) == 28


def test_folds_one_per_fold_and_repeatable():
    labels = np.repeat([0, 1], 5)
    a = ev.make_folds((labels, None), 10, 3)
    assert sorted(a.assignments.tolist()) == list(range(10))
    assert np.array_equal(a.assignments, ev.make_folds((labels, None), 10, 3).assignments)


def test_folds_errors():
    with pytest.raises(SplitError):
        ev.make_folds((np.array([0, 1, 0]), None), 10)
    with pytest.raises(SplitError):
        ev.make_folds((np.array([0] * 9 + [1]), None), 2)


def test_electrode_sets():
    sets = ev.default_electrode_sets(ingest.DATASET1_CHANNELS)
    assert sets["Frontal"].channels == ("Fp1", "Fp2", "F7", "F8", "Fz")
    assert all(len(s.channels) == 5 for s in sets.values())
    sets2 = ev.default_electrode_sets(ingest.DATASET2_CHANNELS)
    for s in sets2.values():
        assert set(s.channels) <= set(ingest.DATASET2_CHANNELS)
    with pytest.raises(ConfigError):
        ev.ElectrodeSet("x", ("Fp1",))
    with pytest.raises(ConfigError, match="Xx"):
        ev.resolve_electrodes(["Fp1", "Fp2", "F7", "F8", "Xx"], ingest.DATASET1_CHANNELS)
    with pytest.raises(ConfigError, match="unknown electrode set"):
        ev.resolve_electrodes("Limbic", ingest.DATASET1_CHANNELS)


def test_electrode_config_file(tmp_path):
    path = tmp_path / "sets.json"
    path.write_text(json.dumps({"Left": ["Fp1", "F7", "T3", "T5", "O1"]}))
    sets = ev.load_electrode_sets(path)
    _, rows = ev.resolve_electrodes("Left", ingest.DATASET1_CHANNELS, sets)
    assert rows == [0, 2, 7, 12, 17]


@pytest.fixture(scope="module")
def small_manifest():
    recs = ingest.synth_generate(6, 5, 1024, 250.0, seed=3)
    return ingest.build_manifest(recs, 1.024, "synthetic")


def test_run_condition_svm(small_manifest, tmp_path):
    r = ev.run_condition("svm", small_manifest, "alpha", k=4, seed=0, out_dir=tmp_path)
    assert r.mean_accuracy == pytest.approx(np.mean(r.fold_accuracies), abs=1e-12)
    assert all(0 <= a <= 1 for a in r.fold_accuracies)
    assert r.mean_accuracy >= 0.9
    assert (tmp_path / "report.json").exists()
    assert len(list((tmp_path / "checkpoints").iterdir())) == 4


def test_run_condition_electrode_subset(small_manifest):
    sets = {"Five": ev.ElectrodeSet("Five", small_manifest.channel_names)}
    r = ev.run_condition("svm", small_manifest, "theta", "Five", k=3, electrode_sets=sets)
    assert r.electrode_set == "Five"
    with pytest.raises(ConfigError):
        ev.run_condition("svm", small_manifest, "theta", ["Fp1", "Fp2", "F3", "F4", "Oz"])


def test_run_condition_network_writes_logs(small_manifest, tmp_path):
    run = models.TrainRun(epochs=2, batch_size=16, lr=1e-3)
    r = ev.run_condition("cnn", small_manifest, "all", train_params=run, k=3,
                         out_dir=tmp_path)
    assert len(r.curves) == 3 and len(r.curves[0]["train_acc"]) == 2
    rows = list(csv.DictReader(open(tmp_path / "train_log.csv")))
    assert len(rows) == 6 and rows[0]["epoch"] == "1"
    net, seed, _ = models.load_checkpoint(tmp_path / "checkpoints" / "fold_01.json")
    assert seed == 1


def test_run_condition_parallel_matches_serial(small_manifest):
    run = models.TrainRun(epochs=1, batch_size=16, lr=1e-3)
    a = ev.run_condition("szhnn", small_manifest, "all", train_params=run, k=3, jobs=1)
    b = ev.run_condition("szhnn", small_manifest, "all", train_params=run, k=3, jobs=2)
    assert a.to_dict() == b.to_dict()


def test_sweep_dedup_and_empty(small_manifest):
    assert ev.sweep_hyperparams([], small_manifest) == []
    row = {"filters": [5, 10], "kernels": [15, 10], "lstm_units": 4}
    run = models.TrainRun(epochs=1, batch_size=32)
    with pytest.warns(UserWarning, match="duplicate"):
        reports = ev.sweep_hyperparams([row, row], small_manifest, k=2, train_params=run)
    assert len(reports) == 1
    assert reports[0].hyperparams == {"filters": [5, 10], "kernels": [15, 10],
                                      "lstm_units": 4}


def test_sweep_grids_contain_best_row():
    best = ev.GridRow((5, 10), (15, 10), 32)
    assert all(best in grid for grid in ev.NAMED_GRIDS.values())


def fake_report(model, band, accs, es=None):
    return ev.EvalReport(model, "synthetic", band, es, list(accs), 10, len(accs), 0,
                         curves=[{"train_loss": [0.7, 0.5], "train_acc": [0.5, 0.8],
                                  "val_acc": [0.5, 0.75]}])


def test_emit_report_empty(tmp_path):
    ev.emit_report([], tmp_path)
    assert (tmp_path / "summary.csv").read_text().strip() == ",".join(ev.SUMMARY_COLUMNS)
    assert (tmp_path / "sweep_table.csv").read_text().strip() == ",".join(ev.SWEEP_COLUMNS)
    assert (tmp_path / "curves.csv").read_text().strip() == ",".join(ev.CURVE_COLUMNS)
    assert json.loads((tmp_path / "reports.json").read_text())["reports"] == []


def test_emit_report_round_trip(tmp_path):
    reports = [fake_report(m, b, np.random.default_rng(i).uniform(0.5, 1, 3))
               for i, (m, b) in enumerate([("svm", "alpha"), ("svm", "gamma"),
                                           ("cnn", "alpha"), ("cnn", "gamma")])]
    stats = ev.compare_factor(reports, "band")
    paths = ev.emit_report(reports, tmp_path, stats=stats)
    assert (tmp_path / "band_accuracy.png") in paths
    payload = json.loads((tmp_path / "reports.json").read_text())
    back = [ev.EvalReport.from_dict(d) for d in payload["reports"]]
    assert [r.to_dict() for r in back] == [r.to_dict() for r in reports]
    assert payload["stats"]["anova"]["df_error"] == 1
    summary = ev.read_summary(tmp_path / "summary.csv")
    assert [float(s["mean_accuracy"]) for s in summary] == [r.mean_accuracy for r in reports]
    curves = list(csv.DictReader(open(tmp_path / "curves.csv")))
    assert len(curves) == 4 * 2  # one two-epoch curve per report


def test_sweep_table_layout(tmp_path):
    r = fake_report("szhnn", "all", [1.0, 0.9])
    r.hyperparams = {"filters": [5, 10], "kernels": [15, 10], "lstm_units": 32}
    ev.emit_report([r], tmp_path, figures=False)
    rows = list(csv.reader(open(tmp_path / "sweep_table.csv")))
    assert rows == [ev.SWEEP_COLUMNS, ["5, 10", "15, 10", "32", "95.00"]]


def test_compare_factor_t_tests():
    reports = [fake_report("svm", "alpha", [0.9, 0.8, 0.95]),
               fake_report("svm", "gamma", [0.5, 0.6, 0.55])]
    out = ev.compare_factor(reports, "band")
    assert out["anova"] is None  # a single model gives one row
    (t,) = out["t_tests"]
    assert t["a"] == "alpha" and t["t"] > 0 and 0 < t["p"] < 1
