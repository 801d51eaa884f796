"""Cross-validation, band / electrode / hyperparameter ablations, and reports."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp, models
from .errors import ConfigError, DegenerateStatisticError, SplitError
from .ingest import DATASET1_CHANNELS, DATASET2_CHANNELS, DatasetManifest
from .stats import anova_two_factor_no_replication, paired_t_test

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Folds
# ---------------------------------------------------------------------------

@dataclass
class FoldPlan:
    k: int
    assignments: np.ndarray  # fold id per segment
    stratified: bool = True
    subject_aware: bool = False

    def test_indices(self, fold):
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold):
        return np.flatnonzero(self.assignments != fold)

    def __iter__(self):
        for f in range(self.k):
            yield self.train_indices(f), self.test_indices(f)


def make_folds(data, k: int = 10, seed: int = 0, subject_aware: bool = False) -> FoldPlan:
    """Stratified k-fold assignment, optionally keeping each subject in one fold.

    ``data`` is a :class:`DatasetManifest` or a ``(labels, subjects)`` pair.
    """
    if isinstance(data, DatasetManifest):
        labels, subjects = data.labels, data.subjects
    else:
        labels, subjects = data
        labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if k < 2:
        raise SplitError(f"need at least 2 folds, got {k}")
    if n < k:
        raise SplitError(f"{n} segments cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    assign = np.full(n, -1, dtype=np.int64)
    classes = sorted(set(labels.tolist()))

    if not subject_aware:
        offset = 0
        for c in classes:
            idx = rng.permutation(np.flatnonzero(labels == c))
            assign[idx] = (offset + np.arange(idx.size)) % k
            offset += idx.size
    else:
        if subjects is None:
            raise SplitError("subject-aware folds need subject ids")
        subjects = np.asarray(subjects)
        fold_size = np.zeros(k, dtype=np.int64)
        for c in classes:
            members = sorted(set(subjects[labels == c].tolist()))
            class_load = np.zeros(k, dtype=np.int64)
            for s in rng.permutation(len(members)):
                rows = np.flatnonzero((subjects == members[s]) & (labels == c))
                mixed = np.flatnonzero(subjects == members[s])
                if mixed.size != rows.size:
                    raise SplitError(f"subject {members[s]!r} has segments in both classes")
                f = min(range(k), key=lambda j: (class_load[j], fold_size[j], j))
                assign[rows] = f
                class_load[f] += rows.size
                fold_size[f] += rows.size

    plan = FoldPlan(k, assign, True, subject_aware)
    for f in range(k):
        test = plan.test_indices(f)
        if test.size == 0:
            raise SplitError(f"fold {f} is empty (too few subjects for {k} folds?)")
        if len(set(labels[plan.train_indices(f)].tolist())) < 2:
            raise SplitError(f"training split for fold {f} lacks a class")
    return plan


# ---------------------------------------------------------------------------
# Electrode sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ElectrodeSet:
    name: str
    channels: tuple

    def __post_init__(self):
        if len(self.channels) != 5:
            raise ConfigError(f"electrode set {self.name!r} must have exactly 5 channels, "
                              f"got {len(self.channels)}")


ELECTRODE_SETS_D1 = {
    "Frontal": ("Fp1", "Fp2", "F7", "F8", "Fz"),
    "Temporal-Parietal": ("T3", "T4", "T5", "T6", "Pz"),
    "Central-Occipital": ("C3", "Cz", "C4", "O1", "O2"),
}
ELECTRODE_SETS_D2 = {
    "Frontal": ("F7", "F3", "F4", "F8", "T3"),
    "Temporal-Parietal": ("T4", "T5", "T6", "P3", "P4"),
    "Central-Occipital": ("C3", "Cz", "C4", "O1", "O2"),
}


def default_electrode_sets(channel_names):
    names = set(channel_names)
    if set(DATASET1_CHANNELS) <= names:
        table = ELECTRODE_SETS_D1
    elif set(DATASET2_CHANNELS) <= names:
        table = ELECTRODE_SETS_D2
    else:
        table = ELECTRODE_SETS_D1
    return {k: ElectrodeSet(k, v) for k, v in table.items()}


def load_electrode_sets(path):
    """JSON ``{set name: [5 channel names]}``."""
    raw = json.loads(Path(path).read_text())
    return {k: ElectrodeSet(k, tuple(v)) for k, v in raw.items()}


def resolve_electrodes(electrode_set, channel_names, sets=None):
    """Row indices for an electrode set given by name, object or channel list."""
    if electrode_set is None:
        return None, None
    if isinstance(electrode_set, str):
        sets = sets or default_electrode_sets(channel_names)
        if electrode_set not in sets:
            raise ConfigError(f"unknown electrode set {electrode_set!r}; "
                              f"known: {', '.join(sorted(sets))}")
        electrode_set = sets[electrode_set]
    elif not isinstance(electrode_set, ElectrodeSet):
        electrode_set = ElectrodeSet("custom", tuple(electrode_set))
    lookup = {name: i for i, name in enumerate(channel_names)}
    missing = [ch for ch in electrode_set.channels if ch not in lookup]
    if missing:
        raise ConfigError(f"electrode set {electrode_set.name!r}: unknown electrode(s) "
                          f"{', '.join(missing)}")
    return electrode_set, [lookup[ch] for ch in electrode_set.channels]


# ---------------------------------------------------------------------------
# Conditions
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    model: str
    dataset: str
    band: str
    electrode_set: str | None
    fold_accuracies: list
    n_segments: int
    k: int
    seed: int
    subject_aware: bool = False
    hyperparams: dict = field(default_factory=dict)
    train_params: dict = field(default_factory=dict)
    curves: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    @property
    def mean_accuracy(self):
        return float(np.mean(self.fold_accuracies)) if self.fold_accuracies else float("nan")

    @property
    def label(self):
        parts = [self.model, self.band]
        if self.electrode_set:
            parts.append(self.electrode_set)
        if self.hyperparams:
            parts.append(_hyper_tag(self.hyperparams))
        return "_".join(parts)

    def to_dict(self):
        return {
            "model": self.model, "dataset": self.dataset, "band": self.band,
            "electrode_set": self.electrode_set, "k": self.k, "seed": self.seed,
            "subject_aware": self.subject_aware, "n_segments": self.n_segments,
            "fold_accuracies": [float(a) for a in self.fold_accuracies],
            "mean_accuracy": self.mean_accuracy,
            "hyperparams": self.hyperparams, "train_params": self.train_params,
            "curves": self.curves, "warnings": self.warnings, "stats": self.stats,
        }

    @classmethod
    def from_dict(cls, d):
        keys = ("model", "dataset", "band", "electrode_set", "fold_accuracies", "n_segments",
                "k", "seed", "subject_aware", "hyperparams", "train_params", "curves",
                "warnings", "stats")
        return cls(**{key: d[key] for key in keys if key in d})


def _hyper_tag(hp):
    f = "-".join(str(v) for v in hp.get("filters", ()))
    k = "-".join(str(v) for v in hp.get("kernels", ()))
    return f"f{f}_k{k}_u{hp.get('lstm_units', '')}"


def preprocess(manifest: DatasetManifest, band="all", electrode_set=None, sets=None):
    """Channel subset, band-pass and per-segment z-score.

    Returns ``(X [N x C x T], resolved electrode set or None)``.
    """
    band_def = dsp.get_band(band) if isinstance(band, str) else band
    chosen, rows = resolve_electrodes(electrode_set, manifest.channel_names, sets)
    X = manifest.stacked()
    if rows is not None:
        X = X[:, rows, :]
    if manifest.band is None:
        X = dsp.band_filter(X, band_def, manifest.sample_rate_hz)
    elif manifest.band != band_def.name:
        raise ConfigError(f"manifest is already filtered to {manifest.band!r}; "
                          f"cannot evaluate band {band_def.name!r}")
    names = [manifest.channel_names[i] for i in rows] if rows else manifest.channel_names
    X = np.stack([dsp.zscore(x, names) for x in X])
    return X, chosen


def _run_fold(job):
    (kind, X, y, train_idx, test_idx, run_params, model_kwargs, fs, band, svm_opts,
     fold, ckpt_dir) = job
    run = models.TrainRun(**run_params)
    if kind == "svm":
        F = np.stack([dsp.welch_psd(x, fs, band=(band.lo_hz, band.hi_hz)).features()
                      for x in X])
        svm = models.svm_train(F[train_idx], y[train_idx], C=svm_opts["C"],
                               epochs=svm_opts["epochs"], seed=run.seed)
        acc = models.accuracy(svm, F[test_idx], y[test_idx])
        if ckpt_dir is not None:
            Path(ckpt_dir, f"fold_{fold:02d}.json").write_text(
                json.dumps(svm.to_dict(), sort_keys=True) + "\n")
        return fold, acc, {"train_loss": [], "train_acc": [], "val_acc": []}
    config = models.build_model_config(kind, X.shape[1:], **model_kwargs)
    net, run = models.train(config, X[train_idx], y[train_idx], run, X[test_idx], y[test_idx])
    acc = models.accuracy(net, X[test_idx], y[test_idx])
    if ckpt_dir is not None:
        models.save_checkpoint(Path(ckpt_dir, f"fold_{fold:02d}.json"), net, run.seed,
                               run.steps)
    return fold, acc, {"train_loss": run.loss_curve, "train_acc": run.train_acc,
                       "val_acc": run.val_acc}


def run_condition(model_kind: str, data: DatasetManifest, band="all", electrode_set=None,
                  train_params: models.TrainRun | None = None, k: int = 10, seed: int = 0,
                  subject_aware: bool = False, model_kwargs: dict | None = None,
                  svm_C: float = 1.0, svm_epochs: int = 50, jobs: int = 1,
                  electrode_sets: dict | None = None, out_dir=None) -> EvalReport:
    """Train and test one model on one band / electrode condition with k-fold CV.

    Fold ``i`` trains with seed ``seed + i``. When ``out_dir`` is given the
    condition's log CSV, per-fold checkpoints and report JSON are written there.
    """
    if model_kind not in models.MODEL_KINDS:
        raise ConfigError(f"unknown model kind {model_kind!r}")
    train_params = train_params or models.TrainRun()
    model_kwargs = dict(model_kwargs or {})
    band_def = dsp.get_band(band) if isinstance(band, str) else band
    X, chosen = preprocess(data, band_def, electrode_set, electrode_sets)
    y = data.labels
    plan = make_folds(data, k, seed, subject_aware)

    ckpt_dir = None
    if out_dir is not None:
        ckpt_dir = Path(out_dir, "checkpoints")
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    jobs_list = []
    for fold, (train_idx, test_idx) in enumerate(plan):
        run_params = train_params.params()
        run_params["seed"] = seed + fold
        jobs_list.append((model_kind, X, y, train_idx, test_idx, run_params, model_kwargs,
                          data.sample_rate_hz, band_def, {"C": svm_C, "epochs": svm_epochs},
                          fold, ckpt_dir))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_fold, jobs_list))
    else:
        results = [_run_fold(job) for job in jobs_list]
    results.sort(key=lambda r: r[0])

    hyper = {}
    if model_kind == "szhnn":
        cfg = models.build_szhnn(X.shape[1:], **model_kwargs)
        convs = [s for s in cfg.layers if s["type"] == "conv1d"]
        lstm = next(s for s in cfg.layers if s["type"] == "lstm")
        hyper = {"filters": [s["filters"] for s in convs],
                 "kernels": [s["kernel_size"] for s in convs],
                 "lstm_units": lstm["units"]}
    report = EvalReport(
        model=model_kind, dataset=data.dataset_id, band=band_def.name,
        electrode_set=chosen.name if chosen else None,
        fold_accuracies=[r[1] for r in results], n_segments=len(y), k=k, seed=seed,
        subject_aware=subject_aware, hyperparams=hyper,
        train_params={**train_params.params(), **(
            {"svm_C": svm_C, "svm_epochs": svm_epochs} if model_kind == "svm" else {})},
        curves=[r[2] for r in results], warnings=list(data.warnings))
    if out_dir is not None:
        write_condition(report, out_dir)
    return report


def write_condition(report: EvalReport, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "train_log.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fold", "epoch", "train_loss", "train_acc", "val_acc"])
        for fold, curve in enumerate(report.curves):
            for e, loss in enumerate(curve["train_loss"]):
                val = curve["val_acc"][e] if e < len(curve["val_acc"]) else ""
                w.writerow([fold, e + 1, repr(loss), repr(curve["train_acc"][e]),
                            repr(val) if val != "" else ""])
    (out_dir / "report.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Hyperparameter sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridRow:
    filters: tuple
    kernels: tuple
    lstm_units: int

    @classmethod
    def parse(cls, d):
        if isinstance(d, GridRow):
            return d
        return cls(tuple(int(v) for v in d["filters"]), tuple(int(v) for v in d["kernels"]),
                   int(d["lstm_units"]))

    def to_dict(self):
        return {"filters": list(self.filters), "kernels": list(self.kernels),
                "lstm_units": self.lstm_units}


FILTER_GRID = [GridRow((5,), (15,), 32), GridRow((5, 10), (15, 10), 32),
               GridRow((5, 10, 15), (15, 10, 5), 32)]
KERNEL_GRID = [GridRow((5, 10), (5, 10), 32), GridRow((5, 10), (10, 15), 32),
               GridRow((5, 10), (15, 20), 32), GridRow((5, 10), (15, 10), 32)]
UNITS_GRID = [GridRow((5, 10), (15, 10), 8), GridRow((5, 10), (15, 10), 16),
              GridRow((5, 10), (15, 10), 32)]
NAMED_GRIDS = {"filters": FILTER_GRID, "kernels": KERNEL_GRID, "units": UNITS_GRID}


def sweep_hyperparams(grid, data: DatasetManifest, band="all", **condition_kwargs) -> list:
    """One SzHNN :class:`EvalReport` per distinct grid row, in first-seen order."""
    rows, seen = [], set()
    for raw in grid:
        row = GridRow.parse(raw)
        if row in seen:
            warnings.warn(f"duplicate grid row {row.to_dict()} skipped", stacklevel=2)
            continue
        seen.add(row)
        rows.append(row)
    out_root = condition_kwargs.pop("out_dir", None)
    reports = []
    for row in rows:
        kwargs = dict(condition_kwargs)
        kwargs["model_kwargs"] = {"filters": row.filters, "kernels": row.kernels,
                                  "lstm_units": row.lstm_units}
        if out_root is not None:
            kwargs["out_dir"] = Path(out_root, f"szhnn_{band}_{_hyper_tag(row.to_dict())}")
        reports.append(run_condition("szhnn", data, band, **kwargs))
    return reports


# ---------------------------------------------------------------------------
# Statistics over reports
# ---------------------------------------------------------------------------

def accuracy_table(reports, row_key, col_key):
    """Mean-accuracy matrix indexed by two report attributes; missing cells are NaN."""
    rows = _ordered(getattr(r, row_key) for r in reports)
    cols = _ordered(getattr(r, col_key) for r in reports)
    if col_key == "band":
        cols = [b for b in dsp.BAND_ORDER if b in cols]
    table = np.full((len(rows), len(cols)), np.nan)
    for r in reports:
        table[rows.index(getattr(r, row_key)), cols.index(getattr(r, col_key))] = \
            r.mean_accuracy
    return rows, cols, table


def _ordered(values):
    out = []
    for v in values:
        if v not in out:
            out.append(v)
    return out


def compare_factor(reports, factor):
    """ANOVA over models x ``factor`` plus per-model paired t-tests between levels."""
    rows, cols, table = accuracy_table(reports, "model", factor)
    result = {"factor": factor, "rows": rows, "columns": cols,
              "table": table.tolist(), "anova": None, "t_tests": []}
    if len(rows) >= 2 and len(cols) >= 2 and not np.isnan(table).any():
        result["anova"] = anova_two_factor_no_replication(table).to_dict()
    for model in rows:
        by_level = {getattr(r, factor): r for r in reports if r.model == model}
        for a, b in itertools.combinations([c for c in cols if c in by_level], 2):
            ra, rb = by_level[a], by_level[b]
            entry = {"model": model, "a": a, "b": b}
            try:
                t, p = paired_t_test(ra.fold_accuracies, rb.fold_accuracies)
                entry.update(t=t, p=p)
            except (DegenerateStatisticError, ValueError) as exc:
                entry.update(t=None, p=None, note=str(exc))
            result["t_tests"].append(entry)
    return result


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------

SUMMARY_COLUMNS = ["model", "dataset", "band", "electrode_set", "cnn_filters", "kernel_size",
                   "lstm_units", "n_segments", "k", "mean_accuracy", "fold_accuracies"]
SWEEP_COLUMNS = ["CNN Filters", "Kernel Size", "LSTM Units", "Accuracy (%)"]
CURVE_COLUMNS = ["condition", "fold", "epoch", "train_loss", "train_acc", "val_acc"]


def _fmt(v):
    return repr(float(v))


def emit_report(reports, out_dir, stats=None, figures=True):
    """Write summary/sweep/curve CSVs, ``reports.json`` and (optionally) figures.

    Column orders are fixed by ``SUMMARY_COLUMNS``, ``SWEEP_COLUMNS`` and
    ``CURVE_COLUMNS``. Returns the list of written paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    path = out_dir / "summary.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for r in reports:
            hp = r.hyperparams
            w.writerow([r.model, r.dataset, r.band, r.electrode_set or "",
                        ", ".join(map(str, hp.get("filters", []))),
                        ", ".join(map(str, hp.get("kernels", []))),
                        hp.get("lstm_units", ""), r.n_segments, r.k, _fmt(r.mean_accuracy),
                        ";".join(_fmt(a) for a in r.fold_accuracies)])
    written.append(path)

    path = out_dir / "sweep_table.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in reports:
            if r.hyperparams:
                hp = r.hyperparams
                w.writerow([", ".join(map(str, hp["filters"])),
                            ", ".join(map(str, hp["kernels"])), hp["lstm_units"],
                            f"{100.0 * r.mean_accuracy:.2f}"])
    written.append(path)

    path = out_dir / "curves.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_COLUMNS)
        for r in reports:
            for fold, curve in enumerate(r.curves):
                for e, loss in enumerate(curve["train_loss"]):
                    val = curve["val_acc"][e] if e < len(curve["val_acc"]) else None
                    w.writerow([r.label, fold, e + 1, _fmt(loss), _fmt(curve["train_acc"][e]),
                                "" if val is None else _fmt(val)])
    written.append(path)

    path = out_dir / "reports.json"
    payload = {"reports": [r.to_dict() for r in reports], "stats": stats or {}}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    written.append(path)

    if figures and reports:
        from . import plotting
        written.extend(plotting.render_report_figures(reports, out_dir))
    return written


def read_summary(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
