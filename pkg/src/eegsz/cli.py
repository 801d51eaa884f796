"""Command-line front end: ``eegsz <ingest|train|evaluate|ablate|psd|gradcheck>``.

Relative output paths resolve under ``$EEGSZ_OUTPUT_ROOT`` (default
``./eegsz-out``). A ``--config`` JSON file supplies defaults that explicit
flags override. Exit codes: 0 success, 1 training divergence, 2 usage or
input error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import dsp, eval as ev, ingest, models, nn
from .errors import DivergenceError, EEGSzError

log = logging.getLogger("eegsz")

OUTPUT_ROOT_ENV = "EEGSZ_OUTPUT_ROOT"
EXIT_OK, EXIT_DIVERGED, EXIT_USAGE = 0, 1, 2
GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


def output_root():
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "eegsz-out"))


def resolve_out(path):
    p = Path(path)
    return p if p.is_absolute() else output_root() / p


def _csv_list(text):
    return [t.strip() for t in text.split(",") if t.strip()] if isinstance(text, str) else text


def parse_synthetic(spec):
    """``"subjects=20,channels=4,T=1024,fs=250"`` -> keyword dict (all keys optional)."""
    out = {"subjects": 20, "channels": 4, "T": 1024, "fs": 250.0}
    if spec in (None, "", "synthetic"):
        return out
    for item in _csv_list(spec):
        key, _, value = item.partition("=")
        if key not in out or not value:
            raise UsageError(f"bad synthetic spec item {item!r}; keys: subjects, channels, T, fs")
        try:
            out[key] = float(value) if key == "fs" else int(value)
        except ValueError:
            raise UsageError(f"synthetic spec {key} must be numeric, got {value!r}") from None
    return out


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_ingest(args):
    if args.synthetic is not None:
        spec = parse_synthetic(args.synthetic)
        recs = ingest.synth_generate(spec["subjects"], spec["channels"], spec["T"], spec["fs"],
                                     args.seed)
        dataset_id = "synthetic"
    else:
        if not args.data_dir:
            raise UsageError("ingest needs --data-dir or --synthetic")
        directory = Path(args.data_dir)
        if not directory.is_dir():
            raise UsageError(f"dataset directory {directory} does not exist")
        recs, errors = ingest.load_dataset_dir(directory, args.format, args.index)
        for name, msg in sorted(errors.items()):
            print(f"error: {name}: {msg}", file=sys.stderr)
        if errors:
            raise UsageError(f"{len(errors)} file(s) failed to parse")
        dataset_id = args.dataset_id or ("1" if args.format == "edf" else "2")
    if args.window_s is None:
        raise UsageError("--window-s is required")
    manifest = ingest.build_manifest(recs, args.window_s, dataset_id, args.overlap)
    path = manifest.save(resolve_out(args.out))
    print(f"manifest\t{path}\tsegments={len(manifest.segments)}\tshape={manifest.shape}\t"
          f"sha256={manifest.data_digest()}")
    return EXIT_OK


def _load_manifest(args):
    directory = Path(args.manifest) if args.manifest else None
    if directory is None:
        raise UsageError("--manifest is required")
    if not directory.is_absolute() and not directory.exists():
        directory = resolve_out(directory)
    if not (directory / "manifest.json").exists():
        raise UsageError(f"no manifest found at {directory}")
    return ingest.DatasetManifest.load(directory)


def _train_run(args):
    return models.TrainRun(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                           decay=args.decay, seed=args.seed)


def cmd_train(args):
    manifest = _load_manifest(args)
    X, chosen = ev.preprocess(manifest, args.band, args.electrodes,
                              _electrode_sets(args, manifest))
    y = manifest.labels
    out = resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.model == "svm":
        band = dsp.get_band(args.band)
        F = np.stack([dsp.welch_psd(x, manifest.sample_rate_hz,
                                    band=(band.lo_hz, band.hi_hz)).features() for x in X])
        svm = models.svm_train(F, y, C=args.svm_c, epochs=args.svm_epochs, seed=args.seed)
        (out / "svm.json").write_text(json.dumps(svm.to_dict(), sort_keys=True) + "\n")
        print(f"svm\ttrain_acc={models.accuracy(svm, F, y):.4f}\t{out / 'svm.json'}")
        return EXIT_OK
    config = models.build_model_config(args.model, X.shape[1:], **_model_kwargs(args))
    net, run = models.train(config, X, y, _train_run(args))
    models.save_checkpoint(out / "checkpoint.json", net, run.seed, run.steps)
    with open(out / "train_log.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "train_acc", "val_acc"])
        for epoch, loss, acc, val in run.log_rows():
            w.writerow([epoch, repr(loss), repr(acc), "" if val is None else repr(val)])
    print(f"{args.model}\tepochs={run.epochs}\tfinal_loss={run.loss_curve[-1]:.6f}\t"
          f"train_acc={run.train_acc[-1]:.4f}\t{out / 'checkpoint.json'}")
    return EXIT_OK


def _model_kwargs(args):
    if args.model != "szhnn":
        return {}
    kw = {}
    if getattr(args, "filters", None):
        kw["filters"] = tuple(int(v) for v in _csv_list(args.filters))
    if getattr(args, "kernels", None):
        kw["kernels"] = tuple(int(v) for v in _csv_list(args.kernels))
    if getattr(args, "lstm_units", None):
        kw["lstm_units"] = int(args.lstm_units)
    return kw


def _electrode_sets(args, manifest):
    if getattr(args, "electrode_config", None):
        return ev.load_electrode_sets(args.electrode_config)
    return ev.default_electrode_sets(manifest.channel_names)


def _condition_kwargs(args, manifest):
    return dict(train_params=_train_run(args), k=args.k, seed=args.seed,
                subject_aware=args.subject_aware, svm_C=args.svm_c,
                svm_epochs=args.svm_epochs, jobs=args.jobs,
                electrode_sets=_electrode_sets(args, manifest))


def _condition_dir(out, report_label):
    return out / "conditions" / report_label


def _print_reports(reports):
    for r in reports:
        print(f"{r.label}\tmean_acc={r.mean_accuracy:.4f}\tfolds={r.k}")


def _stats(reports):
    stats = {}
    if len({r.band for r in reports}) > 1:
        stats["band"] = ev.compare_factor(reports, "band")
    electrode_reports = [r for r in reports if r.electrode_set]
    if len({r.electrode_set for r in electrode_reports}) > 1:
        stats["electrode_set"] = ev.compare_factor(electrode_reports, "electrode_set")
    return stats


def _run_gradcheck_smoke():
    config = models.build_szhnn((2, 40), filters=(2, 3), kernels=(5, 4), lstm_units=3)
    net = models.build_network(config, seed=0)
    rng = np.random.default_rng(0)
    err = nn.gradcheck(net, rng.standard_normal((2, 2, 40)), np.array([0, 1]))
    ok = err < GRADCHECK_TOL
    print(f"gradcheck\tmax_rel_error={err:.3e}\t{'PASS' if ok else 'FAIL'}")
    return ok


def cmd_gradcheck(args):
    return EXIT_OK if _run_gradcheck_smoke() else EXIT_DIVERGED


def cmd_evaluate(args):
    if args.gradcheck:
        return cmd_gradcheck(args)
    manifest = _load_manifest(args)
    out = resolve_out(args.out)
    kwargs = _condition_kwargs(args, manifest)
    electrode_list = _csv_list(args.electrode_sets) or [None]
    reports = []
    for model in _csv_list(args.models):
        for band in _csv_list(args.bands):
            for es in electrode_list:
                label = "_".join(str(p) for p in (model, band, es) if p)
                cdir = _condition_dir(out, label) if args.write_conditions else None
                reports.append(ev.run_condition(model, manifest, band, es,
                                                model_kwargs=_model_kwargs_for(args, model),
                                                out_dir=cdir, **kwargs))
    ev.emit_report(reports, out, stats=_stats(reports), figures=not args.no_figures)
    _print_reports(reports)
    print(f"report\t{out / 'reports.json'}")
    return EXIT_OK


def _model_kwargs_for(args, model):
    ns = argparse.Namespace(**{**vars(args), "model": model})
    return _model_kwargs(ns)


def _grid_rows(args, cfg):
    if "grid" in cfg:
        return [ev.GridRow.parse(row) for row in cfg["grid"]]
    rows = []
    for name in _csv_list(args.grid):
        if name not in ev.NAMED_GRIDS:
            raise UsageError(f"unknown grid {name!r}; choose from {', '.join(ev.NAMED_GRIDS)}")
        rows.extend(ev.NAMED_GRIDS[name])
    seen, unique = set(), []
    for row in rows:  # the shared baseline row appears in every named grid
        if row not in seen:
            seen.add(row)
            unique.append(row)
    return unique


def cmd_ablate(args):
    if args.gradcheck:
        return cmd_gradcheck(args)
    cfg = {}
    if args.ablation:
        cfg = _read_json(args.ablation, "ablation config")
    out = resolve_out(cfg.get("out", args.out))
    rows = _grid_rows(args, cfg)
    bands = _csv_list(cfg.get("bands", args.bands))
    electrode_list = _csv_list(cfg.get("electrode_sets", args.electrode_sets)) or []
    model_list = _csv_list(cfg.get("models", args.models))
    seeds = cfg.get("seeds", [args.seed])
    reports = []
    if rows or electrode_list:
        manifest = _load_manifest(args)
        for seed in seeds:
            args.seed = int(seed)
            kwargs = _condition_kwargs(args, manifest)
            for band in bands:
                cdir = out / "conditions" if args.write_conditions else None
                with warnings.catch_warnings():
                    warnings.simplefilter("always")
                    reports.extend(ev.sweep_hyperparams(rows, manifest, band, out_dir=cdir,
                                                        **kwargs))
                for model in model_list:
                    for es in electrode_list:
                        label = f"{model}_{band}_{es}"
                        cdir = _condition_dir(out, label) if args.write_conditions else None
                        reports.append(ev.run_condition(
                            model, manifest, band, es,
                            model_kwargs=_model_kwargs_for(args, model), out_dir=cdir,
                            **kwargs))
    ev.emit_report(reports, out, stats=_stats(reports), figures=not args.no_figures)
    _print_reports(reports)
    print(f"report\t{out / 'reports.json'}\tconditions={len(reports)}")
    return EXIT_OK


def cmd_psd(args):
    manifest = _load_manifest(args)
    band = dsp.get_band(args.band)
    X, _ = ev.preprocess(manifest, band) if args.filtered else (manifest.stacked(), None)
    path = resolve_out(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    dsp.write_feature_csv(path, X, manifest.sample_rate_hz, manifest.channel_names,
                          labels=manifest.labels, subjects=manifest.subjects,
                          nfft=args.nfft, window=args.window, overlap=args.overlap,
                          band=(band.lo_hz, band.hi_hz))
    print(f"psd\t{path}\trows={len(X)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _read_json(path, what):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"{what} {path} not found") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} {path} is not valid JSON: {exc}") from None


def _add_common(p, out_default):
    p.add_argument("--config", help="JSON file of flag defaults (flags override)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=out_default, help="output path (relative to output root)")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_manifest(p):
    p.add_argument("--manifest", help="directory written by `eegsz ingest`")


def _add_training(p):
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--decay", type=float, default=1e-4)
    p.add_argument("--filters", help="SzHNN conv filter counts, e.g. 5,10")
    p.add_argument("--kernels", help="SzHNN conv kernel sizes, e.g. 15,10")
    p.add_argument("--lstm-units", type=int)
    p.add_argument("--svm-c", type=float, default=1.0)
    p.add_argument("--svm-epochs", type=int, default=50)
    p.add_argument("--electrode-config", help="JSON {set name: [5 channels]}")


def _add_cv(p):
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--subject-aware", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--write-conditions", action=argparse.BooleanOptionalAction, default=True,
                   help="per-condition logs, checkpoints and report JSON")
    p.add_argument("--gradcheck", action="store_true",
                   help="only run the tiny-model gradient check")


def build_parser():
    parser = argparse.ArgumentParser(prog="eegsz", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse or synthesize recordings and segment them")
    _add_common(p, "manifest")
    p.add_argument("--data-dir")
    p.add_argument("--format", choices=("edf", "text"), default="edf")
    p.add_argument("--index", default="index.json")
    p.add_argument("--dataset-id")
    p.add_argument("--synthetic", nargs="?", const="synthetic",
                   help="e.g. subjects=20,channels=4,T=1024,fs=250")
    p.add_argument("--window-s", type=float)
    p.add_argument("--overlap", type=float, default=0.0)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train one model on the whole manifest")
    _add_common(p, "train")
    _add_manifest(p)
    _add_training(p)
    p.add_argument("--model", choices=models.MODEL_KINDS, default="szhnn")
    p.add_argument("--band", choices=dsp.BAND_ORDER, default="all")
    p.add_argument("--electrodes", help="electrode set name")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="k-fold evaluation of models x bands x electrode sets")
    _add_common(p, "evaluate")
    _add_manifest(p)
    _add_training(p)
    _add_cv(p)
    p.add_argument("--models", default="szhnn")
    p.add_argument("--bands", default="all")
    p.add_argument("--electrode-sets", default="")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="hyperparameter sweeps and electrode-set ablations")
    _add_common(p, "ablate")
    _add_manifest(p)
    _add_training(p)
    _add_cv(p)
    p.add_argument("--ablation", help="JSON: bands, electrode_sets, models, seeds, grid")
    p.add_argument("--grid", default="filters,kernels,units")
    p.add_argument("--models", default="szhnn")
    p.add_argument("--bands", default="all")
    p.add_argument("--electrode-sets", default="")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("psd", help="dump log-PSD features to CSV")
    _add_common(p, "psd.csv")
    _add_manifest(p)
    p.add_argument("--band", choices=dsp.BAND_ORDER, default="all")
    p.add_argument("--filtered", action="store_true", help="band-filter and z-score first")
    p.add_argument("--nfft", type=int, default=256)
    p.add_argument("--window", choices=("hann", "boxcar"), default="hann")
    p.add_argument("--overlap", type=float, default=0.5)
    p.set_defaults(func=cmd_psd)

    p = sub.add_parser("gradcheck", help="finite-difference check on a tiny SzHNN")
    _add_common(p, "gradcheck")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        cfg = _read_json(args.config, "config")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        defaults = {}
        for key, value in cfg.items():
            dest = key.replace("-", "_")
            if dest not in known or dest in ("config", "help"):
                raise UsageError(f"config key {key!r} is not an option of {args.command}")
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            defaults[dest] = value
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"eegsz: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"eegsz: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (UsageError, EEGSzError, OSError) as exc:
        print(f"eegsz: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
