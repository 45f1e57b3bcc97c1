"""Command-line entry point: synth, split, train, eval, analyze, rf-check.

Options can also come from a ``key = value`` config file (``--config``);
flags given on the command line win. Exit codes: 1 configuration error,
2 data error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .datamodel import (
    DatasetManifest,
    ManifestError,
    Modality,
    ModalitySelection,
    Site,
    all_selections,
    channel_count,
    load_manifest,
    summarize,
)
from .preprocess import MissingModalityError, NoFingerError, RoiSpec
from .protocols import Protocol, SplitError, SplitPlan, make_3fold, make_intersite, make_loo, validate_split
from .tensorio import TensorFormatError

log = logging.getLogger("mspad")

EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 1, 2, 3
RUN_SUBDIRS = ("checkpoints", "reports", "plots", "features")


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def read_config(path: str | Path) -> dict[str, str]:
    out = {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    for n, line in enumerate(p.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{p}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def parse_rois(specs) -> dict[Modality, RoiSpec]:
    rois = {}
    for spec in specs or []:
        for item in str(spec).split(";"):
            if not item.strip():
                continue
            try:
                mod, vals = item.split("=")
                x0, y0, w, h = (int(v) for v in vals.split(","))
                rois[Modality(mod.strip())] = RoiSpec(x0, y0, w, h)
            except ValueError as exc:
                raise ConfigError(f"bad ROI {item!r}; expected MOD=x0,y0,width,height") from exc
    return rois


def _selections(text: str) -> list[ModalitySelection]:
    if text == "all15":
        return all_selections()
    try:
        return [ModalitySelection.parse(t) for t in text.split(";") if t.strip()]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _run_dir(args) -> Path:
    d = Path(args.run_dir) / args.name
    for sub in RUN_SUBDIRS:
        (d / sub).mkdir(parents=True, exist_ok=True)
    return d


def _write_meta(run: Path, args, command: str) -> None:
    meta = {k: v for k, v in vars(args).items() if k != "func"}
    meta["command"] = command
    meta["version"] = __version__
    meta["timestamp"] = datetime.datetime.now().isoformat(timespec="seconds")
    (run / f"{command}_meta.json").write_text(json.dumps(meta, indent=2, default=str, sort_keys=True) + "\n")


def _load(path) -> DatasetManifest:
    if path is None:
        raise ConfigError("--manifest is required")
    if not Path(path).is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    return load_manifest(path)


def _model_cfg(args, channels: int):
    from .model import ModelConfig

    return ModelConfig(input_channels=channels, h=args.h)


def _train_cfg(args):
    from .train import TrainConfig

    try:
        return TrainConfig(max_epochs=args.epochs, batch_size=args.batch_size, lr0=args.lr, min_lr=args.min_lr,
                           lam=args.lam, plateau_patience=args.patience, seed=args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _plan_for(args, manifest: DatasetManifest, test_manifest: DatasetManifest | None) -> SplitPlan:
    if getattr(args, "plan", None):
        return SplitPlan.load(args.plan)
    proto = args.protocol
    if proto == "3fold":
        return make_3fold(manifest, args.seed, args.category_key)
    if proto == "loo":
        return make_loo(manifest, args.category_key, args.seed)
    if proto == "intersite":
        if test_manifest is None:
            raise ConfigError("intersite protocol needs --test-manifest")
        return make_intersite(manifest, test_manifest, args.seed)
    raise ConfigError(f"unknown protocol {proto!r}")


def _combined(manifest: DatasetManifest, other: DatasetManifest | None) -> DatasetManifest:
    if other is None:
        return manifest
    return DatasetManifest(manifest.records + other.records)


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    from .synth import SynthConfig, default_categories, generate, hardness_dial

    if args.frame_size == "native":
        frame_size = None
    else:
        try:
            h, w = (int(v) for v in args.frame_size.lower().split("x"))
        except ValueError as exc:
            raise ConfigError(f"bad --frame-size {args.frame_size!r}; use HxW or 'native'") from exc
        frame_size = (h, w)
    try:
        cfg = SynthConfig(
            n_participants=args.participants, fingers_per_participant=args.fingers, sessions=args.sessions,
            pa_fraction=args.pa_fraction, categories=default_categories(args.categories),
            noise_sigma=args.noise, frame_size=frame_size,
            modalities=ModalitySelection.parse(args.modalities).ordered,
            site=Site(args.site), participant_prefix=args.prefix, seed=args.seed,
        )
        cfg = hardness_dial(cfg, args.overlap)
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    manifest = generate(cfg, args.out)
    s = summarize(manifest)
    print(json.dumps(s.as_dict()))
    return 0


def cmd_split(args) -> int:
    manifest = _load(args.manifest)
    test_manifest = _load(args.test_manifest) if args.test_manifest else None
    plan = _plan_for(args, manifest, test_manifest)
    out = Path(args.out) if args.out else _run_dir(args) / "reports" / f"split_{plan.name}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    plan.save(out)
    report = validate_split(plan, _combined(manifest, test_manifest))
    for v in report.violations:
        (log.info if v.kind == "balance" else log.warning)("%s %s: %s", v.fold, v.kind, v.message)
    if not report.balanced:
        n = sum(v.kind == "balance" for v in report.violations)
        log.warning("%d per-category test shares outside the balance tolerance (-v lists them)", n)
    if not report.ok:
        raise RuntimeError("generated split failed structural validation")
    print(out)
    return 0


def cmd_train(args) -> int:
    from .experiment import CubeStore
    from .model import build_model, save_checkpoint
    from .train import train

    manifest = _load(args.manifest)
    sels = _selections(args.selection)
    if len(sels) != 1:
        raise ConfigError("train takes exactly one modality selection")
    sel = sels[0]
    run = _run_dir(args)
    store = CubeStore(manifest.records, parse_rois(args.roi))
    if args.plan:
        plan = SplitPlan.load(args.plan)
        if not 0 <= args.fold < len(plan.folds):
            raise ConfigError(f"--fold {args.fold} out of range for {len(plan.folds)} folds")
        fold = plan.folds[args.fold]
        tr, va, tag = list(fold.train), list(fold.val), f"{sel.label}_{fold.name}"
    else:
        tr, va, tag = [r.sample_id for r in manifest.records], [], f"{sel.label}_all"
    model = build_model(_model_cfg(args, channel_count(sel)), seed=args.seed)
    val = (store.cubes(va, sel), store.labels(va)) if va else None
    model, history = train(model, (store.cubes(tr, sel), store.labels(tr)), val, _train_cfg(args))
    save_checkpoint(model, run / "checkpoints" / tag)
    history.write_csv(run / "reports" / f"history_{tag}.csv")
    _write_meta(run, args, "train")
    print(run / "checkpoints" / tag)
    return 0


def _write_scores(path: Path, scored) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "label", "score"])
        for s in scored:
            w.writerow([s.sample_id, s.label, repr(s.score)])


def read_scores(path: str | Path):
    from .metrics import ScoredSample

    with open(path, newline="") as fh:
        return [ScoredSample(r["sample_id"], float(r["score"]), int(r["label"])) for r in csv.DictReader(fh)]


SWEEP_FIELDS = ["selection", "channels", "folds"] + [
    f"{m}_{s}" for m in ("auc", "tpr_at_fpr_002", "bpcer20", "eer", "accuracy_at_05") for s in ("mean", "std")
]


def cmd_eval(args) -> int:
    from .experiment import CubeStore, run_fold, sweep_row
    from .metrics import ScoredSample, evaluate
    from .model import load_checkpoint, predict_scores
    from .plots import roc_svg, sweep_svg

    manifest = _load(args.manifest)
    run = _run_dir(args)
    rois = parse_rois(args.roi)

    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)
        sels = _selections(args.selection)
        sel = next((s for s in sels if channel_count(s) == model.cfg.input_channels), None)
        if sel is None or len(sels) != 1:
            raise ConfigError("--checkpoint needs one --selection matching the model's channel count")
        store = CubeStore(manifest.records, rois)
        ids = [r.sample_id for r in manifest.records]
        scores = predict_scores(model, store.cubes(ids, sel))
        labels = store.labels(ids).astype(int)
        report = evaluate(scores, labels)
        base = run / "reports" / f"{sel.label}_checkpoint"
        report.write_json(base.with_suffix(".json"))
        report.write_roc_csv(base.parent / f"{base.name}_roc.csv")
        _write_scores(base.parent / f"{base.name}_scores.csv",
                      [ScoredSample(s, float(v), int(t)) for s, v, t in zip(ids, scores, labels)])
        roc_svg({sel.label: report}, run / "plots" / f"{sel.label}_checkpoint_roc.svg", args.log_fpr)
        _write_meta(run, args, "eval")
        print(json.dumps(report.as_dict(include_roc=False)))
        return 0

    test_manifest = _load(args.test_manifest) if args.test_manifest else None
    plan = _plan_for(args, manifest, test_manifest)
    full = _combined(manifest, test_manifest)
    check = validate_split(plan, full, balance_tolerance=None)
    if not check.ok:
        raise SplitError("; ".join(v.message for v in check.violations[:3]))
    store = CubeStore(full.records, rois)
    model_cfg = _model_cfg(args, 1)
    train_cfg = _train_cfg(args)
    rows = []
    summary = {"plan": plan.name, "protocol": plan.protocol.value, "selections": {}}
    for sel in _selections(args.selection):
        sdir = run / "reports" / sel.label
        sdir.mkdir(exist_ok=True)
        results = []
        for i, fold in enumerate(plan.folds):
            res = run_fold(store, fold, sel, model_cfg, train_cfg, i)
            res.report.write_json(sdir / f"{fold.name}.json")
            res.report.write_roc_csv(sdir / f"{fold.name}_roc.csv")
            _write_scores(sdir / f"{fold.name}_scores.csv", res.scores)
            res.history.write_csv(sdir / f"{fold.name}_history.csv")
            if args.save_checkpoints:
                from .model import save_checkpoint

                save_checkpoint(res.model, run / "checkpoints" / f"{sel.label}_{fold.name}")
            results.append(res)
        roc_svg({r.fold: r.report for r in results}, run / "plots" / f"{sel.label}_roc.svg", args.log_fpr)
        row = sweep_row(sel, results)
        rows.append(row)
        summary["selections"][sel.label] = {
            "channels": row["channels"],
            "folds": {r.fold: r.report.as_dict(include_roc=False) for r in results},
        }
        print(json.dumps({k: row[k] for k in ("selection", "channels", "auc_mean", "tpr_at_fpr_002_mean",
                                                  "bpcer20_mean")}))
    with open(run / "reports" / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS)
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    (run / "reports" / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    sweep_svg(rows, run / "plots" / "sweep.svg")
    _write_meta(run, args, "eval")
    return 0


def cmd_analyze(args) -> int:
    from .analyze import (
        embed_2d,
        misclassification_overlay,
        score_map_feature_matrix,
        write_features_csv,
        write_overlay_csv,
    )
    from .experiment import CubeStore
    from .metrics import ScoredSample, roc_curve, threshold_at_eer
    from .model import load_checkpoint
    from .plots import scatter_svg

    manifest = _load(args.manifest)
    sels = _selections(args.selection)
    if len(sels) != 1:
        raise ConfigError("analyze takes exactly one modality selection")
    sel = sels[0]
    run = _run_dir(args)
    store = CubeStore(manifest.records, parse_rois(args.roi))
    ids = [r.sample_id for r in manifest.records]
    cubes = store.cubes(ids, sel)
    labels = store.labels(ids).astype(int)
    by_id = manifest.by_id()
    groups = [by_id[s].pai.pai_code for s in ids]
    codes = dict(zip(ids, groups))

    mean_feats = cubes.reshape(len(cubes), cubes.shape[1], -1).mean(axis=2).astype(np.float64)
    write_features_csv(ids, mean_feats, run / "features" / "mean_intensity.csv", prefix="ch")
    embeddings = {"mean": embed_2d(mean_feats, args.perplexity, args.seed, args.iterations)}

    scored = None
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)
        if model.cfg.input_channels != cubes.shape[1]:
            raise ConfigError("checkpoint channel count does not match --selection")
        maps = score_map_feature_matrix(model, cubes)
        write_features_csv(ids, maps, run / "features" / "score_maps.csv", prefix="m")
        embeddings["scoremap"] = embed_2d(maps, args.perplexity, args.seed, args.iterations)
        scored = [ScoredSample(s, float(v), int(t)) for s, v, t in zip(ids, maps.mean(axis=1), labels)]
    elif args.scores:
        got = {s.sample_id: s for s in read_scores(args.scores)}
        scored = [got[s] for s in ids if s in got]
        if len(scored) != len(ids):
            raise ConfigError("--scores does not cover every manifest sample")

    for kind, coords in embeddings.items():
        with open(run / "features" / f"tsne_{kind}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", "x", "y", "label", "pai_code"])
            for s, xy, t, g in zip(ids, coords, labels, groups):
                w.writerow([s, repr(float(xy[0])), repr(float(xy[1])), t, g])
        highlight = None
        if scored is not None:
            thr = threshold_at_eer(roc_curve(scored))
            rows = misclassification_overlay(scored, coords, thr, codes)
            write_overlay_csv(rows, run / "features" / f"overlay_{kind}.csv")
            highlight = [r.misclassified for r in rows]
        scatter_svg(coords, groups, run / "plots" / f"tsne_{kind}.svg", f"{kind} features ({sel.label})", highlight)
    _write_meta(run, args, "analyze")
    print(run / "features")
    return 0


def cmd_rf_check(args) -> int:
    from .model import ModelConfig, receptive_field, score_map_size

    cfg = ModelConfig(input_channels=args.channels, h=args.h)
    hm, wm = score_map_size(cfg, args.height, args.width)
    print(f"receptive_field {receptive_field(cfg)}")
    print(f"score_map {wm}x{hm}")
    return 0


# ---------------------------------------------------------------- parser

def _default_seed() -> int:
    try:
        return int(os.environ.get("MSPAD_SEED", "0"))
    except ValueError as exc:
        raise ConfigError("MSPAD_SEED must be an integer") from exc


def build_parser(seed_default: int = 0) -> argparse.ArgumentParser:
    p = _Parser(prog="mspad", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    p.commands = sub.choices

    def common(sp):
        sp.add_argument("--config", help="key = value config file; flags override it")
        sp.add_argument("--seed", type=int, default=seed_default, help="global seed (env MSPAD_SEED)")
        sp.add_argument("--run-dir", default="runs")
        sp.add_argument("--name", default="default")
        sp.add_argument("-v", "--verbose", action="store_true")

    def data(sp, selection="F_M+F_S+F_L+B_N"):
        sp.add_argument("--manifest")
        sp.add_argument("--selection", default=selection, help="e.g. F_M+F_S, several joined by ';', or all15")
        sp.add_argument("--roi", action="append", help="fixed ROI, MOD=x0,y0,width,height (repeatable)")

    def training(sp):
        sp.add_argument("--h", type=int, default=16, help="base number of conv maps")
        sp.add_argument("--epochs", type=int, default=100)
        sp.add_argument("--batch-size", type=int, default=16)
        sp.add_argument("--lr", type=float, default=2e-4)
        sp.add_argument("--min-lr", type=float, default=1e-7)
        sp.add_argument("--lam", type=float, default=10.0)
        sp.add_argument("--patience", type=int, default=10)

    def protocol(sp):
        sp.add_argument("--plan", help="split plan JSON (otherwise built from --protocol)")
        sp.add_argument("--protocol", choices=["3fold", "loo", "intersite"], default="3fold")
        sp.add_argument("--test-manifest", help="target-site manifest for the intersite protocol")
        sp.add_argument("--category-key", default="category_for_loo")

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    common(s)
    s.add_argument("--out", required=True)
    s.add_argument("--participants", type=int, default=30)
    s.add_argument("--fingers", type=int, default=8)
    s.add_argument("--sessions", type=int, default=2)
    s.add_argument("--pa-fraction", type=float, default=0.5)
    s.add_argument("--categories", type=int, default=11)
    s.add_argument("--overlap", type=float, default=0.0)
    s.add_argument("--noise", type=float, default=0.02)
    s.add_argument("--frame-size", default="80x160", help="HxW of raw frames or 'native'")
    s.add_argument("--modalities", default="F_M+F_S+F_L+B_N")
    s.add_argument("--site", default="SYNTH", choices=[x.value for x in Site])
    s.add_argument("--prefix", default="P")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("split", help="build a split plan")
    common(s)
    s.add_argument("--manifest")
    protocol(s)
    s.add_argument("--out")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("train", help="train one model")
    common(s)
    data(s)
    training(s)
    s.add_argument("--plan")
    s.add_argument("--fold", type=int, default=0)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="cross-validated evaluation, optionally over all 15 combinations")
    common(s)
    data(s)
    training(s)
    protocol(s)
    s.add_argument("--checkpoint", help="score --manifest with a trained model instead")
    s.add_argument("--save-checkpoints", action="store_true")
    s.add_argument("--log-fpr", action="store_true", help="log-scaled FPR axis in ROC plots")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("analyze", help="mean-intensity / score-map features and t-SNE exports")
    common(s)
    data(s)
    s.add_argument("--checkpoint")
    s.add_argument("--scores", help="scores CSV (sample_id,label,score) for the EER overlay")
    s.add_argument("--perplexity", type=float, default=30.0)
    s.add_argument("--iterations", type=int, default=1000)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("rf-check", help="print receptive field and score-map size")
    common(s)
    s.add_argument("--h", type=int, default=16)
    s.add_argument("--channels", type=int, default=24)
    s.add_argument("--height", type=int, default=80)
    s.add_argument("--width", type=int, default=160)
    s.set_defaults(func=cmd_rf_check)
    return p


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser(_default_seed())
    args = parser.parse_args(argv)
    if args.config:
        values = read_config(args.config)
        known = set(vars(args))
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        # re-parse so explicit flags override file values
        sp = parser.commands[args.command]
        typed = {}
        for action in sp._actions:
            if action.dest in values:
                raw = values[action.dest]
                if action.type is not None:
                    try:
                        typed[action.dest] = action.type(raw)
                    except ValueError as exc:
                        raise ConfigError(f"config {action.dest}: {exc}") from exc
                elif action.const is True and action.nargs == 0:
                    typed[action.dest] = raw.lower() in ("1", "true", "yes", "on")
                elif isinstance(action, argparse._AppendAction):
                    typed[action.dest] = [raw]
                else:
                    typed[action.dest] = raw
        sp.set_defaults(**typed)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ManifestError, SplitError, TensorFormatError, MissingModalityError, NoFingerError,
            FileNotFoundError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
