"""Command line entry point: ``cetnet <command> [options]``.

Every command writes ``manifest.json`` and the resolved ``config.ini`` into
its ``--out`` directory. On failure a single JSON line describing the error
goes to stderr and the exit status is nonzero.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunManifest, config_keys, dump_ini, format_value, load_config, resolve_config_path
from .data import (LabelMap, SynthConfig, VideoSample, dataset_files, load_dataset, load_labels,
                   save_dataset, subsample, synth_generate, write_labels)
from .errors import (ConfigError, ContractError, DataError, EmptyInputError, FormatError, ParameterError,
                     ShapeError, TrainingDivergedError)
from .formats import load_feature_file
from .losses import LOSS_ABLATION_GRID
from .metrics import MetricReport, evaluate_corpus
from .model import init_model, load_model, save_model
from .train import evaluate, grad_check, predict_video, train

log = logging.getLogger("cetnet")

KNOWN_ERRORS = (ConfigError, ContractError, DataError, EmptyInputError, FormatError, ParameterError,
                ShapeError, TrainingDivergedError, OSError)

# row order of the cross-mode ablation: none first, all last
CROSS_AXIS = ("none", "ahead", "ahead_only", "behind", "behind_only", "all")


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail("UsageError", f"{self.prog}: {message}", status=2)


def _fail(kind, message, status=1, **extra):
    payload = {"error": kind, "message": " ".join(str(message).split()), **extra}
    sys.stderr.write(json.dumps(payload) + "\n")
    sys.exit(status)


# ---------------------------------------------------------------- helpers

def _config(args):
    overrides = {k: v for k, v in vars(args).items() if "." in k and v is not None}
    path = resolve_config_path(args.config) if args.config else None
    return load_config(path, overrides), path


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out, command, cfg, seed, inputs=(), base=None, details=None):
    manifest = RunManifest.build(command, cfg, seed, inputs, base)
    d = manifest.to_dict()
    if details:
        d["details"] = details
    (out / "manifest.json").write_text(json.dumps(d, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / "config.ini").write_text(dump_ini(cfg), encoding="utf-8")


def _synth_cfg(cfg):
    fields = {k: v for k, v in cfg.synth.to_dict().items() if k != "seed"}
    return SynthConfig(**fields)


def _load_split(root, split, frame_step=1):
    ds = load_dataset(root, [split])
    videos = [subsample(v, frame_step) for v in ds[split]]
    if not videos:
        raise DataError(f"split {split!r} under {root} is empty")
    return ds, videos


def _train_one(cfg, videos, label_map, log_path=None):
    model_cfg = cfg.model.build(videos[0].features.shape[1], len(label_map)).validate()
    model = init_model(model_cfg, seed=cfg.train.seed)
    result = train(model, videos, cfg.train, cfg.loss, log_path)
    return model, result


def _report_files(out, report, name="report"):
    (out / f"{name}.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (out / f"{name}.txt").write_text(report.to_text() + "\n", encoding="utf-8")


# ---------------------------------------------------------------- commands

def cmd_synth(args):
    cfg, path = _config(args)
    out = _out_dir(args)
    ds = synth_generate(_synth_cfg(cfg), cfg.synth.seed)
    save_dataset(out, ds)
    _write_manifest(out, "synth", cfg, cfg.synth.seed, [path] if path else ())
    print(f"wrote {sum(len(v) for v in ds.splits.values())} videos to {out}")


def cmd_train(args):
    cfg, path = _config(args)
    out = _out_dir(args)
    step = cfg.data.resolved_frame_step()
    ds, videos = _load_split(args.data, cfg.data.train_split, step)
    log_path = out / "train_log.jsonl"
    log_path.unlink(missing_ok=True)  # reruns start from an empty log
    model, result = _train_one(cfg, videos, ds.label_map, log_path)
    meta = {"labels": ds.label_map.names, "frame_step": step, "profile": cfg.data.profile}
    save_model(out / "model.cetm", model, meta)
    inputs = [path] if path else []
    _write_manifest(out, "train", cfg, cfg.train.seed, inputs + dataset_files(args.data), args.data,
                    {"model": model.config.to_dict(), "num_parameters": model.num_parameters()})
    last = result.log[-1]
    print(f"trained {len(result.log)} epochs: loss {last['mean_loss']:.4f}, "
          f"train acc {last['train_acc']:.2f}; checkpoint {out / 'model.cetm'}")


def cmd_eval(args):
    cfg, path = _config(args)
    out = _out_dir(args)
    split = args.split or cfg.data.test_split
    if (args.checkpoint is None) == (args.predictions is None):
        raise CliError("give exactly one of --checkpoint or --predictions")
    ds = load_dataset(args.data, [split])
    inputs = ([path] if path else []) + dataset_files(args.data)
    if args.checkpoint:
        model, meta = load_model(args.checkpoint)
        if meta.get("labels") not in (None, ds.label_map.names):
            raise DataError("checkpoint class names do not match the dataset mapping")
        step = cfg.data.frame_step if cfg.data.frame_step is not None else meta.get("frame_step", 1)
        report = evaluate(model, ds[split], frame_step=step)
        inputs.append(Path(args.checkpoint))
    else:
        pairs = []
        for v in ds[split]:
            pred_path = Path(args.predictions) / f"{v.id}.txt"
            pred = load_labels(pred_path, ds.label_map)
            if pred.size != v.num_frames:
                raise DataError(f"{pred_path}: {pred.size} predictions for {v.num_frames} frames")
            pairs.append((pred, v.labels))
            inputs.append(pred_path)
        report = evaluate_corpus(pairs)
    _report_files(out, report)
    _write_manifest(out, "eval", cfg, cfg.train.seed, inputs, None, {"split": split, "report": report.as_dict()})
    print(report.to_text())


def cmd_predict(args):
    cfg, path = _config(args)
    out = _out_dir(args)
    model, meta = load_model(args.checkpoint)
    names = meta.get("labels") or [str(i) for i in range(model.config.num_classes)]
    label_map = LabelMap(names)
    step = cfg.data.frame_step if cfg.data.frame_step is not None else meta.get("frame_step", 1)
    written = []
    for feat_path in args.features:
        feat_path = Path(feat_path)
        x = load_feature_file(feat_path)
        sample = VideoSample(feat_path.stem, x, np.zeros(x.shape[0], dtype=np.int64))
        pred = predict_video(model, sample, step)
        target = out / f"{feat_path.stem}.txt"
        write_labels(target, pred, label_map)
        written.append(str(target))
    _write_manifest(out, "predict", cfg, cfg.train.seed,
                    ([path] if path else []) + [Path(args.checkpoint)] + [Path(p) for p in args.features],
                    details={"outputs": [Path(p).name for p in written]})
    for p in written:
        print(p)


def cmd_gradcheck(args):
    cfg, path = _config(args)
    out = _out_dir(args)
    g = cfg.gradcheck
    model = init_model(cfg.model.build(g.input_dim, g.num_classes).validate(), seed=g.seed)
    rng = np.random.default_rng(g.seed)
    sample = VideoSample("gradcheck", rng.normal(size=(g.frames, g.input_dim)),
                         rng.integers(0, g.num_classes, g.frames))
    report = grad_check(model, sample, cfg.loss, num_params=g.num_params, h=g.h,
                        tolerance=g.tolerance, seed=g.seed, supervise=cfg.train.supervise)
    text = report.to_text()
    (out / "gradcheck.txt").write_text(text + "\n", encoding="utf-8")
    summary = {"passed": report.passed, "num_checked": report.num_checked,
               "max_rel_error": report.max_rel_error, "tolerance": report.tolerance}
    (out / "gradcheck.json").write_text(json.dumps(summary) + "\n", encoding="utf-8")
    _write_manifest(out, "gradcheck", cfg, g.seed, [path] if path else (), details=summary)
    print(text)
    if not report.passed:
        _fail("GradCheckFailed", text.splitlines()[0], status=1, **summary)


def ablation_rows(cfg, axis):
    """(row label, modified config) for one ablation axis."""
    if axis == "cross_mode":
        return [(m, cfg.replace("model", cross_mode=m)) for m in CROSS_AXIS]
    if axis == "loss":
        return [(f"lam={lam} beta={beta}", cfg.replace("loss", lam=lam, beta=beta))
                for lam, beta in LOSS_ABLATION_GRID]
    if axis == "layers":
        return [(f"N={n}", cfg.replace("model", num_layers=n)) for n in cfg.ablate.layers]
    if axis == "heads":
        # full-width heads so every row builds, including heads that do not divide the width
        return [(f"heads={h} dim={d}", cfg.replace("model", heads=h, model_dim=d, split_heads=False))
                for h, d in cfg.ablate.head_rows()]
    raise CliError(f"unknown ablation axis {axis!r}")


def _mean_report(reports):
    keys = ("acc", "edit", "f1_10", "f1_25", "f1_50")
    return MetricReport(*(float(np.mean([getattr(r, k) for r in reports])) for k in keys))


def format_table(rows):
    head = f"{'row':<22} {'F1@10':>7} {'F1@25':>7} {'F1@50':>7} {'Edit':>7} {'Acc':>7}"
    lines = [head, "-" * len(head)]
    for label, r in rows:
        lines.append(f"{label:<22} {r.f1_10:7.2f} {r.f1_25:7.2f} {r.f1_50:7.2f} {r.edit:7.2f} {r.acc:7.2f}")
    return "\n".join(lines)


def cmd_ablate(args):
    cfg, path = _config(args)
    out = _out_dir(args)
    step = cfg.data.resolved_frame_step()
    ds, train_videos = _load_split(args.data, cfg.data.train_split, step)
    test = load_dataset(args.data, [cfg.data.test_split])[cfg.data.test_split]
    rows = ablation_rows(cfg, args.axis)
    for _, variant in rows:
        variant.validate()
    table, records = [], []
    for label, variant in rows:
        per_seed = []
        for seed in cfg.ablate.seeds:
            run = variant.replace("train", seed=seed)
            model, _ = _train_one(run, train_videos, ds.label_map)
            per_seed.append(evaluate(model, test, frame_step=step))
            log.info("%s seed %d: %s", label, seed, per_seed[-1].as_dict())
        mean = _mean_report(per_seed)
        table.append((label, mean))
        records.append({"row": label, "mean": mean.as_dict(), "per_seed": [r.as_dict() for r in per_seed],
                        "config": variant.to_dict()})
    text = format_table(table)
    (out / "ablation.txt").write_text(text + "\n", encoding="utf-8")
    (out / "ablation.json").write_text(json.dumps({"axis": args.axis, "seeds": list(cfg.ablate.seeds),
                                                   "rows": records}, indent=2) + "\n", encoding="utf-8")
    inputs = ([path] if path else []) + dataset_files(args.data)
    _write_manifest(out, f"ablate:{args.axis}", cfg, cfg.ablate.seeds[0], inputs, args.data,
                    {"axis": args.axis, "rows": [{"row": r["row"], **r["mean"]} for r in records]})
    print(text)


# ---------------------------------------------------------------- parser

def _add_config_flags(p):
    p.add_argument("--config", help="INI config file, or the name of a bundled one (toy, benchmark, full)")
    group = p.add_argument_group("config overrides (take precedence over the file)")
    for key, tp, default in config_keys():
        group.add_argument(f"--{key}", dest=key, default=None, metavar="VALUE",
                           help=f"default: {format_value(default)}")


def build_parser():
    parser = _Parser(prog="cetnet", description="Cross-enhancement transformer for action segmentation.")
    parser.add_argument("--version", action="version", version=f"cetnet {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="dataset directory to create")
    _add_config_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="run directory for checkpoint, log and manifest")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint or a directory of predictions")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--checkpoint", help="model checkpoint (.cetm)")
    p.add_argument("--predictions", help="directory of <video>.txt label files")
    p.add_argument("--split", help="split to score (default: data.test_split)")
    p.add_argument("--out", required=True, help="run directory for the report")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="label the frames of feature files")
    p.add_argument("--checkpoint", required=True, help="model checkpoint (.cetm)")
    p.add_argument("--features", required=True, nargs="+", help="one or more .cetf files")
    p.add_argument("--out", required=True, help="directory for <video>.txt label files")
    _add_config_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check of the loss gradient")
    p.add_argument("--out", required=True, help="run directory for the report")
    _add_config_flags(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train and score a grid of variants")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--axis", required=True, choices=("cross_mode", "loss", "layers", "heads"))
    p.add_argument("--out", required=True, help="run directory for the table")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        _fail("ConfigError", str(exc), problems=exc.problems)
    except CliError as exc:
        _fail("UsageError", str(exc), status=2)
    except KNOWN_ERRORS as exc:
        _fail(type(exc).__name__, str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
