"""Command line entry point: stats, pretrain, train, predict, ensemble, evaluate, reproduce."""
import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib.resources import files
from multiprocessing import get_context
from pathlib import Path

from . import corpus
from .checkpoint import config_fingerprint, file_digest, relative_to
from .corpus import class_distribution, load_split, resolve_language
from .ensemble import EnsembleSpec, ensemble_predict, read_predictions, write_audit, write_predictions
from .estimator import OffensiveLanguageClassifier, train_classifier
from .metrics import compute_metrics, f1_acc, format_report
from .mlm import MaskedLMPretrainer, MLMDatasetSpec
from .training import TrainConfig

logger = logging.getLogger("codemix_offense")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
MANIFEST = "manifest.json"
TOY = "toy"
FAMILY_NAMES = {"mbert": "mBERT", "xlmr": "XLM-RoBERTa"}


class UsageError(Exception):
    pass


def toy_root():
    return Path(str(files("codemix_offense") / "data" / "toy"))


def resolve_root(data_root):
    root = corpus.data_root(data_root)
    if root is None or root == TOY:
        return toy_root()
    return Path(root)


def split_path(args, split):
    return corpus.default_split_path(resolve_root(args.data_root), args.language, split)


def write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _portable(config, directory, anchor):
    """Rewrite string values naming paths inside ``anchor`` relative to ``directory``."""
    if anchor is None:
        return config
    anchor = Path(anchor).resolve()
    out = {}
    for key, value in config.items():
        if isinstance(value, str) and Path(value).is_absolute() and Path(value).resolve().is_relative_to(anchor):
            value = relative_to(value, directory)
        out[key] = value
    return out


def write_manifest(directory, command, config, artifacts, status="ok", failed_step=None, data=None, anchor=None):
    """Record what produced ``directory`` so the command can be rerun identically.

    Paths in ``config`` that lie inside ``anchor`` are stored relative to ``directory``.
    """
    directory = Path(directory)
    config = _portable(config, directory, anchor)
    entries = {}
    for name, path in artifacts.items():
        path = Path(path)
        if path.is_file():
            entries[name] = {"path": str(path.relative_to(directory) if path.is_relative_to(directory) else path),
                             "sha256": file_digest(path)}
        elif path.is_dir():
            entries[name] = {"path": str(path.relative_to(directory) if path.is_relative_to(directory) else path),
                             "files": {str(p.relative_to(path)): file_digest(p) for p in sorted(path.rglob("*")) if p.is_file()}}
    payload = {
        "command": command,
        "config": config,
        "config_fingerprint": config_fingerprint(config),
        "data": data or {},
        "artifacts": entries,
        "status": status,
    }
    if failed_step:
        payload["failed_step"] = failed_step
    write_json(directory / MANIFEST, payload)
    return payload


def data_fingerprints(splits):
    return {s.split: {"size": len(s), "fingerprint": s.fingerprint()} for s in splits}


# --------------------------------------------------------------------------
# subcommands


def cmd_stats(args):
    path = Path(args.path) if args.path else split_path(args, args.split)
    split = load_split(path, args.language, args.split)
    payload = {"language": split.language, "split": split.split, "path": str(path), "size": len(split)}
    if split.is_labeled:
        payload.update(class_distribution(split).to_dict())
    reference = corpus.SPLIT_SIZES[split.language][split.split]
    payload["matches_reference_size"] = len(split) == reference
    print(json.dumps(payload, indent=2, ensure_ascii=False))
    return EXIT_OK


def _pretrain(language, backbone, data_root, out, epochs, seed, mask_rate=0.15, batch_size=8):
    root = resolve_root(data_root)
    splits = [load_split(corpus.default_split_path(root, language, s), language, s) for s in corpus.SPLITS]
    spec = MLMDatasetSpec.from_splits(*splits)
    pretrainer = MaskedLMPretrainer(backbone=backbone, epochs=epochs, seed=seed, mask_rate=mask_rate,
                                    batch_size=batch_size).fit(spec.train_texts, spec.eval_texts)
    ckpt = pretrainer.save(out)
    config = {"language": resolve_language(language), "backbone": backbone, "epochs": epochs, "seed": seed,
              "mask_rate": mask_rate, "batch_size": batch_size}
    write_manifest(out, "pretrain", config, {"checkpoint": out}, data=data_fingerprints(splits))
    return ckpt, pretrainer.report_


def cmd_pretrain(args):
    _, report = _pretrain(args.language, args.backbone, args.data_root, Path(args.out), args.epochs, args.seed,
                          args.mask_rate, args.batch_size)
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK


def _train_member(job):
    """Train one classifier; module level so it can run in a worker process."""
    logging.basicConfig(level=job.get("log_level", logging.WARNING))
    root = resolve_root(job["data_root"])
    train = load_split(corpus.default_split_path(root, job["language"], "train"), job["language"], "train")
    dev = load_split(corpus.default_split_path(root, job["language"], "dev"), job["language"], "dev")
    config = TrainConfig(epochs=job["epochs"], batch_size=job["batch_size"], seed=job["seed"],
                         encoder_lr=job.get("encoder_lr"))
    spec = {"architecture": job["architecture"], "backbone": job["backbone"], "from_checkpoint": job.get("from_checkpoint"),
            "input_mode": job.get("input_mode", "as-is")}
    _, _, record = train_classifier(spec, train, dev, config, output_dir=job["out"])
    write_manifest(job["out"], "train", job, {"checkpoint": job["out"]}, data=data_fingerprints([train, dev]),
                   anchor=job.get("run_dir"))
    return record.to_dict()


def _job_from_args(args, out):
    return {
        "language": resolve_language(args.language), "data_root": args.data_root, "architecture": args.architecture,
        "backbone": args.backbone, "from_checkpoint": args.from_checkpoint, "seed": args.seed, "epochs": args.epochs,
        "batch_size": args.batch_size, "input_mode": args.input_mode, "encoder_lr": args.encoder_lr, "out": str(out),
    }


def cmd_train(args):
    record = _train_member(_job_from_args(args, Path(args.out)))
    print(json.dumps(record, indent=2))
    return EXIT_OK


def _load_eval_split(args, path):
    return load_split(path, args.language, args.split)


def cmd_predict(args):
    model = OffensiveLanguageClassifier.load(args.model)
    data = _load_eval_split(args, args.data)
    records = model.predict_records(data.texts, ids=data.ids)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write("id\tlabel\n")
        for r in records:
            fh.write(f"{r.id}\t{r.label}\n")
    print(f"wrote {len(records)} predictions to {out}")
    return EXIT_OK


def cmd_ensemble(args):
    members = [m for m in args.members.split(",") if m]
    data = _load_eval_split(args, args.data)
    results = ensemble_predict(EnsembleSpec(members), data)
    write_predictions(results, args.out)
    audit = args.audit or str(Path(args.out).with_suffix(".audit.jsonl"))
    write_audit(results, audit, members)
    ties = sum(r.tie_broken for r in results)
    print(f"wrote {len(results)} predictions to {args.out} ({ties} tie(s) broken); audit in {audit}")
    return EXIT_OK


def evaluate_files(gold_path, pred_path, language):
    gold = load_split(gold_path, language, "dev")
    if not gold.is_labeled:
        raise UsageError(f"{gold_path} has unlabeled rows")
    preds = dict(read_predictions(pred_path))
    missing = [i for i in gold.ids if i not in preds]
    if missing:
        raise UsageError(f"{len(missing)} gold example(s) have no prediction, e.g. {missing[:3]}")
    return compute_metrics(gold.labels, [preds[i] for i in gold.ids], gold.schema)


def cmd_evaluate(args):
    report = evaluate_files(args.gold, args.pred, args.language)
    text, payload = format_report(report)
    print(text, end="")
    out = Path(args.out) if args.out else Path(args.pred).with_name("metrics.json")
    out.write_text(payload + "\n", encoding="utf-8")
    return EXIT_OK


def _table_row(name, mode, report):
    return f"{name:<22} | {mode:<6} | {f1_acc(report)}"


def cmd_reproduce(args):
    language = resolve_language(args.language)
    out = Path(args.out).resolve()
    out.mkdir(parents=True, exist_ok=True)
    toy = bool(args.toy) or resolve_root(args.data_root) == toy_root()
    data_root = TOY if toy else args.data_root
    families = ("mbert", "xlmr")
    backbone_of = {f: (f"toy-{f}" if toy else f) for f in families}
    seeds = [int(s) for s in args.seeds.split(",")]
    if len(set(seeds)) != len(seeds):
        raise UsageError("ensemble seeds must be distinct")
    config = {"language": language, "data_root": data_root, "input_mode": args.input_mode,
              "architecture": args.architecture, "backbones": backbone_of, "seeds": seeds, "epochs": args.epochs,
              "pretrain_epochs": args.pretrain_epochs, "batch_size": args.batch_size, "encoder_lr": args.encoder_lr,
              "skip_pretrain": args.skip_pretrain}
    artifacts, step = {}, "stats"
    root = resolve_root(data_root)
    try:
        splits = {s: load_split(corpus.default_split_path(root, language, s), language, s) for s in corpus.SPLITS}
        stats = {s: {"size": len(sp), **(class_distribution(sp).to_dict() if sp.is_labeled else {})}
                 for s, sp in splits.items()}
        write_json(out / "stats.json", stats)
        artifacts["stats"] = out / "stats.json"

        pretrained = {}
        for fam in families:
            step = f"pretrain-{fam}"
            if args.skip_pretrain:
                pretrained[fam] = None
                continue
            ckpt_dir = out / f"pretrain-{fam}"
            _pretrain(language, backbone_of[fam], data_root, ckpt_dir, args.pretrain_epochs, seeds[0],
                      batch_size=args.batch_size)
            pretrained[fam] = str(ckpt_dir)
            artifacts[step] = ckpt_dir

        step = "train"
        jobs, names = [], []
        for run, seed in enumerate(seeds, start=1):
            for fam in families:
                member_dir = out / "members" / f"{fam}-run{run}"
                jobs.append({
                    "language": language, "data_root": data_root, "architecture": args.architecture,
                    "backbone": backbone_of[fam], "from_checkpoint": pretrained[fam], "seed": seed,
                    "epochs": args.epochs, "batch_size": args.batch_size, "input_mode": args.input_mode,
                    "encoder_lr": args.encoder_lr, "out": str(member_dir), "run_dir": str(out),
                    "log_level": logger.getEffectiveLevel(),
                })
                names.append(f"{FAMILY_NAMES[fam]} (run-{run})")
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs, mp_context=get_context("spawn")) as pool:
                list(pool.map(_train_member, jobs))
        else:
            for job in jobs:
                _train_member(job)
        for job, name in zip(jobs, names):
            artifacts[f"member {name}"] = Path(job["out"])

        step = "ensemble"
        dev = splits["dev"]
        members = [job["out"] for job in jobs]
        results = ensemble_predict(EnsembleSpec(members, seeds=[j["seed"] for j in jobs]), dev)
        write_predictions(results, out / "pred.tsv")
        write_audit(results, out / "pred.audit.jsonl", [str(Path(m).relative_to(out)) for m in members])
        artifacts["predictions"] = out / "pred.tsv"
        artifacts["audit"] = out / "pred.audit.jsonl"

        step = "evaluate"
        rows = []
        mode = args.input_mode
        for job, name in zip(jobs, names):
            member = OffensiveLanguageClassifier.load(job["out"])
            rep = compute_metrics(dev.labels, list(member.predict(dev.texts)), dev.schema)
            rows.append(_table_row(name, mode, rep))
        report = compute_metrics(dev.labels, [r.final_label for r in results], dev.schema)
        text, payload = format_report(report)
        (out / "metrics.json").write_text(payload + "\n", encoding="utf-8")
        header = f"{'Model':<22} | {'Input':<6} | F1 / Acc (Dev Split) {language}"
        table = "\n".join([header, "-" * len(header)] + rows + ["-" * len(header),
                                                                _table_row("Ensemble (Mode)", mode, report)])
        (out / "report.txt").write_text(table + "\n\n" + text, encoding="utf-8")
        artifacts["metrics"] = out / "metrics.json"
        artifacts["report"] = out / "report.txt"
    except Exception:
        write_manifest(out, "reproduce", config, artifacts, status="failed", failed_step=step)
        raise
    write_manifest(out, "reproduce", config, artifacts,
                   data={s: {"size": len(sp), "fingerprint": sp.fingerprint()} for s, sp in splits.items()})
    print(table)
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def _common(p, split=False):
    p.add_argument("--language", help="kn/ta/ml or the full language name")
    p.add_argument("--data-root", dest="data_root",
                   help="directory holding <Language>/<split>.tsv; 'toy' for the bundled fixture "
                        "(default: $CODEMIX_OFFENSE_DATA, else the fixture)")
    if split:
        p.add_argument("--split", choices=corpus.SPLITS)


def _training_flags(p):
    p.add_argument("--backbone", choices=("mbert", "xlmr", "toy-mbert", "toy-xlmr"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)


DEFAULTS = {
    "stats": {"split": "train"},
    "pretrain": {"backbone": "toy-xlmr", "epochs": 5, "seed": 0, "batch_size": 8, "mask_rate": 0.15},
    "train": {"architecture": "cls", "backbone": "toy-xlmr", "epochs": 5, "seed": 0, "batch_size": 8,
              "input_mode": "as-is"},
    "predict": {"split": "test"},
    "ensemble": {"split": "dev"},
    "evaluate": {},
    "reproduce": {"architecture": "cls", "input_mode": "as-is", "epochs": 5, "pretrain_epochs": 5, "batch_size": 8,
                  "seeds": "1,2,3", "jobs": 1, "out": "runs/reproduce", "toy": False, "skip_pretrain": False},
}
REQUIRED = {
    "stats": ("language",),
    "pretrain": ("language", "out"),
    "train": ("language", "out"),
    "predict": ("language", "model", "data", "out"),
    "ensemble": ("language", "members", "data", "out"),
    "evaluate": ("language", "gold", "pred"),
    "reproduce": ("language",),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="codemix-offense", description=__doc__)
    parser.add_argument("--config", help="JSON file of option values; command-line flags take precedence")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("stats", help="split size and class distribution as JSON")
    _common(p, split=True)
    p.add_argument("--path", help="explicit TSV path instead of the data-root layout")

    p = sub.add_parser("pretrain", help="task-adaptive MLM pretraining on train+dev, evaluated on test")
    _common(p)
    _training_flags(p)
    p.add_argument("--mask-rate", dest="mask_rate", type=float)
    p.add_argument("--out")

    p = sub.add_parser("train", help="fine-tune one classifier with best-on-dev selection")
    _common(p)
    _training_flags(p)
    p.add_argument("--architecture", choices=("cls", "fusion", "charlstm"))
    p.add_argument("--from-checkpoint", dest="from_checkpoint")
    p.add_argument("--input-mode", dest="input_mode", choices=("as-is", "romanized"))
    p.add_argument("--encoder-lr", dest="encoder_lr", type=float)
    p.add_argument("--out")

    p = sub.add_parser("predict", help="label a TSV file with one trained classifier")
    _common(p, split=True)
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--out")

    p = sub.add_parser("ensemble", help="majority vote over trained classifiers")
    _common(p, split=True)
    p.add_argument("--members", help="comma-separated checkpoint directories")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--audit", help="audit JSONL path (default: next to --out)")

    p = sub.add_parser("evaluate", help="score an id<TAB>label prediction file against gold")
    _common(p)
    p.add_argument("--gold")
    p.add_argument("--pred")
    p.add_argument("--out", help="metrics JSON path (default: metrics.json next to --pred)")

    p = sub.add_parser("reproduce", help="stats -> pretrain -> train x6 -> ensemble -> evaluate")
    _common(p)
    p.add_argument("--architecture", choices=("cls", "fusion"))
    p.add_argument("--input-mode", dest="input_mode", choices=("as-is", "romanized"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--pretrain-epochs", dest="pretrain_epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--encoder-lr", dest="encoder_lr", type=float)
    p.add_argument("--seeds", help="comma-separated seeds, one run per seed and backbone family")
    p.add_argument("--jobs", type=int, help="train ensemble members in N parallel processes")
    p.add_argument("--toy", action="store_true", default=None, help="force toy backbones on the bundled fixture")
    p.add_argument("--skip-pretrain", dest="skip_pretrain", action="store_true", default=None)
    p.add_argument("--out")
    return parser


def resolve_options(parser, argv):
    """Merge defaults <- config file <- explicit flags."""
    args = parser.parse_args(argv)
    merged = dict(DEFAULTS[args.command])
    if args.config:
        try:
            merged.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    for key, value in vars(args).items():
        if value is not None:
            merged[key] = value
    for key in ("data_root", "path", "from_checkpoint", "encoder_lr", "audit", "out"):
        merged.setdefault(key, None)
    missing = [k for k in REQUIRED[args.command] if merged.get(k) is None]
    if missing:
        raise UsageError(f"{args.command}: missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))
    if merged.get("language") is not None:
        try:
            merged["language"] = resolve_language(merged["language"])
        except corpus.CorpusError as exc:
            raise UsageError(str(exc)) from None
    return argparse.Namespace(**merged)


COMMANDS = {
    "stats": cmd_stats, "pretrain": cmd_pretrain, "train": cmd_train, "predict": cmd_predict,
    "ensemble": cmd_ensemble, "evaluate": cmd_evaluate, "reproduce": cmd_reproduce,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = resolve_options(parser, argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    start = time.perf_counter()
    try:
        status = COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        logger.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    logger.info("%s finished in %.1fs", args.command, time.perf_counter() - start)
    return status


if __name__ == "__main__":
    sys.exit(main())
