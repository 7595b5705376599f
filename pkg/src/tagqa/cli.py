"""Command-line entry point: ``tagqa <verb> [options]``.

Every verb writes ``<out>/<verb>.manifest.json`` with content hashes of its
inputs and outputs. Failures print a JSON error record on stderr, write it
to ``<out>/<verb>.error.json`` and exit nonzero.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import random
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._base import LeakageError
from .config import ConfigError, ModelConfig, format_config, load_config
from .core.checkpoint import CheckpointError
from .experiments import (
    MODALITY_ROWS,
    SELECTION_ROWS,
    Experiment,
    ExperimentSettings,
    mean_by_corpus,
    modality_ablation,
    selection_ablation,
)
from .scene import CorpusError, load_corpus, save_corpus
from .synth import corpus_stats, synth_generate
from .tag import TagGenerator
from .vqa import EvalReport, TextVqaModel, evaluate

log = logging.getLogger("tagqa")

EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_LEAKAGE = 3
HELD_OUT = ("val", "test")


class ArtifactError(FileNotFoundError):
    pass


def git_hash(path) -> str:
    """Git blob id of a file's content."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _require(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing artifact: {path}")
    return path


def _split_of_path(path: Path, declared: str | None) -> str:
    if declared:
        return declared
    stem = path.name.split(".")[0].lower()
    for name in HELD_OUT:
        if stem == name or stem.endswith("_" + name) or stem.endswith("-" + name):
            return name
    return "train"


def _training_corpus(path, declared):
    path = _require(path)
    split = _split_of_path(path, declared)
    if split != "train":
        raise LeakageError(f"refusing to train or augment on the {split!r} split ({path})")
    return path, load_corpus(path)


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _write_curve(path: Path, curve) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "loss", "lr"])
        for it, loss, lr in curve:
            w.writerow([it, repr(float(loss)), repr(float(lr))])
    return path


# -- verbs -------------------------------------------------------------------------
def cmd_synth(args, cfg, out: Path):
    splits = synth_generate(args.seed, args.scenes, args.ocr_min, args.sparsity)
    outputs = []
    for name, scenes in zip(("train", "val", "test"), splits):
        p = out / f"{name}.jsonl"
        save_corpus(scenes, p)
        outputs.append(p)
    stats = {name: corpus_stats(sc) for name, sc in zip(("train", "val", "test"), splits)}
    outputs.append(_write_json(out / "stats.json", stats))
    return [], outputs


def cmd_train_tag(args, cfg, out: Path):
    path, scenes = _training_corpus(args.corpus, args.split)
    modalities = tuple(m for m in args.modalities.split(",") if m)
    tag = TagGenerator.from_config(cfg, modalities=modalities).fit(scenes)
    ckpt = out / "tag.ckpt"
    tag.save(ckpt)
    vocab = out / "tag.vocab"
    tag.vocab_.save(vocab)
    curve = _write_curve(out / "tag_loss_curve.csv", tag.loss_curve_)
    return [path], [ckpt, vocab, vocab.with_suffix(".bigrams"), curve]


def cmd_augment(args, cfg, out: Path):
    ckpt = _require(args.checkpoint)
    path, scenes = _training_corpus(args.corpus, args.split)
    tag = TagGenerator.load(ckpt)
    aug = tag.augment(scenes, args.strategy)
    corpus_out = out / "augmented.jsonl"
    save_corpus(aug.scenes, corpus_out)
    manifest = _write_json(out / "augment_manifest.json", aug.manifest)
    accepted = [g for g in aug.generations if g.pair is not None]
    rnd = random.Random(args.seed)
    sample = sorted(rnd.sample(range(len(accepted)), min(args.dump, len(accepted))))
    dump = out / "generations.jsonl"
    with open(dump, "w") as fh:
        for i in sample:
            fh.write(json.dumps(accepted[i].dump_record(), sort_keys=True) + "\n")
    return [ckpt, path], [corpus_out, manifest, dump]


def cmd_train_vqa(args, cfg, out: Path):
    path, scenes = _training_corpus(args.corpus, args.split)
    model = TextVqaModel.from_config(cfg, scale_iters=not args.no_scale).fit(scenes)
    ckpt = out / "vqa.ckpt"
    model.save(ckpt)
    curve = _write_curve(out / "vqa_loss_curve.csv", model.loss_curve_)
    info = _write_json(out / "vqa_train.json", {
        "corpus": path.stem, "seed": cfg.seed, "max_iters": model.n_iters_,
        "lr_decay_steps": list(model.decay_steps_), "checkpoint_id": model.checkpoint_id(),
    })
    return [path], [ckpt, curve, info]


def cmd_eval(args, cfg, out: Path):
    ckpt = _require(args.checkpoint)
    path = _require(args.corpus)
    model = TextVqaModel.load(ckpt)
    report = evaluate(model, load_corpus(path))
    body = report.to_dict()
    body["label"] = args.label or ckpt.parent.name
    body["seed"] = model.seed
    body["checkpoint_id"] = model.checkpoint_id()
    rep = _write_json(out / "eval.json", body)
    rows = out / "eval.csv"
    report.write_csv(rows)
    log.info("accuracy %.4f anls %.4f over %d questions", report.accuracy, report.anls, report.n_examples)
    return [ckpt, path], [rep, rows]


def _markdown_table(header, rows) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(str(c) for c in r) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def _write_results(out: Path, stem: str, results, title: str):
    csv_path = out / f"{stem}.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["corpus", "seed", "accuracy", "anls", "n_pairs", "vqa_iters"])
        for r in results:
            w.writerow([r.corpus, r.seed, repr(r.accuracy), repr(r.anls), r.n_pairs, r.vqa_iters])
    means = mean_by_corpus(results)
    rows = [(k, f"{v:.4f}") for k, v in means.items()]
    md = out / f"{stem}.md"
    md.write_text(f"# {title}\n\nMean validation accuracy per row.\n\n"
                  + _markdown_table(["row", "accuracy"], rows))
    return [csv_path, md]


def _settings(args, cfg: ModelConfig) -> ExperimentSettings:
    base = ExperimentSettings()
    return ExperimentSettings(
        n_scenes=args.scenes, sparsity=args.sparsity,
        base=base.base.with_(d=cfg.d, layers=cfg.layers, heads=cfg.heads, dropout=cfg.dropout,
                             lr=cfg.lr, batch_size=cfg.batch_size,
                             lr_decay_factor=cfg.lr_decay_factor),
        tag_iters=args.tag_iters or base.tag_iters, vqa_iters=args.vqa_iters or base.vqa_iters,
    )


def cmd_ablate(args, cfg, out: Path):
    seeds = [int(s) for s in args.seeds.split(",")]
    exp = Experiment(_settings(args, cfg))
    if args.which == "modality":
        results = modality_ablation(seeds, MODALITY_ROWS, experiment=exp)
        title = "Generator input modalities"
    else:
        results = selection_ablation(seeds, SELECTION_ROWS, experiment=exp)
        title = "Answer selection strategies"
    outputs = _write_results(out, f"ablate_{args.which}", results, title)
    return [], outputs


def cmd_report(args, cfg, out: Path):
    paths = [_require(p) for p in args.evals]
    runs = [json.loads(p.read_text()) for p in paths]
    header = ["corpus", "seed", "accuracy", "anls", "n_examples"]
    rows = sorted((r["label"], r["seed"], r["accuracy"], r["anls"], r["n_examples"]) for r in runs)
    csv_path = out / "report.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([row[0], row[1], repr(row[2]), repr(row[3]), row[4]])
    labels = sorted({r[0] for r in rows})
    means = {lab: {m: float(np.mean([r[i] for r in rows if r[0] == lab])) for m, i in (("accuracy", 2), ("anls", 3))}
             for lab in labels}
    best = {m: max(labels, key=lambda lab: means[lab][m]) for m in ("accuracy", "anls")}
    summary = [(lab, *(f"{means[lab][m]:.4f}" + (" (best)" if best[m] == lab else "") for m in ("accuracy", "anls")))
               for lab in labels]
    per_run = [(r[0], r[1], f"{r[2]:.4f}", f"{r[3]:.4f}", r[4]) for r in rows]
    md = out / "report.md"
    md.write_text("# Validation comparison\n\n## Mean per corpus\n\n"
                  + _markdown_table(["corpus", "accuracy", "anls"], summary)
                  + "\n## Runs\n\n" + _markdown_table(header, per_run))
    return paths, [csv_path, md]


COMMANDS = {
    "synth": cmd_synth,
    "train-tag": cmd_train_tag,
    "augment": cmd_augment,
    "train-vqa": cmd_train_vqa,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="tagqa", description=__doc__.splitlines()[0], parents=[common])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    s.add_argument("--scenes", type=int, default=1000)
    s.add_argument("--sparsity", type=float, default=0.4)
    s.add_argument("--ocr-min", type=int, default=5)

    for name in ("train-tag", "train-vqa"):
        s = sub.add_parser(name, parents=[common])
        s.add_argument("--corpus", required=True)
        s.add_argument("--split", choices=("train", "val", "test"), help="defaults to the file name")
    sub.choices["train-tag"].add_argument("--modalities", default="obj,ocr",
                                          help="comma list from obj,ocr; empty for answer only")
    sub.choices["train-vqa"].add_argument("--no-scale", action="store_true",
                                          help="do not stretch iterations by the pair-count ratio")

    s = sub.add_parser("augment", parents=[common])
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--split", choices=("train", "val", "test"))
    s.add_argument("--strategy", default="largest", help="largest, random[:seed], topK")
    s.add_argument("--dump", type=int, default=20, help="generated pairs to sample into the dump")

    s = sub.add_parser("eval", parents=[common])
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--label", help="corpus label used by report")

    s = sub.add_parser("ablate", parents=[common])
    s.add_argument("--which", choices=("modality", "selection"), required=True)
    s.add_argument("--seeds", default="0,1,2")
    s.add_argument("--scenes", type=int, default=1000)
    s.add_argument("--sparsity", type=float, default=0.4)
    s.add_argument("--tag-iters", type=int)
    s.add_argument("--vqa-iters", type=int)

    s = sub.add_parser("report", parents=[common])
    s.add_argument("evals", nargs="+", help="eval.json files")
    return p


def _error_record(command, exc, code) -> dict:
    return {"status": "error", "command": command, "exit_code": code,
            "error": type(exc).__name__, "message": str(exc)}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    t0 = time.perf_counter()
    try:
        cfg = load_config(args.config) if args.config else ModelConfig()
        if args.seed is not None:
            cfg = cfg.with_(seed=args.seed)
        else:
            args.seed = cfg.seed
        out.mkdir(parents=True, exist_ok=True)
        inputs, outputs = COMMANDS[args.command](args, cfg, out)
    except Exception as exc:
        if isinstance(exc, LeakageError):
            code = EXIT_LEAKAGE
        elif isinstance(exc, (ConfigError, ValueError, ArtifactError, CorpusError, CheckpointError)):
            code = EXIT_USAGE
        else:
            code = EXIT_ERROR
        record = _error_record(args.command, exc, code)
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        try:
            out.mkdir(parents=True, exist_ok=True)
            _write_json(out / f"{args.command}.error.json", record)
        except OSError:
            pass
        return code
    manifest = {
        "status": "ok",
        "command": args.command,
        "argv": argv,
        "config": cfg.to_dict(),
        "config_text": format_config(cfg),
        "seed": args.seed,
        "inputs": {str(p): git_hash(p) for p in inputs},
        "outputs": {str(p): git_hash(p) for p in outputs},
        "duration_s": round(time.perf_counter() - t0, 3),
        "version": __version__,
    }
    _write_json(out / f"{args.command}.manifest.json", manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
