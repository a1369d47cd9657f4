"""Command-line entry point.

Subcommands cover the whole pipeline: corpus build, knowledge annotate,
kgraph dump, train pretrain, train finetune, generate, evaluate, and
selftest. Structured JSON-lines events go to stderr; human-readable
summaries go to stdout. Exit codes: 0 success, 1 usage error, 2 runtime
error. All randomness in a subcommand flows from its --seed.

Every artifact-producing command writes a `<artifact>.meta.json` sidecar
carrying the resolved configuration and seed, so outputs are traceable
without breaking the line-oriented file formats.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

CONFIG_ENV = "PUNCHGEN_CONFIG"


def log_event(**fields) -> None:
    print(json.dumps(fields), file=sys.stderr)


def say(message: str) -> None:
    print(message)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write_meta(artifact: Path, command: str, config, seed: int | None = None) -> None:
    meta = {"command": command, "config": config.to_dict() if config else None}
    if seed is not None:
        meta["seed"] = seed
    Path(str(artifact) + ".meta.json").write_text(
        json.dumps(meta, sort_keys=True, indent=1), encoding="utf-8")


def _load_run_config(args) -> "config.RunConfig":
    from . import config

    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    if path:
        cfg = config.RunConfig.load(path)
    else:
        cfg = config.preset(getattr(args, "preset", None) or "desk")
    for attr, target in (("max_steps", "max_steps"), ("batch_size", "batch_size"),
                         ("learning_rate", "learning_rate"), ("eval_every", "eval_every")):
        value = getattr(args, attr, None)
        if value is not None:
            setattr(cfg.train, target, value)
    if getattr(args, "seed", None) is not None:
        cfg.train.seed = args.seed
    return cfg


# ------------------------------------------------------------------ subcommands


def cmd_corpus_build(args) -> int:
    from .corpus import build_corpus, write_jsonl

    cfg = _load_run_config(args)
    threshold = args.dedup_threshold if args.dedup_threshold is not None else cfg.dedup_threshold
    split = build_corpus(args.input, dedup_threshold=threshold, seed=args.seed)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, records in (("train", split.train), ("valid", split.valid), ("test", split.test)):
        path = out / f"{name}.jsonl"
        write_jsonl(records, path)
        _write_meta(path, "corpus build", cfg, seed=args.seed)
        log_event(event="corpus.split", split=name, records=len(records))
    say(f"corpus: {len(split.train)}/{len(split.valid)}/{len(split.test)} "
        f"train/valid/test records -> {out}")
    return 0


def cmd_knowledge_annotate(args) -> int:
    from . import knowledge
    from .corpus import read_jsonl, write_jsonl

    cfg = _load_run_config(args)
    records = read_jsonl(args.input)
    if args.fixtures:
        provider = knowledge.FixtureProvider(args.fixtures)
        linker, store = provider, provider
    elif args.live:
        if not (args.linker_url and args.sparql_url):
            raise UsageError("--live needs --linker-url and --sparql-url")
        linker = knowledge.HttpLinker(args.linker_url, cache_path=args.cache)
        store = knowledge.SparqlTripleStore(args.sparql_url, cache_path=args.cache)
    else:
        raise UsageError("choose --fixtures PATH or --live")
    annotated = knowledge.annotate_dataset(
        records, linker, store,
        max_per_entity=args.max_per_entity, in_flight=args.workers)
    out = Path(args.output or args.input + ".annotated")
    write_jsonl(annotated, out)
    _write_meta(out, "knowledge annotate", cfg)
    covered = sum(1 for r in annotated if r.triples)
    log_event(event="knowledge.annotated", records=len(annotated), with_triples=covered)
    say(f"annotated {len(annotated)} records ({covered} with triples) -> {out}")
    return 0


def cmd_kgraph_dump(args) -> int:
    from .corpus import read_jsonl
    from .kgraph import build_graph, to_dot

    records = read_jsonl(args.input)
    if not 0 <= args.record < len(records):
        raise UsageError(f"--record must be in [0, {len(records) - 1}]")
    rec = records[args.record]
    if not rec.triples:
        raise RuntimeError(f"record {args.record} has no triples; nothing to dump")
    dot = to_dot(build_graph(rec.triples))
    if args.output:
        Path(args.output).write_text(dot, encoding="utf-8")
        say(f"wrote {args.output}")
    else:
        sys.stdout.write(dot)
    return 0


def _load_splits(data_dir: str):
    from .corpus import DatasetSplit, read_jsonl

    data = Path(data_dir)
    return DatasetSplit(
        train=read_jsonl(data / "train.jsonl"),
        valid=read_jsonl(data / "valid.jsonl"),
        test=read_jsonl(data / "test.jsonl") if (data / "test.jsonl").exists() else [],
    )


def _metrics_logger():
    def log(event):
        log_event(**event)

    return log


def cmd_train_pretrain(args) -> int:
    from . import training
    from .tokenizer import Tokenizer, train_tokenizer

    cfg = _load_run_config(args)
    split = _load_splits(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tok_path = Path(args.tokenizer) if args.tokenizer else out / "tokenizer.bpe"
    if tok_path.exists():
        tokenizer = Tokenizer.load(tok_path)
    else:
        texts = [r.full_text() for r in split.train]
        texts += [" ".join(t) for r in split.train for t in r.triples]
        tokenizer = train_tokenizer(texts, vocab_size=cfg.model.vocab_size)
        tokenizer.save(tok_path)
        log_event(event="tokenizer.trained", vocab_size=tokenizer.vocab_size, path=str(tok_path))
    result = training.pretrain(split, cfg.model, cfg.train, tokenizer,
                               log_fn=_metrics_logger())
    ckpt = out / "pretrain.best"
    training.save_checkpoint(ckpt, result.model, step=result.steps_run)
    _write_meta(ckpt, "train pretrain", cfg, seed=cfg.train.seed)
    say(f"pretrain: best valid loss {result.best_val_loss:.4f} "
        f"after {result.steps_run} steps -> {ckpt}")
    return 0


def cmd_train_finetune(args) -> int:
    from . import training

    cfg = _load_run_config(args)
    split = _load_splits(args.data)
    model, _, _, _ = training.load_checkpoint(args.init)
    if model.fused:
        raise RuntimeError(f"{args.init} is already a fused checkpoint")
    fused = training.transplant(model, seed=cfg.train.seed)
    result = training.finetune(fused, split, cfg.train, log_fn=_metrics_logger())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "finetune.best"
    training.save_checkpoint(ckpt, result.model, step=result.steps_run)
    _write_meta(ckpt, "train finetune", cfg, seed=cfg.train.seed)
    say(f"finetune: best valid loss {result.best_val_loss:.4f} "
        f"after {result.steps_run} steps -> {ckpt}")
    return 0


def cmd_generate(args) -> int:
    from .decoding import generate_file
    from .model import load_model

    cfg = _load_run_config(args)
    model = load_model(args.ckpt)
    out = Path(args.output)
    n = generate_file(args.input, model, out, beam=args.beam, max_len=args.max_len,
                      length_normalize=not args.raw_score,
                      refs_path=args.refs_output)
    _write_meta(out, "generate", cfg)
    log_event(event="generate.done", records=n, beam=args.beam)
    say(f"generated {n} punchlines -> {out}")
    return 0


def cmd_evaluate(args) -> int:
    from .evaluation import evaluate_corpus

    report = evaluate_corpus(args.hyps, args.refs)
    payload = json.dumps(report.to_dict(), sort_keys=True, indent=1)
    if args.output:
        Path(args.output).write_text(payload + "\n", encoding="utf-8")
    if args.json:
        say(payload)
    else:
        say(report.table())
    log_event(event="evaluate.done", **{k: v for k, v in report.to_dict().items()
                                        if k != "n_lines"}, n_lines=report.n_lines)
    return 0


def cmd_selftest(args) -> int:
    from . import selftest

    results = selftest.run_all(entries_per_tensor=args.entries)
    failures = 0
    for r in results:
        say(f"{'PASS' if r.passed else 'FAIL':4} {r.name:32} {r.seconds:6.2f}s  {r.detail}")
        log_event(event="selftest.check", name=r.name, passed=r.passed,
                  seconds=round(r.seconds, 3), detail=r.detail)
        failures += not r.passed
    if failures:
        raise RuntimeError(f"{failures} selftest check(s) failed")
    say(f"all {len(results)} checks passed")
    return 0


# ---------------------------------------------------------------------- parser


def build_parser() -> _Parser:
    parser = _Parser(prog="punchgen",
                     description="knowledge-enhanced punchline generation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    corpus = sub.add_parser("corpus", help="corpus pipeline").add_subparsers(
        dest="subcommand", required=True)
    build = corpus.add_parser("build", help="filter, segment, de-duplicate, split")
    build.add_argument("--input", action="append", required=True,
                       help="raw jokes: text (one per line) or CSV with a Joke column; repeatable")
    build.add_argument("--output-dir", required=True)
    build.add_argument("--dedup-threshold", type=float, default=None)
    build.add_argument("--seed", type=int, default=0)
    build.add_argument("--config")
    build.set_defaults(fn=cmd_corpus_build)

    know = sub.add_parser("knowledge", help="knowledge acquisition").add_subparsers(
        dest="subcommand", required=True)
    annotate = know.add_parser("annotate", help="attach triples to records")
    annotate.add_argument("--input", required=True)
    annotate.add_argument("--output")
    annotate.add_argument("--fixtures", help="offline fixture JSON")
    annotate.add_argument("--live", action="store_true")
    annotate.add_argument("--linker-url")
    annotate.add_argument("--sparql-url")
    annotate.add_argument("--cache", help="on-disk response cache path")
    annotate.add_argument("--max-per-entity", type=int, default=10)
    annotate.add_argument("--workers", type=int, default=4)
    annotate.add_argument("--config")
    annotate.set_defaults(fn=cmd_knowledge_annotate)

    kg = sub.add_parser("kgraph", help="knowledge graph tools").add_subparsers(
        dest="subcommand", required=True)
    dump = kg.add_parser("dump", help="emit one record's graph as DOT")
    dump.add_argument("--input", required=True)
    dump.add_argument("--record", type=int, required=True)
    dump.add_argument("--output")
    dump.set_defaults(fn=cmd_kgraph_dump)

    train = sub.add_parser("train", help="two-step training").add_subparsers(
        dest="subcommand", required=True)
    for stage in ("pretrain", "finetune"):
        p = train.add_parser(stage)
        p.add_argument("--data", required=True, help="directory with train/valid[/test].jsonl")
        p.add_argument("--out", required=True, help="checkpoint output directory")
        p.add_argument("--config", help=f"YAML run config (or ${CONFIG_ENV})")
        p.add_argument("--preset", choices=["desk", "paper"])
        p.add_argument("--seed", type=int)
        p.add_argument("--max-steps", type=int, dest="max_steps")
        p.add_argument("--batch-size", type=int, dest="batch_size")
        p.add_argument("--learning-rate", type=float, dest="learning_rate")
        p.add_argument("--eval-every", type=int, dest="eval_every")
        if stage == "pretrain":
            p.add_argument("--tokenizer", help="existing tokenizer file (default: train one)")
            p.set_defaults(fn=cmd_train_pretrain)
        else:
            p.add_argument("--init", required=True, help="pretrained checkpoint to transplant")
            p.set_defaults(fn=cmd_train_finetune)

    gen = sub.add_parser("generate", help="beam-search punchlines for a dataset")
    gen.add_argument("--ckpt", required=True)
    gen.add_argument("--input", required=True)
    gen.add_argument("--output", default="hyps.txt")
    gen.add_argument("--refs-output", help="also write reference punchlines here")
    gen.add_argument("--beam", type=int, default=5)
    gen.add_argument("--max-len", type=int, default=64)
    gen.add_argument("--raw-score", action="store_true",
                     help="rank final hypotheses by raw log-probability")
    gen.add_argument("--config")
    gen.add_argument("--preset", choices=["desk", "paper"])
    gen.set_defaults(fn=cmd_generate)

    ev = sub.add_parser("evaluate", help="ROUGE-1/2/L scoring")
    ev.add_argument("--hyps", required=True)
    ev.add_argument("--refs", required=True)
    group = ev.add_mutually_exclusive_group()
    group.add_argument("--json", action="store_true")
    group.add_argument("--table", action="store_true")
    ev.add_argument("--output", help="also write the JSON report here")
    ev.set_defaults(fn=cmd_evaluate)

    st = sub.add_parser("selftest", help="gradient and oracle property suites")
    st.add_argument("--entries", type=int, default=2,
                    help="finite-difference entries per tensor for the full-model check")
    st.set_defaults(fn=cmd_selftest)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print("run 'punchgen --help' for usage", file=sys.stderr)
        return 1
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - single CLI boundary
        log_event(event="error", type=type(exc).__name__, message=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
