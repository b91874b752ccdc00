"""Command line entry point: ``fedbert run | export-corpus | show-config``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .data import build_vocab, corpus_sentences, generate_corpus, write_documents, write_ner
from .errors import FedBertError
from .experiments import EXPERIMENTS, ExperimentSpec, derive_seed, run_experiment, run_matrix


def _spec_from_args(args) -> ExperimentSpec:
    spec = ExperimentSpec.load(args.config) if args.config else ExperimentSpec()
    overrides = {
        "seed": args.seed,
        "out": args.out,
        "silos": args.silos,
        "cycles_pretrain": args.cycles_pretrain,
        "cycles_finetune": args.cycles_finetune,
        "jobs": args.jobs,
        "silo_workers": args.silo_workers,
    }
    spec = replace(spec, **{k: v for k, v in overrides.items() if v is not None})
    if args.no_figures:
        spec = replace(spec, figures=False)
    return spec


def cmd_run(args) -> int:
    spec = _spec_from_args(args)
    if args.experiment == "all":
        outcome = run_matrix(spec, resume=args.resume)
        for row in outcome.rows:
            print(f"{row.pretraining}\t{row.fine_tuning}\tP={row.prec:.4f}\tR={row.rec:.4f}\tF1={row.f1:.4f}")
        if outcome.skipped:
            print(f"skipped (already complete): {outcome.skipped}")
        for n, msg in sorted(outcome.failures.items()):
            print(f"experiment {n} failed: {msg}", file=sys.stderr)
        print(f"outputs in {outcome.out}")
        return 1 if outcome.failures else 0
    row = run_experiment(spec.for_experiment(int(args.experiment)), resume=args.resume)
    print(f"{row.pretraining}\t{row.fine_tuning}\tP={row.prec:.4f}\tR={row.rec:.4f}\tF1={row.f1:.4f}")
    return 0


def cmd_export_corpus(args) -> int:
    spec = ExperimentSpec.load(args.config) if args.config else ExperimentSpec()
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    c = spec.corpus
    corpus = generate_corpus(
        derive_seed(spec.seed, "corpus"),
        c.num_patients,
        c.notes_per_patient,
        ner_train_notes=c.ner_train_notes,
        ner_test_notes=c.ner_test_notes,
        held_out_fraction=c.held_out_fraction,
        num_sites=spec.silos,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_documents(corpus.documents, out / "documents.jsonl")
    write_ner(corpus.ner_train, out / "ner_train.jsonl")
    write_ner(corpus.ner_test, out / "ner_test.jsonl")
    build_vocab(corpus_sentences(corpus), spec.vocab_size).save(out / "vocab.txt")
    print(f"wrote {len(corpus.documents)} notes, {len(corpus.ner_train)}/{len(corpus.ner_test)} NER sentences to {out}")
    return 0


def cmd_show_config(args) -> int:
    spec = ExperimentSpec.load(args.config) if args.config else ExperimentSpec()
    print(json.dumps(spec.to_dict(), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedbert", description="Federated pre-training and NER fine-tuning of a small BERT.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment or the full six-cell matrix")
    run.add_argument("--config", help="JSON experiment config (see show-config)")
    run.add_argument("--experiment", default="all", choices=["all"] + [str(n) for n in EXPERIMENTS])
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory")
    run.add_argument("--resume", action="store_true", help="skip cells and stages already on disk")
    run.add_argument("--silos", type=int)
    run.add_argument("--cycles-pretrain", type=int)
    run.add_argument("--cycles-finetune", type=int)
    run.add_argument("--jobs", "--parallel", type=int, dest="jobs", help="experiment cells run in parallel processes")
    run.add_argument("--silo-workers", type=int, help="silos trained concurrently within a cycle")
    run.add_argument("--no-figures", action="store_true")
    run.set_defaults(func=cmd_run)

    exp = sub.add_parser("export-corpus", help="write the synthetic corpus and vocabulary as JSONL / text")
    exp.add_argument("--config")
    exp.add_argument("--seed", type=int)
    exp.add_argument("--out", required=True)
    exp.set_defaults(func=cmd_export_corpus)

    show = sub.add_parser("show-config", help="print the effective config as JSON")
    show.add_argument("--config")
    show.set_defaults(func=cmd_show_config)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(message)s")
    try:
        return args.func(args)
    except FedBertError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
