"""The six-experiment matrix: {no, centralized, federated} pre-training x {centralized, federated} fine-tuning."""

from __future__ import annotations

import csv
import json
import logging
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, NamedTuple

import numpy as np

from .attention import AttentionProfile, compare_profiles, profile_model, write_attention_report
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    Corpus,
    Vocab,
    build_vocab,
    corpus_sentences,
    generate_corpus,
    generate_probe_sentences,
    make_mlm_examples,
    read_documents,
    read_ner,
    split_silos_by_note,
    split_silos_by_patient,
)
from .errors import ConfigError, StageError
from .federated import MetricsWriter, SiloHandle, run_centralized, run_federated
from .model import Bert, ModelConfig, ParamSet, init_params
from .trainer import FINETUNE, PRETRAIN, TrainerConfig, encode_all, evaluate_ner

log = logging.getLogger(__name__)

PRETRAINING = ("none", "centralized", "federated")
FINETUNING = ("centralized", "federated")
PRETRAIN_LABELS = {"none": "BERTbase", "centralized": "ClinicalBERT", "federated": "Fed_ClinicalBERT"}
FINETUNE_LABELS = {"centralized": "Centralized", "federated": "Federated"}
# experiment number -> (pre-training, fine-tuning)
EXPERIMENTS = {
    1: ("none", "centralized"),
    2: ("centralized", "centralized"),
    3: ("federated", "centralized"),
    4: ("none", "federated"),
    5: ("centralized", "federated"),
    6: ("federated", "federated"),
}
RESULT_COLUMNS = ("task", "pretraining", "fine_tuning", "prec", "rec", "f1")


@dataclass(frozen=True)
class CorpusConfig:
    num_patients: int = 200
    notes_per_patient: int = 8
    ner_train_notes: int = 150
    ner_test_notes: int = 40
    held_out_fraction: float = 0.3
    corpus_dir: str | None = None


@dataclass(frozen=True)
class ExperimentSpec:
    pretraining: str = "federated"
    finetuning: str = "federated"
    model: ModelConfig = field(default_factory=ModelConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    pretrain_trainer: TrainerConfig = field(default_factory=lambda: TrainerConfig(learning_rate=1e-3, batch_size=32))
    finetune_trainer: TrainerConfig = field(default_factory=lambda: TrainerConfig(learning_rate=1e-3, batch_size=8))
    silos: int = 5
    cycles_pretrain: int = 10
    cycles_finetune: int = 6
    epochs_pretrain_centralized: int | None = None
    epochs_finetune_centralized: int = 4
    local_epochs: int = 1
    seed: int = 0
    vocab_size: int = 500
    pretrain_seq_len: int = 64
    probe_size: int = 128
    distance_mode: str = "mean"
    task: str = "synthetic_ner"
    out: str = "runs/default"
    keep_cycle_checkpoints: bool = True
    silo_workers: int = 1
    jobs: int = 1
    figures: bool = True

    def __post_init__(self):
        if self.pretraining not in PRETRAINING:
            raise ConfigError(f"pretraining must be one of {PRETRAINING}, got {self.pretraining!r}")
        if self.finetuning not in FINETUNING:
            raise ConfigError(f"finetuning must be one of {FINETUNING}, got {self.finetuning!r}")
        if self.silos < 1 or self.cycles_pretrain < 1 or self.cycles_finetune < 1:
            raise ConfigError("silos and cycle counts must be >= 1")
        if self.distance_mode not in ("mean", "sum"):
            raise ConfigError(f"distance_mode must be 'mean' or 'sum', got {self.distance_mode!r}")

    @property
    def pretrain_epochs(self) -> int:
        return self.epochs_pretrain_centralized or self.cycles_pretrain

    def for_experiment(self, number: int) -> "ExperimentSpec":
        if number not in EXPERIMENTS:
            raise ConfigError(f"experiment must be in 1..6, got {number}")
        pre, fine = EXPERIMENTS[number]
        return replace(self, pretraining=pre, finetuning=fine)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentSpec":
        d = dict(d)
        nested = {"model": ModelConfig, "corpus": CorpusConfig, "pretrain_trainer": TrainerConfig, "finetune_trainer": TrainerConfig}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key, typ in nested.items():
            if key in d and isinstance(d[key], Mapping):
                d[key] = typ(**d[key])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def derive_seed(seed: int, *labels) -> int:
    words = [int(seed)] + [zlib.crc32(str(x).encode()) for x in labels]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


class ResultRow(NamedTuple):
    task: str
    pretraining: str
    fine_tuning: str
    prec: float
    rec: float
    f1: float

    @property
    def key(self) -> tuple[str, str]:
        return self.pretraining, self.fine_tuning


def write_results(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow([r.task, r.pretraining, r.fine_tuning, repr(r.prec), repr(r.rec), repr(r.f1)])


def read_results(path) -> list[ResultRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader)
        if tuple(header) != RESULT_COLUMNS:
            raise ConfigError(f"unexpected results header {header}")
        return [ResultRow(t, p, f, float(a), float(b), float(c)) for t, p, f, a, b, c in reader]


# --------------------------------------------------------------------------
# shared data preparation


@dataclass
class Workspace:
    """Corpus, vocabulary and model shared by all cells of one matrix run."""

    spec: ExperimentSpec
    corpus: Corpus
    vocab: Vocab
    model: Bert
    initial: ParamSet
    out: Path

    @classmethod
    def prepare(cls, spec: ExperimentSpec) -> "Workspace":
        c = spec.corpus
        if c.corpus_dir:
            root = Path(c.corpus_dir)
            corpus = Corpus(
                read_documents(root / "documents.jsonl"),
                read_ner(root / "ner_train.jsonl"),
                read_ner(root / "ner_test.jsonl"),
                {},
            )
        else:
            corpus = generate_corpus(
                derive_seed(spec.seed, "corpus"),
                c.num_patients,
                c.notes_per_patient,
                ner_train_notes=c.ner_train_notes,
                ner_test_notes=c.ner_test_notes,
                held_out_fraction=c.held_out_fraction,
                num_sites=max(spec.silos, 1),
            )
        vocab = build_vocab(corpus_sentences(corpus), spec.vocab_size)
        config = replace(spec.model, vocab_size=len(vocab))
        model = Bert(config)
        out = Path(spec.out)
        out.mkdir(parents=True, exist_ok=True)
        vocab.save(out / "vocab.txt")
        return cls(spec, corpus, vocab, model, init_params(config, derive_seed(spec.seed, "init")), out)

    @property
    def metrics_path(self) -> Path:
        return self.out / "metrics.jsonl"

    def pretrain_checkpoint(self, condition: str) -> Path:
        return self.out / "checkpoints" / f"pretrain_{condition}" / "final.fcrp"

    def finetune_checkpoint(self, pre: str, fine: str) -> Path:
        return self.out / "checkpoints" / f"finetune_{pre}_{fine}" / "final.fcrp"

    def _writer(self, stage_dir: str, **context) -> MetricsWriter:
        ckpt_dir = self.out / "checkpoints" / stage_dir if self.spec.keep_cycle_checkpoints else None
        return MetricsWriter(self.metrics_path, ckpt_dir, **context)

    # ---------------------------------------------------------------- stages

    def pretrained(self, condition: str, resume: bool = True) -> ParamSet:
        """Parameters entering fine-tuning for a pre-training condition."""
        if condition == "none":
            return self.initial
        path = self.pretrain_checkpoint(condition)
        if resume and path.exists():
            return load_checkpoint(path)
        spec = self.spec
        cfg = replace(spec.pretrain_trainer, seed=derive_seed(spec.seed, "pretrain-train"))
        writer = self._writer(f"pretrain_{condition}", stage=PRETRAIN, pretraining=condition)
        try:
            if condition == "centralized":
                examples = make_mlm_examples(
                    self.vocab, self.corpus.documents, spec.pretrain_seq_len, derive_seed(spec.seed, "mlm", "central")
                )
                params = run_centralized(self.model, self.initial, examples, spec.pretrain_epochs, cfg, PRETRAIN, on_epoch=writer)
            else:
                silos = split_silos_by_patient(self.corpus.documents, spec.silos, derive_seed(spec.seed, "split-patients"))
                handles = [
                    SiloHandle(
                        s.index,
                        make_mlm_examples(self.vocab, s.items, spec.pretrain_seq_len, derive_seed(spec.seed, "mlm", s.index)),
                        s.sample_size,
                    )
                    for s in silos
                ]
                history = run_federated(
                    self.model, self.initial, handles, spec.cycles_pretrain, cfg, PRETRAIN,
                    local_epochs=spec.local_epochs, workers=spec.silo_workers, on_cycle=writer,
                )
                params = history[-1].params
        except Exception as exc:
            raise StageError(f"pre-training ({condition}) failed: {exc}") from exc
        save_checkpoint(params, path)
        return params

    def finetune(self, start: ParamSet, pre: str, fine: str) -> ParamSet:
        spec = self.spec
        seq_len = self.model.config.max_seq_len
        # one fine-tuning seed for every cell: only the starting point varies
        cfg = replace(spec.finetune_trainer, seed=derive_seed(spec.seed, "finetune-train"))
        writer = self._writer(f"finetune_{pre}_{fine}", stage=FINETUNE, pretraining=pre, fine_tuning=fine)
        try:
            if fine == "centralized":
                feats = encode_all(self.vocab, self.corpus.ner_train, seq_len)
                return run_centralized(self.model, start, feats, spec.epochs_finetune_centralized, cfg, FINETUNE, on_epoch=writer)
            silos = split_silos_by_note(self.corpus.ner_train, spec.silos, derive_seed(spec.seed, "split-notes"))
            handles = [SiloHandle(s.index, encode_all(self.vocab, s.items, seq_len), s.sample_size) for s in silos]
            history = run_federated(
                self.model, start, handles, spec.cycles_finetune, cfg, FINETUNE,
                local_epochs=spec.local_epochs, workers=spec.silo_workers, on_cycle=writer,
            )
            return history[-1].params
        except Exception as exc:
            raise StageError(f"fine-tuning ({pre} -> {fine}) failed: {exc}") from exc

    def evaluate(self, params: ParamSet, pre: str, fine: str) -> ResultRow:
        feats = encode_all(self.vocab, self.corpus.ner_test, self.model.config.max_seq_len)
        report = evaluate_ner(self.model, params, feats)
        s = report.scores
        with open(self.metrics_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({
                "stage": "evaluation", "pretraining": pre, "fine_tuning": fine,
                "precision": s.precision, "recall": s.recall, "f1": s.f1,
                "token_accuracy": report.token_accuracy,
            }) + "\n")
        return ResultRow(self.spec.task, PRETRAIN_LABELS[pre], FINETUNE_LABELS[fine], s.precision, s.recall, s.f1)

    def run_cell(self, pre: str, fine: str, resume: bool = True) -> ResultRow:
        start = self.pretrained(pre, resume)
        params = self.finetune(start, pre, fine)
        save_checkpoint(params, self.finetune_checkpoint(pre, fine))
        return self.evaluate(params, pre, fine)

    def attention_profiles(self) -> list[AttentionProfile]:
        probe = generate_probe_sentences(derive_seed(self.spec.seed, "probe"), self.spec.probe_size)
        return [
            profile_model(PRETRAIN_LABELS[c], self.model, self.pretrained(c), self.vocab, probe)
            for c in PRETRAINING
        ]


# --------------------------------------------------------------------------
# entry points


def run_experiment(spec: ExperimentSpec, resume: bool = False) -> ResultRow:
    """Run one cell of the matrix and merge its row into ``results.tsv``."""
    ws = Workspace.prepare(spec)
    path = ws.out / "results.tsv"
    existing = {r.key: r for r in read_results(path)} if path.exists() else {}
    key = (PRETRAIN_LABELS[spec.pretraining], FINETUNE_LABELS[spec.finetuning])
    if resume and key in existing:
        return existing[key]
    row = ws.run_cell(spec.pretraining, spec.finetuning, resume=resume)
    existing[row.key] = row
    write_results(_ordered(existing), path)
    return row


def _ordered(rows: Mapping[tuple[str, str], ResultRow]) -> list[ResultRow]:
    out = []
    for pre, fine in EXPERIMENTS.values():
        key = (PRETRAIN_LABELS[pre], FINETUNE_LABELS[fine])
        if key in rows:
            out.append(rows[key])
    return out


@dataclass
class MatrixOutcome:
    rows: list[ResultRow]
    skipped: list[int]
    failures: dict[int, str]
    attention: object | None
    out: Path


def _cell_job(spec: ExperimentSpec, number: int, resume: bool) -> ResultRow:
    ws = Workspace.prepare(spec)
    pre, fine = EXPERIMENTS[number]
    return ws.run_cell(pre, fine, resume=resume)


def run_matrix(base_spec: ExperimentSpec, resume: bool = False, experiments=None) -> MatrixOutcome:
    """All six experiments plus the three-model attention comparison.

    Completed rows are written even when other cells fail; failures are
    listed in ``failures.tsv``.
    """
    spec = base_spec
    ws = Workspace.prepare(spec)
    path = ws.out / "results.tsv"
    if not resume:
        for stale in (path, ws.metrics_path, ws.out / "failures.tsv"):
            stale.unlink(missing_ok=True)
    rows = {r.key: r for r in read_results(path)} if path.exists() else {}
    numbers = sorted(experiments or EXPERIMENTS)
    todo, skipped = [], []
    for n in numbers:
        pre, fine = EXPERIMENTS[n]
        if resume and (PRETRAIN_LABELS[pre], FINETUNE_LABELS[fine]) in rows:
            skipped.append(n)
        else:
            todo.append(n)
    failures: dict[int, str] = {}

    # pre-training conditions are shared between fine-tuning modes
    for cond in dict.fromkeys(EXPERIMENTS[n][0] for n in todo):
        try:
            ws.pretrained(cond, resume=True if resume else False)
        except StageError as exc:
            for n in todo:
                if EXPERIMENTS[n][0] == cond:
                    failures[n] = str(exc)
    runnable = [n for n in todo if n not in failures]
    if spec.jobs > 1 and len(runnable) > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            futures = {n: pool.submit(_cell_job, spec, n, True) for n in runnable}
            outcomes = {}
            for n, fut in futures.items():
                try:
                    outcomes[n] = fut.result()
                except Exception as exc:
                    outcomes[n] = exc
    else:
        outcomes = {}
        for n in runnable:
            pre, fine = EXPERIMENTS[n]
            log.info("experiment %d: %s pre-training, %s fine-tuning", n, pre, fine)
            try:
                outcomes[n] = ws.run_cell(pre, fine, resume=True)
            except Exception as exc:
                outcomes[n] = exc
    for n, result in outcomes.items():
        if isinstance(result, Exception):
            failures[n] = f"{type(result).__name__}: {result}"
        else:
            rows[result.key] = result
            write_results(_ordered(rows), path)
    write_results(_ordered(rows), path)
    if failures:
        with open(ws.out / "failures.tsv", "w", encoding="utf-8") as fh:
            fh.write("experiment\terror\n")
            for n, msg in sorted(failures.items()):
                fh.write(f"{n}\t{msg}\n")

    attention = None
    try:
        profiles = ws.attention_profiles()
        attention = compare_profiles(profiles, spec.distance_mode)
        write_attention_report(attention, ws.out / "attention_report.tsv")
    except StageError as exc:
        failures[0] = f"attention analysis: {exc}"
        profiles = []
    if spec.figures:
        from .plotting import render_report

        render_report(ws.out, profiles)
    return MatrixOutcome(_ordered(rows), skipped, failures, attention, ws.out)
