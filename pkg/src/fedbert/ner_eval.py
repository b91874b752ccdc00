"""IOB span decoding and exact-match span precision / recall / F1."""

from __future__ import annotations

from typing import NamedTuple, Sequence

from .errors import ContractError, FormatError

ENTITY_CLASSES = ("problem", "treatment", "test")
LABELS = ("O",) + tuple(f"{p}-{c}" for c in ENTITY_CLASSES for p in ("B", "I"))
LABEL_TO_ID = {label: i for i, label in enumerate(LABELS)}
OUTSIDE_ALIASES = {"O", "Null"}


class Span(NamedTuple):
    cls: str
    start: int
    end: int  # inclusive


def _parse(label: str) -> tuple[str, str | None]:
    if label in OUTSIDE_ALIASES:
        return "O", None
    prefix, sep, cls = label.partition("-")
    if not sep or prefix not in ("B", "I") or cls not in ENTITY_CLASSES:
        raise FormatError(f"unknown IOB label {label!r}")
    return prefix, cls


def decode_iob(tags: Sequence[str]) -> list[Span]:
    """Spans encoded by an IOB tag sequence.

    An ``I-x`` that does not continue an open span of class ``x`` opens a new
    span (conlleval-style lenient repair).
    """
    spans = []
    open_cls, start = None, -1
    for i, label in enumerate(tags):
        prefix, cls = _parse(label)
        if prefix == "I" and cls == open_cls:
            continue
        if open_cls is not None:
            spans.append(Span(open_cls, start, i - 1))
            open_cls = None
        if prefix != "O":
            open_cls, start = cls, i
    if open_cls is not None:
        spans.append(Span(open_cls, start, len(tags) - 1))
    return spans


def encode_iob(spans: Sequence[Span], length: int) -> list[str]:
    tags = ["O"] * length
    for span in sorted(spans, key=lambda s: s.start):
        if not 0 <= span.start <= span.end < length:
            raise ContractError(f"span {span} out of range for length {length}")
        if any(t != "O" for t in tags[span.start : span.end + 1]):
            raise ContractError(f"span {span} overlaps another span")
        tags[span.start] = f"B-{span.cls}"
        for i in range(span.start + 1, span.end + 1):
            tags[i] = f"I-{span.cls}"
    return tags


def is_well_formed(tags: Sequence[str]) -> bool:
    """True when every I-x directly follows B-x or I-x of the same class."""
    prev_cls = None
    for label in tags:
        prefix, cls = _parse(label)
        if prefix == "I" and cls != prev_cls:
            return False
        prev_cls = cls
    return True


class Scores(NamedTuple):
    precision: float
    recall: float
    f1: float


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def prf1(gold: Sequence[Sequence[Span]], pred: Sequence[Sequence[Span]]) -> Scores:
    """Micro-averaged exact-match span scores; 0/0 is taken as 0."""
    if len(gold) != len(pred):
        raise ContractError(f"{len(gold)} gold sequences vs {len(pred)} predicted")
    tp = n_gold = n_pred = 0
    for g, p in zip(gold, pred):
        gs, ps = set(g), set(p)
        tp += len(gs & ps)
        n_gold += len(gs)
        n_pred += len(ps)
    precision = _ratio(tp, n_pred)
    recall = _ratio(tp, n_gold)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Scores(precision, recall, f1)


def token_accuracy(gold_tags: Sequence[Sequence[str]], pred_tags: Sequence[Sequence[str]]) -> float:
    total = correct = 0
    for g, p in zip(gold_tags, pred_tags):
        if len(g) != len(p):
            raise ContractError(f"tag sequences of length {len(g)} and {len(p)}")
        total += len(g)
        correct += sum(a == b for a, b in zip(g, p))
    return _ratio(correct, total)


def score_tags(gold_tags, pred_tags) -> Scores:
    return prf1([decode_iob(t) for t in gold_tags], [decode_iob(t) for t in pred_tags])
