"""Synthetic clinical-style corpus, subword tokenizer, example builders and silo splits."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, SplitError
from .model import IGNORE_INDEX
from .ner_eval import ENTITY_CLASSES, LABEL_TO_ID, is_well_formed

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIALS = (PAD, UNK, CLS, SEP, MASK)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(5)


# --------------------------------------------------------------------------
# domain records


@dataclass
class Document:
    patient_id: str
    note_id: str
    sentences: list[list[str]]


@dataclass
class NERExample:
    tokens: list[str]
    tags: list[str]
    note_id: str = ""
    patient_id: str = ""


@dataclass
class SiloDataset:
    """One silo's share of the data.

    ``units`` are the patient ids (pre-training) or note ids (fine-tuning)
    assigned to the silo; ``sample_size`` is their count.
    """

    index: int
    items: list
    sample_size: int
    units: list[str] = field(default_factory=list)


@dataclass
class Corpus:
    documents: list[Document]
    ner_train: list[NERExample]
    ner_test: list[NERExample]
    held_out_heads: dict[str, list[str]]


# --------------------------------------------------------------------------
# synthetic generator

DEFAULT_LEXICONS: dict[str, dict[str, list[str]]] = {
    "problem": {
        "heads": (
            "asthma pneumonia hypertension diabetes sepsis anemia cellulitis pancreatitis "
            "cirrhosis bronchitis gastritis arrhythmia hypotension hyperkalemia hyponatremia "
            "hypoxia delirium dementia seizures stroke fever cough edema ascites jaundice "
            "nausea vomiting diarrhea constipation dysphagia dyspnea tachycardia bradycardia "
            "syncope fatigue headache hematuria hemoptysis melena pruritus"
        ).split(),
        "modifiers": "severe acute chronic mild worsening recurrent".split(),
    },
    "treatment": {
        "heads": (
            "aspirin heparin insulin metoprolol lisinopril furosemide vancomycin ceftriaxone "
            "amoxicillin prednisone warfarin morphine ondansetron pantoprazole atorvastatin "
            "albuterol lorazepam haloperidol levofloxacin metformin amiodarone digoxin "
            "diltiazem enoxaparin oxycodone acetaminophen ibuprofen gabapentin lactulose "
            "rifaximin thiamine folate magnesium potassium dexamethasone hydralazine "
            "nitroglycerin clopidogrel simvastatin azithromycin"
        ).split(),
        "modifiers": "iv oral topical nebulized subcutaneous".split(),
    },
    "test": {
        "heads": (
            "ct mri ultrasound echocardiogram electrocardiogram radiograph colonoscopy "
            "endoscopy biopsy angiogram troponin lactate creatinine hemoglobin platelets "
            "bilirubin lipase albumin glucose urinalysis culture ferritin procalcitonin "
            "spirometry paracentesis thoracentesis bronchoscopy cystoscopy mammogram "
            "densitometry electroencephalogram telemetry fibrinogen amylase ammonia "
            "cortisol haptoglobin reticulocytes eosinophils lymphocytes"
        ).split(),
        "modifiers": "chest abdominal head serum urine blood".split(),
    },
}

TEMPLATES_BY_CLASS = {
    "problem": [
        "patient reports {problem}",
        "he has {problem}",
        "she has {problem}",
        "{problem} was noted on admission",
        "course complicated by {problem}",
        "she developed {problem} overnight",
        "{problem} resolved prior to discharge",
    ],
    "treatment": [
        "{treatment} was started",
        "treated with {treatment}",
        "he was given {treatment}",
        "{treatment} was discontinued",
        "continue {treatment} at home",
        "she received {treatment} in the emergency department",
    ],
    "test": [
        "{test} was ordered",
        "{test} showed no acute findings",
        "{test} was unremarkable",
        "obtained {test} this morning",
        "follow up {test} is pending",
    ],
}
COMBINED_TEMPLATES = [
    "patient reports {problem} treated with {treatment} after {test}",
    "{test} confirmed {problem} and {treatment} was started",
    "{problem} managed with {treatment}",
    "{test} revealed {problem}",
]
# the slot class cannot be inferred from the surrounding words
AMBIGUOUS_TEMPLATES = [
    "history of {any}",
    "discussed {any} with family",
    "{any} per primary team",
    "no mention of {any} in prior records",
    "see note regarding {any}",
    "{any} was reviewed",
    "plan to address {any} as outpatient",
]
FILLER_SENTENCES = [
    "patient is a pleasant elderly man",
    "patient is a pleasant elderly woman",
    "vital signs stable",
    "discharged home in good condition",
    "follow up with primary care in two weeks",
    "diet as tolerated",
    "ambulating without assistance",
    "family at bedside",
]


def _validate_lexicons(lexicons: Mapping[str, Mapping[str, Sequence[str]]]) -> None:
    seen: dict[str, str] = {}
    for cls in ENTITY_CLASSES:
        if cls not in lexicons or not lexicons[cls].get("heads"):
            raise ConfigError(f"empty lexicon for class {cls!r}")
        for word in list(lexicons[cls]["heads"]) + list(lexicons[cls].get("modifiers", ())):
            if word in seen and seen[word] != cls:
                raise ConfigError(f"{word!r} appears in both {seen[word]} and {cls} lexicons")
            seen[word] = cls


def tag_with_lexicon(tokens: Sequence[str], lexicon: Mapping[str, Iterable[str]]) -> list[str]:
    """IOB tags from greedy longest-match of lexicon phrases over ``tokens``.

    ``lexicon`` maps class -> phrases (space separated words).
    """
    phrases: dict[tuple[str, ...], str] = {}
    for cls, items in lexicon.items():
        for phrase in items:
            phrases[tuple(phrase.lower().split())] = cls
    longest = max((len(p) for p in phrases), default=0)
    words = [t.lower() for t in tokens]
    tags = ["O"] * len(words)
    i = 0
    while i < len(words):
        for n in range(min(longest, len(words) - i), 0, -1):
            cls = phrases.get(tuple(words[i : i + n]))
            if cls:
                tags[i] = f"B-{cls}"
                tags[i + 1 : i + n] = [f"I-{cls}"] * (n - 1)
                i += n
                break
        else:
            i += 1
    return tags


class _SentenceFactory:
    def __init__(self, lexicons, rng: np.random.Generator, num_sites: int = 5):
        self.lex = lexicons
        self.rng = rng
        self.num_sites = num_sites

    def phrase(self, cls: str, heads: Sequence[str], site: int | None) -> list[str]:
        if site is None:
            head = heads[self.rng.integers(len(heads))]
        else:
            # each site favours a different fifth of the inventory
            w = np.array([3.0 if i % self.num_sites == site else 1.0 for i in range(len(heads))])
            head = heads[self.rng.choice(len(heads), p=w / w.sum())]
        mods = self.lex[cls].get("modifiers", ())
        if mods and self.rng.random() < 0.35:
            return [mods[self.rng.integers(len(mods))], head]
        return [head]

    def sentence(self, heads: Mapping[str, Sequence[str]], site=None, p_filler=0.15, p_ambiguous=0.2):
        r = self.rng.random()
        if r < p_filler:
            words = FILLER_SENTENCES[self.rng.integers(len(FILLER_SENTENCES))].split()
            return words, ["O"] * len(words)
        if r < p_filler + p_ambiguous:
            template = AMBIGUOUS_TEMPLATES[self.rng.integers(len(AMBIGUOUS_TEMPLATES))]
        elif self.rng.random() < 0.25:
            template = COMBINED_TEMPLATES[self.rng.integers(len(COMBINED_TEMPLATES))]
        else:
            cls = ENTITY_CLASSES[self.rng.integers(3)]
            pool = TEMPLATES_BY_CLASS[cls]
            template = pool[self.rng.integers(len(pool))]
        words, tags = [], []
        for piece in template.split():
            if piece.startswith("{") and piece.endswith("}"):
                cls = piece[1:-1]
                if cls == "any":
                    cls = ENTITY_CLASSES[self.rng.integers(3)]
                phrase = self.phrase(cls, heads[cls], site)
                words += phrase
                tags += [f"B-{cls}"] + [f"I-{cls}"] * (len(phrase) - 1)
            else:
                words.append(piece)
                tags.append("O")
        return words, tags


def _note_examples(factory, heads, n_notes, prefix, sent_range, site_of=None):
    out = []
    for j in range(n_notes):
        n_sent = int(factory.rng.integers(sent_range[0], sent_range[1] + 1))
        for _ in range(n_sent):
            words, tags = factory.sentence(heads, site=None if site_of is None else site_of(j))
            out.append(NERExample(words, tags, note_id=f"{prefix}-n{j:04d}", patient_id=f"{prefix}-p{j:04d}"))
    return out


def generate_corpus(
    seed: int,
    num_patients: int = 200,
    notes_per_patient: int = 3,
    entity_lexicons=None,
    *,
    ner_train_notes: int = 60,
    ner_test_notes: int = 40,
    held_out_fraction: float = 0.3,
    sentences_per_note: tuple[int, int] = (4, 8),
    num_sites: int = 5,
) -> Corpus:
    """Templated discharge-summary-like notes with gold IOB tags.

    Pre-training documents draw on the full entity inventory.  Annotated
    training notes never mention the held-out head words; test notes mention
    them about half the time, so they can only be recognized through what
    pre-training learned about them.
    """
    lex = DEFAULT_LEXICONS if entity_lexicons is None else entity_lexicons
    _validate_lexicons(lex)
    if num_patients < 1 or notes_per_patient < 1:
        raise ConfigError("num_patients and notes_per_patient must be >= 1")
    rng = np.random.default_rng(seed)
    factory = _SentenceFactory(lex, rng, num_sites)
    all_heads = {c: list(lex[c]["heads"]) for c in ENTITY_CLASSES}
    held_out, seen = {}, {}
    for c in ENTITY_CLASSES:
        perm = rng.permutation(len(all_heads[c]))
        k = int(round(held_out_fraction * len(perm)))
        if len(perm) - k < 1:
            raise ConfigError(f"held_out_fraction leaves no training heads for {c!r}")
        held_out[c] = sorted(all_heads[c][i] for i in perm[:k])
        seen[c] = [h for h in all_heads[c] if h not in held_out[c]]

    documents = []
    for p in range(num_patients):
        site = int(rng.integers(num_sites))
        for n in range(int(rng.integers(1, notes_per_patient + 1))):
            n_sent = int(rng.integers(sentences_per_note[0], sentences_per_note[1] + 1))
            sentences = [factory.sentence(all_heads, site=site)[0] for _ in range(n_sent)]
            documents.append(Document(f"p{p:05d}", f"p{p:05d}-n{n}", sentences))

    ner_train = _note_examples(factory, seen, ner_train_notes, "train", sentences_per_note)

    def mixed_heads():
        # half the entity mentions come from held-out heads
        return {c: (held_out[c] if rng.random() < 0.5 and held_out[c] else seen[c]) for c in ENTITY_CLASSES}

    ner_test = []
    for j in range(ner_test_notes):
        n_sent = int(rng.integers(sentences_per_note[0], sentences_per_note[1] + 1))
        for _ in range(n_sent):
            words, tags = factory.sentence(mixed_heads())
            ner_test.append(NERExample(words, tags, note_id=f"test-n{j:04d}", patient_id=f"test-p{j:04d}"))
    return Corpus(documents, ner_train, ner_test, held_out)


def generate_probe_sentences(seed: int, n: int = 128, entity_lexicons=None) -> list[list[str]]:
    """Held-out sentences from the pre-training distribution, for attention analysis."""
    lex = DEFAULT_LEXICONS if entity_lexicons is None else entity_lexicons
    _validate_lexicons(lex)
    factory = _SentenceFactory(lex, np.random.default_rng(seed))
    heads = {c: list(lex[c]["heads"]) for c in ENTITY_CLASSES}
    return [factory.sentence(heads, p_filler=0.0)[0] for _ in range(n)]


# --------------------------------------------------------------------------
# vocabulary and tokenizer


class Vocab:
    """Subword vocabulary with greedy longest-match segmentation.

    Continuation pieces carry a ``##`` prefix.  A word that cannot be fully
    covered maps to a single ``[UNK]``.
    """

    max_chars_per_word = 100

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[: len(SPECIALS)]) != SPECIALS:
            raise ConfigError(f"vocabulary must start with {SPECIALS}")
        if len(set(tokens)) != len(tokens):
            raise ConfigError("vocabulary contains duplicate tokens")
        self.id_to_token = tokens
        self.token_to_id = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def word_pieces(self, word: str) -> list[int]:
        if len(word) > self.max_chars_per_word:
            return [UNK_ID]
        pieces, start = [], 0
        while start < len(word):
            end = len(word)
            found = None
            while end > start:
                piece = word[start:end] if start == 0 else "##" + word[start:end]
                found = self.token_to_id.get(piece)
                if found is not None:
                    break
                end -= 1
            if found is None:
                return [UNK_ID]
            pieces.append(found)
            start = end
        return pieces

    def tokenize_words(self, words: Sequence[str]) -> list[list[int]]:
        return [self.word_pieces(w.lower()) for w in words]

    def tokenize(self, text: str | Sequence[str]) -> list[int]:
        words = text.split() if isinstance(text, str) else text
        return [i for piece in self.tokenize_words(words) for i in piece]

    def detokenize(self, ids: Sequence[int]) -> str:
        words: list[str] = []
        for i in ids:
            tok = self.id_to_token[i]
            if tok.startswith("##") and words:
                words[-1] += tok[2:]
            else:
                words.append(tok)
        return " ".join(words)

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.id_to_token) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


def build_vocab(corpus: Iterable[Sequence[str]], max_size: int = 500) -> Vocab:
    """Learn a vocabulary from tokenized sentences.

    Order: specials, every character seen (word-initial and ``##``
    continuation), whole words by descending frequency, then frequent
    ``##`` suffixes until ``max_size`` is reached.
    """
    counts: Counter = Counter()
    for sentence in corpus:
        counts.update(w.lower() for w in sentence)
    if not counts:
        raise ConfigError("cannot build a vocabulary from an empty corpus")
    tokens = list(SPECIALS)
    have = set(tokens)

    def push(tok):
        if tok not in have and len(tokens) < max_size:
            tokens.append(tok)
            have.add(tok)

    initials = sorted({w[0] for w in counts})
    inner = sorted({c for w in counts for c in w[1:]})
    for c in initials:
        push(c)
    for c in inner:
        push("##" + c)
    for word, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        push(word)
    suffixes: Counter = Counter()
    for word, n in counts.items():
        for k in range(2, 5):
            if len(word) > k:
                suffixes["##" + word[-k:]] += n
    for piece, _ in sorted(suffixes.items(), key=lambda kv: (-kv[1], kv[0])):
        push(piece)
    return Vocab(tokens)


def corpus_sentences(corpus: Corpus) -> list[list[str]]:
    """Sentences the vocabulary is learned from: the unlabelled pre-training notes."""
    return [s for d in corpus.documents for s in d.sentences]


# --------------------------------------------------------------------------
# pre-training examples


@dataclass
class MLMExample:
    token_ids: np.ndarray
    segment_ids: np.ndarray
    mlm_labels: np.ndarray
    is_next: int


@dataclass
class MLMBatch:
    token_ids: np.ndarray
    segment_ids: np.ndarray
    attn_mask: np.ndarray
    mlm_labels: np.ndarray
    nsp_labels: np.ndarray

    def __len__(self) -> int:
        return self.token_ids.shape[0]


def _truncate_pair(a: list[int], b: list[int], budget: int) -> None:
    while len(a) + len(b) > budget:
        longer = a if len(a) >= len(b) else b
        longer.pop()


def _mask_tokens(ids: np.ndarray, rng: np.random.Generator, vocab_size: int, mask_prob: float):
    labels = np.full(ids.shape, IGNORE_INDEX, dtype=np.int64)
    candidates = np.nonzero(ids >= len(SPECIALS))[0]
    if len(candidates) == 0:
        return ids, labels
    n_pick = max(1, int(round(len(candidates) * mask_prob)))
    picked = np.sort(rng.choice(candidates, size=n_pick, replace=False))
    out = ids.copy()
    labels[picked] = ids[picked]
    for pos in picked:
        r = rng.random()
        if r < 0.8:
            out[pos] = MASK_ID
        elif r < 0.9:
            out[pos] = rng.integers(len(SPECIALS), vocab_size)
    return out, labels


def make_mlm_examples(
    vocab: Vocab,
    documents: Sequence[Document],
    seq_len: int,
    seed: int,
    *,
    mask_prob: float = 0.15,
) -> list[MLMExample]:
    """Sentence-pair examples with BERT-style masking and NSP labels.

    For every adjacent sentence pair of a document, segment B is the true
    next sentence with probability 1/2 and otherwise a sentence from a
    different document.  Single-sentence documents yield one unpaired example
    whose NSP label is ignored.
    """
    if seq_len < 4:
        raise ConfigError("seq_len must leave room for [CLS] and two [SEP]")
    rng = np.random.default_rng(seed)
    tokenized = [[vocab.tokenize(s) for s in d.sentences] for d in documents]
    examples = []
    for di, sents in enumerate(tokenized):
        if not sents:
            continue
        if len(sents) < 2:
            pairs = [(list(sents[0]), None, IGNORE_INDEX)]
        else:
            pairs = []
            for i in range(len(sents) - 1):
                a = list(sents[i])
                if rng.random() < 0.5 or len(tokenized) < 2:
                    pairs.append((a, list(sents[i + 1]), 1))
                else:
                    other = int(rng.integers(len(tokenized) - 1))
                    other += other >= di
                    while not tokenized[other]:
                        other = (other + 1) % len(tokenized)
                    pool = tokenized[other]
                    pairs.append((a, list(pool[rng.integers(len(pool))]), 0))
        for a, b, is_next in pairs:
            if b is None:
                a = a[: seq_len - 2]
                ids = [CLS_ID] + a + [SEP_ID]
                seg = [0] * len(ids)
            else:
                _truncate_pair(a, b, seq_len - 3)
                ids = [CLS_ID] + a + [SEP_ID] + b + [SEP_ID]
                seg = [0] * (len(a) + 2) + [1] * (len(b) + 1)
            masked, labels = _mask_tokens(np.array(ids, dtype=np.int64), rng, len(vocab), mask_prob)
            examples.append(MLMExample(masked, np.array(seg, dtype=np.int64), labels, is_next))
    return examples


def collate_mlm(examples: Sequence[MLMExample]) -> MLMBatch:
    S = max(len(e.token_ids) for e in examples)
    B = len(examples)
    ids = np.full((B, S), PAD_ID, dtype=np.int64)
    seg = np.zeros((B, S), dtype=np.int64)
    mask = np.zeros((B, S))
    labels = np.full((B, S), IGNORE_INDEX, dtype=np.int64)
    for i, e in enumerate(examples):
        n = len(e.token_ids)
        ids[i, :n] = e.token_ids
        seg[i, :n] = e.segment_ids
        mask[i, :n] = 1.0
        labels[i, :n] = e.mlm_labels
    nsp = np.array([e.is_next for e in examples], dtype=np.int64)
    return MLMBatch(ids, seg, mask, labels, nsp)


# --------------------------------------------------------------------------
# fine-tuning examples


@dataclass
class NERFeature:
    """A tokenized NER sentence; only the first piece of each word is labelled."""

    token_ids: np.ndarray
    labels: np.ndarray
    word_starts: np.ndarray
    tags: list[str]


@dataclass
class NERBatch:
    token_ids: np.ndarray
    segment_ids: np.ndarray
    attn_mask: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.token_ids.shape[0]


def encode_ner(vocab: Vocab, example: NERExample, seq_len: int) -> NERFeature:
    if len(example.tokens) != len(example.tags):
        raise ConfigError("tokens and tags differ in length")
    ids, labels, starts, tags = [CLS_ID], [IGNORE_INDEX], [], []
    for pieces, tag in zip(vocab.tokenize_words(example.tokens), example.tags):
        if len(ids) + len(pieces) > seq_len - 1:
            break
        starts.append(len(ids))
        tags.append(tag)
        labels += [LABEL_TO_ID["O" if tag == "Null" else tag]] + [IGNORE_INDEX] * (len(pieces) - 1)
        ids += pieces
    ids.append(SEP_ID)
    labels.append(IGNORE_INDEX)
    return NERFeature(
        np.array(ids, dtype=np.int64), np.array(labels, dtype=np.int64), np.array(starts, dtype=np.int64), tags
    )


def collate_ner(features: Sequence[NERFeature]) -> NERBatch:
    S = max(len(f.token_ids) for f in features)
    B = len(features)
    ids = np.full((B, S), PAD_ID, dtype=np.int64)
    mask = np.zeros((B, S))
    labels = np.full((B, S), IGNORE_INDEX, dtype=np.int64)
    for i, f in enumerate(features):
        n = len(f.token_ids)
        ids[i, :n] = f.token_ids
        mask[i, :n] = 1.0
        labels[i, :n] = f.labels
    return NERBatch(ids, np.zeros((B, S), dtype=np.int64), mask, labels)


# --------------------------------------------------------------------------
# silo splits


def _assign_units(units: Sequence[str], K: int, seed: int) -> list[list[str]]:
    if K < 1:
        raise SplitError(f"number of silos must be >= 1, got {K}")
    if len(units) < K:
        raise SplitError(f"cannot split {len(units)} units into {K} silos")
    rng = np.random.default_rng(seed)
    while True:
        owner = rng.integers(K, size=len(units))
        if len(np.unique(owner)) == K:
            break
    return [[u for u, o in zip(units, owner) if o == k] for k in range(K)]


def _ordered_unique(values: Iterable[str]) -> list[str]:
    return list(dict.fromkeys(values))


def split_silos_by_patient(documents: Sequence[Document], K: int = 5, seed: int = 0) -> list[SiloDataset]:
    """Assign each patient, with all of their notes, to one uniformly drawn silo."""
    groups = _assign_units(_ordered_unique(d.patient_id for d in documents), K, seed)
    silos = []
    for k, patients in enumerate(groups):
        members = set(patients)
        docs = [d for d in documents if d.patient_id in members]
        silos.append(SiloDataset(k, docs, len(patients), patients))
    return silos


def split_silos_by_note(examples: Sequence[NERExample], K: int = 5, seed: int = 0) -> list[SiloDataset]:
    """Assign each annotated note, with all of its sentences, to one uniformly drawn silo."""
    groups = _assign_units(_ordered_unique(e.note_id for e in examples), K, seed)
    silos = []
    for k, notes in enumerate(groups):
        members = set(notes)
        items = [e for e in examples if e.note_id in members]
        silos.append(SiloDataset(k, items, len(notes), notes))
    return silos


# --------------------------------------------------------------------------
# line-delimited JSON records (one sentence per line)


def write_documents(documents: Iterable[Document], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in documents:
            for s in d.sentences:
                fh.write(json.dumps({"patient_id": d.patient_id, "note_id": d.note_id, "tokens": s}) + "\n")


def read_documents(path) -> list[Document]:
    docs: list[Document] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if docs and docs[-1].note_id == rec["note_id"] and docs[-1].patient_id == rec["patient_id"]:
                docs[-1].sentences.append(list(rec["tokens"]))
            else:
                docs.append(Document(rec["patient_id"], rec["note_id"], [list(rec["tokens"])]))
    return docs


def write_ner(examples: Iterable[NERExample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in examples:
            rec = {"patient_id": e.patient_id, "note_id": e.note_id, "tokens": e.tokens, "tags": e.tags}
            fh.write(json.dumps(rec) + "\n")


def read_ner(path) -> list[NERExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if "tags" not in rec:
                raise ConfigError(f"{path}:{n}: NER record without tags")
            ex = NERExample(list(rec["tokens"]), list(rec["tags"]), rec.get("note_id", ""), rec.get("patient_id", ""))
            if len(ex.tokens) != len(ex.tags) or not is_well_formed(ex.tags):
                raise ConfigError(f"{path}:{n}: malformed IOB record")
            out.append(ex)
    return out
