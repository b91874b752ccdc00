"""Local training loops: Adam with global-norm clipping over one silo's data."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import MLMExample, NERFeature, collate_mlm, collate_ner, encode_ner, NERExample, Vocab
from .errors import ConfigError, ContractError, DivergenceError
from .model import Bert, ParamSet
from .ner_eval import LABELS, Scores, score_tags, token_accuracy

PRETRAIN = "pretrain"
FINETUNE = "finetune"
STAGES = (PRETRAIN, FINETUNE)


@dataclass(frozen=True)
class TrainerConfig:
    learning_rate: float = 2e-5
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_grad_norm: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainerConfig":
        return cls(**dict(d))


# BERT's own pre-training rate; fine-tuning uses the class default of 2e-5
PRETRAIN_DEFAULTS = TrainerConfig(learning_rate=1e-4)
FINETUNE_DEFAULTS = TrainerConfig()


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def global_norm(grads: Mapping[str, np.ndarray | None]) -> float:
    return float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads.values() if g is not None)))


def clip_by_global_norm(grads: Mapping[str, np.ndarray | None], max_norm: float):
    """Scale all gradients by ``max_norm / max(norm, max_norm)``; returns (grads, pre-clip norm)."""
    norm = global_norm(grads)
    if norm <= max_norm:
        return dict(grads), norm
    scale = max_norm / norm
    return {n: (None if g is None else g * scale) for n, g in grads.items()}, norm


def adam_step(
    params: dict[str, np.ndarray],
    grads: Mapping[str, np.ndarray | None],
    state: AdamState,
    config: TrainerConfig,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, in place on ``params``.

    Missing gradients count as zero: the parameter stays put while its
    moments decay.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {name}", step=state.step + 1)
    if config.max_grad_norm is not None and config.max_grad_norm > 0:
        grads, _ = clip_by_global_norm(grads, config.max_grad_norm)
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads.get(name)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        if g is None:
            m *= b1
            v *= b2
        else:
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
        p -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.eps)
    return params, state


def step_seed(seed: int, step: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(step)]).generate_state(1)[0])


@dataclass
class EpochStats:
    loss: float
    mlm_loss: float | None = None
    nsp_loss: float | None = None
    steps: int = 0


class LocalTrainer:
    """Trains one copy of the parameters; Adam state lives as long as the trainer."""

    def __init__(self, model: Bert, config: TrainerConfig, stage: str):
        if stage not in STAGES:
            raise ConfigError(f"unknown stage {stage!r}")
        self.model = model
        self.config = config
        self.stage = stage
        self.state = AdamState()
        self.history: list[EpochStats] = []

    def _loss(self, weights, batch_items, dropout_seed):
        if self.stage == PRETRAIN:
            batch = collate_mlm(batch_items)
            total, mlm, nsp = self.model.pretrain_losses(weights, batch, dropout_seed=dropout_seed)
            return total, mlm.item(), None if nsp is None else nsp.item()
        batch = collate_ner(batch_items)
        return self.model.ner_loss(weights, batch, dropout_seed=dropout_seed), None, None

    def train_epoch(self, params: ParamSet, data: Sequence, seed: int) -> tuple[ParamSet, float]:
        """One pass over ``data`` in an order shuffled by ``seed``."""
        if not len(data):
            raise ContractError("cannot train on an empty dataset")
        cfg = self.config
        work = {n: np.array(a) for n, a in params.items()}
        order = np.random.default_rng(seed).permutation(len(data))
        losses, mlms, nsps = [], [], []
        for step, start in enumerate(range(0, len(data), cfg.batch_size)):
            items = [data[i] for i in order[start : start + cfg.batch_size]]
            weights = {n: Tensor._wrap(a, requires_grad=True) for n, a in work.items()}
            with ag.Tape():
                loss, mlm, nsp = self._loss(weights, items, step_seed(seed, step))
                value = loss.item()
                if not np.isfinite(value):
                    raise DivergenceError(f"non-finite {self.stage} loss {value}", step=step)
                ag.backward(loss)
            grads = {n: t.grad for n, t in weights.items()}
            try:
                adam_step(work, grads, self.state, cfg)
            except DivergenceError as exc:
                raise DivergenceError(exc.detail, step=step) from exc
            losses.append(value)
            if mlm is not None:
                mlms.append(mlm)
            if nsp is not None:
                nsps.append(nsp)
        stats = EpochStats(
            float(np.mean(losses)),
            float(np.mean(mlms)) if mlms else None,
            float(np.mean(nsps)) if nsps else None,
            len(losses),
        )
        self.history.append(stats)
        return ParamSet(work.items()), stats.loss


def train_epoch_pretrain(
    model: Bert, params: ParamSet, silo_data: Sequence[MLMExample], config: TrainerConfig, seed: int | None = None
) -> tuple[ParamSet, float]:
    trainer = LocalTrainer(model, config, PRETRAIN)
    return trainer.train_epoch(params, silo_data, config.seed if seed is None else seed)


def train_epoch_finetune(
    model: Bert, params: ParamSet, silo_ner_data: Sequence[NERFeature], config: TrainerConfig, seed: int | None = None
) -> tuple[ParamSet, float]:
    trainer = LocalTrainer(model, config, FINETUNE)
    return trainer.train_epoch(params, silo_ner_data, config.seed if seed is None else seed)


# --------------------------------------------------------------------------
# evaluation


def predict_tags(model: Bert, params: ParamSet, features: Sequence[NERFeature], batch_size: int = 64) -> list[list[str]]:
    """Word-level IOB predictions taken from each word's first piece."""
    out = []
    with ag.no_grad():
        for start in range(0, len(features), batch_size):
            chunk = features[start : start + batch_size]
            batch = collate_ner(chunk)
            logits = model.ner_logits(params, batch.token_ids, batch.segment_ids, batch.attn_mask).data
            best = logits.argmax(axis=-1)
            for i, f in enumerate(chunk):
                out.append([LABELS[j] for j in best[i, f.word_starts]])
    return out


@dataclass
class NERReport:
    scores: Scores
    token_accuracy: float


def evaluate_ner(model: Bert, params: ParamSet, features: Sequence[NERFeature]) -> NERReport:
    gold = [f.tags for f in features]
    pred = predict_tags(model, params, features)
    return NERReport(score_tags(gold, pred), token_accuracy(gold, pred))


def encode_all(vocab: Vocab, examples: Sequence[NERExample], seq_len: int) -> list[NERFeature]:
    return [encode_ner(vocab, e, seq_len) for e in examples]


def pretrain_eval_loss(model: Bert, params: ParamSet, examples: Sequence[MLMExample], batch_size: int = 64):
    """Mean (mlm, nsp) loss without dropout or gradient tracking."""
    mlms, nsps = [], []
    with ag.no_grad():
        for start in range(0, len(examples), batch_size):
            _, mlm, nsp = model.pretrain_losses(params, collate_mlm(examples[start : start + batch_size]))
            mlms.append(mlm.item())
            nsps.append(np.nan if nsp is None else nsp.item())
    return float(np.mean(mlms)), float(np.mean(nsps))


def with_seed(config: TrainerConfig, seed: int) -> TrainerConfig:
    return replace(config, seed=seed)
