"""A small BERT-style encoder with MLM, NSP and token-classification heads."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable, Iterator, Mapping

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, ContractError, ShapeError

IGNORE_INDEX = -100
LN_EPS = 1e-12
MASK_BIAS = -1e9


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 2
    hidden_size: int = 64
    num_heads: int = 4
    intermediate_size: int | None = None
    vocab_size: int = 500
    max_seq_len: int = 64
    type_vocab_size: int = 2
    dropout_p: float = 0.1
    num_ner_labels: int = 7
    use_nsp: bool = True
    tie_mlm_weights: bool = False
    init_std: float = 0.02

    def __post_init__(self):
        if self.intermediate_size is None:
            object.__setattr__(self, "intermediate_size", 4 * self.hidden_size)
        sizes = {
            "num_layers": self.num_layers,
            "hidden_size": self.hidden_size,
            "num_heads": self.num_heads,
            "intermediate_size": self.intermediate_size,
            "vocab_size": self.vocab_size,
            "max_seq_len": self.max_seq_len,
            "type_vocab_size": self.type_vocab_size,
            "num_ner_labels": self.num_ner_labels,
        }
        for name, value in sizes.items():
            if int(value) < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")
        if self.hidden_size % self.num_heads:
            raise ConfigError(
                f"hidden_size {self.hidden_size} is not divisible by num_heads {self.num_heads}"
            )
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.num_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        return cls(**dict(d))


class ParamSet:
    """Ordered, named collection of parameter arrays.

    Arrays are stored read-only; iteration order is the insertion order and is
    the order used everywhere parameters are aggregated or serialized.
    """

    __slots__ = ("_entries",)

    def __init__(self, entries: Iterable[tuple[str, np.ndarray]]):
        store: dict[str, np.ndarray] = {}
        for name, arr in entries:
            if name in store:
                raise ContractError(f"duplicate parameter name {name!r}")
            a = np.array(arr, dtype=np.float64, order="C", copy=True)
            a.flags.writeable = False
            store[name] = a
        self._entries = store

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    @property
    def names(self) -> list[str]:
        return list(self._entries)

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        return [a.shape for a in self._entries.values()]

    def num_parameters(self) -> int:
        return sum(a.size for a in self._entries.values())

    def first_mismatch(self, other: "ParamSet") -> str | None:
        """Description of the first entry where the two sets differ in name or shape."""
        mine, theirs = list(self.items()), list(other.items())
        for i, ((n1, a1), (n2, a2)) in enumerate(zip(mine, theirs)):
            if n1 != n2:
                return f"entry {i}: name {n1!r} vs {n2!r}"
            if a1.shape != a2.shape:
                return f"entry {i} ({n1!r}): shape {a1.shape} vs {a2.shape}"
        if len(mine) != len(theirs):
            return f"entry count {len(mine)} vs {len(theirs)}"
        return None

    def congruent(self, other: "ParamSet") -> bool:
        return self.first_mismatch(other) is None

    def bit_equal(self, other: "ParamSet") -> bool:
        return self.congruent(other) and all(
            a.tobytes() == other[n].tobytes() for n, a in self.items()
        )

    def tensors(self, requires_grad: bool = True) -> dict[str, Tensor]:
        """Fresh tensors holding writable copies of every parameter."""
        return {n: Tensor(a, requires_grad=requires_grad, name=n) for n, a in self.items()}

    @classmethod
    def from_tensors(cls, tensors: Mapping[str, Tensor]) -> "ParamSet":
        return cls((n, t.data) for n, t in tensors.items())

    def __repr__(self) -> str:
        return f"ParamSet({len(self)} tensors, {self.num_parameters()} values)"


def _truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


def param_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    H, I, V = config.hidden_size, config.intermediate_size, config.vocab_size
    shapes = [
        ("embeddings.word", (V, H)),
        ("embeddings.position", (config.max_seq_len, H)),
        ("embeddings.segment", (config.type_vocab_size, H)),
        ("embeddings.ln.gain", (H,)),
        ("embeddings.ln.bias", (H,)),
    ]
    for l in range(config.num_layers):
        p = f"layer.{l}."
        shapes += [
            (p + "attn.query.weight", (H, H)),
            (p + "attn.query.bias", (H,)),
            (p + "attn.key.weight", (H, H)),
            (p + "attn.key.bias", (H,)),
            (p + "attn.value.weight", (H, H)),
            (p + "attn.value.bias", (H,)),
            (p + "attn.output.weight", (H, H)),
            (p + "attn.output.bias", (H,)),
            (p + "attn.ln.gain", (H,)),
            (p + "attn.ln.bias", (H,)),
            (p + "ffn.inner.weight", (H, I)),
            (p + "ffn.inner.bias", (I,)),
            (p + "ffn.output.weight", (I, H)),
            (p + "ffn.output.bias", (H,)),
            (p + "ffn.ln.gain", (H,)),
            (p + "ffn.ln.bias", (H,)),
        ]
    shapes += [
        ("mlm.transform.weight", (H, H)),
        ("mlm.transform.bias", (H,)),
        ("mlm.ln.gain", (H,)),
        ("mlm.ln.bias", (H,)),
    ]
    if not config.tie_mlm_weights:
        shapes.append(("mlm.decoder.weight", (H, V)))
    shapes += [
        ("mlm.decoder.bias", (V,)),
    ]
    if config.use_nsp:
        shapes += [
            ("pooler.weight", (H, H)),
            ("pooler.bias", (H,)),
            ("nsp.weight", (H, 2)),
            ("nsp.bias", (2,)),
        ]
    shapes += [
        ("ner.weight", (H, config.num_ner_labels)),
        ("ner.bias", (config.num_ner_labels,)),
    ]
    return shapes


def init_params(config: ModelConfig, seed: int) -> ParamSet:
    """Truncated-normal(0, 0.02) weights, zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(seed)
    entries = []
    for name, shape in param_shapes(config):
        if name.endswith(".gain"):
            arr = np.ones(shape)
        elif name.endswith(".bias"):
            arr = np.zeros(shape)
        else:
            arr = _truncated_normal(rng, shape, config.init_std)
        entries.append((name, arr))
    return ParamSet(entries)


@dataclass
class AttentionCapture:
    """Attention probabilities per probe sequence, trimmed to real tokens.

    ``probs[i]`` has shape ``[num_layers, num_heads, n_i, n_i]`` where ``n_i``
    is the number of non-padding tokens of sequence ``i``.
    """

    probs: list[np.ndarray]

    @property
    def num_layers(self) -> int:
        return self.probs[0].shape[0]

    @property
    def num_heads(self) -> int:
        return self.probs[0].shape[1]

    def extend(self, other: "AttentionCapture") -> None:
        self.probs.extend(other.probs)


class _DropoutSeeds:
    """Hands out one seed per dropout call site, derived from a base seed."""

    def __init__(self, base):
        self.base = base
        self.site = 0

    def next(self):
        self.site += 1
        return np.random.SeedSequence([int(self.base), self.site])


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return ag.add(ag.matmul(x, w), b)


class Bert:
    """Functional encoder: parameters are passed in, never stored."""

    def __init__(self, config: ModelConfig):
        self.config = config

    def init_params(self, seed: int) -> ParamSet:
        return init_params(self.config, seed)

    @staticmethod
    def _weights(params) -> Mapping[str, Tensor]:
        if isinstance(params, ParamSet):
            return {n: Tensor._wrap(a) for n, a in params.items()}
        return params

    def _check_ids(self, token_ids: np.ndarray) -> None:
        S = self.config.max_seq_len
        if token_ids.shape[-1] > S:
            raise ContractError(f"sequence length {token_ids.shape[-1]} exceeds max_seq_len {S}")
        if token_ids.size and (token_ids.min() < 0 or token_ids.max() >= self.config.vocab_size):
            raise IndexError(f"token id out of range for vocab of {self.config.vocab_size}")

    def forward(
        self,
        params,
        token_ids,
        segment_ids=None,
        attn_mask=None,
        capture: bool = False,
        *,
        dropout_seed=None,
    ) -> tuple[Tensor, AttentionCapture | None]:
        """Encode a sequence ``[S]`` or a batch ``[B, S]``.

        ``attn_mask`` is 1 for real tokens and 0 for padding.  Dropout is
        active only when ``dropout_seed`` is given.
        """
        cfg = self.config
        ids = np.asarray(token_ids, dtype=np.int64)
        single = ids.ndim == 1
        if single:
            ids = ids[None, :]
        self._check_ids(ids)
        B, S = ids.shape
        seg = np.zeros_like(ids) if segment_ids is None else np.asarray(segment_ids, dtype=np.int64).reshape(B, S)
        mask = np.ones((B, S)) if attn_mask is None else np.asarray(attn_mask, dtype=np.float64).reshape(B, S)
        W = self._weights(params)
        training = dropout_seed is not None
        seeds = _DropoutSeeds(dropout_seed) if training else None
        p = cfg.dropout_p

        def drop(x):
            return ag.dropout(x, p, seeds.next(), training=True) if training else x

        H, A, d = cfg.hidden_size, cfg.num_heads, cfg.head_dim
        x = ag.add(
            ag.add(ag.embedding_lookup(W["embeddings.word"], ids), ag.embedding_lookup(W["embeddings.segment"], seg)),
            W["embeddings.position"][:S],
        )
        x = drop(ag.layer_norm(x, W["embeddings.ln.gain"], W["embeddings.ln.bias"], LN_EPS))
        x = ag.reshape(x, (B * S, H))
        bias = ((1.0 - mask) * MASK_BIAS)[:, None, None, :]
        scale = 1.0 / np.sqrt(d)
        captured = []
        for l in range(cfg.num_layers):
            pre = f"layer.{l}."

            def heads(name):
                t = _linear(x, W[pre + f"attn.{name}.weight"], W[pre + f"attn.{name}.bias"])
                return ag.transpose(ag.reshape(t, (B, S, A, d)), (0, 2, 1, 3))

            q, k, v = heads("query"), heads("key"), heads("value")
            scores = ag.add(ag.mul(ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))), scale), bias)
            probs = ag.softmax_rows(scores)
            if capture:
                captured.append(probs.data)
            ctx = ag.matmul(drop(probs), v)
            ctx = ag.reshape(ag.transpose(ctx, (0, 2, 1, 3)), (B * S, H))
            attn_out = drop(_linear(ctx, W[pre + "attn.output.weight"], W[pre + "attn.output.bias"]))
            x = ag.layer_norm(ag.add(x, attn_out), W[pre + "attn.ln.gain"], W[pre + "attn.ln.bias"], LN_EPS)
            inner = ag.gelu(_linear(x, W[pre + "ffn.inner.weight"], W[pre + "ffn.inner.bias"]))
            ffn_out = drop(_linear(inner, W[pre + "ffn.output.weight"], W[pre + "ffn.output.bias"]))
            x = ag.layer_norm(ag.add(x, ffn_out), W[pre + "ffn.ln.gain"], W[pre + "ffn.ln.bias"], LN_EPS)
        hidden = ag.reshape(x, (S, H) if single else (B, S, H))
        cap = None
        if capture:
            stacked = np.stack(captured, axis=1)  # [B, L, A, S, S]
            lengths = mask.sum(axis=1).astype(int)
            cap = AttentionCapture(
                [stacked[b, :, :, : lengths[b], : lengths[b]].copy() for b in range(B)]
            )
        return hidden, cap

    # ------------------------------------------------------------------ heads

    def _mlm_logits(self, W, hidden_rows: Tensor) -> Tensor:
        h = ag.gelu(_linear(hidden_rows, W["mlm.transform.weight"], W["mlm.transform.bias"]))
        h = ag.layer_norm(h, W["mlm.ln.gain"], W["mlm.ln.bias"], LN_EPS)
        if self.config.tie_mlm_weights:
            dec = ag.transpose(W["embeddings.word"])
        else:
            dec = W["mlm.decoder.weight"]
        return _linear(h, dec, W["mlm.decoder.bias"])

    def _nsp_logits(self, W, hidden: Tensor) -> Tensor:
        cls = hidden[:, 0, :]
        pooled = ag.tanh(_linear(cls, W["pooler.weight"], W["pooler.bias"]))
        return _linear(pooled, W["nsp.weight"], W["nsp.bias"])

    def pretrain_losses(self, params, batch, *, dropout_seed=None) -> tuple[Tensor, Tensor, Tensor | None]:
        """(total, mlm, nsp) for one MLM batch; total = mlm + nsp with equal weight."""
        labels = np.asarray(batch.mlm_labels)
        if labels.shape != np.asarray(batch.token_ids).shape:
            raise ShapeError(f"mlm labels {labels.shape} vs tokens {np.asarray(batch.token_ids).shape}")
        W = self._weights(params)
        hidden, _ = self.forward(
            W, batch.token_ids, batch.segment_ids, batch.attn_mask, dropout_seed=dropout_seed
        )
        B, S, H = hidden.shape
        flat = labels.reshape(-1)
        rows = np.nonzero(flat != IGNORE_INDEX)[0]
        picked = ag.embedding_lookup(ag.reshape(hidden, (B * S, H)), rows)
        mlm = ag.cross_entropy_logits(self._mlm_logits(W, picked), flat[rows], IGNORE_INDEX)
        if not self.config.use_nsp:
            return mlm, mlm, None
        nsp_labels = np.asarray(batch.nsp_labels)
        if nsp_labels.shape != (B,):
            raise ShapeError(f"nsp labels {nsp_labels.shape} vs batch of {B}")
        nsp = ag.cross_entropy_logits(self._nsp_logits(W, hidden), nsp_labels, IGNORE_INDEX)
        return ag.add(mlm, nsp), mlm, nsp

    def mlm_loss(self, params, batch, *, dropout_seed=None) -> Tensor:
        return self.pretrain_losses(params, batch, dropout_seed=dropout_seed)[1]

    def nsp_loss(self, params, batch, *, dropout_seed=None) -> Tensor:
        nsp = self.pretrain_losses(params, batch, dropout_seed=dropout_seed)[2]
        if nsp is None:
            raise ContractError("NSP head is disabled in this config")
        return nsp

    def ner_logits(self, params, token_ids, segment_ids=None, attn_mask=None, *, dropout_seed=None) -> Tensor:
        """Per-token label scores, ``[S, num_ner_labels]`` (or ``[B, S, C]`` for a batch)."""
        W = self._weights(params)
        hidden, _ = self.forward(W, token_ids, segment_ids, attn_mask, dropout_seed=dropout_seed)
        return _linear(hidden, W["ner.weight"], W["ner.bias"])

    def ner_loss(self, params, batch, *, dropout_seed=None) -> Tensor:
        labels = np.asarray(batch.labels)
        if labels.shape != np.asarray(batch.token_ids).shape:
            raise ShapeError(f"ner labels {labels.shape} vs tokens {np.asarray(batch.token_ids).shape}")
        logits = self.ner_logits(
            params, batch.token_ids, batch.segment_ids, batch.attn_mask, dropout_seed=dropout_seed
        )
        C = self.config.num_ner_labels
        return ag.cross_entropy_logits(ag.reshape(logits, (-1, C)), labels.reshape(-1), IGNORE_INDEX)
