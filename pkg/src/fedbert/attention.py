"""Attention-head analysis: entropy, rank correlation, Jensen-Shannon matrices, MDS.

All logarithms are natural, so entropies are in nats and JSD is bounded by ln 2.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import xlogy
from scipy.stats import rankdata

from . import autograd as ag
from .data import CLS_ID, SEP_ID, Vocab
from .errors import ContractError
from .model import AttentionCapture, Bert, ParamSet

DIST_TOL = 1e-9


def _probs(captures) -> list[np.ndarray]:
    probs = captures.probs if isinstance(captures, AttentionCapture) else list(captures)
    if not probs:
        raise ContractError("empty probe corpus")
    return probs


def row_entropy(p: np.ndarray) -> np.ndarray:
    """Shannon entropy of each last-axis distribution, with 0 ln 0 = 0."""
    return -xlogy(p, p).sum(axis=-1)


def head_entropy(captures) -> np.ndarray:
    """Mean attention entropy per head, ``[L, A]``, averaged over every probe token row."""
    probs = _probs(captures)
    total = np.zeros(probs[0].shape[:2])
    rows = 0
    for p in probs:
        total += row_entropy(p).sum(axis=-1)
        rows += p.shape[-2]
    return total / rows


def spearman(a, b) -> float:
    """Spearman rank correlation with average ranks for ties.

    Returns NaN when either input has no rank variance (correlation undefined).
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape or a.size < 2:
        raise ContractError(f"spearman needs equal lengths >= 2, got {a.size} and {b.size}")
    ra, rb = rankdata(a) - (a.size + 1) / 2, rankdata(b) - (b.size + 1) / 2
    den = np.sqrt((ra * ra).sum() * (rb * rb).sum())
    if den == 0:
        return float("nan")
    return float(np.clip((ra * rb).sum() / den, -1.0, 1.0))


def _kl_to_mixture(p: np.ndarray, m: np.ndarray) -> np.ndarray:
    return (xlogy(p, p) - xlogy(p, m)).sum(axis=-1)


def jsd(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    for name, d in (("p", p), ("q", q)):
        if d.ndim != 1 or np.any(d < 0) or abs(d.sum() - 1.0) > DIST_TOL:
            raise ContractError(f"{name} is not a probability distribution")
    if p.shape != q.shape:
        raise ContractError(f"support sizes differ: {p.size} vs {q.size}")
    m = 0.5 * (p + q)
    return float(max(0.0, 0.5 * _kl_to_mixture(p, m) + 0.5 * _kl_to_mixture(q, m)))


def jsd_head_matrix(captures) -> np.ndarray:
    """Mean JSD between every pair of heads' attention rows, ``[L*A, L*A]``."""
    probs = _probs(captures)
    L, A = probs[0].shape[:2]
    n_heads = L * A
    total = np.zeros((n_heads, n_heads))
    rows = 0
    for p in probs:
        flat = p.reshape(n_heads, p.shape[-2], p.shape[-1])
        for i in range(n_heads):
            m = 0.5 * (flat[i][None] + flat)
            kl_i = _kl_to_mixture(flat[i][None], m)
            kl_j = _kl_to_mixture(flat, m)
            total[i] += (0.5 * kl_i + 0.5 * kl_j).sum(axis=-1)
        rows += flat.shape[1]
    out = np.maximum(total / rows, 0.0)
    out = 0.5 * (out + out.T)
    np.fill_diagonal(out, 0.0)
    return out


def model_distance(ma, mb, mode: str = "mean") -> float:
    """Mean (default) or sum of absolute element-wise differences."""
    ma, mb = np.asarray(ma, dtype=np.float64), np.asarray(mb, dtype=np.float64)
    if ma.shape != mb.shape:
        raise ContractError(f"matrix shapes differ: {ma.shape} vs {mb.shape}")
    diff = np.abs(ma - mb)
    if mode == "mean":
        return float(diff.mean())
    if mode == "sum":
        return float(diff.sum())
    raise ContractError(f"unknown distance mode {mode!r}")


def mds_project_2d(dist) -> np.ndarray:
    """Classical MDS of a distance matrix onto two dimensions.

    Coordinates along directions with non-positive eigenvalues are 0.  Each
    axis is sign-normalized so its largest-magnitude coordinate is positive.
    """
    d = np.asarray(dist, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ContractError(f"expected a square matrix, got {d.shape}")
    if not np.allclose(d, d.T, rtol=0, atol=1e-12):
        raise ContractError("distance matrix is not symmetric")
    n = d.shape[0]
    j = np.eye(n) - np.full((n, n), 1.0 / n)
    b = -0.5 * j @ (d * d) @ j
    vals, vecs = np.linalg.eigh(0.5 * (b + b.T))
    order = np.argsort(vals)[::-1][:2]
    coords = np.zeros((n, 2))
    for k, idx in enumerate(order):
        if vals[idx] > 0:
            v = vecs[:, idx]
            if v[np.argmax(np.abs(v))] < 0:
                v = -v
            coords[:, k] = v * np.sqrt(vals[idx])
    return coords


# --------------------------------------------------------------------------
# probing a model


def capture_attention(
    model: Bert, params: ParamSet, vocab: Vocab, sentences: Sequence[Sequence[str]], batch_size: int = 32
) -> AttentionCapture:
    S = model.config.max_seq_len
    encoded = [[CLS_ID] + vocab.tokenize(s)[: S - 2] + [SEP_ID] for s in sentences]
    capture = AttentionCapture([])
    with ag.no_grad():
        for start in range(0, len(encoded), batch_size):
            chunk = encoded[start : start + batch_size]
            width = max(len(e) for e in chunk)
            ids = np.zeros((len(chunk), width), dtype=np.int64)
            mask = np.zeros((len(chunk), width))
            for i, e in enumerate(chunk):
                ids[i, : len(e)] = e
                mask[i, : len(e)] = 1.0
            _, cap = model.forward(params, ids, None, mask, capture=True)
            capture.extend(cap)
    return capture


@dataclass
class AttentionProfile:
    tag: str
    entropy: np.ndarray
    jsd_matrix: np.ndarray
    max_len: int

    @classmethod
    def from_capture(cls, tag: str, capture: AttentionCapture) -> "AttentionProfile":
        return cls(tag, head_entropy(capture), jsd_head_matrix(capture), max(p.shape[-1] for p in capture.probs))


def profile_model(tag, model, params, vocab, sentences) -> AttentionProfile:
    return AttentionProfile.from_capture(tag, capture_attention(model, params, vocab, sentences))


@dataclass
class AttentionReport:
    tags: list[str]
    spearman: np.ndarray
    distance: np.ndarray
    mode: str


def compare_profiles(profiles: Sequence[AttentionProfile], mode: str = "mean") -> AttentionReport:
    k = len(profiles)
    rho = np.full((k, k), np.nan)
    dist = np.full((k, k), np.nan)
    for i in range(k):
        for j in range(i + 1):
            rho[i, j] = spearman(profiles[i].entropy, profiles[j].entropy)
            dist[i, j] = model_distance(profiles[i].jsd_matrix, profiles[j].jsd_matrix, mode)
    return AttentionReport([p.tag for p in profiles], rho, dist, mode)


def write_attention_report(report: AttentionReport, path) -> None:
    """Two lower-triangular blocks, Spearman then distance, one TSV row per model."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        for block, mat in (("spearman", report.spearman), (f"distance_{report.mode}", report.distance)):
            w.writerow([block] + report.tags)
            for i, tag in enumerate(report.tags):
                w.writerow([tag] + [repr(float(mat[i, j])) if j <= i else "" for j in range(len(report.tags))])


def read_attention_report(path) -> AttentionReport:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    k = len(rows[0]) - 1
    tags = rows[0][1:]
    blocks = {}
    for b in range(2):
        header = rows[b * (k + 1)]
        mat = np.full((k, k), np.nan)
        for i, row in enumerate(rows[b * (k + 1) + 1 : (b + 1) * (k + 1)]):
            for j in range(i + 1):
                mat[i, j] = float(row[j + 1])
        blocks[header[0]] = mat
    dist_key = next(key for key in blocks if key.startswith("distance_"))
    return AttentionReport(tags, blocks["spearman"], blocks[dist_key], dist_key.split("_", 1)[1])
