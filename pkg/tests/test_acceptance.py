"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``[criterion N] PASS|FAIL ...`` line (also
collected into the terminal summary) before asserting.  Run alone with
``pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
"""

import itertools
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from fedbert.attention import (
    capture_attention,
    compare_profiles,
    head_entropy,
    jsd_head_matrix,
    mds_project_2d,
    model_distance,
    row_entropy,
    spearman,
    AttentionProfile,
)
from fedbert.data import encode_ner, generate_probe_sentences, make_mlm_examples
from fedbert.experiments import PRETRAIN_LABELS, ExperimentSpec, Workspace, read_results, run_experiment, run_matrix
from fedbert.federated import SiloHandle, aggregate, run_centralized, run_federated
from fedbert.model import ParamSet
from fedbert.ner_eval import Span, decode_iob, prf1
from fedbert.trainer import FINETUNE, PRETRAIN

from gradcheck import check_op
from op_cases import ALL_OPS, build
from test_ner_eval import ALPHABET, reference_decode

pytestmark = pytest.mark.acceptance

RESULTS = []
MATRIX_SEEDS = (0, 1, 2, 3, 4)


def report(capsys, number, title, ok, detail):
    line = f"[criterion {number}] {'PASS' if ok else 'FAIL'} {title}: {detail}"
    RESULTS.append(line)
    with capsys.disabled():
        print("\n" + line)


def desk_spec(out, **kw) -> ExperimentSpec:
    """The default desk-scale configuration, without figures or per-cycle checkpoints."""
    return replace(ExperimentSpec(), out=str(out), figures=False, keep_cycle_checkpoints=False, **kw)


_matrix_cache = {}


@pytest.fixture(scope="module")
def desk_matrix(tmp_path_factory):
    def run(seed):
        if seed not in _matrix_cache:
            out = tmp_path_factory.mktemp(f"matrix_seed{seed}")
            _matrix_cache[seed] = run_matrix(desk_spec(out, seed=seed))
        return _matrix_cache[seed]

    return run


def test_criterion_1_gradient_suite(capsys):
    started = time.perf_counter()
    worst = {}
    for name in ALL_OPS:
        for seed in range(5):
            op, arrays = build(name, seed)
            worst[name] = max(worst.get(name, 0.0), check_op(op, arrays, seed=seed, h=1e-6))
    elapsed = time.perf_counter() - started
    bad = {k: v for k, v in worst.items() if not v < 1e-5}
    ok = not bad and elapsed < 30
    detail = f"{len(ALL_OPS)} ops x 5 seeds, max rel err {max(worst.values()):.2e} (<1e-5), {elapsed:.1f}s (<30s)"
    report(capsys, 1, "gradient suite", ok, detail + (f", failing {sorted(bad)}" if bad else ""))
    assert ok


def test_criterion_2_weighted_average_oracle(capsys):
    one = ParamSet([("w", np.array(1.0))])
    two = ParamSet([("w", np.array(2.0))])
    value = aggregate([(one, 1), (two, 3)])["w"]
    exact = value.dtype == np.float64 and float(value) == 1.75

    rng = np.random.default_rng(0)
    ref = ParamSet((f"p{i}", rng.normal(size=s)) for i, s in enumerate([(64, 64), (64,), (3, 4, 5)]))
    identity = aggregate([(ref, 9)]).bit_equal(ref)

    violations = 0
    for _ in range(100):
        shapes = [tuple(rng.integers(1, 6, size=rng.integers(0, 3))) for _ in range(4)]
        a = ParamSet((f"p{i}", rng.normal(size=s) * 100) for i, s in enumerate(shapes))
        b = ParamSet((f"p{i}", rng.normal(size=s) * 100) for i, s in enumerate(shapes))
        out = aggregate([(a, int(rng.integers(1, 500))), (b, int(rng.integers(1, 500)))])
        for n in out:
            lo, hi = np.minimum(a[n], b[n]), np.maximum(a[n], b[n])
            violations += int(np.sum((out[n] < lo) | (out[n] > hi)))
    ok = exact and identity and violations == 0
    detail = f"(1.0,n=1)+(2.0,n=3) -> {float(value)!r}; K=1 bit-identity {identity}; convex-bound violations {violations}/100 pairs"
    report(capsys, 2, "weighted average oracle", ok, detail)
    assert ok


def test_criterion_3_one_silo_equals_centralized(capsys, tmp_path):
    started = time.perf_counter()
    spec = desk_spec(tmp_path)
    ws = Workspace.prepare(spec)
    mlm = make_mlm_examples(ws.vocab, ws.corpus.documents, spec.pretrain_seq_len, seed=1)
    ner = [encode_ner(ws.vocab, e, ws.model.config.max_seq_len) for e in ws.corpus.ner_train]
    same = {}
    for stage, data, cfg in ((PRETRAIN, mlm, spec.pretrain_trainer), (FINETUNE, ner, spec.finetune_trainer)):
        cfg = replace(cfg, seed=17)
        fed = run_federated(ws.model, ws.initial, [SiloHandle(0, data, len(data))], 2, cfg, stage)[-1].params
        central = run_centralized(ws.model, ws.initial, data, 2, cfg, stage)
        same[stage] = fed.bit_equal(central)
    elapsed = time.perf_counter() - started
    ok = all(same.values()) and elapsed < 120
    detail = f"bit-identical pretrain={same[PRETRAIN]} finetune={same[FINETUNE]} (T=2, desk-scale model), {elapsed:.1f}s (<120s)"
    report(capsys, 3, "protocol degeneracy", ok, detail)
    assert ok


def test_criterion_4_matrix_determinism(capsys, tmp_path, desk_matrix):
    first = desk_matrix(0)
    started = time.perf_counter()
    second = run_matrix(desk_spec(tmp_path, seed=0))
    elapsed = time.perf_counter() - started
    a = (first.out / "results.tsv").read_bytes()
    b = (second.out / "results.tsv").read_bytes()
    ok = a == b and len(first.rows) == 6
    detail = f"two desk-scale 6-experiment runs (seed 0), results.tsv byte-identical {a == b} ({len(a)} bytes), rerun {elapsed:.0f}s"
    report(capsys, 4, "determinism", ok, detail)
    assert ok


def _weighted_cycle_losses(metrics_path, stage, key):
    out = []
    for line in Path(metrics_path).read_text().splitlines():
        r = json.loads(line)
        if r.get("stage") == stage and "cycle" in r:
            out.append(float(np.average(r[key], weights=r["silo_sizes"])))
    return out


def test_criterion_5_end_to_end_desk_scale(capsys, tmp_path):
    started = time.perf_counter()
    spec = desk_spec(tmp_path, cycles_pretrain=3).for_experiment(6)
    m = spec.model
    row = run_experiment(spec)
    elapsed = time.perf_counter() - started
    mlm = _weighted_cycle_losses(tmp_path / "metrics.jsonl", PRETRAIN, "silo_mlm_losses")
    ner = _weighted_cycle_losses(tmp_path / "metrics.jsonl", FINETUNE, "silo_losses")
    scale = (m.num_layers, m.hidden_size, m.num_heads, spec.vocab_size, spec.corpus.num_patients, spec.silos)
    descending = all(b < a for a, b in zip(ner, ner[1:]))
    ok = (
        scale == (2, 64, 4, 500, 200, 5)
        and len(mlm) == 3
        and mlm[2] < mlm[0]
        and len(ner) == 6
        and descending
        and elapsed < 600
    )
    detail = (
        f"MLM cycle1 {mlm[0]:.3f} -> cycle3 {mlm[-1]:.3f}; fine-tune loss "
        + " > ".join(f"{v:.3f}" for v in ner)
        + f"; F1 {row.f1:.3f}; {elapsed:.0f}s (<600s)"
    )
    report(capsys, 5, "end-to-end desk-scale pipeline", ok, detail)
    assert ok


def test_criterion_6_directional_reproduction(capsys, desk_matrix):
    f1 = {}
    for seed in MATRIX_SEEDS:
        for r in desk_matrix(seed).rows:
            f1.setdefault((r.pretraining, r.fine_tuning), []).append(r.f1)
    mean = {k: float(np.mean(v)) for k, v in f1.items()}
    checks = []
    for fine in ("Centralized", "Federated"):
        base = mean[(PRETRAIN_LABELS["none"], fine)]
        for pre in ("centralized", "federated"):
            checks.append(mean[(PRETRAIN_LABELS[pre], fine)] > base)
    best_key = max(mean, key=mean.get)
    ok = all(checks) and mean[best_key] >= 0.80 and all(len(v) == len(MATRIX_SEEDS) for v in f1.values())
    table = "; ".join(f"{p}/{f} {v:.3f}" for (p, f), v in mean.items())
    detail = f"mean F1 over seeds {list(MATRIX_SEEDS)}: {table}; best {best_key[0]}/{best_key[1]} {mean[best_key]:.3f} (>=0.80)"
    report(capsys, 6, "pre-trained > not pre-trained, best F1 >= 0.80", ok, detail)
    assert ok


def test_criterion_7_attention_invariants(capsys, tmp_path):
    started = time.perf_counter()
    ws = Workspace.prepare(desk_spec(tmp_path))
    S = ws.model.config.max_seq_len
    probe = generate_probe_sentences(5, 128)
    rng = np.random.default_rng(0)
    perturbed = ParamSet((n, a + rng.normal(scale=0.05, size=a.shape)) for n, a in ws.initial.items())
    profiles, problems = [], []
    for tag, params in (("init", ws.initial), ("perturbed", perturbed)):
        cap = capture_attention(ws.model, params, ws.vocab, probe)
        for p in cap.probs:
            h = row_entropy(p)
            if h.min() < 0 or h.max() > min(np.log(p.shape[-1]), np.log(S)) + 1e-12:
                problems.append(f"{tag} entropy out of range")
        ent = head_entropy(cap)
        if ent.min() < 0 or ent.max() > np.log(S):
            problems.append(f"{tag} head entropy out of range")
        m = jsd_head_matrix(cap)
        if not (np.array_equal(m, m.T) and np.all(np.diag(m) == 0) and m.max() <= np.log(2) + 1e-12):
            problems.append(f"{tag} JSD matrix invariants")
        profiles.append(AttentionProfile(tag, ent, m, max(p.shape[-1] for p in cap.probs)))
    x = profiles[1].entropy.ravel()
    if spearman(x, x) != 1.0:
        problems.append("spearman(x,x) != 1")
    if model_distance(profiles[0].jsd_matrix, profiles[0].jsd_matrix) != 0.0:
        problems.append("model_distance(M,M) != 0")
    rep = compare_profiles(profiles)
    pts = np.array([[0.0, 0.0], [2.0, 0.0], [0.5, 1.5], [-1.0, 0.7]])
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    xy = mds_project_2d(d)
    mds_err = float(np.abs(np.sqrt(((xy[:, None] - xy[None]) ** 2).sum(-1)) - d).max())
    if mds_err > 1e-6:
        problems.append(f"MDS error {mds_err:.1e}")
    elapsed = time.perf_counter() - started
    ok = not problems and elapsed < 60
    detail = (
        f"128 probe sentences x 2 desk-scale models; entropy max {max(p.entropy.max() for p in profiles):.3f} <= ln S {np.log(S):.3f}; "
        f"JSD max {max(p.jsd_matrix.max() for p in profiles):.4f}; cross-model rho {rep.spearman[1, 0]:.3f}; "
        f"MDS err {mds_err:.1e}; {elapsed:.1f}s (<60s)" + (f"; problems: {problems}" if problems else "")
    )
    report(capsys, 7, "attention-lab invariants", ok, detail)
    assert ok


def test_criterion_8_ner_scorer_oracle(capsys):
    total = mismatches = 0
    for n in range(5):
        for seq in itertools.product(ALPHABET, repeat=n):
            total += 1
            mismatches += decode_iob(list(seq)) != reference_decode(list(seq))
    gold = [[Span("problem", 2, 3), Span("test", 5, 5)]]
    pred = [[Span("problem", 2, 3), Span("test", 5, 5), Span("treatment", 0, 0)]]
    p, r, f = prf1(gold, pred)
    hand = abs(p - 2 / 3) < 1e-15 and r == 1.0 and abs(f - 0.8) < 1e-15
    ok = mismatches == 0 and hand
    detail = f"{total} tag sequences (len<=4) vs reference decoder, {mismatches} mismatches; 2-gold/3-pred P={p:.4f} R={r:.4f} F1={f:.4f}"
    report(capsys, 8, "NER scorer oracle", ok, detail)
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
