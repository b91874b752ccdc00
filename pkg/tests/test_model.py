import numpy as np
import pytest

from fedbert import autograd as ag
from fedbert.data import collate_mlm, collate_ner, encode_ner, make_mlm_examples
from fedbert.errors import ConfigError, ContractError
from fedbert.model import Bert, ModelConfig, ParamSet, init_params
from fedbert.trainer import AdamState, TrainerConfig, adam_step

CFG = ModelConfig(vocab_size=300, max_seq_len=32)


@pytest.fixture(scope="module")
def model():
    return Bert(CFG)


@pytest.fixture(scope="module")
def params():
    return init_params(CFG, 0)


def test_config_rejects_indivisible_heads():
    with pytest.raises(ConfigError, match="divisible"):
        ModelConfig(hidden_size=64, num_heads=5)


def test_init_is_deterministic():
    assert init_params(CFG, 3).bit_equal(init_params(CFG, 3))
    assert not init_params(CFG, 3).bit_equal(init_params(CFG, 4))


def test_layer_norm_gains_are_exactly_one(params):
    gains = [n for n in params if n.endswith("ln.gain")]
    assert len(gains) == 1 + 2 * CFG.num_layers + 1
    for n in gains:
        assert np.all(params[n] == 1.0)


def test_weight_init_scale_and_truncation(params):
    w = params["layer.0.ffn.inner.weight"]
    assert 0.015 < w.std() < 0.025
    assert np.abs(w).max() <= 2 * CFG.init_std


def test_paramset_is_read_only(params):
    with pytest.raises(ValueError):
        params["embeddings.word"][0, 0] = 1.0


def test_single_token_attention_is_one(model, params):
    _, cap = model.forward(params, np.array([5]), capture=True)
    assert np.all(cap.probs[0] == 1.0)


def test_hidden_shape(model, params):
    hidden, _ = model.forward(params, np.arange(5, 5 + CFG.max_seq_len))
    assert hidden.shape == (CFG.max_seq_len, CFG.hidden_size)


def test_too_long_sequence_rejected(model, params):
    with pytest.raises(ContractError):
        model.forward(params, np.full(CFG.max_seq_len + 1, 5))


def test_out_of_range_id_rejected(model, params):
    with pytest.raises(IndexError):
        model.forward(params, np.array([5, CFG.vocab_size]))


def test_padding_receives_no_attention(model, params, monkeypatch):
    k, n = 6, 12
    ids = np.full((1, n), 5)
    mask = np.zeros((1, n))
    mask[0, :k] = 1.0
    raw = []
    softmax = ag.softmax_rows

    def recording(x):
        out = softmax(x)
        raw.append(out.data.copy())
        return out

    monkeypatch.setattr(ag, "softmax_rows", recording)
    padded, cap = model.forward(params, ids, None, mask, capture=True)
    monkeypatch.undo()
    assert len(raw) == CFG.num_layers
    for probs in raw:
        assert probs[..., k:].sum(-1).max() < 1e-6
    assert cap.probs[0].shape[-1] == k
    full, _ = model.forward(params, ids[:, :k], None, mask[:, :k])
    np.testing.assert_allclose(padded.data[0, :k], full.data[0], atol=1e-6)


def test_attention_rows_sum_to_one(model, params):
    rng = np.random.default_rng(0)
    _, cap = model.forward(params, rng.integers(5, CFG.vocab_size, 20), capture=True)
    np.testing.assert_allclose(cap.probs[0].sum(-1), 1.0, atol=1e-9)
    assert cap.probs[0].shape == (CFG.num_layers, CFG.num_heads, 20, 20)


def test_eval_forward_is_deterministic(model, params):
    ids = np.arange(5, 25)
    a, _ = model.forward(params, ids)
    b, _ = model.forward(params, ids)
    assert a.data.tobytes() == b.data.tobytes()


def test_dropout_seed_changes_training_forward(model, params):
    ids = np.arange(5, 25)[None]
    a, _ = model.forward(params, ids, dropout_seed=1)
    b, _ = model.forward(params, ids, dropout_seed=2)
    c, _ = model.forward(params, ids, dropout_seed=1)
    assert not np.array_equal(a.data, b.data)
    assert a.data.tobytes() == c.data.tobytes()


def test_ner_logits_shape(model, params):
    logits = model.ner_logits(params, np.arange(5, 15))
    assert logits.shape == (10, CFG.num_ner_labels)


def test_chance_level_pretraining_losses(small_corpus, small_vocab):
    cfg = ModelConfig(vocab_size=len(small_vocab), max_seq_len=64)
    model = Bert(cfg)
    examples = make_mlm_examples(small_vocab, small_corpus.documents, 64, seed=0)
    batch = collate_mlm(examples[:200])
    with ag.no_grad():
        _, mlm, nsp = model.pretrain_losses(init_params(cfg, 0), batch)
    assert abs(nsp.item() - np.log(2)) < 0.2
    assert abs(mlm.item() - np.log(cfg.vocab_size)) < 0.15 * np.log(cfg.vocab_size)


def test_nsp_disabled(small_corpus, small_vocab):
    cfg = ModelConfig(vocab_size=len(small_vocab), use_nsp=False)
    model = Bert(cfg)
    params = init_params(cfg, 0)
    assert not any(n.startswith("nsp") for n in params)
    batch = collate_mlm(make_mlm_examples(small_vocab, small_corpus.documents[:3], 64, seed=0))
    total, mlm, nsp = model.pretrain_losses(params, batch)
    assert nsp is None and total.item() == mlm.item()
    with pytest.raises(ContractError):
        model.nsp_loss(params, batch)


def test_tied_decoder_has_no_separate_weight():
    params = init_params(ModelConfig(vocab_size=50, tie_mlm_weights=True), 0)
    assert "mlm.decoder.weight" not in params and "mlm.decoder.bias" in params


def test_label_shape_mismatch_rejected(small_corpus, small_vocab):
    cfg = ModelConfig(vocab_size=len(small_vocab))
    model = Bert(cfg)
    batch = collate_ner([encode_ner(small_vocab, e, 64) for e in small_corpus.ner_train[:2]])
    batch.labels = batch.labels[:, :-1]
    with pytest.raises(ContractError):
        model.ner_loss(init_params(cfg, 0), batch)


def test_one_adam_step_decreases_single_example_mlm_loss(small_corpus, small_vocab):
    cfg = ModelConfig(vocab_size=len(small_vocab), dropout_p=0.0)
    model = Bert(cfg)
    batch = collate_mlm(make_mlm_examples(small_vocab, small_corpus.documents[:1], 64, seed=1)[:1])
    work = {n: np.array(a) for n, a in init_params(cfg, 0).items()}
    weights = {n: ag.Tensor._wrap(a, requires_grad=True) for n, a in work.items()}
    with ag.Tape():
        before = model.mlm_loss(weights, batch)
        ag.backward(before)
    adam_step(work, {n: t.grad for n, t in weights.items()}, AdamState(), TrainerConfig(learning_rate=1e-3))
    after = model.mlm_loss(ParamSet(work.items()), batch)
    assert after.item() < before.item()
