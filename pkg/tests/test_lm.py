import math
import struct

import numpy as np
import pytest

from l2sp.graph import TextAttributedGraph
from l2sp.lm import (
    BOS,
    EOS,
    UNK,
    ModelConfig,
    ToyModel,
    TrainConfig,
    TrainingDiverged,
    Vocab,
    build_vocab_and_tokenize,
    clm_loss,
    corpus_loss,
    extract_node_embedding,
    finite_difference_gradcheck,
    nn,
    sequence_logprob,
    tokenize_text,
    train,
)
from l2sp.lm.model import param_shapes
from l2sp.textualize import KeyphraseSet, textualize_path


def small_model(V=20, seed=0, **kw):
    cfg = ModelConfig(vocab_size=V, **{"d": 16, "heads": 4, "blocks": 2, "max_len": 32, **kw})
    return ToyModel.init(cfg, seed=seed)


def uniform_model(V=12):
    m = small_model(V)
    m.params["head.w"][:] = 0.0
    m.params["head.b"][:] = 0.0
    return m


def two_node_text():
    g = TextAttributedGraph.from_edges(2, [(0, 1)])
    ph = {0: KeyphraseSet(0, (("graph embedding", 1.0),)), 1: KeyphraseSet(1, (("keyword search", 1.0),))}
    return textualize_path((0, 1), g, ph)


# -- vocabulary and tokenization -------------------------------------------------


def test_vocab_a_b_a():
    vocab = Vocab.build(["a b a"])
    assert len(vocab) == 2 + 4
    tok = tokenize_text("a b a", vocab, 16)
    a, b = vocab.stoi["a"], vocab.stoi["b"]
    assert tok.ids.tolist() == [BOS, a, b, a, EOS]


def test_unknown_token_maps_to_unk():
    vocab = Vocab.build(["graph search"])
    assert tokenize_text("graph protein", vocab, 16).ids.tolist() == [BOS, vocab.stoi["graph"], UNK, EOS]


def test_tokens_split_words_and_punctuation():
    vocab = Vocab.build(["Paper with content: x-ray."])
    assert vocab.itos[4:] == sorted(["paper", "with", "content", ":", "x", "-", "ray", "."])


def test_span_tags():
    tp = two_node_text()
    vocab, (tok,) = build_vocab_and_tokenize([tp])
    words = [vocab.itos[i] for i in tok.ids]
    tagged = {w: t for w, t in zip(words, tok.tags)}
    assert tagged["graph"] == ("node", 0) and tagged["search"] == ("node", 1)
    assert tagged["cites"] == ("edge", 0)
    assert tagged["paper"] == ("filler", -1) and tok.tags[0] == tok.tags[-1] == ("filler", -1)


def test_truncation_and_empty_corpus():
    vocab = Vocab.build(["a b c d e f"])
    assert len(tokenize_text("a b c d e f", vocab, 4)) == 4
    with pytest.raises(ValueError):
        build_vocab_and_tokenize([])


def test_vocab_round_trip(tmp_path):
    vocab = Vocab.build(["graph, search: tree"])
    vocab.save(tmp_path / "vocab.tsv")
    assert (tmp_path / "vocab.tsv").read_text().splitlines()[:2] == ["<pad>\t0", "<unk>\t1"]
    assert Vocab.load(tmp_path / "vocab.tsv").itos == vocab.itos


# -- forward pass ------------------------------------------------------------------


def test_causality_exact():
    m = small_model()
    rng = np.random.default_rng(1)
    toks = rng.integers(4, 20, size=12)
    base = m.forward_logits(toks)
    for j in range(12):
        pert = toks.copy()
        pert[j] = (pert[j] + 1 - 4) % 16 + 4
        out = m.forward_logits(pert)
        assert np.array_equal(out[:j], base[:j])
        assert not np.array_equal(out[j:], base[j:])


def test_zero_head_gives_uniform_rows_and_softmax_sums():
    m = uniform_model(V=12)
    probs = nn.softmax(m.forward_logits([BOS, 5, 6, 7]))
    assert np.allclose(probs, 1 / 12, atol=0, rtol=1e-15)
    trained = small_model()
    rows = nn.softmax(trained.forward_logits(np.arange(4, 20)))
    assert np.abs(rows.sum(axis=1) - 1).max() < 1e-9


def test_single_token_one_row_and_overlong():
    m = small_model()
    assert m.forward_logits([BOS]).shape == (1, 20)
    with pytest.raises(ValueError):
        m.forward_logits(np.full(33, 5))


# -- loss --------------------------------------------------------------------------


@pytest.mark.parametrize("S", [2, 5, 17])
def test_uniform_loss_is_log_vocab(S):
    m = uniform_model(V=12)
    assert abs(clm_loss(m, np.arange(S) % 12) - math.log(12)) < 1e-12


def test_confident_logits_give_near_zero_loss():
    m = small_model(V=8)
    m.params["head.w"][:] = 0.0
    m.params["head.b"][:] = 0.0
    m.params["head.b"][5] = 60.0
    assert clm_loss(m, [5, 5, 5, 5]) < 1e-20


def test_hand_computed_three_token_loss():
    m = small_model(V=4)
    b = np.array([0.1, -0.3, 1.2, 0.5])
    m.params["head.w"][:] = 0.0
    m.params["head.b"][:] = b
    lse = math.log(sum(math.exp(x) for x in b))
    expected = ((lse - b[1]) + (lse - b[3])) / 2
    assert abs(clm_loss(m, [2, 1, 3]) - expected) < 1e-12


def test_padding_does_not_leak_into_loss():
    m = small_model()
    a, b = np.array([2, 5, 6, 7, 8, 3]), np.array([2, 9, 3])
    assert abs(corpus_loss(m, [a, b]) - (clm_loss(m, a) + clm_loss(m, b)) / 2) < 1e-12


def test_loss_and_grads_needs_two_tokens():
    with pytest.raises(ValueError):
        clm_loss(small_model(), [BOS])


# -- gradients ----------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(3))
def test_gradcheck_default_model(seed):
    m = ToyModel.init(ModelConfig(vocab_size=20), seed=seed)
    toks = np.concatenate([[BOS], np.random.default_rng(seed).integers(4, 20, size=10), [EOS]])
    assert finite_difference_gradcheck(m, toks, epsilon=1e-5, n_checks=200, seed=seed) < 1e-4


def test_tiny_gradient_entries_are_roundoff_limited():
    # an entry with |g| ~ 1e-7 moves the loss by ~1e-12 at eps=1e-5, a few ulps;
    # a wider step recovers agreement, so any mismatch there is the difference quotient's, not backprop's
    m = ToyModel.init(ModelConfig(vocab_size=20), seed=3)
    ids = np.random.default_rng(0).integers(0, 20, size=12)
    _, grads = m.loss_and_grads([ids])
    name, idx = "h1.attn.wqkv", (49, 34)
    analytic = grads[name][idx]
    assert abs(analytic) < 1e-6
    p, orig, eps = m.params[name], m.params[name][idx], 1e-3
    p[idx] = orig + eps
    up = clm_loss(m, ids)
    p[idx] = orig - eps
    down = clm_loss(m, ids)
    p[idx] = orig
    assert abs((up - down) / (2 * eps) - analytic) < 1e-4 * abs(analytic)


def test_gradcheck_zero_loss_configuration():
    m = small_model(V=8)
    m.params["head.w"][:] = 0.0
    m.params["head.b"][:] = 0.0
    m.params["head.b"][5] = 60.0
    _, grads = m.loss_and_grads([np.array([5, 5, 5])])
    assert max(float(np.abs(g).max()) for g in grads.values()) < 1e-20
    assert finite_difference_gradcheck(m, [5, 5, 5], n_checks=50) < 1e-4


def test_gradcheck_detects_corrupted_backward(monkeypatch):
    m = small_model()
    toks = np.random.default_rng(0).integers(0, 20, size=10)
    good = nn.gelu_backward
    monkeypatch.setattr(nn, "gelu_backward", lambda dy, cache: 1.5 * good(dy, cache))
    assert finite_difference_gradcheck(m, toks, n_checks=200) > 1e-2


def test_gradcheck_refuses_float32():
    with pytest.raises(ValueError):
        finite_difference_gradcheck(small_model().astype(np.float32), [1, 2, 3])


def test_adam_single_step_matches_formula():
    p = {"w": np.array([1.0, -2.0])}
    g = np.array([0.5, -0.1])
    opt = nn.Adam(p, lr=0.1)
    opt.step({"w": g})
    m_hat = (0.1 * g) / (1 - 0.9)
    v_hat = (0.001 * g * g) / (1 - 0.999)
    assert np.allclose(p["w"], np.array([1.0, -2.0]) - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8), rtol=0, atol=1e-15)


# -- training ----------------------------------------------------------------------------


def tiny_corpus(n=6):
    rng = np.random.default_rng(4)
    return [np.concatenate([[BOS], rng.integers(4, 20, size=int(rng.integers(3, 9))), [EOS]]) for _ in range(n)]


def test_training_deterministic_bitwise():
    data = tiny_corpus()
    cfg = TrainConfig(lr=1e-3, batch_size=4, steps=20, seed=5)
    a = train(small_model(seed=1), data, cfg)
    b = train(small_model(seed=1), data, cfg)
    assert a.losses == b.losses
    assert all(np.array_equal(a.model.params[k], b.model.params[k]) for k in a.model.params)


def test_zero_lr_leaves_params_and_flat_trace():
    data = tiny_corpus(4)
    m0 = small_model(seed=2)
    res = train(m0.copy(), data, TrainConfig(lr=0.0, batch_size=4, steps=5))
    assert all(np.array_equal(res.model.params[k], m0.params[k]) for k in m0.params)
    assert len(set(res.losses)) == 1


def test_training_reduces_loss_and_order_matters():
    data = tiny_corpus()
    res = train(small_model(seed=1), data, TrainConfig(lr=3e-3, batch_size=6, steps=150, seed=0))
    assert res.losses[-1] < 0.5 * res.losses[0]
    seq = data[0]
    shuffled = np.concatenate([[seq[0]], seq[1:-1][::-1], [seq[-1]]])
    assert not np.array_equal(shuffled, seq)
    assert clm_loss(res.model, shuffled) != clm_loss(res.model, seq)


def test_divergence_guard(monkeypatch):
    m = small_model()
    monkeypatch.setattr(ToyModel, "loss_and_grads", lambda self, batch, with_grads=True: (float("nan"), {}))
    with pytest.raises(TrainingDiverged):
        train(m, tiny_corpus(2), TrainConfig(steps=3))


def test_empty_corpus_rejected():
    with pytest.raises(ValueError):
        train(small_model(), [], TrainConfig(steps=1))


# -- sequence log-probabilities --------------------------------------------------------


def test_span_grouping_identity_and_product():
    tp = two_node_text()
    vocab, (tok,) = build_vocab_and_tokenize([tp])
    m = small_model(V=len(vocab), seed=7)
    rep = sequence_logprob(m, tok)
    assert abs(rep.residual) < 1e-9
    probs = nn.softmax(m.forward_logits(tok.ids))
    prod = 1.0
    for j in range(1, len(tok.ids)):
        prod *= probs[j - 1, tok.ids[j]]
    assert abs(math.exp(rep.total) - prod) <= 1e-9 * prod
    kinds = sorted(rep.per_span)
    assert kinds == [("edge", 0), ("filler", -1), ("node", 0), ("node", 1)]


def test_uniform_total_logprob():
    tp = two_node_text()
    vocab, (tok,) = build_vocab_and_tokenize([tp])
    m = uniform_model(V=len(vocab))
    S = len(tok.ids)
    assert abs(sequence_logprob(m, tok).total + (S - 1) * math.log(len(vocab))) < 1e-9


# -- node embeddings ----------------------------------------------------------------------


def test_single_token_embedding_exact():
    vocab = Vocab.build(["graph search"])
    m = small_model(V=len(vocab))
    emb = extract_node_embedding(m, "graph", vocab)
    h = m.hidden_states([BOS, vocab.stoi["graph"], EOS])
    assert emb.n_tokens == 1 and np.array_equal(emb.vector, h[1])


def test_two_token_mean_and_repeatability():
    vocab = Vocab.build(["graph search"])
    m = small_model(V=len(vocab))
    emb = extract_node_embedding(m, "graph search", vocab)
    h = m.hidden_states([BOS, vocab.stoi["graph"], vocab.stoi["search"], EOS])
    assert np.abs(emb.vector - (h[1] + h[2]) / 2).max() < 1e-12
    assert np.array_equal(emb.vector, extract_node_embedding(m, "graph search", vocab).vector)


def test_empty_text_zero_vector():
    vocab = Vocab.build(["graph"])
    emb = extract_node_embedding(small_model(V=len(vocab)), "", vocab)
    assert emb.empty and not emb.vector.any() and emb.vector.shape == (16,)


# -- persistence ------------------------------------------------------------------------------


def test_model_bin_layout_and_round_trip(tmp_path):
    m = small_model(V=11)
    m.save(tmp_path / "model.bin")
    data = (tmp_path / "model.bin").read_bytes()
    assert data[:4] == b"PLLM"
    assert struct.unpack_from("<6I", data, 4) == (1, 16, 4, 2, 11, 32)
    n_params = sum(int(np.prod(s)) for s in param_shapes(m.cfg).values())
    assert len(data) == 28 + 4 * n_params
    first = np.frombuffer(data, dtype="<f4", count=4, offset=28)
    assert np.array_equal(first, m.params["wte"].ravel()[:4].astype(np.float32))
    back = ToyModel.load(tmp_path / "model.bin")
    for k in m.params:
        assert np.array_equal(back.params[k], m.params[k].astype(np.float32))
    (tmp_path / "bad.bin").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(ValueError):
        ToyModel.load(tmp_path / "bad.bin")
    (tmp_path / "long.bin").write_bytes(data + b"\0\0\0\0")
    with pytest.raises(ValueError):
        ToyModel.load(tmp_path / "long.bin")


def test_param_order():
    names = list(param_shapes(ModelConfig(vocab_size=5, blocks=1)))
    assert names[:2] == ["wte", "wpe"] and names[-2:] == ["head.w", "head.b"]
    assert names.index("h0.ln1.g") < names.index("h0.attn.wqkv") < names.index("h0.mlp.w2") < names.index("lnf.g")
