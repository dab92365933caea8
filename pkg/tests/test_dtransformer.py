import logging
import math

import numpy as np
import pytest

from mgcd import corpus, discourse, synthetic
from mgcd import dtransformer as dt
from mgcd.corpus import Document

V3 = discourse.builtin_vocab("PDTB3")
TAGGER = discourse.heuristic_tagger(V3)
TINY = dict(d_model=16, d_ff=32, enc_layers=1, dec_layers=1, heads=2, max_sentence_len=16, epochs=3,
            early_stop=1, batch=8)


def small_splits(n=60, seed=0):
    pairs = synthetic.discourse_corpus(n, seed=seed, sentence_counts=(3, 5))
    tr, va, te = corpus.split(pairs, corpus.SplitSpec.parse("0.6,0.2,0.2", seed))
    return corpus.flatten(tr), corpus.flatten(va), corpus.flatten(te)


def model_for(docs, **over):
    vocab = dt.WordVocab.build(d.text for d in docs)
    cfg = dt.DTConfig.desk(**{**TINY, **over, "token_vocab": len(vocab), "code_vocab": len(V3)})
    return dt.DTransformer(cfg), vocab, cfg


def test_config_defaults_and_validation():
    c = dt.DTConfig()
    assert (c.d_model, c.d_ff, c.enc_layers, c.heads, c.max_paragraph_len, c.lr, c.epochs, c.early_stop) == \
        (512, 2048, 6, 8, 128, 2e-6, 20, 5)
    with pytest.raises(ValueError):
        dt.DTConfig(epochs=2, early_stop=3)
    with pytest.raises(ValueError):
        dt.DTConfig(d_model=10, heads=3)
    with pytest.raises(ValueError):
        dt.DTConfig.from_dict({"bogus": 1})


def test_cls_matrix_shape_default_dims():
    doc = Document("d", "d", "HPC", "One here. Two here. Three here.")
    vocab = dt.WordVocab.build([doc.text])
    cfg = dt.DTConfig(enc_layers=1, dec_layers=1, token_vocab=len(vocab), code_vocab=len(V3))
    model = dt.DTransformer(cfg)
    assert dt.encode_sentences(model, dt.prepare(doc, vocab, TAGGER, cfg)).shape == (3, 512)


def test_long_document_truncated_and_logged(caplog):
    text = " ".join(f"Sentence number {i} ends." for i in range(200))
    doc = Document("long", "long", "HPC", text)
    vocab = dt.WordVocab.build([text])
    cfg = dt.DTConfig(token_vocab=len(vocab), code_vocab=len(V3))
    with caplog.at_level(logging.INFO, logger="mgcd.dtransformer"):
        prepared = dt.prepare(doc, vocab, TAGGER, cfg)
    assert prepared.n == 128 and prepared.truncated
    assert "truncated" in caplog.text


def test_empty_document_error():
    vocab = dt.WordVocab.build(["a b"])
    with pytest.raises(ValueError):
        dt.prepare(Document("e", "e", "HPC", "   "), vocab, TAGGER, dt.DTConfig.desk(token_vocab=5, code_vocab=5))


def test_identical_sentences_identical_rows_and_permutation():
    sents = ["The farmer opened the gate.", "A stranger sold a lamp.", "The farmer opened the gate."]
    doc = Document("d", "d", "HPC", " ".join(sents))
    model, vocab, cfg = model_for([doc])
    rows = dt.encode_sentences(model, dt.prepare(doc, vocab, TAGGER, cfg))
    assert np.array_equal(rows[0], rows[2])
    perm = Document("p", "p", "HPC", " ".join([sents[1], sents[0], sents[2]]))
    prow = dt.encode_sentences(model, dt.prepare(perm, vocab, TAGGER, cfg))
    assert np.allclose(prow, rows[[1, 0, 2]], atol=1e-6)


def test_probs_sum_to_one_and_head_symmetry():
    tr, _, _ = small_splits()
    model, vocab, cfg = model_for(tr)
    prepared = [dt.prepare(d, vocab, TAGGER, cfg) for d in tr[:10]]
    p = model.predict_proba(prepared)
    assert np.all(p >= 0) and np.allclose(p.sum(1), 1, atol=1e-6)
    model.head.weight.data[:] = model.head.weight.data[:, ::-1].copy()
    model.head.bias.data[:] = model.head.bias.data[::-1].copy()
    q = model.predict_proba(prepared)
    assert np.allclose(q, p[:, ::-1], atol=1e-6)


def test_degenerate_input_depends_only_on_parameters():
    tr, _, _ = small_splits()
    model, vocab, cfg = model_for(tr, positional=False)
    model.code_emb.weight.data[:] = 0
    outs = []
    for n, codes in ((2, [0, 3]), (4, [0, 5, 6, 2])):
        enc = dt.DocumentEncoding(np.zeros((n, cfg.d_model), np.float32), discourse.CodeSequence("z", tuple(codes)), n)
        outs.append(dt.decode_classify(model, enc).probs)
    assert np.allclose(outs[0], outs[1], atol=1e-6)
    model.head.weight.data[:] = 0
    model.head.bias.data[:] = [0.3, -0.2]
    enc = dt.DocumentEncoding(np.zeros((3, cfg.d_model), np.float32), discourse.CodeSequence("z", (0, 1, 2)), 3)
    expect = np.exp([0.3, -0.2]) / np.exp([0.3, -0.2]).sum()
    assert np.allclose(dt.decode_classify(model, enc).probs, expect, atol=1e-6)


def test_decode_dimension_mismatch():
    tr, _, _ = small_splits()
    model, _, cfg = model_for(tr)
    enc = dt.DocumentEncoding(np.zeros((3, cfg.d_model), np.float32), discourse.CodeSequence("z", (0, 1)), 3)
    with pytest.raises(ValueError):
        dt.decode_classify(model, enc)


def test_gradient_reaches_every_group():
    from mgcd.neural import autograd as ag
    tr, _, _ = small_splits()
    model, vocab, cfg = model_for(tr)
    batch = [dt.prepare(d, vocab, TAGGER, cfg) for d in tr[:8]]
    ag.cross_entropy(model.logits(batch, training=True), [d.label for d in batch]).backward()
    for prefix in ("enc.", "code_emb", "dec.", "head"):
        assert model.store.grad_norm(prefix) > 0, prefix


def test_first_batch_loss_near_ln2():
    tr, va, _ = small_splits()
    res = dt.train(dt.DTConfig.desk(**{**TINY, "epochs": 1, "early_stop": 1}), tr, va, TAGGER)
    assert abs(res.first_batch_loss - math.log(2)) <= 0.15


def test_training_deterministic_and_early_stop(tmp_path):
    tr, va, te = small_splits()
    cfg = dt.DTConfig.desk(**{**TINY, "epochs": 6, "early_stop": 2})
    a = dt.train(cfg, tr, va, TAGGER)
    b = dt.train(cfg, tr, va, TAGGER)
    dt.write_log(tmp_path / "a.jsonl", a.log)
    dt.write_log(tmp_path / "b.jsonl", b.log)
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert len(a.log) - a.best_epoch <= cfg.early_stop
    for line in (tmp_path / "a.jsonl").read_text().splitlines():
        assert {"epoch", "train_loss", "val_acc", "seconds"} <= set(__import__("json").loads(line))


def test_checkpoint_roundtrip_and_predict(tmp_path):
    tr, va, te = small_splits()
    res = dt.train(dt.DTConfig.desk(**TINY), tr, va, TAGGER)
    dt.save_checkpoint(res, tmp_path / "m.ckpt")
    back = dt.load_checkpoint(tmp_path / "m.ckpt")
    before = [p.probs for p in dt.predict_docs(res, te, TAGGER)]
    after = [p.probs for p in dt.predict_docs(back, te, TAGGER)]
    assert before == after
    doc = te[0]
    p1 = dt.predict(tmp_path / "m.ckpt", doc, TAGGER)
    p2 = dt.predict(back, Document(doc.doc_id, doc.pair_id, doc.label, doc.text + "  \n "), TAGGER)
    assert p1.probs == p2.probs and p1.label == max(("HPC", "MGC"), key=lambda l: p1.probs[l == "MGC"])
    with pytest.raises(dt.VocabMismatch):
        dt.predict(back, doc, discourse.heuristic_tagger(discourse.builtin_vocab("PDTB2")))


def test_ablation_has_no_discourse_params():
    tr, va, _ = small_splits()
    res = dt.ablation_hierarchical_only(dt.DTConfig.desk(**{**TINY, "epochs": 1}), tr, va, TAGGER)
    names = list(res.model.store.params)
    assert not any(n.startswith(("dec.", "code_emb")) for n in names)
    p = res.model.predict_proba([dt.prepare(d, res.vocab, TAGGER, res.model.cfg) for d in va])
    assert np.allclose(p.sum(1), 1, atol=1e-6)


def test_nan_loss_reported():
    tr, va, _ = small_splits()
    with pytest.raises(dt.NumericError, match="epoch 1, batch 1"):
        dt.train(dt.DTConfig.desk(**{**TINY, "lr": float("nan")}), tr, va, TAGGER)


@pytest.mark.slow
def test_constant_codes_give_no_advantage(discourse_runs):
    full = discourse_runs.get("constant_full", 0)["accuracy"]
    blind = discourse_runs.get("constant_blind", 0)["accuracy"]
    n = 2 * 100  # test documents
    # two-proportion z bound at 95%
    bound = 1.96 * math.sqrt(0.5 * 0.5 * 2 / n)
    assert abs(full - blind) <= bound
