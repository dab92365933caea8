import json
import math
import re
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mgcd import corpus, synthetic, textproc
from mgcd import eval as ev
from mgcd import stylemimic as sm
from mgcd.corpus import HPC, MGC, PairedRecord
from mgcd.textproc import whitespace_tokenize

# ---------------------------------------------------------------- BLEU


def oracle_precisions(cand, ref):
    """Clipped n-gram precision by explicit enumeration, one n at a time."""
    out = []
    for n in range(1, 5):
        cgrams = [tuple(cand[i:i + n]) for i in range(len(cand) - n + 1)]
        rgrams = [tuple(ref[i:i + n]) for i in range(len(ref) - n + 1)]
        if not cgrams:
            out.append(0.0)
            continue
        used = Counter()
        hits = 0
        for g in cgrams:
            if used[g] < rgrams.count(g):
                used[g] += 1
                hits += 1
        out.append(hits / len(cgrams))
    return out


def test_bleu_examples():
    assert sm.bleu_components(list("abcd"), list("abcd")) == [1.0, 1.0, 1.0, 1.0]
    p = sm.bleu_components("the the the the the the the".split(), "the cat is on the mat".split())
    assert p[0] == 2 / 7
    assert sm.bleu_components(["a", "b"], ["c", "d"]) == [0.0, 0.0, 0.0, 0.0]
    assert sm.bleu_components([], ["a"]) == [0.0, 0.0, 0.0, 0.0]
    assert sm.bleu_components(["a", "b"], ["a", "b"]) == [1.0, 1.0, 0.0, 0.0]


TOKENS = st.lists(st.sampled_from(list("abcde")), max_size=14)


@given(TOKENS, TOKENS)
@settings(max_examples=200, deadline=None)
def test_bleu_matches_oracle(cand, ref):
    assert sm.bleu_components(cand, ref) == oracle_precisions(cand, ref)


@given(st.lists(st.sampled_from(list("abc")), min_size=4, max_size=10))
@settings(max_examples=100, deadline=None)
def test_bleu_identical_is_all_ones(cand):
    assert sm.bleu_components(cand, list(cand)) == [1.0] * 4


@given(st.lists(st.sampled_from(list("ab")), min_size=4, max_size=4), st.lists(st.sampled_from(list("ab")),
                                                                              min_size=4, max_size=4))
@settings(max_examples=100, deadline=None)
def test_bleu_all_ones_only_if_equal_at_length_four(cand, ref):
    assert (sm.bleu_components(cand, ref) == [1.0] * 4) == (cand == ref)


def test_bleu_precision_ignores_extra_reference_material():
    # precisions only: a candidate contained in a longer reference scores all ones
    assert sm.bleu_components(list("abcd"), list("xabcdx")) == [1.0] * 4

# ---------------------------------------------------------------- cosine


@pytest.fixture(scope="module")
def letter_bpe():
    return textproc.train_bpe(["a b c d " * 20], 20)


def test_tf_cosine_hand_computed(letter_bpe):
    emb = sm.TfEmbedder(letter_bpe)
    # each letter is one token "x</w>", the single space is implied
    assert len(textproc.bpe_encode(letter_bpe, "a b")) == 2
    assert sm.cosine_similarity("a b", "a c", emb) == pytest.approx(0.5)
    assert sm.cosine_similarity("a b", "a b", emb) == 1.0
    assert sm.cosine_similarity("", "a", emb) == 0.0
    assert sm.cosine_similarity("", "", emb) == 0.0


@given(st.text(alphabet="abcd ", max_size=20), st.text(alphabet="abcd ", max_size=20))
@settings(max_examples=100, deadline=None)
def test_cosine_symmetric_bounded(a, b):
    bpe = textproc.train_bpe(["a b c d " * 20], 20)
    emb = sm.TfEmbedder(bpe)
    x, y = sm.cosine_similarity(a, b, emb), sm.cosine_similarity(b, a, emb)
    assert x == pytest.approx(y) and -1 <= x <= 1


def test_identity_mimic_fixed_point(letter_bpe):
    f = sm.extract_features("a b c d. b c", sm.IdentityMimic(letter_bpe))
    assert list(f.vector()) == [1.0] * 5

# ---------------------------------------------------------------- logistic regression


def test_lr_separable_1d():
    feats = [[-1.0]] * 50 + [[1.0]] * 50
    labels = [HPC] * 50 + [MGC] * 50
    model = sm.train_lr(feats, labels)
    assert np.mean([sm.classify(f, model)[0] == y for f, y in zip(feats, labels)]) == 1.0


def test_lr_no_signal_predicts_prior():
    feats = [[1.0] * 5] * 100
    labels = [HPC, MGC] * 50
    model = sm.train_lr(feats, labels)
    probs = sm.predict_proba(feats, model)
    assert np.allclose(probs, 0.5)
    assert np.mean([sm.classify(f, model)[0] == y for f, y in zip(feats, labels)]) == 0.5


def test_lr_loss_monotone_and_below_start():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(80, 5))
    y = [MGC if v > 0 else HPC for v in x[:, 0] + 0.5 * rng.normal(size=80)]
    model = sm.train_lr(x, y)
    hist = np.array(model.loss_history)
    assert np.all(np.diff(hist) <= 1e-12)
    assert hist[-1] <= hist[0]
    assert len(hist) - 1 <= 10_000


def test_lr_errors_and_boundary(tmp_path):
    with pytest.raises(ValueError):
        sm.train_lr([[0.0], [1.0]], [HPC, HPC])
    with pytest.raises(sm.UntrainedModel):
        sm.classify([0.0] * 5, sm.LrModel())
    model = sm.LrModel(np.array([2.0]), 0.0, np.array([0.0]), np.array([1.0]), True)
    assert sm.classify([0.0], model) == (MGC, 0.5)
    ps = [sm.classify([v], model)[1] for v in np.linspace(-3, 3, 13)]
    assert ps == sorted(ps)
    model.save(tmp_path / "lr.json")
    assert set(json.loads((tmp_path / "lr.json").read_text())) == {"weights", "bias", "scaler_mean", "scaler_std"}


def test_lr_scaler_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    feats = [sm.DifferenceFeatures(list(rng.random(4)), float(rng.random())) for _ in range(20)]
    labels = [HPC, MGC] * 10
    model = sm.train_lr(feats, labels)
    model.save(tmp_path / "lr.json")
    again = sm.LrModel.load(tmp_path / "lr.json")
    assert np.allclose(sm.predict_proba(feats, model), sm.predict_proba(feats, again), rtol=0, atol=1e-15)

# ---------------------------------------------------------------- mimic training


def tiny_cfg(**kw):
    base = dict(d_model=32, layers=1, heads=2, d_ff=64, dropout=0.0, max_len=24, lr=3e-3, epochs=40,
                early_stop=40, batch=8)
    base.update(kw)
    return sm.MimicConfig(**base)


def copy_pairs():
    words = ["cat", "dog", "sun", "map"]
    rng = np.random.default_rng(0)
    out = []
    for i in range(24):
        s = " ".join(words[j] for j in rng.integers(0, 4, 3))
        out.append(PairedRecord(f"c{i}", "copy", s, s, {}))
    return out


def test_mimic_config():
    c = sm.MimicConfig()
    assert (c.max_len, c.lr, c.epochs, c.early_stop, c.batch) == (1024, 2e-5, 10, 3, 1)
    with pytest.raises(ValueError):
        sm.MimicConfig(epochs=2, early_stop=3)
    with pytest.raises(ValueError):
        sm.MimicConfig(d_model=0)


def test_copy_task_and_determinism(tmp_path):
    pairs = copy_pairs()
    bpe = textproc.train_bpe([p.hpc_text for p in pairs], 20)
    a = sm.train_mimic(pairs, bpe, tiny_cfg())
    outs = a.mimic.generate_batch([p.mgc_text for p in pairs])
    assert outs == [p.hpc_text for p in pairs]
    b = sm.train_mimic(pairs, bpe, tiny_cfg())
    assert [r["val_loss"] for r in a.log] == [r["val_loss"] for r in b.log]
    a.mimic.save(tmp_path / "m.ckpt")
    again = sm.Mimic.load(tmp_path / "m.ckpt")
    assert again.generate_batch([p.mgc_text for p in pairs[:4]]) == outs[:4]
    # generation: empty input, length cap, determinism
    assert a.mimic.generate("") in ("", a.mimic.generate(""))
    assert len(textproc.bpe_encode(bpe, a.mimic.generate("cat " * 40))) <= a.mimic.cfg.max_len
    assert a.mimic.generate("dog sun") == a.mimic.generate("dog sun")


def test_train_mimic_errors():
    bpe = textproc.train_bpe(["a b c d"], 12)
    with pytest.raises(ValueError):
        sm.train_mimic([], bpe, tiny_cfg())
    with pytest.raises(ValueError):
        sm.train_mimic([PairedRecord("x", "s", "", "a", {})], bpe, tiny_cfg())
    with pytest.raises(sm.NumericError):
        sm.train_mimic(copy_pairs()[:4], textproc.train_bpe([p.hpc_text for p in copy_pairs()], 20),
                       tiny_cfg(lr=float("nan"), epochs=2, early_stop=1))


def test_features_file_roundtrip(tmp_path, letter_bpe):
    docs = corpus.flatten([PairedRecord("p", "s", "a b", "c d", {})])
    feats = sm.extract_features_batch([d.text for d in docs], sm.IdentityMimic(letter_bpe))
    sm.write_features(tmp_path / "f.jsonl", docs, feats)
    ids, labels, back = sm.read_features(tmp_path / "f.jsonl")
    assert ids == [d.doc_id for d in docs] and labels == [HPC, MGC]
    assert [f.vector().tolist() for f in back] == [f.vector().tolist() for f in feats]
    line = json.loads((tmp_path / "f.jsonl").read_text().splitlines()[0])
    assert set(line) == {"doc_id", "label", "bleu", "cosine"}

# ---------------------------------------------------------------- trained prefix-strip mimic


@pytest.mark.slow
def test_prefix_strip_exact_match(prefix_pipeline):
    test = prefix_pipeline.test
    outs = prefix_pipeline.mimic.generate_batch([p.mgc_text for p in test])
    rate = np.mean([o == p.hpc_text for o, p in zip(outs, test)])
    assert rate >= 0.9


class PrefixStripMimic(sm.IdentityMimic):
    """Exact inverse of the prefix corpus transform."""

    def generate_batch(self, texts, max_len=None):
        return [re.sub(r"(^|(?<=[.!?] ))Moreover, (\w)", lambda m: m.group(2).upper(), t) for t in texts]

    def generate(self, text):
        return self.generate_batch([text])[0]


def test_exact_prefix_strip_feature_directions():
    pairs = synthetic.prefix_corpus(50, seed=4)
    bpe = textproc.train_bpe([t for p in pairs for t in (p.hpc_text, p.mgc_text)], 60)
    mimic = PrefixStripMimic(bpe)
    assert mimic.generate(pairs[0].mgc_text) == pairs[0].hpc_text
    mgc = sm.extract_features_batch([p.mgc_text for p in pairs], mimic)
    hpc = sm.extract_features_batch([p.hpc_text for p in pairs], mimic)
    assert all(f.bleu[0] < 1 for f in mgc)
    assert all(f.vector().tolist() == [1.0] * 5 for f in hpc)


@pytest.mark.slow
def test_trained_mimic_feature_directions(prefix_pipeline):
    docs, feats = prefix_pipeline.test_docs, prefix_pipeline.test_features
    assert len(feats) == len(docs)
    mgc = [f.bleu[0] for d, f in zip(docs, feats) if d.label == MGC]
    hpc = [f.bleu[0] for d, f in zip(docs, feats) if d.label == HPC]
    assert all(p < 1 for p in mgc)
    assert np.mean(hpc) > np.mean(mgc)
    report = ev.bleu_divergence_report([d.doc_id for d in docs], [d.label for d in docs], feats)
    means = ev.series_means(report)
    assert means[HPC] > means[MGC]
    assert len(report.strip().split("\n")) == len(docs) + 1
