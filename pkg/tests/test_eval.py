import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from http_fixtures import closed_port_url, serve
from mgcd import eval as ev
from mgcd import stylemimic as sm
from mgcd.corpus import HPC, MGC

R = ev.PredictionRecord


def recs(labels, scores):
    return [R(f"d{i}", l, s) for i, (l, s) in enumerate(zip(labels, scores))]


def pairwise_auc(records):
    pos = [r.score for r in records if r.true_label == MGC]
    neg = [r.score for r in records if r.true_label == HPC]
    total = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return total / (len(pos) * len(neg))


def test_accuracy_examples():
    assert ev.accuracy(recs([MGC, HPC], [0.9, 0.1])) == 1.0
    assert ev.accuracy(recs([MGC, HPC, MGC, HPC], [0.7] * 4)) == 0.5
    assert ev.accuracy(recs([MGC, HPC, MGC, HPC], [0.9, 0.1, 0.8, 0.6])) == 0.75
    with pytest.raises(ev.EvalError):
        ev.accuracy([])


def test_record_validation():
    with pytest.raises(ev.EvalError):
        R("x", MGC, float("nan"))
    with pytest.raises(ev.EvalError):
        R("x", "OTHER", 0.5)
    assert R("x", MGC, 0.5).predicted == MGC and R("x", MGC, 0.4999).predicted == HPC


def test_auc_examples():
    assert ev.auc_roc(recs([MGC, MGC, HPC, HPC], [0.9, 0.8, 0.2, 0.1])) == 1.0
    assert ev.auc_roc(recs([MGC, MGC, HPC, HPC], [0.5] * 4)) == 0.5
    assert ev.auc_roc(recs([MGC, MGC, HPC, HPC], [0.1, 0.2, 0.8, 0.9])) == 0.0
    with pytest.raises(ev.EvalError):
        ev.auc_roc(recs([MGC, MGC], [0.1, 0.2]))


SCORES = st.lists(st.tuples(st.sampled_from([HPC, MGC]), st.integers(0, 20).map(lambda k: k / 20)),
                  min_size=2, max_size=40).filter(lambda xs: len({l for l, _ in xs}) == 2)


@given(SCORES)
@settings(max_examples=150, deadline=None)
def test_auc_properties(pairs):
    rs = recs([l for l, _ in pairs], [s for _, s in pairs])
    a = ev.auc_roc(rs)
    assert a == pytest.approx(pairwise_auc(rs), abs=1e-12)
    assert abs(a - ev.trapezoid_auc(ev.roc_points(rs))) <= 1e-9
    warped = [R(r.doc_id, r.true_label, r.score ** 3 + r.score) for r in rs]
    assert ev.auc_roc(warped) == a
    flipped = [R(r.doc_id, MGC if r.true_label == HPC else HPC, r.score) for r in rs]
    assert ev.auc_roc(flipped) == pytest.approx(1 - a, abs=1e-12)


@given(SCORES)
@settings(max_examples=50, deadline=None)
def test_accuracy_consistent_with_raw_scores(pairs):
    rs = recs([l for l, _ in pairs], [s for _, s in pairs])
    raw = np.mean([(MGC if s >= 0.5 else HPC) == l for l, s in pairs])
    assert ev.accuracy(rs) == raw


def test_roc_csv(tmp_path):
    rs = recs([MGC, HPC, MGC, HPC], [0.9, 0.3, 0.3, 0.1])
    ev.write_roc(tmp_path / "roc.csv", rs)
    rows = list(csv.reader((tmp_path / "roc.csv").open()))
    assert rows[0] == ["fpr", "tpr"] and rows[1] == ["0.0", "0.0"] and rows[-1] == ["1.0", "1.0"]


def test_predictions_roundtrip(tmp_path):
    rs = recs([MGC, HPC], [0.25, 0.75])
    ev.write_predictions(tmp_path / "p.jsonl", rs)
    assert ev.read_predictions(tmp_path / "p.jsonl") == rs
    assert set(json.loads((tmp_path / "p.jsonl").read_text().splitlines()[0])) == {"doc_id", "true", "score"}


def test_multi_seed():
    s = ev.multi_seed(lambda seed: 0.7, [0, 1, 2, 3, 4])
    assert s.mean == pytest.approx(0.7) and s.std == 0.0 and len(s.accuracies) == 5
    s = ev.multi_seed(lambda seed: {0: 0.6, 1: 0.8}[seed], [0, 1])
    assert s.mean == pytest.approx(0.7) and s.std == pytest.approx(0.1)
    s = ev.multi_seed(lambda seed: {0: 0.6, 1: 0.8}[seed], [0, 1], parallel=2)
    assert s.accuracies == [0.6, 0.8]
    with pytest.raises(ev.EvalError):
        ev.multi_seed(lambda seed: 0.5, [0])

    def failing(seed):
        if seed == 3:
            raise RuntimeError("diverged")
        return 0.5
    with pytest.raises(ev.SeedRunError) as err:
        ev.multi_seed(failing, [1, 2, 3])
    assert err.value.seed == 3 and "seed 3" in str(err.value)


def test_report_table():
    results = {("dt", "news"): 0.875, ("dt", "stories"): 0.625, ("mh", "news"): 0.5, ("mh", "stories"): 0.75}
    text, csv_text = ev.report_table(results)
    assert len(text.strip().splitlines()) == 3
    assert ev.parse_report_csv(csv_text) == results
    text, csv_text = ev.report_table({("dt", "a"): 0.5, ("mh", "b"): 0.25})
    assert "-" in text.splitlines()[1].split()
    assert csv_text.splitlines()[0] == "model,dataset,accuracy"
    assert ev.parse_report_csv(csv_text) == {("dt", "a"): 0.5, ("mh", "b"): 0.25}


def test_bleu_divergence_report_identity():
    feats = [sm.DifferenceFeatures([1.0] * 4, 1.0)] * 6
    out = ev.bleu_divergence_report([f"d{i}" for i in range(6)], [HPC, MGC] * 3, feats)
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 6
    assert ev.series_means(out) == {HPC: 1.0, MGC: 1.0}


@pytest.mark.slow
def test_bleu_divergence_report_prefix(prefix_pipeline):
    docs, feats = prefix_pipeline.test_docs, prefix_pipeline.test_features
    out = ev.bleu_divergence_report([d.doc_id for d in docs], [d.label for d in docs], feats)
    assert len(out.strip().splitlines()) - 1 == len(docs)
    means = ev.series_means(out)
    assert means[HPC] > means[MGC]


def detect_server(scores):
    def respond(path, payload):
        assert path == "/v1/detect"
        return 200, {"scores": scores(payload["texts"])}
    return respond


def test_remote_detector_echo():
    with serve(detect_server(lambda texts: [0.5] * len(texts))) as (url, _):
        assert ev.remote_detector(url, ["a", "b", "c"], batch_size=2) == [0.5, 0.5, 0.5]


def test_remote_detector_order_and_concurrency():
    with serve(detect_server(lambda texts: [len(t) / 100 for t in texts]), delay=0.05) as (url, stats):
        texts = ["x" * i for i in range(40)]
        out = ev.remote_detector(url, texts, max_inflight=2, batch_size=3)
    assert out == [i / 100 for i in range(40)] and stats["max_inflight"] <= 2


def test_remote_detector_errors():
    with serve(detect_server(lambda texts: [0.5])) as (url, _):
        with pytest.raises(ev.DetectorError, match="malformed"):
            ev.remote_detector(url, ["a", "b"])
    with serve(detect_server(lambda texts: [1.5 for _ in texts])) as (url, _):
        with pytest.raises(ev.DetectorError):
            ev.remote_detector(url, ["a"])
    with serve(detect_server(lambda texts: [0.5 for _ in texts]), delay=0.3) as (url, stats):
        with pytest.raises(ev.DetectorError, match="4 attempts"):
            ev.remote_detector(url, ["a"], timeout=0.05, backoff=0.0)
    with pytest.raises(ev.DetectorError):
        ev.remote_detector(closed_port_url(), ["a"], backoff=0.0)
    assert ev.remote_detector("http://unused", []) == []
