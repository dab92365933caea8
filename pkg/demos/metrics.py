"""Clipped n-gram precision and rank-based AUC on small inputs you can check by hand.

    python3 demos/metrics.py
"""
from mgcd import eval as ev
from mgcd import stylemimic as sm

# Clipping: "the" appears twice in the reference, so only 2 of the 7 candidate tokens count.
cand = "the the the the the the the".split()
ref = "the cat is on the mat".split()
print("BLEU-1..4 of a degenerate candidate:", sm.bleu_components(cand, ref))

# A text that reproduces its reference scores 1 on every order it is long enough for.
text = "a mimic that changes nothing".split()
print("BLEU-1..4 of an unchanged text:", sm.bleu_components(text, text))

# AUC is the probability that a random MGC score beats a random HPC score (ties count half).
recs = [ev.PredictionRecord("h1", "HPC", 0.1), ev.PredictionRecord("h2", "HPC", 0.4),
        ev.PredictionRecord("m1", "MGC", 0.35), ev.PredictionRecord("m2", "MGC", 0.8)]
print("AUC (rank statistic):", ev.auc_roc(recs))
print("AUC (trapezoid over the ROC curve):", ev.trapezoid_auc(ev.roc_points(recs)))
print("accuracy at threshold 0.5:", ev.accuracy(recs))

# Only the ordering matters, so squashing the scores leaves AUC unchanged.
squashed = [ev.PredictionRecord(r.doc_id, r.true_label, r.score ** 4) for r in recs]
print("AUC after score**4:", ev.auc_roc(squashed))
