"""Quick self-test: gradient checks plus brute-force checks of BLEU and AUC."""
from __future__ import annotations

import itertools
import sys
import time

import numpy as np

from . import eval as ev
from .corpus import HPC, MGC
from .neural import gradcheck
from .stylemimic import bleu_components


def brute_bleu(cand, ref, max_n=4):
    out = []
    for n in range(1, max_n + 1):
        grams = [tuple(cand[i:i + n]) for i in range(len(cand) - n + 1)]
        if not grams:
            out.append(0.0)
            continue
        ref_grams = [tuple(ref[i:i + n]) for i in range(len(ref) - n + 1)]
        matched = 0
        for g in set(grams):
            matched += min(grams.count(g), ref_grams.count(g))
        out.append(matched / len(grams))
    return out


def brute_auc(pos, neg):
    wins = 0.0
    for p, q in itertools.product(pos, neg):
        wins += 1.0 if p > q else 0.5 if p == q else 0.0
    return wins / (len(pos) * len(neg))


def random_records(rng, n=None):
    n = n or int(rng.integers(4, 40))
    labels = [MGC, HPC] + [MGC if rng.random() < 0.5 else HPC for _ in range(n - 2)]
    scores = np.round(rng.random(n), int(rng.integers(1, 4)))
    return [ev.PredictionRecord(f"d{i}", lab, float(s)) for i, (lab, s) in enumerate(zip(labels, scores))]


def run(seed: int = 0, out=sys.stdout) -> bool:
    rng = np.random.default_rng(seed)
    ok = True

    t0 = time.perf_counter()
    res = gradcheck.run_all(seed)
    passed = all(r.ok for r in res)
    print(f"gradcheck: {sum(r.ok for r in res)}/{len(res)} layer shapes, max rel err "
          f"{max(r.rel_error for r in res):.1e}, {time.perf_counter() - t0:.1f}s "
          f"{'PASS' if passed else 'FAIL'}", file=out)
    ok &= passed

    words = list("abcde")
    bad = 0
    for _ in range(200):
        cand = [words[i] for i in rng.integers(0, 5, rng.integers(0, 12))]
        ref = [words[i] for i in rng.integers(0, 5, rng.integers(0, 12))]
        bad += bleu_components(cand, ref) != brute_bleu(cand, ref)
    print(f"bleu oracle: {200 - bad}/200 exact {'PASS' if not bad else 'FAIL'}", file=out)
    ok &= bad == 0

    bad = 0
    for _ in range(100):
        recs = random_records(rng)
        pos = [r.score for r in recs if r.true_label == MGC]
        neg = [r.score for r in recs if r.true_label == HPC]
        a = ev.auc_roc(recs)
        bad += abs(a - brute_auc(pos, neg)) > 1e-9 or abs(a - ev.trapezoid_auc(ev.roc_points(recs))) > 1e-9
    print(f"auc oracle: {100 - bad}/100 within 1e-9 {'PASS' if not bad else 'FAIL'}", file=out)
    ok &= bad == 0
    return bool(ok)


if __name__ == "__main__":
    sys.exit(0 if run() else 1)
