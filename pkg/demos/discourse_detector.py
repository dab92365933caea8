"""Train the discourse-code detector and its sentence-only ablation on a corpus where
only the order of discourse relations tells the classes apart.

Takes about a minute on one CPU core.

    python3 demos/discourse_detector.py
"""
import time

from mgcd import corpus, discourse, synthetic, textproc
from mgcd import dtransformer as dt
from mgcd.corpus import SplitSpec

pairs = synthetic.discourse_corpus(300, seed=1)
print("HPC:", pairs[0].hpc_text[:150], "...")
print("MGC:", pairs[0].mgc_text[:150], "...\n")

train, valid, test = (corpus.flatten(p) for p in corpus.split(pairs, SplitSpec.parse("0.8,0.1,0.1", 1)))
tagger = discourse.heuristic_tagger(discourse.builtin_vocab("PDTB3"))
codes = discourse.tag_document(textproc.sentences(pairs[0].mgc_text), tagger)
print("sense codes of the first MGC document:", codes.labels(tagger.vocab), "\n")

cfg = dt.DTConfig.desk(seed=1)
for name, blind in (("with discourse codes", False), ("sentences only", True)):
    t0 = time.perf_counter()
    result = dt.train(cfg, train, valid, tagger, hierarchical_only=blind)
    acc = dt.accuracy_on(result, test, tagger)
    print(f"{name:22s} test accuracy {acc:.3f}  ({time.perf_counter() - t0:.0f}s, best epoch {result.best_epoch})")

# Each sentence is about as likely in either class, so the ablation should sit near 0.5.
