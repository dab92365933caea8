"""Build a paired corpus, clean it, split it by pair and print the per-class statistics tables.

    python3 demos/corpus_and_stats.py
"""
from mgcd import corpus, synthetic, textproc
from mgcd.corpus import PairedRecord, SplitSpec

# A small paired corpus: each record holds one human text and its machine counterpart.
pairs = synthetic.prefix_corpus(40, seed=3)
# Two records that cleaning should drop: a non-Latin script and an invalid marker.
pairs.append(PairedRecord("bad-1", "demo", "Привет мир.", "Hello world.", {}))
pairs.append(PairedRecord("bad-2", "demo", "A fine sentence.", "[deleted]", {}))

kept, report = corpus.clean(pairs)
print(f"cleaning kept {len(kept)} of {len(pairs)} pairs: nonlatin={report.dropped_nonlatin} invalid_marker={report.dropped_invalid_marker}")

# Splits are made over pairs, so both texts of a pair always land in the same split.
train, valid, test = corpus.split(kept, SplitSpec.parse("0.6,0.2,0.2", seed=0))
print(f"pairs per split: train={len(train)} valid={len(valid)} test={len(test)}")
docs = corpus.flatten(train)
print(f"train documents: {len(docs)} (half HPC, half MGC)\n")

print(textproc.render_stats(textproc.corpus_stats(docs, k=5)))
