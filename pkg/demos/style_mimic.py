"""Learn to rewrite machine text into its human counterpart, then detect machine text by how
much the rewrite changes it.

Takes a few minutes on one CPU core.

    python3 demos/style_mimic.py
"""
from mgcd import corpus, synthetic, textproc
from mgcd import stylemimic as sm
from mgcd.corpus import SplitSpec

# Machine texts here prepend "Moreover," to each sentence of the human text.
pairs = synthetic.prefix_corpus(600, seed=2)
train, valid, test = corpus.split(pairs, SplitSpec.parse("0.6,0.2,0.2", 2))
bpe = textproc.train_bpe([t for p in train for t in (p.hpc_text, p.mgc_text)], 80)

res = sm.train_mimic(train, bpe, sm.MimicConfig.desk(seed=2), valid)
print(f"mimic trained, best epoch {res.best_epoch}, final val loss {res.log[-1]['val_loss']:.4f}")
for p in test[:2]:
    print(f"  {p.mgc_text!r} -> {res.mimic.generate(p.mgc_text)!r}")
    print(f"  {p.hpc_text!r} -> {res.mimic.generate(p.hpc_text)!r}")

# The mimic never saw human text as input and still edits its sentence openings a little,
# but machine text loses every prefix, so its rewrite overlaps the input far less.
vdocs, tdocs = corpus.flatten(valid), corpus.flatten(test)
vfeat = sm.extract_features_batch([d.text for d in vdocs], res.mimic)
tfeat = sm.extract_features_batch([d.text for d in tdocs], res.mimic)
for label in ("HPC", "MGC"):
    b1 = [f.bleu[0] for f, d in zip(tfeat, tdocs) if d.label == label]
    print(f"mean BLEU-1 of rewrite vs input, {label}: {sum(b1) / len(b1):.3f}")

lr = sm.train_lr(vfeat, [d.label for d in vdocs])
correct = sum(sm.classify(f, lr)[0] == d.label for f, d in zip(tfeat, tdocs))
print(f"logistic regression on (BLEU-1..4, cosine): test accuracy {correct / len(tdocs):.3f}")
