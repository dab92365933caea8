"""Synthetic corpora with known ground truth, used by the acceptance suite and demos.

``discourse_corpus``: both members of a pair share the same content
sentences and the same multiset of connectives (two families: cause-type
"So/Therefore/Thus/Because of this" and instantiation-type "For example/For
instance"). They differ only in *where* each family appears. MGC documents
open their transitions with the cause family and close with the
instantiation family; HPC documents do the reverse. Any model that sees the
document as a bag of sentences is at chance, while the ordered code
sequence separates the classes.

``prefix_corpus``: MGC is HPC with "Moreover," prepended to every sentence.
"""
from __future__ import annotations

import numpy as np

from . import discourse
from .corpus import PairedRecord

SUBJECTS = ("the farmer", "a teacher", "the old sailor", "my neighbor", "the engineer", "a young girl",
            "the doctor", "our captain", "the baker", "a stranger", "the painter", "the mayor")
VERBS = ("carried", "noticed", "repaired", "painted", "described", "found", "lifted", "opened", "cleaned",
         "moved", "sold", "watched")
OBJECTS = ("a heavy box", "the wooden gate", "an empty bottle", "the long rope", "a small lantern",
           "the broken wheel", "a red kite", "the iron key", "a paper map", "the blue door", "a bright lamp",
           "the stone wall")
PLACES = ("near the river", "in the morning", "behind the barn", "at the market", "after dinner",
          "on the hill", "by the harbor", "in the garden", "under the bridge", "before noon")

CAUSE_CUES = ("So", "Therefore", "Thus")
INSTANCE_CUES = ("For example", "For instance")


def _clause(rng) -> str:
    return " ".join([SUBJECTS[rng.integers(len(SUBJECTS))], VERBS[rng.integers(len(VERBS))],
                     OBJECTS[rng.integers(len(OBJECTS))], PLACES[rng.integers(len(PLACES))]])


def _capitalize(s: str) -> str:
    return s[:1].upper() + s[1:]


def _render(clauses, cues) -> str:
    out = [_capitalize(clauses[0]) + "."]
    for clause, cue in zip(clauses[1:], cues):
        out.append(f"{cue}, {clause}.")
    return " ".join(out)


def discourse_corpus(n_pairs: int = 1000, seed: int = 0, sentence_counts=(5, 7, 9)) -> list[PairedRecord]:
    rng = np.random.default_rng(seed)
    records = []
    for k in range(n_pairs):
        n = int(sentence_counts[rng.integers(len(sentence_counts))])
        if n % 2 == 0:
            raise ValueError("sentence counts must be odd so both connective families get equal halves")
        half = (n - 1) // 2
        clauses = [_clause(rng) for _ in range(n)]
        cause = [CAUSE_CUES[rng.integers(len(CAUSE_CUES))] for _ in range(half)]
        inst = [INSTANCE_CUES[rng.integers(len(INSTANCE_CUES))] for _ in range(half)]
        mgc = _render(clauses, cause + inst)
        hpc = _render(clauses, inst + cause)
        records.append(PairedRecord(f"disc-{seed}-{k:05d}", "synthetic-discourse", hpc, mgc, {}))
    return records


def prefix_corpus(n_pairs: int = 600, seed: int = 0, sentence_counts=(1, 2), prefix: str = "Moreover,",
                  vocab_size: int = 12, words_per_sentence=(3, 5)) -> list[PairedRecord]:
    """Short documents over a small word list; MGC prepends ``prefix`` to every sentence."""
    rng = np.random.default_rng(seed)
    words = [w for s in (SUBJECTS, VERBS, OBJECTS) for phrase in s for w in phrase.split()
             if w not in ("the", "a", "an", "my", "our")]
    words = sorted(set(words))[: vocab_size]
    records = []
    for k in range(n_pairs):
        n = int(sentence_counts[rng.integers(len(sentence_counts))])
        sents = []
        for _ in range(n):
            m = int(rng.integers(words_per_sentence[0], words_per_sentence[1] + 1))
            ws = [words[rng.integers(len(words))] for _ in range(m)]
            sents.append(_capitalize(" ".join(ws)) + ".")
        hpc = " ".join(sents)
        mgc = " ".join(f"{prefix} {s[0].lower()}{s[1:]}" for s in sents)
        records.append(PairedRecord(f"pref-{seed}-{k:05d}", "synthetic-prefix", hpc, mgc, {}))
    return records


class ShuffledTagger:
    """Wraps a tagger and permutes codes[1:] of every document with a doc-keyed RNG.

    The code multiset survives; its alignment with sentence order does not.
    """

    def __init__(self, base, seed: int = 0):
        self.base = base
        self.vocab = base.vocab
        self.seed = seed

    def tag_document(self, sentences, doc_id):
        seq = discourse.tag_document(sentences, self.base, doc_id)
        key = int.from_bytes(doc_id.encode("utf-8")[-8:].rjust(8, b"\0"), "little")
        rng = np.random.default_rng([self.seed, key, len(doc_id)])
        rest = list(seq.codes[1:])
        rng.shuffle(rest)
        return discourse.CodeSequence(doc_id, (seq.codes[0], *rest))


# Nine sentences whose openers exercise the default, instantiation, temporal and cause rules.
LEVER_PARAGRAPH = [
    "A lever trades distance for force.",
    "The longer arm moves far while the short arm moves a little.",
    "For example, a crowbar lifts a crate that no one could raise by hand.",
    "Push the handle down one meter and the tip rises a single centimeter.",
    "When the ratio is ten to one, your push is multiplied by ten.",
    "But the handle must travel ten times as far as the load.",
    "So a gentle push becomes a strong lift.",
    "Then the crate settles onto a wooden block.",
    "A winch applies the same rule with a drum instead of a bar.",
]
