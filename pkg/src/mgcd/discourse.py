"""PDTB-style discourse codes between consecutive sentences.

A document of n sentences gets n codes: position 0 is the START code
(rendered ``[CLS]``), position i >= 1 is the sense relating sentence i to
sentence i-1. Senses come from a pluggable tagger: a connective heuristic,
a precomputed JSONL file, or a remote sense classifier.
"""
from __future__ import annotations

import json
import re
import threading
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol

START = "[CLS]"
UNK = "[UNK]"
START_ID = 0
UNK_ID = 1

PDTB2_SENSES = (
    "Temporal.Asynchronous", "Temporal.Synchrony",
    "Contingency.Cause", "Contingency.Pragmatic cause", "Contingency.Condition", "Contingency.Pragmatic condition",
    "Comparison.Contrast", "Comparison.Pragmatic contrast", "Comparison.Concession",
    "Comparison.Pragmatic concession",
    "Expansion.Conjunction", "Expansion.Instantiation", "Expansion.Restatement", "Expansion.Alternative",
    "Expansion.Exception", "Expansion.List",
)

PDTB3_SENSES = (
    "Temporal.Synchronous", "Temporal.Asynchronous",
    "Contingency.Cause", "Contingency.Cause+Belief", "Contingency.Cause+SpeechAct", "Contingency.Condition",
    "Contingency.Condition+SpeechAct", "Contingency.Negative-condition",
    "Contingency.Negative-condition+SpeechAct", "Contingency.Purpose",
    "Comparison.Concession", "Comparison.Concession+SpeechAct", "Comparison.Contrast", "Comparison.Similarity",
    "Expansion.Conjunction", "Expansion.Disjunction", "Expansion.Equivalence", "Expansion.Exception",
    "Expansion.Instantiation", "Expansion.Level-of-detail", "Expansion.Manner", "Expansion.Substitution",
)

LEVEL1 = ("Temporal", "Contingency", "Comparison", "Expansion")


class TaggerError(RuntimeError):
    pass


@dataclass(frozen=True)
class SenseLabel:
    cls: str
    subtype: str | None = None

    def __str__(self):
        return self.cls if self.subtype is None else f"{self.cls}.{self.subtype}"

    @classmethod
    def parse(cls, text: str) -> "SenseLabel":
        head, _, tail = text.partition(".")
        return cls(head, tail or None)


class CodeVocab:
    def __init__(self, version: str, labels: list[str]):
        self.version = version
        names = [START, UNK] + [str(lab) for lab in labels]
        if len(set(names)) != len(names):
            raise ValueError("duplicate labels in code vocabulary")
        self.labels = names
        self.index = {name: i for i, name in enumerate(names)}
        self.classes = {SenseLabel.parse(n).cls for n in names[2:]}

    def __len__(self):
        return len(self.labels)

    def __contains__(self, label):
        return label in self.index

    def lookup(self, label: str) -> int:
        """Index of ``label``; anything outside the vocabulary maps to UNK."""
        if label == START:
            return START_ID
        return self.index.get(label.strip(), UNK_ID)

    def to_json(self) -> dict:
        return {"version": self.version, "labels": self.labels[2:]}

    @classmethod
    def load(cls, path) -> "CodeVocab":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        labels = [lab for lab in obj["labels"] if lab not in (START, UNK)]
        return cls(str(obj["version"]), labels)


def builtin_vocab(version="PDTB3") -> CodeVocab:
    v = str(version).upper().replace(" ", "")
    if v in ("PDTB3", "PDTB3.0", "3", "3.0"):
        return CodeVocab("PDTB3", list(LEVEL1) + list(PDTB3_SENSES))
    if v in ("PDTB2", "PDTB2.0", "2", "2.0"):
        return CodeVocab("PDTB2", list(LEVEL1) + list(PDTB2_SENSES))
    raise ValueError(f"unknown PDTB version {version!r}")


@dataclass(frozen=True)
class CodeSequence:
    doc_id: str
    codes: tuple

    def labels(self, vocab: CodeVocab) -> list[str]:
        return [vocab.labels[c] for c in self.codes]


class Tagger(Protocol):
    vocab: CodeVocab

    def __call__(self, arg1: str, arg2: str) -> int: ...


def tag_document(sentences: list[str], tagger, doc_id: str = "") -> CodeSequence:
    """START followed by tagger(sentence[i-1], sentence[i]) for each i >= 1."""
    if not sentences:
        raise ValueError("tag_document needs at least one sentence")
    if hasattr(tagger, "tag_document"):
        return tagger.tag_document(sentences, doc_id)
    codes = [START_ID]
    for i in range(1, len(sentences)):
        try:
            codes.append(int(tagger(sentences[i - 1], sentences[i])))
        except TaggerError:
            raise
        except Exception as exc:
            raise TaggerError(f"tagger failed on sentence {i} of {doc_id or 'document'}: {exc}") from exc
    return CodeSequence(doc_id, tuple(codes))


# ---------------------------------------------------------------- heuristic

HEURISTIC_RULES = (
    (("for example", "for instance"), "Expansion.Instantiation"),
    (("so", "because", "therefore", "thus", "but"), "Contingency.Cause"),
    (("however", "although", "while", "whereas"), "Comparison.Concession"),
    (("then", "before", "after", "when", "meanwhile"), "Temporal.Asynchronous"),
)
DEFAULT_SENSE = "Expansion.Level-of-detail"
# PDTB 2.0 has no Level-of-detail; its ancestor sense is Restatement.
_PDTB2_FALLBACK = {"Expansion.Level-of-detail": "Expansion.Restatement"}

_LEADING = re.compile(r"^[\s\"'“‘(\[]*([A-Za-z]+(?:\s+[A-Za-z]+)?)")


def leading_connective(sentence: str) -> str | None:
    m = _LEADING.match(sentence)
    if not m:
        return None
    words = m.group(1).lower().split()
    two = " ".join(words[:2])
    for cues, _ in HEURISTIC_RULES:
        if two in cues:
            return two
    for cues, _ in HEURISTIC_RULES:
        if words[0] in cues:
            return words[0]
    return None


class HeuristicTagger:
    """Classifies a pair by the second sentence's sentence-initial connective."""

    def __init__(self, vocab: CodeVocab):
        self.vocab = vocab
        self._ids = {}
        for cues, sense in HEURISTIC_RULES:
            for cue in cues:
                self._ids[cue] = self._resolve(sense)
        self._default = self._resolve(DEFAULT_SENSE)

    def _resolve(self, sense):
        if sense not in self.vocab and sense in _PDTB2_FALLBACK:
            sense = _PDTB2_FALLBACK[sense]
        return self.vocab.lookup(sense)

    def __call__(self, arg1: str, arg2: str) -> int:
        cue = leading_connective(arg2)
        return self._ids[cue] if cue is not None else self._default


def heuristic_tagger(vocab: CodeVocab) -> HeuristicTagger:
    return HeuristicTagger(vocab)


class ConstantTagger:
    """Always emits one sense; a no-signal control."""

    def __init__(self, vocab: CodeVocab, sense: str = DEFAULT_SENSE):
        self.vocab = vocab
        self.code = vocab.lookup(sense)

    def __call__(self, arg1, arg2):
        return self.code


# ---------------------------------------------------------------- file

class FileTagger:
    """Serves precomputed code sequences keyed by doc_id."""

    def __init__(self, path, vocab: CodeVocab):
        self.vocab = vocab
        self.table = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").split("\n"), 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if not isinstance(obj.get("doc_id"), str) or not isinstance(obj.get("codes"), list):
                raise TaggerError(f"{path}:{lineno}: expected {{'doc_id': str, 'codes': [str...]}}")
            self.table[obj["doc_id"]] = [str(c) for c in obj["codes"]]

    def tag_document(self, sentences, doc_id) -> CodeSequence:
        if doc_id not in self.table:
            raise TaggerError(f"no stored codes for doc_id {doc_id!r}")
        stored = self.table[doc_id]
        if len(stored) != len(sentences):
            raise TaggerError(f"doc_id {doc_id!r}: {len(stored)} stored codes for {len(sentences)} sentences")
        codes = [START_ID] + [self.vocab.lookup(c) for c in stored[1:]]
        return CodeSequence(doc_id, tuple(codes))

    def __call__(self, arg1, arg2):
        raise TaggerError("file tagger serves whole documents only; call tag_document with a doc_id")


def file_tagger(path, vocab: CodeVocab) -> FileTagger:
    return FileTagger(path, vocab)


# ---------------------------------------------------------------- remote

def post_json(url: str, payload: dict, timeout: float, retries: int = 3, backoff: float = 0.2,
              sleep: Callable[[float], None] = time.sleep, error: type[Exception] = None) -> dict:
    """POST JSON with ``retries`` retries and exponential backoff on transport errors."""
    error = error or TaggerError
    body = json.dumps(payload).encode("utf-8")
    last = None
    for attempt in range(retries + 1):
        req = urllib.request.Request(url, data=body, headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                raw = resp.read()
            try:
                return json.loads(raw.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise error(f"malformed response from {url}: {exc}") from exc
        except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as exc:
            last = exc
            if attempt < retries:
                sleep(backoff * (2 ** attempt))
    raise error(f"transport failure after {retries + 1} attempts to {url}: {last}")


class RemoteTagger:
    """Client for ``POST {endpoint}/v1/discourse/tag``.

    Pairs of one document go out as one batch; ``max_inflight`` bounds the
    number of concurrent requests across threads.
    """

    def __init__(self, endpoint: str, vocab: CodeVocab, timeout: float = 10.0, max_inflight: int = 4,
                 batch_size: int = 64, backoff: float = 0.2):
        self.url = endpoint.rstrip("/") + "/v1/discourse/tag"
        self.vocab = vocab
        self.timeout = timeout
        self.batch_size = batch_size
        self.backoff = backoff
        self._slots = threading.BoundedSemaphore(max(1, max_inflight))

    def tag_pairs(self, pairs: list[tuple[str, str]]) -> list[int]:
        out = []
        for i in range(0, len(pairs), self.batch_size):
            chunk = pairs[i:i + self.batch_size]
            with self._slots:
                resp = post_json(self.url, {"pairs": [{"arg1": a, "arg2": b} for a, b in chunk]},
                                 self.timeout, backoff=self.backoff)
            senses = resp.get("senses") if isinstance(resp, dict) else None
            if not isinstance(senses, list) or len(senses) != len(chunk):
                raise TaggerError(f"malformed response from {self.url}: expected {len(chunk)} senses")
            out.extend(self.vocab.lookup(str(s)) for s in senses)
        return out

    def tag_document(self, sentences, doc_id) -> CodeSequence:
        pairs = list(zip(sentences, sentences[1:]))
        return CodeSequence(doc_id, tuple([START_ID] + (self.tag_pairs(pairs) if pairs else [])))

    def tag_many(self, docs: list[tuple[str, list[str]]], threads: int = 4) -> list[CodeSequence]:
        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            return list(pool.map(lambda d: self.tag_document(d[1], d[0]), docs))

    def __call__(self, arg1, arg2):
        return self.tag_pairs([(arg1, arg2)])[0]


def remote_tagger(endpoint: str, vocab: CodeVocab, timeout: float = 10.0, max_inflight: int = 4) -> RemoteTagger:
    return RemoteTagger(endpoint, vocab, timeout, max_inflight)


def make_tagger(kind: str, vocab: CodeVocab, path=None, url=None, timeout=10.0, max_inflight=4):
    if kind == "heuristic":
        return HeuristicTagger(vocab)
    if kind == "file":
        if path is None:
            raise ValueError("file tagger needs a codes path")
        return FileTagger(path, vocab)
    if kind == "remote":
        if not url:
            raise ValueError("remote tagger needs an endpoint URL")
        return RemoteTagger(url, vocab, timeout, max_inflight)
    if kind == "constant":
        return ConstantTagger(vocab)
    raise ValueError(f"unknown tagger {kind!r}")
