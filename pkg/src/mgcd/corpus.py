"""Paired HPC/MGC corpus ingestion, cleaning and pair-aware splitting."""
from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable

HPC = "HPC"
MGC = "MGC"
LABELS = (HPC, MGC)

_MASK64 = (1 << 64) - 1


class CorpusError(ValueError):
    """Unreadable corpus or schema violations; ``errors`` holds (line number, message)."""

    def __init__(self, message, errors=()):
        super().__init__(message)
        self.errors = list(errors)


@dataclass(frozen=True)
class PairedRecord:
    pair_id: str
    source: str
    hpc_text: str
    mgc_text: str
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def to_json(self) -> dict:
        return {"pair_id": self.pair_id, "source": self.source, "hpc": self.hpc_text,
                "mgc": self.mgc_text, "meta": dict(self.meta)}


@dataclass(frozen=True)
class Document:
    doc_id: str
    pair_id: str
    label: str
    text: str

    def to_json(self) -> dict:
        return {"doc_id": self.doc_id, "pair_id": self.pair_id, "label": self.label, "text": self.text}

    @classmethod
    def from_json(cls, obj: dict) -> "Document":
        return cls(obj["doc_id"], obj.get("pair_id", obj["doc_id"]), obj["label"], obj["text"])


@dataclass(frozen=True)
class SplitSpec:
    train_frac: Fraction
    valid_frac: Fraction
    test_frac: Fraction
    seed: int = 0

    def __post_init__(self):
        fr = [Fraction(str(f)) if isinstance(f, float) else Fraction(f)
              for f in (self.train_frac, self.valid_frac, self.test_frac)]
        for f in fr:
            if not 0 <= f <= 1:
                raise ValueError(f"split fraction {f} outside [0, 1]")
        if sum(fr) != 1:
            raise ValueError(f"split fractions must sum to 1, got {float(sum(fr))}")
        object.__setattr__(self, "train_frac", fr[0])
        object.__setattr__(self, "valid_frac", fr[1])
        object.__setattr__(self, "test_frac", fr[2])

    @classmethod
    def parse(cls, fracs: str, seed: int = 0) -> "SplitSpec":
        parts = [p.strip() for p in fracs.split(",")]
        if len(parts) != 3:
            raise ValueError(f"expected three comma-separated fractions, got {fracs!r}")
        return cls(*(Fraction(p) for p in parts), seed=seed)


@dataclass
class CleaningReport:
    kept: int = 0
    dropped_nonlatin: int = 0
    dropped_invalid_marker: int = 0
    dropped_ids: list = field(default_factory=list)

    @property
    def total(self) -> int:
        return self.kept + self.dropped_nonlatin + self.dropped_invalid_marker


# ------------------------------------------------------------------ loading

_REQUIRED = {"pair_id": str, "source": str, "hpc": str, "mgc": str}


def _parse_record(obj) -> PairedRecord:
    if not isinstance(obj, dict):
        raise ValueError("line is not a JSON object")
    for key, typ in _REQUIRED.items():
        if key not in obj:
            raise ValueError(f"missing field {key!r}")
        if not isinstance(obj[key], typ):
            raise ValueError(f"field {key!r} must be a string")
    meta = obj.get("meta", {})
    if not isinstance(meta, dict) or not all(isinstance(k, str) and isinstance(v, str) for k, v in meta.items()):
        raise ValueError("field 'meta' must map strings to strings")
    if not obj["pair_id"]:
        raise ValueError("empty pair_id")
    return PairedRecord(obj["pair_id"], obj["source"], obj["hpc"], obj["mgc"], dict(meta))


def load_pairs(path) -> list[PairedRecord]:
    """Read corpus JSONL. All malformed lines are collected into one CorpusError."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CorpusError(f"cannot read corpus {path}: {exc}") from exc
    records, errors, seen = [], [], set()
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        try:
            rec = _parse_record(json.loads(line))
        except (json.JSONDecodeError, ValueError) as exc:
            errors.append((lineno, str(exc)))
            continue
        if rec.pair_id in seen:
            errors.append((lineno, f"duplicate pair_id {rec.pair_id!r}"))
            continue
        seen.add(rec.pair_id)
        records.append(rec)
    if errors:
        detail = "; ".join(f"line {n}: {msg}" for n, msg in errors[:10])
        raise CorpusError(f"{len(errors)} malformed line(s) in {path}: {detail}", errors)
    return records


def write_pairs(path, records: Iterable[PairedRecord]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), ensure_ascii=False, sort_keys=True) + "\n")


# ------------------------------------------------------------------ cleaning

def has_nonlatin_letters(text: str) -> bool:
    for ch in text:
        if unicodedata.category(ch).startswith("L") and "LATIN" not in unicodedata.name(ch, ""):
            return True
    return False


_PUNCT = r"[^\w\s]"
_REPEATED_PUNCT = re.compile(r"([^\w\s])\1{2,}")
# Single apostrophes, hyphens, periods, slashes and ampersands are ordinary
# inside words (don't, well-known, U.S, and/or, R&D); anything else is a marker.
_INNER_PUNCT = re.compile(r"[^\W\d_](?:[^\w\s]{2,}|[^\w\s'’\-./&])[^\W\d_]")


def has_invalid_marker(text: str) -> bool:
    return bool(_REPEATED_PUNCT.search(text) or _INNER_PUNCT.search(text))


def clean(records: list[PairedRecord]) -> tuple[list[PairedRecord], CleaningReport]:
    """Drop (never rewrite) pairs with non-Latin letters or invalid intra-word markers."""
    kept = []
    report = CleaningReport()
    for r in records:
        if has_nonlatin_letters(r.hpc_text) or has_nonlatin_letters(r.mgc_text):
            report.dropped_nonlatin += 1
            report.dropped_ids.append(r.pair_id)
        elif has_invalid_marker(r.hpc_text) or has_invalid_marker(r.mgc_text):
            report.dropped_invalid_marker += 1
            report.dropped_ids.append(r.pair_id)
        elif not r.hpc_text.strip() or not r.mgc_text.strip():
            # Empty texts violate the record invariant; accounted as invalid.
            report.dropped_invalid_marker += 1
            report.dropped_ids.append(r.pair_id)
        else:
            kept.append(r)
    report.kept = len(kept)
    return kept, report


# ------------------------------------------------------------------ splitting

class SplitMix64:
    """SplitMix64 generator (Steele, Lea & Flood); fixed so shuffles match across platforms."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, bound: int) -> int:
        """Uniform integer in [0, bound) by rejection (no modulo bias)."""
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % bound


def shuffled(items: list, seed: int) -> list:
    """Fisher-Yates shuffle driven by SplitMix64(seed)."""
    out = list(items)
    rng = SplitMix64(seed)
    for i in range(len(out) - 1, 0, -1):
        j = rng.below(i + 1)
        out[i], out[j] = out[j], out[i]
    return out


def split_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    n_valid = int(spec.valid_frac * n)
    n_test = int(spec.test_frac * n)
    return n - n_valid - n_test, n_valid, n_test


def split(records: list[PairedRecord], spec: SplitSpec):
    """Pair-aware train/valid/test split; floor sizes for valid/test, remainder to train."""
    if not records:
        raise ValueError("cannot split an empty corpus")
    order = shuffled(list(records), spec.seed)
    n_train, n_valid, _ = split_sizes(len(order), spec)
    return order[:n_train], order[n_train:n_train + n_valid], order[n_train + n_valid:]


def split_manifest(seed: int, train, valid, test) -> dict:
    return {"seed": seed, "train": [r.pair_id for r in train], "valid": [r.pair_id for r in valid],
            "test": [r.pair_id for r in test]}


def flatten(pairs: list[PairedRecord]) -> list[Document]:
    docs = []
    for r in pairs:
        docs.append(Document(f"{r.pair_id}:hpc", r.pair_id, HPC, r.hpc_text))
        docs.append(Document(f"{r.pair_id}:mgc", r.pair_id, MGC, r.mgc_text))
    return docs


def load_documents(path) -> list[Document]:
    """Read either a documents JSONL or a pairs JSONL (flattened)."""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").split("\n") if ln.strip()]
    if not lines:
        return []
    first = json.loads(lines[0])
    if "hpc" in first and "mgc" in first:
        return flatten(load_pairs(path))
    return [Document.from_json(json.loads(ln)) for ln in lines]


def write_documents(path, docs: Iterable[Document]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for d in docs:
            fh.write(json.dumps(d.to_json(), ensure_ascii=False, sort_keys=True) + "\n")
