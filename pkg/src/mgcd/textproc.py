"""Sentence segmentation, tokenizers (whitespace and BPE) and corpus statistics."""
from __future__ import annotations

import heapq
import json
import re
import unicodedata
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import Document

# ---------------------------------------------------------------- sentences

ABBREVIATIONS = frozenset({
    "mr.", "mrs.", "ms.", "dr.", "prof.", "st.", "jr.", "sr.", "e.g.", "i.e.", "etc.", "vs.", "u.s.",
})


@dataclass(frozen=True)
class SentenceSpan:
    start: int  # UTF-8 byte offset
    end: int
    text: str


_BOUNDARY = re.compile(r"[.!?]+[\"'”’)\]]*(?=\s+[\"'“‘(\[]?[A-Z])")


def _sentence_char_spans(text: str) -> list[tuple[int, int]]:
    cuts = []
    for m in _BOUNDARY.finditer(text):
        word_start = text.rfind(" ", 0, m.start()) + 1
        word_start = max(word_start, text.rfind("\n", 0, m.start()) + 1, text.rfind("\t", 0, m.start()) + 1)
        last_word = text[word_start:m.start() + 1].lower().lstrip("\"'“‘([")
        if m.group().startswith(".") and last_word in ABBREVIATIONS:
            continue
        cuts.append(m.end())
    spans = []
    begin = 0
    for cut in cuts + [len(text)]:
        seg = text[begin:cut]
        stripped = seg.strip()
        if stripped:
            lead = len(seg) - len(seg.lstrip())
            spans.append((begin + lead, begin + lead + len(stripped)))
        begin = cut
    return spans


def split_sentences(text: str) -> list[SentenceSpan]:
    """Rule-based splitter: terminal punctuation, then whitespace and an uppercase letter or quote."""
    spans = _sentence_char_spans(text)
    out = []
    byte_pos = 0
    char_pos = 0
    for s, e in spans:
        byte_pos += len(text[char_pos:s].encode("utf-8"))
        b_start = byte_pos
        byte_pos += len(text[s:e].encode("utf-8"))
        out.append(SentenceSpan(b_start, byte_pos, text[s:e]))
        char_pos = e
    return out


def sentences(text: str) -> list[str]:
    return [s.text for s in split_sentences(text)]


# ---------------------------------------------------------------- whitespace tokens

def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch)[0] in "PS"


def whitespace_tokenize(text: str) -> list[str]:
    """Split on whitespace; leading/trailing punctuation becomes one token per character."""
    tokens = []
    for chunk in text.split():
        i, j = 0, len(chunk)
        while i < j and _is_punct(chunk[i]):
            i += 1
        while j > i and _is_punct(chunk[j - 1]):
            j -= 1
        tokens.extend(chunk[:i])
        if i < j:
            tokens.append(chunk[i:j])
        tokens.extend(chunk[j:])
    return tokens


def is_word(token: str) -> bool:
    return any(ch.isalnum() for ch in token)


# ---------------------------------------------------------------- BPE

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<s>", "</s>")
END_OF_WORD = "</w>"


class BpeError(ValueError):
    pass


@dataclass
class BpeVocab:
    merges: list[tuple[str, str]]
    tokens: dict[str, int]
    _ranks: dict = field(default_factory=dict, repr=False, compare=False)
    _id_to_token: list = field(default_factory=list, repr=False, compare=False)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self._ranks = {tuple(p): i for i, p in enumerate(self.merges)}
        self._id_to_token = [None] * len(self.tokens)
        for tok, i in self.tokens.items():
            if not 0 <= i < len(self.tokens) or self._id_to_token[i] is not None:
                raise BpeError("token ids must be dense and unique")
            self._id_to_token[i] = tok
        for i, name in enumerate(RESERVED):
            if self._id_to_token[i] != name:
                raise BpeError(f"id {i} must be reserved for {name}")

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id_to_token(self, i: int) -> str:
        return self._id_to_token[i]

    def to_json(self) -> dict:
        return {"size": self.size, "merges": [list(m) for m in self.merges], "tokens": self.tokens}

    @classmethod
    def from_json(cls, obj: dict) -> "BpeVocab":
        vocab = cls([tuple(m) for m in obj["merges"]], dict(obj["tokens"]))
        if obj.get("size", vocab.size) != vocab.size:
            raise BpeError(f"declared size {obj['size']} != {vocab.size} tokens")
        return vocab

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), ensure_ascii=False, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "BpeVocab":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))

    def fingerprint(self) -> str:
        import hashlib
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()[:16]

    # -- encoding
    def _encode_word(self, word: str) -> list[str]:
        hit = self._cache.get(word)
        if hit is not None:
            return hit
        symbols = list(word) + [END_OF_WORD]
        while len(symbols) > 1:
            best = None
            for i in range(len(symbols) - 1):
                r = self._ranks.get((symbols[i], symbols[i + 1]))
                if r is not None and (best is None or r < best[0]):
                    best = (r, i)
            if best is None:
                break
            i = best[1]
            symbols[i:i + 2] = [symbols[i] + symbols[i + 1]]
        if len(self._cache) < 100_000:
            self._cache[word] = symbols
        return symbols


_PIECES = re.compile(r"\S+|\s+")


def train_bpe(texts: list[str], target_size: int) -> BpeVocab:
    """Greedy merge training over whitespace-delimited words with an end-of-word symbol.

    Ties between equally frequent pairs go to the lexicographically smallest pair.
    """
    word_freq = Counter()
    alphabet = set()
    for t in texts:
        for piece in _PIECES.findall(t):
            if piece[0].isspace():
                alphabet.update(piece)
            else:
                word_freq[piece] += 1
    if not word_freq:
        raise BpeError("cannot train BPE on an empty corpus")
    for w in word_freq:
        alphabet.update(w)
    alphabet.add(END_OF_WORD)
    base = sorted(alphabet)
    if target_size <= len(base) + len(RESERVED):
        raise BpeError(f"target_size {target_size} must exceed alphabet ({len(base)}) + {len(RESERVED)} reserved")
    tokens = {name: i for i, name in enumerate(RESERVED)}
    for sym in base:
        tokens.setdefault(sym, len(tokens))

    words = [list(w) + [END_OF_WORD] for w in word_freq]
    freqs = list(word_freq.values())
    counts: Counter = Counter()
    where = defaultdict(set)
    for idx, syms in enumerate(words):
        for pair in zip(syms, syms[1:]):
            counts[pair] += freqs[idx]
            where[pair].add(idx)
    heap = [(-c, p) for p, c in counts.items()]
    heapq.heapify(heap)
    merges = []
    while len(tokens) < target_size and heap:
        negc, pair = heapq.heappop(heap)
        if counts.get(pair, 0) != -negc or negc == 0:
            continue
        merged = pair[0] + pair[1]
        if merged in RESERVED:
            counts[pair] = 0
            continue
        merges.append(pair)
        if merged not in tokens:
            tokens[merged] = len(tokens)
        touched = set()
        for idx in list(where[pair]):
            syms = words[idx]
            f = freqs[idx]
            for p in zip(syms, syms[1:]):
                counts[p] -= f
                touched.add(p)
            out = []
            i = 0
            while i < len(syms):
                if i < len(syms) - 1 and syms[i] == pair[0] and syms[i + 1] == pair[1]:
                    out.append(merged)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            words[idx] = out
            for p in zip(out, out[1:]):
                counts[p] += f
                where[p].add(idx)
                touched.add(p)
        del where[pair]
        counts.pop(pair, None)
        for p in touched:
            c = counts.get(p, 0)
            if c > 0:
                heapq.heappush(heap, (-c, p))
            else:
                counts.pop(p, None)
    return BpeVocab(merges, tokens)


def bpe_encode(vocab: BpeVocab, text: str) -> list[int]:
    """Encode text; a single space between two words is implied by the end-of-word symbol."""
    ids = []
    pieces = _PIECES.findall(text)
    unk = vocab.tokens[RESERVED[UNK]]
    for k, piece in enumerate(pieces):
        if piece[0].isspace():
            between_words = 0 < k < len(pieces) - 1
            if piece == " " and between_words:
                continue
            ids.extend(vocab.tokens.get(ch, unk) for ch in piece)
            continue
        symbols = vocab._encode_word(piece)
        for sym in symbols:
            tid = vocab.tokens.get(sym)
            if tid is not None:
                ids.append(tid)
            else:
                # A symbol containing an unseen character: fall back per character.
                for ch in sym[:-len(END_OF_WORD)] if sym.endswith(END_OF_WORD) else sym:
                    ids.append(vocab.tokens.get(ch, unk))
                if sym.endswith(END_OF_WORD):
                    ids.append(vocab.tokens[END_OF_WORD])
    return ids


def bpe_decode(vocab: BpeVocab, ids) -> str:
    out = []
    word_ended = False
    for i in ids:
        i = int(i)
        if not 0 <= i < vocab.size:
            raise BpeError(f"token id {i} out of range [0, {vocab.size})")
        if i in (PAD, BOS, EOS):
            continue
        tok = "�" if i == UNK else vocab.id_to_token(i)
        if tok.isspace():
            out.append(tok)
            word_ended = False
            continue
        if word_ended:
            out.append(" ")
            word_ended = False
        if tok.endswith(END_OF_WORD):
            tok = tok[: -len(END_OF_WORD)]
            word_ended = True
        out.append(tok)
    return "".join(out)


# ---------------------------------------------------------------- POS tagging

UNIVERSAL_TAGS = ("DET", "NOUN", "ADJ", "VERB", "ADP", "PRON", "NUM", "CONJ", "PRT", "ADV", "X")

_LEXICON = {}


def _register(tag, words):
    for w in words.split():
        _LEXICON.setdefault(w, tag)


_register("DET", "the a an this that these those every each some any no all both either neither "
                 "another such what whatever")
_register("PRON", "i you he she it we they me him her us them my your his its our their mine yours hers "
                  "ours theirs myself yourself himself herself itself ourselves themselves who whom whose "
                  "which someone anyone everyone something anything everything nothing nobody somebody "
                  "everybody one")
_register("PRT", "to not n't 's off up out")
_register("CONJ", "and or but nor yet so because although though whereas while if unless whether")
_register("ADP", "of in on at by for with about against between into through during before after above "
                 "below from down over under across along around behind beyond near without within upon "
                 "among toward towards like than since per via")
_register("VERB", "be is am are was were been being have has had do does did will would shall should can "
                  "could may might must say says said get gets got make makes made go goes went gone know "
                  "knew take took see saw come came think thought look want give gave use find found tell "
                  "told ask work seem feel felt try leave left call keep kept let begin began run ran move "
                  "live believe hold held bring brought happen write wrote sit sat stand stood lose lost pay "
                  "paid meet met need become became put mean meant turn show hear heard help play love open "
                  "walk stop speak spoke read sleep slept eat ate fall fell")
_register("ADV", "very also just now then there here too still never always often again however moreover "
                 "therefore thus only even soon already almost quite rather perhaps maybe ever really well "
                 "once instead away back together today tomorrow yesterday sometimes usually")
_register("ADJ", "good new old great big small long little high different large important young bad same "
                 "able own other many much few last first next best better strong heavy weak short hard easy "
                 "real whole true free full sure clear happy dark light")
_register("NUM", "two three four five six seven eight nine ten eleven twelve twenty thirty forty fifty "
                 "hundred thousand million billion")
_register("NOUN", "thing nothing morning evening king ring wing spring string ceiling bed red feed seed need "
                  "hundred")

_NUMBER = re.compile(r"^[+-]?\d[\d,]*(\.\d+)?%?$|^\d+(st|nd|rd|th)$")
_ADJ_SUFFIXES = ("ous", "ful", "ive", "able", "ible", "less", "ish", "ical", "ic", "al")


def pos_tag(token: str) -> str | None:
    """Universal tag for a token, or None for pure punctuation."""
    if not is_word(token):
        return None
    low = token.lower()
    if _NUMBER.match(low):
        return "NUM"
    tag = _LEXICON.get(low)
    if tag is not None:
        return tag
    if not low.replace("'", "").replace("-", "").isalpha():
        return "X"
    if low.endswith("ly") and len(low) > 4:
        return "ADV"
    if low.endswith("ing") and len(low) >= 5:
        return "VERB"
    if low.endswith("ed") and len(low) >= 4:
        return "VERB"
    if low.endswith(_ADJ_SUFFIXES) and len(low) > 5:
        return "ADJ"
    return "NOUN"


# ---------------------------------------------------------------- statistics

CONNECTIVES = ("and", "but", "so", "because", "however", "moreover", "therefore", "although", "while",
               "since", "thus", "for example")


@dataclass
class CorpusStats:
    label: str
    n_docs: int
    avg_words_per_doc: float
    lexical_diversity: float
    avg_sentences_per_doc: float
    avg_words_per_sentence: float
    ing_participles_per_doc: float
    ed_participles_per_doc: float
    connectives_per_doc: float
    pos_ratios: dict
    top_words: list

    def to_json(self) -> dict:
        d = dict(self.__dict__)
        d["top_words"] = [list(t) for t in self.top_words]
        return d


def count_connectives(words_lower: list[str]) -> int:
    singles = set(c for c in CONNECTIVES if " " not in c)
    n = sum(1 for w in words_lower if w in singles)
    n += sum(1 for a, b in zip(words_lower, words_lower[1:]) if a == "for" and b == "example")
    return n


def _doc_counts(text: str):
    tokens = whitespace_tokenize(text)
    words = [t for t in tokens if is_word(t)]
    lower = [w.lower() for w in words]
    tags = Counter()
    ing = ed = 0
    for w in words:
        tag = pos_tag(w)
        tags[tag] += 1
        if tag == "VERB" and w.isalpha():
            low = w.lower()
            if low.endswith("ing"):
                ing += 1
            elif low.endswith("ed"):
                ed += 1
    return {
        "words": len(words),
        "distinct": len(set(lower)),
        "sentences": len(split_sentences(text)),
        "ing": ing,
        "ed": ed,
        "connectives": count_connectives(lower),
        "tags": tags,
        "lower": lower,
    }


def corpus_stats(docs: list[Document], k: int = 20) -> dict[str, CorpusStats]:
    """Per-label statistics. Lexical diversity is the mean per-document distinct/total ratio."""
    if not docs:
        raise ValueError("corpus_stats needs at least one document")
    by_label = defaultdict(list)
    for d in docs:
        by_label[d.label].append(d)
    result = {}
    for label in sorted(by_label):
        counts = [_doc_counts(d.text) for d in by_label[label]]
        n = len(counts)
        words = sum(c["words"] for c in counts)
        sents = sum(c["sentences"] for c in counts)
        tag_total = Counter()
        freq = Counter()
        for c in counts:
            tag_total.update(c["tags"])
            freq.update(c["lower"])
        tagged = sum(tag_total.values())
        ratios = {t: (tag_total[t] / tagged if tagged else 0.0) for t in UNIVERSAL_TAGS}
        diversities = [c["distinct"] / c["words"] for c in counts if c["words"]]
        top = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
        result[label] = CorpusStats(
            label=label,
            n_docs=n,
            avg_words_per_doc=words / n,
            lexical_diversity=sum(diversities) / len(diversities) if diversities else 0.0,
            avg_sentences_per_doc=sents / n,
            avg_words_per_sentence=words / sents if sents else 0.0,
            ing_participles_per_doc=sum(c["ing"] for c in counts) / n,
            ed_participles_per_doc=sum(c["ed"] for c in counts) / n,
            connectives_per_doc=sum(c["connectives"] for c in counts) / n,
            pos_ratios=ratios,
            top_words=top,
        )
    return result


_POS_NAMES = {"DET": "Det", "NOUN": "Noun", "ADJ": "Adj", "VERB": "Verb", "ADP": "Adp", "PRON": "Pron",
              "NUM": "Num", "CONJ": "Conj", "PRT": "Prt", "ADV": "Adv", "X": "X"}


def _table(header, rows) -> str:
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    fmt = lambda r: "  ".join(str(c).ljust(w) if i == 0 else str(c).rjust(w)  # noqa: E731
                              for i, (c, w) in enumerate(zip(r, widths)))
    rule = "-" * len(fmt(header))
    return "\n".join([rule, fmt(header), rule] + [fmt(r) for r in rows] + [rule])


def render_stats(stats: dict[str, CorpusStats]) -> str:
    """Text report in three blocks: length/diversity, sentence patterns, POS ratios."""
    labels = [lab for lab in ("MGC", "HPC") if lab in stats] + [lab for lab in stats if lab not in ("MGC", "HPC")]
    t1 = _table(["Data", "Avg. Words/Doc", "Avg. Words/Sent.", "Lexicon Diversity"],
                [[lab, f"{stats[lab].avg_words_per_doc:.2f}", f"{stats[lab].avg_words_per_sentence:.2f}",
                  f"{stats[lab].lexical_diversity:.3f}"] for lab in labels])
    t2 = _table(["Data", "Avg. Sent.", "ing PTCP", "ed PTCP", "CC"],
                [[lab, f"{stats[lab].avg_sentences_per_doc:.2f}", f"{stats[lab].ing_participles_per_doc:.2f}",
                  f"{stats[lab].ed_participles_per_doc:.2f}", f"{stats[lab].connectives_per_doc:.2f}"]
                 for lab in labels])
    t3 = _table(["POS"] + [f"{lab} Ratio" for lab in labels],
                [[_POS_NAMES[t]] + [f"{stats[lab].pos_ratios[t]:.4f}" for lab in labels] for t in UNIVERSAL_TAGS])
    return "\n\n".join([t1, t2, t3]) + "\n"
