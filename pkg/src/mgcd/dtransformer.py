"""Discourse-aware hierarchical document classifier.

Each sentence is encoded independently by a transformer encoder and
summarized by the hidden state at its prepended [CLS] token. A decoder
stream starts from the embedded discourse codes; every decoder block
self-attends over the stream, cross-attends with queries projected from the
sentence [CLS] vectors and keys/values from the stream, then applies a
feed-forward map. The stream is mean-pooled and classified HPC vs MGC.
"""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import time
from collections import Counter
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import discourse
from .corpus import HPC, MGC, Document
from .neural import autograd as ag
from .neural import checkpoint as ckpt
from .neural.layers import (AttentionConfig, Dropout, Embedding, EncoderLayer, FeedForward, LayerNorm, Linear,
                            MultiHeadAttention, ParamStore, sinusoidal_positions)
from .neural.optim import adam_step
from .textproc import sentences as split_text, whitespace_tokenize

log = logging.getLogger(__name__)

LABEL_IDS = {HPC: 0, MGC: 1}
ID_LABELS = {0: HPC, 1: MGC}


class NumericError(FloatingPointError):
    """Non-finite loss during training."""


class VocabMismatch(ValueError):
    pass


@dataclass
class DTConfig:
    d_model: int = 512
    d_ff: int = 2048
    enc_layers: int = 6
    dec_layers: int = 6
    heads: int = 8
    dropout: float = 0.1
    activation: str = "sigmoid"
    max_sentence_len: int = 128
    max_paragraph_len: int = 128
    lr: float = 2e-6
    epochs: int = 20
    early_stop: int = 5
    batch: int = 16
    token_vocab: int = 0
    code_vocab: int = 0
    seed: int = 0
    positional: bool = True

    def __post_init__(self):
        for name in ("d_model", "d_ff", "enc_layers", "dec_layers", "heads", "max_sentence_len",
                     "max_paragraph_len", "epochs", "early_stop", "batch"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.early_stop > self.epochs:
            raise ValueError("early_stop cannot exceed epochs")
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")

    @classmethod
    def desk(cls, **overrides) -> "DTConfig":
        """Laptop-sized preset (d_model 64, 2+2 layers, 4 heads)."""
        base = dict(d_model=64, d_ff=128, enc_layers=2, dec_layers=2, heads=4, dropout=0.1,
                    max_sentence_len=32, lr=1e-3, epochs=8, early_stop=3, batch=16)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, obj: dict) -> "DTConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown DTConfig keys: {sorted(unknown)}")
        return cls(**obj)


# ------------------------------------------------------------------ token vocabulary

class WordVocab:
    """Lower-cased whitespace-token vocabulary with PAD/UNK/CLS."""

    PAD, UNK, CLS = 0, 1, 2
    SPECIALS = ("<pad>", "<unk>", "[CLS]")

    def __init__(self, words: list[str]):
        self.words = list(self.SPECIALS) + [w for w in words if w not in self.SPECIALS]
        self.index = {w: i for i, w in enumerate(self.words)}

    def __len__(self):
        return len(self.words)

    @classmethod
    def build(cls, texts, min_count: int = 1, max_size: int | None = None) -> "WordVocab":
        freq = Counter()
        for t in texts:
            freq.update(tok.lower() for tok in whitespace_tokenize(t))
        ranked = sorted((w for w, c in freq.items() if c >= min_count), key=lambda w: (-freq[w], w))
        if max_size is not None:
            ranked = ranked[: max(0, max_size - len(cls.SPECIALS))]
        return cls(ranked)

    def encode(self, sentence: str, max_len: int) -> list[int]:
        ids = [self.index.get(t.lower(), self.UNK) for t in whitespace_tokenize(sentence)]
        return [self.CLS] + ids[: max_len - 1]

    def fingerprint(self) -> str:
        return hashlib.sha256("\n".join(self.words).encode("utf-8")).hexdigest()[:16]


# ------------------------------------------------------------------ prepared documents

@dataclass
class PreparedDoc:
    doc_id: str
    label: int
    token_ids: list  # one list of ids per sentence, [CLS] first
    codes: tuple
    truncated: bool = False

    @property
    def n(self) -> int:
        return len(self.token_ids)


@dataclass
class DocumentEncoding:
    cls_matrix: np.ndarray
    code_ids: discourse.CodeSequence
    n: int


def prepare(doc: Document, vocab: WordVocab, tagger, cfg: DTConfig) -> PreparedDoc:
    sents = split_text(doc.text)
    if not sents:
        raise ValueError(f"document {doc.doc_id!r} is empty after tokenization")
    truncated = len(sents) > cfg.max_paragraph_len
    if truncated:
        log.info("document %s: %d sentences truncated to %d", doc.doc_id, len(sents), cfg.max_paragraph_len)
        sents = sents[: cfg.max_paragraph_len]
    seq = discourse.tag_document(sents, tagger, doc.doc_id)
    if len(seq.codes) != len(sents):
        raise ValueError(f"tagger returned {len(seq.codes)} codes for {len(sents)} sentences in {doc.doc_id!r}")
    token_ids = [vocab.encode(s, cfg.max_sentence_len) for s in sents]
    label = LABEL_IDS.get(doc.label, -1)
    return PreparedDoc(doc.doc_id, label, token_ids, tuple(seq.codes), truncated)


# ------------------------------------------------------------------ model

class DTransformer:
    def __init__(self, cfg: DTConfig, hierarchical_only: bool = False):
        if cfg.token_vocab <= 0 or (cfg.code_vocab <= 0 and not hierarchical_only):
            raise ValueError("config needs token_vocab and code_vocab sizes")
        self.cfg = cfg
        self.hierarchical_only = hierarchical_only
        self.store = ParamStore(seed=cfg.seed, dtype=np.float32)
        d = cfg.d_model
        att = AttentionConfig(d, cfg.heads, cfg.d_ff, cfg.dropout)
        s = self.store
        self.tok_emb = Embedding(s, "enc.tok_emb", cfg.token_vocab, d)
        self.enc = [EncoderLayer(s, f"enc.layer{i}", att, cfg.activation) for i in range(cfg.enc_layers)]
        self.emb_drop = Dropout(cfg.dropout, s.derive_seed("enc.emb_drop"))
        self.dec = []
        if not hierarchical_only:
            self.code_emb = Embedding(s, "code_emb", cfg.code_vocab, d)
            self.code_drop = Dropout(cfg.dropout, s.derive_seed("code_drop"))
            for i in range(cfg.dec_layers):
                name = f"dec.layer{i}"
                self.dec.append({
                    "self": MultiHeadAttention(s, f"{name}.self_attn", d, cfg.heads, cfg.dropout),
                    "norm1": LayerNorm(s, f"{name}.norm1", d),
                    "cross": MultiHeadAttention(s, f"{name}.cross_attn", d, cfg.heads, cfg.dropout),
                    "norm2": LayerNorm(s, f"{name}.norm2", d),
                    "ff": FeedForward(s, f"{name}.ff", d, cfg.d_ff, cfg.activation, cfg.dropout),
                    "norm3": LayerNorm(s, f"{name}.norm3", d),
                    "drop": Dropout(cfg.dropout, s.derive_seed(f"{name}.residual")),
                })
        # Small head so the untrained classifier starts near uniform.
        self.head = Linear(s, "head", d, 2, gain=0.1)
        self._pos = sinusoidal_positions(max(cfg.max_sentence_len, cfg.max_paragraph_len) + 1, d)

    # -- sentence encoder
    def encode_batch(self, docs: list[PreparedDoc], training=False):
        """Returns the (B, n_max, d) CLS tensor and the (B, n_max) sentence mask."""
        sents = [ids for d in docs for ids in d.token_ids]
        n_max = max(d.n for d in docs)
        length = max(len(x) for x in sents)
        ids = np.zeros((len(sents), length), dtype=np.int64)
        tmask = np.zeros((len(sents), length), dtype=bool)
        for i, x in enumerate(sents):
            ids[i, : len(x)] = x
            tmask[i, : len(x)] = True
        scale = math.sqrt(self.cfg.d_model)
        x = ag.add(ag.mul(self.tok_emb(ids), scale), self._pos[:length])
        x = self.emb_drop(x, training)
        for layer in self.enc:
            x = layer(x, tmask, training)
        cls = ag.reshape(ag.take_rows(ag.transpose(x, (1, 0, 2)), [0]), (len(sents), self.cfg.d_model))
        slots = np.array([b * n_max + i for b, d in enumerate(docs) for i in range(d.n)])
        cls = ag.reshape(ag.scatter_rows(cls, slots, len(docs) * n_max), (len(docs), n_max, self.cfg.d_model))
        dmask = np.zeros((len(docs), n_max), dtype=bool)
        for b, d in enumerate(docs):
            dmask[b, : d.n] = True
        return cls, dmask

    # -- discourse decoder + head
    def decode_batch(self, cls: ag.Tensor, codes: np.ndarray, dmask: np.ndarray, training=False) -> ag.Tensor:
        b, n, d = cls.shape
        if codes.shape != (b, n):
            raise ValueError(f"code ids {codes.shape} do not match CLS matrix {cls.shape[:2]}")
        if self.hierarchical_only:
            return self.head(ag.masked_mean(cls, dmask))
        s = ag.mul(self.code_emb(codes), math.sqrt(d))
        if self.cfg.positional:
            s = ag.add(s, self._pos[:n])
        s = self.code_drop(s, training)
        for blk in self.dec:
            drop = blk["drop"]
            s = blk["norm1"](ag.add(s, drop(blk["self"](s, s, s, dmask, training), training)))
            y = blk["norm2"](ag.add(s, drop(blk["cross"](cls, s, s, dmask, training), training)))
            s = blk["norm3"](ag.add(y, drop(blk["ff"](y, training), training)))
        return self.head(ag.masked_mean(s, dmask))

    def logits(self, docs: list[PreparedDoc], training=False) -> ag.Tensor:
        cls, dmask = self.encode_batch(docs, training)
        codes = np.full(dmask.shape, discourse.UNK_ID, dtype=np.int64)
        for i, d in enumerate(docs):
            codes[i, : d.n] = d.codes
        return self.decode_batch(cls, codes, dmask, training)

    def predict_proba(self, docs: list[PreparedDoc], batch: int = 32) -> np.ndarray:
        out = []
        with ag.no_grad():
            for i in range(0, len(docs), batch):
                z = self.logits(docs[i:i + batch]).data.astype(np.float64)
                z = z - z.max(axis=1, keepdims=True)
                p = np.exp(z)
                out.append(p / p.sum(axis=1, keepdims=True))
        return np.concatenate(out) if out else np.zeros((0, 2))


@dataclass
class Prediction:
    doc_id: str
    probs: tuple
    label: str

    @property
    def score(self) -> float:
        return float(self.probs[1])


def encode_sentences(model: DTransformer, doc: PreparedDoc) -> np.ndarray:
    """(n, d_model) CLS matrix of one document."""
    with ag.no_grad():
        cls, _ = model.encode_batch([doc])
    return cls.data[0, : doc.n].copy()


def decode_classify(model: DTransformer, enc: DocumentEncoding) -> Prediction:
    n = enc.cls_matrix.shape[0]
    if len(enc.code_ids.codes) != n or enc.n != n:
        raise ValueError(f"CLS matrix has {n} rows but {len(enc.code_ids.codes)} codes")
    with ag.no_grad():
        cls = ag.Tensor(enc.cls_matrix[None].astype(np.float32))
        z = model.decode_batch(cls, np.asarray([enc.code_ids.codes]), np.ones((1, n), dtype=bool)).data[0]
    z = z.astype(np.float64) - z.max()
    p = np.exp(z) / np.exp(z).sum()
    return Prediction(enc.code_ids.doc_id, (float(p[0]), float(p[1])), ID_LABELS[int(np.argmax(p))])


# ------------------------------------------------------------------ training

@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_acc: float
    val_loss: float
    seconds: float | None = None

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: DTransformer
    log: list
    best_epoch: int
    vocab: WordVocab
    code_vocab: discourse.CodeVocab
    first_batch_loss: float = math.nan
    meta: dict = field(default_factory=dict)


def evaluate_prepared(model: DTransformer, docs: list[PreparedDoc]) -> tuple[float, float]:
    p = model.predict_proba(docs)
    y = np.array([d.label for d in docs])
    acc = float(np.mean(np.argmax(p, axis=1) == y))
    loss = float(-np.mean(np.log(np.clip(p[np.arange(len(y)), y], 1e-12, None))))
    return acc, loss


def train(cfg: DTConfig, train_docs: list[Document], valid_docs: list[Document], tagger,
          vocab: WordVocab | None = None, hierarchical_only: bool = False, timing: bool = False,
          max_seconds: float | None = None) -> TrainResult:
    """Adam on cross-entropy with per-epoch validation and early stopping on validation accuracy.

    Keeps the best-validation parameters (ties broken by lower validation loss).
    ``timing`` records wall seconds per epoch, which makes logs run-dependent.
    """
    if not train_docs or not valid_docs:
        raise ValueError("train and valid splits must be non-empty")
    vocab = vocab or WordVocab.build(d.text for d in train_docs)
    code_vocab = tagger.vocab
    cfg = replace(cfg, token_vocab=len(vocab), code_vocab=len(code_vocab))
    tr = [prepare(d, vocab, tagger, cfg) for d in train_docs]
    va = [prepare(d, vocab, tagger, cfg) for d in valid_docs]
    model = DTransformer(cfg, hierarchical_only=hierarchical_only)
    rng = np.random.default_rng(cfg.seed)
    history, best, best_params, best_epoch = [], None, None, 0
    first_loss = math.nan
    started = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(tr))
        total, count = 0.0, 0
        for bi, start in enumerate(range(0, len(order), cfg.batch)):
            batch = [tr[i] for i in order[start:start + cfg.batch]]
            model.store.zero_grad()
            loss = ag.cross_entropy(model.logits(batch, training=True), [d.label for d in batch])
            value = float(loss.data)
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {bi}")
            if math.isnan(first_loss):
                first_loss = value
            loss.backward()
            adam_step(model.store, cfg.lr)
            total += value * len(batch)
            count += len(batch)
        val_acc, val_loss = evaluate_prepared(model, va)
        if not math.isfinite(val_loss):
            raise NumericError(f"non-finite validation loss at epoch {epoch}")
        entry = EpochLog(epoch, total / count, val_acc, val_loss,
                         round(time.perf_counter() - t0, 3) if timing else None)
        history.append(entry)
        key = (val_acc, -val_loss)
        if best is None or key > best:
            best, best_epoch = key, epoch
            best_params = {k: v.copy() for k, v in model.store.to_dict().items()}
        if epoch - best_epoch >= cfg.early_stop:
            break
        if max_seconds is not None and time.perf_counter() - started > max_seconds:
            log.warning("training stopped by time budget after epoch %d", epoch)
            break
    model.store.load_arrays(best_params)
    return TrainResult(model, history, best_epoch, vocab, code_vocab, first_loss)


def ablation_hierarchical_only(cfg: DTConfig, train_docs, valid_docs, tagger, **kw) -> TrainResult:
    """Same encoder and protocol, no discourse path: mean-pooled CLS -> linear -> softmax."""
    return train(cfg, train_docs, valid_docs, tagger, hierarchical_only=True, **kw)


def predict_docs(result_or_model, docs: list[Document], tagger, vocab: WordVocab | None = None) -> list[Prediction]:
    model = getattr(result_or_model, "model", result_or_model)
    vocab = vocab or result_or_model.vocab
    if not model.hierarchical_only and len(tagger.vocab) != model.cfg.code_vocab:
        raise VocabMismatch(f"tagger vocabulary has {len(tagger.vocab)} codes, model expects {model.cfg.code_vocab}")
    prepared = [prepare(d, vocab, tagger, model.cfg) for d in docs]
    probs = model.predict_proba(prepared)
    return [Prediction(d.doc_id, (float(p[0]), float(p[1])), ID_LABELS[int(np.argmax(p))])
            for d, p in zip(prepared, probs)]


def accuracy_on(result: TrainResult, docs: list[Document], tagger) -> float:
    preds = predict_docs(result, docs, tagger)
    return float(np.mean([p.label == d.label for p, d in zip(preds, docs)]))


# ------------------------------------------------------------------ checkpoints

def save_checkpoint(result: TrainResult, path):
    """Writes ``path`` (parameter container) and ``path.json`` (sidecar)."""
    path = Path(path)
    ckpt.save(path, result.model.store.to_dict())
    sidecar = {
        "kind": "dtransformer",
        "variant": "hierarchical_only" if result.model.hierarchical_only else "full",
        "config": asdict(result.model.cfg),
        "token_vocab_hash": result.vocab.fingerprint(),
        "token_vocab": result.vocab.words[len(WordVocab.SPECIALS):],
        "code_vocab_version": result.code_vocab.version,
        "code_vocab": result.code_vocab.to_json(),
        "best_epoch": result.best_epoch,
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, sort_keys=True, indent=1), encoding="utf-8")


def load_checkpoint(path) -> TrainResult:
    path = Path(path)
    side = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
    cfg = DTConfig.from_dict(side["config"])
    vocab = WordVocab(side["token_vocab"])
    if vocab.fingerprint() != side["token_vocab_hash"]:
        raise VocabMismatch("token vocabulary hash mismatch")
    cv = side["code_vocab"]
    code_vocab = discourse.CodeVocab(cv["version"], cv["labels"])
    model = DTransformer(cfg, hierarchical_only=side["variant"] == "hierarchical_only")
    model.store.load_arrays(ckpt.load(path))
    return TrainResult(model, [], side.get("best_epoch", 0), vocab, code_vocab)


def predict(checkpoint, doc: Document, tagger) -> Prediction:
    result = checkpoint if isinstance(checkpoint, TrainResult) else load_checkpoint(checkpoint)
    if tagger.vocab.version != result.code_vocab.version or tagger.vocab.labels != result.code_vocab.labels:
        raise VocabMismatch(f"tagger vocabulary {tagger.vocab.version} != checkpoint {result.code_vocab.version}")
    return predict_docs(result, [doc], tagger)[0]


def write_log(path, history: list[EpochLog]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in history:
            fh.write(json.dumps(e.to_json(), sort_keys=True) + "\n")


def clone_config(cfg: DTConfig, **kw) -> DTConfig:
    return copy.deepcopy(replace(cfg, **kw))
