"""Style-mimic detector.

A small encoder-decoder learns to rewrite MGC into its paired HPC. At test
time a document is passed through the mimic; the divergence between input
and output (BLEU-1..4 modified precisions and an embedding cosine) feeds a
logistic regression. Human text should come back nearly unchanged, machine
text should not.
"""
from __future__ import annotations

import json
import math
import time
from collections import Counter
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .corpus import HPC, MGC, Document, PairedRecord
from .neural import autograd as ag
from .neural import checkpoint as ckpt
from .neural.layers import (AttentionConfig, Dropout, Embedding, EncoderLayer, FeedForward, LayerNorm,
                            MultiHeadAttention, ParamStore, sinusoidal_positions)
from .neural.optim import adamw_step, clip_grad_norm
from .textproc import BOS, EOS, PAD, BpeVocab, bpe_decode, bpe_encode, whitespace_tokenize


class NumericError(FloatingPointError):
    pass


@dataclass
class MimicConfig:
    d_model: int = 512
    layers: int = 6
    heads: int = 8
    d_ff: int = 2048
    dropout: float = 0.1
    activation: str = "gelu"
    max_len: int = 1024
    lr: float = 2e-5
    weight_decay: float = 0.01
    epochs: int = 10
    early_stop: int = 3
    batch: int = 1
    seed: int = 0
    clip: float = 1.0

    def __post_init__(self):
        for name in ("d_model", "layers", "heads", "d_ff", "max_len", "epochs", "early_stop", "batch"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.early_stop > self.epochs:
            raise ValueError("early_stop cannot exceed epochs")
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")

    @classmethod
    def desk(cls, **overrides) -> "MimicConfig":
        base = dict(d_model=64, layers=2, heads=4, d_ff=128, dropout=0.1, max_len=48, lr=1e-3,
                    epochs=60, early_stop=6, batch=16)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, obj: dict) -> "MimicConfig":
        unknown = set(obj) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown MimicConfig keys: {sorted(unknown)}")
        return cls(**obj)


# ------------------------------------------------------------------ model

class Seq2Seq:
    """Post-norm transformer encoder-decoder with tied input/output embeddings."""

    def __init__(self, cfg: MimicConfig, vocab_size: int):
        self.cfg = cfg
        self.vocab_size = vocab_size
        s = self.store = ParamStore(seed=cfg.seed, dtype=np.float32)
        d = cfg.d_model
        att = AttentionConfig(d, cfg.heads, cfg.d_ff, cfg.dropout)
        self.emb = Embedding(s, "emb", vocab_size, d)
        self.enc = [EncoderLayer(s, f"enc.layer{i}", att, cfg.activation) for i in range(cfg.layers)]
        self.dec = []
        for i in range(cfg.layers):
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
        self.out_bias = s.zeros("out.bias", (vocab_size,))
        self.drop = Dropout(cfg.dropout, s.derive_seed("emb_drop"))
        self._pos = sinusoidal_positions(cfg.max_len + 2, d)

    def _embed(self, ids, training):
        scale = math.sqrt(self.cfg.d_model)
        x = ag.add(ag.mul(self.emb(ids), scale), self._pos[: ids.shape[1]])
        return self.drop(x, training)

    def encode(self, src: np.ndarray, src_mask: np.ndarray, training=False) -> ag.Tensor:
        x = self._embed(src, training)
        for layer in self.enc:
            x = layer(x, src_mask, training)
        return x

    def decode(self, memory: ag.Tensor, src_mask, tgt_in: np.ndarray, tgt_mask, training=False) -> ag.Tensor:
        length = tgt_in.shape[1]
        causal = np.tril(np.ones((length, length), dtype=bool))[None] & tgt_mask[:, None, :]
        y = self._embed(tgt_in, training)
        for blk in self.dec:
            drop = blk["drop"]
            y = blk["norm1"](ag.add(y, drop(blk["self"](y, y, y, causal, training), training)))
            y = blk["norm2"](ag.add(y, drop(blk["cross"](y, memory, memory, src_mask, training), training)))
            y = blk["norm3"](ag.add(y, drop(blk["ff"](y, training), training)))
        return ag.add(ag.matmul(y, ag.transpose(self.emb.weight, (1, 0))), self.out_bias)


def _pad(seqs, pad=PAD):
    length = max(1, max(len(s) for s in seqs))
    arr = np.full((len(seqs), length), pad, dtype=np.int64)
    mask = np.zeros((len(seqs), length), dtype=bool)
    for i, s in enumerate(seqs):
        arr[i, : len(s)] = s
        mask[i, : len(s)] = True
    return arr, mask


# ------------------------------------------------------------------ mimic

class Mimic:
    """Trained MGC->HPC rewriter plus its tokenizer."""

    def __init__(self, model: Seq2Seq, bpe: BpeVocab):
        self.model = model
        self.bpe = bpe
        self.cfg = model.cfg

    def _src_ids(self, text: str) -> list[int]:
        ids = bpe_encode(self.bpe, text)[: self.cfg.max_len]
        return ids

    def generate_batch(self, texts: list[str], max_len: int | None = None) -> list[str]:
        """Greedy decoding; stops at EOS or after ``max_len`` tokens."""
        cap = min(max_len or self.cfg.max_len, self.cfg.max_len)
        if not texts:
            return []
        src, smask = _pad([self._src_ids(t) for t in texts])
        out = [[] for _ in texts]
        done = np.zeros(len(texts), dtype=bool)
        with ag.no_grad():
            memory = self.model.encode(src, smask)
            tgt = np.full((len(texts), 1), BOS, dtype=np.int64)
            for _ in range(cap):
                tmask = np.ones(tgt.shape, dtype=bool)
                logits = self.model.decode(memory, smask, tgt, tmask).data[:, -1, :]
                logits[:, PAD] = -np.inf
                logits[:, BOS] = -np.inf
                nxt = np.argmax(logits, axis=1)
                for i, tok in enumerate(nxt):
                    if done[i]:
                        continue
                    if tok == EOS:
                        done[i] = True
                    else:
                        out[i].append(int(tok))
                if done.all():
                    break
                tgt = np.concatenate([tgt, nxt[:, None]], axis=1)
        return [bpe_decode(self.bpe, ids) for ids in out]

    def generate(self, text: str) -> str:
        return self.generate_batch([text])[0]

    def embed(self, texts: list[str]) -> np.ndarray:
        """Mean of the encoder's final hidden states over tokens."""
        src, smask = _pad([self._src_ids(t) for t in texts])
        with ag.no_grad():
            h = self.model.encode(src, smask).data.astype(np.float64)
        w = smask[:, :, None].astype(np.float64)
        counts = np.maximum(w.sum(axis=1), 1.0)
        vec = (h * w).sum(axis=1) / counts
        vec[~smask.any(axis=1)] = 0.0
        return vec

    def save(self, path):
        path = Path(path)
        ckpt.save(path, self.model.store.to_dict())
        side = {"kind": "mimic", "config": asdict(self.cfg), "bpe": self.bpe.to_json(),
                "bpe_hash": self.bpe.fingerprint()}
        Path(str(path) + ".json").write_text(json.dumps(side, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Mimic":
        side = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
        bpe = BpeVocab.from_json(side["bpe"])
        model = Seq2Seq(MimicConfig.from_dict(side["config"]), bpe.size)
        model.store.load_arrays(ckpt.load(path))
        return cls(model, bpe)


class IdentityMimic:
    """Returns its input unchanged: the no-signal control."""

    def __init__(self, bpe: BpeVocab | None = None):
        self.bpe = bpe

    def generate(self, text: str) -> str:
        return text

    def generate_batch(self, texts, max_len=None):
        return list(texts)


@dataclass
class MimicTrainResult:
    mimic: Mimic
    log: list
    best_epoch: int


def _pairs_to_ids(pairs: list[PairedRecord], bpe: BpeVocab, cfg: MimicConfig):
    out = []
    for p in pairs:
        src = bpe_encode(bpe, p.mgc_text)[: cfg.max_len]
        tgt = bpe_encode(bpe, p.hpc_text)[: cfg.max_len - 1]
        if not src or not tgt:
            raise ValueError(f"pair {p.pair_id!r} is empty after tokenization/truncation")
        out.append((src, tgt))
    return out


def _batch_loss(model: Seq2Seq, batch, training):
    src, smask = _pad([b[0] for b in batch])
    tgt_in, tmask = _pad([[BOS] + b[1] for b in batch])
    target = np.full(tgt_in.shape, -1, dtype=np.int64)
    for i, (_, t) in enumerate(batch):
        target[i, : len(t) + 1] = t + [EOS]
    memory = model.encode(src, smask, training)
    logits = model.decode(memory, smask, tgt_in, tmask, training)
    return ag.cross_entropy(logits, target.reshape(-1))


def train_mimic(pairs: list[PairedRecord], bpe: BpeVocab, cfg: MimicConfig,
                valid_pairs: list[PairedRecord] | None = None, timing: bool = False) -> MimicTrainResult:
    """Teacher-forced MGC->HPC training with AdamW and early stopping on validation loss."""
    if not pairs:
        raise ValueError("train_mimic needs at least one pair")
    tr = _pairs_to_ids(pairs, bpe, cfg)
    va = _pairs_to_ids(valid_pairs, bpe, cfg) if valid_pairs else tr
    model = Seq2Seq(cfg, bpe.size)
    rng = np.random.default_rng(cfg.seed)
    history, best, best_params, best_epoch = [], math.inf, None, 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(tr))
        total, count = 0.0, 0
        for bi, start in enumerate(range(0, len(order), cfg.batch)):
            batch = [tr[i] for i in order[start:start + cfg.batch]]
            model.store.zero_grad()
            loss = _batch_loss(model, batch, training=True)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {bi}")
            loss.backward()
            if cfg.clip:
                clip_grad_norm(model.store, cfg.clip)
            adamw_step(model.store, cfg.lr, weight_decay=cfg.weight_decay)
            total += value * len(batch)
            count += len(batch)
        with ag.no_grad():
            vl = [float(_batch_loss(model, va[i:i + 32], False).data) * len(va[i:i + 32])
                  for i in range(0, len(va), 32)]
        val_loss = sum(vl) / len(va)
        if not math.isfinite(val_loss):
            raise NumericError(f"non-finite validation loss at epoch {epoch}")
        history.append({"epoch": epoch, "train_loss": total / count, "val_loss": val_loss,
                        "seconds": round(time.perf_counter() - t0, 3) if timing else None})
        if val_loss < best:
            best, best_epoch = val_loss, epoch
            best_params = {k: v.copy() for k, v in model.store.to_dict().items()}
        if epoch - best_epoch >= cfg.early_stop:
            break
    model.store.load_arrays(best_params)
    return MimicTrainResult(Mimic(model, bpe), history, best_epoch)


# ------------------------------------------------------------------ difference features

def ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_components(candidate: list[str], reference: list[str], max_n: int = 4) -> list[float]:
    """Modified (reference-clipped) n-gram precisions p1..p4, no brevity penalty, no smoothing."""
    out = []
    for n in range(1, max_n + 1):
        cand = ngrams(candidate, n)
        total = sum(cand.values())
        if total == 0:
            out.append(0.0)
            continue
        ref = ngrams(reference, n)
        matched = sum(min(c, ref[g]) for g, c in cand.items())
        out.append(matched / total)
    return out


def tf_vector(text: str, bpe: BpeVocab) -> np.ndarray:
    v = np.zeros(bpe.size)
    for i in bpe_encode(bpe, text):
        v[i] += 1.0
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


class TfEmbedder:
    """Model-free fallback: L2-normalized term frequencies over the BPE vocabulary."""

    def __init__(self, bpe: BpeVocab):
        self.bpe = bpe

    def __call__(self, texts):
        return np.stack([tf_vector(t, self.bpe) for t in texts])


class MimicEmbedder:
    def __init__(self, mimic: Mimic):
        self.mimic = mimic

    def __call__(self, texts):
        return self.mimic.embed(list(texts))


def cosine_similarity(a: str, b: str, embedder) -> float:
    if a == b:
        return 1.0 if np.linalg.norm(embedder([a])[0]) > 0 else 0.0
    va, vb = embedder([a, b])
    return cosine(va, vb)


@dataclass
class DifferenceFeatures:
    bleu: list
    cosine: float

    def vector(self) -> np.ndarray:
        return np.array(list(self.bleu) + [self.cosine], dtype=np.float64)


def default_embedder(mimic):
    if isinstance(mimic, Mimic):
        return MimicEmbedder(mimic)
    if getattr(mimic, "bpe", None) is not None:
        return TfEmbedder(mimic.bpe)
    raise ValueError("no embedder available: pass one explicitly")


def extract_features(text: str, mimic, embedder=None) -> DifferenceFeatures:
    return extract_features_batch([text], mimic, embedder)[0]


def extract_features_batch(texts: list[str], mimic, embedder=None, batch: int = 32) -> list[DifferenceFeatures]:
    embedder = embedder or default_embedder(mimic)
    outputs = []
    for i in range(0, len(texts), batch):
        outputs.extend(mimic.generate_batch(texts[i:i + batch]))
    feats = []
    for text, out in zip(texts, outputs):
        bleu = bleu_components(whitespace_tokenize(text), whitespace_tokenize(out))
        feats.append(DifferenceFeatures(bleu, cosine_similarity(text, out, embedder)))
    return feats


def write_features(path, docs: list[Document], feats: list[DifferenceFeatures]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for d, f in zip(docs, feats):
            fh.write(json.dumps({"doc_id": d.doc_id, "label": d.label, "bleu": list(f.bleu), "cosine": f.cosine},
                                sort_keys=True) + "\n")


def read_features(path) -> tuple[list[str], list[str], list[DifferenceFeatures]]:
    ids, labels, feats = [], [], []
    for line in Path(path).read_text(encoding="utf-8").split("\n"):
        if not line.strip():
            continue
        obj = json.loads(line)
        if len(obj["bleu"]) != 4:
            raise ValueError(f"{obj['doc_id']}: expected 4 BLEU components")
        ids.append(obj["doc_id"])
        labels.append(obj["label"])
        feats.append(DifferenceFeatures([float(x) for x in obj["bleu"]], float(obj["cosine"])))
    return ids, labels, feats


# ------------------------------------------------------------------ logistic regression

class UntrainedModel(RuntimeError):
    pass


@dataclass
class LrModel:
    weights: np.ndarray = field(default_factory=lambda: np.zeros(5))
    bias: float = 0.0
    scaler_mean: np.ndarray = field(default_factory=lambda: np.zeros(5))
    scaler_std: np.ndarray = field(default_factory=lambda: np.ones(5))
    trained: bool = False
    loss_history: list = field(default_factory=list, repr=False)

    def to_json(self) -> dict:
        return {"weights": list(map(float, self.weights)), "bias": float(self.bias),
                "scaler_mean": list(map(float, self.scaler_mean)), "scaler_std": list(map(float, self.scaler_std))}

    @classmethod
    def from_json(cls, obj) -> "LrModel":
        return cls(np.array(obj["weights"], dtype=float), float(obj["bias"]),
                   np.array(obj["scaler_mean"], dtype=float), np.array(obj["scaler_std"], dtype=float), True)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "LrModel":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _as_matrix(features) -> np.ndarray:
    rows = [f.vector() if isinstance(f, DifferenceFeatures) else np.asarray(f, dtype=float) for f in features]
    x = np.atleast_2d(np.array(rows, dtype=np.float64))
    return x


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _lr_loss(w, b, x, y, lam):
    z = x @ w + b
    # log(1 + e^z) - y z, computed stably
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * lam * np.dot(w, w))


def train_lr(features, labels, lam: float = 1e-4, lr: float = 0.1, tol: float = 1e-8,
             max_iter: int = 10_000) -> LrModel:
    """Batch gradient descent on L2-regularized logistic loss over standardized features."""
    x = _as_matrix(features)
    y = np.array([1.0 if (lab == MGC or lab == 1) else 0.0 for lab in labels])
    if len(y) != len(x):
        raise ValueError("features and labels differ in length")
    if y.min() == y.max():
        raise ValueError("train_lr needs at least one example of each class")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std == 0] = 1.0
    xs = (x - mean) / std
    w = np.zeros(x.shape[1])
    b = 0.0
    prev = _lr_loss(w, b, xs, y, lam)
    history = [prev]
    for _ in range(max_iter):
        p = _sigmoid(xs @ w + b)
        gw = xs.T @ (p - y) / len(y) + lam * w
        gb = float(np.mean(p - y))
        w = w - lr * gw
        b = b - lr * gb
        cur = _lr_loss(w, b, xs, y, lam)
        history.append(cur)
        if abs(prev - cur) < tol:
            break
        prev = cur
    return LrModel(w, b, mean, std, True, history)


def predict_proba(features, model: LrModel) -> np.ndarray:
    if not model.trained:
        raise UntrainedModel("logistic regression model is not trained")
    x = _as_matrix(features)
    return _sigmoid(((x - model.scaler_mean) / model.scaler_std) @ model.weights + model.bias)


def classify(features, model: LrModel) -> tuple[str, float]:
    """Label MGC iff P(MGC) >= 0.5."""
    p = float(predict_proba([features], model)[0])
    return (MGC if p >= 0.5 else HPC), p


def clone(cfg: MimicConfig, **kw) -> MimicConfig:
    return replace(cfg, **kw)
