"""Metrics, seed-stability runs, report tables and a generic remote-detector client."""
from __future__ import annotations

import csv
import io
import json
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .corpus import HPC, LABELS, MGC
from .discourse import post_json

THRESHOLD = 0.5


class EvalError(ValueError):
    pass


class DetectorError(RuntimeError):
    pass


@dataclass(frozen=True)
class PredictionRecord:
    doc_id: str
    true_label: str
    score: float

    def __post_init__(self):
        if self.true_label not in LABELS:
            raise EvalError(f"{self.doc_id}: unknown label {self.true_label!r}")
        if not math.isfinite(self.score):
            raise EvalError(f"{self.doc_id}: score is not finite")

    @property
    def predicted(self) -> str:
        return MGC if self.score >= THRESHOLD else HPC

    def to_json(self) -> dict:
        return {"doc_id": self.doc_id, "true": self.true_label, "score": self.score}

    @classmethod
    def from_json(cls, obj) -> "PredictionRecord":
        return cls(str(obj["doc_id"]), str(obj["true"]), float(obj["score"]))


def write_predictions(path, records: Iterable[PredictionRecord]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")


def read_predictions(path) -> list[PredictionRecord]:
    out = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").split("\n"), 1):
        if not line.strip():
            continue
        try:
            out.append(PredictionRecord.from_json(json.loads(line)))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise EvalError(f"{path}:{n}: bad prediction record ({exc})") from exc
    return out


def accuracy(records: list[PredictionRecord]) -> float:
    if not records:
        raise EvalError("accuracy of an empty record set")
    return sum(r.predicted == r.true_label for r in records) / len(records)


def _split_scores(records):
    pos = np.array([r.score for r in records if r.true_label == MGC], dtype=np.float64)
    neg = np.array([r.score for r in records if r.true_label == HPC], dtype=np.float64)
    if not len(pos) or not len(neg):
        raise EvalError("AUC needs both classes present")
    return pos, neg


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auc_roc(records: list[PredictionRecord]) -> float:
    """Mann-Whitney AUC: P(MGC score > HPC score) + 0.5 P(equal)."""
    pos, neg = _split_scores(records)
    ranks = _midranks(np.concatenate([pos, neg]))
    u = ranks[: len(pos)].sum() - len(pos) * (len(pos) + 1) / 2.0
    return float(u / (len(pos) * len(neg)))


def roc_points(records: list[PredictionRecord]) -> list[tuple[float, float]]:
    """(fpr, tpr) at every distinct threshold, from (0,0) to (1,1); predicted MGC iff score >= t."""
    pos, neg = _split_scores(records)
    points = [(0.0, 0.0)]
    for t in np.unique(np.concatenate([pos, neg]))[::-1]:
        points.append((float(np.mean(neg >= t)), float(np.mean(pos >= t))))
    return points


def trapezoid_auc(points) -> float:
    area = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def write_roc(path, records):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fpr", "tpr"])
        for fpr, tpr in roc_points(records):
            w.writerow([repr(fpr), repr(tpr)])


# ------------------------------------------------------------------ multi-seed

@dataclass
class SeedRunSummary:
    seeds: list
    accuracies: list
    mean: float
    std: float

    def to_json(self):
        return {"seeds": list(self.seeds), "accuracies": list(self.accuracies), "mean": self.mean, "std": self.std}


class SeedRunError(RuntimeError):
    def __init__(self, seed, cause):
        super().__init__(f"run with seed {seed} failed: {cause}")
        self.seed = seed


def multi_seed(train_and_eval: Callable[[int], float], seeds: list[int], parallel: int = 1) -> SeedRunSummary:
    """Run ``train_and_eval(seed)`` per seed and summarize with population std."""
    seeds = list(seeds)
    if len(seeds) < 2:
        raise EvalError("multi_seed needs at least 2 seeds")

    def run(seed):
        try:
            return float(train_and_eval(seed))
        except Exception as exc:
            raise SeedRunError(seed, exc) from exc

    if parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            accs = list(pool.map(run, seeds))
    else:
        accs = [run(s) for s in seeds]
    arr = np.array(accs)
    return SeedRunSummary(seeds, accs, float(arr.mean()), float(arr.std()))


# ------------------------------------------------------------------ reports

def _fmt(v):
    return "-" if v is None else f"{v:.4f}"


def report_table(results: dict[tuple[str, str], float]) -> tuple[str, str]:
    """Model x dataset accuracy grid as (aligned text, CSV). Missing cells become "-"."""
    models = sorted({m for m, _ in results})
    datasets = sorted({d for _, d in results})
    header = ["model"] + datasets
    rows = [[m] + [_fmt(results.get((m, d))) for d in datasets] for m in models]
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in [header] + rows]
    text = "\n".join(lines) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "dataset", "accuracy"])
    for m in models:
        for d in datasets:
            v = results.get((m, d))
            w.writerow([m, d, "-" if v is None else repr(float(v))])
    return text, buf.getvalue()


def parse_report_csv(text: str) -> dict[tuple[str, str], float]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != ["model", "dataset", "accuracy"]:
        raise EvalError("report CSV header must be model,dataset,accuracy")
    return {(r["model"], r["dataset"]): float(r["accuracy"]) for r in reader if r["accuracy"] != "-"}


def bleu_divergence_report(doc_ids, labels, features) -> str:
    """Per-document BLEU-1 grouped by class, in input order, as CSV."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "index", "doc_id", "bleu1"])
    for label in (HPC, MGC):
        idx = 0
        for doc_id, lab, f in zip(doc_ids, labels, features):
            if lab == label:
                w.writerow([label, idx, doc_id, repr(float(f.bleu[0]))])
                idx += 1
    return buf.getvalue()


def series_means(report_csv: str) -> dict[str, float]:
    acc = {}
    for r in csv.DictReader(io.StringIO(report_csv)):
        acc.setdefault(r["label"], []).append(float(r["bleu1"]))
    return {k: float(np.mean(v)) for k, v in acc.items()}


# ------------------------------------------------------------------ remote detector

def remote_detector(endpoint: str, texts: list[str], max_inflight: int = 4, batch_size: int = 32,
                    timeout: float = 10.0, retries: int = 3, backoff: float = 0.2) -> list[float]:
    """Score texts via ``POST {endpoint}/v1/detect``; returns scores in input order."""
    url = endpoint.rstrip("/") + "/v1/detect"
    chunks = [texts[i:i + batch_size] for i in range(0, len(texts), batch_size)]
    slots = threading.BoundedSemaphore(max(1, max_inflight))

    def score(chunk):
        with slots:
            resp = post_json(url, {"texts": chunk}, timeout, retries=retries, backoff=backoff, error=DetectorError)
        scores = resp.get("scores") if isinstance(resp, dict) else None
        if not isinstance(scores, list) or len(scores) != len(chunk):
            raise DetectorError(f"malformed response from {url}: expected {len(chunk)} scores")
        out = []
        for s in scores:
            if isinstance(s, bool) or not isinstance(s, (int, float)) or not 0.0 <= s <= 1.0:
                raise DetectorError(f"malformed response from {url}: score {s!r} outside [0, 1]")
            out.append(float(s))
        return out

    if not chunks:
        return []
    with ThreadPoolExecutor(max_workers=max(1, max_inflight)) as pool:
        return [s for part in pool.map(score, chunks) for s in part]
