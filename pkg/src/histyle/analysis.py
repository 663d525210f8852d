"""Embedding-space diagnostics: exact t-SNE, silhouette scores, the
speaker-vs-style hierarchy report, and nearest-centroid attribute accuracy."""

import csv
import json
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

from . import _kernels
from .labels import ATTRIBUTES, REPORT_ATTRIBUTES, ATTRIBUTE_LEVELS
from .numerics import Rng


@dataclass
class EmbeddingSet:
    vectors: np.ndarray               # (N, d)
    speaker_labels: list
    attribute_labels: list            # list[AttributeLabels]

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        n = self.vectors.shape[0]
        if len(self.speaker_labels) != n or len(self.attribute_labels) != n:
            raise ValueError("vectors and label lists must have equal lengths")

    @classmethod
    def from_items(cls, items, which="style"):
        vecs = np.stack([
            it.style_emb if which == "style" else it.speaker_emb for it in items
        ])
        return cls(vecs, [it.speaker_id for it in items], [it.labels for it in items])


# ---------------------------------------------------------------------------
# silhouette


def silhouette(points, labels) -> float:
    """Mean silhouette over points; singleton-cluster points score 0."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 2:
        raise ValueError("silhouette needs at least 2 points in a 2D array")
    uniq = sorted(set(labels), key=str)
    if len(uniq) < 2:
        raise ValueError("silhouette needs at least 2 distinct labels")
    index = {lab: i for i, lab in enumerate(uniq)}
    int_labels = np.array([index[lab] for lab in labels], dtype=np.int64)
    values = _kernels.silhouette_values(points, int_labels, len(uniq))
    return float(np.mean(values))


# ---------------------------------------------------------------------------
# exact t-SNE


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    n_iter: int = 1000
    early_exaggeration: float = 12.0
    early_iters: int = 250
    learning_rate: float = 200.0
    seed: int = 0

    def validate(self, n: int):
        if self.n_iter < 250:
            raise ValueError(f"n_iter must be >= 250, got {self.n_iter}")
        if self.perplexity <= 0:
            raise ValueError("perplexity must be positive")
        if self.perplexity >= (n - 1) / 3.0:
            raise ValueError(
                f"perplexity {self.perplexity} infeasible for N={n}; "
                f"needs perplexity < (N-1)/3"
            )
        if self.learning_rate <= 0 or self.early_exaggeration < 1:
            raise ValueError("learning_rate must be > 0 and early_exaggeration >= 1")


def tsne(x, cfg: TsneConfig | None = None, return_trace: bool = False):
    """Exact t-SNE to 2D with early exaggeration, momentum, and adaptive gains.

    Returns the (N, 2) coordinates, or (coords, kl_per_iteration) when
    return_trace is set.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    cfg = cfg or TsneConfig()
    if n < 4 or np.unique(x, axis=0).shape[0] < 4:
        raise ValueError("t-SNE needs at least 4 distinct points")
    cfg.validate(n)

    d2 = _kernels.pairwise_sq_dists(x)
    if float(np.max(d2)) == 0.0:
        raise ValueError("t-SNE input points are all identical")
    cond = _kernels.perplexity_probs(d2, cfg.perplexity)
    p = (cond + cond.T) / (2.0 * n)
    np.maximum(p, 1e-12, out=p)

    y = Rng(cfg.seed).stream("tsne_init").standard_normal((n, 2)) * 1e-4
    update = np.zeros_like(y)
    gains = np.ones_like(y)
    kl_trace = []
    p_run = p * cfg.early_exaggeration
    for it in range(cfg.n_iter):
        if it == cfg.early_iters:
            p_run = p
        grad, kl = _kernels.tsne_grad(y, p_run)
        kl_trace.append(float(kl))
        momentum = 0.5 if it < cfg.early_iters else 0.8
        agree = np.sign(grad) == np.sign(update)
        gains = np.where(agree, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        update = momentum * update - cfg.learning_rate * gains * grad
        y = y + update
        y = y - np.mean(y, axis=0, keepdims=True)
    if return_trace:
        return y, np.asarray(kl_trace)
    return y


# ---------------------------------------------------------------------------
# hierarchy report


@dataclass
class HierarchyReport:
    silhouette_speaker: float
    silhouette_by_attribute: dict
    within_speaker_by_attribute: dict
    mean_within_speaker: float
    margin: float
    verdict: str  # "hierarchical" | "not_hierarchical"

    def to_dict(self):
        return {
            "silhouette_speaker": self.silhouette_speaker,
            "silhouette_by_attribute": self.silhouette_by_attribute,
            "within_speaker_by_attribute": self.within_speaker_by_attribute,
            "mean_within_speaker": self.mean_within_speaker,
            "margin": self.margin,
            "verdict": self.verdict,
        }


def hierarchy_report(embedding_set: EmbeddingSet, margin: float = 0.02) -> HierarchyReport:
    """Quantify speaker-first clustering with style sub-structure.

    Verdict is "hierarchical" iff the global silhouette by speaker beats every
    global by-attribute silhouette by at least `margin` and the mean
    within-speaker by-attribute silhouette is positive.
    """
    vectors = embedding_set.vectors
    speakers = embedding_set.speaker_labels
    if len(set(speakers)) < 2:
        raise ValueError("hierarchy report needs at least 2 speakers")

    sil_speaker = silhouette(vectors, speakers)

    sil_attr = {}
    for attr in ATTRIBUTES:
        labs = [la.get(attr) for la in embedding_set.attribute_labels]
        if len(set(labs)) < 2:
            continue
        sil_attr[attr] = silhouette(vectors, labs)

    within = {}
    speaker_ids = sorted(set(speakers))
    for attr in ATTRIBUTES:
        per_speaker = []
        for spk in speaker_ids:
            idx = [i for i, s in enumerate(speakers) if s == spk]
            labs = [embedding_set.attribute_labels[i].get(attr) for i in idx]
            if len(set(labs)) < 2 or len(idx) < 2:
                continue
            per_speaker.append(silhouette(vectors[idx], labs))
        if per_speaker:
            within[attr] = float(np.mean(per_speaker))
    if not within:
        raise ValueError("no attribute varies within any speaker")
    mean_within = float(np.mean(list(within.values())))

    hierarchical = (
        all(sil_speaker > s + margin for s in sil_attr.values())
        and mean_within > 0.0
    )
    return HierarchyReport(
        silhouette_speaker=sil_speaker,
        silhouette_by_attribute=sil_attr,
        within_speaker_by_attribute=within,
        mean_within_speaker=mean_within,
        margin=margin,
        verdict="hierarchical" if hierarchical else "not_hierarchical",
    )


# ---------------------------------------------------------------------------
# nearest-centroid attribute accuracy


def compute_level_centroids(items, attributes=None) -> dict:
    """Per-(attribute, level) mean style embedding over a training split."""
    attributes = attributes or ATTRIBUTES
    sums = {}
    counts = {}
    for it in items:
        for attr in attributes:
            level = it.labels.get(attr)
            key = (attr, level)
            if key not in sums:
                sums[key] = np.zeros_like(it.style_emb)
                counts[key] = 0
            sums[key] += it.style_emb
            counts[key] += 1
    centroids = {}
    for attr in attributes:
        centroids[attr] = {}
        for level in ATTRIBUTE_LEVELS[attr]:
            key = (attr, level)
            if key in sums:
                centroids[attr][level] = sums[key] / counts[key]
    return centroids


def decode_embedding(emb, centroids, attributes=None) -> dict:
    """Nearest level-centroid per attribute."""
    attributes = attributes or list(centroids.keys())
    emb = np.asarray(emb, dtype=np.float64)
    out = {}
    for attr in attributes:
        levels = centroids.get(attr, {})
        expected = ATTRIBUTE_LEVELS.get(attr, ())
        missing = [lv for lv in expected if lv not in levels]
        if missing or not levels:
            raise ValueError(f"missing centroid for attribute '{attr}' levels {missing}")
        best, best_d = None, np.inf
        for level, c in levels.items():
            d = float(np.linalg.norm(emb - c))
            if d < best_d:
                best, best_d = level, d
        out[attr] = best
    return out


@dataclass
class AccuracyReport:
    per_attribute: dict
    mean: float
    n_prompts: int

    def to_dict(self):
        return {"per_attribute": self.per_attribute, "mean": self.mean,
                "n_prompts": self.n_prompts}


def accuracy_from_embeddings(preds, true_labels, centroids,
                             attributes=REPORT_ATTRIBUTES) -> AccuracyReport:
    preds = np.asarray(preds, dtype=np.float64)
    if preds.shape[0] != len(true_labels):
        raise ValueError("predictions and labels must have equal lengths")
    hits = {attr: 0 for attr in attributes}
    for emb, labels in zip(preds, true_labels):
        decoded = decode_embedding(emb, centroids, attributes)
        for attr in attributes:
            if decoded[attr] == labels.get(attr):
                hits[attr] += 1
    n = len(true_labels)
    per_attr = {attr: hits[attr] / n for attr in attributes}
    return AccuracyReport(per_attribute=per_attr,
                          mean=float(np.mean(list(per_attr.values()))),
                          n_prompts=n)


def eval_accuracy(predictor, prompts, true_labels, centroids, seed: int = 0,
                  attributes=REPORT_ATTRIBUTES) -> AccuracyReport:
    """Run `predictor(prompt_texts, seed) -> (N, d)` and decode per attribute."""
    preds = predictor(prompts, seed)
    return accuracy_from_embeddings(preds, true_labels, centroids, attributes)


def write_accuracy_csv(report: AccuracyReport, path, row_name="model"):
    cols = list(report.per_attribute.keys())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model"] + cols + ["mean"])
        writer.writerow([row_name] + [f"{report.per_attribute[c]:.4f}" for c in cols]
                        + [f"{report.mean:.4f}"])


def write_report_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj.to_dict() if hasattr(obj, "to_dict") else obj, fh, indent=2)


# ---------------------------------------------------------------------------
# deterministic SVG scatter


_PALETTE = (
    "#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3",
    "#937860", "#da8bc3", "#8c8c8c", "#ccb974", "#64b5cd",
)

_W, _H, _PAD = 640, 480, 50


def emit_scatter(points, labels, path, title=""):
    """Byte-stable SVG scatter: one circle per point, one color per label."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2) if len(points) else \
        np.zeros((0, 2))
    labels = list(labels)
    if len(labels) != points.shape[0]:
        raise ValueError("points and labels must have equal lengths")
    uniq = sorted(set(labels), key=str)
    color = {lab: _PALETTE[i % len(_PALETTE)] for i, lab in enumerate(uniq)}

    if points.shape[0]:
        lo = points.min(axis=0)
        hi = points.max(axis=0)
        span = np.where(hi - lo == 0.0, 1.0, hi - lo)
    else:
        lo, span = np.zeros(2), np.ones(2)

    def sx(v):
        return _PAD + (v - lo[0]) / span[0] * (_W - 2 * _PAD)

    def sy(v):
        return _H - _PAD - (v - lo[1]) / span[1] * (_H - 2 * _PAD)

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<rect x="{_PAD}" y="{_PAD}" width="{_W - 2 * _PAD}" '
        f'height="{_H - 2 * _PAD}" fill="none" stroke="#222222"/>',
    ]
    if title:
        parts.append(
            f'<text x="{_W // 2}" y="30" text-anchor="middle" '
            f'font-family="sans-serif" font-size="16">{escape(str(title))}</text>'
        )
    for (px, py), lab in zip(points, labels):
        parts.append(
            f'<circle cx="{sx(px):.3f}" cy="{sy(py):.3f}" r="3" '
            f'fill="{color[lab]}" fill-opacity="0.8"/>'
        )
    for i, lab in enumerate(uniq):
        ly = _PAD + 14 + 16 * i
        parts.append(
            f'<rect x="{_W - _PAD + 6}" y="{ly - 9}" width="10" height="10" '
            f'fill="{color[lab]}"/>'
        )
        parts.append(
            f'<text x="{_W - _PAD + 20}" y="{ly}" font-family="sans-serif" '
            f'font-size="11">{escape(str(lab))}</text>'
        )
    parts.append("</svg>")
    data = "\n".join(parts) + "\n"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(data)
    return path
