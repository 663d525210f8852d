"""Synthetic hierarchical embedding corpus.

Construction: speakers get well-separated centroids (gender-split hemispheres
of radius r_speaker); each within-speaker label combination gets a
deterministic style offset built from shared per-(attribute, level) direction
vectors plus a hashed cell jitter; items add isotropic noise.  Direction
vectors are orthogonalized against the speaker-centroid subspace so that
nearest-centroid decoding of attribute levels is never corrupted by speaker
identity.  Scales are vector norms: speaker centroids have norm exactly
r_speaker, style offsets have norm ~r_style, per-item noise has norm
~sigma_noise.
"""

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .labels import (
    ATTRIBUTE_LEVELS,
    ATTRIBUTES,
    AttributeLabels,
    GENDERS,
    default_template_bank,
    keyword_table,
)
from .numerics import Rng

# attributes that vary within one speaker (gender is a speaker-level trait)
CELL_ATTRIBUTES = ("speed", "volume", "pitch", "fluctuation", "language")


@dataclass(frozen=True)
class SyntheticSpec:
    n_speakers: int = 8
    n_items_per_cell: int = 6
    d_emb: int = 64
    r_speaker: float = 10.0
    r_style: float = 2.0
    sigma_noise: float = 0.3
    seed: int = 0
    style_jitter_frac: float = 0.25

    def validate(self):
        if self.n_speakers < 1 or self.n_items_per_cell < 1:
            raise ValueError("n_speakers and n_items_per_cell must be positive")
        if self.d_emb < 8:
            raise ValueError(f"d_emb must be >= 8, got {self.d_emb}")
        if not (self.r_speaker > self.r_style >= 0.0):
            raise ValueError(
                f"scale ordering violated: need r_speaker > r_style >= 0, got "
                f"r_speaker={self.r_speaker}, r_style={self.r_style}"
            )
        if self.sigma_noise < 0.0:
            raise ValueError("sigma_noise must be >= 0")
        if self.r_speaker <= self.sigma_noise:
            raise ValueError(
                f"scale ordering violated: need r_speaker > sigma_noise, got "
                f"r_speaker={self.r_speaker}, sigma_noise={self.sigma_noise}"
            )
        # r_style == 0 is the degenerate "no style structure" regime; when style
        # structure exists it must dominate the noise.
        if self.r_style > 0.0 and self.r_style <= self.sigma_noise:
            raise ValueError(
                f"scale ordering violated: need r_style > sigma_noise, got "
                f"r_style={self.r_style}, sigma_noise={self.sigma_noise}"
            )


@dataclass
class CorpusItem:
    speaker_id: str
    labels: AttributeLabels
    speaker_emb: np.ndarray
    style_emb: np.ndarray
    prompt_text: str

    def to_json(self) -> str:
        return json.dumps({
            "speaker_id": self.speaker_id,
            "labels": self.labels.asdict(),
            "speaker_emb": [float(v) for v in self.speaker_emb],
            "style_emb": [float(v) for v in self.style_emb],
            "prompt_text": self.prompt_text,
        })

    @classmethod
    def from_json(cls, line: str):
        d = json.loads(line)
        return cls(
            speaker_id=d["speaker_id"],
            labels=AttributeLabels.from_dict(d["labels"]),
            speaker_emb=np.asarray(d["speaker_emb"], dtype=np.float64),
            style_emb=np.asarray(d["style_emb"], dtype=np.float64),
            prompt_text=d["prompt_text"],
        )


def cell_combinations():
    """All within-speaker label combinations (3^4 * 2 = 162)."""
    spaces = [ATTRIBUTE_LEVELS[a] for a in CELL_ATTRIBUTES]
    return list(itertools.product(*spaces))


def render_prompt(labels: AttributeLabels, template_bank=None, seed: int = 0) -> str:
    """Fill one template with the canonical keyword for each attribute level."""
    bank = template_bank if template_bank is not None else default_template_bank()
    if not bank:
        raise ValueError("template bank is empty")
    table = keyword_table()
    for template in bank:
        for attr in ATTRIBUTES:
            if "{" + attr + "}" not in template:
                raise ValueError(f"template missing slot {{{attr}}}: {template!r}")
    rng = Rng(seed).stream("template_choice")
    template = bank[int(rng.integers(0, len(bank)))]
    slots = {attr: table[attr][labels.get(attr)][0] for attr in ATTRIBUTES}
    text = template.format(**slots)
    return text[0].upper() + text[1:]


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return v / n


def _place_speaker_centroids(spec: SyntheticSpec, rng: Rng, min_dist: float):
    """Gender-split hemisphere placement with a minimum pairwise distance."""
    d = spec.d_emb
    gender_axis = _unit(rng.stream("gender_axis").standard_normal(d))
    centroids = []
    genders = []
    for s in range(spec.n_speakers):
        gender = GENDERS[s % 2]
        sign = -1.0 if gender == "male" else 1.0
        stream = rng.stream("speaker_centroid", s)
        placed = None
        target = min_dist
        for attempt in range(400):
            w = stream.standard_normal(d)
            w -= (w @ gender_axis) * gender_axis
            w = _unit(w)
            cand = sign * 0.5 * spec.r_speaker * gender_axis \
                + (np.sqrt(3.0) / 2.0) * spec.r_speaker * w
            if all(np.linalg.norm(cand - c) >= target for c in centroids):
                placed = cand
                break
            if attempt % 50 == 49:
                target *= 0.9
        if placed is None:
            raise ValueError(
                "could not place well-separated speaker centroids; "
                "r_speaker is too small relative to r_style"
            )
        centroids.append(placed)
        genders.append(gender)
    return np.array(centroids), genders, gender_axis


def _level_directions(spec: SyntheticSpec, rng: Rng, centroids: np.ndarray):
    """Per-(attribute, level) direction vectors, orthogonal to speaker span."""
    d = spec.d_emb
    scale = spec.r_style / np.sqrt(len(CELL_ATTRIBUTES))
    basis = None
    if centroids.shape[0] + 1 < d:
        q, _ = np.linalg.qr(centroids.T)  # (d, n_speakers) orthonormal columns
        basis = q
    directions = {}
    for attr in CELL_ATTRIBUTES:
        stream = rng.stream("level_direction", attr)
        for level in ATTRIBUTE_LEVELS[attr]:
            v = stream.standard_normal(d)
            if basis is not None:
                v -= basis @ (basis.T @ v)
            directions[(attr, level)] = _unit(v) * scale
    return directions


def generate_corpus(spec: SyntheticSpec, template_bank=None):
    """Deterministic labeled corpus; same spec (and seed) -> identical items."""
    spec.validate()
    rng = Rng(spec.seed)
    jitter_norm = spec.style_jitter_frac * spec.r_style
    cells = cell_combinations()

    # worst-case offset norm: aligned direction vectors plus jitter
    max_offset_bound = (
        len(CELL_ATTRIBUTES) * spec.r_style / np.sqrt(len(CELL_ATTRIBUTES))
        + jitter_norm
    )
    min_dist = max(2.0 * max_offset_bound, 0.45 * spec.r_speaker)
    centroids, genders, _ = _place_speaker_centroids(spec, rng, min_dist)
    directions = _level_directions(spec, rng, centroids)

    # actual max offset, for a hard guarantee over this realization
    offsets = {}
    max_offset = 0.0
    for s in range(spec.n_speakers):
        for ci, cell in enumerate(cells):
            delta = np.zeros(spec.d_emb)
            for attr, level in zip(CELL_ATTRIBUTES, cell):
                delta += directions[(attr, level)]
            if jitter_norm > 0.0:
                j = rng.stream("cell_jitter", s, ci).standard_normal(spec.d_emb)
                delta += _unit(j) * jitter_norm
            offsets[(s, ci)] = delta
            max_offset = max(max_offset, float(np.linalg.norm(delta)))

    min_centroid_dist = np.inf
    for a in range(spec.n_speakers):
        for b in range(a + 1, spec.n_speakers):
            min_centroid_dist = min(
                min_centroid_dist, float(np.linalg.norm(centroids[a] - centroids[b]))
            )
    if spec.n_speakers > 1 and min_centroid_dist <= max_offset:
        raise ValueError(
            f"speaker separation failed: min centroid distance "
            f"{min_centroid_dist:.3f} <= max style offset {max_offset:.3f}"
        )

    noise_coord = spec.sigma_noise / np.sqrt(spec.d_emb)
    speaker_jitter_coord = 0.5 * spec.sigma_noise / np.sqrt(spec.d_emb)
    items = []
    for s in range(spec.n_speakers):
        speaker_id = f"spk{s:02d}"
        mean_offset = np.mean([offsets[(s, ci)] for ci in range(len(cells))], axis=0)
        speaker_base = centroids[s] + mean_offset
        for ci, cell in enumerate(cells):
            label_kwargs = dict(zip(CELL_ATTRIBUTES, cell))
            labels = AttributeLabels(gender=genders[s], **label_kwargs)
            cell_center = centroids[s] + offsets[(s, ci)]
            for k in range(spec.n_items_per_cell):
                stream = rng.stream("item", s, ci, k)
                noise = stream.standard_normal(spec.d_emb) * noise_coord
                sjit = stream.standard_normal(spec.d_emb) * speaker_jitter_coord
                prompt_seed = int(stream.integers(0, 2**62))
                items.append(CorpusItem(
                    speaker_id=speaker_id,
                    labels=labels,
                    speaker_emb=speaker_base + sjit,
                    style_emb=cell_center + noise,
                    prompt_text=render_prompt(labels, template_bank, prompt_seed),
                ))
    return items


def split_corpus(items, holdout_per_cell: int = 1, seed: int = 0):
    """Per-(speaker, labels) split into train/held-out item lists."""
    by_cell = {}
    for idx, item in enumerate(items):
        by_cell.setdefault((item.speaker_id, item.labels.astuple()), []).append(idx)
    rng = Rng(seed).stream("corpus_split")
    train, held = [], []
    for key in sorted(by_cell.keys()):
        idxs = by_cell[key]
        if holdout_per_cell >= len(idxs):
            raise ValueError(
                f"cannot hold out {holdout_per_cell} of {len(idxs)} items in cell {key}"
            )
        perm = rng.permutation(len(idxs))
        held_local = set(perm[:holdout_per_cell].tolist())
        for j, idx in enumerate(idxs):
            (held if j in held_local else train).append(items[idx])
    return train, held


def save_corpus(items, path):
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(item.to_json())
            fh.write("\n")


def load_corpus(path):
    items = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                items.append(CorpusItem.from_json(line))
    return items


def save_template_bank(bank, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"templates": list(bank)}, fh, indent=2)


def load_template_bank(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)["templates"]
