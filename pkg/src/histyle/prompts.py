"""Deterministic text-prompt featurizer and its inverse keyword parser."""

import re
from dataclasses import dataclass

import numpy as np

from .labels import ATTRIBUTE_LEVELS, ATTRIBUTES, AttributeLabels, keyword_table
from .numerics import Rng

DEFAULT_D_TEXT = 64
DEFAULT_FEATURIZER_SEED = 7021


@dataclass(frozen=True)
class FeaturizerConfig:
    d_text: int = DEFAULT_D_TEXT
    seed: int = DEFAULT_FEATURIZER_SEED


@dataclass
class PromptEmbedding:
    vector: np.ndarray
    source_labels: AttributeLabels


def parse_prompt(text: str) -> AttributeLabels:
    """Recover attribute levels from the canonical keywords in a sentence.

    Raises on a missing attribute or on conflicting keywords (two different
    levels of the same attribute present).
    """
    table = keyword_table()
    found = {}
    for attr in ATTRIBUTES:
        levels = set()
        for level, words in table[attr].items():
            for word in words:
                if re.search(r"\b" + re.escape(word) + r"\b", text, re.IGNORECASE):
                    levels.add(level)
                    break
        if not levels:
            raise ValueError(f"prompt is missing a keyword for attribute '{attr}'")
        if len(levels) > 1:
            raise ValueError(
                f"conflicting keywords for attribute '{attr}': {sorted(levels)}"
            )
        found[attr] = levels.pop()
    return AttributeLabels.from_dict(found)


def _onehot(labels: AttributeLabels) -> np.ndarray:
    blocks = []
    for attr in ATTRIBUTES:
        space = ATTRIBUTE_LEVELS[attr]
        block = np.zeros(len(space))
        block[space.index(labels.get(attr))] = 1.0
        blocks.append(block)
    return np.concatenate(blocks)


_projection_cache = {}


def _projection(config: FeaturizerConfig) -> np.ndarray:
    key = (config.d_text, config.seed)
    if key not in _projection_cache:
        n_in = sum(len(ATTRIBUTE_LEVELS[a]) for a in ATTRIBUTES)
        if config.d_text < n_in:
            raise ValueError(f"d_text must be >= {n_in}, got {config.d_text}")
        g = Rng(config.seed).stream("prompt_projection").standard_normal(
            (config.d_text, n_in)
        )
        q, _ = np.linalg.qr(g)  # orthonormal columns -> injective map
        _projection_cache[key] = q
    return _projection_cache[key]


def encode_prompt(labels: AttributeLabels, config: FeaturizerConfig | None = None) -> PromptEmbedding:
    """Unit-norm embedding, injective over the whole label space."""
    config = config or FeaturizerConfig()
    vec = _projection(config) @ _onehot(labels)
    norm = np.linalg.norm(vec)
    return PromptEmbedding(vector=vec / norm, source_labels=labels)


def encode_prompt_text(text: str, config: FeaturizerConfig | None = None) -> PromptEmbedding:
    return encode_prompt(parse_prompt(text), config)


def encode_label_batch(labels_list, config: FeaturizerConfig | None = None) -> np.ndarray:
    """(N, d_text) matrix of prompt embeddings for a list of label tuples."""
    return np.stack([encode_prompt(la, config).vector for la in labels_list])
