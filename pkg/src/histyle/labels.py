"""Closed attribute/label space shared by the corpus, prompts, and annotation."""

import itertools
import json
from dataclasses import dataclass
from importlib import resources

GENDERS = ("male", "female")
LEVELS = ("low", "medium", "high")
LANGUAGES = ("zh", "en")

ATTRIBUTES = ("gender", "speed", "volume", "pitch", "fluctuation", "language")
STYLE_ATTRIBUTES = ("speed", "volume", "pitch", "fluctuation")
REPORT_ATTRIBUTES = ("gender", "speed", "volume", "pitch", "fluctuation")

ATTRIBUTE_LEVELS = {
    "gender": GENDERS,
    "speed": LEVELS,
    "volume": LEVELS,
    "pitch": LEVELS,
    "fluctuation": LEVELS,
    "language": LANGUAGES,
}

# Perceptual synonyms accepted at vote boundaries ("slow"/"fast" for speed).
LEVEL_SYNONYMS = {
    "speed": {"slow": "low", "fast": "high"},
    "pitch": {"deep": "low"},
    "volume": {"quiet": "low", "loud": "high"},
}


def normalize_level(attribute: str, level: str) -> str:
    """Map a vote label (possibly a synonym) to the canonical level."""
    level = level.strip().lower()
    level = LEVEL_SYNONYMS.get(attribute, {}).get(level, level)
    if level not in ATTRIBUTE_LEVELS[attribute]:
        raise ValueError(
            f"invalid level {level!r} for attribute {attribute!r}; "
            f"expected one of {ATTRIBUTE_LEVELS[attribute]}"
        )
    return level


@dataclass(frozen=True)
class AttributeLabels:
    gender: str
    speed: str
    volume: str
    pitch: str
    fluctuation: str
    language: str

    def __post_init__(self):
        for attr in ATTRIBUTES:
            value = getattr(self, attr)
            if value not in ATTRIBUTE_LEVELS[attr]:
                raise ValueError(
                    f"invalid {attr} {value!r}; expected one of "
                    f"{ATTRIBUTE_LEVELS[attr]}"
                )

    def get(self, attribute: str) -> str:
        return getattr(self, attribute)

    def astuple(self):
        return tuple(getattr(self, a) for a in ATTRIBUTES)

    def asdict(self):
        return {a: getattr(self, a) for a in ATTRIBUTES}

    @classmethod
    def from_dict(cls, d):
        return cls(**{a: d[a] for a in ATTRIBUTES})


def all_label_combinations():
    """The full closed label space (2 * 3^4 * 2 = 324 tuples)."""
    spaces = [ATTRIBUTE_LEVELS[a] for a in ATTRIBUTES]
    return [AttributeLabels(*combo) for combo in itertools.product(*spaces)]


def _load_data_json(name):
    with resources.files("histyle.data").joinpath(name).open("r", encoding="utf-8") as fh:
        return json.load(fh)


_keyword_cache = None
_template_cache = None


def keyword_table() -> dict:
    """attribute -> level -> [keywords]; first keyword is canonical."""
    global _keyword_cache
    if _keyword_cache is None:
        _keyword_cache = _load_data_json("keywords.json")
    return _keyword_cache


def default_template_bank() -> list:
    global _template_cache
    if _template_cache is None:
        _template_cache = _load_data_json("templates.json")["templates"]
    return _template_cache
