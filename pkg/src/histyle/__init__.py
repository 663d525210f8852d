"""HiStyle: hierarchical two-stage style-embedding prediction on synthetic
speech-style corpora, plus a statistics + human-perception annotation loop."""

__version__ = "0.1.0"
