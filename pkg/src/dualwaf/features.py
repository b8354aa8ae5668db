"""Layer-1 lexical ratio features.

Every character is either alphanumeric (ASCII letters and digits) or
special; the four ratios are percentages on a 0-100 scale.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from typing import Iterable, NamedTuple

FEATURE_NAMES = (
    "Alphanumeric Character Ratio",
    "Badwords Ratio",
    "Special Character Ratio",
    "Illegal Special Character Ratio",
)

_ALNUM_RE = re.compile(r"[A-Za-z0-9]")


class L1FeatureVector(NamedTuple):
    alnum_ratio: float
    badword_ratio: float
    special_ratio: float
    illegal_special_ratio: float


@dataclass(frozen=True)
class LexiconConfig:
    badwords: frozenset[str]
    illegal_chars: frozenset[str]
    version: str = "custom"

    def __post_init__(self):
        words = frozenset(w.lower() for w in self.badwords)
        if not words or "" in words:
            raise ValueError("badwords must be a non-empty set of non-empty tokens")
        chars = frozenset(self.illegal_chars)
        if any(len(c) != 1 or _ALNUM_RE.match(c) for c in chars):
            raise ValueError("illegal_chars must be single non-alphanumeric characters")
        object.__setattr__(self, "badwords", words)
        object.__setattr__(self, "illegal_chars", chars)

    @cached_property
    def badword_pattern(self) -> re.Pattern:
        # longest token first so the leftmost scan prefers the longer match
        ordered = sorted(self.badwords, key=lambda w: (-len(w), w))
        return re.compile("|".join(re.escape(w) for w in ordered))

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "badwords": sorted(self.badwords),
            "illegal_chars": "".join(sorted(self.illegal_chars)),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LexiconConfig":
        try:
            badwords, illegal, version = data["badwords"], data["illegal_chars"], data["version"]
        except (KeyError, TypeError) as exc:
            raise ValueError(f"lexicon missing field {exc}") from None
        if not isinstance(version, str) or not isinstance(illegal, str):
            raise ValueError("lexicon version and illegal_chars must be strings")
        if not isinstance(badwords, list) or not all(isinstance(w, str) for w in badwords):
            raise ValueError("lexicon badwords must be a list of strings")
        return cls(frozenset(badwords), frozenset(illegal), version)


def load_lexicon(path: str | None = None) -> LexiconConfig:
    """Load a lexicon JSON file, or the bundled default when ``path`` is None."""
    if path is None:
        text = resources.files("dualwaf").joinpath("data/lexicon.json").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return LexiconConfig.from_dict(json.loads(text))


_default: LexiconConfig | None = None


def default_lexicon() -> LexiconConfig:
    global _default
    if _default is None:
        _default = load_lexicon()
    return _default


def _alnum_count(payload: str) -> int:
    return len(_ALNUM_RE.findall(payload))


def alnum_ratio(payload: str) -> float:
    if not payload:
        return 0.0
    return 100.0 * _alnum_count(payload) / len(payload)


def count_badwords(payload: str, lex: LexiconConfig) -> int:
    return sum(1 for _ in lex.badword_pattern.finditer(payload.lower()))


def badword_ratio(payload: str, lex: LexiconConfig | None = None) -> float:
    lex = lex or default_lexicon()
    n_alnum = _alnum_count(payload)
    if n_alnum == 0:
        return 0.0
    return 100.0 * count_badwords(payload, lex) / n_alnum


def special_ratio(payload: str) -> float:
    if not payload:
        return 0.0
    return 100.0 * (len(payload) - _alnum_count(payload)) / len(payload)


def illegal_special_ratio(payload: str, lex: LexiconConfig | None = None) -> float:
    lex = lex or default_lexicon()
    n_special = len(payload) - _alnum_count(payload)
    if n_special == 0:
        return 0.0
    n_illegal = sum(1 for c in payload if c in lex.illegal_chars)
    return 100.0 * n_illegal / n_special


def extract_features(payload: str, lex: LexiconConfig | None = None) -> L1FeatureVector:
    lex = lex or default_lexicon()
    n = len(payload)
    if n == 0:
        return L1FeatureVector(0.0, 0.0, 0.0, 0.0)
    n_alnum = _alnum_count(payload)
    n_special = n - n_alnum
    n_bad = count_badwords(payload, lex) if n_alnum else 0
    n_illegal = sum(1 for c in payload if c in lex.illegal_chars)
    return L1FeatureVector(
        100.0 * n_alnum / n,
        100.0 * n_bad / n_alnum if n_alnum else 0.0,
        100.0 * n_special / n,
        100.0 * n_illegal / n_special if n_special else 0.0,
    )


def extract_many(payloads: Iterable[str], lex: LexiconConfig | None = None) -> list[L1FeatureVector]:
    lex = lex or default_lexicon()
    return [extract_features(p, lex) for p in payloads]
