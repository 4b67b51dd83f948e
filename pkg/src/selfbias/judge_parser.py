"""Parse judge responses of the form ``Explanation: ..., Answer: <label>``."""
from __future__ import annotations

import difflib
import json
import logging
import re
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Mapping

from .dataset import LLM_JUDGE, DataError, RatingRow, ScaleDef

log = logging.getLogger(__name__)

_ANSWER = re.compile(r"answer\s*:", re.IGNORECASE)
_EXPLANATION = re.compile(r"explanation\s*:", re.IGNORECASE)
_WRAPPERS = "[](){}<>\"'`*_"
_TRAILING = ".,;:!"


class ParseError(ValueError):
    pass


class MissingAnswerError(ParseError):
    pass


class UnknownLabelError(ParseError):
    def __init__(self, answer: str, dimension: str, suggestion: str | None):
        self.answer = answer
        self.suggestion = suggestion
        hint = f"; did you mean {suggestion!r}?" if suggestion else ""
        super().__init__(f"answer {answer!r} matches no {dimension} label{hint}")


def _clean(label: str) -> str:
    return " ".join(label.lower().split())


@dataclass(frozen=True)
class LabelMap:
    dimension_id: str
    ordered_labels: tuple[str, ...]
    na_labels: frozenset[str] = frozenset()

    def __post_init__(self):
        labels = tuple(_clean(x) for x in self.ordered_labels)
        if len(set(labels)) != len(labels):
            raise ValueError(f"{self.dimension_id}: labels must be unique (case-insensitive)")
        object.__setattr__(self, "ordered_labels", labels)
        object.__setattr__(self, "na_labels", frozenset(_clean(x) for x in self.na_labels))

    @property
    def num_levels(self) -> int:
        return len(self.ordered_labels)

    def level_of(self, label: str) -> int:
        return self.ordered_labels.index(_clean(label)) + 1

    def check(self, scale: ScaleDef) -> None:
        if scale.num_levels != self.num_levels:
            raise ValueError(
                f"{self.dimension_id}: {self.num_levels} labels but the scale has {scale.num_levels} levels"
            )


@dataclass(frozen=True)
class ParsedJudgment:
    label: str
    level: int | None   # None for an NA answer
    explanation: str


def load_label_maps(path=None) -> dict[str, LabelMap]:
    """Label maps from a JSON file; the bundled rubric maps by default."""
    if path is None:
        text = resources.files("selfbias").joinpath("data/label_maps.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    raw = json.loads(text)
    return {d: LabelMap(d, tuple(v["ordered_labels"]), frozenset(v.get("na_labels", ()))) for d, v in raw.items()}


def _answer_token(text: str) -> str:
    token = text.strip().split("\n", 1)[0].strip()
    prev = None
    while token != prev:
        prev = token
        token = token.strip().strip(_WRAPPERS).rstrip(_TRAILING).strip()
    return _clean(token)


def _explanation(text: str) -> str:
    found = _EXPLANATION.search(text)
    if found:
        text = text[found.end():]
    text = text.lstrip().rstrip()
    if text.endswith(","):
        text = text[:-1]
    return text


def parse_judge_response(text: str, dimension_id: str, maps: Mapping[str, LabelMap],
                         strict: bool = True) -> ParsedJudgment:
    """Extract the label after the last ``Answer:`` marker.

    Matching is exact after lowercasing, collapsing whitespace and stripping
    brackets and trailing punctuation.  With ``strict=False`` a close label
    (difflib ratio >= 0.85) is accepted too.
    """
    try:
        lmap = maps[dimension_id]
    except KeyError:
        raise ParseError(f"no label map for dimension {dimension_id!r}") from None
    markers = list(_ANSWER.finditer(text))
    if not markers:
        raise MissingAnswerError("missing Answer marker")
    last = markers[-1]
    answer = _answer_token(text[last.end():])
    explanation = _explanation(text[:last.start()])

    if answer in lmap.ordered_labels:
        return ParsedJudgment(answer, lmap.level_of(answer), explanation)
    if answer in lmap.na_labels:
        return ParsedJudgment(answer, None, explanation)
    candidates = list(lmap.ordered_labels) + sorted(lmap.na_labels)
    close = difflib.get_close_matches(answer, candidates, n=1, cutoff=0.6)
    suggestion = close[0] if close else None
    if not strict and suggestion and difflib.SequenceMatcher(None, answer, suggestion).ratio() >= 0.85:
        log.debug("fuzzy-matched %r to %r", answer, suggestion)
        level = lmap.level_of(suggestion) if suggestion in lmap.ordered_labels else None
        return ParsedJudgment(suggestion, level, explanation)
    raise UnknownLabelError(answer, dimension_id, suggestion)


def labels_to_rows(parsed: Iterable[tuple[Mapping[str, str], ParsedJudgment]]) -> list[RatingRow]:
    """Turn (ids, parsed judgment) pairs into judge rating rows.

    ``ids`` needs prompt_id, dimension, model and judge.
    """
    rows = []
    seen = set()
    for ids, p in parsed:
        key = (ids["prompt_id"], ids["dimension"], ids["model"], ids["judge"])
        if key in seen:
            raise DataError(f"duplicate key {key}")
        seen.add(key)
        rows.append(RatingRow(key[0], key[1], key[2], key[3], LLM_JUDGE, p.level,
                              _opt_int(ids.get("token_length"))))
    return rows


def _opt_int(x) -> int | None:
    if x is None or x == "":
        return None
    return int(x)


def parse_judgments(records: Iterable[Mapping[str, str]], maps: Mapping[str, LabelMap],
                    strict: bool = True) -> tuple[list[RatingRow], list[tuple[int, str]]]:
    """Parse a batch of ``{prompt_id, dimension, model, judge, response_text}`` records.

    Malformed responses are dropped; returns the rows and a list of
    ``(record index, reason)`` for the dropped ones.
    """
    parsed = []
    dropped = []
    for i, rec in enumerate(records):
        try:
            parsed.append((rec, parse_judge_response(rec["response_text"], rec["dimension"], maps, strict)))
        except ParseError as exc:
            dropped.append((i, str(exc)))
    if dropped:
        log.warning("dropped %d malformed judge responses", len(dropped))
    return labels_to_rows(parsed), dropped


def read_judgments(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
