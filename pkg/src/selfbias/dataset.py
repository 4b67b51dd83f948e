"""Rating tables: loading, validation, Likert normalization, reference aggregation.

A :class:`RatingsTable` holds long-format ratings, one row per
(prompt, dimension, model, rater), together with the score scales, the
model/judge configuration and (after :func:`aggregate_reference`) one
reference score per (prompt, dimension, model) cell.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

LLM_JUDGE = "llm_judge"
HUMAN = "human"
RATER_KINDS = (LLM_JUDGE, HUMAN)

CSV_COLUMNS = ["prompt_id", "dimension", "model", "rater", "rater_kind", "level", "token_length"]
SCORE_COLUMN = "score"
KEY = ["prompt_id", "dimension", "model", "rater"]
CELL = ["prompt_id", "dimension", "model"]

# rater id used when a reference cell has no underlying human rows
REFERENCE_RATER = "reference"


class DataError(ValueError):
    """Invalid rating data or configuration."""


@dataclass(frozen=True)
class ScaleDef:
    dimension_id: str
    num_levels: int
    na_labels: frozenset[str] = frozenset()

    def __post_init__(self):
        if int(self.num_levels) < 2:
            raise DataError(f"scale {self.dimension_id!r}: need at least 2 levels, got {self.num_levels}")
        object.__setattr__(self, "num_levels", int(self.num_levels))
        object.__setattr__(self, "na_labels", frozenset(s.strip().lower() for s in self.na_labels))

    def is_na(self, label: str) -> bool:
        return label.strip().lower() in self.na_labels


@dataclass(frozen=True)
class ModelConfig:
    models: tuple[str, ...]
    judges: tuple[str, ...]
    family_of: Mapping[str, str]
    task_of: Mapping[str, str] = field(default_factory=dict)
    source_of: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "judges", tuple(self.judges))
        missing = [x for x in (*self.models, *self.judges) if x not in self.family_of]
        if missing:
            raise DataError(f"no family for: {', '.join(sorted(set(missing)))}")
        if len(set(self.models)) != len(self.models) or len(set(self.judges)) != len(self.judges):
            raise DataError("duplicate model or judge id in config")

    @property
    def overlap(self) -> tuple[str, ...]:
        """Judges that also generate completions (self-bias is estimable only for these)."""
        models = set(self.models)
        return tuple(j for j in self.judges if j in models)

    def family(self, member: str) -> str:
        return self.family_of[member]

    def restrict(self, models: Iterable[str] | None = None, judges: Iterable[str] | None = None) -> "ModelConfig":
        keep_m = set(self.models if models is None else models)
        keep_j = set(self.judges if judges is None else judges)
        return replace(
            self,
            models=tuple(m for m in self.models if m in keep_m),
            judges=tuple(j for j in self.judges if j in keep_j),
        )


@dataclass(frozen=True)
class RatingRow:
    prompt_id: str
    dimension_id: str
    model_id: str
    rater_id: str
    rater_kind: str
    raw_level: int | None
    token_length: int | None = None
    score: float | None = None


def normalize_score(raw_level: int, scale: ScaleDef) -> float:
    """Map level k of a K-point scale to (k - 1) / (K - 1)."""
    k = int(raw_level)
    if k != raw_level or not 1 <= k <= scale.num_levels:
        raise DataError(f"level out of range: {raw_level} not in 1..{scale.num_levels} ({scale.dimension_id})")
    return (k - 1) / (scale.num_levels - 1)


def _normalize_levels(levels: pd.Series, dims: pd.Series, scales: Mapping[str, ScaleDef]) -> np.ndarray:
    top = dims.map({d: s.num_levels for d, s in scales.items()}).to_numpy(dtype=float)
    return (levels.to_numpy(dtype=float) - 1.0) / (top - 1.0)


def _empty_ratings() -> pd.DataFrame:
    return pd.DataFrame({
        "prompt_id": pd.Series(dtype=object),
        "dimension": pd.Series(dtype=object),
        "model": pd.Series(dtype=object),
        "rater": pd.Series(dtype=object),
        "rater_kind": pd.Series(dtype=object),
        "level": pd.Series(dtype=float),
        "token_length": pd.Series(dtype=float),
        "score": pd.Series(dtype=float),
    })


def _canonical(frame: pd.DataFrame, key: list[str]) -> pd.DataFrame:
    return frame.sort_values(key, kind="mergesort").reset_index(drop=True)


@dataclass(frozen=True)
class RatingsTable:
    """Immutable long-format rating table.

    ``ratings`` columns: prompt_id, dimension, model, rater, rater_kind,
    level (float, NaN when missing), token_length (float, NaN when absent),
    score (normalized level in [0, 1], or a continuous score for simulated
    rows).  ``reference`` columns: prompt_id, dimension, model, reference,
    n_annotators; cells with ``n_annotators == 0`` carry NaN.
    """

    ratings: pd.DataFrame
    scales: Mapping[str, ScaleDef]
    config: ModelConfig
    reference: pd.DataFrame | None = None

    def __post_init__(self):
        object.__setattr__(self, "ratings", _canonical(self.ratings, KEY))
        if self.reference is not None:
            object.__setattr__(self, "reference", _canonical(self.reference, CELL))

    @classmethod
    def from_rows(cls, rows: Iterable[RatingRow], scales: Mapping[str, ScaleDef], config: ModelConfig) -> "RatingsTable":
        records = [
            {
                "prompt_id": r.prompt_id, "dimension": r.dimension_id, "model": r.model_id,
                "rater": r.rater_id, "rater_kind": r.rater_kind,
                "level": np.nan if r.raw_level is None else float(r.raw_level),
                "token_length": np.nan if r.token_length is None else float(r.token_length),
                "score": np.nan if r.score is None else float(r.score),
            }
            for r in rows
        ]
        frame = pd.DataFrame.from_records(records) if records else _empty_ratings()
        return cls.from_frame(frame, scales, config)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, scales: Mapping[str, ScaleDef], config: ModelConfig,
                   reference: pd.DataFrame | None = None) -> "RatingsTable":
        """Validate a ratings frame and fill normalized scores from levels."""
        frame = frame.copy()
        for col in ("level", "token_length", "score"):
            if col not in frame:
                frame[col] = np.nan
            frame[col] = frame[col].astype(float)
        _validate(frame, scales, config)
        has_level = frame["level"].notna()
        frame.loc[has_level, "score"] = _normalize_levels(frame.loc[has_level, "level"],
                                                          frame.loc[has_level, "dimension"], scales)
        frame = frame[_empty_ratings().columns.tolist()]
        return cls(frame, dict(scales), config, reference)

    # views

    @property
    def rows(self) -> Iterator[RatingRow]:
        for r in self.ratings.itertuples(index=False):
            yield RatingRow(
                r.prompt_id, r.dimension, r.model, r.rater, r.rater_kind,
                None if np.isnan(r.level) else int(r.level),
                None if np.isnan(r.token_length) else int(r.token_length),
                None if np.isnan(r.score) else float(r.score),
            )

    def judge_ratings(self) -> pd.DataFrame:
        r = self.ratings
        return r[(r["rater_kind"] == LLM_JUDGE)].reset_index(drop=True)

    def human_ratings(self) -> pd.DataFrame:
        r = self.ratings
        return r[(r["rater_kind"] == HUMAN)].reset_index(drop=True)

    @property
    def prompts(self) -> list[str]:
        return sorted(self.ratings["prompt_id"].unique())

    @property
    def dimensions(self) -> list[str]:
        return sorted(self.ratings["dimension"].unique())

    @property
    def models(self) -> list[str]:
        return sorted(self.ratings["model"].unique())

    @property
    def judges(self) -> list[str]:
        return sorted(self.judge_ratings()["rater"].unique())

    def with_reference(self, reference: pd.DataFrame, strict: bool = True) -> "RatingsTable":
        """Replace the reference map; ``strict`` enforces the [0, 1] range."""
        ref = reference.copy()
        if "n_annotators" not in ref:
            ref["n_annotators"] = np.where(ref["reference"].notna(), 1, 0)
        ref = ref[CELL + ["reference", "n_annotators"]]
        vals = ref["reference"].dropna()
        if strict and ((vals < 0) | (vals > 1)).any():
            raise DataError("reference scores must lie in [0, 1]")
        return replace(self, reference=ref.reset_index(drop=True))

    def with_ratings(self, ratings: pd.DataFrame, config: ModelConfig | None = None) -> "RatingsTable":
        return replace(self, ratings=ratings.reset_index(drop=True), config=config or self.config)

    def flagged_cells(self, min_annotators: int = 2) -> pd.DataFrame:
        """Reference cells with fewer than ``min_annotators`` annotations."""
        if self.reference is None:
            return pd.DataFrame(columns=CELL + ["reference", "n_annotators"])
        ref = self.reference
        return ref[ref["n_annotators"] < min_annotators].reset_index(drop=True)

    def equals(self, other: "RatingsTable") -> bool:
        same_ref = (self.reference is None and other.reference is None) or (
            self.reference is not None and other.reference is not None and self.reference.equals(other.reference)
        )
        return (self.ratings.equals(other.ratings) and dict(self.scales) == dict(other.scales)
                and self.config == other.config and same_ref)


def _validate(frame: pd.DataFrame, scales: Mapping[str, ScaleDef], config: ModelConfig,
              line_offset: int = 2) -> None:
    def where(mask) -> str:
        idx = np.flatnonzero(np.asarray(mask))
        return f"line {idx[0] + line_offset}" if len(idx) else ""

    unknown_dim = ~frame["dimension"].isin(list(scales))
    if unknown_dim.any():
        d = frame.loc[unknown_dim, "dimension"].iloc[0]
        raise DataError(f"unknown dimension {d!r} at {where(unknown_dim)}")
    bad_kind = ~frame["rater_kind"].isin(RATER_KINDS)
    if bad_kind.any():
        raise DataError(f"malformed row at {where(bad_kind)}: rater_kind must be one of {RATER_KINDS}")
    unknown_model = ~frame["model"].isin(config.models)
    if unknown_model.any():
        m = frame.loc[unknown_model, "model"].iloc[0]
        raise DataError(f"unknown model {m!r} at {where(unknown_model)}")
    judge_rows = frame["rater_kind"] == LLM_JUDGE
    unknown_judge = judge_rows & ~frame["rater"].isin(config.judges)
    if unknown_judge.any():
        j = frame.loc[unknown_judge, "rater"].iloc[0]
        raise DataError(f"unknown judge {j!r} at {where(unknown_judge)}")

    levels = frame["level"].to_numpy(dtype=float)
    top = frame["dimension"].map({d: s.num_levels for d, s in scales.items()}).to_numpy(dtype=float)
    has = ~np.isnan(levels)
    bad = has & ((levels < 1) | (levels > top) | (levels != np.round(levels)))
    if bad.any():
        i = np.flatnonzero(bad)[0]
        raise DataError(f"level out of range at line {i + line_offset}: {levels[i]:g} not in 1..{int(top[i])}")
    lengths = frame["token_length"].to_numpy(dtype=float)
    if (lengths < 0).any():
        raise DataError(f"negative token_length at {where(lengths < 0)}")
    human_score = frame["score"].to_numpy(dtype=float)
    human_bad = (frame["rater_kind"] == HUMAN).to_numpy() & ~has & ((human_score < 0) | (human_score > 1))
    if human_bad.any():
        raise DataError(f"human score outside [0, 1] at {where(human_bad)}")
    dup = frame.duplicated(KEY, keep="first")
    if dup.any():
        r = frame.loc[dup].iloc[0]
        raise DataError(f"duplicate key ({r.prompt_id}, {r.dimension}, {r.model}, {r.rater}) at {where(dup)}")


# file I/O


def load_config(path: str | os.PathLike) -> tuple[dict[str, ScaleDef], ModelConfig]:
    """Read the JSON config carrying models, judges, families, scales and tasks."""
    with open(path) as fh:
        raw = json.load(fh)
    return config_from_dict(raw)


def config_from_dict(raw: Mapping) -> tuple[dict[str, ScaleDef], ModelConfig]:
    try:
        scales = {}
        for dim, spec in raw["scales"].items():
            if isinstance(spec, int):
                spec = {"num_levels": spec}
            scales[dim] = ScaleDef(dim, spec["num_levels"], frozenset(spec.get("na_labels", ())))
        config = ModelConfig(
            models=tuple(raw["models"]),
            judges=tuple(raw["judges"]),
            family_of=dict(raw["families"]),
            task_of=dict(raw.get("tasks", {})),
            source_of=dict(raw.get("sources", {})),
        )
    except KeyError as exc:
        raise DataError(f"config is missing required key {exc}") from None
    return scales, config


def config_to_dict(scales: Mapping[str, ScaleDef], config: ModelConfig) -> dict:
    return {
        "models": list(config.models),
        "judges": list(config.judges),
        "families": {k: config.family_of[k] for k in sorted(config.family_of)},
        "scales": {
            d: {"num_levels": s.num_levels, "na_labels": sorted(s.na_labels)} for d, s in sorted(scales.items())
        },
        "tasks": {k: config.task_of[k] for k in sorted(config.task_of)},
        "sources": {k: config.source_of[k] for k in sorted(config.source_of)},
    }


def write_config(path: str | os.PathLike, scales: Mapping[str, ScaleDef], config: ModelConfig) -> None:
    Path(path).write_text(json.dumps(config_to_dict(scales, config), indent=2) + "\n")


def _read_records(path: Path) -> pd.DataFrame:
    if path.suffix in (".jsonl", ".ndjson"):
        frame = pd.read_json(path, lines=True, dtype=False)
        return frame.astype(object).where(frame.notna(), "").astype(str)
    sep = "\t" if path.suffix == ".tsv" else ","
    try:
        return pd.read_csv(path, sep=sep, dtype=str, keep_default_na=False)
    except pd.errors.ParserError as exc:
        raise DataError(f"malformed row in {path}: {exc}") from None


def _exact_floats(text: pd.Series) -> pd.Series:
    # float() round-trips repr() exactly; pandas' fast parser can be off by an ulp
    def conv(v):
        try:
            return float(v) if v != "" else np.nan
        except ValueError:
            return np.nan
    return pd.Series([conv(v) for v in text], index=text.index, dtype=float)


def load_ratings(path: str | os.PathLike, scales: Mapping[str, ScaleDef], config: ModelConfig) -> RatingsTable:
    """Load a delimiter-separated (or JSON lines) ratings file.

    NA is an empty ``level`` field or any of the dimension's ``na_labels``.
    An optional ``score`` column carries continuous scores for rows whose
    ``level`` is empty (simulated data).
    """
    path = Path(path)
    raw = _read_records(path)
    missing = [c for c in CSV_COLUMNS if c not in raw.columns]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    raw = raw.apply(lambda s: s.str.strip())

    unknown_dim = ~raw["dimension"].isin(list(scales))
    if unknown_dim.any():
        i = np.flatnonzero(unknown_dim.to_numpy())[0]
        raise DataError(f"unknown dimension {raw['dimension'].iloc[i]!r} at line {i + 2}")

    level_txt = raw["level"]
    na = (level_txt == "") | pd.Series(
        [scales[d].is_na(v) for d, v in zip(raw["dimension"], level_txt)], index=raw.index, dtype=bool
    )
    levels = pd.to_numeric(level_txt.where(~na), errors="coerce")
    malformed = ~na & levels.isna()
    if malformed.any():
        i = np.flatnonzero(malformed.to_numpy())[0]
        raise DataError(f"malformed row at line {i + 2}: level {level_txt.iloc[i]!r} is not an integer")

    lengths = pd.to_numeric(raw["token_length"].where(raw["token_length"] != ""), errors="coerce")
    bad_len = raw["token_length"].ne("") & lengths.isna()
    if bad_len.any():
        i = np.flatnonzero(bad_len.to_numpy())[0]
        raise DataError(f"malformed row at line {i + 2}: token_length {raw['token_length'].iloc[i]!r}")

    if SCORE_COLUMN in raw:
        scores = _exact_floats(raw[SCORE_COLUMN])
        bad_score = raw[SCORE_COLUMN].ne("") & scores.isna()
        if bad_score.any():
            i = np.flatnonzero(bad_score.to_numpy())[0]
            raise DataError(f"malformed row at line {i + 2}: score {raw[SCORE_COLUMN].iloc[i]!r}")
        scores = scores.where(levels.isna())
    else:
        scores = pd.Series(np.nan, index=raw.index)

    frame = pd.DataFrame({
        "prompt_id": raw["prompt_id"], "dimension": raw["dimension"], "model": raw["model"],
        "rater": raw["rater"], "rater_kind": raw["rater_kind"],
        "level": levels.astype(float), "token_length": lengths.astype(float), "score": scores.astype(float),
    })
    return RatingsTable.from_frame(frame, scales, config)


def _fmt(x: float) -> str:
    return "" if np.isnan(x) else repr(float(x))


def _fmt_int(x: float) -> str:
    return "" if np.isnan(x) else str(int(x))


def export_frame(table: RatingsTable) -> pd.DataFrame:
    """Canonical string frame: human/judge rows plus pseudo-rows for bare reference cells."""
    r = table.ratings
    out = r[["prompt_id", "dimension", "model", "rater", "rater_kind"]].copy()
    out["level"] = [_fmt_int(v) for v in r["level"]]
    out["token_length"] = [_fmt_int(v) for v in r["token_length"]]
    out["score"] = [_fmt(s) if np.isnan(lv) else "" for s, lv in zip(r["score"], r["level"])]
    if table.reference is not None:
        covered = table.human_ratings()[CELL].drop_duplicates()
        ref = table.reference.dropna(subset=["reference"])
        bare = ref.merge(covered, on=CELL, how="left", indicator=True)
        bare = bare[bare["_merge"] == "left_only"]
        if len(bare):
            extra = bare[CELL].copy()
            extra["rater"] = REFERENCE_RATER
            extra["rater_kind"] = HUMAN
            extra["level"] = ""
            extra["token_length"] = ""
            extra["score"] = [_fmt(v) for v in bare["reference"]]
            out = pd.concat([out, extra], ignore_index=True)
    return _canonical(out, KEY)


def write_ratings(table: RatingsTable, path: str | os.PathLike) -> None:
    """Write the canonical CSV/TSV export (atomic replace)."""
    path = Path(path)
    sep = "\t" if path.suffix == ".tsv" else ","
    tmp = path.with_name(path.name + ".tmp")
    export_frame(table).to_csv(tmp, sep=sep, index=False, lineterminator="\n")
    os.replace(tmp, path)


# transformations


def aggregate_reference(table: RatingsTable) -> RatingsTable:
    """Reference score per (prompt, dimension, model) = mean normalized human rating.

    Cells whose human ratings are all NA keep ``n_annotators = 0`` and a NaN
    reference.  A table without human rows keeps any reference it already has.
    """
    human = table.human_ratings()
    if human.empty:
        if table.reference is None:
            log.warning("no human ratings: reference scores unavailable")
        return table
    grouped = human.groupby(CELL, sort=True)["score"]
    ref = pd.DataFrame({"reference": grouped.mean(), "n_annotators": grouped.count()}).reset_index()
    empty = int((ref["n_annotators"] == 0).sum())
    if empty:
        log.warning("%d reference cells have no non-NA human rating", empty)
    return table.with_reference(ref)


def filter_table(table: RatingsTable, *, dimensions: Iterable[str] | None = None,
                 task_types: Iterable[str] | None = None, drop_models: Iterable[str] | None = None,
                 drop_judges: Iterable[str] | None = None, prompts: Iterable[str] | None = None) -> RatingsTable:
    """Keep/drop rows by dimension, task type, model, judge or prompt.

    ``drop_models`` removes completions (rows of every rater kind); the
    dropped ids stay judges if they are judges.  ``drop_judges`` removes
    judgments only.
    """
    cfg = table.config
    r = table.ratings
    keep = pd.Series(True, index=r.index)
    ref = table.reference

    def check(ids, known, what):
        ids = set(ids)
        unknown = ids - set(known)
        if unknown:
            raise DataError(f"unknown {what}: {', '.join(sorted(unknown))}")
        return ids

    prompt_keep = None
    if dimensions is not None:
        dims = check(dimensions, table.scales, "dimension")
        keep &= r["dimension"].isin(dims)
    if task_types is not None:
        tasks = check(task_types, set(cfg.task_of.values()), "task type")
        prompt_keep = {p for p, t in cfg.task_of.items() if t in tasks}
    if prompts is not None:
        ps = set(prompts)
        prompt_keep = ps if prompt_keep is None else prompt_keep & ps
    if prompt_keep is not None:
        keep &= r["prompt_id"].isin(prompt_keep)
    models = cfg.models
    if drop_models is not None:
        dm = check(drop_models, cfg.models, "model")
        keep &= ~r["model"].isin(dm)
        models = [m for m in cfg.models if m not in dm]
    judges = cfg.judges
    if drop_judges is not None:
        dj = check(drop_judges, cfg.judges, "judge")
        keep &= ~((r["rater_kind"] == LLM_JUDGE) & r["rater"].isin(dj))
        judges = [j for j in cfg.judges if j not in dj]

    out = r[keep]
    if ref is not None:
        rk = pd.Series(True, index=ref.index)
        if dimensions is not None:
            rk &= ref["dimension"].isin(dims)
        if prompt_keep is not None:
            rk &= ref["prompt_id"].isin(prompt_keep)
        rk &= ref["model"].isin(models)
        ref = ref[rk].reset_index(drop=True)
    return replace(table, ratings=out.reset_index(drop=True), config=cfg.restrict(models, judges), reference=ref)
