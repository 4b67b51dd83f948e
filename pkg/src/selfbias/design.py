"""Design matrices for the judge-score regression and its variants.

One row per judge rating with a reference score.  Columns:

* intercept
* judge fixed effects (one judge left out, or sum-to-zero coded)
* judge-specific slopes on the reference score
* self-bias indicators, judge == model, for judges that are also models
* family-bias indicators, same family but judge != model
* dimension fixed effects
* optional length-control and spline-basis columns
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import linalg

from .dataset import CELL, DataError, RatingsTable

log = logging.getLogger(__name__)

KINDS = ("intercept", "judge_fe", "judge_slope", "self_bias", "family_bias", "dimension_fe",
         "length_ctrl", "spline_basis")


class DesignError(ValueError):
    pass


class NoOverlapError(DesignError):
    def __init__(self):
        super().__init__("no judge is also a model in the data: self-bias is not estimable")


@dataclass(frozen=True)
class ColumnMeta:
    kind: str
    judge_id: str | None = None
    family_id: str | None = None
    dimension_id: str | None = None
    basis_index: int | None = None

    @property
    def name(self) -> str:
        ids = [x for x in (self.judge_id, self.family_id, self.dimension_id) if x is not None]
        if self.basis_index is not None:
            ids.append(str(self.basis_index))
        return f"{self.kind}[{','.join(ids)}]" if ids else self.kind

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class DesignMatrix:
    """X, y and column/row metadata.

    ``rows`` has prompt_id, dimension, model, judge, reference (S) and level
    (raw judge level, NaN for continuous scores), aligned with X.
    """
    X: np.ndarray
    y: np.ndarray
    columns: list
    rows: pd.DataFrame = field(repr=False)
    dropped: list = field(default_factory=list)
    excluded_rows: dict = field(default_factory=dict)

    @classmethod
    def from_arrays(cls, X, y, columns: Sequence | None = None) -> "DesignMatrix":
        """Bare design from arrays; columns default to names x0, x1, ..."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float)
        if X.shape[0] != y.shape[0]:
            raise DesignError(f"X has {X.shape[0]} rows, y has {y.shape[0]}")
        cols = list(columns) if columns is not None else [f"x{i}" for i in range(X.shape[1])]
        return cls(X, y, cols, pd.DataFrame(index=range(X.shape[0])))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def row_keys(self) -> list[tuple]:
        return list(self.rows[["prompt_id", "dimension", "model", "judge"]].itertuples(index=False, name=None))

    def index(self, meta: ColumnMeta) -> int:
        return self.columns.index(meta)

    def column(self, meta: ColumnMeta) -> np.ndarray:
        return self.X[:, self.index(meta)]

    def of_kind(self, kind: str) -> list[ColumnMeta]:
        return [c for c in self.columns if c.kind == kind]

    def without_intercept(self) -> "DesignMatrix":
        keep = [i for i, c in enumerate(self.columns) if c.kind != "intercept"]
        return replace(self, X=self.X[:, keep], columns=[self.columns[i] for i in keep])

    def with_response(self, y) -> "DesignMatrix":
        y = np.asarray(y, dtype=float)
        if y.shape != (self.n,):
            raise DesignError(f"response has shape {y.shape}, expected ({self.n},)")
        return replace(self, y=y)

    def to_csv(self, path: str | os.PathLike) -> None:
        """Debug export: row keys, y and X with column names as header."""
        out = self.rows[["prompt_id", "dimension", "model", "judge"]].copy()
        out["y"] = self.y
        for i, c in enumerate(self.columns):
            out[c.name] = self.X[:, i]
        out.to_csv(path, index=False, float_format="%r", lineterminator="\n")


def _indicator_columns(values: np.ndarray, levels: Sequence[str], kind: str, attr: str,
                       coding: str, baseline: str | None):
    if len(levels) < 2:
        return [], []
    base = baseline if baseline is not None else levels[0]
    if base not in levels:
        raise DesignError(f"baseline {base!r} not among {kind} levels")
    cols, metas = [], []
    for lv in levels:
        if lv == base:
            continue
        col = (values == lv).astype(float)
        if coding == "sum":
            col -= (values == base)
        elif coding != "reference":
            raise DesignError(f"unknown coding {coding!r}")
        cols.append(col)
        metas.append(ColumnMeta(kind, **{attr: lv}))
    return cols, metas


def drop_dependent(X: np.ndarray, columns: list, tol: float = 1e-10):
    """Drop all-zero columns, then columns linearly dependent on earlier ones.

    Returns (X, columns, dropped) with dropped a list of (meta, reason).
    """
    dropped = []
    zero = ~np.any(X != 0, axis=0)
    for i in np.flatnonzero(zero):
        log.warning("dropping all-zero column %s", columns[i])
        dropped.append((columns[i], "all zero"))
    keep = list(np.flatnonzero(~zero))
    while keep:
        sub = X[:, keep]
        r = linalg.qr(sub, mode="r")[0]
        diag = np.abs(np.diag(r[: len(keep), : len(keep)]))
        norms = np.linalg.norm(sub, axis=0)
        bad = np.flatnonzero((diag <= tol * diag.max()) | (diag <= 1e-8 * norms))
        if not bad.size:
            break
        i = keep.pop(int(bad[0]))
        log.warning("dropping collinear column %s", columns[i])
        dropped.append((columns[i], "collinear"))
    return X[:, keep], [columns[i] for i in keep], dropped


def _fitting_rows(table: RatingsTable) -> tuple[pd.DataFrame, dict]:
    if table.reference is None:
        raise DesignError("table has no reference scores; run aggregate_reference first")
    jr = table.judge_ratings()
    total = len(jr)
    jr = jr[jr["score"].notna()]
    na_judge = total - len(jr)
    ref = table.reference.dropna(subset=["reference"])[CELL + ["reference"]]
    rows = jr.merge(ref, on=CELL, how="inner")
    no_ref = total - na_judge - len(rows)
    if na_judge or no_ref:
        log.info("excluded %d rows with missing judge score, %d without reference", na_judge, no_ref)
    rows = rows.rename(columns={"rater": "judge"}).sort_values(
        ["prompt_id", "dimension", "model", "judge"], kind="mergesort").reset_index(drop=True)
    rows = rows[["prompt_id", "dimension", "model", "judge", "reference", "level", "score", "token_length"]]
    return rows, {"missing_judge_score": int(na_judge), "missing_reference": int(no_ref)}


def build_design(table: RatingsTable, include_family: bool = True, dimension_fe: bool = True,
                 intercept: bool = True, coding: str = "reference", baseline_judge: str | None = None,
                 baseline_dimension: str | None = None) -> DesignMatrix:
    """Design matrix for judge score ~ judge FE + judge slope * reference + self + family + dimension FE.

    Fixed effects use reference coding with the lexicographically first
    judge/dimension left out unless ``coding="sum"`` or another baseline is
    given.  All-zero and collinear columns are dropped and recorded.
    """
    rows, excluded = _fitting_rows(table)
    if rows.empty:
        raise DesignError("no judge ratings with a reference score")
    fam = table.config.family_of
    judge = rows["judge"].to_numpy(dtype=object)
    model = rows["model"].to_numpy(dtype=object)
    dim = rows["dimension"].to_numpy(dtype=object)
    S = rows["reference"].to_numpy(dtype=float)
    judges = sorted(set(judge))
    models = sorted(set(model))
    overlap = [j for j in judges if j in set(models)]
    if not overlap:
        raise NoOverlapError()

    cols, metas = [], []
    if intercept:
        cols.append(np.ones(len(rows)))
        metas.append(ColumnMeta("intercept"))
    c, m = _indicator_columns(judge, judges, "judge_fe", "judge_id", coding, baseline_judge)
    cols += c
    metas += m
    for j in judges:
        cols.append(np.where(judge == j, S, 0.0))
        metas.append(ColumnMeta("judge_slope", judge_id=j))
    for j in overlap:
        cols.append(((judge == j) & (model == j)).astype(float))
        metas.append(ColumnMeta("self_bias", judge_id=j))
    if include_family:
        fj = np.array([fam[x] for x in judge], dtype=object)
        fm = np.array([fam[x] for x in model], dtype=object)
        for f in sorted(set(fam[j] for j in judges)):
            eligible = any(fam[j] == f and fam[mm] == f and mm != j for j in judges for mm in models)
            if eligible:
                cols.append(((fj == f) & (fm == f) & (judge != model)).astype(float))
                metas.append(ColumnMeta("family_bias", family_id=f))
    if dimension_fe:
        c, m = _indicator_columns(dim, sorted(set(dim)), "dimension_fe", "dimension_id", coding,
                                  baseline_dimension)
        cols += c
        metas += m

    X = np.column_stack(cols)
    X, metas, dropped = drop_dependent(X, metas)
    y = rows["score"].to_numpy(dtype=float)
    return DesignMatrix(X, y, metas, rows, dropped, excluded)


# length control


def approximate_token_length(text: str) -> int:
    """Whitespace token count, a rough stand-in when subword token lengths are unavailable."""
    return len(text.split())


def compute_length_features(table: RatingsTable, mode: str = "prompt") -> pd.DataFrame:
    """tanh of standardized completion length, per (prompt, model).

    ``mode="prompt"`` standardizes within each prompt across its models
    (population variance); ``mode="global"`` uses the mean and variance over
    all completions.  Zero variance gives a feature of 0.
    """
    jr = table.judge_ratings()
    lens = jr.groupby(["prompt_id", "model"], sort=True)["token_length"]
    spread = lens.max() - lens.min()
    if (spread.fillna(0) > 0).any():
        bad = spread[spread > 0].index[0]
        raise DataError(f"inconsistent token_length for completion {bad}")
    frame = lens.first().rename("token_length").reset_index()
    missing = frame["token_length"].isna()
    if missing.any():
        prompts = sorted(frame.loc[missing, "prompt_id"].unique())
        raise DataError("missing token_length for prompts: " + ", ".join(prompts[:20])
                        + (" ..." if len(prompts) > 20 else ""))
    if (frame["token_length"] < 0).any():
        raise DataError("negative token_length")
    length = frame["token_length"].to_numpy(dtype=float)
    if mode == "prompt":
        g = frame.groupby("prompt_id", sort=False)["token_length"]
        mean = g.transform("mean").to_numpy()
        sd = g.transform(lambda s: s.std(ddof=0)).to_numpy()
    elif mode == "global":
        mean = np.full_like(length, length.mean())
        sd = np.full_like(length, length.std())
    else:
        raise ValueError("mode must be 'prompt' or 'global'")
    z = np.divide(length - mean, sd, out=np.zeros_like(length), where=sd > 0)
    frame["z"] = z
    frame["feature"] = np.tanh(z)
    return frame


def add_length_control(design: DesignMatrix, features: pd.DataFrame, per_judge: bool = True) -> DesignMatrix:
    """Append length columns: one per judge (feature x judge indicator) or one shared."""
    merged = design.rows[["prompt_id", "model"]].merge(
        features[["prompt_id", "model", "feature"]], on=["prompt_id", "model"], how="left")
    if len(merged) != design.n or merged["feature"].isna().any():
        raise DesignError("length features do not cover every design row")
    feat = merged["feature"].to_numpy(dtype=float)
    if per_judge:
        judge = design.rows["judge"].to_numpy(dtype=object)
        judges = sorted(set(judge))
        new = [np.where(judge == j, feat, 0.0) for j in judges]
        metas = [ColumnMeta("length_ctrl", judge_id=j) for j in judges]
    else:
        new = [feat]
        metas = [ColumnMeta("length_ctrl")]
    X = np.column_stack([design.X] + new)
    X, cols, dropped = drop_dependent(X, list(design.columns) + metas)
    return replace(design, X=X, columns=cols, dropped=list(design.dropped) + dropped)


# natural cubic splines


def natural_spline_knots(s, num_interior_knots: int = 4) -> np.ndarray:
    """Boundary knots at min/max, interior knots at equally spaced quantiles (deduplicated)."""
    s = np.asarray(s, dtype=float)
    distinct = np.unique(s)
    if distinct.size < 2:
        raise DesignError("degenerate smooth: fewer than two distinct values")
    lo, hi = distinct[0], distinct[-1]
    probs = np.linspace(0, 1, num_interior_knots + 2)[1:-1]
    interior = np.unique(np.quantile(s, probs)) if num_interior_knots else np.empty(0)
    interior = interior[(interior > lo) & (interior < hi)]
    return np.concatenate([[lo], interior, [hi]])


def natural_spline_basis(x, knots) -> np.ndarray:
    """Truncated-power natural cubic spline basis without the constant.

    Columns: x, then d_k(x) - d_{K-1}(x) for k = 1..K-2 where
    d_k(x) = ((x - t_k)_+^3 - (x - t_K)_+^3) / (t_K - t_k).
    Linear beyond the boundary knots.
    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(knots, dtype=float)
    K = t.size

    def d(k):
        return (np.clip(x - t[k], 0, None) ** 3 - np.clip(x - t[-1], 0, None) ** 3) / (t[-1] - t[k])

    cols = [x]
    if K > 2:
        last = d(K - 2)
        cols += [d(k) - last for k in range(K - 2)]
    return np.column_stack(cols)


def spline_basis(s_values, num_interior_knots: int = 4) -> np.ndarray:
    """Natural cubic spline basis with ``num_interior_knots + 1`` columns (fewer if knots tie)."""
    knots = natural_spline_knots(s_values, num_interior_knots)
    return natural_spline_basis(s_values, knots)


def gam_design(design: DesignMatrix, num_interior_knots: int = 4) -> DesignMatrix:
    """Replace each judge-slope column with judge x spline-basis columns.

    Knots come from the reference scores of all rows, so every judge shares
    one basis.  With zero interior knots the basis is the reference score
    itself and X is unchanged.
    """
    S = design.rows["reference"].to_numpy(dtype=float)
    knots = natural_spline_knots(S, num_interior_knots)
    basis = natural_spline_basis(S, knots)
    judge = design.rows["judge"].to_numpy(dtype=object)
    cols, metas = [], []
    for i, meta in enumerate(design.columns):
        if meta.kind != "judge_slope":
            cols.append(design.X[:, i])
            metas.append(meta)
            continue
        mask = judge == meta.judge_id
        for b in range(basis.shape[1]):
            cols.append(np.where(mask, basis[:, b], 0.0))
            metas.append(ColumnMeta("spline_basis", judge_id=meta.judge_id, basis_index=b))
    X, metas, dropped = drop_dependent(np.column_stack(cols), metas)
    return replace(design, X=X, columns=metas, dropped=list(design.dropped) + dropped)
