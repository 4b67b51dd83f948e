"""Annotation-quality and rank-correlation metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from ..dataset import REFERENCE_RATER, RatingsTable, aggregate_reference

METRICS = ("interval", "ordinal")


def _clean_items(items: Iterable[Iterable]) -> list[np.ndarray]:
    out = []
    for it in items:
        v = np.asarray([x for x in it if x is not None], dtype=float)
        out.append(v[~np.isnan(v)])
    return out


def coincidence_matrix(items: Iterable[Iterable]) -> tuple[np.ndarray, np.ndarray]:
    """Value set and coincidence matrix; units with fewer than two ratings are skipped."""
    units = [u for u in _clean_items(items) if len(u) >= 2]
    values = np.unique(np.concatenate(units)) if units else np.empty(0)
    o = np.zeros((len(values), len(values)))
    for u in units:
        counts = np.bincount(np.searchsorted(values, u), minlength=len(values)).astype(float)
        pairs = np.outer(counts, counts) - np.diag(counts)
        o += pairs / (len(u) - 1)
    return values, o


def _distance(values: np.ndarray, marginals: np.ndarray, metric: str) -> np.ndarray:
    if metric == "interval":
        return (values[:, None] - values[None, :]) ** 2
    if metric == "ordinal":
        cum = np.concatenate([[0.0], np.cumsum(marginals)])
        c = np.arange(len(values))
        lo, hi = np.minimum.outer(c, c), np.maximum.outer(c, c)
        between = cum[hi + 1] - cum[lo]
        return (between - (marginals[:, None] + marginals[None, :]) / 2.0) ** 2
    raise ValueError(f"metric must be one of {METRICS}")


def krippendorff_alpha(items: Iterable[Iterable], metric: str = "interval") -> float:
    """Krippendorff's alpha from the coincidence matrix, tolerating missing ratings.

    ``items`` holds one collection of ratings per unit; ``None``/NaN entries
    are missing.  Returns NaN when expected disagreement is zero.
    """
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}")
    values, o = coincidence_matrix(items)
    n_units = sum(1 for u in _clean_items(items) if len(u) >= 2)
    if n_units < 2:
        raise ValueError("need at least two items with two or more ratings")
    marg = o.sum(axis=1)
    n = marg.sum()
    delta = _distance(values, marg, metric)
    d_obs = (o * delta).sum() / n
    d_exp = (np.outer(marg, marg) * delta).sum() / (n * (n - 1))
    if d_exp == 0:
        return float("nan")
    return float(1.0 - d_obs / d_exp)


def observed_agreement(items: Iterable[Iterable]) -> float:
    """Share of items (with at least two ratings) on which every rater gave the same level."""
    units = [u for u in _clean_items(items) if len(u) >= 2]
    if not units:
        return float("nan")
    return float(np.mean([np.all(u == u[0]) for u in units]))


def spearman_rho(x, y) -> float:
    """Pearson correlation of midranks; NaN when either vector is constant."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("x and y must have the same length")
    ok = ~(np.isnan(x) | np.isnan(y))
    rx, ry = rankdata(x[ok]), rankdata(y[ok])
    if len(rx) < 2 or np.ptp(rx) == 0 or np.ptp(ry) == 0:
        return float("nan")
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    return float((rx @ ry) / math.sqrt((rx @ rx) * (ry @ ry)))


@dataclass(frozen=True)
class GoldResult:
    accuracy: float
    correlation: float
    n_annotations: int
    n_items: int


def in_gold_range(annotation: float, gold: Sequence[float]) -> bool:
    g = np.asarray(gold, dtype=float)
    g = g[~np.isnan(g)]
    return bool(g.size and g.min() <= annotation <= g.max())


def gold_accuracy(annotations: Mapping[object, Sequence[float]],
                  gold_passes: Mapping[object, Sequence[float]]) -> GoldResult:
    """Gold-range accuracy and mean-vs-mean Spearman on items present in both maps.

    The gold range of an item is [min, max] of its expert passes (inclusive).
    """
    hits = []
    ann_means, gold_means = [], []
    for item in sorted(set(annotations) & set(gold_passes), key=str):
        ann = np.asarray([a for a in annotations[item] if a is not None], dtype=float)
        ann = ann[~np.isnan(ann)]
        gold = np.asarray(gold_passes[item], dtype=float)
        gold = gold[~np.isnan(gold)]
        if ann.size == 0 or gold.size == 0:
            continue
        hits.extend((gold.min() <= ann) & (ann <= gold.max()))
        ann_means.append(ann.mean())
        gold_means.append(gold.mean())
    acc = float(np.mean(hits)) if hits else float("nan")
    rho = spearman_rho(ann_means, gold_means) if len(ann_means) >= 2 else float("nan")
    return GoldResult(acc, rho, len(hits), len(ann_means))


@dataclass(frozen=True)
class DimensionAgreement:
    krippendorff_alpha: float
    observed_agreement: float
    gold_accuracy: float = float("nan")
    gold_correlation: float = float("nan")
    n_items: int = 0


@dataclass(frozen=True)
class AgreementReport:
    per_dimension: Mapping[str, DimensionAgreement]
    metric: str = "interval"
    extra_alpha: Mapping[str, Mapping[str, float]] = field(default_factory=dict)

    @property
    def averages(self) -> dict[str, float]:
        out = {}
        for name in ("krippendorff_alpha", "observed_agreement", "gold_accuracy", "gold_correlation"):
            vals = np.array([getattr(v, name) for v in self.per_dimension.values()], dtype=float)
            vals = vals[~np.isnan(vals)]
            out[name] = float(vals.mean()) if vals.size else float("nan")
        return out

    def to_frame(self) -> pd.DataFrame:
        rows = [{"dimension": d, **{k: getattr(v, k) for k in
                 ("krippendorff_alpha", "observed_agreement", "gold_accuracy", "gold_correlation", "n_items")}}
                for d, v in sorted(self.per_dimension.items())]
        rows.append({"dimension": "average", **self.averages, "n_items": sum(v.n_items for v in self.per_dimension.values())})
        return pd.DataFrame(rows)


def _human_items(table: RatingsTable, dimension: str) -> pd.Series:
    h = table.human_ratings()
    h = h[(h["dimension"] == dimension) & (h["rater"] != REFERENCE_RATER)]
    return h.groupby(["prompt_id", "model"], sort=True)["level"].agg(list)


def agreement_report(table: RatingsTable, gold: pd.DataFrame | None = None,
                     metric: str = "interval", both_metrics: bool = False) -> AgreementReport:
    """Per-dimension inter-annotator agreement of the human rows.

    ``gold`` is an optional frame with prompt_id, dimension, model, level
    holding the expert passes.  With ``both_metrics`` the alpha under each
    difference function is kept in ``extra_alpha``.
    """
    per_dim, extra = {}, {}
    for d in table.dimensions:
        items = _human_items(table, d)
        if items.empty:
            continue
        try:
            alpha = krippendorff_alpha(items.tolist(), metric)
        except ValueError:
            alpha = float("nan")
        if both_metrics:
            extra[d] = {}
            for m in METRICS:
                try:
                    extra[d][m] = krippendorff_alpha(items.tolist(), m)
                except ValueError:
                    extra[d][m] = float("nan")
        agree = observed_agreement(items.tolist())
        acc = corr = float("nan")
        if gold is not None:
            g = gold[gold["dimension"] == d].groupby(["prompt_id", "model"], sort=True)["level"].agg(list)
            res = gold_accuracy(items.to_dict(), g.to_dict())
            acc, corr = res.accuracy, res.correlation
        per_dim[d] = DimensionAgreement(alpha, agree, acc, corr, len(items))
    return AgreementReport(per_dim, metric, extra)


def judge_reference_correlation(table: RatingsTable) -> pd.DataFrame:
    """Spearman correlation between each judge's scores and the reference, per dimension."""
    if table.reference is None:
        table = aggregate_reference(table)
    if table.reference is None:
        raise ValueError("no reference scores available")
    jr = table.judge_ratings().merge(table.reference, on=["prompt_id", "dimension", "model"], how="inner")
    rows = []
    for (judge, dim), g in jr.groupby(["rater", "dimension"], sort=True):
        rows.append({"judge": judge, "dimension": dim, "rho": spearman_rho(g["score"], g["reference"]),
                     "n": int((g["score"].notna() & g["reference"].notna()).sum())})
    return pd.DataFrame(rows, columns=["judge", "dimension", "rho", "n"])
