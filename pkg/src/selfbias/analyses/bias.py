"""Headline bias fit, slices, robustness variants and debiasing."""
from __future__ import annotations

import logging
from dataclasses import replace
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from ..dataset import CELL, HUMAN, LLM_JUDGE, DataError, RatingsTable, aggregate_reference, filter_table
from ..design import (ColumnMeta, DesignError, DesignMatrix, NoOverlapError, add_length_control,
                      build_design, compute_length_features, gam_design)
from ..estimators import ols_fit, ordinal_fit, wald
from .report import BiasReport

log = logging.getLogger(__name__)

LEVEL = 0.90
WEAKEST_MODELS = ("mistral-7b", "llama3-8b")
WEAKEST_MODELS_WITH_CLAUDE_V2 = ("claude-v2", "mistral-7b", "llama3-8b")


def _ensure_reference(table: RatingsTable) -> RatingsTable:
    if table.reference is None:
        table = aggregate_reference(table)
    return table


def _cluster_keys(design: DesignMatrix, cluster_by: str | None):
    if cluster_by is None:
        return None
    cols = {"prompt": ["prompt_id"], "completion": ["prompt_id", "model"],
            "judgment": ["prompt_id", "model", "judge"]}[cluster_by]
    return pd.Series(list(design.rows[cols].itertuples(index=False, name=None))).astype(str).to_numpy()


def _candidates(design: DesignMatrix, kind: str) -> list[ColumnMeta]:
    metas = [c for c in design.columns if c.kind == kind] + [c for c, _ in design.dropped if c.kind == kind]
    key = (lambda c: c.judge_id) if kind in ("self_bias", "length_ctrl") else (lambda c: c.family_id or "")
    return sorted(set(metas), key=key)


def _intervals(fit, design: DesignMatrix, kind: str, level: float) -> dict:
    out = {}
    for meta in _candidates(design, kind):
        key = meta.judge_id if kind in ("self_bias", "length_ctrl") else meta.family_id
        if meta in fit.columns:
            out[key] = wald(fit.coef(meta), fit.se(meta), level)
        else:
            out[key] = None
    return out


def _fit_meta(fit, design: DesignMatrix, cov_type: str, level: float, estimator: str) -> dict:
    meta = {
        "estimator": estimator,
        "n": int(design.n),
        "p": int(design.p),
        "cov_type": cov_type,
        "level": level,
        "dropped_columns": [[c.name, why] for c, why in design.dropped],
        "excluded_rows": dict(design.excluded_rows),
    }
    if hasattr(fit, "condition_number"):
        meta["condition_number"] = fit.condition_number
    return meta


def report_from_design(design: DesignMatrix, table: RatingsTable, slice_label: str = "all",
                       cov_type: str = "HC1", level: float = LEVEL, cluster_by: str | None = None,
                       estimator: str = "ols") -> BiasReport:
    """OLS + robust covariance on a prepared design, assembled into a report."""
    fit = ols_fit(design, cov_type="cluster" if cluster_by else cov_type,
                  cluster_keys=_cluster_keys(design, cluster_by))
    used_cov = f"cluster:{cluster_by}" if cluster_by else cov_type
    self_b = _intervals(fit, design, "self_bias", level)
    fam_b = _intervals(fit, design, "family_bias", level)
    extra = {}
    if any(c.kind == "length_ctrl" for c in design.columns + [c for c, _ in design.dropped]):
        extra["length"] = _intervals(fit, design, "length_ctrl", level)
    meta = _fit_meta(fit, design, used_cov, level, estimator)
    meta["not_estimable"] = [k for k, v in self_b.items() if v is None]
    fam_of = {j: table.config.family_of[j] for j in sorted(set(design.rows["judge"]))}
    return BiasReport(slice_label, self_b, fam_b, meta, fam_of, extra, fit=fit)


def estimate_bias(table: RatingsTable, include_family: bool = True, dimension_fe: bool = True,
                  cov_type: str = "HC1", level: float = LEVEL, slice_label: str = "all",
                  cluster_by: str | None = None, coding: str = "reference") -> BiasReport:
    """Fit the judge-score regression and report self- and family-bias Wald intervals.

    ``cluster_by`` ("prompt", "completion" or "judgment") switches to
    cluster-robust covariance; the default is White HC1.
    """
    table = _ensure_reference(table)
    design = build_design(table, include_family=include_family, dimension_fe=dimension_fe, coding=coding)
    return report_from_design(design, table, slice_label, cov_type, level, cluster_by)


def _flagged(label: str, reason: str) -> BiasReport:
    return BiasReport(label, {}, {}, {"n": 0, "error": reason}, flags=(reason,))


def slice_bias(table: RatingsTable, by: str = "dimension", **kw) -> list[BiasReport]:
    """One fit per dimension (without dimension effects) or per task type (with them)."""
    table = _ensure_reference(table)
    if by == "dimension":
        slices = [(f"dimension:{d}", dict(dimensions=[d]), False) for d in table.dimensions]
    elif by == "task":
        tasks = sorted({table.config.task_of[p] for p in table.prompts if p in table.config.task_of})
        if not tasks:
            raise DataError("no task types configured for the prompts in the table")
        slices = [(f"task:{t}", dict(task_types=[t]), True) for t in tasks]
    else:
        raise ValueError("by must be 'dimension' or 'task'")
    reports = []
    for label, spec, dim_fe in slices:
        sub = filter_table(table, **spec)
        try:
            reports.append(estimate_bias(sub, dimension_fe=dim_fe, slice_label=label, **kw))
        except (NoOverlapError, DesignError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("slice %s not estimable: %s", label, exc)
            reports.append(_flagged(label, str(exc)))
    return reports


def robustness_length(table: RatingsTable, per_judge: bool = True, mode: str = "prompt",
                      level: float = LEVEL, cov_type: str = "HC1", **kw) -> BiasReport:
    """Headline fit plus tanh-normalized length terms (per judge by default)."""
    table = _ensure_reference(table)
    design = build_design(table, **kw)
    features = compute_length_features(table, mode=mode)
    design = add_length_control(design, features, per_judge=per_judge)
    return report_from_design(design, table, "robustness:length", cov_type, level)


def robustness_gam(table: RatingsTable, num_interior_knots: int = 4, level: float = LEVEL,
                   cov_type: str = "HC1", **kw) -> BiasReport:
    """Judge slopes replaced by judge-specific natural cubic splines of the reference score."""
    table = _ensure_reference(table)
    design = gam_design(build_design(table, **kw), num_interior_knots)
    rep = report_from_design(design, table, "robustness:gam", cov_type, level, estimator="gam")
    rep.fit_meta["num_interior_knots"] = num_interior_knots
    return rep


def robustness_ordinal(table: RatingsTable, level: float = LEVEL,
                       dimensions: Sequence[str] | None = None) -> list[BiasReport]:
    """Per-dimension cumulative-logit fits on raw judge levels.

    Covariates are those of the per-dimension linear model without the
    intercept.  Coefficients are on the latent logit scale.
    """
    table = _ensure_reference(table)
    reports = []
    for d in dimensions or table.dimensions:
        label = f"robustness:ordinal:dimension:{d}"
        sub = filter_table(table, dimensions=[d])
        try:
            design = build_design(sub, dimension_fe=False).without_intercept()
        except (NoOverlapError, DesignError) as exc:
            reports.append(_flagged(label, str(exc)))
            continue
        levels = design.rows["level"].to_numpy(dtype=float)
        if np.isnan(levels).any():
            raise DataError(f"ordinal fit needs raw judge levels ({d} has continuous scores; discretize first)")
        fit = ordinal_fit(design, levels.astype(int))
        self_b = _intervals(fit, design, "self_bias", level)
        fam_b = _intervals(fit, design, "family_bias", level)
        meta = {
            "estimator": "ordinal_logit", "n": int(design.n), "p": int(design.p), "cov_type": "sandwich",
            "level": level, "dropped_columns": [[c.name, why] for c, why in design.dropped],
            "excluded_rows": dict(design.excluded_rows), "cutpoints": fit.cutpoints.tolist(),
            "levels": fit.levels.tolist(), "converged": bool(fit.converged), "iterations": int(fit.iterations),
            "log_likelihood": fit.log_likelihood,
            "not_estimable": [k for k, v in self_b.items() if v is None],
        }
        flags = () if fit.converged else ("not converged",)
        fam_of = {j: table.config.family_of[j] for j in sorted(set(design.rows["judge"]))}
        reports.append(BiasReport(label, self_b, fam_b, meta, fam_of, flags=flags, fit=fit))
    return reports


def lofo_reference(table: RatingsTable, family: str) -> RatingsTable:
    """Leave one family out and use its judges' mean score as the reference.

    Completions by the family's models and judgments by its judges leave the
    fitting rows; each remaining (prompt, dimension, model) cell gets the
    mean normalized score the family's judges gave it.  Cells the family
    never rated are dropped.
    """
    cfg = table.config
    fam_judges = [j for j in cfg.judges if cfg.family_of[j] == family]
    if not fam_judges:
        raise DataError(f"family {family!r} has no judges")
    fam_models = [m for m in cfg.models if cfg.family_of[m] == family]
    jr = table.judge_ratings()
    by_family = jr[jr["rater"].isin(fam_judges) & jr["score"].notna()]
    g = by_family.groupby(CELL, sort=True)["score"]
    ref = pd.DataFrame({"reference": g.mean(), "n_annotators": g.count()}).reset_index()

    rest = filter_table(table, drop_models=fam_models or None, drop_judges=fam_judges)
    ratings = rest.ratings[rest.ratings["rater_kind"] != HUMAN]
    ref = ref[ref["model"].isin(rest.config.models)]
    cells = ratings.loc[ratings["rater_kind"] == LLM_JUDGE, CELL].drop_duplicates()
    unrated = len(cells.merge(ref[CELL], on=CELL, how="left", indicator=True).query("_merge == 'left_only'"))
    if unrated:
        log.warning("%d cells have no rating from family %s and are dropped", unrated, family)
        keep = ratings.merge(ref[CELL], on=CELL, how="left", indicator=True)["_merge"].eq("both").to_numpy()
        keep |= (ratings["rater_kind"] != LLM_JUDGE).to_numpy()
        ratings = ratings[keep]
    out = replace(rest, ratings=ratings.reset_index(drop=True), reference=None)
    return out.with_reference(ref.reset_index(drop=True), strict=False)


def robustness_lofo(table: RatingsTable, families: Iterable[str] | None = None, **kw) -> list[BiasReport]:
    """One report per excluded family, each using that family's judges as reference."""
    cfg = table.config
    if families is None:
        families = sorted({cfg.family_of[j] for j in cfg.judges})
    reports = []
    for f in families:
        label = f"reference:family-{f}-judges"
        try:
            reports.append(estimate_bias(lofo_reference(table, f), slice_label=label, **kw))
        except (NoOverlapError, DesignError, ValueError, np.linalg.LinAlgError) as exc:
            reports.append(_flagged(label, str(exc)))
    return reports


def robustness_drop_models(table: RatingsTable, models: Sequence[str] = WEAKEST_MODELS, **kw) -> BiasReport:
    """Refit without the completions of the given (weakest) models."""
    sub = filter_table(_ensure_reference(table), drop_models=models)
    return estimate_bias(sub, slice_label="robustness:drop-models:" + "+".join(models), **kw)


def debias_scores(table: RatingsTable, report: BiasReport) -> pd.DataFrame:
    """Subtract estimated self- and family-bias from each judge score.

    Point estimates only; ``None`` intervals subtract nothing.  Adjusted
    scores are not clamped; ``out_of_range`` flags values outside [0, 1].
    """
    fam = table.config.family_of
    jr = table.judge_ratings()
    judge = jr["rater"].to_numpy(dtype=object)
    model = jr["model"].to_numpy(dtype=object)
    gamma = {j: (iv.estimate if iv is not None else 0.0) for j, iv in report.self_bias.items()}
    lam = {f: (iv.estimate if iv is not None else 0.0) for f, iv in report.family_bias.items()}
    is_self = judge == model
    same_fam = np.array([fam[j] == fam[m] for j, m in zip(judge, model)], dtype=bool) & ~is_self
    self_adj = np.where(is_self, [gamma.get(j, 0.0) for j in judge], 0.0)
    fam_adj = np.where(same_fam, [lam.get(fam[j], 0.0) for j in judge], 0.0)
    out = jr[["prompt_id", "dimension", "model", "rater", "score"]].rename(columns={"rater": "judge"})
    out["self_adjustment"] = self_adj
    out["family_adjustment"] = fam_adj
    out["adjusted"] = out["score"] - self_adj - fam_adj
    out["out_of_range"] = (out["adjusted"] < 0) | (out["adjusted"] > 1)
    return out.reset_index(drop=True)


def debiased_table(table: RatingsTable, report: BiasReport) -> RatingsTable:
    """The table with judge scores replaced by their debiased values (levels cleared)."""
    adj = debias_scores(table, report)
    r = table.ratings.copy()
    mask = (r["rater_kind"] == LLM_JUDGE).to_numpy()
    # judge_ratings() keeps the canonical row order, so positions align
    r.loc[mask, "score"] = adj["adjusted"].to_numpy()
    r.loc[mask, "level"] = np.nan
    return replace(table, ratings=r)
