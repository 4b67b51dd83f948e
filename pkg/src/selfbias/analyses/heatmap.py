"""Judge-by-model mean score tables."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..dataset import RatingsTable, aggregate_reference

HUMAN_ROW = "human"


@dataclass(frozen=True)
class Heatmap:
    """Raw means (rows: judges then ``human``; columns: models) and their row-normalized display form.

    ``constant_rows`` lists rows whose min equals max; their normalized
    values are NaN.
    """
    raw: pd.DataFrame
    row_normalized: pd.DataFrame
    diagonal: pd.DataFrame
    constant_rows: tuple[str, ...]


def heatmap_means(table: RatingsTable, dimensions=None) -> Heatmap:
    jr = table.judge_ratings()
    if dimensions is not None:
        jr = jr[jr["dimension"].isin(list(dimensions))]
    models = sorted(set(table.models))
    raw = jr.pivot_table(index="rater", columns="model", values="score", aggfunc="mean", sort=True)
    if table.reference is None:
        table = aggregate_reference(table)
    if table.reference is not None:
        ref = table.reference
        if dimensions is not None:
            ref = ref[ref["dimension"].isin(list(dimensions))]
        human = ref.groupby("model", sort=True)["reference"].mean()
        raw.loc[HUMAN_ROW] = human
    raw = raw.reindex(columns=models)
    raw.index.name = "rater"
    raw.columns.name = None

    lo = raw.min(axis=1)
    hi = raw.max(axis=1)
    span = hi - lo
    constant = tuple(raw.index[(span == 0).to_numpy()])
    norm = raw.sub(lo, axis=0).div(span.where(span > 0), axis=0)
    diag = pd.DataFrame(np.equal.outer(raw.index.to_numpy(dtype=object), raw.columns.to_numpy(dtype=object)),
                        index=raw.index, columns=raw.columns)
    return Heatmap(raw, norm, diag, constant)
