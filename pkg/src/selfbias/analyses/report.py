"""Bias reports and their JSON / flat CSV forms."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np
import pandas as pd

from ..estimators import WaldInterval

FLAT_COLUMNS = ["slice", "judge_or_family", "kind", "family", "estimate", "se", "lower", "upper",
                "reject_zero", "p_value", "n"]


@dataclass(frozen=True)
class BiasReport:
    """Self-bias (per judge) and family-bias (per family) intervals for one fit.

    A judge or family whose column could not be estimated maps to ``None``.
    ``extra`` holds further interval groups, e.g. ``{"length": {judge: ...}}``.
    """
    slice_label: str
    self_bias: Mapping[str, WaldInterval | None]
    family_bias: Mapping[str, WaldInterval | None]
    fit_meta: Mapping[str, Any]
    family_of: Mapping[str, str] = field(default_factory=dict)
    extra: Mapping[str, Mapping[str, WaldInterval | None]] = field(default_factory=dict)
    flags: tuple[str, ...] = ()
    fit: Any = field(default=None, repr=False, compare=False)

    @property
    def not_estimable(self) -> list[str]:
        return [k for k, v in self.self_bias.items() if v is None]

    def to_dict(self) -> dict:
        def group(g):
            return {k: (None if v is None else v.to_dict()) for k, v in sorted(g.items())}

        return {
            "slice": self.slice_label,
            "self_bias": group(self.self_bias),
            "family_bias": group(self.family_bias),
            "extra": {k: group(v) for k, v in sorted(self.extra.items())},
            "family_of": dict(sorted(self.family_of.items())),
            "fit_meta": _jsonable(self.fit_meta),
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "BiasReport":
        def group(g):
            return {k: (None if v is None else WaldInterval(**v)) for k, v in g.items()}

        return cls(d["slice"], group(d["self_bias"]), group(d["family_bias"]), d.get("fit_meta", {}),
                   d.get("family_of", {}), {k: group(v) for k, v in d.get("extra", {}).items()},
                   tuple(d.get("flags", ())))

    def rows(self) -> list[dict]:
        n = self.fit_meta.get("n")
        out = []
        groups = [("self_bias", self.self_bias), ("family_bias", self.family_bias)]
        groups += [(k, v) for k, v in sorted(self.extra.items())]
        for kind, g in groups:
            for key, iv in sorted(g.items()):
                fam = key if kind == "family_bias" else self.family_of.get(key, "")
                row = {"slice": self.slice_label, "judge_or_family": key, "kind": kind, "family": fam, "n": n}
                if iv is None:
                    row.update(estimate=None, se=None, lower=None, upper=None, reject_zero=None, p_value=None)
                else:
                    row.update(estimate=iv.estimate, se=iv.std_error, lower=iv.lower, upper=iv.upper,
                               reject_zero=iv.reject_zero, p_value=iv.p_value)
                out.append(row)
        return out


def _jsonable(x):
    if isinstance(x, Mapping):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, np.generic):
        x = x.item()
    if isinstance(x, float) and math.isnan(x):
        return None
    return x


def reports_frame(reports: Iterable[BiasReport]) -> pd.DataFrame:
    rows = [r for rep in reports for r in rep.rows()]
    return pd.DataFrame(rows, columns=FLAT_COLUMNS)


def format_value(v) -> str:
    """Shortest round-trip text for floats; empty for missing."""
    if v is None or (isinstance(v, (float, np.floating)) and math.isnan(v)):
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def frame_to_csv_text(frame: pd.DataFrame) -> str:
    lines = [",".join(frame.columns)]
    for row in frame.itertuples(index=False):
        lines.append(",".join(_csv_field(format_value(v)) for v in row))
    return "\n".join(lines) + "\n"


def _csv_field(s: str) -> str:
    return f'"{s}"' if ("," in s or '"' in s) else s


def write_reports_json(reports: Iterable[BiasReport], path: str | os.PathLike) -> None:
    atomic_write_text(path, json.dumps([r.to_dict() for r in reports], indent=2, allow_nan=False) + "\n")


def read_reports_json(path: str | os.PathLike) -> list[BiasReport]:
    with open(path) as fh:
        raw = json.load(fh)
    if isinstance(raw, Mapping):
        raw = [raw]
    return [BiasReport.from_dict(d) for d in raw]


def write_reports_csv(reports: Iterable[BiasReport], path: str | os.PathLike) -> None:
    atomic_write_text(path, frame_to_csv_text(reports_frame(reports)))
