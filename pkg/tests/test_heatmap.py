import numpy as np
import pandas as pd
import pytest

from selfbias.analyses.bias import estimate_bias
from selfbias.analyses.heatmap import HUMAN_ROW, heatmap_means
from selfbias.dataset import ModelConfig, RatingsTable, ScaleDef
from selfbias.synth import two_model_config, nine_model_config, simulate


def _table(rows, judges=("j",), models=("m",)):
    cfg = ModelConfig(tuple(models), tuple(judges), {x: "F" for x in {*judges, *models}})
    frame = pd.DataFrame([{"prompt_id": p, "dimension": "d", "model": m, "rater": j, "rater_kind": "llm_judge",
                           "level": lv} for p, m, j, lv in rows])
    return RatingsTable.from_frame(frame, {"d": ScaleDef("d", 5)}, cfg)


def test_single_cell():
    hm = heatmap_means(_table([("p", "m", "j", 4)]))
    assert hm.raw.shape == (1, 1)
    assert hm.raw.loc["j", "m"] == 0.75
    assert hm.constant_rows == ("j",)


def test_constant_row_flagged():
    rows = [("p", m, j, lv) for m, j, lv in [("a", "a", 3), ("b", "a", 3), ("a", "b", 1), ("b", "b", 5)]]
    hm = heatmap_means(_table(rows, judges=("a", "b"), models=("a", "b")))
    assert hm.constant_rows == ("a",)
    assert hm.row_normalized.loc["a"].isna().all()
    assert list(hm.row_normalized.loc["b"]) == [0.0, 1.0]
    assert hm.diagonal.loc["a", "a"] and not hm.diagonal.loc["a", "b"]


def test_paper_layout():
    t = simulate(nine_model_config(num_prompts=10, seed=0, lengths=False))
    hm = heatmap_means(t)
    assert list(hm.raw.index) == sorted(t.judges) + [HUMAN_ROW]
    assert list(hm.raw.columns) == sorted(t.models)
    assert hm.raw.shape == (10, 9)
    assert int(hm.diagonal.to_numpy().sum()) == 9
    norm = hm.row_normalized.to_numpy()
    assert np.nanmin(norm) == 0 and np.nanmax(norm) == 1
    jr = t.judge_ratings()
    cell = jr[(jr["rater"] == "gpt-4o") & (jr["model"] == "llama3-8b")]["score"].mean()
    assert hm.raw.loc["gpt-4o", "llama3-8b"] == pytest.approx(cell, abs=1e-15)
    ref = t.reference
    assert hm.raw.loc[HUMAN_ROW, "gpt-4o"] == pytest.approx(ref[ref["model"] == "gpt-4o"]["reference"].mean())


def test_heatmap_cannot_see_compensated_bias():
    # own quality lower by 0.3125 so that beta * delta = -0.25 cancels gamma = 0.25
    t = simulate(two_model_config(-0.3125, 2000, seed=9))
    hm = heatmap_means(t)
    assert abs(hm.raw.loc["judge", "judge"] - hm.raw.loc["judge", "other"]) < 0.01
    iv = estimate_bias(t).self_bias["judge"]
    assert iv.reject_zero and 0.23 <= iv.estimate <= 0.27
