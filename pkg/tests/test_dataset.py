import json

import numpy as np
import pandas as pd
import pytest

from selfbias.dataset import (DataError, ModelConfig, RatingRow, RatingsTable, ScaleDef, aggregate_reference,
                              config_from_dict, export_frame, filter_table, load_config, load_ratings,
                              normalize_score, write_ratings)
from selfbias.synth import DEFAULT_MODELS, nine_model_config, simulate

FAMILIES = {"gpt-4o": "GPT", "gpt-3.5-turbo": "GPT", "llama3-8b": "Llama"}
CFG = ModelConfig(models=tuple(FAMILIES), judges=("gpt-4o", "llama3-8b"), family_of=FAMILIES)
SCALES = {"completeness": ScaleDef("completeness", 5, frozenset({"n/a"})),
          "logical_correctness": ScaleDef("logical_correctness", 3)}


def _write(tmp_path, text, name="r.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


HEADER = "prompt_id,dimension,model,rater,rater_kind,level,token_length\n"


def test_single_row_top_of_scale(tmp_path):
    path = _write(tmp_path, HEADER + "p1,completeness,gpt-4o,human:a1,human,5,\n")
    table = load_ratings(path, SCALES, CFG)
    assert len(table.ratings) == 1
    assert table.ratings["score"].iloc[0] == 1.0


def test_level_out_of_range(tmp_path):
    path = _write(tmp_path, HEADER + "p1,completeness,gpt-4o,human:a1,human,6,\n")
    with pytest.raises(DataError, match="level out of range"):
        load_ratings(path, SCALES, CFG)


def test_unknown_dimension_reports_line(tmp_path):
    path = _write(tmp_path, HEADER + "p1,completeness,gpt-4o,a,human,1,\np1,nope,gpt-4o,a,human,1,\n")
    with pytest.raises(DataError, match="unknown dimension.*line 3"):
        load_ratings(path, SCALES, CFG)


def test_malformed_level_reports_line(tmp_path):
    path = _write(tmp_path, HEADER + "p1,completeness,gpt-4o,a,human,x,\n")
    with pytest.raises(DataError, match="line 2"):
        load_ratings(path, SCALES, CFG)


def test_duplicate_key(tmp_path):
    path = _write(tmp_path, HEADER + "p1,completeness,gpt-4o,a,human,1,\np1,completeness,gpt-4o,a,human,2,\n")
    with pytest.raises(DataError, match="duplicate"):
        load_ratings(path, SCALES, CFG)


def test_na_label_and_empty_level(tmp_path):
    path = _write(tmp_path, HEADER + "p1,completeness,gpt-4o,a,human,n/a,\np1,completeness,gpt-4o,b,human,,\n")
    table = load_ratings(path, SCALES, CFG)
    assert table.ratings["level"].isna().all()


def test_tsv_and_jsonl(tmp_path):
    tsv = _write(tmp_path, HEADER.replace(",", "\t") + "p1\tcompleteness\tgpt-4o\ta\thuman\t3\t12\n", "r.tsv")
    rec = {"prompt_id": "p1", "dimension": "completeness", "model": "gpt-4o", "rater": "a",
           "rater_kind": "human", "level": 3, "token_length": 12}
    jl = _write(tmp_path, json.dumps(rec) + "\n", "r.jsonl")
    a, b = load_ratings(tsv, SCALES, CFG), load_ratings(jl, SCALES, CFG)
    assert a.equals(b)
    assert a.ratings["score"].iloc[0] == 0.5


def test_fixture54_counts(fixture54):
    assert len(fixture54.ratings) == 54
    assert (len(fixture54.prompts), len(fixture54.dimensions), len(fixture54.models)) == (1, 6, 9)
    assert fixture54.judges == ["gpt-4o"]


@pytest.mark.parametrize("level,k,expected", [(3, 5, 0.5), (1, 7, 0.0), (2, 3, 0.5), (7, 7, 1.0)])
def test_normalize_score(level, k, expected):
    assert normalize_score(level, ScaleDef("d", k)) == expected


def test_normalize_out_of_range():
    with pytest.raises(DataError):
        normalize_score(0, ScaleDef("d", 5))


def _humans(levels):
    rows = [RatingRow("p1", "completeness", "gpt-4o", f"a{i}", "human", lv) for i, lv in enumerate(levels)]
    return RatingsTable.from_rows(rows, SCALES, CFG)


def test_aggregate_reference_mean():
    ref = aggregate_reference(_humans([4, 4, 5])).reference
    assert ref["reference"].iloc[0] == pytest.approx((0.75 + 0.75 + 1.0) / 3, abs=1e-15)
    assert ref["n_annotators"].iloc[0] == 3


def test_aggregate_reference_singleton_and_empty():
    assert aggregate_reference(_humans([3])).reference["reference"].iloc[0] == 0.5
    table = aggregate_reference(_humans([None, None, None]))
    assert np.isnan(table.reference["reference"].iloc[0])
    assert table.reference["n_annotators"].iloc[0] == 0
    assert len(table.flagged_cells()) == 1


def _nine_model_table(n=12):
    return simulate(nine_model_config(num_prompts=n, seed=1, lengths=False))


def test_filter_drop_weakest_models():
    t = filter_table(_nine_model_table(), drop_models=["mistral-7b", "llama3-8b"])
    assert len(t.models) == 7
    assert len(t.config.models) == 7
    # dropped models still judge
    assert "llama3-8b" in t.judges


def test_filter_dimension():
    t = filter_table(_nine_model_table(), dimensions=["faithfulness"])
    assert set(t.ratings["dimension"]) == {"faithfulness"}
    assert set(t.reference["dimension"]) == {"faithfulness"}


def test_filter_task_counts_summarization():
    t = simulate(nine_model_config(num_prompts=596, seed=0, lengths=False))
    summ = filter_table(filter_table(t, dimensions=["completeness"]), task_types=["summarization"])
    assert len(summ.prompts) == 200


def test_filter_unknown_id():
    with pytest.raises(DataError, match="unknown model"):
        filter_table(_nine_model_table(), drop_models=["nope"])


def test_round_trip_bytewise(tmp_path):
    t = _nine_model_table()
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_ratings(t, p1)
    back = aggregate_reference(load_ratings(p1, t.scales, t.config))
    write_ratings(back, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert np.array_equal(back.reference["reference"].to_numpy(), t.reference["reference"].to_numpy())


def test_config_roundtrip(data_dir):
    scales, cfg = load_config(data_dir / "config9.json")
    assert cfg.family_of["gpt-4o"] == "GPT"
    assert scales["helpfulness"].num_levels == 7
    assert set(cfg.overlap) == set(DEFAULT_MODELS)


def test_config_missing_key():
    with pytest.raises(DataError, match="missing required key"):
        config_from_dict({"models": [], "judges": []})


def test_config_needs_families():
    with pytest.raises(DataError, match="no family"):
        ModelConfig(models=("a",), judges=("a",), family_of={})


def test_export_contains_reference_pseudo_rows():
    t = _nine_model_table(2)
    frame = export_frame(t)
    assert (frame["rater"] == "reference").sum() == len(t.reference)
