"""Synthetic rating tables drawn from the linear judge-score model.

For prompt i, dimension d, model m and judge j::

    judge score = alpha + delta_j + beta_j * S_idm + gamma_j * [j == m]
                  + lambda_F(j) * [F(j) == F(m), j != m] + eta_d
                  + length_coef_j * tanh(z_im) + noise_sd_j * eps

with S_idm drawn from the model's normal quality distribution truncated to
[0, 1] by rejection.  Judge scores are not clamped.

Random numbers: each prompt i gets its own Philox-4x64 stream keyed by
(seed, i), so prompts can be generated in any order or in parallel.  A
uniform is ``((raw >> 11) + 0.5) * 2**-53`` from a raw 64-bit output, and a
standard normal is the inverse normal CDF of that uniform.  Within a prompt
the draws are consumed in this order: quality (per model, then per
dimension if per-dimension means are set, each cell drawing until it
accepts), token lengths (per model, if enabled), noise (dimension-major,
then model, then judge), annotator noise (dimension-major, then model, then
annotator; only when annotators are simulated).

With ``annotators > 0`` each cell also gets that many human rows whose
levels discretize ``S + annotator_sd * eps`` (clipped to [0, 1]), and the
reference becomes their aggregated mean instead of the true quality.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import special

from .dataset import HUMAN, LLM_JUDGE, ModelConfig, RatingsTable, ScaleDef, aggregate_reference

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class JudgeSim:
    judge_id: str
    beta: float = 0.8
    delta: float = 0.0
    gamma: float = 0.0
    noise_sd: float = 0.1
    length_coef: float = 0.0
    gamma_by_dimension: Mapping[str, float] = field(default_factory=dict)

    def gamma_for(self, dimension: str) -> float:
        return self.gamma_by_dimension.get(dimension, self.gamma)


@dataclass(frozen=True)
class QualityDist:
    mean: float
    sd: float
    by_dimension: Mapping[str, float] = field(default_factory=dict)   # per-dimension means


@dataclass(frozen=True)
class SimConfig:
    num_prompts: int
    judges: Sequence[JudgeSim]
    quality: Mapping[str, QualityDist]               # model -> quality distribution
    families: Mapping[str, str]                      # model or judge -> family
    family_lambda: Mapping[str, float] = field(default_factory=dict)
    dimensions: Mapping[str, float] = field(default_factory=lambda: {"overall": 0.0})   # eta_d
    scales: Mapping[str, int] = field(default_factory=dict)
    alpha: float = 0.0
    seed: int = 0
    lengths: bool = False
    tasks: Mapping[str, str] = field(default_factory=dict)      # prompt id -> task type
    sources: Mapping[str, str] = field(default_factory=dict)
    annotators: int = 0
    annotator_sd: float = 0.15

    def __post_init__(self):
        if self.annotators < 0 or self.annotator_sd < 0:
            raise ValueError("annotators and annotator_sd must be non-negative")
        if self.num_prompts < 1:
            raise ValueError("num_prompts must be positive")
        for j in self.judges:
            if j.noise_sd < 0:
                raise ValueError(f"negative noise_sd for judge {j.judge_id}")
        for m, q in self.quality.items():
            if q.sd < 0:
                raise ValueError(f"negative quality sd for {m}")
            for mean in (q.mean, *q.by_dimension.values()):
                if q.sd == 0 and not 0 <= mean <= 1:
                    raise ValueError(f"degenerate quality for {m} outside [0, 1]")
        missing = [x for x in (*self.quality, *(j.judge_id for j in self.judges)) if x not in self.families]
        if missing:
            raise ValueError(f"no family for {missing}")

    @property
    def models(self) -> list[str]:
        return list(self.quality)

    @property
    def judge_ids(self) -> list[str]:
        return [j.judge_id for j in self.judges]

    def prompt_ids(self) -> list[str]:
        width = max(4, len(str(self.num_prompts - 1)))
        return [f"p{i:0{width}d}" for i in range(self.num_prompts)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["judges"] = [asdict(j) for j in self.judges]
        d["quality"] = {m: asdict(q) for m, q in self.quality.items()}
        return d

    @classmethod
    def from_dict(cls, raw: Mapping) -> "SimConfig":
        raw = dict(raw)
        raw["judges"] = tuple(JudgeSim(**j) for j in raw["judges"])
        raw["quality"] = {m: QualityDist(**q) for m, q in raw["quality"].items()}
        return cls(**raw)


class _PromptStream:
    """Counter-based stream for one prompt: Philox-4x64 keyed by (seed, prompt index)."""

    def __init__(self, seed: int, index: int):
        key = np.array([seed & _MASK64, index & _MASK64], dtype=np.uint64)
        self._bitgen = np.random.Philox(key=key)

    def uniforms(self, size: int) -> np.ndarray:
        raw = self._bitgen.random_raw(size)
        return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53

    def normals(self, size: int) -> np.ndarray:
        return special.ndtri(self.uniforms(size))

    def truncated(self, mean: float, sd: float) -> float:
        if sd == 0:
            return mean
        while True:
            x = mean + sd * float(self.normals(1)[0])
            if 0.0 <= x <= 1.0:
                return x


def _draw_prompt(cfg: SimConfig, index: int, dims: list[str]):
    stream = _PromptStream(cfg.seed, index)
    M, D, J = len(cfg.quality), len(dims), len(cfg.judges)
    S = np.empty((D, M))
    for mi, q in enumerate(cfg.quality.values()):
        if q.by_dimension:
            for di, d in enumerate(dims):
                S[di, mi] = stream.truncated(q.by_dimension.get(d, q.mean), q.sd)
        else:
            S[:, mi] = stream.truncated(q.mean, q.sd)
    if cfg.lengths:
        lengths = np.maximum(1.0, np.round(200.0 * np.exp(0.5 * stream.normals(M))))
    else:
        lengths = np.full(M, np.nan)
    noise = stream.normals(D * M * J).reshape(D, M, J)
    human = stream.normals(D * M * cfg.annotators).reshape(D, M, cfg.annotators)
    return S, lengths, noise, human


def simulate(config: SimConfig) -> RatingsTable:
    """Draw a judge-rating table with the true quality as reference score."""
    cfg = config
    dims = list(cfg.dimensions)
    models = cfg.models
    judges = list(cfg.judges)
    N, D, M, J = cfg.num_prompts, len(dims), len(models), len(judges)

    S = np.empty((N, D, M))
    L = np.empty((N, M))
    E = np.empty((N, D, M, J))
    A = cfg.annotators
    H = np.empty((N, D, M, A))
    for i in range(N):
        S[i], L[i], E[i], H[i] = _draw_prompt(cfg, i, dims)

    if cfg.lengths:
        mean = L.mean(axis=1, keepdims=True)
        sd = L.std(axis=1, keepdims=True)
        z = np.divide(L - mean, sd, out=np.zeros_like(L), where=sd > 0)
        feat = np.tanh(z)
    else:
        feat = np.zeros((N, M))

    fam = cfg.families
    eta = np.array([cfg.dimensions[d] for d in dims])
    Y = np.empty((N, D, M, J))
    for ji, j in enumerate(judges):
        self_ind = np.array([m == j.judge_id for m in models], dtype=float)
        fam_ind = np.array([fam[m] == fam[j.judge_id] and m != j.judge_id for m in models], dtype=float)
        lam = cfg.family_lambda.get(fam[j.judge_id], 0.0)
        gam = np.array([j.gamma_for(d) for d in dims])
        Y[..., ji] = (cfg.alpha + j.delta + j.beta * S
                      + gam[None, :, None] * self_ind[None, None, :]
                      + lam * fam_ind[None, None, :]
                      + eta[None, :, None]
                      + j.length_coef * feat[:, None, :]
                      + j.noise_sd * E[..., ji])

    prompts = np.array(cfg.prompt_ids(), dtype=object)
    ii, di, mi, ji = np.meshgrid(np.arange(N), np.arange(D), np.arange(M), np.arange(J), indexing="ij")
    ii, di, mi, ji = ii.ravel(), di.ravel(), mi.ravel(), ji.ravel()
    ratings = pd.DataFrame({
        "prompt_id": prompts[ii],
        "dimension": np.array(dims, dtype=object)[di],
        "model": np.array(models, dtype=object)[mi],
        "rater": np.array([j.judge_id for j in judges], dtype=object)[ji],
        "rater_kind": LLM_JUDGE,
        "level": np.nan,
        "token_length": L[ii, mi],
        "score": Y.ravel(),
    })
    ci, cd, cm = np.meshgrid(np.arange(N), np.arange(D), np.arange(M), indexing="ij")
    reference = pd.DataFrame({
        "prompt_id": prompts[ci.ravel()],
        "dimension": np.array(dims, dtype=object)[cd.ravel()],
        "model": np.array(models, dtype=object)[cm.ravel()],
        "reference": S.ravel(),
        "n_annotators": 1,
    })
    scales = {d: ScaleDef(d, cfg.scales.get(d, 5)) for d in dims}
    mc = ModelConfig(models=tuple(models), judges=tuple(j.judge_id for j in judges),
                     family_of=dict(fam), task_of=dict(cfg.tasks), source_of=dict(cfg.sources))
    if A == 0:
        return RatingsTable.from_frame(ratings, scales, mc, reference)
    noisy = np.clip(S[..., None] + cfg.annotator_sd * H, 0.0, 1.0)
    levels = np.empty_like(noisy)
    for di, d in enumerate(dims):
        levels[:, di] = discretize_levels(noisy[:, di], scales[d].num_levels)
    hi, hd, hm, ha = (g.ravel() for g in np.meshgrid(np.arange(N), np.arange(D), np.arange(M), np.arange(A),
                                                     indexing="ij"))
    human = pd.DataFrame({
        "prompt_id": prompts[hi],
        "dimension": np.array(dims, dtype=object)[hd],
        "model": np.array(models, dtype=object)[hm],
        "rater": np.array([f"annotator-{a + 1}" for a in range(A)], dtype=object)[ha],
        "rater_kind": HUMAN,
        "level": levels.ravel(),
        "token_length": L[hi, hm],
        "score": np.nan,
    })
    table = RatingsTable.from_frame(pd.concat([ratings, human], ignore_index=True), scales, mc)
    return aggregate_reference(table)


def two_model_config(delta_quality: float = 0.0, num_prompts: int = 2000, seed: int = 0, beta: float = 0.8,
                gamma: float = 0.25, noise_sd: float = 0.1, base_quality: float = 0.5,
                quality_sd: float = 0.1) -> SimConfig:
    """One judge scoring its own completions ("judge") and another model's ("other")."""
    return SimConfig(
        num_prompts=num_prompts,
        judges=(JudgeSim("judge", beta=beta, gamma=gamma, noise_sd=noise_sd),),
        quality={"judge": QualityDist(base_quality + delta_quality, quality_sd),
                 "other": QualityDist(base_quality, quality_sd)},
        families={"judge": "judge-family", "other": "other-family"},
        seed=seed,
    )


def simulate_quality_shift_suite(n: int = 2000, seed: int = 0,
                        deltas: Sequence[float] = (-0.25, 0.0, 0.25), **kw) -> dict[str, RatingsTable]:
    """Three tables sharing beta and gamma that differ only in the judge's own quality.

    Keys are "lower", "equal", "higher" for the default deltas.
    """
    names = ["lower", "equal", "higher"] if len(deltas) == 3 else [f"delta={d:g}" for d in deltas]
    return {name: simulate(two_model_config(d, n, seed, **kw)) for name, d in zip(names, deltas)}


def naive_self_gap(table: RatingsTable, judge: str) -> float:
    """Mean judge score on its own completions minus mean on other models' completions."""
    jr = table.judge_ratings()
    jr = jr[jr["rater"] == judge]
    own = jr["model"] == judge
    return float(jr.loc[own, "score"].mean() - jr.loc[~own, "score"].mean())


def discretize_levels(scores, num_levels: int, thresholds: Sequence[float] | None = None) -> np.ndarray:
    """Levels 1..K: 1 + number of thresholds <= score (equal-width on [0, 1] by default)."""
    if thresholds is None:
        thresholds = np.arange(1, num_levels) / num_levels
    t = np.asarray(thresholds, dtype=float)
    if t.size != num_levels - 1 or np.any(np.diff(t) <= 0):
        raise ValueError(f"need {num_levels - 1} increasing thresholds")
    return 1 + np.searchsorted(t, np.asarray(scores, dtype=float), side="right")


def discretize(table: RatingsTable, scale: ScaleDef | Mapping[str, ScaleDef] | None = None,
               thresholds: Sequence[float] | Mapping[str, Sequence[float]] | None = None) -> RatingsTable:
    """Turn continuous judge scores into Likert levels; scores become the normalized levels."""
    if scale is None:
        scales = dict(table.scales)
    elif isinstance(scale, ScaleDef):
        scales = {d: ScaleDef(d, scale.num_levels, scale.na_labels) for d in table.scales}
    else:
        scales = {**table.scales, **scale}
    r = table.ratings.copy()
    judge = (r["rater_kind"] == LLM_JUDGE) & r["level"].isna() & r["score"].notna()
    levels = r["level"].to_numpy(dtype=float).copy()
    for d, s in scales.items():
        rows = judge & (r["dimension"] == d)
        th = thresholds.get(d) if isinstance(thresholds, Mapping) else thresholds
        levels[rows.to_numpy()] = discretize_levels(r.loc[rows, "score"], s.num_levels, th)
    r["level"] = levels
    return RatingsTable.from_frame(r, scales, table.config, table.reference)


DEFAULT_MODELS = {
    "claude-v2": "Claude", "claude-3-sonnet": "Claude", "claude-3.5-sonnet": "Claude",
    "gpt-3.5-turbo": "GPT", "gpt-4o": "GPT",
    "llama3-8b": "Llama", "llama3-70b": "Llama",
    "mistral-7b": "Mistral", "mistral-large": "Mistral",
}
DEFAULT_SCALES = {"completeness": 5, "conciseness": 5, "logical_robustness": 5, "logical_correctness": 3,
                "helpfulness": 7, "faithfulness": 5}
DEFAULT_SOURCES = {"chatbot_arena": 139, "mt_bench": 53, "helm_instruct": 160, "shp": 44,
                 "xsum": 100, "cnn_dailymail": 100}
SUMMARIZATION_SOURCES = {"xsum", "cnn_dailymail"}


def _allocate(n: int, counts: Mapping[str, int]) -> list[str]:
    total = sum(counts.values())
    raw = {k: n * v / total for k, v in counts.items()}
    alloc = {k: math.floor(x) for k, x in raw.items()}
    for k in sorted(raw, key=lambda k: alloc[k] - raw[k])[: n - sum(alloc.values())]:
        alloc[k] += 1
    return [k for k in counts for _ in range(alloc[k])]


def nine_model_config(num_prompts: int = 596, seed: int = 0, gammas: Mapping[str, float] | None = None,
                      lambdas: Mapping[str, float] | None = None, noise_sd: float = 0.1,
                      lengths: bool = True, annotators: int = 0) -> SimConfig:
    """Nine judges/models in four families, six dimensions, QA and summarization prompts.

    Prompt sources keep a fixed mix that is scaled to ``num_prompts``.
    Bias sizes are illustrative defaults, not estimates.
    """
    gammas = {"gpt-4o": 0.05, "gpt-3.5-turbo": 0.03, "claude-3.5-sonnet": 0.05, "llama3-8b": -0.05,
              **(gammas or {})}
    lambdas = {"GPT": 0.03, "Claude": 0.03, **(lambdas or {})}
    weak = {"mistral-7b": 0.6, "llama3-8b": 0.65, "claude-v2": 0.7}
    quality = {m: QualityDist(weak.get(m, 0.8), 0.15) for m in DEFAULT_MODELS}
    judges = tuple(JudgeSim(m, beta=0.7, delta=0.1, gamma=gammas.get(m, 0.0), noise_sd=noise_sd)
                   for m in DEFAULT_MODELS)
    sources = _allocate(num_prompts, DEFAULT_SOURCES)
    width = max(4, len(str(num_prompts - 1)))
    ids = [f"p{i:0{width}d}" for i in range(num_prompts)]
    return SimConfig(
        num_prompts=num_prompts, judges=judges, quality=quality, families=dict(DEFAULT_MODELS),
        family_lambda=lambdas, dimensions={d: 0.0 for d in DEFAULT_SCALES}, scales=dict(DEFAULT_SCALES),
        seed=seed, lengths=lengths, annotators=annotators,
        tasks={p: ("summarization" if s in SUMMARIZATION_SOURCES else "open_qa") for p, s in zip(ids, sources)},
        sources=dict(zip(ids, sources)),
    )


def with_seed(config: SimConfig, seed: int) -> SimConfig:
    return replace(config, seed=seed)
