"""Trial classification and Beta-Binomial aggregation.

Each prompt is one trial: the suspect's fingerprint is attributed to the
nearest base model. Success counts feed a Beta posterior over per-trial
accuracy; decisions compare the equal-tailed 95% interval's lower bound to
the 1/K chance level (significance) and to 0.5 (dominance: the chosen base
beats all alternatives combined).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

from scipy.optimize import brentq
from scipy.special import betainc

from .metrics import MetricError, jsd, wasserstein2
from .probe import Fingerprint

__all__ = [
    "TrialOutcome",
    "PosteriorSummary",
    "AttributionRow",
    "classify_trial",
    "count_successes",
    "posterior",
    "beta_quantile",
    "decide",
    "run_trials",
    "attribution_report",
]

TIE_REL_TOL = 1e-9
CI_LOW_Q = 0.025
CI_HIGH_Q = 0.975


@dataclass(frozen=True)
class TrialOutcome:
    prompt_id: str
    distances: dict[str, float]
    predicted_base: str
    tie: bool
    metric: str = "w2"


def classify_trial(
    suspect_fp: Fingerprint,
    base_fps: Mapping[str, Fingerprint],
    metric: str = "w2",
) -> TrialOutcome:
    """Attribute one prompt: argmin distance over base models.

    Distances within relative tolerance 1e-9 of the minimum count as tied;
    the prediction is then the lexicographically smallest tied base id.
    """
    if len(base_fps) < 2:
        raise MetricError("need at least 2 base models for a trial")
    fn = {"w2": wasserstein2, "jsd": jsd}.get(metric)
    if fn is None:
        raise MetricError(f"unknown metric '{metric}' (expected w2 or jsd)")
    distances: dict[str, float] = {}
    for base_id, base_fp in base_fps.items():
        if base_fp.prompt_id != suspect_fp.prompt_id:
            raise MetricError(
                f"prompt mismatch: suspect '{suspect_fp.prompt_id}' vs"
                f" base {base_id} '{base_fp.prompt_id}'"
            )
        if suspect_fp.vocabulary and base_fp.vocabulary:
            if suspect_fp.vocabulary != base_fp.vocabulary:
                raise MetricError(
                    f"vocabulary mismatch on prompt '{suspect_fp.prompt_id}'"
                )
        distances[base_id] = fn(suspect_fp, base_fp)
    d_min = min(distances.values())
    tied = sorted(
        bid for bid, d in distances.items() if d <= d_min * (1.0 + TIE_REL_TOL)
    )
    return TrialOutcome(
        prompt_id=suspect_fp.prompt_id,
        distances=distances,
        predicted_base=tied[0],
        tie=len(tied) >= 2,
        metric=metric,
    )


def count_successes(
    trials: Sequence[TrialOutcome], true_base: str
) -> tuple[int, int]:
    s = sum(1 for t in trials if t.predicted_base == true_base)
    return s, len(trials) - s


@dataclass(frozen=True)
class PosteriorSummary:
    alpha0: float
    beta0: float
    s: int
    f: int
    post_alpha: float
    post_beta: float
    mean: float
    ci_low: float
    ci_high: float
    significant: bool | None = None
    dominant: bool | None = None
    below_chance: bool | None = None
    k: int | None = None

    @property
    def trials(self) -> int:
        return self.s + self.f


def beta_quantile(a: float, b: float, q: float) -> float:
    """x with I_x(a, b) = q, I the regularized incomplete beta.

    Closed forms when a shape parameter is 1 (I_x(a,1) = x**a and
    I_x(1,b) = 1-(1-x)**b); otherwise a bracketing root-find on the
    continued-fraction evaluation of I, accurate to |I_x - q| <= 1e-10.
    """
    if not (a > 0 and b > 0):
        raise ValueError("shape parameters must be positive")
    if not 0.0 < q < 1.0:
        raise ValueError("quantile level must be in (0, 1)")
    if b == 1.0:
        return q ** (1.0 / a)
    if a == 1.0:
        return 1.0 - (1.0 - q) ** (1.0 / b)
    return float(
        brentq(lambda x: betainc(a, b, x) - q, 0.0, 1.0, xtol=1e-15, rtol=8.9e-16)
    )


def posterior(
    s: int, f: int, alpha0: float = 1.0, beta0: float = 1.0
) -> PosteriorSummary:
    """Beta posterior over trial accuracy, with equal-tailed 95% interval.

    Decision flags stay unset; apply ``decide`` with the base-family count.
    """
    if s < 0 or f < 0:
        raise ValueError("success/failure counts must be nonnegative")
    if not (alpha0 > 0 and beta0 > 0):
        raise ValueError("prior parameters must be positive")
    post_alpha = alpha0 + s
    post_beta = beta0 + f
    return PosteriorSummary(
        alpha0=alpha0,
        beta0=beta0,
        s=s,
        f=f,
        post_alpha=post_alpha,
        post_beta=post_beta,
        mean=post_alpha / (post_alpha + post_beta),
        ci_low=beta_quantile(post_alpha, post_beta, CI_LOW_Q),
        ci_high=beta_quantile(post_alpha, post_beta, CI_HIGH_Q),
    )


def decide(summary: PosteriorSummary, k: int) -> PosteriorSummary:
    """Attach decision flags given K candidate base families.

    significant: interval lower bound beats the 1/K chance level.
    dominant: lower bound exceeds 0.5 (the base beats all others combined).
    below_chance: interval upper bound falls under 1/K.
    """
    if k < 2:
        raise ValueError("need at least 2 base families")
    chance = 1.0 / k
    return replace(
        summary,
        significant=summary.ci_low > chance,
        dominant=summary.ci_low > 0.5,
        below_chance=summary.ci_high < chance,
        k=k,
    )


def run_trials(
    suspect_fps: Mapping[str, Fingerprint],
    base_stores: Mapping[str, Mapping[str, Fingerprint]],
    metric: str = "w2",
    prompt_ids: Sequence[str] | None = None,
) -> list[TrialOutcome]:
    """One trial per prompt shared by the suspect and every base store."""
    if prompt_ids is None:
        prompt_ids = list(suspect_fps.keys())
    trials = []
    for pid in prompt_ids:
        if pid not in suspect_fps:
            raise MetricError(f"suspect store lacks prompt '{pid}'")
        base_fps = {}
        for base_id, store in base_stores.items():
            if pid not in store:
                raise MetricError(f"base '{base_id}' lacks prompt '{pid}'")
            base_fps[base_id] = store[pid]
        trials.append(classify_trial(suspect_fps[pid], base_fps, metric=metric))
    return trials


@dataclass(frozen=True)
class AttributionRow:
    suspect: str
    base: str
    s: int
    f: int
    trials: int
    mean: float
    ci_low: float
    ci_high: float
    significant: bool
    dominant: bool
    below_chance: bool


def attribution_report(
    suspect_id: str,
    trials: Sequence[TrialOutcome],
    base_ids: Sequence[str],
    alpha0: float = 1.0,
    beta0: float = 1.0,
) -> list[AttributionRow]:
    """Posterior summary per candidate base over the given trials."""
    if not trials:
        raise ValueError("no trials to aggregate")
    rows = []
    k = len(base_ids)
    for base_id in base_ids:
        s, f = count_successes(trials, base_id)
        summary = decide(posterior(s, f, alpha0=alpha0, beta0=beta0), k)
        rows.append(
            AttributionRow(
                suspect=suspect_id,
                base=base_id,
                s=s,
                f=f,
                trials=len(trials),
                mean=summary.mean,
                ci_low=summary.ci_low,
                ci_high=summary.ci_high,
                significant=bool(summary.significant),
                dominant=bool(summary.dominant),
                below_chance=bool(summary.below_chance),
            )
        )
    return rows
