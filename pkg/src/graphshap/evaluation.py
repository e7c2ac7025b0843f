"""Downstream analyses of attributions: normalization, corruption, aggregation, ranking."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np
from scipy.stats import rankdata

from graphshap import subsets
from graphshap.game import Attribution
from graphshap.oracles import PredictionOracle
from graphshap.value import GameConfig, marginal_predictions


class EvaluationError(ValueError):
    pass


def normalize(attribution: Attribution, group_sizes: Sequence[int]) -> Attribution:
    """Divide by group size, then by the largest positive per-size score.

    When nothing is positive the scaling step is skipped and
    ``extra["max_scaling_skipped"]`` is set.
    """
    sizes = np.asarray(group_sizes, dtype=float)
    if sizes.shape != (attribution.n_features,):
        raise EvaluationError(f"need {attribution.n_features} group sizes, got {sizes.shape[0]}")
    if np.any(sizes <= 0):
        raise EvaluationError("group sizes must be positive")
    per_size = attribution.phi / sizes
    positive = per_size[np.isfinite(per_size) & (per_size > 0)]
    extra = dict(attribution.extra)
    if positive.size:
        out = per_size / positive.max()
        extra["max_scaling_skipped"] = False
    else:
        out = per_size
        extra["max_scaling_skipped"] = True
    return replace(attribution, phi=out, extra=extra)


def ranking(phi: Sequence[float]) -> list[int]:
    """Feature indices by descending score, ties by ascending index; NaN last."""
    phi = np.asarray(phi, dtype=float)
    key = np.where(np.isnan(phi), -np.inf, phi)
    return sorted(range(len(phi)), key=lambda i: (-key[i], np.isnan(phi[i]), i))


def coverage_prefix(phi: Sequence[float], coverage: float) -> list[int]:
    """Shortest top-ranked prefix whose scores reach ``coverage`` of the positive mass."""
    if not 0 < coverage <= 1:
        raise EvaluationError(f"coverage must lie in (0, 1], got {coverage}")
    phi = np.asarray(phi, dtype=float)
    order = [i for i in ranking(phi) if phi[i] > 0]
    if not order:
        raise EvaluationError("attribution has no positive entries")
    cum = np.cumsum(phi[order])
    need = coverage * cum[-1]
    k = int(np.searchsorted(cum, need, side="left"))
    return order[: min(k, len(order) - 1) + 1]


@dataclass(frozen=True)
class CorruptionReport:
    coverage_fraction: float
    corrupted_features: tuple
    target_class: int
    prob_before: float
    prob_after: float
    delta_prob: float
    predicted_before: int
    predicted_after: int
    delta_acc: Optional[float] = None


def corrupt_and_score(
    oracle: PredictionOracle,
    cfg: GameConfig,
    attribution: Union[Attribution, Sequence[float]],
    coverage: float,
    target_class: int,
) -> CorruptionReport:
    """Marginalize the top-coverage prefix and measure the drop in ``p(target_class)``."""
    phi = attribution.phi if isinstance(attribution, Attribution) else np.asarray(attribution, dtype=float)
    if len(phi) != oracle.n_features or len(phi) != cfg.n_features:
        raise EvaluationError(
            f"attribution width {len(phi)} does not match oracle/config width {oracle.n_features}/{cfg.n_features}"
        )
    prefix = coverage_prefix(phi, coverage)
    cfg = cfg.restricted(None)
    before, after = marginal_predictions(oracle, cfg, [0, subsets.to_mask(prefix)])
    return CorruptionReport(
        coverage_fraction=coverage,
        corrupted_features=tuple(prefix),
        target_class=target_class,
        prob_before=float(before[target_class]),
        prob_after=float(after[target_class]),
        delta_prob=float(before[target_class] - after[target_class]),
        predicted_before=int(np.argmax(before)),
        predicted_after=int(np.argmax(after)),
    )


@dataclass(frozen=True)
class CorruptionStudy:
    reports: tuple
    mean_delta_prob: float
    std_delta_prob: float
    delta_acc: Optional[float]


def corruption_study(
    oracle: PredictionOracle,
    cfgs: Sequence[GameConfig],
    attributions: Sequence[Attribution],
    coverage: float,
    target_classes: Sequence[int],
    labels: Optional[Sequence[int]] = None,
) -> CorruptionStudy:
    """Per-instance corruption, each instance using its own attribution.

    Accuracy drop is reported only when ``labels`` are given.
    """
    if not (len(cfgs) == len(attributions) == len(target_classes)):
        raise EvaluationError("configs, attributions and target classes differ in count")
    reports = [
        corrupt_and_score(oracle, c, a, coverage, t) for c, a, t in zip(cfgs, attributions, target_classes)
    ]
    deltas = np.array([r.delta_prob for r in reports])
    delta_acc = None
    if labels is not None:
        if len(labels) != len(reports):
            raise EvaluationError("labels differ in count from instances")
        labels = np.asarray(labels)
        acc_before = np.mean([r.predicted_before for r in reports] == labels)
        acc_after = np.mean([r.predicted_after for r in reports] == labels)
        delta_acc = float(acc_before - acc_after)
    std = float(deltas.std(ddof=1)) if len(deltas) > 1 else 0.0
    return CorruptionStudy(tuple(reports), float(deltas.mean()), std, delta_acc)


def aggregate_group(attributions: Sequence[Attribution]) -> Attribution:
    """Elementwise sum over per-subject attributions of the same method."""
    if not attributions:
        raise EvaluationError("nothing to aggregate")
    first = attributions[0]
    for a in attributions[1:]:
        if a.n_features != first.n_features:
            raise EvaluationError("attribution widths differ")
        if a.method != first.method:
            raise EvaluationError(f"cannot aggregate {a.method.value} with {first.method.value}")
    phi = np.sum([a.phi for a in attributions], axis=0)
    computed = np.all([a.computed for a in attributions], axis=0)
    return Attribution(
        phi=phi,
        method=first.method,
        value_calls=sum(a.value_calls for a in attributions),
        mc_samples=first.mc_samples,
        seed=first.seed,
        computed=computed,
        n_games=sum(a.n_games for a in attributions),
    )


def spearman_rank(a, b) -> float:
    """``1 - 6 sum d^2 / (n (n^2 - 1))`` over midranks."""
    x = a.phi if isinstance(a, Attribution) else np.asarray(a, dtype=float)
    y = b.phi if isinstance(b, Attribution) else np.asarray(b, dtype=float)
    if x.shape != y.shape:
        raise EvaluationError(f"width mismatch: {x.shape} vs {y.shape}")
    n = len(x)
    if n < 2:
        raise EvaluationError("need at least 2 features")
    d = rankdata(x) - rankdata(y)
    return float(1 - 6 * np.sum(d * d) / (n * (n * n - 1)))
