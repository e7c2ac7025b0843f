"""Importance-score games induced by a classifier and a target instance.

Corrupted features are marginalized by substituting background instances
and averaging the classifier's probabilities; the importance score of a set
is the expected log-probability loss caused by corrupting it.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from graphshap import subsets
from graphshap.game import CoalitionGame, GameError
from graphshap.oracles import PredictionOracle

_SAMPLE_TAG = 0x5A3D
_MAX_ROWS = 1 << 16


@dataclass(frozen=True, eq=False)
class BackgroundDataset:
    instances: np.ndarray
    feature_names: Optional[tuple] = None

    def __post_init__(self):
        x = np.array(self.instances, dtype=float)
        if x.ndim != 2 or len(x) == 0:
            raise ValueError("background needs at least one instance of uniform width")
        if not np.all(np.isfinite(x)):
            raise ValueError("background contains non-finite values")
        x.setflags(write=False)
        object.__setattr__(self, "instances", x)

    def __len__(self):
        return len(self.instances)

    @property
    def width(self) -> int:
        return self.instances.shape[1]

    @classmethod
    def from_csv(cls, path) -> "BackgroundDataset":
        """Header row of feature names, then one all-numeric instance per row."""
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2:
            raise ValueError(f"{path}: need a header row and at least one instance")
        names = tuple(h.strip() for h in rows[0])
        data = []
        for r, row in enumerate(rows[1:], start=2):
            if len(row) != len(names):
                raise ValueError(f"{path}: row {r} has {len(row)} columns, header has {len(names)}")
            vals = []
            for c, cell in enumerate(row, start=1):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ValueError(f"{path}: row {r}, column {c}: not a number: {cell!r}") from None
            data.append(vals)
        return cls(np.array(data), names)

    def to_csv(self, path) -> None:
        names = self.feature_names or tuple(f"x{i}" for i in range(self.width))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names)
            for row in self.instances.tolist():
                w.writerow([format(v, ".17g") for v in row])


@dataclass(frozen=True, eq=False)
class GameConfig:
    """Target instance, background, and marginalization settings.

    ``marginal_samples=None`` means every background instance is used.
    ``restrict_to`` (a mask) selects the community-restricted score, where
    everything outside the community is marginalized as well.
    """

    target: np.ndarray
    background: BackgroundDataset
    marginal_samples: Optional[int] = None
    log_base: float = 2.0
    prob_floor: float = 1e-12
    restrict_to: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        t = np.array(self.target, dtype=float)
        if t.ndim != 1 or not np.all(np.isfinite(t)):
            raise ValueError("target must be a finite 1-D vector")
        if len(t) != self.background.width:
            raise ValueError(f"target width {len(t)} differs from background width {self.background.width}")
        t.setflags(write=False)
        object.__setattr__(self, "target", t)
        if self.marginal_samples is not None and self.marginal_samples < 1:
            raise ValueError("marginal_samples must be positive")
        if not 0 < self.prob_floor < 0.5:
            raise ValueError("prob_floor must lie in (0, 0.5)")
        if self.log_base <= 0 or self.log_base == 1:
            raise ValueError("log_base must be positive and not 1")
        if self.restrict_to is not None:
            if self.restrict_to == 0:
                raise ValueError("restrict_to must be non-empty")
            subsets.check_within(self.restrict_to, self.n_features)
        if not 0 <= self.seed < 1 << 64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def n_features(self) -> int:
        return len(self.target)

    def restricted(self, community: Optional[int]) -> "GameConfig":
        return replace(self, restrict_to=community)


def compose(x, x_hat, keep: int) -> np.ndarray:
    """Instance taking ``x`` on ``keep`` and ``x_hat`` elsewhere."""
    x = np.asarray(x, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    if x.shape != x_hat.shape:
        raise ValueError(f"width mismatch: {x.shape} vs {x_hat.shape}")
    return np.where(_bits(keep, len(x)), x, x_hat)


def _bits(mask: int, n: int) -> np.ndarray:
    return np.array([(mask >> i) & 1 for i in range(n)], dtype=bool)


def background_indices(cfg: GameConfig, corrupted: int) -> np.ndarray:
    """Background rows used to marginalize ``corrupted``; a pure function of (seed, set)."""
    nbg = len(cfg.background)
    k = cfg.marginal_samples
    if k is None:
        return np.arange(nbg)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _SAMPLE_TAG, corrupted]))
    if k <= nbg:
        idx = rng.choice(nbg, size=k, replace=False)
    else:
        idx = rng.integers(0, nbg, size=k)
    return np.sort(idx)


def _predict_rows(oracle: PredictionOracle, rows: np.ndarray, batch_size: int, threads: int) -> np.ndarray:
    uniq, inverse = np.unique(rows, axis=0, return_inverse=True)
    chunks = [uniq[i : i + batch_size] for i in range(0, len(uniq), batch_size)]
    if threads > 1 and oracle.concurrent_safe and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(oracle.predict_batch, chunks))
    else:
        parts = [oracle.predict_batch(c) for c in chunks]
    return np.concatenate(parts)[inverse.reshape(-1)]


def marginal_predictions(
    oracle: PredictionOracle,
    cfg: GameConfig,
    corrupted: Sequence[int],
    batch_size: int = 256,
    threads: int = 1,
) -> np.ndarray:
    """Marginal class probabilities for each corrupted set, one row per set."""
    n = cfg.n_features
    if oracle.n_features != n:
        raise ValueError(f"oracle expects {oracle.n_features} features, config has {n}")
    out = np.empty((len(corrupted), oracle.n_classes))
    base = None
    bg = cfg.background.instances
    pending: list[tuple[int, np.ndarray]] = []
    pending_rows = 0

    def flush():
        nonlocal pending_rows
        if not pending:
            return
        rows = np.concatenate([r for _, r in pending])
        probs = _predict_rows(oracle, rows, batch_size, threads)
        start = 0
        for pos, r in pending:
            block = np.ascontiguousarray(probs[start : start + len(r)])
            out[pos] = np.add.reduce(block, axis=0) / len(r)
            start += len(r)
        pending.clear()
        pending_rows = 0

    for pos, c in enumerate(corrupted):
        c = int(c)
        subsets.check_within(c, n)
        if c == 0:
            if base is None:
                base = oracle.predict(cfg.target)
            out[pos] = base
            continue
        idx = background_indices(cfg, c)
        rows = np.where(_bits(c, n), bg[idx], cfg.target)
        pending.append((pos, rows))
        pending_rows += len(rows)
        if pending_rows >= _MAX_ROWS:
            flush()
    flush()
    return out


def marginal_prediction(oracle: PredictionOracle, cfg: GameConfig, corrupted: int) -> np.ndarray:
    return marginal_predictions(oracle, cfg, [corrupted])[0]


def score(p_ref: np.ndarray, p_corrupt: np.ndarray, log_base: float = 2.0, floor: float = 1e-12) -> float:
    """Expected log-loss increase under ``p_ref`` when predicting with ``p_corrupt``."""
    lo = np.clip(p_ref, floor, 1.0)
    lc = np.clip(p_corrupt, floor, 1.0)
    if log_base == 2:
        gap = np.log2(lo) - np.log2(lc)
    else:
        gap = (np.log(lo) - np.log(lc)) / math.log(log_base)
    return math.fsum((p_ref * gap).tolist())


class OracleGame(CoalitionGame):
    """The importance-score game of one target instance.

    Values are memoized; coalitions requested together are marginalized in
    shared oracle batches.
    """

    def __init__(self, oracle: PredictionOracle, cfg: GameConfig, batch_size: int = 256, threads: int = 1):
        super().__init__(cfg.n_features)
        if oracle.n_features != cfg.n_features:
            raise ValueError(f"oracle expects {oracle.n_features} features, config has {cfg.n_features}")
        self.oracle = oracle
        self.cfg = cfg
        self.batch_size = batch_size
        self.threads = threads
        self.outside = 0 if cfg.restrict_to is None else subsets.complement(cfg.restrict_to, self.n_features)
        self._reference: Optional[np.ndarray] = None

    @property
    def reference(self) -> np.ndarray:
        """Class distribution the expectation is taken under."""
        if self._reference is None:
            self._reference = self._marginal([self.outside])[0]
        return self._reference

    def _marginal(self, corrupted):
        return marginal_predictions(self.oracle, self.cfg, corrupted, self.batch_size, self.threads)

    def _evaluate_many(self, masks):
        for m in masks:
            if m & self.outside:
                raise GameError(
                    f"subset {subsets.members(m)} leaves the community {subsets.members(self.cfg.restrict_to)}"
                )
        ref = self.reference
        live = [m for m in masks if m]
        probs = dict(zip(live, self._marginal([m | self.outside for m in live])))
        cfg = self.cfg
        return [score(ref, probs[m], cfg.log_base, cfg.prob_floor) if m else 0.0 for m in masks]

    def single_draw_values(self, corrupted: Sequence[int], draws: Sequence[int]) -> np.ndarray:
        """Scores where each set is marginalized by one background row.

        ``draws[k]`` indexes the background row substituted into
        ``corrupted[k]``. Not memoized.
        """
        n = self.n_features
        bg = self.cfg.background.instances
        cfg = self.cfg
        rows = np.stack(
            [np.where(_bits(int(c) | self.outside, n), bg[j], cfg.target) for c, j in zip(corrupted, draws)]
        )
        probs = _predict_rows(self.oracle, rows, self.batch_size, self.threads)
        ref = self.reference
        return np.array(
            [score(ref, p, cfg.log_base, cfg.prob_floor) if c else 0.0 for c, p in zip(corrupted, probs)]
        )

    def restricted(self, community: int) -> "OracleGame":
        return OracleGame(self.oracle, self.cfg.restricted(community), self.batch_size, self.threads)


def importance_score(oracle: PredictionOracle, cfg: GameConfig, s: int) -> float:
    return OracleGame(oracle, cfg).value(s)


def as_game(oracle: PredictionOracle, cfg: GameConfig, **kw) -> OracleGame:
    return OracleGame(oracle, cfg, **kw)
