"""Shapley explanations: full, neighborhood-restricted, community-restricted.

All three estimate a feature's prediction power as a Shapley value over some
context set of features (everything, the feature's graph neighborhood, or
its community). A context is enumerated exactly when that is affordable and
sampled by random permutations otherwise.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from graphshap import subsets
from graphshap.game import (
    EXACT_LIMIT,
    Attribution,
    CoalitionGame,
    ExactLimitError,
    GameError,
    Method,
    context_shapley,
)
from graphshap.graph import BinaryAdjacency, CommunityPartition, neighborhood
from graphshap.oracles import PredictionOracle
from graphshap.value import GameConfig, OracleGame

_MC_TAG = 0x3C5E


class RequestError(ValueError):
    pass


class ExplainMethod(str, enum.Enum):
    FULL = "full"
    CSVE = "csve"
    HSVE = "hsve"
    SINGLE = "single"


@dataclass(frozen=True, eq=False)
class ExplainRequest:
    method: ExplainMethod = ExplainMethod.FULL
    adjacency: Optional[BinaryAdjacency] = None
    partition: Optional[CommunityPartition] = None
    mc_samples: int = 1000
    exact_cutoff: int = 12
    seed: int = 0
    features: Optional[int] = None
    fused_mc: bool = False

    def __post_init__(self):
        object.__setattr__(self, "method", ExplainMethod(self.method))
        if self.method is ExplainMethod.CSVE and self.adjacency is None:
            raise RequestError("method csve requires an adjacency")
        if self.method is ExplainMethod.HSVE and self.partition is None:
            raise RequestError("method hsve requires a partition")
        if self.mc_samples < 1:
            raise RequestError("mc_samples must be positive")
        if not 1 <= self.exact_cutoff <= EXACT_LIMIT:
            raise RequestError(f"exact_cutoff must lie in 1..{EXACT_LIMIT}")


def use_exact(context_size: int, exact_cutoff: int = 12, mc_samples: int = 1000) -> bool:
    """Enumerate iff the context costs no more than a few MC budgets."""
    if context_size > EXACT_LIMIT:
        return False
    return 2**context_size <= max(2**exact_cutoff, 4 * mc_samples)


def mc_marginals(
    game: CoalitionGame, context: int, r: int, m: int, seed: int = 0, fused: bool = False
) -> np.ndarray:
    """The ``m`` sampled marginal contributions of ``r`` within ``context``.

    Each sample draws a uniform order of the context and takes
    ``v(pre + r) - v(pre)`` for the predecessors ``pre`` of ``r``. With
    ``fused`` (oracle games only) each sample also draws one background
    instance and marginalizes both coalitions with that single instance.
    """
    if m < 1:
        raise GameError("m must be at least 1")
    if context == 0:
        raise GameError("empty context")
    if not (context >> r) & 1:
        raise GameError(f"feature {r} is not in its context {subsets.members(context)}")
    idx = subsets.members(context)
    rbit = 1 << r
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, _MC_TAG, r])))
    k = len(idx)
    if k == 1:
        pre = np.zeros(m, dtype=np.int64)
    else:
        order = np.argsort(rng.random((m, k)), axis=1)
        feats = np.asarray(idx)[order]
        if max(idx) < 63:
            bits = np.left_shift(np.int64(1), feats)
            excl = np.cumsum(bits, axis=1) - bits
            pre = excl[feats == r]
        else:
            pre = np.empty(m, dtype=object)
            for row in range(m):
                acc = 0
                for f in feats[row].tolist():
                    if f == r:
                        break
                    acc |= 1 << f
                pre[row] = acc
    if fused:
        if not isinstance(game, OracleGame):
            raise GameError("fused sampling needs an oracle-backed game")
        draws = rng.integers(0, len(game.cfg.background), size=m)
        pre_list = [int(p) for p in pre]
        v1 = game.single_draw_values([p | rbit for p in pre_list], draws)
        v2 = game.single_draw_values(pre_list, draws)
        return v1 - v2
    if k == 1:
        return np.full(m, game.value(rbit) - game.value(0))
    pre_list = [int(p) for p in pre]
    uniq = sorted(set(pre_list) | {p | rbit for p in pre_list})
    lookup = dict(zip(uniq, game.values(uniq).tolist()))
    return np.array([lookup[p | rbit] - lookup[p] for p in pre_list])


def mc_shapley(
    game: CoalitionGame, context: int, r: int, m: int = 1000, seed: int = 0, fused: bool = False
) -> float:
    if context == 1 << r and not fused:
        return game.value(1 << r) - game.value(0)
    return float(np.mean(mc_marginals(game, context, r, m, seed, fused)))


def _context_values(
    game: CoalitionGame,
    context: int,
    players: Iterable[int],
    exact_cutoff: int,
    mc_samples: int,
    seed: int,
    fused: bool,
) -> tuple[dict[int, float], bool]:
    players = list(players)
    if use_exact(subsets.popcount(context), exact_cutoff, mc_samples):
        return context_shapley(game, context, players), False
    return {r: mc_shapley(game, context, r, mc_samples, seed, fused) for r in players}, True


def _attribution(phi: dict[int, float], n: int, method: Method, calls: int, req_like: dict) -> Attribution:
    vec = np.full(n, np.nan)
    computed = np.zeros(n, dtype=bool)
    for r, v in phi.items():
        vec[r] = v
        computed[r] = True
    return Attribution(phi=vec, method=method, value_calls=calls, computed=computed, **req_like)


def full_sve(
    game: CoalitionGame,
    exact_cutoff: int = 12,
    mc_samples: int = 1000,
    seed: int = 0,
    features: Optional[int] = None,
    fused: bool = False,
) -> Attribution:
    n = game.n_features
    players = subsets.members(game.full if features is None else features)
    before = game.value_calls
    phi, sampled = _context_values(game, game.full, players, exact_cutoff, mc_samples, seed, fused)
    meta = {"mc_samples": mc_samples, "seed": seed} if sampled else {}
    method = Method.MONTE_CARLO if sampled else Method.EXACT
    return _attribution(phi, n, method, game.value_calls - before, meta)


def c_sve(
    game: CoalitionGame,
    adjacency: BinaryAdjacency,
    r: int,
    exact_cutoff: int = 12,
    mc_samples: int = 1000,
    seed: int = 0,
    fused: bool = False,
) -> float:
    """Shapley value of ``r`` among its neighborhood (``r`` counted in it)."""
    if adjacency.n != game.n_features:
        raise GameError(f"adjacency has {adjacency.n} nodes, game has {game.n_features} features")
    ctx = neighborhood(adjacency, r)
    phi, _ = _context_values(game, ctx, [r], exact_cutoff, mc_samples, seed, fused)
    return phi[r]


def h_sve(
    game_factory: Callable[[int], CoalitionGame],
    partition: CommunityPartition,
    exact_cutoff: int = 12,
    mc_samples: int = 1000,
    seed: int = 0,
    features: Optional[int] = None,
    allow_mc: bool = True,
    fused: bool = False,
) -> Attribution:
    """Per-community Shapley values on community-restricted games.

    ``game_factory(community_mask)`` returns the game whose value function is
    restricted to that community.
    """
    n = partition.n
    wanted = subsets.full_mask(n) if features is None else features
    phi: dict[int, float] = {}
    calls, sampled = 0, False
    for community in partition.masks():
        players = subsets.members(community & wanted)
        if not players:
            continue
        k = subsets.popcount(community)
        if not use_exact(k, exact_cutoff, mc_samples) and not allow_mc:
            raise ExactLimitError(f"community of {k} features is too large without Monte Carlo")
        game = game_factory(community)
        before = game.value_calls
        vals, mc = _context_values(game, community, players, exact_cutoff, mc_samples, seed, fused)
        phi.update(vals)
        sampled |= mc
        calls += game.value_calls - before
    meta = {"mc_samples": mc_samples, "seed": seed} if sampled else {}
    return _attribution(phi, n, Method.HSVE, calls, meta)


def _prefetch_neighborhoods(game: CoalitionGame, contexts: list[int]) -> None:
    masks: set[int] = set()
    for ctx in contexts:
        masks.update(subsets.expand_all(subsets.members(ctx)).tolist())
    game.values(sorted(masks))


def explain(
    oracle: PredictionOracle,
    cfg: GameConfig,
    req: ExplainRequest,
    batch_size: int = 256,
    threads: int = 1,
) -> Attribution:
    """Run one explanation request against ``oracle`` for ``cfg.target``."""
    n = cfg.n_features
    features = subsets.full_mask(n) if req.features is None else req.features
    subsets.check_within(features, n)
    game = OracleGame(oracle, cfg.restricted(None), batch_size, threads)
    kw = dict(exact_cutoff=req.exact_cutoff, mc_samples=req.mc_samples, seed=req.seed, fused=req.fused_mc)

    if req.method is ExplainMethod.FULL:
        return full_sve(game, features=features, **kw)

    if req.method is ExplainMethod.SINGLE:
        players = subsets.members(features)
        vals = game.values([1 << r for r in players])
        return _attribution(dict(zip(players, vals.tolist())), n, Method.SINGLE, game.value_calls, {})

    if req.method is ExplainMethod.CSVE:
        adj = req.adjacency
        if adj.n != n:
            raise RequestError(f"adjacency has {adj.n} nodes, instance has {n} features")
        players = subsets.members(features)
        contexts = {r: neighborhood(adj, r) for r in players}
        exact = [c for c in contexts.values() if use_exact(subsets.popcount(c), req.exact_cutoff, req.mc_samples)]
        _prefetch_neighborhoods(game, exact)
        sampled = len(exact) < len(contexts)
        phi = {r: c_sve(game, adj, r, **kw) for r in players}
        meta = {"mc_samples": req.mc_samples, "seed": req.seed} if sampled else {}
        return _attribution(phi, n, Method.CSVE, game.value_calls, meta)

    part = req.partition
    if part.n != n:
        raise RequestError(f"partition covers {part.n} nodes, instance has {n} features")
    return h_sve(game.restricted, part, features=features, **kw)
