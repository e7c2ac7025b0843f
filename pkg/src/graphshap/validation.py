"""Self-checks: axioms, solver agreement, graph approximations, sampling.

Each check returns :class:`PropertyResult` rows; ``run`` drives them for the
``validate`` command.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from graphshap import subsets
from graphshap.evaluation import EvaluationError, corrupt_and_score
from graphshap.explain import ExplainRequest, explain, mc_marginals
from graphshap.game import CoalitionGame, exact_shapley_permutation, exact_shapley_subset, verify_axioms
from graphshap.graph import (
    BinaryAdjacency,
    CommunityPartition,
    FeatureGraph,
    detect_communities,
    modularity,
)
from graphshap.oracles import LinearSoftmaxOracle, LookupOracle, OrGateOracle
from graphshap.value import BackgroundDataset, GameConfig, OracleGame


@dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    residual: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name} residual={self.residual:.3e} {self.detail}".rstrip()


# -- fixtures -----------------------------------------------------------------

OR_PHI = 0.5 * math.log2(4 / 3)


def or_gate_setup():
    oracle = OrGateOracle(2)
    bg = BackgroundDataset([[0, 0], [0, 1], [1, 0], [1, 1]], ("x0", "x1"))
    return oracle, GameConfig([1, 1], bg)


def random_game(n: int, rng: np.random.Generator) -> CoalitionGame:
    table = rng.uniform(0, 1, 1 << n)
    table[0] = 0.0
    return CoalitionGame.from_table(table)


def planted_game(n: int, rng: np.random.Generator):
    """Random game with one interchangeable pair and one dummy player."""
    i, j, d = (int(v) for v in rng.permutation(n)[:3])
    bi, bj, bd = 1 << i, 1 << j, 1 << d
    base: dict = {(0, 0): 0.0}
    table = np.empty(1 << n)
    for m in range(1 << n):
        m2 = m & ~bd
        key = (m2 & ~(bi | bj), bool(m2 & bi) + bool(m2 & bj))
        if key not in base:
            base[key] = float(rng.uniform(-1, 1))
        table[m] = base[key]
    return CoalitionGame.from_table(table), (min(i, j), max(i, j)), d


def binary_domain(n: int) -> np.ndarray:
    return np.array(list(itertools.product([0.0, 1.0], repeat=n)))


def random_lookup_instance(n: int, rng: np.random.Generator, n_classes: int = 2):
    """Random lookup classifier on {0,1}^n, random background rows and target."""
    domain = binary_domain(n)
    table = {tuple(x): rng.dirichlet(np.ones(n_classes)) for x in domain}
    rows = rng.choice(len(domain), size=min(len(domain), int(rng.integers(3, 12))), replace=False)
    target = domain[rng.integers(len(domain))]
    return LookupOracle(table), GameConfig(target, BackgroundDataset(domain[np.sort(rows)]))


def planted_blocks(b1: int, b2: int, rng: np.random.Generator, n_classes: int = 2):
    """Two independent binary blocks; the class depends on the first block only.

    Features are scattered over positions at random. The background is the
    whole domain, so under exhaustive marginalization every feature is
    independent of every other.
    """
    n = b1 + b2
    perm = rng.permutation(n)
    block1 = sorted(int(v) for v in perm[:b1])
    block2 = sorted(int(v) for v in perm[b1:])
    domain = binary_domain(n)
    by_block = {k: rng.dirichlet(np.ones(n_classes) * 0.7) for k in itertools.product([0.0, 1.0], repeat=b1)}
    table = {tuple(x): by_block[tuple(x[block1])] for x in domain}
    target = domain[rng.integers(len(domain))]
    cfg = GameConfig(target, BackgroundDataset(domain))
    return LookupOracle(table), cfg, (block1, block2)


def block_adjacency(n: int, blocks) -> BinaryAdjacency:
    bits = np.zeros((n, n), dtype=bool)
    for b in blocks:
        bits[np.ix_(b, b)] = True
    return BinaryAdjacency(bits, 0.5)


def two_cliques(k: int = 5) -> FeatureGraph:
    w = np.zeros((2 * k, 2 * k))
    w[:k, :k] = 1.0
    w[k:, k:] = 1.0
    return FeatureGraph(w)


def naive_shapley(game: CoalitionGame) -> np.ndarray:
    """Double loop over (player, coalition) with factorial weights."""
    n = game.n_features
    phi = np.zeros(n)
    for r in range(n):
        for s in range(1 << n):
            if s >> r & 1:
                continue
            k = bin(s).count("1")
            w = math.factorial(k) * math.factorial(n - k - 1) / math.factorial(n)
            phi[r] += w * (game.value(s | 1 << r) - game.value(s))
    return phi


# -- checks -------------------------------------------------------------------


def check_or_gate(**_) -> list[PropertyResult]:
    oracle, cfg = or_gate_setup()
    game = OracleGame(oracle, cfg)
    v = game.table()
    expect_v = np.array([0.0, 0.0, 0.0, math.log2(4 / 3)])
    phi = exact_shapley_subset(game).phi
    return [
        PropertyResult("or-gate/values", bool(np.max(np.abs(v - expect_v)) <= 1e-12), float(np.max(np.abs(v - expect_v)))),
        PropertyResult("or-gate/phi", bool(np.max(np.abs(phi - OR_PHI)) <= 1e-12), float(np.max(np.abs(phi - OR_PHI)))),
    ]


def check_axioms(seed: int = 0, n_games: int = 100, **_) -> list[PropertyResult]:
    rng = np.random.default_rng([seed, 1])
    worst = {"efficiency": 0.0, "symmetry": 0.0, "dummy": 0.0, "additivity": 0.0}
    ok = True
    found = [0, 0]
    for _ in range(n_games):
        n = int(rng.integers(3, 9))
        g, pair, dummy = planted_game(n, rng)
        h = random_game(n, rng)
        rep = verify_axioms(g, exact_shapley_subset(g), pair=(g, h))
        ok &= rep.passed
        found[0] += pair in rep.symmetric_pairs
        found[1] += dummy in rep.dummies
        worst["efficiency"] = max(worst["efficiency"], rep.efficiency_residual)
        worst["symmetry"] = max(worst["symmetry"], rep.symmetry_residual)
        worst["dummy"] = max(worst["dummy"], rep.dummy_residual)
        worst["additivity"] = max(worst["additivity"], rep.additivity_residual)
    planted_seen = found == [n_games, n_games]
    return [
        PropertyResult(f"axioms/{k}", ok and planted_seen and v <= 1e-9, v, f"games={n_games}")
        for k, v in worst.items()
    ]


def check_form_equivalence(seed: int = 0, n_games: int = 50, max_n: int = 9, **_) -> list[PropertyResult]:
    rng = np.random.default_rng([seed, 2])
    worst = 0.0
    for k in range(n_games):
        n = 2 + k % (max_n - 1)
        g = random_game(n, rng)
        d = np.max(np.abs(exact_shapley_subset(g).phi - exact_shapley_permutation(g).phi))
        worst = max(worst, float(d))
    return [PropertyResult("form-equivalence", worst <= 1e-12, worst, f"games={n_games} max_n={max_n}")]


def check_reductions(seed: int = 0, n_games: int = 20, **_) -> list[PropertyResult]:
    rng = np.random.default_rng([seed, 3])
    worst_c = worst_h = 0.0
    for _ in range(n_games):
        n = int(rng.integers(2, 9))
        oracle, cfg = random_lookup_instance(n, rng, int(rng.integers(2, 4)))
        full = explain(oracle, cfg, ExplainRequest("full")).phi
        cs = explain(oracle, cfg, ExplainRequest("csve", adjacency=BinaryAdjacency.complete(n))).phi
        hs = explain(oracle, cfg, ExplainRequest("hsve", partition=CommunityPartition(np.zeros(n, int)))).phi
        worst_c = max(worst_c, float(np.max(np.abs(cs - full))))
        worst_h = max(worst_h, float(np.max(np.abs(hs - full))))
    return [
        PropertyResult("reductions/csve-complete", worst_c <= 1e-12, worst_c),
        PropertyResult("reductions/hsve-single", worst_h <= 1e-12, worst_h),
    ]


def check_planted_blocks(seed: int = 0, n_instances: int = 12, **_) -> list[PropertyResult]:
    rng = np.random.default_rng([seed, 4])
    worst_c = worst_h = 0.0
    for _ in range(n_instances):
        b1, b2 = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        oracle, cfg, blocks = planted_blocks(b1, b2, rng, int(rng.integers(2, 4)))
        n = b1 + b2
        full = explain(oracle, cfg, ExplainRequest("full")).phi
        adj = block_adjacency(n, blocks)
        part = CommunityPartition.from_communities(blocks, n)
        cs = explain(oracle, cfg, ExplainRequest("csve", adjacency=adj)).phi
        hs = explain(oracle, cfg, ExplainRequest("hsve", partition=part)).phi
        worst_c = max(worst_c, float(np.max(np.abs(cs - full))))
        worst_h = max(worst_h, float(np.max(np.abs(hs - full))))
    return [
        PropertyResult("planted-blocks/csve-blocks", worst_c <= 1e-9, worst_c, f"instances={n_instances}"),
        PropertyResult("planted-blocks/hsve-blocks", worst_h <= 1e-9, worst_h, f"instances={n_instances}"),
    ]


def check_myopia(**_) -> list[PropertyResult]:
    oracle, cfg = or_gate_setup()
    cs = explain(oracle, cfg, ExplainRequest("csve", adjacency=BinaryAdjacency.empty(2))).phi
    full = explain(oracle, cfg, ExplainRequest("full")).phi
    ok = bool(np.all(cs == 0.0) and np.max(np.abs(full - OR_PHI)) <= 1e-12)
    return [PropertyResult("myopia/or-gate-edgeless", ok, float(np.max(np.abs(cs))), f"full={full.tolist()}")]


def mc_study(game: CoalitionGame, seeds, ms, context=None):
    """Estimates and per-run standard errors, shape (len(ms), len(seeds), n)."""
    n = game.n_features
    context = game.full if context is None else context
    est = np.zeros((len(ms), len(seeds), n))
    se = np.zeros_like(est)
    for a, m in enumerate(ms):
        for b, s in enumerate(seeds):
            for r in range(n):
                marg = mc_marginals(game, context, r, m, s)
                est[a, b, r] = marg.mean()
                se[a, b, r] = marg.std(ddof=1) / math.sqrt(m)
    return est, se


def check_mc_convergence(seed: int = 0, n_seeds: int = 20, **_) -> list[PropertyResult]:
    rng = np.random.default_rng([seed, 5])
    game = random_game(8, rng)
    exact = exact_shapley_subset(game).phi
    ms = [100, 1000, 10000]
    seeds = [seed * 1000 + s for s in range(n_seeds)]
    est, se = mc_study(game, seeds, ms)
    z = np.abs(est[-1] - exact) / se[-1]
    spread = est.std(axis=1, ddof=1).mean(axis=1)
    ratios = spread[:-1] / spread[1:]
    lo, hi = math.sqrt(10) / 1.5, math.sqrt(10) * 1.5
    return [
        PropertyResult("mc/within-4-stderr", bool(np.all(z <= 4)), float(z.max()), f"seeds={n_seeds} m=10000"),
        PropertyResult(
            "mc/stderr-scaling",
            bool(np.all((ratios >= lo) & (ratios <= hi))),
            float(np.max(np.abs(np.log(ratios / math.sqrt(10))))),
            f"ratios={np.round(ratios, 3).tolist()} expected~{math.sqrt(10):.3f}",
        ),
    ]


def reweighting_identity_scan(max_n: int = 12) -> dict:
    """Brute-force the reweighting identity over every (N, N_r, U) with r = 0.

    For each neighborhood ``N_r`` containing player 0 and each ``U`` inside
    ``N_r \\ {0}``, sums ``1 / C(|N|-1, |A|)`` over ``A`` in ``N \\ {0}`` with
    ``A & N_r == U`` and compares with ``|N| / |N_r| / C(|N_r|-1, e)`` for
    ``e = |U|`` and ``e = |U| - 1`` (the latter undefined when ``U`` is empty).
    """
    worst = {"|U|": 0.0, "|U|-1": 0.0}
    holds = {"|U|": True, "|U|-1": True}
    configs = 0
    for n in range(1, max_n + 1):
        others = np.arange(1 << (n - 1), dtype=np.int64) << 1  # subsets of N \ {0}
        sizes = np.array([bin(a).count("1") for a in others.tolist()])
        weights = np.array([1.0 / math.comb(n - 1, int(k)) for k in sizes])
        for nr_rest in range(1 << (n - 1)):
            nr = (nr_rest << 1) | 1
            k = bin(nr).count("1")
            sums = np.bincount(others & nr, weights=weights, minlength=nr + 1)
            for u_local in range(1 << (k - 1)):
                u = subsets.expand(u_local, subsets.members(nr)[1:])
                lhs = sums[u]
                usize = bin(u).count("1")
                configs += 1
                for key, e in (("|U|", usize), ("|U|-1", usize - 1)):
                    if e < 0:
                        holds[key] = False
                        continue
                    rhs = n / k / math.comb(k - 1, e)
                    err = abs(lhs - rhs) / rhs
                    worst[key] = max(worst[key], err)
                    if err > 1e-12:
                        holds[key] = False
    return {"max_n": max_n, "configs": configs, "holds": holds, "max_rel_error": worst}


def check_reweighting_identity(n: int = 12, **_) -> list[PropertyResult]:
    scan = reweighting_identity_scan(n)
    h = scan["holds"]
    ok = h["|U|"] and not h["|U|-1"]
    detail = (
        f"configs={scan['configs']} exponent |U| holds={h['|U|']} "
        f"exponent |U|-1 holds={h['|U|-1']} (max rel err {scan['max_rel_error']['|U|-1']:.3g})"
    )
    return [PropertyResult("appendix-identity", ok, scan["max_rel_error"]["|U|"], detail)]


def replay_merges(graph, partition: CommunityPartition) -> list[float]:
    """Modularity after each recorded merge, recomputed from scratch."""
    n = partition.n
    labels = np.arange(n)
    qs = [modularity(graph, CommunityPartition(labels.copy()))]
    for a, b in partition.merges:
        labels[labels == labels[b]] = labels[a]
        qs.append(modularity(graph, CommunityPartition(labels.copy())))
    return qs


def check_communities(seed: int = 0, n_graphs: int = 50, **_) -> list[PropertyResult]:
    g = two_cliques()
    part = detect_communities(g)
    q = modularity(g, part)
    split_ok = sorted(map(tuple, part.communities)) == [(0, 1, 2, 3, 4), (5, 6, 7, 8, 9)]
    rng = np.random.default_rng([seed, 6])
    min_step = math.inf
    for _ in range(n_graphs):
        n = int(rng.integers(2, 31))
        w = rng.uniform(0, 1, (n, n)) * (rng.uniform(0, 1, (n, n)) < rng.uniform(0.1, 0.6))
        g2 = FeatureGraph(np.triu(w, 1) + np.triu(w, 1).T)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # sparse draws can be edgeless
            part = detect_communities(g2)
        qs = replay_merges(g2, part)
        if len(qs) > 1:
            min_step = min(min_step, float(np.min(np.diff(qs))))
    return [
        PropertyResult("communities/two-cliques", split_ok and abs(q - 0.5) <= 1e-9, abs(q - 0.5)),
        PropertyResult("communities/monotone-merges", min_step > 0, min_step, f"graphs={n_graphs}"),
    ]


def linear_instance(seed: int, n: int = 8, n_classes: int = 2, n_background: int = 24):
    rng = np.random.default_rng([seed, 7])
    oracle = LinearSoftmaxOracle(rng.normal(0, 1.5, (n_classes, n)))
    bg = BackgroundDataset(rng.normal(0, 1, (n_background, n)))
    cfg = GameConfig(rng.normal(0, 1.5, n), bg)
    return oracle, cfg


def corruption_direction(n_instances: int = 100, coverage: float = 0.5, seed: int = 0):
    """Per instance: (full-SVE delta_prob, single-feature delta_prob)."""
    out = []
    for k in range(n_instances):
        oracle, cfg = linear_instance(seed * 100003 + k)
        target = int(np.argmax(oracle.predict(cfg.target)))
        deltas = []
        for method in ("full", "single"):
            attr = explain(oracle, cfg, ExplainRequest(method))
            try:
                deltas.append(corrupt_and_score(oracle, cfg, attr, coverage, target).delta_prob)
            except EvaluationError:
                deltas.append(0.0)
        out.append(tuple(deltas))
    return out


def check_corruption_direction(seed: int = 0, n_instances: int = 100, **_) -> list[PropertyResult]:
    pairs = corruption_direction(n_instances, seed=seed)
    wins = sum(1 for full, single in pairs if full >= single - 1e-12)
    need = math.ceil(0.8 * n_instances)
    return [PropertyResult("corruption-direction", wins >= need, float(wins), f"wins={wins}/{n_instances} need={need}")]


PROPERTIES: dict[str, Callable[..., list[PropertyResult]]] = {
    "or-gate": check_or_gate,
    "axioms": check_axioms,
    "form-equivalence": check_form_equivalence,
    "reductions": check_reductions,
    "planted-blocks": check_planted_blocks,
    "myopia": check_myopia,
    "mc-convergence": check_mc_convergence,
    "appendix-identity": check_reweighting_identity,
    "communities": check_communities,
    "corruption-direction": check_corruption_direction,
}


def run(names=None, **kw) -> list[PropertyResult]:
    names = list(PROPERTIES) if not names else names
    results = []
    for name in names:
        results.extend(PROPERTIES[name](**kw))
    return results
