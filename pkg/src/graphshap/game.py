"""Finite cooperative games and their exact Shapley values.

A game is a feature count plus a characteristic function over feature sets
(integer bitmasks, see :mod:`graphshap.subsets`). Values are memoized per
set, so every solver below touches each coalition at most once.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from graphshap import subsets

EXACT_LIMIT = 20
PERMUTATION_LIMIT = 10
AXIOM_LIMIT = 16


class GameError(ValueError):
    pass


class ExactLimitError(GameError):
    pass


class NonFiniteValueError(GameError):
    def __init__(self, subset: int, value: float):
        self.subset = subset
        self.value = value
        super().__init__(
            f"characteristic function returned {value!r} for subset {subsets.members(subset)}"
        )


class Method(str, enum.Enum):
    EXACT = "exact"
    EXACT_PERMUTATION = "exact_permutation"
    CSVE = "csve"
    HSVE = "hsve"
    MONTE_CARLO = "monte_carlo"
    SINGLE = "single"


class CoalitionGame:
    """A game over ``n_features`` players with a memoized value function.

    ``value_fn`` maps a bitmask to a real number and must return exactly 0
    for the empty set. Subclasses that can evaluate many coalitions at once
    override :meth:`_evaluate_many`.
    """

    def __init__(self, n_features: int, value_fn: Optional[Callable[[int], float]] = None):
        if n_features < 1:
            raise GameError(f"n_features must be positive, got {n_features}")
        self.n_features = n_features
        self._value_fn = value_fn
        self._memo: dict[int, float] = {}

    @property
    def value_calls(self) -> int:
        return len(self._memo)

    @property
    def full(self) -> int:
        return subsets.full_mask(self.n_features)

    def _evaluate(self, mask: int) -> float:
        if self._value_fn is None:
            raise NotImplementedError
        return self._value_fn(mask)

    def _evaluate_many(self, masks: list[int]) -> list[float]:
        return [self._evaluate(m) for m in masks]

    def value(self, mask: int) -> float:
        return float(self.values([mask])[0])

    def values(self, masks: Iterable[int]) -> np.ndarray:
        masks = [int(m) for m in masks]
        todo = sorted({m for m in masks if m not in self._memo})
        if todo:
            for m in todo:
                subsets.check_within(m, self.n_features)
            for m, v in zip(todo, self._evaluate_many(todo)):
                v = float(v)
                if not math.isfinite(v):
                    raise NonFiniteValueError(m, v)
                if m == 0 and v != 0.0:
                    raise GameError(f"value of the empty coalition must be 0, got {v!r}")
                self._memo[m] = v
        return np.array([self._memo[m] for m in masks], dtype=float)

    def table(self) -> np.ndarray:
        """Values of all ``2**n`` coalitions indexed by mask."""
        return self.values(range(1 << self.n_features))

    def __add__(self, other: "CoalitionGame") -> "CoalitionGame":
        if other.n_features != self.n_features:
            raise GameError("cannot add games of different width")
        return CoalitionGame(self.n_features, lambda m: self.value(m) + other.value(m))

    def scaled(self, c: float) -> "CoalitionGame":
        return CoalitionGame(self.n_features, lambda m: c * self.value(m))

    @classmethod
    def from_table(cls, table: Sequence[float]) -> "CoalitionGame":
        table = np.asarray(table, dtype=float)
        n = int(len(table)).bit_length() - 1
        if n < 1 or len(table) != 1 << n:
            raise GameError("table length must be a power of two >= 2")
        return cls(n, lambda m: float(table[m]))


@dataclass(frozen=True, eq=False)
class Attribution:
    """Per-feature prediction power plus how it was obtained.

    ``computed`` marks which entries were actually evaluated; the rest hold
    NaN when only a subset of features was requested.
    """

    phi: np.ndarray
    method: Method
    value_calls: int = 0
    mc_samples: Optional[int] = None
    seed: Optional[int] = None
    computed: Optional[np.ndarray] = None
    n_games: int = 1
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float)
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        computed = (
            np.ones(len(phi), dtype=bool)
            if self.computed is None
            else np.array(self.computed, dtype=bool)
        )
        if len(computed) != len(phi):
            raise ValueError("computed mask length differs from phi")
        computed.setflags(write=False)
        object.__setattr__(self, "computed", computed)

    @property
    def n_features(self) -> int:
        return len(self.phi)


def shapley_weights(k: int) -> np.ndarray:
    """``w[s] = s! (k-s-1)! / k! = 1 / (k C(k-1, s))``, correctly rounded."""
    return np.array([1 / (k * math.comb(k - 1, s)) for s in range(k)])


def context_shapley(
    game: CoalitionGame, context: int, players: Optional[Iterable[int]] = None
) -> dict[int, float]:
    """Shapley values of ``players`` in the subgame restricted to ``context``.

    Coalitions range over subsets of ``context`` only; with ``context`` equal
    to the full set this is the ordinary subset-form Shapley value.
    """
    idx = subsets.members(context)
    k = len(idx)
    if k == 0:
        raise GameError("empty context")
    if players is None:
        players = idx
    pos = {f: b for b, f in enumerate(idx)}
    vals = game.values(subsets.expand_all(idx).tolist())
    sizes = subsets.popcounts(k)
    w = shapley_weights(k)
    local = np.arange(1 << k, dtype=np.int64)
    out = {}
    for r in players:
        if r not in pos:
            raise GameError(f"player {r} not in context {idx}")
        bit = 1 << pos[r]
        without = local[(local & bit) == 0]
        contrib = w[sizes[without]] * (vals[without | bit] - vals[without])
        out[r] = math.fsum(contrib.tolist())
    return out


def exact_shapley_subset(game: CoalitionGame, limit: int = EXACT_LIMIT) -> Attribution:
    n = game.n_features
    if n > limit:
        raise ExactLimitError(
            f"{n} features exceeds the exact limit of {limit}; "
            "use Monte Carlo estimation (mc_shapley) instead"
        )
    before = game.value_calls
    phi = context_shapley(game, game.full)
    return Attribution(
        phi=[phi[r] for r in range(n)],
        method=Method.EXACT,
        value_calls=game.value_calls - before,
    )


def exact_shapley_permutation(
    game: CoalitionGame, limit: int = PERMUTATION_LIMIT, chunk: int = 1 << 16
) -> Attribution:
    """Average marginal contribution over all ``n!`` player orders."""
    n = game.n_features
    if n > limit:
        raise ExactLimitError(
            f"{n} features exceeds the permutation limit of {limit}; "
            "use exact_shapley_subset or Monte Carlo estimation"
        )
    before = game.value_calls
    vals = game.table()
    partials: list[list[float]] = [[] for _ in range(n)]
    perms = itertools.permutations(range(n))
    while True:
        block = np.array(list(itertools.islice(perms, chunk)), dtype=np.int64)
        if block.size == 0:
            break
        bits = np.left_shift(1, block)
        incl = np.cumsum(bits, axis=1)
        marg = vals[incl] - vals[incl - bits]
        for p in range(n):
            partials[p].append(math.fsum(marg[block == p].tolist()))
    total = math.factorial(n)
    return Attribution(
        phi=[math.fsum(partials[p]) / total for p in range(n)],
        method=Method.EXACT_PERMUTATION,
        value_calls=game.value_calls - before,
    )


@dataclass(frozen=True)
class AxiomReport:
    efficiency_ok: bool
    efficiency_residual: float
    symmetry_ok: bool
    symmetry_residual: float
    symmetric_pairs: list
    dummy_ok: bool
    dummy_residual: float
    dummies: list
    additivity_ok: Optional[bool] = None
    additivity_residual: Optional[float] = None

    @property
    def passed(self) -> bool:
        return (
            self.efficiency_ok
            and self.symmetry_ok
            and self.dummy_ok
            and self.additivity_ok is not False
        )


def verify_axioms(
    game: CoalitionGame,
    attribution: Attribution,
    pair: Optional[tuple[CoalitionGame, CoalitionGame]] = None,
    tol: float = 1e-9,
) -> AxiomReport:
    """Check efficiency, symmetry, dummy and (optionally) additivity.

    Interchangeable and dummy players are discovered by enumerating every
    coalition, with value comparisons at tolerance ``tol``. Additivity is
    checked on ``pair`` when given.
    """
    n = game.n_features
    if attribution.n_features != n:
        raise GameError(f"attribution has {attribution.n_features} entries, game has {n}")
    if n > AXIOM_LIMIT:
        raise ExactLimitError(f"axiom verification enumerates 2^{n} coalitions; limit is {AXIOM_LIMIT}")
    phi = attribution.phi
    vals = game.table()
    allm = np.arange(1 << n, dtype=np.int64)

    eff = abs(math.fsum(phi.tolist()) - vals[-1])

    pairs, sym = [], 0.0
    for i, j in itertools.combinations(range(n), 2):
        bi, bj = 1 << i, 1 << j
        s = allm[(allm & (bi | bj)) == 0]
        if np.all(np.abs(vals[s | bi] - vals[s | bj]) <= tol):
            pairs.append((i, j))
            sym = max(sym, abs(phi[i] - phi[j]))

    dummies, dum = [], 0.0
    for i in range(n):
        bi = 1 << i
        s = allm[(allm & bi) == 0]
        if np.all(np.abs(vals[s | bi] - vals[s]) <= tol):
            dummies.append(i)
            dum = max(dum, abs(phi[i]))

    add_ok = add_res = None
    if pair is not None:
        g, h = pair
        lhs = exact_shapley_subset(g + h).phi
        rhs = exact_shapley_subset(g).phi + exact_shapley_subset(h).phi
        add_res = float(np.max(np.abs(lhs - rhs)))
        add_ok = add_res <= tol

    return AxiomReport(
        efficiency_ok=eff <= tol,
        efficiency_residual=float(eff),
        symmetry_ok=sym <= tol,
        symmetry_residual=float(sym),
        symmetric_pairs=pairs,
        dummy_ok=dum <= tol,
        dummy_residual=float(dum),
        dummies=dummies,
        additivity_ok=add_ok,
        additivity_residual=add_res,
    )
