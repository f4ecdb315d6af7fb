"""Reward allocation for mining pools, multi-coin mining and streaming revenue.

Each allocator has a closed form and a matching finite model on which the
same payouts come out of (generalized) CMRS.  Rewards are positive numbers
here; :func:`reward_axiom_reports` negates them before handing the model to
the loss-oriented checkers, so the flipped risk-fairness bound
``A_i >= inf X_i`` (non-negative rewards) is checked by the ordinary RF.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .axioms import FOUR_AXIOMS, run_checks
from .battery import Scenario, ScenarioSet
from .errors import (
    ColumnNotNormalized,
    NegativeShare,
    PoolOutOfRange,
    PriceNotInSupport,
    SchemaError,
    SharesExceedOne,
    WinnerOutOfRange,
)
from .prob_core import (
    FiniteSpace,
    Partition,
    RiskVector,
    normalized_space,
    same_level,
)
from .rules import cmrs, generalized_cmrs

SHARE_ATOL = 1e-12
RATIO_ATOL = 1e-9


@dataclass(frozen=True)
class PriceDist:
    """Finite price distribution, independent of who mines the block."""

    values: tuple
    probs: tuple

    def __post_init__(self):
        v = tuple(float(a) for a in self.values)
        p = tuple(float(a) for a in self.probs)
        if not v or len(v) != len(p):
            raise SchemaError("price values and probabilities must pair up")
        if any(a <= 0 for a in v):
            raise SchemaError("prices must be strictly positive")
        if any(a <= 0 for a in p) or abs(sum(p) - 1.0) > SHARE_ATOL:
            raise SchemaError("price probabilities must be positive and sum to 1")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", p)

    @classmethod
    def constant(cls, value: float) -> "PriceDist":
        return cls((value,), (1.0,))

    @property
    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))

    def check(self, price: float) -> float:
        for v in self.values:
            if same_level(v, price):
                return v
        raise PriceNotInSupport(f"price {price!r} not in support {list(self.values)}")


def _as_price(price) -> PriceDist:
    return price if isinstance(price, PriceDist) else PriceDist.constant(price)


def _ids(ids, n, prefix):
    if ids is None:
        return tuple(f"{prefix}{k + 1}" for k in range(n))
    ids = tuple(str(i) for i in ids)
    if len(ids) != n:
        raise SchemaError(f"expected {n} ids, got {len(ids)}")
    return ids


def _check_shares(values, label):
    arr = np.asarray(values, dtype=float)
    if np.any(arr < 0):
        raise NegativeShare(f"{label}: shares must be >= 0")
    if arr.sum() > 1.0 + SHARE_ATOL:
        raise SharesExceedOne(f"{label}: shares sum to {arr.sum():.12g} > 1")
    return arr


def _index(ids, key, err, what):
    if key is None:
        return None
    if isinstance(key, str):
        if key in ids:
            return ids.index(key)
        if key.lstrip("-").isdigit():
            key = int(key)
        else:
            raise err(f"unknown {what} {key!r}")
    if not 0 <= key < len(ids):
        raise err(f"{what} index {key} out of range 0..{len(ids) - 1}")
    return key


@dataclass(frozen=True)
class RewardModel:
    """Finite model of a reward scheme.

    ``vector`` holds each participant's stand-alone reward, ``events[w]``
    describes outcome ``w`` and ``target`` is the target information (None
    when plain CMRS applies).
    """

    vector: RiskVector
    space: FiniteSpace
    events: tuple
    target: Optional[Partition] = None

    def cmrs_payouts(self) -> np.ndarray:
        if self.target is None:
            return cmrs(self.vector).matrix
        return generalized_cmrs(self.vector, self.target).matrix


def _model(rows, probs, events, target_keys=None) -> RewardModel:
    if len(rows[0]) < 2:
        raise SchemaError("the finite model needs at least two participants")
    space = normalized_space(probs)
    vector = RiskVector.from_matrix(space, np.array(rows, dtype=float).T)
    target = None
    if target_keys is not None:
        _, labels = np.unique(np.array(target_keys), axis=0, return_inverse=True)
        target = Partition.from_labels(space, labels.ravel())
    return RewardModel(vector, space, tuple(events), target)


# ---------------------------------------------------------------------------
# single pool


@dataclass(frozen=True)
class PoolSpec:
    shares: tuple
    price: PriceDist
    miner_ids: Optional[tuple] = None

    def __post_init__(self):
        shares = _check_shares(self.shares, "pool")
        object.__setattr__(self, "shares", tuple(float(s) for s in shares))
        object.__setattr__(self, "price", _as_price(self.price))
        object.__setattr__(self, "miner_ids", _ids(self.miner_ids, len(shares), "m"))

    @property
    def n(self) -> int:
        return len(self.shares)

    @property
    def pool_share(self) -> float:
        return float(sum(self.shares))


def _ratio(num, den):
    # 0/0 = 0 for participants of an event that cannot happen
    num = np.asarray(num, dtype=float)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def pool_allocate(spec: PoolSpec, winner=None, price: Optional[float] = None) -> np.ndarray:
    """Payouts when ``winner`` (index or id, None if the pool lost) mined at ``price``.

    Every miner receives ``share_i / pool_share * price`` once the pool wins.
    """
    w = _index(spec.miner_ids, winner, WinnerOutOfRange, "miner")
    if price is None:
        if len(spec.price.values) != 1:
            raise PriceNotInSupport("a realised price is required for a random price")
        price = spec.price.values[0]
    price = spec.price.check(price)
    if w is None:
        return np.zeros(spec.n)
    return _ratio(spec.shares, spec.pool_share) * price


def pool_expected(spec: PoolSpec) -> np.ndarray:
    """Ex-ante payouts ``share_i * E[price]``."""
    return np.asarray(spec.shares) * spec.price.mean


def pool_as_risk_vector(spec: PoolSpec) -> RewardModel:
    """Outcomes (winner or none) x price, weighted by independence."""
    rows, probs, events = [], [], []
    lose = 1.0 - spec.pool_share
    winners = [(i, s) for i, s in enumerate(spec.shares) if s > 0]
    if lose > SHARE_ATOL:
        winners.append((None, lose))
    for (who, pw), (price, pp) in itertools.product(winners, zip(spec.price.values, spec.price.probs)):
        reward = np.zeros(spec.n)
        if who is not None:
            reward[who] = price
        rows.append(reward)
        probs.append(pw * pp)
        events.append((who, price))
    return _model(rows, probs, events)


def pool_equivalence_gap(spec: PoolSpec) -> float:
    """Max gap between CMRS on the model and :func:`pool_allocate`."""
    model = pool_as_risk_vector(spec)
    a = model.cmrs_payouts()
    closed = np.stack([pool_allocate(spec, w, p) for w, p in model.events], axis=1)
    return float(np.max(np.abs(a - closed)))


# ---------------------------------------------------------------------------
# several pools


@dataclass(frozen=True)
class MultiPoolSpec:
    """``memberships[i][j]`` is P(miner i mines the block through pool j)."""

    memberships: tuple
    price: PriceDist
    miner_ids: Optional[tuple] = None
    pool_ids: Optional[tuple] = None

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.memberships, dtype=float))
        _check_shares(q.ravel(), "pools")
        object.__setattr__(self, "memberships", tuple(tuple(float(v) for v in r) for r in q))
        object.__setattr__(self, "price", _as_price(self.price))
        object.__setattr__(self, "miner_ids", _ids(self.miner_ids, q.shape[0], "m"))
        object.__setattr__(self, "pool_ids", _ids(self.pool_ids, q.shape[1], "p"))

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.memberships, dtype=float)

    @property
    def pool_shares(self) -> np.ndarray:
        return self.matrix.sum(axis=0)


def multi_pool_allocate(spec: MultiPoolSpec, pool=None, price: Optional[float] = None) -> np.ndarray:
    """Each pool splits its own block in proportion to its members' shares."""
    j = _index(spec.pool_ids, pool, PoolOutOfRange, "pool")
    if price is None:
        if len(spec.price.values) != 1:
            raise PriceNotInSupport("a realised price is required for a random price")
        price = spec.price.values[0]
    price = spec.price.check(price)
    if j is None:
        return np.zeros(len(spec.miner_ids))
    return _ratio(spec.matrix[:, j], spec.pool_shares[j]) * price


def multi_pool_as_risk_vector(spec: MultiPoolSpec) -> RewardModel:
    """Outcomes (winning miner, its pool, price); target = (price, winning pool)."""
    q = spec.matrix
    n, m = q.shape
    cells = [(i, j, q[i, j]) for i in range(n) for j in range(m) if q[i, j] > 0]
    lose = 1.0 - q.sum()
    if lose > SHARE_ATOL:
        cells.append((None, None, lose))
    rows, probs, events, keys = [], [], [], []
    for (i, j, pw), (k, (price, pp)) in itertools.product(
        cells, enumerate(zip(spec.price.values, spec.price.probs))
    ):
        reward = np.zeros(n)
        if i is not None:
            reward[i] = price
        rows.append(reward)
        probs.append(pw * pp)
        events.append((j, price))
        keys.append((-1 if j is None else j, k))
    return _model(rows, probs, events, keys)


def multi_pool_equivalence_gap(spec: MultiPoolSpec) -> float:
    model = multi_pool_as_risk_vector(spec)
    a = model.cmrs_payouts()
    closed = np.stack([multi_pool_allocate(spec, j, p) for j, p in model.events], axis=1)
    return float(np.max(np.abs(a - closed)))


# ---------------------------------------------------------------------------
# several coins


@dataclass(frozen=True)
class MultiCoinSpec:
    """``shares[j][i]`` is P(miner i issues the block of coin j)."""

    shares: tuple
    prices: tuple
    miner_ids: Optional[tuple] = None
    coin_ids: Optional[tuple] = None

    def __post_init__(self):
        d = np.atleast_2d(np.asarray(self.shares, dtype=float))
        for j, row in enumerate(d):
            _check_shares(row, f"coin {j}")
        prices = tuple(_as_price(p) for p in self.prices)
        if len(prices) != d.shape[0]:
            raise SchemaError(f"{d.shape[0]} coins but {len(prices)} price distributions")
        object.__setattr__(self, "shares", tuple(tuple(float(v) for v in r) for r in d))
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "miner_ids", _ids(self.miner_ids, d.shape[1], "m"))
        object.__setattr__(self, "coin_ids", _ids(self.coin_ids, d.shape[0], "c"))

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.shares, dtype=float)


def multi_coin_allocate(spec: MultiCoinSpec, realized: Sequence) -> np.ndarray:
    """``realized[j]`` is ``(mined, price)`` for coin ``j``.

    Each mined coin is split by the miners' relative shares for that coin.
    """
    d = spec.matrix
    if len(realized) != d.shape[0]:
        raise SchemaError(f"expected {d.shape[0]} realised coins, got {len(realized)}")
    out = np.zeros(d.shape[1])
    for j, (mined, price) in enumerate(realized):
        dist = spec.prices[j]
        if price is None:
            if mined and len(dist.values) != 1:
                raise PriceNotInSupport(f"coin {spec.coin_ids[j]}: realised price required")
            price = dist.values[0]
        price = dist.check(price)
        if mined:
            out += _ratio(d[j], d[j].sum()) * price
    return out


def multi_coin_as_risk_vector(spec: MultiCoinSpec) -> RewardModel:
    """Independent product over coins of (winner or none) x price.

    Target information: every coin's price and whether it was mined.
    """
    d = spec.matrix
    n_coins, n = d.shape
    factors = []
    for j in range(n_coins):
        cells = [(i, s) for i, s in enumerate(d[j]) if s > 0]
        lose = 1.0 - d[j].sum()
        if lose > SHARE_ATOL:
            cells.append((None, lose))
        dist = spec.prices[j]
        factors.append([
            (who, k, price, pw * pp)
            for (who, pw), (k, (price, pp)) in itertools.product(
                cells, enumerate(zip(dist.values, dist.probs))
            )
        ])
    rows, probs, events, keys = [], [], [], []
    for combo in itertools.product(*factors):
        reward = np.zeros(n)
        prob = 1.0
        key = []
        for who, k, price, p in combo:
            if who is not None:
                reward[who] += price
            prob *= p
            key += [0 if who is None else 1, k]
        rows.append(reward)
        probs.append(prob)
        events.append(tuple((who is not None, price) for who, _, price, _ in combo))
        keys.append(tuple(key))
    return _model(rows, probs, events, keys)


def multi_coin_equivalence_gap(spec: MultiCoinSpec) -> float:
    model = multi_coin_as_risk_vector(spec)
    a = model.cmrs_payouts()
    closed = np.stack([multi_coin_allocate(spec, ev) for ev in model.events], axis=1)
    return float(np.max(np.abs(a - closed)))


# ---------------------------------------------------------------------------
# subscription revenue


@dataclass(frozen=True)
class RevenueSpec:
    """User-centric revenue split.

    ``fees[j]`` is the distributable part of user ``j``'s fee, ``ratios[i][j]``
    the share of user ``j``'s streams going to artist ``i``.
    """

    fees: tuple
    subscribed: tuple
    ratios: tuple
    artist_ids: Optional[tuple] = None
    user_ids: Optional[tuple] = None

    def __post_init__(self):
        fees = np.asarray(self.fees, dtype=float)
        r = np.atleast_2d(np.asarray(self.ratios, dtype=float))
        if np.any(fees <= 0):
            raise SchemaError("distributable fees must be > 0")
        if r.shape[1] != fees.size or len(self.subscribed) != fees.size:
            raise SchemaError("fees, subscriptions and ratio columns must have one entry per user")
        if np.any(r < 0):
            raise NegativeShare("attribution ratios must be >= 0")
        bad = np.flatnonzero(np.abs(r.sum(axis=0) - 1.0) > RATIO_ATOL)
        if bad.size:
            raise ColumnNotNormalized(f"ratios for user column {int(bad[0])} sum to {r.sum(axis=0)[bad[0]]:.12g}")
        object.__setattr__(self, "fees", tuple(float(v) for v in fees))
        object.__setattr__(self, "subscribed", tuple(bool(v) for v in self.subscribed))
        object.__setattr__(self, "ratios", tuple(tuple(float(v) for v in row) for row in r))
        object.__setattr__(self, "artist_ids", _ids(self.artist_ids, r.shape[0], "a"))
        object.__setattr__(self, "user_ids", _ids(self.user_ids, fees.size, "u"))

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.ratios, dtype=float)

    def distributable(self) -> float:
        return float(sum(f for f, s in zip(self.fees, self.subscribed) if s))


def normalize_streams(streams) -> np.ndarray:
    """Column-normalise stream counts (artists x users) into ratios."""
    s = np.atleast_2d(np.asarray(streams, dtype=float))
    if np.any(s < 0):
        raise NegativeShare("stream counts must be >= 0")
    tot = s.sum(axis=0)
    bad = np.flatnonzero(tot <= 0)
    if bad.size:
        raise ColumnNotNormalized(f"user column {int(bad[0])} has no streams")
    return s / tot


def revenue_share(spec: RevenueSpec) -> np.ndarray:
    """Artist ``i`` gets ``sum_j ratio[i][j] * fee_j`` over subscribed users."""
    paid = np.asarray(spec.fees) * np.asarray(spec.subscribed, dtype=float)
    return spec.matrix @ paid


def revenue_as_risk_vector(spec: RevenueSpec, subscribe_probs) -> RewardModel:
    """Users subscribe independently, because of artist ``i`` w.p. ``pi_j * r_ij``.

    Target information: which users subscribed.  Each event records the
    subscription pattern so the closed form can be evaluated per outcome.
    """
    r = spec.matrix
    n, m = r.shape
    pis = np.asarray(subscribe_probs, dtype=float)
    factors = []
    for j in range(m):
        cells = [(i, pis[j] * r[i, j]) for i in range(n) if pis[j] * r[i, j] > 0]
        if 1.0 - pis[j] > SHARE_ATOL:
            cells.append((None, 1.0 - pis[j]))
        factors.append(cells)
    rows, probs, events = [], [], []
    for combo in itertools.product(*factors):
        reward = np.zeros(n)
        prob = 1.0
        for j, (who, p) in enumerate(combo):
            if who is not None:
                reward[who] += spec.fees[j]
            prob *= p
        rows.append(reward)
        probs.append(prob)
        events.append(tuple(who is not None for who, _ in combo))
    return _model(rows, probs, events, [tuple(int(e) for e in ev) for ev in events])


def revenue_equivalence_gap(spec: RevenueSpec, subscribe_probs) -> float:
    model = revenue_as_risk_vector(spec, subscribe_probs)
    a = model.cmrs_payouts()
    closed = np.stack(
        [revenue_share(RevenueSpec(spec.fees, ev, spec.ratios)) for ev in model.events], axis=1
    )
    return float(np.max(np.abs(a - closed)))


# ---------------------------------------------------------------------------


def reward_axiom_reports(model: RewardModel, rule="cmrs", axioms=FOUR_AXIOMS):
    """Run the loss-oriented checkers on the negated reward model."""
    neg = RiskVector.from_matrix(model.space, -model.vector.matrix)
    return run_checks(rule, ScenarioSet((Scenario("reward-model", neg, model.target),)), axioms)
