"""Scenario sets: the finite stand-in for "for every risk vector"."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import AnonRiskError
from .prob_core import (
    FiniteSpace,
    Partition,
    RiskVector,
    normalized_space,
    partition_of,
)


@dataclass(frozen=True, eq=False)
class Scenario:
    id: str
    x: RiskVector
    g: Optional[Partition] = None

    def __post_init__(self):
        if self.g is not None and self.g.space != self.x.space:
            raise AnonRiskError(f"scenario {self.id}: partition on a different space")


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    scenarios: tuple
    seed: Optional[int] = None

    def __post_init__(self):
        sc = tuple(self.scenarios)
        if not sc:
            raise AnonRiskError("a scenario set must not be empty")
        ids = [s.id for s in sc]
        if len(set(ids)) != len(ids):
            raise AnonRiskError("scenario ids must be unique")
        object.__setattr__(self, "scenarios", sc)

    def __iter__(self):
        return iter(self.scenarios)

    def __len__(self):
        return len(self.scenarios)

    def __getitem__(self, i):
        return self.scenarios[i]

    def __add__(self, other: "ScenarioSet") -> "ScenarioSet":
        return ScenarioSet(self.scenarios + as_scenarios(other).scenarios, self.seed)


def as_scenarios(obj) -> ScenarioSet:
    """Coerce a ScenarioSet, Scenario, RiskVector or a sequence of those."""
    if isinstance(obj, ScenarioSet):
        return obj
    if isinstance(obj, (Scenario, RiskVector)):
        obj = [obj]
    out = []
    for k, item in enumerate(obj):
        if isinstance(item, Scenario):
            out.append(item)
        elif isinstance(item, RiskVector):
            out.append(Scenario(f"s{k}", item))
        elif isinstance(item, tuple) and len(item) == 2:
            out.append(Scenario(f"s{k}", item[0], item[1]))
        else:
            raise AnonRiskError(f"cannot interpret {item!r} as a scenario")
    return ScenarioSet(tuple(out))


def _coverage_vectors(rng, space: FiniteSpace, n: int, nonnegative: bool):
    """Two vectors guaranteeing CP, ZP and BT are never vacuous.

    The first is sigma(S)-measurable and holds a zero and a constant
    component; the second is generic apart from a constant and a zero.
    """
    m = space.size
    lo = 0 if nonnegative else -1
    z = rng.integers(lo, lo + 3, m).astype(float)
    if m > 1 and np.all(z == z[0]):
        z[1] = z[0] + 1
    rows = [z, 2 * z]
    while len(rows) < n - 2:
        rows.append(z if nonnegative else -z)
    rows = rows[: max(1, n - 2)]
    rows += [np.zeros(m), np.ones(m)]
    measurable = np.array(rows[:n])
    generic = rng.integers(0 if nonnegative else -3, 4, (n, m)).astype(float)
    generic[-1] = 2.0
    generic[-2] = 0.0
    return measurable, generic


def random_battery(
    seed: int,
    count: int = 200,
    agents: Sequence[int] = (3, 4, 5),
    max_outcomes: int = 64,
    min_outcomes: int = 2,
    nonnegative: bool = False,
    space: Optional[FiniteSpace] = None,
    with_partitions: bool = False,
) -> ScenarioSet:
    """Seeded battery of integer-valued scenarios.

    Values come from ``{-3..3}`` (``{0..3}`` when ``nonnegative``) so sums
    group exactly.  The first two scenarios are coverage vectors (see
    :func:`_coverage_vectors`).  With ``with_partitions`` every scenario also
    carries target information: random labels, except that every fourth one
    uses the sigma-field of the vector itself so IB is exercised.
    """
    rng = np.random.default_rng(seed)
    lo = 0 if nonnegative else -3
    scenarios = []

    def new_space():
        if space is not None:
            return space
        m = int(rng.integers(min_outcomes, max_outcomes + 1))
        return normalized_space(rng.uniform(0.05, 1.0, m))

    def partition_for(k, x):
        if not with_partitions:
            return None
        if k % 4 == 0:
            return partition_of(list(x))
        blocks = int(rng.integers(1, 5))
        return Partition.from_labels(x.space, rng.integers(0, blocks, x.space.size))

    n0 = int(rng.choice(agents))
    sp0 = new_space()
    meas, gen = _coverage_vectors(rng, sp0, n0, nonnegative)
    for k, (name, mat) in enumerate((("cover-measurable", meas), ("cover-constant", gen))):
        x = RiskVector.from_matrix(sp0, mat)
        scenarios.append(Scenario(name, x, partition_for(k, x)))
    for k in range(max(0, count - 2)):
        n = int(rng.choice(agents))
        sp = new_space()
        x = RiskVector.from_matrix(sp, rng.integers(lo, 4, (n, sp.size)))
        scenarios.append(Scenario(f"r{k}", x, partition_for(k + 2, x)))
    return ScenarioSet(tuple(scenarios[:count]), seed)


def scenarios_from(vectors: Iterable[RiskVector], prefix: str = "s") -> ScenarioSet:
    return ScenarioSet(tuple(Scenario(f"{prefix}{k}", x) for k, x in enumerate(vectors)))
