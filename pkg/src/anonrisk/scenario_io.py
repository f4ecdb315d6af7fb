"""Scenario files and report serialisation.

A scenario file is JSON::

    {
      "space": [0.25, 0.25, 0.25, 0.25],
      "agents": {"a": [0, 1, 0, 1], "b": [0, 0, 1, 1], "c": [0, 0, 0, 0]},
      "target_partition": [[0, 1], [2, 3]],
      "rule": {"name": "mixture", "weight": 0.5,
               "first": {"name": "identity"}, "second": {"name": "cmrs"}}
    }

``target_partition`` and ``rule`` are optional.  Probabilities are listed
explicitly; there are no distribution shorthands.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Optional

import numpy as np

from .errors import AnonRiskError, SchemaError
from .prob_core import FiniteSpace, Partition, RiskVector, make_space
from .rules import RuleSpec


@dataclass(frozen=True)
class ScenarioFile:
    vector: RiskVector
    names: tuple
    partition: Optional[Partition] = None
    rule: Optional[RuleSpec] = None
    source: Optional[str] = None

    @property
    def space(self) -> FiniteSpace:
        return self.vector.space


def _numbers(obj, what, source):
    if not isinstance(obj, list) or not obj:
        raise SchemaError(f"{what} must be a non-empty list of numbers", source=source)
    out = []
    for k, v in enumerate(obj):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise SchemaError(f"{what}[{k}] is not a finite number: {v!r}", source=source)
        out.append(float(v))
    return out


def rule_from_dict(d, space: FiniteSpace = None, source=None) -> RuleSpec:
    if isinstance(d, str):
        return RuleSpec(d)
    if not isinstance(d, dict) or "name" not in d:
        raise SchemaError("rule must be a name or an object with a 'name'", source=source)
    kw = {}
    if "qweights" in d:
        kw["qweights"] = tuple(_numbers(d["qweights"], "qweights", source))
    if "weight" in d:
        kw["weight"] = d["weight"]
    for key in ("first", "second"):
        if key in d:
            kw[key] = rule_from_dict(d[key], space, source)
    if "partition" in d:
        if space is None:
            raise SchemaError("a rule partition needs a space", source=source)
        kw["partition"] = _partition(d["partition"], space, source)
    if "trigger" in d:
        if space is None:
            raise SchemaError("a rule trigger needs a space", source=source)
        rows = [_numbers(r, "trigger row", source) for r in d["trigger"]]
        kw["trigger"] = RiskVector.from_matrix(space, rows)
    return RuleSpec(d["name"], **kw)


def rule_to_dict(rule: RuleSpec) -> dict:
    out = {"name": rule.kind}
    if rule.qweights is not None:
        out["qweights"] = list(rule.qweights)
    if rule.weight is not None:
        out["weight"] = rule.weight
    if rule.first is not None:
        out["first"] = rule_to_dict(rule.first)
    if rule.second is not None:
        out["second"] = rule_to_dict(rule.second)
    if rule.partition is not None:
        out["partition"] = [list(map(int, b)) for b in rule.partition.blocks]
    if rule.trigger is not None:
        out["trigger"] = rule.trigger.matrix.tolist()
    return out


def _partition(blocks, space: FiniteSpace, source) -> Partition:
    if not isinstance(blocks, list):
        raise SchemaError("target_partition must be a list of outcome-index blocks", source=source)
    labels = np.full(space.size, -1)
    for b, block in enumerate(blocks):
        if not isinstance(block, list) or not block:
            raise SchemaError(f"block {b} must be a non-empty list", source=source)
        for w in block:
            if isinstance(w, bool) or not isinstance(w, int) or not 0 <= w < space.size:
                raise SchemaError(f"block {b}: bad outcome index {w!r}", source=source)
            if labels[w] >= 0:
                raise SchemaError(f"outcome {w} appears in two blocks", source=source)
            labels[w] = b
    if np.any(labels < 0):
        raise SchemaError(f"outcome {int(np.argmin(labels))} is in no block", source=source)
    return Partition.from_labels(space, labels)


def scenario_from_dict(d, source=None) -> ScenarioFile:
    if not isinstance(d, dict):
        raise SchemaError("scenario must be a JSON object", source=source)
    for key in ("space", "agents"):
        if key not in d:
            raise SchemaError(f"missing field {key!r}", source=source)
    unknown = set(d) - {"space", "agents", "target_partition", "rule"}
    if unknown:
        raise SchemaError(f"unknown field(s) {sorted(unknown)}", source=source)
    try:
        space = make_space(_numbers(d["space"], "space", source))
        agents = d["agents"]
        if not isinstance(agents, dict) or len(agents) < 2:
            raise SchemaError("agents must map at least two names to value lists", source=source)
        names = tuple(agents)
        rows = [_numbers(agents[k], f"agents[{k!r}]", source) for k in names]
        if any(len(r) != space.size for r in rows):
            raise SchemaError("every agent needs one value per outcome", source=source)
        x = RiskVector.from_matrix(space, rows)
        g = _partition(d["target_partition"], space, source) if "target_partition" in d else None
        rule = rule_from_dict(d["rule"], space, source) if "rule" in d else None
    except SchemaError:
        raise
    except AnonRiskError as exc:
        raise SchemaError(f"{type(exc).__name__}: {exc}", source=source) from exc
    return ScenarioFile(x, names, g, rule, source)


def scenario_to_dict(sf: ScenarioFile) -> dict:
    out = {
        "space": sf.space.probs.tolist(),
        "agents": {name: row.tolist() for name, row in zip(sf.names, sf.vector.matrix)},
    }
    if sf.partition is not None:
        out["target_partition"] = [list(map(int, b)) for b in sf.partition.blocks]
    if sf.rule is not None:
        out["rule"] = rule_to_dict(sf.rule)
    return out


def loads_scenario(text: str, source=None) -> ScenarioFile:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg}", source=source, row=exc.lineno,
                          column=exc.colno) from exc
    return scenario_from_dict(d, source)


def load_scenario(path) -> ScenarioFile:
    path = os.fspath(path)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise SchemaError(f"cannot read file: {exc.strerror}", source=path) from exc
    return loads_scenario(text, path)


def dumps_scenario(sf: ScenarioFile) -> str:
    return json.dumps(scenario_to_dict(sf), indent=2) + "\n"


# ---------------------------------------------------------------------------
# numbers and machine output


def fmt6(x: float) -> str:
    """Six fractional digits, round-half-even on the exact binary value."""
    s = str(Decimal(float(x)).quantize(Decimal("0.000001"), rounding=ROUND_HALF_EVEN))
    return "0.000000" if s == "-0.000000" else s


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps_machine(doc: dict) -> str:
    """Deterministic JSON: sorted keys, full-precision floats."""
    return json.dumps(_plain(doc), sort_keys=True, indent=2) + "\n"
