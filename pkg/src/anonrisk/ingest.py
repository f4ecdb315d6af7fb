"""CSV ingestion for the application specs.

Decimals are parsed exactly with :mod:`decimal` and only then converted to
floats, so ``0.1,0.15,0.25`` sum to exactly the decimal total before the
share-cap check.
"""

from __future__ import annotations

import csv
import io
import os
from decimal import ROUND_HALF_EVEN, Decimal, InvalidOperation, localcontext
from typing import Optional

import numpy as np

from .applications import (
    SHARE_ATOL,
    MultiCoinSpec,
    MultiPoolSpec,
    PoolSpec,
    PriceDist,
    RevenueSpec,
    normalize_streams,
)
from .errors import NegativeShare, SchemaError, SharesExceedOne

POOL_HEADER = ("miner_id", "share")
MULTIPOOL_HEADER = ("miner_id", "pool_id", "share")
MULTICOIN_HEADER = ("miner_id", "coin_id", "share")
USERS_HEADER = ("user_id", "fee", "theta", "subscribed")
STREAMS_HEADER = ("artist_id", "user_id", "streams")
PRICE_HEADER = ("value", "probability")

_TRUE = {"1", "true", "yes", "y", "t"}
_FALSE = {"0", "false", "no", "n", "f"}


class Table:
    """Header plus data rows, each remembering its 1-based line number."""

    def __init__(self, header, rows, source=None):
        self.header = tuple(h.strip().lower() for h in header)
        self.rows = rows
        self.source = source

    def require(self, expected):
        if self.header != tuple(expected):
            raise SchemaError(
                f"expected header {','.join(expected)}, got {','.join(self.header)}",
                source=self.source, row=1,
            )

    def cell(self, line, row, col):
        if col >= len(row):
            raise SchemaError("missing value", source=self.source, row=line,
                              column=self.header[col])
        return row[col].strip()


def read_table(source, name: Optional[str] = None) -> Table:
    """Read CSV from a path, an open file, or a list of rows (header first)."""
    if isinstance(source, (list, tuple)):
        raw = [list(r) for r in source]
    else:
        if isinstance(source, (str, os.PathLike)) and os.path.exists(source):
            name = name or os.fspath(source)
            with open(source, newline="", encoding="utf-8") as fh:
                raw = list(csv.reader(fh))
        elif isinstance(source, str):
            raw = list(csv.reader(io.StringIO(source)))
        else:
            raw = list(csv.reader(source))
    numbered = [(k + 1, r) for k, r in enumerate(raw) if any(c.strip() for c in r)]
    if not numbered:
        raise SchemaError("empty table", source=name)
    (_, header), body = numbered[0], numbered[1:]
    return Table(header, body, name)


def parse_decimal(text: str, table: Table = None, line=None, column=None) -> Decimal:
    try:
        value = Decimal(text.strip())
    except (InvalidOperation, AttributeError):
        value = None
    if value is None or not value.is_finite():
        raise SchemaError(f"not a decimal number: {text!r}",
                          source=table.source if table else None, row=line, column=column)
    return value


def to_float(value: Decimal) -> float:
    with localcontext() as ctx:
        ctx.rounding = ROUND_HALF_EVEN
        return float(+value)


def _parse_bool(text, table, line, column):
    t = text.strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise SchemaError(f"not a boolean: {text!r}", source=table.source, row=line, column=column)


def _shares(table: Table, key_cols):
    """Map key tuple -> Decimal share; keys keep first-appearance order."""
    out = {}
    share_col = len(key_cols)
    for line, row in table.rows:
        if len(row) != len(table.header):
            raise SchemaError(f"expected {len(table.header)} fields, got {len(row)}",
                              source=table.source, row=line)
        key = tuple(table.cell(line, row, c) for c in range(len(key_cols)))
        for c, k in enumerate(key):
            if not k:
                raise SchemaError("empty identifier", source=table.source, row=line,
                                  column=table.header[c])
        if key in out:
            raise SchemaError(f"duplicate entry {','.join(key)}", source=table.source, row=line)
        share = parse_decimal(table.cell(line, row, share_col), table, line, "share")
        if share < 0:
            raise NegativeShare(f"{table.source or 'input'} line {line}: negative share {share}")
        out[key] = share
    if not out:
        raise SchemaError("no data rows", source=table.source)
    return out


def _cap(total: Decimal, label: str):
    if total > 1 + Decimal(str(SHARE_ATOL)):
        raise SharesExceedOne(f"{label}: shares sum to {total} > 1")


def _ordered(keys):
    return list(dict.fromkeys(keys))


def read_price(source) -> PriceDist:
    """A single decimal, or a ``value,probability`` table."""
    if isinstance(source, PriceDist):
        return source
    if isinstance(source, (int, float, Decimal)):
        return PriceDist.constant(float(source))
    text, name = source, None
    if isinstance(source, (str, os.PathLike)) and os.path.exists(source):
        name = os.fspath(source)
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    if isinstance(text, str) and "," not in text and text.strip():
        value = parse_decimal(text, Table((), [], name))
        if value <= 0:
            raise SchemaError("price must be > 0", source=name)
        return PriceDist.constant(to_float(value))
    table = read_table(text, name=name)
    table.require(PRICE_HEADER)
    values, probs = [], []
    for line, row in table.rows:
        values.append(parse_decimal(table.cell(line, row, 0), table, line, "value"))
        probs.append(parse_decimal(table.cell(line, row, 1), table, line, "probability"))
    if abs(sum(probs) - 1) > Decimal("1e-12"):
        raise SchemaError(f"price probabilities sum to {sum(probs)}", source=table.source)
    return PriceDist(tuple(map(to_float, values)), tuple(map(to_float, probs)))


def read_pool(source, price) -> PoolSpec:
    table = read_table(source)
    table.require(POOL_HEADER)
    shares = _shares(table, ("miner_id",))
    _cap(sum(shares.values()), "pool")
    ids = [k[0] for k in shares]
    return PoolSpec(tuple(to_float(v) for v in shares.values()), read_price(price), tuple(ids))


def read_multipool(source, price) -> MultiPoolSpec:
    table = read_table(source)
    table.require(MULTIPOOL_HEADER)
    shares = _shares(table, ("miner_id", "pool_id"))
    _cap(sum(shares.values()), "pools")
    miners = _ordered(k[0] for k in shares)
    pools = _ordered(k[1] for k in shares)
    q = np.zeros((len(miners), len(pools)))
    for (m, p), v in shares.items():
        q[miners.index(m), pools.index(p)] = to_float(v)
    return MultiPoolSpec(q, read_price(price), tuple(miners), tuple(pools))


def read_multicoin(source, prices: dict) -> MultiCoinSpec:
    """``prices`` maps coin id to a price source."""
    table = read_table(source)
    table.require(MULTICOIN_HEADER)
    shares = _shares(table, ("miner_id", "coin_id"))
    miners = _ordered(k[0] for k in shares)
    coins = _ordered(k[1] for k in shares)
    d = np.zeros((len(coins), len(miners)))
    totals = {c: Decimal(0) for c in coins}
    for (m, c), v in shares.items():
        d[coins.index(c), miners.index(m)] = to_float(v)
        totals[c] += v
    for c, t in totals.items():
        _cap(t, f"coin {c}")
    missing = [c for c in coins if c not in prices]
    if missing:
        raise SchemaError(f"no price given for coin {missing[0]}")
    return MultiCoinSpec(d, tuple(read_price(prices[c]) for c in coins), tuple(miners), tuple(coins))


def read_revenue(users_source, streams_source) -> RevenueSpec:
    """Distributable fee ``fee * theta`` per user; ratios from stream counts."""
    users = read_table(users_source)
    users.require(USERS_HEADER)
    user_ids, fees, subscribed = [], [], []
    for line, row in users.rows:
        uid = users.cell(line, row, 0)
        if uid in user_ids:
            raise SchemaError(f"duplicate user {uid}", source=users.source, row=line)
        fee = parse_decimal(users.cell(line, row, 1), users, line, "fee")
        theta = parse_decimal(users.cell(line, row, 2), users, line, "theta")
        if fee * theta <= 0:
            raise SchemaError("distributable fee must be > 0", source=users.source, row=line,
                              column="fee")
        user_ids.append(uid)
        fees.append(to_float(fee * theta))
        subscribed.append(_parse_bool(users.cell(line, row, 3), users, line, "subscribed"))
    if not user_ids:
        raise SchemaError("no users", source=users.source)

    streams = read_table(streams_source)
    streams.require(STREAMS_HEADER)
    counts = _shares(streams, ("artist_id", "user_id"))
    artists = _ordered(k[0] for k in counts)
    s = np.zeros((len(artists), len(user_ids)))
    for (a, u), v in counts.items():
        if u not in user_ids:
            raise SchemaError(f"streams reference unknown user {u}", source=streams.source)
        s[artists.index(a), user_ids.index(u)] = to_float(v)
    return RevenueSpec(tuple(fees), tuple(subscribed), normalize_streams(s),
                       tuple(artists), tuple(user_ids))


def ingest_contributions(rows, price=None, prices=None, streams=None):
    """Dispatch on the header of ``rows`` to the matching reader."""
    table = read_table(rows)
    if table.header == POOL_HEADER:
        return read_pool(rows, 1.0 if price is None else price)
    if table.header == MULTIPOOL_HEADER:
        return read_multipool(rows, 1.0 if price is None else price)
    if table.header == MULTICOIN_HEADER:
        return read_multicoin(rows, prices or {})
    if table.header == USERS_HEADER:
        if streams is None:
            raise SchemaError("revenue ingestion needs a streams table")
        return read_revenue(rows, streams)
    raise SchemaError(f"unrecognised header {','.join(table.header)}", source=table.source, row=1)
