"""Computation model: divisible functions whose merged packets keep a fixed size.

A function here is described by a lift of a single sensed value into a
payload, a commutative/associative combine over payloads, and a finalize
step producing the output value.  The payload representation is constant
size no matter how many inputs were merged, which is what lets a relay
collapse any number of same-round packets into one.

Built-in instances:

* ``parity``  - XOR over {0,1}; output range size 2.
* ``max``     - maximum over {0..m-1}; output range size m.
* ``kth``     - k-th largest value.  The payload is the multiset of the k
  largest values seen so far, padded with a sentinel, since the k-th
  largest of a union is computable from per-part top-k sets.  The range
  size is the number of k-element multisets of the alphabet.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

from .errors import BadParams, ValueOutOfAlphabet

# Sentinel standing in for "minus infinity" in order-statistic payloads;
# alphabets are nonnegative ints so -1 never collides.
_PAD = -1


@dataclass(frozen=True)
class FmuxFunction:
    name: str
    alphabet_size: int
    range_size: int
    lift: Callable
    combine: Callable
    finalize: Callable
    direct: Callable          # independent whole-vector evaluation (the oracle)
    empty_payload: object     # what a node holds before anything is merged in
    encode_payload: Callable  # fixed-width wire encoding
    k: int | None = None

    @property
    def log2_range(self) -> float:
        return math.log2(self.range_size)

    def check_value(self, x):
        if not (isinstance(x, int) and 0 <= x < self.alphabet_size):
            raise ValueOutOfAlphabet(x, self.alphabet_size)
        return x


def make_parity() -> FmuxFunction:
    def direct(values):
        return sum(values) % 2

    return FmuxFunction(
        name="parity",
        alphabet_size=2,
        range_size=2,
        lift=lambda x: x,
        combine=lambda p, q: p ^ q,
        finalize=lambda p: p,
        direct=direct,
        empty_payload=0,
        encode_payload=lambda p: bytes([p]),
    )


def make_max(alphabet_size=16) -> FmuxFunction:
    def direct(values):
        return max(values)

    return FmuxFunction(
        name="max",
        alphabet_size=alphabet_size,
        range_size=alphabet_size,
        lift=lambda x: x,
        combine=lambda p, q: p if p >= q else q,
        finalize=lambda p: p,
        direct=direct,
        empty_payload=_PAD,
        encode_payload=lambda p: bytes([p & 0xFF]),
    )


def make_kth(k, alphabet_size=16) -> FmuxFunction:
    """k-th order statistic (k-th largest)."""
    if k < 1:
        raise BadParams("kth requires k >= 1")

    def lift(x):
        return (x,) + (_PAD,) * (k - 1)

    def combine(p, q):
        # Merge two descending top-k tuples; sentinels sink to the back.
        merged = sorted(p + q, reverse=True)
        return tuple(merged[:k])

    def finalize(p):
        return p[k - 1]

    def direct(values):
        return sorted(values, reverse=True)[k - 1]

    return FmuxFunction(
        name="kth",
        alphabet_size=alphabet_size,
        range_size=math.comb(alphabet_size + k - 1, k),
        lift=lift,
        combine=combine,
        finalize=finalize,
        direct=direct,
        empty_payload=(_PAD,) * k,
        encode_payload=lambda p: bytes((x & 0xFF) for x in p),
        k=k,
    )


def make_function(name, alphabet_size=None, k=None) -> FmuxFunction:
    """Factory used by config files: {"name", "alphabet_size", "k"}.

    The alphabet defaults to size 16 where configurable; parity is fixed to
    the binary alphabet.
    """
    if name == "parity":
        if alphabet_size not in (None, 2):
            raise BadParams("parity is defined over the binary alphabet")
        return make_parity()
    if name == "max":
        return make_max(alphabet_size or 16)
    if name == "kth":
        if k is None:
            raise BadParams("kth requires k")
        return make_kth(k, alphabet_size or 16)
    raise BadParams(f"unknown function {name!r}")


def function_from_config(cfg: dict) -> FmuxFunction:
    return make_function(
        cfg["name"],
        alphabet_size=cfg.get("alphabet_size"),
        k=cfg.get("k"),
    )


def lift_and_combine(f: FmuxFunction, values) -> object:
    """Fold combine over lifted values; order independent by construction."""
    values = list(values)
    if not values:
        raise BadParams("need at least one value")
    payload = f.lift(f.check_value(values[0]))
    for x in values[1:]:
        payload = f.combine(payload, f.lift(f.check_value(x)))
    return payload


def offline_evaluate(f: FmuxFunction, all_sensed) -> object:
    """Ground-truth evaluation on the full sensed vector.

    This goes through the function's direct whole-vector path, not through
    combine, so it can serve as the correctness oracle for every completed
    round in the simulators.
    """
    values = list(all_sensed)
    for x in values:
        f.check_value(x)
    return f.direct(values)


def check_divisible(f: FmuxFunction, partition, values) -> bool:
    """True iff evaluating per part, combining, then finalizing matches the oracle.

    `partition` is a list of index lists partitioning range(len(values)).
    """
    values = list(values)
    idx = sorted(i for part in partition for i in part)
    if idx != list(range(len(values))):
        raise BadParams("partition does not cover the value indices exactly")
    payload = None
    for part in partition:
        part_payload = lift_and_combine(f, [values[i] for i in part])
        payload = part_payload if payload is None else f.combine(payload, part_payload)
    return f.finalize(payload) == offline_evaluate(f, values)
