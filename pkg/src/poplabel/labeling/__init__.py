"""Registry of the labeling protocols.

Each entry maps a stable name to a builder and the parameters it accepts.
"""
from __future__ import annotations

from dataclasses import dataclass

from ..protocol import ProtocolError, ProtocolSpec
from .baselines import dispenser, naive, randomized_cube
from .cycle import cantor, k_cycle, single_cycle, single_cycle_diagonal
from .interval import interval_2n, interval_eps


@dataclass(frozen=True)
class Entry:
    name: str
    builder: object
    params: tuple          # accepted keyword parameters besides n
    required: tuple = ()
    summary: str = ""


REGISTRY = {
    e.name: e for e in [
        Entry("naive", naive, (), summary="equal labels: responder increments (silent, not safe)"),
        Entry("dispenser", dispenser, ("leader_mode", "c_elect"),
              summary="leader hands out n, n-1, ..., 1"),
        Entry("randomized-cube", randomized_cube, ("leader_mode", "c_elect"),
              summary="uniform random labels in [1, n^3]"),
        Entry("interval-2n", interval_2n, ("leader_mode", "c_phase", "c_elect"),
              summary="interval splitting, range [1, 2n]"),
        Entry("interval-eps", interval_eps, ("epsilon", "leader_mode", "c_phase", "c_elect"),
              required=("epsilon",), summary="interval splitting, range [1, ceil((1+eps)n)]"),
        Entry("single-cycle", single_cycle, ("leader_mode", "generalized", "c_elect"),
              summary="two dispensers, range [1, n], n + 5 sqrt(n) + 4 states"),
        Entry("single-cycle-diagonal", single_cycle_diagonal, ("leader_mode", "c_elect"),
              summary="diagonal order for unknown n; never silent"),
        Entry("k-cycle", k_cycle, ("k", "leader_mode", "generalized", "c_elect"),
              required=("k",), summary="k parallel dispenser pairs over sub-ranges of size n/k"),
    ]
}

PROTOCOLS = tuple(REGISTRY)
SCHEMA_KEYS = ("n", "epsilon", "k", "c_phase", "leader_mode", "generalized", "c_elect")


def schema(name):
    e = _entry(name)
    return {"n": "int >= 1", **{k: ("required" if k in e.required else "optional") for k in e.params}}


def _entry(name):
    try:
        return REGISTRY[name]
    except KeyError:
        raise ProtocolError(f"unknown protocol {name!r}; known: {', '.join(PROTOCOLS)}") from None


def pool_map(proto: ProtocolSpec):
    """``states -> list of per-agent label pools`` for the pool protocols, else None."""
    from . import baselines, cycle, interval
    if proto.name in ("interval-2n", "interval-eps"):
        return interval.pools(proto)
    if proto.name == "dispenser":
        return baselines.dispenser_pools(proto)
    if proto.name in ("single-cycle", "k-cycle"):
        return cycle.pools(proto)
    return None


def build(name, n, **params) -> ProtocolSpec:
    """Instantiate protocol ``name`` for ``n`` agents.

    ``None`` values are dropped, so callers can pass a full parameter record;
    parameters the protocol does not take are rejected.
    """
    e = _entry(name)
    n = int(n)
    if n < 1:
        raise ProtocolError("population size n must be at least 1")
    given = {k: v for k, v in params.items() if v is not None}
    if e.name == "naive" and given.get("leader_mode", "oracle") == "oracle":
        given.pop("leader_mode", None)
    unknown = set(given) - set(e.params)
    if unknown:
        raise ProtocolError(f"{name} does not take {', '.join(sorted(unknown))}")
    missing = [k for k in e.required if k not in given]
    if missing:
        raise ProtocolError(f"{name} requires {', '.join(missing)}")
    return e.builder(n, **given)


__all__ = [
    "REGISTRY", "PROTOCOLS", "build", "pool_map", "schema", "cantor",
    "naive", "dispenser", "randomized_cube", "interval_2n", "interval_eps",
    "single_cycle", "single_cycle_diagonal", "k_cycle",
]
