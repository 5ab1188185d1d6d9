"""Protocol descriptions consumed by the engine.

A protocol is a set of kernel functions over integer-encoded agent states:

* ``delta(a, b, r, p) -> (a', b')``: joint transition for the ordered pair
  (initiator, responder).  ``r`` is the per-interaction auxiliary random word
  (a non-negative int64) and ``p`` is the protocol's int64 parameter vector.
  Whether a transition changes anything must not depend on ``r``.
* ``output(s, p) -> int``: label carried by state ``s``; ``0`` means undefined.
* ``kind(s, p) -> int``: activity class in ``[0, 8)``.  ``active[k1, k2]`` is
  false only if every pair of states of those kinds is inert under ``delta``;
  the silence probe uses this to skip pairs.  Kind ``7`` is reserved for
  leader-election states (negative integers).

The first :data:`HEADER` entries of ``p`` are shared by all protocols; protocol
specific values start at ``p[HEADER]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

H_N = 0
H_MODE = 1
H_ELECT_THR = 2
H_LEVEL_CAP = 3
H_TICKETS = 4
H_LEADER_INIT = 5
H_FREE_INIT = 6
HEADER = 8

ORACLE = 0
ELECTED = 1
LEADER_MODES = {"oracle": ORACLE, "elected": ELECTED}

ELECTION_KIND = 7
NUM_KINDS = 8


class ProtocolError(ValueError):
    """Invalid protocol name or parameter combination."""


def header(n, leader_mode="oracle", leader_init=0, free_init=0, c_elect=None):
    """Shared parameter header, including the leader-election constants."""
    from .calibration import pinned
    from .primitives import election_constants

    if leader_mode not in LEADER_MODES:
        raise ProtocolError(f"unknown leader mode {leader_mode!r}; use oracle or elected")
    c = pinned("c_elect") if c_elect is None else c_elect
    thr, cap, tickets = election_constants(n, c)
    h = np.zeros(HEADER, dtype=np.int64)
    h[H_N] = n
    h[H_MODE] = LEADER_MODES[leader_mode]
    h[H_ELECT_THR] = thr
    h[H_LEVEL_CAP] = cap
    h[H_TICKETS] = tickets
    h[H_LEADER_INIT] = leader_init
    h[H_FREE_INIT] = free_init
    return h


def all_active():
    m = np.zeros((NUM_KINDS, NUM_KINDS), dtype=np.bool_)
    m[:, :] = True
    return m


def active_mask(pairs):
    """Activity mask with the given ``(kind, kind)`` pairs plus every election pair."""
    m = np.zeros((NUM_KINDS, NUM_KINDS), dtype=np.bool_)
    for k1, k2 in pairs:
        m[k1, k2] = True
    m[ELECTION_KIND, :] = True
    m[:, ELECTION_KIND] = True
    return m


@dataclass
class ProtocolSpec:
    """A fully parameterized protocol instance for a fixed population size."""

    name: str
    n: int
    params: dict
    p: np.ndarray
    delta: Callable
    output: Callable
    kind: Callable
    active: np.ndarray
    initial: np.ndarray
    describe: Callable[[int], str]
    declared_range: Optional[int] = None
    uses_aux: bool = False
    silent: bool = True
    silent_safe: bool = False
    pool: bool = False
    singleton_label: Optional[int] = 1
    state_budget: Optional[int] = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.p[H_MODE] == ELECTED:
            self.uses_aux = True  # key draws and coin flips

    @property
    def leader_mode(self):
        return self.params.get("leader_mode", "oracle")

    @property
    def range_slack(self):
        if self.declared_range is None:
            return None
        return self.declared_range - self.n

    def label_of(self, s):
        from .primitives import apply_output
        v = int(apply_output(self.output, int(s), self.p))
        return v if v > 0 else None

    def transition(self, a, b, r=0):
        from .primitives import apply_delta
        a2, b2 = apply_delta(self.delta, int(a), int(b), int(r), self.p)
        return int(a2), int(b2)

    def render(self, s):
        s = int(s)
        if s < 0:
            from .primitives import describe_election
            return describe_election(s, self.p)
        return self.describe(s)

    def metadata(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "n": self.n,
            "params": dict(self.params),
            "declared_range": self.declared_range,
            "range_slack": self.range_slack,
            "silent": self.silent,
            "silent_safe": self.silent_safe,
            "pool": self.pool,
            "state_budget": self.state_budget,
            "leader_mode": self.params.get("leader_mode", "oracle"),
        }


def oracle_initial(n, leader_state, free_state):
    init = np.full(n, free_state, dtype=np.int64)
    if n:
        init[0] = leader_state
    return init


def initial_states(n, mode, leader_state, free_state):
    if mode == "elected":
        from .primitives import UNDRAWN
        return np.full(n, UNDRAWN, dtype=np.int64)
    return oracle_initial(n, leader_state, free_state)


def isqrt_exact(n):
    r = math.isqrt(n)
    return r if r * r == n else None
