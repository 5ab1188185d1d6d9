"""Reusable sub-protocols: epidemic broadcast, leader election, phase counting.

Leader election runs in front of every leader-based labeling protocol when the
leader mode is ``elected``.  Election-phase states are negative integers so
they can share the int64 state space with the labeling protocol they precede:

    state = -1 - ((key * (thr + 1) + count) * 3 + role)

``role`` is undrawn / contender / follower, ``key = level * tickets + ticket``
orders contenders (level by capped fair coin flips, ticket uniform), and
``count`` is the contender's own interaction counter.  A contender that counts
``thr`` own interactions without meeting a larger key declares itself leader
and switches to the labeling protocol's leader state.  Any election-phase agent
that meets a labeling-phase agent joins the labeling protocol as a free agent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._accel import kernel
from .protocol import (
    H_ELECT_THR, H_FREE_INIT, H_LEADER_INIT, H_LEVEL_CAP, H_MODE, H_TICKETS,
    HEADER, ELECTION_KIND, ProtocolError, ProtocolSpec, active_mask, header,
)

UNDRAWN = -1
ROLE_UNDRAWN = 0
ROLE_CONTENDER = 1
ROLE_FOLLOWER = 2

MAX_TICKETS = 1 << 21
_SLICE = 0x7FFFFFFF


def election_constants(n, c_elect):
    """(count threshold, level cap, ticket range) for a population of ``n``."""
    lg = math.log2(max(n, 2))
    thr = max(1, math.ceil(c_elect * lg))
    cap = math.ceil(math.log2(lg)) + 4 if lg > 1 else 4
    tickets = int(min(max(n * n, 2), MAX_TICKETS))
    return thr, cap, tickets


@kernel
def _unpack(s, c1):
    e = -1 - s
    role = e % 3
    rest = e // 3
    return role, rest // c1, rest % c1


@kernel
def _pack(role, key, count, c1):
    return -1 - ((key * c1 + count) * 3 + role)


@kernel
def _draw_key(bits, p):
    cap = p[H_LEVEL_CAP]
    if cap > 10:
        cap = 10
    level = 0
    while level < cap and (bits >> level) & 1 == 1:
        level += 1
    return level * p[H_TICKETS] + (bits >> 10) % p[H_TICKETS]


@kernel
def elect_pair(a, b, r, p):
    """Interaction between two election-phase agents."""
    thr = p[H_ELECT_THR]
    c1 = thr + 1
    ra, ka, ca = _unpack(a, c1)
    rb, kb, cb = _unpack(b, c1)
    if ra == ROLE_UNDRAWN:
        ra = ROLE_CONTENDER
        ka = _draw_key(r & _SLICE, p)
        ca = 0
    if rb == ROLE_UNDRAWN:
        rb = ROLE_CONTENDER
        kb = _draw_key((r >> 31) & _SLICE, p)
        cb = 0
    if ra == ROLE_CONTENDER and rb == ROLE_CONTENDER:
        if ka > kb:
            rb = ROLE_FOLLOWER
            kb = ka
        elif kb > ka:
            ra = ROLE_FOLLOWER
            ka = kb
        elif (r >> 62) & 1 == 1:
            rb = ROLE_FOLLOWER
        else:
            ra = ROLE_FOLLOWER
    elif ra == ROLE_CONTENDER:
        if kb > ka:
            ra = ROLE_FOLLOWER
            ka = kb
        elif ka > kb:
            kb = ka
    elif rb == ROLE_CONTENDER:
        if ka > kb:
            rb = ROLE_FOLLOWER
            kb = ka
        elif kb > ka:
            ka = kb
    else:
        if ka > kb:
            kb = ka
        else:
            ka = kb
    if ra == ROLE_FOLLOWER:
        ca = 0
    if rb == ROLE_FOLLOWER:
        cb = 0
    if ra == ROLE_CONTENDER:
        ca += 1
    if rb == ROLE_CONTENDER:
        cb += 1
    if ra == ROLE_CONTENDER and ca >= thr:
        a2 = p[H_LEADER_INIT]
    else:
        a2 = _pack(ra, ka, ca, c1)
    if rb == ROLE_CONTENDER and cb >= thr:
        b2 = p[H_LEADER_INIT]
    else:
        b2 = _pack(rb, kb, cb, c1)
    return a2, b2


@kernel(cache=False)  # takes a function argument; not cacheable
def apply_delta(delta, a, b, r, p):
    """Transition including the election front end (negative states)."""
    if a >= 0 and b >= 0:
        return delta(a, b, r, p)
    if a >= 0:
        return delta(a, p[H_FREE_INIT], r, p)
    if b >= 0:
        return delta(p[H_FREE_INIT], b, r, p)
    return elect_pair(a, b, r, p)


@kernel(cache=False)  # takes a function argument; not cacheable
def apply_output(output, s, p):
    if s < 0:
        return 0
    return output(s, p)


@kernel(cache=False)  # takes a function argument; not cacheable
def apply_kind(kind, s, p):
    if s < 0:
        return ELECTION_KIND
    return kind(s, p)


def describe_election(s, p):
    role, key, count = _unpack_py(s, int(p[H_ELECT_THR]) + 1)
    if role == ROLE_UNDRAWN:
        return "E.undrawn"
    tickets = int(p[H_TICKETS])
    level, ticket = divmod(key, tickets)
    if role == ROLE_CONTENDER:
        return f"E.contender[level={level},ticket={ticket},count={count}]"
    return f"E.follower[level={level},ticket={ticket}]"


def _unpack_py(s, c1):
    e = -1 - int(s)
    role = e % 3
    rest = e // 3
    return role, rest // c1, rest % c1


@dataclass(frozen=True)
class LeaderElectionState:
    mode: str
    role: str
    level: int = 0
    ticket: int = 0
    count: int = 0


def decode_election(s, p) -> LeaderElectionState:
    """Readable view of an election-phase state of a protocol with vector ``p``."""
    mode = "elected" if p[H_MODE] else "oracle"
    if s >= 0:
        role = "leader" if s == p[H_LEADER_INIT] else "follower"
        return LeaderElectionState(mode, role)
    role, key, count = _unpack_py(s, int(p[H_ELECT_THR]) + 1)
    level, ticket = divmod(key, int(p[H_TICKETS]))
    name = {ROLE_UNDRAWN: "undrawn", ROLE_CONTENDER: "contender", ROLE_FOLLOWER: "follower"}[role]
    return LeaderElectionState(mode, name, level, ticket, count)


def contender_state(p, level, ticket, count=0):
    """Encode a contender state; handy for tests and hand-built configurations."""
    c1 = int(p[H_ELECT_THR]) + 1
    return -1 - (((level * int(p[H_TICKETS]) + ticket) * c1 + count) * 3 + ROLE_CONTENDER)


def follower_state(p, level, ticket):
    c1 = int(p[H_ELECT_THR]) + 1
    return -1 - (((level * int(p[H_TICKETS]) + ticket) * c1) * 3 + ROLE_FOLLOWER)


def elect_leader_delta(a, b, r, p):
    """Python entry point for one election interaction (see :func:`elect_pair`)."""
    a2, b2 = apply_delta(_identity, int(a), int(b), int(r), p)
    return int(a2), int(b2)


# ---------------------------------------------------------------- broadcast

UNINFORMED = 0
INFORMED = 1


@kernel
def broadcast_delta(a, b, r, p):
    """One-way epidemic: an informed agent informs the uninformed one."""
    if a == INFORMED and b == UNINFORMED:
        return a, INFORMED
    if b == INFORMED and a == UNINFORMED:
        return INFORMED, b
    return a, b


@kernel
def _no_output(s, p):
    return 0


@kernel
def _identity_kind(s, p):
    return s


@kernel
def _zero_kind(s, p):
    return 0


@kernel
def _identity(a, b, r, p):
    return a, b


def broadcast_protocol(n, sources=1):
    """Standalone broadcast over ``n`` agents with ``sources`` initial informed agents."""
    if not 0 <= sources <= n:
        raise ProtocolError("sources must lie in [0, n]")
    p = header(n)
    init = np.zeros(n, dtype=np.int64)
    init[:sources] = INFORMED
    return ProtocolSpec(
        name="broadcast", n=n, params={"n": n, "sources": sources}, p=p,
        delta=broadcast_delta, output=_no_output, kind=_identity_kind,
        active=active_mask([(INFORMED, UNINFORMED), (UNINFORMED, INFORMED)]),
        initial=init, describe=lambda s: "M" if s == INFORMED else "notM",
        declared_range=None, singleton_label=None,
    )


LEADER = 0
FOLLOWER = 1


def election_protocol(n, c_elect=None):
    """Standalone leader election; silent once every agent knows a leader exists."""
    p = header(n, "elected", leader_init=LEADER, free_init=FOLLOWER, c_elect=c_elect)
    return ProtocolSpec(
        name="leader-election", n=n, params={"n": n, "leader_mode": "elected", "c_elect": c_elect},
        p=p, delta=_identity, output=_no_output, kind=_zero_kind,
        active=active_mask([]), initial=np.full(n, UNDRAWN, dtype=np.int64),
        describe=lambda s: "leader" if s == LEADER else "follower",
        declared_range=None, singleton_label=None,
    )


# ---------------------------------------------------------------- phase counter

def phase_threshold(n, c_phase):
    """Own-interaction count that triggers the phase-2 broadcast."""
    return max(1, math.ceil(c_phase * math.log2(max(n, 2))))


@dataclass(frozen=True)
class PhaseCounter:
    count: int
    threshold: int

    def __post_init__(self):
        if self.threshold < 1:
            raise ValueError("threshold must be positive")
        if not 0 <= self.count <= self.threshold:
            raise ValueError("count must lie in [0, threshold]")

    @property
    def latched(self):
        return self.count >= self.threshold


def tick_phase(counter: PhaseCounter) -> PhaseCounter:
    if counter.latched:
        raise ValueError("counter already latched")
    return PhaseCounter(counter.count + 1, counter.threshold)


__all__ = [
    "HEADER", "UNDRAWN", "UNINFORMED", "INFORMED", "LEADER", "FOLLOWER",
    "PhaseCounter", "tick_phase", "phase_threshold", "broadcast_delta",
    "broadcast_protocol", "election_protocol", "elect_leader_delta",
    "LeaderElectionState", "decode_election", "apply_delta", "apply_output",
    "apply_kind", "election_constants",
]
