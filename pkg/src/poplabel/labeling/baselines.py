"""The three simple reference protocols: naive increment, sequential dispenser
and random labels from a cubic range."""
from __future__ import annotations

import numpy as np

from .._accel import kernel
from ..protocol import HEADER, ProtocolError, ProtocolSpec, active_mask, header, initial_states

# ---------------------------------------------------------------- naive
# state == current label; everyone starts at 1


@kernel
def naive_delta(a, b, r, p):
    if a == b and b < p[HEADER]:
        return a, b + 1
    return a, b


@kernel
def naive_output(s, p):
    return s


@kernel
def _kind0(s, p):
    return 0


def naive(n, leader_mode="oracle"):
    """Equal labels collide; the responder moves up by one.  Silent, not safe."""
    p = np.concatenate([header(n), np.array([n], dtype=np.int64)])
    return ProtocolSpec(
        name="naive", n=n, params={"n": n}, p=p,
        delta=naive_delta, output=naive_output, kind=_kind0, active=active_mask([(0, 0)]),
        initial=np.ones(n, dtype=np.int64), describe=lambda s: f"L{s}",
        declared_range=n, silent=True, silent_safe=False,
        state_budget=n, info={"labeling": True, "leaderless": True},
    )


# ---------------------------------------------------------------- dispenser
# kind + 4 * payload

D_FREE = 0
D_LEADER = 1
D_LABELED = 2


@kernel
def dispenser_delta(a, b, r, p):
    if a & 3 == D_LEADER and b == D_FREE:
        m = a >> 2
        if m - 1 <= 1:
            return D_LABELED + 4, D_LABELED + 4 * m
        return D_LEADER + 4 * (m - 1), D_LABELED + 4 * m
    return a, b


@kernel
def dispenser_output(s, p):
    if s & 3 == D_LABELED:
        return s >> 2
    return 0


@kernel
def dispenser_kind(s, p):
    return s & 3


def _describe_dispenser(s):
    k, v = s & 3, s >> 2
    return ("F", f"Leader[next={v}]", f"L{v}")[k]


def dispenser(n, leader_mode="oracle", c_elect=None):
    """The leader hands out n, n-1, ..., 2 one by one, then takes 1 itself."""
    lead = D_LEADER + 4 * n if n >= 2 else D_LABELED + 4
    p = header(n, leader_mode, leader_init=lead, free_init=D_FREE, c_elect=c_elect)
    return ProtocolSpec(
        name="dispenser", n=n, params={"n": n, "leader_mode": leader_mode}, p=p,
        delta=dispenser_delta, output=dispenser_output, kind=dispenser_kind,
        active=active_mask([(D_LEADER, D_FREE)]),
        initial=initial_states(n, leader_mode, lead, D_FREE), describe=_describe_dispenser,
        declared_range=n, silent=True, silent_safe=True, pool=True,
        state_budget=2 * n, info={"labeling": True},
    )


# ---------------------------------------------------------------- randomized cube
# 0 = not yet informed, 1 = leader before its own draw, v + 1 = labeled with v

R_UNINF = 0
R_LEADER = 1
_SLICE = 0x7FFFFFFF
MAX_CUBE_N = 1290  # n**3 must fit in the 31-bit draw


@kernel
def _cube_draw(bits, p):
    return 2 + bits % p[HEADER]


@kernel
def randomized_delta(a, b, r, p):
    if a != R_UNINF and b == R_UNINF:
        a2 = a
        if a == R_LEADER:
            a2 = _cube_draw(r & _SLICE, p)
        return a2, _cube_draw((r >> 31) & _SLICE, p)
    if b != R_UNINF and a == R_UNINF:
        b2 = b
        if b == R_LEADER:
            b2 = _cube_draw((r >> 31) & _SLICE, p)
        return _cube_draw(r & _SLICE, p), b2
    return a, b


@kernel
def randomized_output(s, p):
    if s >= 2:
        return s - 1
    return 0


@kernel
def randomized_kind(s, p):
    if s == R_UNINF:
        return 0
    return 1


def _describe_randomized(s):
    if s == R_UNINF:
        return "U"
    if s == R_LEADER:
        return "Leader"
    return f"L{s - 1}"


def randomized_cube(n, leader_mode="oracle", c_elect=None):
    """Informed agents pick a uniform label in [1, n^3] when they learn n."""
    if n > MAX_CUBE_N:
        raise ProtocolError(f"randomized-cube supports n <= {MAX_CUBE_N}")
    cube = n ** 3
    p = np.concatenate([
        header(n, leader_mode, leader_init=R_LEADER, free_init=R_UNINF, c_elect=c_elect),
        np.array([cube], dtype=np.int64),
    ])
    return ProtocolSpec(
        name="randomized-cube", n=n, params={"n": n, "leader_mode": leader_mode}, p=p,
        delta=randomized_delta, output=randomized_output, kind=randomized_kind,
        active=active_mask([(0, 1), (1, 0)]),
        initial=initial_states(n, leader_mode, R_LEADER, R_UNINF), describe=_describe_randomized,
        declared_range=cube, uses_aux=True, silent=True, silent_safe=False,
        info={"labeling": True},
    )


def dispenser_pools(proto):
    def of(states):
        return [set(range(1, (s >> 2) + 1)) if s >= 0 and s & 3 == D_LEADER else set() for s in states]
    return of
