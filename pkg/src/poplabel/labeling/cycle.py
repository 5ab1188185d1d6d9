"""Two-dispenser cycle protocols: Single-Cycle, its diagonal (unknown n)
variant, and k parallel cycles.

Dispenser A holds the first partial label ``a``, dispenser B the second ``b``;
a free agent is labeled ``a * s + b`` after meeting A and then B, and A and B
then agree on the next pair.  All rules fire only with the initiator in the
role written first (A before F, B before F, A before B).
"""
from __future__ import annotations

import math

import numpy as np

from .._accel import kernel
from ..protocol import H_N, HEADER, ProtocolError, ProtocolSpec, active_mask, header, initial_states

# kinds (also the low 3 bits of every state)
C_A = 0
C_B = 1
C_FREE = 2
C_WAIT = 3   # free agent holding A's partial label
C_FINAL = 4
C_BOOT = 5   # k-cycle leader still nominating dispensers

M_INIT = 0
M_AWAIT_F = 1
M_AWAIT_OTHER = 2

F_INIT = C_FREE
A_INIT = C_A + 8 * M_INIT

P_S = HEADER
P_A0 = HEADER + 1
P_B0 = HEADER + 2


@kernel
def _final(label):
    return C_FINAL + 8 * label


@kernel
def _a(a, mode):
    return C_A | (mode << 3) | (a << 5)


@kernel
def _b(b, mode):
    return C_B | (mode << 3) | (b << 5)


@kernel
def cycle_kind(s, p):
    return s & 7


@kernel
def cycle_output(s, p):
    if s & 7 == C_FINAL:
        return s >> 3
    return 0


@kernel
def _next_pair(a, b, s):
    if b > 1:
        return a, b - 1
    return a - 1, s


# ---------------------------------------------------------------- single cycle

@kernel
def single_cycle_delta(x, y, r, p):
    kx = x & 7
    ky = y & 7
    s = p[P_S]
    if kx == C_A and ky == C_FREE:
        mode = (x >> 3) & 3
        if mode == M_INIT:
            if p[H_N] == 2:  # nobody else to label
                return _final(1), _final(2)
            return _a(p[P_A0], M_AWAIT_F), _b(p[P_B0], M_AWAIT_F)
        if mode == M_AWAIT_F:
            return x + 8, C_WAIT | ((x >> 5) << 3)
        return x, y
    if kx == C_B and ky == C_WAIT:
        if (x >> 3) & 3 == M_AWAIT_F:
            return x + 8, _final((y >> 3) * s + (x >> 5))
        return x, y
    if kx == C_A and ky == C_B:
        if (x >> 3) & 3 == M_AWAIT_OTHER and (y >> 3) & 3 == M_AWAIT_OTHER:
            a, b = x >> 5, y >> 5
            a2, b2 = _next_pair(a, b, s)
            # conclude before (0, 2) would be handed out; the literal (0, 2)
            # rule is kept for completeness but is unreachable
            if a2 == 0 and b2 == 2 or a == 0 and b == 2:
                return _final(1), _final(2)
            return _a(a2, M_AWAIT_F), _b(b2, M_AWAIT_F)
    return x, y


def describe_cycle(s):
    k, x = s & 7, s >> 3
    mode, part = x & 3, x >> 2
    if k == C_A:
        if mode == M_INIT:
            return "A.init"
        return f"A[{part},await({'F' if mode == M_AWAIT_F else 'B'})]"
    if k == C_B:
        return f"B[{part},await({'F' if mode == M_AWAIT_F else 'A'})]"
    if k == C_FREE:
        return "F.init"
    if k == C_WAIT:
        return f"F[{x},await(B)]"
    return f"L{x}"


def cycle_shape(n, generalized=False):
    """(s, a0, b0): B's partial-label range [1, s] and the first dispensed pair."""
    r = math.isqrt(n)
    if r * r != n:
        if not generalized:
            raise ProtocolError(f"single-cycle needs a perfect square n (got {n}); pass generalized=True")
        r = math.isqrt(n - 1) + 1
    s = max(r, 1)
    a0 = (n - 1) // s
    return s, a0, n - a0 * s


def single_cycle(n, leader_mode="oracle", generalized=False, c_elect=None):
    """Single-Cycle labeling over [1, n]; silent and safe, O(n^3) interactions."""
    if n < 1:
        raise ProtocolError("n must be positive")
    if not generalized and n < 4 and n != 1:
        raise ProtocolError("single-cycle needs n >= 4 unless generalized=True")
    s, a0, b0 = cycle_shape(n, generalized)
    p = np.concatenate([
        header(n, leader_mode, leader_init=A_INIT, free_init=F_INIT, c_elect=c_elect),
        np.array([s, a0, b0], dtype=np.int64),
    ])
    return ProtocolSpec(
        name="single-cycle", n=n, params={"n": n, "leader_mode": leader_mode, "generalized": generalized},
        p=p, delta=single_cycle_delta, output=cycle_output, kind=cycle_kind,
        active=active_mask([(C_A, C_FREE), (C_B, C_WAIT), (C_A, C_B)]),
        initial=initial_states(n, leader_mode, A_INIT, F_INIT), describe=describe_cycle,
        declared_range=n, silent=True, silent_safe=True, pool=True,
        state_budget=n + 5 * s + 4, info={"labeling": True, "s": s, "start": (a0, b0)},
    )


# ---------------------------------------------------------------- diagonal


def cantor(i, j):
    """Pair (i, j) -> (i+j)(i+j+1)/2 + i."""
    return (i + j) * (i + j + 1) // 2 + i


@kernel
def _cantor_label(i, j):
    return (i + j) * (i + j + 1) // 2 + i + 1


@kernel
def diagonal_output(s, p):
    k = s & 7
    if k == C_FINAL:
        return s >> 3
    if k == C_A and (s >> 3) & 3 != M_INIT:
        return 1
    if k == C_B:
        return 2
    return 0


@kernel
def diagonal_delta(x, y, r, p):
    kx = x & 7
    ky = y & 7
    if kx == C_A and ky == C_FREE:
        mode = (x >> 3) & 3
        if mode == M_INIT:
            return _a(1, M_AWAIT_F), _b(0, M_AWAIT_F)
        if mode == M_AWAIT_F:
            return x + 8, C_WAIT | ((x >> 5) << 3)
        return x, y
    if kx == C_B and ky == C_WAIT:
        if (x >> 3) & 3 == M_AWAIT_F:
            return x + 8, _final(_cantor_label(y >> 3, x >> 5))
        return x, y
    if kx == C_A and ky == C_B:
        if (x >> 3) & 3 == M_AWAIT_OTHER and (y >> 3) & 3 == M_AWAIT_OTHER:
            i = x >> 5
            j = y >> 5
            if j == 0:
                return _a(0, M_AWAIT_F), _b(i + 1, M_AWAIT_F)
            return _a(i + 1, M_AWAIT_F), _b(j - 1, M_AWAIT_F)
    return x, y


def single_cycle_diagonal(n, leader_mode="oracle", c_elect=None):
    """Unknown-n variant: labels handed out along Cantor diagonals, never silent.

    A keeps label 1 = (0,0), B keeps 2 = (0,1); the f-th labeled free agent gets
    cantor(i, j) + 1 for the f-th pair after (0,1) in diagonal order.
    """
    p = header(n, leader_mode, leader_init=A_INIT, free_init=F_INIT, c_elect=c_elect)
    return ProtocolSpec(
        name="single-cycle-diagonal", n=n, params={"n": n, "leader_mode": leader_mode}, p=p,
        delta=diagonal_delta, output=diagonal_output, kind=cycle_kind,
        active=active_mask([(C_A, C_FREE), (C_B, C_WAIT), (C_A, C_B)]),
        initial=initial_states(n, leader_mode, A_INIT, F_INIT), describe=describe_cycle,
        declared_range=None, silent=False, silent_safe=False, pool=False,
        info={"labeling": True, "distinct_only": True},
    )


# ---------------------------------------------------------------- k cycles
# A / B: kind | mode << 3 | cycle << 5 | partial << 21; waiting free: kind | cycle << 5 | partial << 21

P_K = HEADER + 3
P_M = HEADER + 4


CYCLE_BITS = 16
MAX_K = (1 << CYCLE_BITS) - 1


@kernel
def _ka(a, c, mode, p):
    return C_A | (mode << 3) | (c << 5) | (a << 21)


@kernel
def _kb(b, c, mode, p):
    return C_B | (mode << 3) | (c << 5) | (b << 21)


@kernel
def _nominee(t, p):
    """State of the t-th nominated agent (t = 0 is B of cycle 0, then A1, B1, ...)."""
    c = (t + 1) // 2
    off = c * p[P_M]
    is_a = t % 2 == 1
    if p[P_M] == 2:
        if is_a:
            return _final(off + 1)
        return _final(off + 2)
    if is_a:
        return _ka(p[P_A0], c, M_AWAIT_F, p)
    return _kb(p[P_B0], c, M_AWAIT_F, p)


@kernel
def k_cycle_delta(x, y, r, p):
    kx = x & 7
    ky = y & 7
    s = p[P_S]
    if kx == C_BOOT and ky == C_FREE:
        t = x >> 3
        y2 = _nominee(t, p)
        if t + 1 == 2 * p[P_K] - 1:
            if p[P_M] == 2:
                return _final(1), y2
            return _ka(p[P_A0], 0, M_AWAIT_F, p), y2
        return C_BOOT + 8 * (t + 1), y2
    if kx == C_A and ky == C_FREE:
        if (x >> 3) & 3 == M_AWAIT_F:
            return x + 8, C_WAIT | ((x >> 5) << 5)
        return x, y
    if kx == C_B and ky == C_WAIT:
        if (x >> 3) & 3 == M_AWAIT_F:
            c = (x >> 5) & MAX_K
            if (y >> 5) & MAX_K == c:
                return x + 8, _final(c * p[P_M] + (y >> 21) * s + (x >> 21))
        return x, y
    if kx == C_A and ky == C_B:
        if (x >> 3) & 3 == M_AWAIT_OTHER and (y >> 3) & 3 == M_AWAIT_OTHER:
            c = (x >> 5) & MAX_K
            if (y >> 5) & MAX_K == c:
                a2, b2 = _next_pair(x >> 21, y >> 21, s)
                if a2 == 0 and b2 == 2:
                    off = c * p[P_M]
                    return _final(off + 1), _final(off + 2)
                return _ka(a2, c, M_AWAIT_F, p), _kb(b2, c, M_AWAIT_F, p)
    return x, y


def _describe_k(k):
    def describe(s):
        kind, x = s & 7, s >> 3
        if kind == C_BOOT:
            return f"Boot[{x}]"
        if kind in (C_A, C_B):
            mode, c, part = x & 3, (x >> 2) & MAX_K, x >> 18
            tag = "A" if kind == C_A else "B"
            other = "F" if mode == M_AWAIT_F else ("B" if kind == C_A else "A")
            return f"{tag}{c}[{part},await({other})]"
        if kind == C_WAIT:
            c, part = (x >> 2) & MAX_K, x >> 18
            return f"F{c}[{part},await(B)]"
        return describe_cycle(s)
    return describe


def k_cycle(n, k, leader_mode="oracle", generalized=False, c_elect=None):
    """k independent Single-Cycle instances over consecutive sub-ranges of size n/k."""
    k = int(k)
    if not 1 <= k <= MAX_K:
        raise ProtocolError(f"k must lie in [1, {MAX_K}]")
    if n % k:
        raise ProtocolError(f"k={k} must divide n={n}")
    m = n // k
    if m < 2 and n > 1:
        raise ProtocolError("each cycle needs at least two labels (n/k >= 2)")
    if not generalized and m > 2 and math.isqrt(m) ** 2 != m:
        raise ProtocolError(f"n/k={m} must be a perfect square unless generalized=True")
    s, a0, b0 = cycle_shape(max(m, 1), True)
    boot = C_BOOT
    p = np.concatenate([
        header(n, leader_mode, leader_init=boot, free_init=F_INIT, c_elect=c_elect),
        np.array([s, a0, b0, k, m], dtype=np.int64),
    ])
    active = active_mask([(C_BOOT, C_FREE), (C_A, C_FREE), (C_B, C_WAIT), (C_A, C_B)])
    return ProtocolSpec(
        name="k-cycle", n=n,
        params={"n": n, "k": k, "leader_mode": leader_mode, "generalized": generalized},
        p=p, delta=k_cycle_delta, output=cycle_output, kind=cycle_kind, active=active,
        initial=initial_states(n, leader_mode, boot, F_INIT), describe=_describe_k(k),
        declared_range=n, silent=True, silent_safe=True, pool=True,
        state_budget=n + 2 * k + k * (5 * s + 4), info={"labeling": True, "m": m, "s": s},
    )


# ---------------------------------------------------------------- pools

def _cycle_pools(states, n, s, m, k, a0, b0, a_of, b_of, wait_of, boot):
    """Pools of the dispenser pairs, cycle by cycle (see :func:`pools`)."""
    out = [set() for _ in states]
    A, B, W = {}, {}, {}
    leader = None
    for idx, st in enumerate(states):
        st = int(st)
        if st < 0:
            continue
        kind = st & 7
        if kind == C_A and a_of(st) is None:
            leader = idx
        elif kind == C_BOOT:
            leader = idx
        elif kind == C_A:
            A[a_of(st)[0]] = (idx,) + a_of(st)[1:]
        elif kind == C_B:
            B[b_of(st)[0]] = (idx,) + b_of(st)[1:]
        elif kind == C_WAIT:
            W[wait_of(st)] = idx
    if m == 2:
        if leader is not None:
            assigned = {x >> 3 for x in map(int, states) if x >= 0 and x & 7 == C_FINAL}
            out[leader] = set(range(1, n + 1)) - assigned
        return out
    for c in range(k):
        off = c * m
        if c in A:
            ia, a, amode = A[c]
            ib, b, bmode = B.get(c, (None, b0, M_AWAIT_F))
            v = off + a * s + b
            top = v if amode == M_AWAIT_F else v - 1
            out[ia] = set(range(off + 3, top + 1)) | {off + 1}
            if amode == M_AWAIT_OTHER and bmode == M_AWAIT_F and c in W:
                out[W[c]] = {v}
            if ib is not None:
                out[ib] = {off + 2}
            elif leader is not None:
                out[leader] |= {off + 2}
        elif leader is not None:
            finished = any(
                (int(x) >> 3) == off + 1 for x in states if int(x) >= 0 and int(x) & 7 == C_FINAL)
            if finished:
                continue
            mine = set(range(off + 1, off + m + 1))
            if c in B:
                out[B[c][0]] = {off + 2}
                mine.discard(off + 2)
            out[leader] |= mine
    return out


def pools(proto):
    """Pool map for single-cycle and k-cycle configurations.

    With current pair value v (a * s + b), A owns the labels v (or v - 1 once
    it has handed out a) down to 3 plus its own final label 1, B owns 2 and a
    free agent carrying a owns v until B completes it.  Before a dispenser
    exists its share belongs to the leader.
    """
    n = proto.n
    s = proto.info["s"]
    if proto.name == "k-cycle":
        k, m = proto.params["k"], proto.info["m"]
        a0, b0 = int(proto.p[P_A0]), int(proto.p[P_B0])

        def a_of(st):
            return ((st >> 5) & MAX_K, st >> 21, (st >> 3) & 3)

        def wait_of(st):
            return (st >> 5) & MAX_K
        b_of = a_of
    else:
        k, m = 1, n
        a0, b0 = proto.info["start"]

        def a_of(st):
            mode = (st >> 3) & 3
            return None if mode == M_INIT else (0, st >> 5, mode)

        def b_of(st):
            return (0, st >> 5, (st >> 3) & 3)

        def wait_of(st):
            return 0

    def of(states):
        return _cycle_pools(states, n, s, m, k, a0, b0, a_of, b_of, wait_of, None)
    return of
