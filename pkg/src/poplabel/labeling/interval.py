"""Interval splitting: labels in [1, n + m] with m = n (2n variant) or ceil(eps*n).

Phase 1 hands out labels from [1, n] by halving intervals.  The leader (label
1, interval [2, n]) counts its own interactions; at the threshold it starts a
broadcast among the participating agents (labels <= m and the nodes above
them).  Informed leaves i <= m then give label i + n to one unlabeled agent
each (phase 2).

State layout, ``tag + 8 * payload``:

* LEAD    (r, count)             leader holding [2, r]; r == 1 means leaf 1
* UNL                            unlabeled
* HOLD    (q, r, informed)       own label q - 1, interval [q, r]
* LEAF    (i, informed, spent)   own label i
* HIGH    (l)                    own label l in [n + 1, n + m]
"""
from __future__ import annotations

import math

import numpy as np

from .._accel import kernel
from ..calibration import pinned
from ..primitives import phase_threshold
from ..protocol import HEADER, ProtocolError, ProtocolSpec, active_mask, header, initial_states

T_LEAD = 0
T_UNL = 1
T_HOLD = 2
T_LEAF = 3
T_HIGH = 4
UNL = T_UNL

# activity classes
K_LEAD = 0
K_UNL = 1
K_HOLD_U = 2   # participating holder, not informed yet
K_HOLD_X = 3   # informed holder, or a holder outside the broadcast
K_LEAF_U = 4
K_LEAF_I = 5   # informed and still able to dispense
K_INERT = 6    # spent leaf, non-participating leaf, high label

P_N = HEADER
P_M = HEADER + 1
P_THR = HEADER + 2
P_COUNT_ALL = HEADER + 3


@kernel
def _hold(q, r, inf, p):
    return T_HOLD + 8 * ((q * (p[P_N] + 1) + r) * 2 + inf)


@kernel
def _leaf(i, inf, spent):
    return T_LEAF + 8 * (i * 4 + inf * 2 + spent)


@kernel
def _lead(r, cnt, p):
    return T_LEAD + 8 * (r * (p[P_THR] + 1) + cnt)


@kernel
def _hold_fields(s, p):
    x = s >> 3
    inf = x & 1
    x >>= 1
    return x // (p[P_N] + 1), x % (p[P_N] + 1), inf


@kernel
def interval_output(s, p):
    t = s & 7
    x = s >> 3
    if t == T_LEAD:
        return 1
    if t == T_HOLD:
        return (x >> 1) // (p[P_N] + 1) - 1
    if t == T_LEAF:
        return x >> 2
    if t == T_HIGH:
        return x
    return 0


@kernel
def _participant(s, p):
    t = s & 7
    if t == T_LEAD:
        return True
    if t == T_HOLD:
        q, r, inf = _hold_fields(s, p)
        return q <= p[P_M] + 1
    if t == T_LEAF:
        return (s >> 5) <= p[P_M]
    return False


@kernel
def _informed(s):
    t = s & 7
    if t == T_HOLD:
        return (s >> 3) & 1 == 1
    if t == T_LEAF:
        return (s >> 4) & 1 == 1
    return False


@kernel
def _set_informed(s):
    if s & 7 == T_HOLD:
        return s | 8
    return s | 16


@kernel
def interval_kind(s, p):
    t = s & 7
    if t == T_LEAD:
        return K_LEAD
    if t == T_UNL:
        return K_UNL
    if t == T_HOLD:
        if _participant(s, p) and not _informed(s):
            return K_HOLD_U
        return K_HOLD_X
    if t == T_LEAF:
        if not _participant(s, p):
            return K_INERT
        if not _informed(s):
            return K_LEAF_U
        if (s >> 3) & 1 == 0:
            return K_LEAF_I
        return K_INERT
    return K_INERT


@kernel
def _split(q, r, inf, p):
    """Holder of [q, r] meets an unlabeled agent: (holder', other')."""
    m = p[P_M]
    if r > q:
        mid = (q + r) // 2
        if mid + 2 <= r:
            other = _hold(mid + 2, r, inf if mid + 2 <= m + 1 else 0, p)
        else:
            other = _leaf(mid + 1, inf if mid + 1 <= m else 0, 0)
        return _hold(q, mid, inf, p), other
    return _leaf(q - 1, inf, 0), _leaf(q, inf if q <= m else 0, 0)


@kernel
def _with_unlabeled(x, p):
    """Non-leader agent ``x`` meets an unlabeled agent."""
    t = x & 7
    if t == T_HOLD:
        q, r, inf = _hold_fields(x, p)
        return _split(q, r, inf, p)
    if t == T_LEAF and (x >> 3) & 3 == 2 and (x >> 5) <= p[P_M]:
        i = x >> 5
        return x | 8, T_HIGH + 8 * (i + p[P_N])
    return x, UNL


@kernel
def _leader_step(ld, x, p):
    """Leader ``ld`` interacts with ``x``; returns (leader', x')."""
    y = ld >> 3
    rl = y // (p[P_THR] + 1)
    cnt = y % (p[P_THR] + 1)
    x2 = x
    if x == UNL and rl >= 2:
        h, x2 = _split(2, rl, 0, p)
        if h & 7 == T_HOLD:
            rl = _hold_fields(h, p)[1]
        else:
            rl = 1
    if p[P_COUNT_ALL] == 1:
        cnt += 1
    else:
        lab = interval_output(x, p)
        if lab >= 1 and lab <= p[P_M]:
            cnt += 1
    if cnt >= p[P_THR]:
        if rl >= 2:
            return _hold(2, rl, 1, p), x2
        return _leaf(1, 1, 0), x2
    return _lead(rl, cnt, p), x2


@kernel
def interval_delta(a, b, r, p):
    ta = a & 7
    tb = b & 7
    if ta == T_LEAD:
        return _leader_step(a, b, p)
    if tb == T_LEAD:
        b2, a2 = _leader_step(b, a, p)
        return a2, b2
    if ta == T_UNL and tb == T_UNL:
        return a, b
    if tb == T_UNL:
        return _with_unlabeled(a, p)
    if ta == T_UNL:
        b2, a2 = _with_unlabeled(b, p)
        return a2, b2
    ia = _informed(a)
    ib = _informed(b)
    if ia != ib and _participant(a, p) and _participant(b, p):
        if ia:
            return a, _set_informed(b)
        return _set_informed(a), b
    return a, b


def describe_interval(s, n, thr):
    t, x = s & 7, s >> 3
    if t == T_LEAD:
        rl, cnt = divmod(x, thr + 1)
        where = f"[2,{rl}]" if rl >= 2 else "leaf"
        return f"Leader{where}c{cnt}"
    if t == T_UNL:
        return "U"
    if t == T_HOLD:
        inf = x & 1
        q, r = divmod(x >> 1, n + 1)
        return f"H[{q},{r}]{'i' if inf else ''}"
    if t == T_LEAF:
        i, inf, spent = x >> 2, (x >> 1) & 1, x & 1
        return f"Leaf{i}{'i' if inf else ''}{'s' if spent else ''}"
    return f"L{x}"


def _active():
    informed = (K_HOLD_X, K_LEAF_I, K_INERT)
    uninformed = (K_HOLD_U, K_LEAF_U)
    pairs = [(K_LEAD, k) for k in range(7)] + [(k, K_LEAD) for k in range(7)]
    for k in (K_HOLD_U, K_HOLD_X, K_LEAF_I):
        pairs += [(K_UNL, k), (k, K_UNL)]
    for i in informed:
        for u in uninformed:
            pairs += [(i, u), (u, i)]
    return active_mask(pairs)


def _build(name, n, m, count_all, leader_mode, c_phase, c_elect, params):
    c_phase = pinned("c_phase") if c_phase is None else float(c_phase)
    if c_phase <= 0:
        raise ProtocolError("c_phase must be positive")
    thr = phase_threshold(n, c_phase)
    lead = T_LEAD + 8 * (n * (thr + 1)) if n >= 2 else _leaf_py(1)
    p = np.concatenate([
        header(n, leader_mode, leader_init=lead, free_init=UNL, c_elect=c_elect),
        np.array([n, m, thr, int(count_all)], dtype=np.int64),
    ])
    levels = math.ceil(math.log2(max(n, 2))) + 2
    return ProtocolSpec(
        name=name, n=n, params=dict(params, c_phase=c_phase), p=p,
        delta=interval_delta, output=interval_output, kind=interval_kind, active=_active(),
        initial=initial_states(n, leader_mode, lead, UNL),
        describe=lambda s: describe_interval(s, n, thr),
        declared_range=n + m, silent=True, silent_safe=True, pool=True,
        state_budget=2 * n + 9 * m + (thr + 1) * levels + 1,
        info={"labeling": True, "threshold": thr, "m": m},
    )


def _leaf_py(i):
    return T_LEAF + 8 * (i * 4)


def interval_2n(n, leader_mode="oracle", c_phase=None, c_elect=None):
    """Unique labels in [1, 2n] after O(n log n) interactions."""
    params = {"n": n, "leader_mode": leader_mode}
    return _build("interval-2n", n, n, True, leader_mode, c_phase, c_elect, params)


def interval_eps(n, epsilon, leader_mode="oracle", c_phase=None, c_elect=None):
    """Unique labels in [1, ceil((1+eps)n)]; only labels <= ceil(eps n) take part in phase 2."""
    epsilon = float(epsilon)
    if not 0 < epsilon <= 1:
        raise ProtocolError("epsilon must lie in (0, 1]")
    if n * epsilon < 1:
        raise ProtocolError("epsilon * n must be at least 1")
    m = math.ceil(epsilon * n - 1e-9)
    params = {"n": n, "epsilon": epsilon, "leader_mode": leader_mode}
    return _build("interval-eps", n, m, m >= n, leader_mode, c_phase, c_elect, params)


# ---------------------------------------------------------------- monitors

def _decode(s, n, thr):
    """(own label or None, interval or None, informed, spent)."""
    t, x = s & 7, s >> 3
    if t == T_LEAD:
        rl = x // (thr + 1)
        return 1, ((2, rl) if rl >= 2 else None), False, False
    if t == T_HOLD:
        q, r = divmod(x >> 1, n + 1)
        return q - 1, (q, r), bool(x & 1), False
    if t == T_LEAF:
        return x >> 2, None, bool((x >> 1) & 1), bool(x & 1)
    if t == T_HIGH:
        return x, None, True, True
    return None, None, False, False


def claims(proto):
    """Per-state map to the own label plus every label of the held interval."""
    n, thr = proto.n, proto.info["threshold"]

    def of(s):
        if s < 0:
            return ()
        own, iv, _, _ = _decode(s, n, thr)
        out = [own] if own is not None else []
        if iv is not None:
            out.extend(range(iv[0], iv[1] + 1))
        return out
    return of


def pools(proto):
    """Pool of every agent: held interval plus the high labels it may still give."""
    n, m, thr = proto.n, proto.info["m"], proto.info["threshold"]

    def one(s):
        if s < 0:
            return set()
        own, iv, _, spent = _decode(s, n, thr)
        if own is None or own > n:
            return set()
        lo, hi = own, own
        out = set()
        if iv is not None:
            out.update(range(iv[0], iv[1] + 1))
            hi = iv[1]
        if not spent:
            out.update(x + n for x in range(lo, hi + 1) if x <= m)
        return out

    def of(states):
        return [one(int(s)) for s in states]
    return of
