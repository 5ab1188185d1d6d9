"""Exact expected interactions to silence via the configuration Markov chain.

Configurations are multisets of states (sorted tuples).  From a configuration
with multiplicities c, the ordered state pair (s, s') is drawn with probability
c_s * c_s' / (n (n - 1)) (c_s (c_s - 1) / (n (n - 1)) when s == s').  Silent
configurations are absorbing; the expected hitting times t solve
(I - Q) t = 1 over the transient ones.
"""
from __future__ import annotations

from collections import Counter

import numpy as np

from .protocol import ProtocolSpec


class StateSpaceTooLarge(RuntimeError):
    pass


def _moves(config, proto):
    n = len(config)
    total = n * (n - 1)
    counts = Counter(config)
    out = Counter()
    for s, cs in counts.items():
        for t, ct in counts.items():
            w = cs * (cs - 1) if s == t else cs * ct
            if w == 0:
                continue
            a, b = proto.transition(s, t, 0)
            if (a, b) == (s, t):
                continue
            nxt = Counter(counts)
            for x in (s, t):
                nxt[x] -= 1
            nxt[a] += 1
            nxt[b] += 1
            key = tuple(sorted(nxt.elements()))
            out[key] += w / total
    return out


def reachable_chain(proto: ProtocolSpec, max_configs=20000):
    """Breadth-first enumeration: (configs, transitions, absorbing flags)."""
    if proto.uses_aux or proto.leader_mode == "elected":
        raise ValueError("exact chain needs a transition that does not use random input")
    start = tuple(sorted(int(s) for s in proto.initial))
    index = {start: 0}
    order = [start]
    moves = []
    k = 0
    while k < len(order):
        m = _moves(order[k], proto)
        moves.append(m)
        for c in m:
            if c not in index:
                if len(order) >= max_configs:
                    raise StateSpaceTooLarge(f"more than {max_configs} configurations")
                index[c] = len(order)
                order.append(c)
        k += 1
    return order, index, moves


def expected_hitting_time(proto: ProtocolSpec, max_configs=20000):
    """Expected number of interactions from the initial configuration to silence."""
    order, index, moves = reachable_chain(proto, max_configs)
    transient = [i for i, m in enumerate(moves) if m]
    if not transient or transient[0] != 0:
        return 0.0
    pos = {c: k for k, c in enumerate(transient)}
    size = len(transient)
    A = np.eye(size)
    for row, i in enumerate(transient):
        A[row, row] -= 1.0 - sum(moves[i].values())  # inert draws
        for c, prob in moves[i].items():
            j = index[c]
            if j in pos:
                A[row, pos[j]] -= prob
    t = np.linalg.solve(A, np.ones(size))
    return float(t[0])


def absorbing_configurations(proto: ProtocolSpec, max_configs=20000):
    order, _, moves = reachable_chain(proto, max_configs)
    return [c for c, m in zip(order, moves) if not m]
