"""Uniform random pairwise scheduler and the run loop.

Interactions are processed in chunks by a kernel (see :func:`kernels`) that
applies the transition, maintains the distinct-state census, the safety
ledger and the current state multiset, and probes for silence.  Random
numbers are drawn in numpy blocks of fixed size (see :class:`Scheduler`), so
the numba and pure-Python backends see the same draws and give identical runs.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _accel
from ._accel import kernel, new_int_dict
from .primitives import apply_output, elect_pair
from .protocol import ELECTION_KIND, H_FREE_INIT, H_LEADER_INIT, H_MODE, NUM_KINDS, ProtocolSpec

BLOCK = 1 << 16
FIRST_CHUNK = 1 << 10
MAX_CHUNK = 1 << 20
MAX_VIOLATIONS = 64

C_LAST = 0
C_DIRTY = 1
C_SINCE = 2
C_STATUS = 3
C_WATCH_STATE = 4
C_WATCH_BELOW = 5
C_NVIOL = 6
C_WIT = 7
C_WA = 8
C_WB = 9
C_DECL = 10
C_SIZE = 12

RUNNING = 0
SILENT = 1
WATCH_STOP = 2

_NO_TRACE = np.zeros((0, 7), dtype=np.int64)


@functools.lru_cache(maxsize=4)
def _zero_aux_buffer(size):
    z = np.zeros(size, dtype=np.int64)
    z.flags.writeable = False
    return z


def _zero_aux(count):
    size = 1 << max(12, (count - 1).bit_length())
    return _zero_aux_buffer(size)[:count]


class Scheduler:
    """Seeded uniform scheduler over ordered pairs of distinct agents.

    Two independent streams are derived from ``seed``: one for the pairs and
    one auxiliary stream handed to transitions that need random input.
    """

    def __init__(self, seed, n, uses_aux=False):
        if n < 2:
            raise ValueError("the scheduler needs at least two agents")
        self.seed = int(seed)
        self.n = int(n)
        self.uses_aux = bool(uses_aux)
        ss = np.random.SeedSequence(self.seed & 0xFFFFFFFFFFFFFFFF)
        pair_ss, aux_ss = ss.spawn(2)
        self._pair_rng = np.random.Generator(np.random.PCG64(pair_ss))
        self._aux_rng = np.random.Generator(np.random.PCG64(aux_ss))
        self._pairs = np.empty(0, dtype=np.int64)
        self._aux = np.empty(0, dtype=np.int64)
        self._pos = 0
        self._blocks = 0

    def _refill(self):
        # fixed block schedule, so the stream never depends on how it is consumed
        size = min(BLOCK, 1024 << (2 * self._blocks))
        self._blocks += 1
        self._pairs = self._pair_rng.integers(0, self.n * (self.n - 1), size=size, dtype=np.int64)
        if self.uses_aux:
            raw = self._aux_rng.bit_generator.random_raw(size)
            self._aux = (raw >> np.uint64(1)).astype(np.int64)
        self._pos = 0

    def take(self, count):
        """Next ``count`` encoded pairs and auxiliary words."""
        pairs = np.empty(count, dtype=np.int64)
        if self.uses_aux:
            aux = np.empty(count, dtype=np.int64)
        else:
            aux = _zero_aux(count)
        filled = 0
        while filled < count:
            if self._pos >= self._pairs.shape[0]:
                self._refill()
            k = min(count - filled, self._pairs.shape[0] - self._pos)
            pairs[filled:filled + k] = self._pairs[self._pos:self._pos + k]
            if self.uses_aux:
                aux[filled:filled + k] = self._aux[self._pos:self._pos + k]
            self._pos += k
            filled += k
        return pairs, aux

    def decode(self, x):
        i, j = divmod(int(x), self.n - 1)
        if j >= i:
            j += 1
        return i, j

    def draw(self):
        """One ordered pair ``(initiator, responder)`` plus its auxiliary word."""
        pairs, aux = self.take(1)
        i, j = self.decode(pairs[0])
        return i, j, int(aux[0])


@dataclass
class Configuration:
    states: np.ndarray

    @property
    def n(self):
        return int(self.states.shape[0])

    def copy(self):
        return Configuration(self.states.copy())


@dataclass
class RunLimits:
    max_interactions: int = 10 ** 9
    silence_check_period: Optional[int] = None
    stop_below: Optional[tuple] = None  # (state, k): stop once fewer than k agents hold state

    def __post_init__(self):
        if self.max_interactions < 1:
            raise ValueError("max_interactions must be at least 1")
        if self.silence_check_period is not None and self.silence_check_period < 1:
            raise ValueError("silence_check_period must be positive")


@dataclass
class RunRecord:
    protocol: str
    n: int
    seed: int
    interactions_used: int
    completed: bool
    final_labels: tuple
    final_states: np.ndarray
    violations: tuple
    violation_count: int
    validity: object
    census: int
    states_seen: np.ndarray
    declarations: Optional[int] = None
    stopped_by_watch: bool = False
    backend: str = _accel.BACKEND
    trace: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def safety_ok(self):
        return self.violation_count == 0

    @property
    def first_violation_step(self):
        return self.violations[0][0] if self.violations else None

    def summary(self):
        return {
            "protocol": self.protocol,
            "n": self.n,
            "seed": self.seed,
            "interactions_used": self.interactions_used,
            "completed": self.completed,
            "validity": self.validity.status,
            "safety": "ok" if self.safety_ok else f"violation@{self.first_violation_step}",
            "safety_violations": self.violation_count,
            "census": self.census,
            "declarations": self.declarations,
        }

    def same_as(self, other):
        """Field-by-field equality, ignoring the backend tag."""
        return (
            self.summary() == other.summary()
            and self.final_labels == other.final_labels
            and self.violations == other.violations
            and np.array_equal(self.final_states, other.final_states)
            and np.array_equal(self.states_seen, other.states_seen)
        )


# ---------------------------------------------------------------- kernels

@functools.lru_cache(maxsize=None)
def kernels(delta, output, kind):
    """Chunk runner and silence probe specialized to one protocol.

    The transition, output and kind functions are bound as closure constants
    so the compiler can inline them into the interaction loop.
    """
    @kernel(cache=False)
    def full_delta(a, b, r, p):
        if a >= 0 and b >= 0:
            return delta(a, b, r, p)
        if a >= 0:
            return delta(a, p[H_FREE_INIT], r, p)
        if b >= 0:
            return delta(p[H_FREE_INIT], b, r, p)
        return elect_pair(a, b, r, p)

    @kernel(cache=False)
    def full_output(s, p):
        if s < 0:
            return 0
        return output(s, p)

    @kernel(cache=False)
    def full_kind(s, p):
        if s < 0:
            return ELECTION_KIND
        return kind(s, p)

    @kernel(cache=False)
    def probe(active, p, counts, ctl):
        """Exact silence test over the distinct states currently present."""
        if ctl[C_WIT] == 1:
            wa = ctl[C_WA]
            wb = ctl[C_WB]
            if wa in counts and wb in counts and (wa != wb or counts[wa] >= 2):
                x, y = full_delta(wa, wb, 0, p)
                if x != wa or y != wb:
                    return False
        m = len(counts)
        keys = np.empty(m, dtype=np.int64)
        mult = np.empty(m, dtype=np.int64)
        kinds = np.empty(m, dtype=np.int64)
        t = 0
        for k, v in counts.items():
            keys[t] = k
            mult[t] = v
            kinds[t] = full_kind(k, p)
            t += 1
        order = np.argsort(kinds, kind="mergesort")
        start = np.zeros(NUM_KINDS + 1, dtype=np.int64)
        for t in range(m):
            start[kinds[t] + 1] += 1
        for c in range(NUM_KINDS):
            start[c + 1] += start[c]
        for ka in range(NUM_KINDS):
            if start[ka + 1] == start[ka]:
                continue
            for kb in range(NUM_KINDS):
                if not active[ka, kb] or start[kb + 1] == start[kb]:
                    continue
                for u in range(start[ka], start[ka + 1]):
                    sa = keys[order[u]]
                    for v in range(start[kb], start[kb + 1]):
                        sb = keys[order[v]]
                        if sa == sb and mult[order[u]] < 2:
                            continue
                        x, y = full_delta(sa, sb, 0, p)
                        if x != sa or y != sb:
                            ctl[C_WIT] = 1
                            ctl[C_WA] = sa
                            ctl[C_WB] = sb
                            return False
        return True

    @kernel(cache=False)
    def record_change(p, agent, old, new, step, counts, seen, last_out, viol, ctl):
        c = counts[old] - 1
        if c == 0:
            counts.pop(old)
        else:
            counts[old] = c
        counts[new] = counts.get(new, 0) + 1
        if new not in seen:
            seen[new] = step
        o_new = full_output(new, p)
        o_old = last_out[agent]
        if o_old != 0 and o_new != o_old:
            k = ctl[C_NVIOL]
            if k < viol.shape[0]:
                viol[k, 0] = step
                viol[k, 1] = agent
                viol[k, 2] = o_old
                viol[k, 3] = o_new
            ctl[C_NVIOL] = k + 1
        last_out[agent] = o_new
        if old < 0 and p[H_MODE] == 1 and new == p[H_LEADER_INIT]:
            ctl[C_DECL] += 1

    @kernel(cache=False)
    def run_chunk(active, p, states, pairs, aux, step0, period,
                  counts, seen, last_out, viol, trace, ctl):
        n = states.shape[0]
        tracing = trace.shape[0] > 0
        watch = ctl[C_WATCH_BELOW] >= 0
        last = ctl[C_LAST]
        dirty = ctl[C_DIRTY]
        since = ctl[C_SINCE]
        done = pairs.shape[0]
        for t in range(pairs.shape[0]):
            x = pairs[t]
            i = x // (n - 1)
            j = x - i * (n - 1)
            if j >= i:
                j += 1
            a = states[i]
            b = states[j]
            if a >= 0 and b >= 0:
                a2, b2 = delta(a, b, aux[t], p)
            else:
                a2, b2 = full_delta(a, b, aux[t], p)
            if tracing:
                trace[t, 0] = step0 + t + 1
                trace[t, 1] = i
                trace[t, 2] = j
                trace[t, 3] = a
                trace[t, 4] = b
                trace[t, 5] = a2
                trace[t, 6] = b2
            since += 1
            if a2 != a or b2 != b:
                step = step0 + t + 1
                states[i] = a2
                states[j] = b2
                if a2 != a:
                    record_change(p, i, a, a2, step, counts, seen, last_out, viol, ctl)
                if b2 != b:
                    record_change(p, j, b, b2, step, counts, seen, last_out, viol, ctl)
                last = step
                dirty = 1
                if watch and counts.get(ctl[C_WATCH_STATE], 0) < ctl[C_WATCH_BELOW]:
                    ctl[C_STATUS] = WATCH_STOP
                    done = t + 1
                    break
            if dirty == 1 and since >= period:
                since = 0
                dirty = 0
                if probe(active, p, counts, ctl):
                    ctl[C_STATUS] = SILENT
                    done = t + 1
                    break
        ctl[C_LAST] = last
        ctl[C_DIRTY] = dirty
        ctl[C_SINCE] = since
        return done

    return run_chunk, probe, full_output


# ---------------------------------------------------------------- python API

def _census_dicts(states):
    counts = new_int_dict()
    seen = new_int_dict()
    for s in states.tolist():
        counts[s] = counts.get(s, 0) + 1
        if s not in seen:
            seen[s] = 0
    return counts, seen


def is_silent(config, proto: ProtocolSpec):
    """True iff no ordered pair of present states is changed by the transition."""
    states = config.states if isinstance(config, Configuration) else np.asarray(config, dtype=np.int64)
    counts, _ = _census_dicts(states)
    ctl = np.zeros(C_SIZE, dtype=np.int64)
    probe = kernels(proto.delta, proto.output, proto.kind)[1]
    return bool(probe(proto.active, proto.p, counts, ctl))


def step(config: Configuration, proto: ProtocolSpec, sched: Scheduler):
    """Apply one scheduled interaction; returns ``(config', (i, j), changed)``."""
    if config.n < 2:
        raise ValueError("step needs at least two agents")
    i, j, r = sched.draw()
    a, b = int(config.states[i]), int(config.states[j])
    a2, b2 = proto.transition(a, b, r)
    out = config.copy()
    out.states[i] = a2
    out.states[j] = b2
    return out, (i, j), (a2 != a or b2 != b)


def state_census(record_or_trace, initial=None):
    """Number of distinct states occupied during a run.

    Accepts a :class:`RunRecord`, or a full trace array together with the
    initial states of the run.
    """
    if isinstance(record_or_trace, RunRecord):
        return record_or_trace.census
    trace = np.asarray(record_or_trace)
    seen = set(np.asarray(initial).tolist()) if initial is not None else set()
    if trace.size:
        seen.update(trace[:, 5].tolist())
        seen.update(trace[:, 6].tolist())
    return len(seen)


def _labels_of(proto, states):
    labels = []
    for s in states.tolist():
        v = int(apply_output(proto.output, s, proto.p))
        labels.append(v if v > 0 else None)
    return tuple(labels)


def _finish(proto, seed, used, completed, states, viol, nviol, seen_keys, decl, watch_stop, trace):
    from .verify import check_validity

    labels = _labels_of(proto, states)
    validity = check_validity(labels, proto.declared_range, completed=completed,
                              applicable=proto.info.get("labeling", True))
    viols = tuple(tuple(int(x) for x in row) for row in viol[:min(nviol, MAX_VIOLATIONS)])
    return RunRecord(
        protocol=proto.name, n=proto.n, seed=int(seed), interactions_used=int(used),
        completed=bool(completed), final_labels=labels, final_states=states,
        violations=viols, violation_count=int(nviol), validity=validity,
        census=len(seen_keys), states_seen=np.array(sorted(seen_keys), dtype=np.int64),
        declarations=decl if proto.leader_mode == "elected" else None,
        stopped_by_watch=watch_stop, trace=trace,
    )


def run(proto: ProtocolSpec, limits: Optional[RunLimits] = None, seed=0,
        monitors: Sequence = (), keep_trace=False, initial=None) -> RunRecord:
    """Simulate ``proto`` until silence or until the interaction cap.

    ``monitors`` are objects with ``interaction(step, i, j, before, after)``
    called after every state-changing interaction (in order, replayed per
    chunk from the retained trace) and an optional ``finish(record)``.
    """
    n = proto.n
    if n < 1:
        raise ValueError("population must contain at least one agent")
    limits = limits or RunLimits()
    states = np.array(proto.initial if initial is None else initial, dtype=np.int64)
    if states.shape[0] != n:
        raise ValueError(f"initial configuration has {states.shape[0]} agents, expected {n}")
    if n == 1:
        label = proto.singleton_label
        record = _finish(proto, seed, 0, True, states, np.zeros((0, 4), np.int64), 0,
                         set(states.tolist()), 0, False, None)
        record.final_labels = (label,)
        from .verify import check_validity
        record.validity = check_validity(record.final_labels, proto.declared_range,
                                         applicable=proto.info.get("labeling", True))
        return record

    tracing = keep_trace or bool(monitors)
    period = limits.silence_check_period or n
    counts, seen = _census_dicts(states)
    last_out = np.array([apply_output(proto.output, s, proto.p) for s in states.tolist()],
                        dtype=np.int64)
    viol = np.zeros((MAX_VIOLATIONS, 4), dtype=np.int64)
    ctl = np.zeros(C_SIZE, dtype=np.int64)
    ctl[C_WATCH_BELOW] = -1
    if limits.stop_below is not None:
        ctl[C_WATCH_STATE], ctl[C_WATCH_BELOW] = limits.stop_below
    for m in monitors:
        if hasattr(m, "start"):
            m.start(states.copy(), proto)

    sched = Scheduler(seed, n, proto.uses_aux)
    traces = []
    done = 0
    run_chunk, probe, _ = kernels(proto.delta, proto.output, proto.kind)
    silent = bool(probe(proto.active, proto.p, counts, ctl))
    if silent:
        ctl[C_STATUS] = SILENT
    chunk = FIRST_CHUNK
    while ctl[C_STATUS] == RUNNING and done < limits.max_interactions:
        size = min(chunk, limits.max_interactions - done)
        pairs, aux = sched.take(size)
        buf = np.zeros((size, 7), dtype=np.int64) if tracing else _NO_TRACE
        k = run_chunk(proto.active, proto.p, states, pairs, aux, done, period,
                      counts, seen, last_out, viol, buf, ctl)
        if tracing:
            part = buf[:k]
            traces.append(part)
            if monitors:
                changed = part[(part[:, 3] != part[:, 5]) | (part[:, 4] != part[:, 6])]
                for row in changed.tolist():
                    for m in monitors:
                        m.interaction(row[0], row[1], row[2], (row[3], row[4]), (row[5], row[6]))
        done += int(k)
        chunk = min(chunk * 2, MAX_CHUNK)

    status = int(ctl[C_STATUS])
    if status == RUNNING:
        if probe(proto.active, proto.p, counts, ctl):
            status = SILENT
    completed = status == SILENT
    used = int(ctl[C_LAST]) if completed else done
    trace = np.concatenate(traces) if (keep_trace and traces) else (_NO_TRACE.copy() if keep_trace else None)
    record = _finish(proto, seed, used, completed, states, viol, int(ctl[C_NVIOL]),
                     set(seen.keys()), int(ctl[C_DECL]), status == WATCH_STOP, trace)
    for m in monitors:
        if hasattr(m, "finish"):
            m.finish(record)
    return record


def dump_trace(record: RunRecord, proto: ProtocolSpec, path):
    """Write the retained trace as comma-separated lines (see README for columns)."""
    if record.trace is None:
        raise ValueError("run was not traced; pass keep_trace=True")
    with open(path, "w") as fh:
        for row in record.trace.tolist():
            fh.write(",".join([
                str(row[0]), str(row[1]), str(row[2]),
                proto.render(row[3]), proto.render(row[4]),
                proto.render(row[5]), proto.render(row[6]),
            ]) + "\n")
