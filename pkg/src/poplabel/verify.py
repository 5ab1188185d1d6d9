"""Validity and safety checks, lower-bound calculators and trace monitors."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

# ---------------------------------------------------------------- validity

OK = "ok"
DUPLICATE = "duplicate"
OUT_OF_RANGE = "out-of-range"
MISSING = "missing"
INCOMPLETE = "incomplete"
NOT_APPLICABLE = "n/a"


@dataclass(frozen=True)
class Validity:
    status: str
    witness: tuple = ()

    @property
    def ok(self):
        return self.status == OK

    def __str__(self):
        if not self.witness:
            return self.status
        return f"{self.status}({','.join(str(w) for w in self.witness)})"


def check_validity(final_labels, declared_range, completed=True, applicable=True) -> Validity:
    """ok iff every label is defined, labels are pairwise distinct and lie in [1, R].

    ``declared_range=None`` skips the range test.  The first failing category
    is reported (missing, then duplicate, then out-of-range) with witnesses.
    """
    if not applicable:
        return Validity(NOT_APPLICABLE)
    if not completed:
        return Validity(INCOMPLETE)
    labels = list(final_labels)
    missing = [i for i, v in enumerate(labels) if v is None]
    if missing:
        return Validity(MISSING, tuple(missing[:8]))
    seen, dups = set(), []
    for v in labels:
        if v in seen and v not in dups:
            dups.append(v)
        seen.add(v)
    if dups:
        return Validity(DUPLICATE, tuple(sorted(dups)[:8]))
    if declared_range is not None:
        bad = sorted(v for v in seen if not 1 <= v <= declared_range)
        if bad:
            return Validity(OUT_OF_RANGE, tuple(bad[:8]))
    return Validity(OK)


def check_distinct(labels):
    """True iff the defined labels are pairwise distinct (undefined ones ignored)."""
    got = [v for v in labels if v is not None]
    return len(got) == len(set(got))


# ---------------------------------------------------------------- safety


@dataclass
class SafetyLedger:
    last: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations


def observe(ledger: SafetyLedger, agent, new_output, step=None) -> SafetyLedger:
    """Record ``agent``'s output after a state change; a defined label that changes is a violation."""
    old = ledger.last.get(agent)
    if old is not None and new_output != old:
        ledger.violations.append((step, agent, old, new_output))
    ledger.last[agent] = new_output
    return ledger


class SafetyMonitor:
    """Engine monitor that rebuilds the safety ledger from state changes."""

    def __init__(self):
        self.ledger = SafetyLedger()

    def start(self, states, proto):
        self.proto = proto
        for i, s in enumerate(states.tolist()):
            self.ledger.last[i] = proto.label_of(s)

    def interaction(self, step, i, j, before, after):
        for agent, old, new in ((i, before[0], after[0]), (j, before[1], after[1])):
            if old != new:
                observe(self.ledger, agent, self.proto.label_of(new), step)


# ---------------------------------------------------------------- trace monitors


class MonitorFailure(AssertionError):
    pass


class PoolMonitor:
    """Checks the pool axioms after every state change.

    ``pools(states) -> list of sets`` gives each agent's pool for the whole
    configuration.  Checked: pools and assigned labels pairwise disjoint and
    inside [1, R]; a newly assigned label comes from the two interacting
    agents' pools; interacting agents only repartition what they held.
    """

    def __init__(self, pools, strict=True):
        self.pools_fn = pools
        self.strict = strict
        self.failures = []
        self.checked = 0

    def start(self, states, proto):
        self.proto = proto
        self.states = [int(s) for s in states.tolist()]
        self.pools = self.pools_fn(self.states)
        self._check_partition(0)

    def _fail(self, msg):
        self.failures.append(msg)
        if self.strict:
            raise MonitorFailure(msg)

    def _check_partition(self, step):
        R = self.proto.declared_range
        owned = set()
        for agent, pool in enumerate(self.pools):
            lab = self.proto.label_of(self.states[agent])
            items = set(pool) | ({lab} if lab is not None else set())
            if items & owned:
                self._fail(f"step {step}: agent {agent} overlaps others on {sorted(items & owned)[:5]}")
            owned |= items
        if owned and (min(owned) < 1 or max(owned) > R):
            self._fail(f"step {step}: labels outside [1, {R}]")

    def interaction(self, step, i, j, before, after):
        self.checked += 1
        old_pools = self.pools
        self.states[i], self.states[j] = after
        self.pools = self.pools_fn(self.states)
        held = set(old_pools[i]) | set(old_pools[j])
        for agent, old, new in ((i, before[0], after[0]), (j, before[1], after[1])):
            lo, ln = self.proto.label_of(old), self.proto.label_of(new)
            if ln is not None and lo is None and ln not in held:
                self._fail(f"step {step}: agent {agent} got label {ln} from outside the pools")
            if lo is not None and ln != lo:
                self._fail(f"step {step}: agent {agent} changed label {lo} -> {ln}")
        others = [a for a in range(len(self.states)) if a not in (i, j)]
        for a in others:
            if set(self.pools[a]) != set(old_pools[a]):
                self._fail(f"step {step}: pool of bystander {a} changed")
        new_held = set(self.pools[i]) | set(self.pools[j])
        if not new_held <= held:
            self._fail(f"step {step}: pools grew by {sorted(new_held - held)[:5]}")
        self._check_partition(step)


class DisjointnessMonitor:
    """Interval protocols: assigned labels and held intervals stay pairwise disjoint."""

    def __init__(self, claims, strict=True):
        self.claims_fn = claims
        self.strict = strict
        self.failures = []

    def start(self, states, proto):
        self.states = [int(s) for s in states.tolist()]
        self.bound = 2 * proto.n
        self._check(0)

    def _check(self, step):
        seen = set()
        for agent, s in enumerate(self.states):
            c = set(self.claims_fn(s))
            if c & seen or any(not 1 <= x <= self.bound for x in c):
                msg = f"step {step}: agent {agent} claims overlap or leave [1, {self.bound}]"
                self.failures.append(msg)
                if self.strict:
                    raise MonitorFailure(msg)
            seen |= c

    def interaction(self, step, i, j, before, after):
        self.states[i], self.states[j] = after
        self._check(step)


# ---------------------------------------------------------------- bounds


def pool_bound(n, r):
    """Expected interactions any pool protocol needs for range [1, n + r]."""
    return n * n / (r + 1)


def state_lower_bound(n):
    """States needed by a silent and safe labeling protocol with range [1, n]."""
    return n + math.sqrt((n - 1) / 2) - 1


def silent_safe_interaction_bound(n, t):
    """Expected interactions of a silent, safe protocol using n + t states (t < n)."""
    return n * n / (t + 1)


def mean_stderr(values):
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        return float("nan"), float("nan")
    if x.size == 1:
        return float(x[0]), float("nan")
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


@dataclass
class BoundReport:
    protocol: str
    n: int
    range_slack: Optional[int]
    state_slack: Optional[int]
    pool_bound: Optional[float]
    state_lower_bound: float
    interaction_lower_bound_silent_safe: Optional[float]
    census_min: Optional[int]
    census_max: Optional[int]
    state_budget: Optional[int]
    mean_interactions: Optional[float]
    stderr: Optional[float]
    trials: int
    verdicts: dict

    @property
    def consistent(self):
        return all(v != "inconsistent" for v in self.verdicts.values())

    def to_dict(self):
        d = dict(self.__dict__)
        d["consistent"] = self.consistent
        return d


def _lower_verdict(mean, se, bound, sigmas):
    if mean >= bound:
        return "consistent"
    if not math.isnan(se) and mean + sigmas * se >= bound:
        return "consistent-within-noise"
    return "inconsistent"


def check_bounds(records, meta, sigmas=3.0) -> BoundReport:
    """Compare a batch of runs of one protocol and n against the lower bounds.

    ``meta`` is :meth:`ProtocolSpec.metadata`.  Interaction verdicts need at
    least one completed run; they are omitted otherwise.
    """
    records = list(records)
    done = [x for x in records if x.completed]
    censuses = [x.census for x in records]
    mean, se = mean_stderr([x.interactions_used for x in done]) if done else (None, None)
    return bounds_from_stats(
        meta, min(censuses) if censuses else None, max(censuses) if censuses else None,
        mean, se, len(records), sigmas)


def bounds_from_stats(meta, cmin, cmax, mean, se, trials, sigmas=3.0) -> BoundReport:
    """Same verdicts as :func:`check_bounds`, from aggregate statistics."""
    n = meta["n"]
    r = meta.get("range_slack")
    t = cmax - n if cmax is not None else None
    verdicts = {}
    pb = pool_bound(n, r) if (meta.get("pool") and r is not None) else None
    slb = state_lower_bound(n)
    ssb = silent_safe_interaction_bound(n, t) if (meta.get("silent_safe") and t is not None and 0 <= t < n) else None
    if meta.get("silent_safe") and cmin is not None and n >= 2:
        verdicts["state_lower_bound"] = "consistent" if cmin >= slb else "inconsistent"
    if meta.get("state_budget") is not None and cmax is not None and meta.get("leader_mode", "oracle") == "oracle":
        verdicts["state_budget"] = "consistent" if cmax <= meta["state_budget"] else "inconsistent"
    if mean is not None and n >= 2:
        if se is None:
            se = 0.0
        if pb is not None:
            verdicts["pool_bound"] = _lower_verdict(mean, se, pb, sigmas)
        if ssb is not None:
            verdicts["silent_safe_interactions"] = _lower_verdict(mean, se, ssb, sigmas)
    return BoundReport(
        protocol=meta["name"], n=n, range_slack=r, state_slack=t, pool_bound=pb,
        state_lower_bound=slb, interaction_lower_bound_silent_safe=ssb,
        census_min=cmin, census_max=cmax, state_budget=meta.get("state_budget"),
        mean_interactions=mean, stderr=se, trials=trials, verdicts=verdicts,
    )


# ---------------------------------------------------------------- closed forms


def harmonic(k):
    return sum(1.0 / i for i in range(1, k + 1))


def broadcast_expectation(n, sources=1):
    """Expected interactions for one-way broadcast from ``sources`` informed agents."""
    return sum(n * (n - 1) / (2 * i * (n - i)) for i in range(sources, n))


def dispenser_expectation(n):
    """Leader meets each of the remaining free agents as initiator."""
    return sum(n * (n - 1) / j for j in range(1, n))


def single_cycle_expectation(n):
    """Oracle leader: Step 0, then n - 2 rounds of (C1, C2, C3) with ordered rules."""
    if n <= 1:
        return 0.0
    pairs = n * (n - 1)
    return n + sum(pairs / f + 2 * pairs for f in range(1, n - 1))


def birthday_duplicate_probability(n, R):
    """Probability that n independent uniform draws from [1, R] are not all distinct."""
    prob = 1.0
    for i in range(n):
        prob *= 1 - i / R
    return 1 - prob
