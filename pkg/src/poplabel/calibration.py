"""Pinned calibration constants and the fixture file format.

A fixture is a small JSON document::

    {"version": 1, "protocol": "broadcast", "n": 1024, "trials": 200,
     "constant": 1.93, "seed": 20240601, ...}

The shipped defaults live in ``poplabel/data/calibration.json``.
"""
from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from pathlib import Path

FIXTURE_VERSION = 1


@lru_cache(maxsize=None)
def _load_pinned():
    text = resources.files("poplabel").joinpath("data/calibration.json").read_text()
    return json.loads(text)


def pinned(name):
    """Shipped value of calibration constant ``name``."""
    consts = _load_pinned()["constants"]
    if name not in consts:
        raise KeyError(f"no pinned calibration constant {name!r}")
    return float(consts[name])


def pinned_fixture(name):
    """Full fixture record stored next to a pinned constant, if any."""
    return _load_pinned().get("fixtures", {}).get(name)


def write_fixture(path, protocol, n, trials, constant, seed, **extra):
    record = {
        "version": FIXTURE_VERSION,
        "protocol": protocol,
        "n": int(n),
        "trials": int(trials),
        "constant": float(constant),
        "seed": int(seed),
    }
    record.update(extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return record


def read_fixture(path):
    record = json.loads(Path(path).read_text())
    if record.get("version") != FIXTURE_VERSION:
        raise ValueError(f"{path}: unsupported fixture version {record.get('version')!r}")
    for key in ("protocol", "n", "trials", "constant", "seed"):
        if key not in record:
            raise ValueError(f"{path}: fixture missing {key!r}")
    return record


# ---------------------------------------------------------------- procedures
# Each procedure runs seeded trials and returns a fixture record (not yet
# written).  Seeds are SeedSequence(seed).spawn(trials).

def _seeds(seed, trials):
    import numpy as np
    return [int(s.generate_state(1, np.uint64)[0]) for s in np.random.SeedSequence(seed).spawn(trials)]


def _quantile(values, q):
    """Nearest-rank quantile: smallest x with at least q of the sample <= x."""
    import math
    s = sorted(values)
    return s[max(0, math.ceil(q * len(s)) - 1)]


def calibrate_broadcast(n=1024, trials=200, seed=1):
    """Completion time of a one-source broadcast in units of n ln n.

    The pinned constant is the 0.99 quantile of the ratio, so that a fixed
    fraction of runs completes within it; the median is recorded too.
    """
    import math
    import statistics
    from .engine import run
    from .primitives import broadcast_protocol
    proto = broadcast_protocol(n)
    scale = n * math.log(n)
    ratios = [run(proto, seed=s).interactions_used / scale for s in _seeds(seed, trials)]
    return {"protocol": "broadcast", "n": n, "trials": trials, "seed": seed,
            "constant": _quantile(ratios, 0.99), "median": statistics.median(ratios),
            "name": "broadcast_c_hat"}


def calibrate_phase(n=4096, trials=100, seed=1):
    """Smallest c_phase whose leader count outlasts the unlabeled majority.

    Runs the [1, 2n] interval protocol with an unreachable threshold and stops
    as soon as fewer than n/4 agents are unlabeled; the leader's own count at
    that moment is what the threshold must cover.  The constant is the 0.99
    quantile of (count + 1) / log2 n.
    """
    import math
    from .engine import RunLimits, run
    from .labeling.interval import T_LEAD, UNL, interval_2n
    proto = interval_2n(n, c_phase=1e5 / math.log2(n) * 10)
    thr = proto.info["threshold"]
    limits = RunLimits(stop_below=(UNL, n // 4))
    counts = []
    for s in _seeds(seed, trials):
        r = run(proto, limits, seed=s)
        lead = [int(x) for x in r.final_states if int(x) >= 0 and int(x) & 7 == T_LEAD]
        if not r.stopped_by_watch or len(lead) != 1:
            raise RuntimeError(f"phase calibration run (seed {s}) did not reach the watch point")
        counts.append((lead[0] >> 3) % (thr + 1))
    q = _quantile(counts, 0.99)
    return {"protocol": "interval-2n", "n": n, "trials": trials, "seed": seed,
            "constant": (q + 1) / math.log2(n), "count_q99": q, "count_max": max(counts),
            "name": "c_phase"}


def calibrate_election(n=256, trials=500, seed=1, grid=None, margin=2.0):
    """Smallest count constant with a unique leader in every trial, times ``margin``."""
    from .engine import run
    from .primitives import election_protocol
    grid = grid or [0.5 * i for i in range(1, 25)]
    seeds = _seeds(seed, trials)
    scanned = []
    for c in grid:
        proto = election_protocol(n, c_elect=c)
        bad = sum(1 for s in seeds if run(proto, seed=s).declarations != 1)
        scanned.append([c, bad])
        if bad == 0:
            return {"protocol": "leader-election", "n": n, "trials": trials, "seed": seed,
                    "constant": c * margin, "smallest_safe": c, "margin": margin,
                    "scan": scanned, "name": "c_elect"}
    raise RuntimeError("no election constant in the grid gave a unique leader in every trial")


PROCEDURES = {"broadcast": calibrate_broadcast, "phase": calibrate_phase, "election": calibrate_election}
