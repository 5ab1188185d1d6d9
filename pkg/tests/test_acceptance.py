"""The eleven acceptance criteria at their stated tolerances.

Every cell is run with seeds derived exactly as in a sweep, summarized into
the sweep CSV format, and written to one acceptance report that the last
check feeds to ``poplabel verify``.  One PASS/FAIL line per criterion is
printed in the terminal summary (see conftest.py) and, when run as a script,
on stdout.
"""
import math
import statistics
import time

import numpy as np
import pytest

from poplabel import Configuration, build, is_silent, run
from poplabel.calibration import pinned
from poplabel.cli import main as cli_main
from poplabel.experiments import (
    CellSummary, ExperimentSpec, TrialResult, cell_key, emit, fit, sweep, trial_seed, write_csv,
)
from poplabel.markov import expected_hitting_time
from poplabel.primitives import broadcast_protocol
from poplabel.verify import birthday_duplicate_probability, state_lower_bound

MASTER = 20240601
RESULTS = {}      # criterion -> (passed, detail)
CELLS = {}        # (protocol, cell items) -> CellSummary
SILENT_SAFE = ("dispenser", "interval-2n", "interval-eps", "single-cycle", "k-cycle")


def _cell(n, **kw):
    c = {"n": n, "epsilon": None, "k": None, "c_phase": None, "leader_mode": None}
    c.update(kw)
    return c


def run_cell(protocol, cell, trials, check=None):
    """Run one cell like a sweep does; ``check(proto, record)`` sees every run."""
    proto = build(protocol, **{k: v for k, v in cell.items() if v is not None})
    key = cell_key(protocol, cell)
    summary = CellSummary.empty(protocol, cell)
    for j in range(trials):
        r = run(proto, seed=trial_seed(MASTER, key, j))
        summary.add(TrialResult(r.seed, r.interactions_used, r.completed, r.census,
                                r.validity.status, r.violation_count, r.declarations))
        if check:
            check(proto, r)
    CELLS[(protocol, tuple(sorted(cell.items())))] = summary
    return summary


def record(num, ok, detail, started):
    RESULTS[num] = (bool(ok), f"{detail} [{time.time() - started:.0f}s]")
    assert ok, detail


# ---------------------------------------------------------------- criteria


def test_c01_single_cycle_correctness():
    t0 = time.time()
    problems = []

    def check(proto, r):
        if not is_silent(Configuration(r.final_states), proto):
            problems.append(f"n={proto.n} seed={r.seed} not silent")
        if sorted(r.final_labels) != list(range(1, proto.n + 1)):
            problems.append(f"n={proto.n} seed={r.seed} not a permutation")

    cells = [run_cell("single-cycle", _cell(n, leader_mode="oracle"), 100, check) for n in (4, 16, 36, 64)]
    for c in cells:
        budget = c.n + 5 * math.sqrt(c.n) + 4
        if c.completed != 100 or c.validity_failures or c.safety_violations or c.census_max > budget:
            problems.append(f"n={c.n}: completed={c.completed} invalid={c.validity_failures} "
                            f"unsafe={c.safety_violations} census={c.census_max}/{budget:.0f}")
    record(1, not problems, "; ".join(problems) or
           "100/100 valid, silent, safe; census " + ", ".join(f"{c.census_max}" for c in cells), t0)


def test_c02_single_cycle_expectation_oracle():
    t0 = time.time()
    exact = expected_hitting_time(build("single-cycle", 4))
    c = run_cell("single-cycle", _cell(4), 100_000)
    ok = abs(c.mean - exact) <= 3 * c.stderr
    record(2, ok, f"mean {c.mean:.3f} vs exact {exact:.3f}, 3se={3 * c.stderr:.3f}", t0)


def test_c03_interval_2n_sweep():
    t0 = time.time()
    ns = (128, 256, 512, 1024, 2048, 4096)
    cells = [run_cell("interval-2n", _cell(n, leader_mode="elected"), 200) for n in ns]
    problems = []
    for c in cells:
        if c.validity_failures or c.safety_violations:
            problems.append(f"n={c.n}: invalid={c.validity_failures} unsafe={c.safety_violations}")
        if c.completion_rate < 0.99:
            problems.append(f"n={c.n}: completion {c.completion_rate}")
    f = fit(cells, "n_log_n")
    ratios = [c.mean / (c.n * math.log(c.n)) for c in cells]
    spread = max(ratios) / min(ratios)
    if f.r2 < 0.98:
        problems.append(f"R2 {f.r2:.4f}")
    if spread > 2:
        problems.append(f"mean/(n ln n) spread {spread:.2f}")
    record(3, not problems, "; ".join(problems) or
           f"R2={f.r2:.5f}, a={f.coefficient:.3f}, ratio spread {spread:.3f}", t0)


def test_c04_epsilon_ratio():
    t0 = time.time()
    lo = run_cell("interval-eps", _cell(1024, epsilon=0.25), 200)
    hi = run_cell("interval-eps", _cell(1024, epsilon=0.5), 200)
    ratio = lo.mean / hi.mean
    problems = []
    if not 1.5 <= ratio <= 2.8:
        problems.append(f"ratio {ratio:.3f}")
    for c in (lo, hi):
        if c.validity_failures or c.safety_violations or c.completed != c.trials:
            problems.append(f"eps={c.epsilon}: invalid={c.validity_failures} unsafe={c.safety_violations}")
    record(4, not problems, "; ".join(problems) or f"ratio {ratio:.3f}, all labels in range", t0)


def test_c05_k_cycle():
    t0 = time.time()
    k1 = run_cell("k-cycle", _cell(256, k=1), 200)
    k4 = run_cell("k-cycle", _cell(256, k=4), 200)
    sep = (k1.mean - k4.mean) / math.hypot(k1.stderr, k4.stderr)
    budget = 256 + 12 * math.sqrt(1024)
    problems = []
    for c in (k1, k4):
        if c.completed != 200 or c.validity_failures or c.safety_violations:
            problems.append(f"k={c.k}: completed={c.completed} invalid={c.validity_failures}")
        if c.census_max > budget:
            problems.append(f"k={c.k}: census {c.census_max} > {budget:.0f}")
    if sep <= 3:
        problems.append(f"separation {sep:.2f} sigma")
    record(5, not problems, "; ".join(problems) or
           f"means {k1.mean:.4g} (k=1) vs {k4.mean:.4g} (k=4), {sep:.1f} sigma; census {k1.census_max}, {k4.census_max}", t0)


def test_c06_pool_lower_bound():
    t0 = time.time()
    d = run_cell("dispenser", _cell(32), 500)
    s = run_cell("single-cycle", _cell(32, generalized=True), 500)
    bound = 32 ** 2
    ok = all(c.mean >= bound - 3 * c.stderr for c in (d, s))
    record(6, ok, f"dispenser {d.mean:.1f}, single-cycle {s.mean:.1f} vs n^2 = {bound}", t0)


def test_c07_state_lower_bound():
    t0 = time.time()
    assert CELLS, "run the other criteria first"
    problems, checked = [], 0
    for (protocol, _), c in CELLS.items():
        if protocol not in SILENT_SAFE or c.n < 2:
            continue
        checked += 1
        if c.census_min < state_lower_bound(c.n):
            problems.append(f"{protocol} n={c.n}: census {c.census_min} < {state_lower_bound(c.n):.2f}")
        if protocol == "single-cycle" and c.census_max - state_lower_bound(c.n) > 6 * math.sqrt(c.n):
            problems.append(f"single-cycle n={c.n}: slack {c.census_max - state_lower_bound(c.n):.1f}")
    record(7, not problems and checked, "; ".join(problems) or f"{checked} cells consistent", t0)


def test_c08_broadcast_calibration():
    t0 = time.time()
    c_hat = pinned("broadcast_c_hat")
    problems, medians = [], []
    for n in (256, 1024, 4096):
        proto = broadcast_protocol(n)
        key = cell_key("broadcast", _cell(n))
        xs = [run(proto, seed=trial_seed(MASTER, key, j)).interactions_used for j in range(200)]
        scale = n * math.log(n)
        within = sum(x <= c_hat * scale for x in xs) / len(xs)
        medians.append(statistics.median(xs) / scale)
        if within < 0.95:
            problems.append(f"n={n}: only {within:.3f} within c_hat")
    spread = (max(medians) - min(medians)) / min(medians)
    if spread > 0.25:
        problems.append(f"median ratio spread {spread:.3f}")
    record(8, not problems, "; ".join(problems) or
           f"c_hat={c_hat}, medians " + ", ".join(f"{m:.3f}" for m in medians) + f", spread {spread:.3f}", t0)


def test_c09_safety_contrast():
    t0 = time.time()
    witness = run(build("naive", 3), seed=0)
    others = {p: 0 for p in ("dispenser", "randomized-cube", "interval-2n", "interval-eps",
                             "single-cycle", "single-cycle-diagonal", "k-cycle")}
    for (protocol, _), c in CELLS.items():
        if protocol in others:
            others[protocol] += c.safety_violations
    # cover the two protocols no other criterion runs
    for protocol, cell in (("single-cycle-diagonal", _cell(64)), ("randomized-cube", _cell(64))):
        others[protocol] += run_cell(protocol, cell, 50).safety_violations
    bad = {p: v for p, v in others.items() if v}
    ok = witness.violation_count > 0 and not bad
    record(9, ok, f"naive n=3 seed 0 violation at step {witness.first_violation_step}; "
           f"others: {bad or 'zero violations'}", t0)


def test_c10_randomized_collisions():
    t0 = time.time()
    c = run_cell("randomized-cube", _cell(32), 1000)
    p = birthday_duplicate_probability(32, 32 ** 3)
    freq = c.validity_failures / c.trials
    tol = 3 * math.sqrt(p * (1 - p) / c.trials)
    record(10, abs(freq - p) <= tol, f"duplicate rate {freq:.4f} vs {p:.4f} +- {tol:.4f}", t0)


def test_c11_determinism(tmp_path):
    t0 = time.time()
    cell = _cell(128, leader_mode="elected")
    first = CELLS.get(("interval-2n", tuple(sorted(cell.items()))))
    spec = ExperimentSpec("interval-2n", {"n": [128], "leader_mode": ["elected"]}, 200, master_seed=MASTER)
    a = write_csv(sweep(spec), tmp_path / "a.csv").read_bytes()
    b = write_csv(sweep(spec), tmp_path / "b.csv").read_bytes()
    same = a == b
    if first is not None:
        same = same and write_csv([first], tmp_path / "c.csv").read_bytes() == a
    record(11, same, "rerun rows bit-identical" if same else "rows differ", t0)


def test_acceptance_report_verifies(tmp_path, capsys):
    paths = emit(list(CELLS.values()), [], tmp_path, stem="acceptance")
    assert paths
    code = cli_main(["verify", "--out", str(tmp_path), "--stem", "acceptance"])
    out, err = capsys.readouterr()
    assert code == 0, err


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
