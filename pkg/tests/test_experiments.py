import json
import math
import os

import pytest
from hypothesis import given, settings, strategies as st

from poplabel.experiments import (
    CSV_COLUMNS, CellSummary, EmitError, ExperimentSpec, SpecError, TrialResult, cell_key, emit,
    fit, read_csv, sweep, trial_seed, write_csv,
)
from poplabel.protocol import ProtocolError


def _spec(**kw):
    base = dict(protocol="single-cycle", grid={"n": [4, 16]}, trials=10, master_seed=1)
    base.update(kw)
    return ExperimentSpec(**base)


def test_sweep_fixture():
    cells = sweep(_spec())
    assert [c.n for c in cells] == [4, 16]
    assert all(c.completion_rate == 1.0 for c in cells)
    # pinned after the first run
    assert cells[0].mean == 55.9 and cells[1].mean == 6955.9
    assert cells[1].max == 7632 and cells[0].census_max == 13


def test_trials_zero():
    assert sweep(_spec(trials=0)) == []


def test_rerun_identical():
    a = [c.to_dict() for c in sweep(_spec())]
    b = [c.to_dict() for c in sweep(_spec())]
    assert a == b


def test_parallel_equals_serial():
    spec = _spec(grid={"n": [4, 9]}, trials=12)
    a = [c.to_dict() for c in sweep(spec, jobs=1)]
    b = [c.to_dict() for c in sweep(spec, jobs=2)]
    assert a == b


def test_rejected_before_running():
    with pytest.raises(ProtocolError):
        ExperimentSpec("nope", {"n": [4]}, 1)
    with pytest.raises(ProtocolError):
        sweep(_spec(grid={"n": [4, 5]}))  # 5 is not square
    with pytest.raises(SpecError):
        _spec(grid={"n": [4], "k": [2]}).cells()
    with pytest.raises(SpecError):
        _spec(grid={"m": [1], "n": [4]})
    with pytest.raises(SpecError):
        _spec(trials=-1)


def test_limit_exceeded_recorded():
    cells = sweep(_spec(grid={"n": [36]}, trials=3, max_interactions=100))
    assert cells[0].completed == 0 and cells[0].trials == 3
    assert cells[0].mean is None


def test_spec_from_dict_and_file(tmp_path):
    d = {"protocol": "interval-eps", "grid": {"n": [64], "epsilon": [0.25, 0.5]}, "trials": 2}
    p = tmp_path / "s.json"
    p.write_text(json.dumps(d))
    spec = ExperimentSpec.load(p)
    assert [c["epsilon"] for c in spec.cells()] == [0.25, 0.5]
    flat = ExperimentSpec.from_dict({"protocol": "dispenser", "n": 8, "trials": 1})
    assert flat.cells() == [{"n": 8, "epsilon": None, "k": None, "c_phase": None, "leader_mode": None}]
    with pytest.raises(SpecError):
        ExperimentSpec.from_dict({"protocol": "dispenser", "n": 8, "trials": 1, "bogus": 2})


def test_grid_order():
    spec = ExperimentSpec("interval-eps", {"n": [32, 64], "epsilon": [0.5, 0.25]}, 1)
    assert [(c["n"], c["epsilon"]) for c in spec.cells()] == [(32, 0.5), (32, 0.25), (64, 0.5), (64, 0.25)]


def test_seed_derivation():
    key = cell_key("dispenser", {"n": 8})
    seeds = [trial_seed(1, key, j) for j in range(50)]
    assert len(set(seeds)) == 50
    assert all(a != b for a, b in zip(seeds, [trial_seed(2, key, j) for j in range(50)]))
    # a cell's trials do not depend on where the cell sits in the grid
    a = sweep(ExperimentSpec("dispenser", {"n": [8, 12]}, 5, master_seed=3))
    b = sweep(ExperimentSpec("dispenser", {"n": [12, 20, 8]}, 5, master_seed=3))
    assert a[0].to_dict() == b[2].to_dict() and a[1].to_dict() == b[0].to_dict()


def _trial(x, census=10, ok=True, viol=0, done=True):
    return TrialResult(0, x, done, census, "ok" if ok else "duplicate", viol, None)


@settings(max_examples=50)
@given(st.lists(st.tuples(st.integers(1, 10 ** 9), st.integers(1, 100), st.booleans(), st.booleans()),
                min_size=1, max_size=40), st.randoms())
def test_merge_associative(trials, rnd):
    cell = {"n": 4, "epsilon": None, "k": None, "c_phase": None, "leader_mode": None}
    whole = CellSummary.empty("x", cell)
    for x, c, ok, done in trials:
        whole.add(_trial(x, c, ok, done=done))
    items = list(trials)
    rnd.shuffle(items)
    cut = rnd.randint(0, len(items))
    parts = []
    for chunk in (items[:cut], items[cut:]):
        s = CellSummary.empty("x", cell)
        for x, c, ok, done in chunk:
            s.add(_trial(x, c, ok, done=done))
        parts.append(s)
    m1 = parts[0].merge(parts[1])
    m2 = parts[1].merge(parts[0])
    assert m1.to_dict() == m2.to_dict() == whole.to_dict()


def test_stats_recomputable_from_records():
    cells = sweep(ExperimentSpec("dispenser", {"n": [10]}, 30, master_seed=5, retain=True))
    c = cells[0]
    xs = [t.interactions for t in c.records if t.completed]
    mean = sum(xs) / len(xs)
    std = math.sqrt(sum((x - mean) ** 2 for x in xs) / (len(xs) - 1))
    assert c.mean == pytest.approx(mean) and c.std == pytest.approx(std)
    assert c.max == max(xs) and c.census_max == max(t.census for t in c.records)


def test_fit_exact_recovery():
    cells = [{"n": n, "mean_interactions": 2 * n * math.log(n)} for n in (16, 64, 256, 1024)]
    res = fit(cells, "n_log_n")
    assert res.coefficient == pytest.approx(2.0, abs=1e-9)
    assert res.r2 == pytest.approx(1.0)
    assert res.formula == "a*n*ln(n)"
    assert len(res.residuals) == 4
    assert all(abs(r["residual"]) < 1e-6 for r in res.residuals)


def test_fit_eps_model():
    cells = [{"n": 1024, "epsilon": e, "mean_interactions": 3 * 1024 * math.log(1024) / e}
             for e in (0.1, 0.25, 0.5)]
    assert fit(cells, "n_log_n_over_eps").coefficient == pytest.approx(3.0)


def test_fit_needs_three_cells():
    with pytest.raises(SpecError):
        fit([{"n": 4, "mean_interactions": 1.0}, {"n": 8, "mean_interactions": 2.0}], "n2")
    with pytest.raises(ProtocolError):
        fit([], "n4")


def test_single_cycle_cubic_beats_quadratic():
    cells = sweep(ExperimentSpec("single-cycle", {"n": [16, 36, 64]}, 20, master_seed=2))
    assert fit(cells, "n3").r2 > fit(cells, "n2").r2


def test_emit_empty(tmp_path):
    paths = emit([], [], tmp_path)
    assert (tmp_path / "sweep.csv").read_text().strip() == ",".join(CSV_COLUMNS)
    assert len(paths) == 2


def test_emit_two_cells_one_fit(tmp_path):
    cells = sweep(ExperimentSpec("dispenser", {"n": [8, 16, 32]}, 4, master_seed=1))[:2]
    f = fit([{"n": n, "mean_interactions": n * n} for n in (2, 3, 4)], "n2")
    f.residuals = f.residuals[:2]
    paths = emit(cells, [f], tmp_path, stem="t")
    rows = read_csv(tmp_path / "t.csv")
    assert len(rows) == 2 and list(rows[0]) == list(CSV_COLUMNS)
    plot = (tmp_path / "t_plot_n2.csv").read_text().splitlines()
    assert plot[0] == "predictor,measured,fitted" and len(plot) == 3
    report = json.loads((tmp_path / "t.json").read_text())
    assert len(report["cells"]) == 2 and "census_min" in report["cells"][0]
    assert len(paths) == 3


def test_emit_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(EmitError) as e:
        emit([], [], blocker / "sub")
    assert "file" in str(e.value)
    if os.geteuid() != 0:
        ro = tmp_path / "ro"
        ro.mkdir()
        ro.chmod(0o500)
        with pytest.raises(EmitError):
            write_csv([], ro / "x.csv")


def test_csv_rows_bit_identical(tmp_path):
    spec = ExperimentSpec("interval-2n", {"n": [64, 128]}, 10, master_seed=9)
    write_csv(sweep(spec), tmp_path / "a.csv")
    write_csv(sweep(spec), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
