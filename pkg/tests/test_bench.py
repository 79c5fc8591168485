import csv
import io
import math

import numpy as np
import pytest

from mpcsbl import bench
from mpcsbl.bench import (
    AGGREGATE_HEADER,
    ExperimentPlan,
    aggregate_csv,
    build_tasks,
    child_seed,
    mix64,
    nmse,
    run_plan,
    spec_for,
)
from mpcsbl.datagen import GenSpec
from mpcsbl.model import NumericalError

BASE = GenSpec(m=10, n=20, l=2, k=4, num_blocks=2)


def small_plan(**kw):
    args = dict(kind="ratio_sweep", base=BASE, sweep_values=(2, 3),
                betas=(0.5, 1.0), trials=3, max_iter=60)
    args.update(kw)
    return ExperimentPlan(**args)


def test_nmse_examples():
    assert nmse([[1.0, 0.0]], [[1.0, 0.0]]) == 0.0
    assert nmse([[0.0, 0.0]], [[3.0, 4.0]]) == 1.0
    assert nmse([[2.0], [0.0]], [[1.0], [1.0]]) == 1.0
    with pytest.raises(ValueError):
        nmse([[1.0]], [[0.0]])


def test_mix64_reference_values():
    # splitmix64 outputs for state 0 and 1 after one increment
    assert mix64(0) == 0xE220A8397B1DCDAF
    assert mix64(0x9E3779B97F4A7C15) == 0x6E789E6AA1B965F4


def test_child_seed_composition():
    h = mix64(7)
    for c in (1, 2, 0, 5):
        h = mix64(h ^ c)
    assert child_seed(7, 1, 2, 0, 5) == h


def test_child_seeds_distinct():
    seeds = {child_seed(0, i, j, k, t) for i in range(5) for j in range(3)
             for k in range(2) for t in range(100)}
    assert len(seeds) == 5 * 3 * 2 * 100


def test_task_cardinality_and_order():
    plan = small_plan()
    tasks = build_tasks(plan)
    assert len(tasks) == plan.trials * 2 * (2 + 1)
    keys = [(t.sweep_value, -1 if t.beta is None else t.beta, t.method) for t in tasks]
    assert keys == sorted(keys)
    assert [t.index for t in tasks] == list(range(len(tasks)))


def test_spec_for_each_kind():
    assert spec_for(small_plan(), 3, 11).n == 30
    assert spec_for(small_plan(kind="sparsity_sweep", sweep_values=(4, 6)), 6, 1).k == 6
    assert spec_for(small_plan(kind="snr_sweep", sweep_values=(5, 10)), 10, 1).snr_db == 10.0


@pytest.mark.parametrize("bad", [dict(trials=0), dict(sweep_values=(3, 2)),
                                 dict(betas=(1.5,)), dict(methods=("lasso",)),
                                 dict(noise="maybe"), dict(kind="nope")])
def test_plan_validation(bad):
    with pytest.raises(ValueError):
        small_plan(**bad)


def test_run_plan_table_and_csv():
    result = run_plan(small_plan())
    assert len(result.records) == 18
    for row in result.table:
        recs = [r for r in result.records if r.sweep_value == row.sweep_value
                and r.beta == row.beta and r.method == row.method]
        assert row.trials == len(recs) == 3
        assert row.success_rate == sum(r.success for r in recs) / 3
        assert row.mean_nmse == pytest.approx(np.mean([r.nmse for r in recs]))
    rows = list(csv.reader(io.StringIO(aggregate_csv(result))))
    assert rows[0] == AGGREGATE_HEADER
    assert len(rows) == 1 + 2 * 3
    msbl_rows = [r for r in rows[1:] if r[2] == "msbl"]
    assert all(r[1] == "" for r in msbl_rows)
    assert result.cell(2, "mpcsbl", 1.0).trials == 3


def test_failed_trial_is_recorded(monkeypatch):
    def boom(inst, cfg):
        raise NumericalError("not PD", iteration=3)

    monkeypatch.setattr(bench, "run_em", boom)
    result = run_plan(small_plan(methods=("mpcsbl",), sweep_values=(2,), betas=(1.0,)))
    assert all(math.isinf(r.nmse) and not r.success for r in result.records)
    assert result.table[0].success_rate == 0.0


def test_worker_count_does_not_change_output():
    plan = small_plan()
    one = aggregate_csv(run_plan(plan, workers=1))
    two = aggregate_csv(run_plan(plan, workers=2))
    assert one == two


def test_learn_noise_mode_runs():
    plan = small_plan(kind="snr_sweep", sweep_values=(20.0,), noise="learn",
                      betas=(1.0,))
    result = run_plan(plan)
    assert all(np.isfinite(r.nmse) for r in result.records)
