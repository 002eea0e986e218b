import math

import numpy as np
import pytest

from mems_quench import ensemble
from mems_quench.ensemble import (
    WORKERS_ENV,
    is_monotone,
    run_ensemble,
    sweep_lambda,
    delta_sensitivity,
    transition_midpoint,
    worker_count,
    write_table_csv,
)
from mems_quench.fem import Grid1D, ModelSpec, run_block
from mems_quench.noise import derive_seed

G = Grid1D(30)
# deterministic quench near t = 0.31, so noise splits the ensemble
MID = ModelSpec(lam=2.0, kappa=0.5)


def _fields(s):
    return (s.N_R, s.quench_count, s.nonfinite_count, s.mean_Tq, s.var_Tq)


def test_unforced_ensemble_never_quenches():
    s = run_ensemble(ModelSpec(lam=0.0, kappa=0.0), G, 100, 1, 1.0, 10, 3, workers=1)
    assert s.quench_count == 0 and s.mean_Tq is None and s.var_Tq is None
    assert s.quench_fraction == 0.0


def test_statistics_need_enough_quenches():
    s = run_ensemble(ModelSpec(lam=3.0), G, 300, 1, 0.3, 1, 0, workers=1)
    assert s.quench_count == 1
    assert s.mean_Tq is not None and s.var_Tq is None


def test_summary_statistics_are_conditional():
    s = run_ensemble(MID, G, 310, 1, 0.31, 200, 11, workers=1)
    assert 0 < s.quench_count < 200
    times = s.T_q[~np.isnan(s.T_q)]
    assert times.size == s.quench_count
    assert s.mean_Tq == pytest.approx(times.mean())
    assert s.var_Tq == pytest.approx(np.var(times, ddof=1))
    assert 0 < s.mean_Tq <= s.T and s.var_Tq >= 0


def test_worker_count_does_not_change_summary(monkeypatch):
    monkeypatch.setattr(ensemble, "BLOCK_SIZE", 40)
    a = run_ensemble(MID, G, 310, 1, 0.31, 130, 5, workers=1)
    b = run_ensemble(MID, G, 310, 1, 0.31, 130, 5, workers=3)
    assert _fields(a) == _fields(b)
    np.testing.assert_array_equal(a.T_q, b.T_q)


def test_block_size_does_not_change_summary(monkeypatch):
    a = run_ensemble(MID, G, 310, 1, 0.31, 60, 5, workers=1)
    monkeypatch.setattr(ensemble, "BLOCK_SIZE", 7)
    b = run_ensemble(MID, G, 310, 1, 0.31, 60, 5, workers=1)
    np.testing.assert_array_equal(a.T_q, b.T_q)


def test_realization_i_uses_derived_seed():
    s = run_ensemble(MID, G, 310, 1, 0.31, 12, 9, workers=1)
    direct = run_block(MID, G, 310, 1, 0.31, [derive_seed(9, i) for i in range(12)])
    np.testing.assert_array_equal(s.T_q, direct.T_q)


def test_rerun_is_identical():
    a = run_ensemble(MID, G, 310, 1, 0.31, 50, 21, workers=1)
    b = run_ensemble(MID, G, 310, 1, 0.31, 50, 21, workers=1)
    assert _fields(a) == _fields(b)


def test_different_seed_is_inside_binomial_bracket():
    a = run_ensemble(MID, G, 310, 1, 0.31, 400, 100, workers=1)
    b = run_ensemble(MID, G, 310, 1, 0.31, 400, 200, workers=1)
    p = a.quench_fraction
    assert 0.05 < p < 0.95
    assert abs(b.quench_fraction - p) <= 4 * math.sqrt(p * (1 - p) / a.N_R)


def test_sweep_offsets_master_seed_per_lambda():
    out = sweep_lambda(MID, [1.8, 2.0, 2.4], G, 310, 1, 0.31, 30, 40, workers=1)
    assert [s.master_seed for s in out] == [40, 41, 42]
    assert [s.lam for s in out] == [1.8, 2.0, 2.4]
    again = run_ensemble(MID.replace(lam=2.0), G, 310, 1, 0.31, 30, 41, workers=1)
    assert _fields(again) == _fields(out[1])
    with pytest.raises(ValueError):
        sweep_lambda(MID, [], G, 10, 1, 0.1, 1, 0)


def test_sweep_is_monotone_in_lambda():
    out = sweep_lambda(MID, [1.0, 1.8, 2.0, 2.2, 3.0], G, 310, 1, 0.31, 200, 7, workers=1)
    assert is_monotone(out)
    assert out[0].quench_count == 0 and out[-1].quench_count == 200


def test_delta_sensitivity_reuses_seeds():
    out = delta_sensitivity(MID, [0.05, 0.01, 0.002], G, 310, 1, 0.31, 100, 3, workers=1)
    assert all(s.master_seed == 3 for s in out)
    assert [s.spec.quench_delta for s in out] == [0.05, 0.01, 0.002]
    # a lower threshold is reached no later on every path
    counts = [s.quench_count for s in out]
    assert counts == sorted(counts, reverse=True)


def _fake(counts, n=1000):
    return [ensemble.McSummary(lam=float(i), N_R=n, quench_count=c, nonfinite_count=0,
                               mean_Tq=None, var_Tq=None, T=1.0, master_seed=0, spec=None,
                               grid=None, N=1, m=1) for i, c in enumerate(counts)]


def test_is_monotone_pooled_tolerance():
    assert is_monotone(_fake([0, 85, 594, 877, 1000]))
    assert is_monotone(_fake([500, 470, 520]))
    assert not is_monotone(_fake([500, 400, 900]))


def test_transition_midpoint():
    assert transition_midpoint([0.6, 0.7, 0.8], [0.0, 0.4, 0.9]) == pytest.approx(0.72)
    assert transition_midpoint([0.6, 0.7], [0.5, 0.9]) is None
    assert transition_midpoint([0.6, 0.7], [0.2, 0.3]) is None


def test_standard_error():
    s = _fake([250], n=1000)[0]
    assert s.standard_error == pytest.approx(math.sqrt(0.25 * 0.75 / 1000))


def test_worker_env(monkeypatch):
    monkeypatch.delenv(WORKERS_ENV, raising=False)
    assert worker_count() == 1
    monkeypatch.setenv(WORKERS_ENV, "4")
    assert worker_count() == 4
    for bad in ("zero", "0"):
        monkeypatch.setenv(WORKERS_ENV, bad)
        with pytest.raises(ValueError):
            worker_count()


def test_validation():
    with pytest.raises(ValueError):
        run_ensemble(MID, G, 10, 1, 0.1, 0, 0)


def test_table_csv(tmp_path):
    out = tmp_path / "t.csv"
    s = run_ensemble(MID, G, 310, 1, 0.31, 20, 1, workers=1)
    write_table_csv(out, [s, _fake([0])[0]], header=["seed: 1"])
    lines = out.read_text().splitlines()
    assert lines[0] == "# seed: 1"
    assert lines[1] == "lambda,N_R,quench_count,mean_Tq,var_Tq,seed"
    cols = lines[2].split(",")
    assert int(cols[2]) == s.quench_count and float(cols[3]) == s.mean_Tq
    assert lines[3].split(",")[3:5] == ["", ""]
