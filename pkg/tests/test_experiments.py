import numpy as np
import pytest

from paraopt import InvalidParameterError
from paraopt import experiments as ex


def test_table31_all_entries_match():
    result = ex.table31()
    assert result.passed
    assert len(result.checks) == 36
    # the bulk of the table agrees at 1e-3 relative; entries printed with
    # fewer digits only need their print-rounding allowance
    strict = sum(abs(c.value - c.expected) <= 1e-3 * abs(c.expected)
                 for c in result.checks)
    assert strict >= 24
    art = result.artifact("table31")
    assert len(art.rows) == 6
    assert art.columns[0] == "sigma"


@pytest.mark.parametrize("mode", ex.SWEEP_MODES)
def test_sweeps_complete_sorted_and_bounded(mode):
    result = ex.scalar_sweeps(mode)
    rows = result.artifact(f"sweep_{mode}").rows
    keys = [row[0] for row in rows]
    assert keys == sorted(keys)
    for row in rows:
        assert len(row) == len(result.artifact(f"sweep_{mode}").columns)
        assert all(np.isfinite(v) for v in row)
        rho, rho_bound = row[7], row[8]
        assert rho <= rho_bound * (1 + 1e-9) + 1e-12


def test_sweep_scalability_bounded_in_L():
    rows = ex.scalar_sweeps("scal_fixed_T").artifact("sweep_scal_fixed_T").rows
    rhos = [row[7] for row in rows]
    bound = rows[0][9]
    assert max(rhos) <= bound
    rows = ex.scalar_sweeps("scal_fixed_DT").artifact("sweep_scal_fixed_DT").rows
    assert max(row[7] for row in rows) <= rows[0][9]


def test_sweep_vary_fine_approaches_limit_monotonically():
    from paraopt import linear_analysis as la

    rows = ex.scalar_sweeps("vary_fine").artifact("sweep_vary_fine").rows
    rho_limit, _ = la.analysis_point(-16.0, 1.0, 10, 0.1, 1e-4,
                                     1e-4 / 2 ** 20)
    gaps = [abs(row[7] - rho_limit) for row in rows]
    assert all(gaps[i + 1] <= gaps[i] + 1e-12 for i in range(len(gaps) - 1))
    assert gaps[-1] <= 1e-2 * gaps[0]


def test_sweep_rejects_unknown_mode():
    with pytest.raises(InvalidParameterError):
        ex.scalar_sweeps("bogus")


def test_fit_decay_exponent_detects_orders():
    quad = [1e-1]
    for _ in range(5):
        quad.append(quad[-1] ** 2)
    assert abs(ex.fit_decay_exponent(quad) - 2.0) <= 0.05
    lin = [0.5 * 0.07 ** k for k in range(8)]
    assert abs(ex.fit_decay_exponent(lin) - 1.0) <= 0.05
    with pytest.raises(InvalidParameterError):
        ex.fit_decay_exponent([1.0, 0.5])


def test_lv_grid_rejects_inexpressible_ratio():
    with pytest.raises(InvalidParameterError):
        ex._lv_grid(1.0 / 3.0, 24, 1e-4, 120_000)   # half a coarse step
    with pytest.raises(InvalidParameterError):
        ex._lv_grid(1.0 / 3.0, 7, 1e-4, 120_000)    # L does not divide


def test_lotka_volterra_run_small_grid():
    result = ex.lotka_volterra_run(L=3, r=1e-3, fine_total=12_000,
                                   outer_tol=1e-11)
    assert result.params["converged"]
    rows = result.artifact("history").rows
    assert [r[0] for r in rows] == list(range(len(rows)))
    assert rows[-1][1] <= 1e-11
    # error against the converged fine reference decays
    errs = [r[2] for r in rows]
    assert errs[-1] <= 1e-6 * errs[0]


def test_heat_run_small_grid():
    result = ex.heat_run(delta_t=1e-5, r=1e-1, L=10, n=20, outer_tol=1e-10)
    assert result.params["converged"]
    assert result.params["reference_iterations"] == 1
    assert not result.params["modes_valid"]     # indicator control operator
    modes = result.artifact("mode_bounds").rows
    assert len(modes) == 20
    assert all(row[2] >= 0.0 for row in modes)
    # observed late contraction should respect the worst per-mode bound when
    # the control acts everywhere
    full = ex.heat_run(delta_t=1e-5, r=1e-1, L=10, n=20, outer_tol=1e-10,
                       control_support=(0.0, 1.0))
    assert full.params["modes_valid"]
    hist = full.artifact("history").rows
    errs = np.array([row[2] for row in hist])
    good = errs > 1e3 * errs.min()
    ratios = [errs[k + 1] / errs[k] for k in range(1, len(errs) - 1)
              if good[k] and good[k + 1]]
    if ratios:
        assert max(ratios) <= full.params["max_mode_bound"] * 1.05 + 1e-12


def test_timing_run_bitwise_identical():
    result = ex.timing_run("dahlquist", worker_counts=(1, 4, 10))
    assert result.passed
    rows = result.artifact("timing").rows
    assert [row[0] for row in rows] == [1, 4, 10]
    assert rows[0][2] == 1.0   # speedup of the baseline worker count


def test_invariant_suites_small():
    assert ex.appendix_grid(25, 25).passed
    assert ex.bound_suite(120, seed=7).passed
    assert ex.oracle_equivalence(Ls=(1, 2, 4)).passed
