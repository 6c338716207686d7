import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mesodiff import abm, shds
from mesodiff import netstruct as ns
from mesodiff.rng import stream


def complete(n):
    return ns.Graph.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def test_params_validated():
    with pytest.raises(ValueError):
        abm.ABMParams(1.5, 0.0, 0.0)


def test_step_all_members_leave():
    g = ns.generate_planted_partition(20, 0.5, 0.1, seed=0)
    st0 = abm.ABMState.seeded(20, range(10))
    out = abm.abm_step(st0, g, abm.ABMParams(0.0, 0.0, 1.0), stream(0))
    assert out.counts() == (10, 0, 10) and out.step_count == 1


def test_step_isolated_join():
    g = ns.Graph.from_edges(3, [(0, 1)])
    out = abm.abm_step(abm.ABMState.seeded(3, [0]), g, abm.ABMParams(1.0, 0.0, 0.0), stream(1))
    assert list(out.labels) == [abm.MEMBER, abm.MEMBER, abm.POTENTIAL]


def test_step_size_mismatch():
    with pytest.raises(ValueError):
        abm.abm_step(abm.ABMState.seeded(4, [0]), complete(3), abm.REFERENCE_PARAMS, stream(0))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_population_conserved_and_ex_absorbing(seed, b, d1, d2):
    g = ns.generate_planted_partition(30, 0.3, 0.05, seed=seed)
    params = abm.ABMParams(b, d1, d2)
    rng = stream(seed, 1)
    state = abm.ABMState.seeded(30, [0, 1, 2])
    ex_before = state.labels == abm.EX
    for _ in range(15):
        state = abm.abm_step(state, g, params, rng)
        assert sum(state.counts()) == 30
        ex_now = state.labels == abm.EX
        assert np.all(ex_now[ex_before])
        ex_before = ex_now


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6), st.floats(0, 1))
def test_monotone_contagion(seed, b):
    g = ns.generate_planted_partition(30, 0.3, 0.05, seed=seed)
    state = abm.ABMState.seeded(30, [5])
    rng = stream(seed, 2)
    members = state.labels == abm.MEMBER
    for _ in range(10):
        state = abm.abm_step(state, g, abm.ABMParams(b, 0.0, 0.0), rng)
        now = state.labels == abm.MEMBER
        assert np.all(now[members])
        members = now


def test_cascade_trial_examples():
    g0 = ns.generate_planted_partition(40, 0.5, 0.0, seed=4)
    left = range(20)
    assert not any(abm.run_cascade_trial(g0, abm.ABMParams(1.0, 0.0, 0.0), [20, 21], left, seed=s)
                   for s in range(5))
    with pytest.raises(ValueError):
        abm.run_cascade_trial(g0, abm.REFERENCE_PARAMS, [0, 25], left)
    with pytest.raises(ValueError):
        abm.run_cascade_trial(g0, abm.REFERENCE_PARAMS, [], left)
    g = ns.generate_planted_partition(40, 0.5, 0.05, seed=4)
    assert abm.run_cascade_trial(g, abm.ABMParams(1.0, 0.0, 0.0), [20], left, seed=0)


def test_cascade_trial_fraction_target():
    g = complete(10)
    assert abm.run_cascade_trial(g, abm.ABMParams(1.0, 0.0, 0.0), [0], range(1, 10),
                                 target_fraction=1.0, seed=0)


def test_cascade_probability_zero_endpoint_and_reproducible():
    grid = [10.0, float("inf")]
    a = abm.cascade_probability(grid, 3, 4, abm.REFERENCE_PARAMS, n=40, p_i=0.3, seeds_per_trial=2, master_seed=5)
    b = abm.cascade_probability(grid, 3, 4, abm.REFERENCE_PARAMS, n=40, p_i=0.3, seeds_per_trial=2, master_seed=5)
    assert a == b
    assert a[1].probability_estimate == 0.0
    r = a[0]
    assert r.standard_error == pytest.approx(np.sqrt(r.probability_estimate * (1 - r.probability_estimate) / 12),
                                             abs=1e-12)


def test_cascade_probability_rejects():
    with pytest.raises(ValueError):
        abm.cascade_probability([], 1, 1, abm.REFERENCE_PARAMS, n=10, p_i=0.5)


def test_cascade_csv(tmp_path):
    p = tmp_path / "c.csv"
    abm.write_cascade_csv([abm.CascadeResult.from_counts(2.0, 3, 4)], p)
    assert p.read_text().splitlines() == ["ratio,p_hat,stderr,runs", f"2.0,0.75,{(0.75 * 0.25 / 4) ** 0.5!r},4"]


def _mean_abm(params, n, m0, steps, runs=100):
    g = complete(n)
    return np.mean([abm.simulate_abm(g, params, range(m0), steps, seed=s) / n for s in range(runs)], axis=0)


def test_k200_matches_synchronous_mean_field_map():
    # reference parameters: a step moves O(1) mass, so the oracle is the discrete map
    n, m0, p = 200, 10, abm.REFERENCE_PARAMS
    traj = _mean_abm(p, n, m0, 30)
    x = [np.array([1 - m0 / n, m0 / n, 0.0])]
    for _ in range(30):
        P, M, E = x[-1]
        join = P * (1 - (1 - p.beta_p) ** (M * n))
        leave = M * (1 - (1 - p.delta1_p) ** (E * n) * (1 - p.delta2_p))
        x.append(np.array([P - join, M + join - leave, E + leave]))
    assert np.abs(np.array(x) - traj).max() <= 0.02


def test_k200_matches_sigma_h_ode_small_steps():
    from oracles import euler_ode
    n, m0 = 200, 40
    p = abm.ABMParams(0.001, 0.0001, 0.005)
    steps = 1200
    traj = _mean_abm(p, n, m0, steps)
    rates = shds.SigmaHParams(p.beta_p * (n - 1), p.delta1_p * (n - 1), p.delta2_p)
    ode = euler_ode(lambda x: shds.drift_h(x, rates), [1 - m0 / n, m0 / n, 0.0], 0.01, steps * 100)[::100]
    assert np.abs(ode - traj).max() <= 0.08
