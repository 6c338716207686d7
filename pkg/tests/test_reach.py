import json

import numpy as np
import pytest
from oracles import fd_generator

from mesodiff import netstruct as ns
from mesodiff import reach, shds
from mesodiff.poly import Polynomial

INF = float("inf")
TOP = reach.StateRegion.box([1.0], [INF])


def ruin(sigma=0.3):
    return reach.pure_diffusion(sigma)


def random_poly(nvars, rng, degree=3, terms=8):
    out = {}
    for _ in range(terms):
        e = rng.multinomial(rng.integers(0, degree + 1), np.ones(nvars) / nvars)
        out[tuple(int(v) for v in e)] = float(rng.normal())
    return Polynomial(nvars, out)


def two_community(lam=3.0, noise_on=True):
    cg = ns.CommunityGraph(2, (80, 120), ((0, 1),))
    return shds.SHDSModel.uniform(cg, shds.SIGMA_H, shds.SigmaHParams(2.0, 0.5, 1.0),
                                  interaction_rate=lam, noise_on=noise_on)


# regions

def test_region_membership_and_filters():
    g = Polynomial.linear([1.0, 1.0], -1.0)  # x + y ≥ 1
    r = reach.StateRegion.box([0, 0], [1, 1], inequalities=(g,), discrete=(1,))
    assert list(r.contains(np.array([[0.6, 0.6], [0.2, 0.2]]), q=np.array([1, 1]))) == [True, False]
    assert not r.contains([0.6, 0.6], q=0)
    with pytest.raises(ValueError):
        reach.StateRegion.box([0, 1], [1, 0])


def test_region_sampling_respects_region():
    g = Polynomial(2, {(2, 0): -1.0, (0, 2): -1.0, (0, 0): 0.25})  # disk of radius 1/2
    r = reach.StateRegion.box([-1, -1], [1, 1], inequalities=(g,))
    pts = r.sample(512, seed=3)
    assert len(pts) > 80 and np.all(r.contains_continuous(pts))
    assert np.array_equal(pts, r.sample(512, seed=3))


def test_simplex_sampling():
    m = two_community()
    pts = reach.shds_state_space(m).sample(256)
    blocks = pts.reshape(len(pts), m.K, m.d)
    assert np.allclose(blocks.sum(-1), 1) and blocks.min() >= 0


def test_region_config_round_trip():
    r = reach.StateRegion.box([0, 0], [1, 2], inequalities=(Polynomial.linear([1.0, -1.0], 0.0),), active_all=(0,))
    assert reach.StateRegion.from_config(json.loads(json.dumps(r.to_config()))).to_config() == r.to_config()


def test_adopted_fraction_region():
    m = two_community()
    r = reach.adopted_fraction_region(m, 0.5, communities=[1])
    yes = np.array([1, 0, 0, 0.4, 0.1, 0.5])
    no = np.array([0, 0.5, 0.5, 0.6, 0.1, 0.3])
    assert r.contains_continuous(yes) and not r.contains_continuous(no)


# generator

def test_generator_trivial_examples():
    sys = ruin(0.7)
    x = np.linspace(0, 1, 11)[:, None]
    const = reach.AltitudeCertificate.single(Polynomial.constant(1, 0.4), 0.4)
    assert np.all(reach.generator_apply(const, sys, x) == 0)
    lin = reach.AltitudeCertificate.single(Polynomial.linear([1.0]), 0.3)
    assert np.all(reach.generator_apply(lin, sys, x) == 0)
    sq = reach.AltitudeCertificate.single(Polynomial(1, {(2,): 1.0}), 1.0)
    assert np.allclose(reach.generator_apply(sq, sys, x), 0.49, rtol=0, atol=1e-15)


def test_generator_constant_with_jumps():
    m = two_community(lam=5.0)
    cert = reach.AltitudeCertificate.single(Polynomial.constant(6, 0.7), 0.7)
    x = reach.shds_state_space(m).sample(50)
    assert np.allclose(reach.generator_apply(cert, m, x, q=1), 0.0, atol=1e-15)


def _rel(a, b):
    return abs(a - b) / max(abs(b), 1e-12)


def test_generator_vs_fd_pure_diffusion():
    rng = np.random.default_rng(0)
    sys = ruin(0.4)
    for _ in range(100):
        A = random_poly(1, rng)
        cert = reach.AltitudeCertificate.single(A, 1.0)
        x = rng.uniform(0, 1, 1)
        ref = fd_generator(lambda z: float(A(z)), lambda z: [0.0], lambda z: [[0.4]], x)
        assert _rel(float(reach.generator_apply(cert, sys, x)), ref) <= 1e-5


def _sigma_h_fields(m):
    """Drift and block diffusion straight from the community fields."""
    K, d = m.K, m.d
    pm = m.param_matrix

    def drift(x, act):
        xr = x.reshape(K, d)
        return np.concatenate([shds.drift_h(xr[j], pm[j]) * act[j] for j in range(K)])

    def diffusion(x, act):
        g = np.zeros((K * d, K * d))
        if m.noise_on:
            for j in range(K):
                g[j * d:(j + 1) * d, j * d:(j + 1) * d] = (shds.diffusion_h(x.reshape(K, d)[j], pm[j])
                                                           * act[j] / np.sqrt(m.sizes[j]))
        return g
    return drift, diffusion


@pytest.mark.parametrize("lam,noise_on", [(0.0, False), (4.0, True)])
def test_generator_vs_fd_sigma_h(lam, noise_on):
    rng = np.random.default_rng(1 + int(noise_on))
    m = two_community(lam=lam, noise_on=noise_on)
    drift, diffusion = _sigma_h_fields(m)
    pts = reach.shds_state_space(m).sample(200, seed=5)[10:]
    checked = 0
    for x in pts[:100]:
        q = int(rng.integers(1, 4))
        act = np.array([(q >> j) & 1 for j in range(2)], dtype=bool)
        polys = {s: random_poly(6, rng) for s in range(4)}
        cert = reach.AltitudeCertificate(1.0, 6, polys)
        jumps = []
        for j in range(2):
            if not act[j]:
                rate = lam * x.reshape(2, 3)[1 - j, 1] * m.sizes[1 - j] / m.sizes.sum()
                after = x.reshape(2, 3).copy()
                after[j] = m.injected_state(j)
                jumps.append((rate, after.ravel(), lambda z, s=q | (1 << j): float(polys[s](z))))
        ref = fd_generator(lambda z: float(polys[q](z)), lambda z: drift(z, act),
                           lambda z: diffusion(z, act), x, jumps=jumps)
        got = float(reach.generator_apply(cert, m, x, q=q))
        assert _rel(got, ref) <= 1e-5, (x, q, got, ref)
        checked += 1
    assert checked == 100


def test_generator_time_term():
    # A(x, t) = x t on dx = σ dw: BA = x
    cert = reach.AltitudeCertificate.single(Polynomial(2, {(1, 1): 1.0}), 1.0, time_augmented=True)
    assert reach.generator_apply(cert, ruin(), np.array([0.3]), t=2.0) == pytest.approx(0.3)


def test_generator_dimension_mismatch():
    cert = reach.AltitudeCertificate.single(Polynomial.linear([1.0, 1.0]), 1.0)
    with pytest.raises(ValueError):
        reach.generator_apply(cert, ruin(), np.array([0.5]))


# certificates

def X0():
    return reach.StateRegion.box([0.2], [0.3])


def test_check_linear_certificate_passes():
    cert = reach.AltitudeCertificate.single(Polynomial.linear([1.0]), 0.3)
    rep = reach.check_certificate(cert, ruin(), X0(), reach.StateRegion.box([1.0], [1.0]))
    assert rep.passed and rep.gamma == 0.3
    assert reach.EVIDENCE_NOTE in rep.summary()


def test_check_tight_gamma_fails_condition_one():
    cert = reach.AltitudeCertificate.single(Polynomial.linear([1.0]), 0.25)
    rep = reach.check_certificate(cert, ruin(), X0(), reach.StateRegion.box([1.0], [1.0]))
    c1 = rep.conditions[0]
    assert not rep.passed and not c1.passed
    assert c1.witness["x"] == [pytest.approx(0.3)]


def test_check_vacuous_certificate():
    cert = reach.AltitudeCertificate.single(Polynomial.constant(6, 1.0), 1.0)
    m = two_community()
    X = reach.shds_state_space(m)
    rep = reach.check_certificate(cert, m, X, reach.adopted_fraction_region(m, 0.5),
                                  plan=reach.SamplePlan(500, 100, 100))
    assert rep.passed


def test_check_reversed_certificate_fails_target():
    cert = reach.AltitudeCertificate.single(Polynomial.linear([-1.0], 1.0), 0.8)
    rep = reach.check_certificate(cert, ruin(), X0(), reach.StateRegion.box([1.0], [1.0]))
    c2 = rep.conditions[1]
    assert not c2.passed and c2.witness["x"] == [1.0]


def test_check_errors():
    cert = reach.AltitudeCertificate.single(Polynomial.linear([1.0]), 0.3)
    with pytest.raises(ValueError):
        reach.check_certificate(cert, ruin(), X0(), reach.StateRegion.box([1.0], [1.0]), horizon=5.0)
    empty = reach.StateRegion.box([0.0], [1.0], inequalities=(Polynomial.constant(1, -1.0),))
    with pytest.raises(ValueError):
        reach.check_certificate(cert, ruin(), empty, reach.StateRegion.box([1.0], [1.0]))


def test_certificate_file_round_trip(tmp_path):
    cert = reach.AltitudeCertificate(0.4, 2, {1: Polynomial.linear([1.0, 2.0])}, Polynomial.constant(2, 1.0),
                                     max_degree=2)
    p = tmp_path / "c.json"
    reach.save_certificate(cert, p)
    back = reach.load_certificate(p)
    assert back.to_config() == cert.to_config()
    with pytest.raises(ValueError):
        reach.AltitudeCertificate(0.4, 1, {0: Polynomial(1, {(3,): 1.0})}, max_degree=2)


# Monte Carlo

def test_mc_trivial_examples():
    x0, q0 = two_community().initial({0: 0.1})
    m = two_community()
    whole = reach.shds_state_space(m)
    assert reach.mc_reach(m, (x0, q0), whole, horizon=1.0, runs=10).value == 1.0
    dead = two_community(lam=0.0)
    est = reach.mc_reach(dead, (x0, q0), reach.shds_state_space(dead, active_all=(1,)), horizon=5.0, runs=50)
    assert est.value == 0.0 and est.half_width == 0.0


def test_mc_errors():
    with pytest.raises(ValueError):
        reach.mc_reach(ruin(), None, TOP)
    with pytest.raises(ValueError):
        reach.mc_reach(ruin(), (0.5, 0), TOP, runs=0)
    with pytest.raises(ValueError):
        reach.mc_reach(ruin(), (0.5, 0), TOP, horizon=-1.0)


def test_mc_gambler_small():
    est = reach.mc_reach(ruin(1.0), (0.25, 0), TOP, runs=4000, dt=1e-3, seed=2)
    assert abs(est.value - 0.25) <= 3 * est.half_width
    assert est.half_width == pytest.approx(1.96 * np.sqrt(est.value * (1 - est.value) / 4000))


def test_mc_deterministic_and_order_free():
    m = two_community(lam=2.0)
    x0, q0 = m.initial({0: 0.05})
    target = reach.shds_state_space(m, active_all=(1,))
    a, ha = reach.mc_reach(m, (x0, q0), target, horizon=5.0, runs=60, seed=3, return_hits=True)
    b, hb = reach.mc_reach(m, (x0, q0), target, horizon=5.0, runs=60, seed=3, return_hits=True)
    assert a == b and np.array_equal(ha, hb)
    # run r depends only on its own stream: a larger batch extends the smaller one
    _, hc = reach.mc_reach(m, (x0, q0), target, horizon=5.0, runs=90, seed=3, return_hits=True)
    assert np.array_equal(hc[:60], ha)


def test_mc_with_sampler_and_hybrid_jumps():
    m = two_community(lam=3.0)
    sys = reach.hybrid_view(m)
    x0, _ = m.initial({0: 0.1})
    target = reach.StateRegion.box([0.0] * 6, [1.0] * 6, discrete=(3,))
    est = reach.mc_reach(sys, lambda rng: (x0.ravel(), 1), target, horizon=2.0, dt=0.01, runs=40, seed=0)
    assert 0.0 <= est.value <= 1.0


def test_reach_csv(tmp_path):
    p = tmp_path / "r.csv"
    reach.binomial_estimate(3, 10, None).write_csv(p)
    head, row = p.read_text().splitlines()
    assert head.startswith("kind,value,half_width") and row.startswith("mc_estimate,0.3,")


# predictability and warning regions

def test_es_predictability_examples():
    sys = ruin(1.0)
    top, bottom = TOP, reach.StateRegion.box([-INF], [0.0])
    v = reach.es_predictability(sys, (0.5, 0), top, bottom, 0.2, runs=400, dt=1e-3, seed=1)
    assert not v.predictable and abs(v.gamma1 - v.gamma2) <= 0.2
    assert not reach.es_predictability(sys, (0.9, 0), top, bottom, 1.01, runs=100, dt=1e-3).predictable
    with pytest.raises(ValueError):
        reach.es_predictability(sys, (0.5, 0), top, reach.StateRegion.box([0.9], [1.2]), 0.1)
    with pytest.raises(ValueError):
        reach.es_predictability(sys, (0.5, 0), top, bottom, 0.0)
    a = reach.StateRegion.box([0.0], [1.0], discrete=(0,))
    assert not reach.regions_overlap(a, reach.StateRegion.box([0.0], [1.0], discrete=(1,)))


def test_es_predictable_at_extremes():
    cg = ns.CommunityGraph(2, (100, 100), ((0, 1),))
    m = shds.SHDSModel.uniform(cg, shds.SIGMA_H, shds.SigmaHParams(10.0, 0.1, 1.0), interaction_rate=1000.0)
    x0, q0 = m.initial({0: 0.1})
    spread = reach.adopted_fraction_region(m, 0.5, communities=[1])
    # community 0 extinct while community 1 was never reached
    extinct = reach.shds_state_space(m, inequalities=(Polynomial.linear([0, -1, 0, 0, 0, 0]),
                                                      Polynomial.linear([0, 0, 0, 1, 0, 0], -1.0)))
    v = reach.es_predictability(m, (x0, q0), spread, extinct, 0.5, runs=200, seed=0)
    assert v.predictable and v.gamma1 > 0.9


def test_es_certificate_method():
    sys = ruin()
    x0r = X0()
    c1 = reach.AltitudeCertificate.single(Polynomial.linear([1.0]), 0.3)
    c2 = reach.AltitudeCertificate.single(Polynomial.linear([-1.0], 1.0), 0.8)
    v = reach.es_predictability(sys, None, reach.StateRegion.box([1.0], [1.0]), reach.StateRegion.box([0.0], [0.0]),
                                0.4, method="certificate", certificates=(c1, c2), X0=x0r)
    assert v.predictable and (v.gamma1, v.gamma2) == (0.3, 0.8)


def test_warning_region_gambler():
    cells = reach.grid_cells(0.0, 1.0, 10)
    cells.append((np.array([1.0]), 0))
    w = reach.warning_region(ruin(1.0), TOP, 0.5, cells, runs_per_cell=400, seed=0, dt=1e-3)
    flagged = [float(c[0][0]) for c, f in zip(w.cells, w.flagged) if f]
    assert w.probabilities[-1] == 1.0
    assert min(flagged) >= 0.5 - 0.1 and min(flagged) <= 0.5 + 0.1


def test_warning_region_monotone_in_alpha():
    cells = reach.grid_cells(0.0, 1.0, 8)
    kw = dict(runs_per_cell=150, seed=4, dt=2e-3)
    lo = reach.warning_region(ruin(1.0), TOP, 0.3, cells, **kw)
    hi = reach.warning_region(ruin(1.0), TOP, 0.6, cells, **kw)
    assert np.all(lo.flagged[hi.flagged])


def test_warning_region_no_spread_without_interaction():
    m = two_community(lam=0.0)
    target = reach.shds_state_space(m, active_all=(1,))
    cells = [(m.initial({0: e})[0], m.initial({0: e})[1]) for e in (0.02, 0.05, 0.1)]
    w = reach.warning_region(m, target, 0.1, cells, runs_per_cell=30, horizon=5.0)
    assert not w.flagged.any()
    with pytest.raises(ValueError):
        reach.warning_region(m, target, 0.0, cells)
    with pytest.raises(ValueError):
        reach.warning_region(m, target, 0.5, [])
