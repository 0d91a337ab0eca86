import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cml import lattice as lat
from cml.map_core import build_tilde_tau


@pytest.fixture(scope="module")
def lmap(params):
    return lat.LatticeMap.from_params(params, 19)


def rand_state(L, seed, boundary="periodic"):
    rng = np.random.default_rng(seed)
    return lat.LatticeState(rng.uniform(-1, 1, (L, L)), boundary=boundary)


def test_lambda_plus_box(params):
    s = lat.init_lambda_plus(params, 16, seed=3)
    assert s.cells.min() >= 0.7 and s.cells.max() <= 0.8
    assert np.array_equal(s.cells, lat.init_lambda_plus(params, 16, seed=3).cells)
    assert np.array_equal(lat.init_lambda_minus(params, 16, seed=3).cells, -s.cells)
    assert not np.array_equal(s.cells, lat.init_lambda_plus(params, 16, seed=4).cells)


def test_symmetric_init(params):
    s = lat.init_symmetric(params, 32, seed=1)
    a = np.abs(s.cells)
    assert a.min() >= 0.7 and a.max() <= 0.8
    assert 0.3 < (s.cells > 0).mean() < 0.7


def test_tau_matches_exact_map(params, lmap):
    # one tau~ step agrees with exact evaluation up to the roundoff of a hinge
    # sum with O(100) coefficients; iterates amplify it, so only one step
    t = build_tilde_tau(params)
    one = lat.LatticeMap(lmap.nodes, lmap.coef, 1, lmap.inv_v, power=1)
    rng = np.random.default_rng(0)
    for x in rng.uniform(-1, 1, 500):
        exact = float(t(float(x)) * (1 / params.v))
        assert abs(lat.tau_reference(float(x), one) - exact) < 1e-12


def test_eps_zero_is_local_map(lmap):
    s = rand_state(6, 1)
    a = lat.step(s, 0.0, lmap)
    b = lat.apply_local_map(s, lmap)
    assert np.array_equal(a.cells, b.cells)


def test_uniform_state(lmap):
    s = lat.LatticeState(np.full((5, 5), 0.37))
    nxt = lat.step(s, 0.2, lmap)
    assert np.all(nxt.cells == lat.tau_reference(0.37, lmap))


@pytest.mark.parametrize("ordering", ["T", "S"])
def test_bit_exact_against_reference(lmap, ordering):
    s = rand_state(3, 7)
    ref = lat.step_reference(s.cells, 0.19, lmap, ordering)
    got = lat.step(s, 0.19, lmap, ordering).cells
    assert np.array_equal(ref, got)


def test_step_does_not_alias(lmap):
    s = rand_state(4, 2)
    before = s.cells.copy()
    nxt = lat.step(s, 0.1, lmap)
    assert np.array_equal(s.cells, before)
    assert nxt.cells is not s.cells and nxt.time == 1


@pytest.mark.parametrize("boundary", ["periodic", "fixed", "free"])
def test_range_preserved(lmap, boundary):
    s = rand_state(8, 3, boundary)
    s.fixed_value = 0.9
    for _ in range(20):
        s = lat.step(s, 0.25, lmap)
        assert np.all(np.abs(s.cells) <= 1)


def test_couple_free_boundary_convex():
    s = lat.LatticeState(np.full((4, 4), 0.5), boundary="free")
    assert np.allclose(lat.couple(s, 0.2).cells, 0.5)
    f = lat.LatticeState(np.zeros((3, 3)), boundary="fixed", fixed_value=1.0)
    c = lat.couple(f, 0.2).cells
    assert c[-1, -1] == pytest.approx(0.2) and c[0, -1] == pytest.approx(0.1) and c[0, 0] == 0


def test_error_sites_trivial(params):
    a = lat.LatticeState(np.full((4, 4), 0.5))
    assert lat.error_sites(a, a)[0] == 0


def test_error_site_crafted(params, lmap):
    L = 4
    x = np.full((L, L), 0.75)
    x[0, 0] = -1e-3
    s = lat.LatticeState(x)
    nxt = lat.step(s, 0.0, lmap)
    n, sites = lat.error_sites(s, nxt)
    origin_bad = lat.tau_reference(-1e-3, lmap) <= 0
    assert ([0, 0] in sites.tolist()) == origin_bad


def test_simulate_counts_match_error_sites(lmap):
    s = rand_state(6, 11)
    r = lat.simulate(s, 0.19, lmap, 5, record_states=True)
    prev = s
    for t in range(5):
        cur = lat.LatticeState(r.trajectory[t].reshape(6, 6))
        assert r.error_sites[t] == lat.error_sites(prev, cur)[0]
        assert r.magnetization[t] == pytest.approx(cur.signs().mean())
        prev = cur


def test_determinism(params):
    cfg = lat.SweepConfig(params, 19, [0.19], L=8, steps=30, replicas=2, seed=5)
    a = list(lat.run_sweep(cfg).records())
    b = list(lat.run_sweep(cfg).records())
    assert a == b and len(a) == 60


def test_threads_same_results(params, monkeypatch):
    cfg = lat.SweepConfig(params, 19, [0.01, 0.19], L=8, steps=20, replicas=2, seed=5)
    a = list(lat.run_sweep(cfg).records())
    monkeypatch.setenv("CML_THREADS", "3")
    b = list(lat.run_sweep(cfg).records())
    assert a == b


def test_config_errors(params):
    with pytest.raises(lat.ConfigError):
        lat.SweepConfig(params, 19, [0.3]).validate()
    with pytest.raises(lat.ConfigError):
        lat.SweepConfig(params, 19, [0.1], ordering="X").validate()


def test_autocorrelation():
    rng = np.random.default_rng(0)
    x = rng.normal(size=20000)
    assert lat.autocorrelation(x, 0) == pytest.approx(1.0)
    assert abs(lat.autocorrelation(x, 5)) < 3 / np.sqrt(len(x))
    with pytest.raises(ValueError):
        lat.autocorrelation(x[:40], 5)


def test_snapshot_roundtrip(tmp_path):
    s = rand_state(5, 9)
    p = tmp_path / "s.bin"
    lat.write_snapshot(p, s)
    raw = p.read_bytes()
    assert raw[:4] == b"CML1" and len(raw) == 16 + 25 * 8
    assert np.array_equal(lat.read_snapshot(p).cells, s.cells)


# equivariance identities on random states


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 4), st.integers(0, 4), st.sampled_from(["T", "S"]))
def test_translation_equivariance(seed, a, b, ordering):
    lm = _lm()
    s = rand_state(5, seed)
    shifted = lat.LatticeState(np.roll(s.cells, (a, b), axis=(0, 1)))
    lhs = lat.step(shifted, 0.19, lm, ordering).cells
    rhs = np.roll(lat.step(s, 0.19, lm, ordering).cells, (a, b), axis=(0, 1))
    assert np.array_equal(lhs, rhs)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["T", "S"]), st.sampled_from(["periodic", "free"]))
def test_sign_equivariance(seed, ordering, boundary):
    lm = _lm()
    s = rand_state(5, seed, boundary)
    neg = lat.LatticeState(-s.cells, boundary=boundary)
    assert np.array_equal(lat.step(neg, 0.15, lm, ordering).cells, -lat.step(s, 0.15, lm, ordering).cells)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6))
def test_conjugacy(seed):
    lm = _lm()
    s = rand_state(5, seed)
    e = 0.19
    lhs = lat.step(lat.couple(s, e), e, lm, "S").cells
    rhs = lat.couple(lat.step(s, e, lm, "T"), e).cells
    ulp = np.spacing(np.maximum(np.abs(lhs), np.abs(rhs)))
    assert np.all(np.abs(lhs - rhs) <= 4 * ulp)


_CACHE = {}


def _lm():
    if "lm" not in _CACHE:
        from fractions import Fraction as F

        from cml.map_core import validate_params

        _CACHE["lm"] = lat.LatticeMap.from_params(validate_params(F(1, 5), F(1, 50), F(1, 200)), 19)
    return _CACHE["lm"]
