import itertools
from fractions import Fraction

import numpy as np
import pytest

from cml import lattice as lat
from cml import toom


def test_all_plus_absorbing():
    st = toom.PcaState(np.ones((8, 8)), 0.0)
    for _ in range(10):
        st = toom.pca_step(st)
        assert (st.spins == 1).all()


def test_single_minus_erased():
    s = np.ones((6, 6), dtype=np.int8)
    s[2, 3] = -1
    out = toom.pca_step(toom.PcaState(s, 0.0)).spins
    assert (out == 1).all()


def test_majority_hand_cases():
    # two minus cells at i and i+e1: i sees (-,-,+) and turns minus
    s = np.ones((5, 5), dtype=np.int8)
    s[1, 1] = s[2, 1] = -1
    m = toom.majority(s)
    assert m[1, 1] == -1
    assert m[2, 1] == 1
    assert (m == -1).sum() == 1


def test_exhaustive_monotone_3x3():
    configs = np.array(list(itertools.product([-1, 1], repeat=9)), dtype=np.int8).reshape(-1, 3, 3)
    outs = np.array([toom.majority(c) for c in configs])
    for c, o in zip(configs, outs):
        assert set(np.unique(o)) <= {-1, 1}
        for idx in zip(*np.nonzero(c == -1)):
            up = c.copy()
            up[idx] = 1
            assert (toom.majority(up) >= o).all()


def test_noise_half_kills_magnetization():
    run = toom.run_pca(32, 0.5, 200, seed=1)
    assert abs(run.magnetization[50:].mean()) < 0.02


def test_error_sites_match_p():
    run = toom.run_pca(64, 0.05, 200, seed=2)
    rate = run.error_sites.sum() / (200 * 64 * 64)
    assert rate == pytest.approx(0.05, rel=0.05)
    assert run.magnetization[-1] > 0.8
    assert toom.run_pca(16, 0.0, 20).error_sites.sum() == 0


def test_deterministic():
    a = toom.run_pca(16, 0.1, 50, seed=7)
    b = toom.run_pca(16, 0.1, 50, seed=7)
    c = toom.run_pca(16, 0.1, 50, seed=8)
    assert np.array_equal(a.final.spins, b.final.spins)
    assert np.array_equal(a.magnetization, b.magnetization)
    assert not np.array_equal(a.magnetization, c.magnetization)


def test_bad_p():
    with pytest.raises(ValueError):
        toom.PcaState(np.ones((2, 2)), 1.5)


def test_peierls_delta_gives_third():
    d = toom.peierls_delta()
    assert d == Fraction(1, 4 * 48**8)
    b = toom.peierls_series(d)
    assert b.ratio == Fraction(1, 4)
    assert b.series_value == Fraction(1, 3)
    assert str(b) == "1/3"


@pytest.mark.parametrize("delta, expected", [
    (0, Fraction(0)),
    (Fraction(1, 2 * 48**8), Fraction(1)),
    (Fraction(1, 48**8), None),
    (Fraction(2, 48**8), None),
    ("1/4", None),
])
def test_peierls_series(delta, expected):
    b = toom.peierls_series(delta)
    assert b.series_value == expected
    assert b.divergent == (expected is None)


def test_peierls_string_input():
    # the denominator is an integer product
    assert toom.peierls_series("1/4*48^8").series_value == Fraction(1, 3)


def test_peierls_negative():
    with pytest.raises(ValueError):
        toom.peierls_series(-1)


def test_compare_length_mismatch():
    with pytest.raises(toom.LengthMismatch):
        toom.compare_cml_pca(np.ones(5), np.ones(6))


def test_compare_pinned_at_zero_noise():
    pca = toom.run_pca(16, 0.0, 30)
    cmp = toom.compare_cml_pca(np.ones(30), pca.magnetization)
    assert cmp.sup_difference == 0 and cmp.pca_mean == 1


def test_compare_strong_coupling(params_g3):
    lmap = lat.LatticeMap.from_params(params_g3, 93)
    st = lat.init_lambda_plus(params_g3, 32, seed=0)
    cml_run = lat.simulate(st, 0.19, lmap, 300)
    p = cml_run.error_rate()
    pca = toom.run_pca(32, p, 300, seed=0)
    cmp = toom.compare_cml_pca(cml_run.magnetization, pca.magnetization)
    # both keep the initial sign
    assert cmp.cml_mean > 0 and cmp.pca_mean > 0
    assert np.isfinite(cmp.sup_difference)
