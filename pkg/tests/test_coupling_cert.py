import random
from fractions import Fraction as F

import numpy as np
import pytest

from cml.coupling_cert import (
    CertFailure,
    case3_thresholds,
    certify_cases,
    compute_epsilon2,
    majority_flow_check,
    phi,
)
from cml.map_core import build_tilde_tau


def test_phi_examples(params):
    p = params
    assert phi(0, F(3, 10), F(1, 2), F(-1, 2)) == F(3, 10)
    assert phi(F(1, 5), p.v, p.v, p.v) == p.v
    assert phi(F(1, 5), F(7, 10), F(-4, 5), F(-4, 5)) == F(2, 5)


def test_phi_vectorised():
    x = np.linspace(-1, 1, 11)
    assert np.allclose(phi(0.1, x, x, x), x)


def test_epsilon2(params):
    e2 = compute_epsilon2(params)
    assert e2 == F(14, 75)
    th = case3_thresholds(params)
    assert th["case3a_upper"] == F(1, 3) > params.eta


def test_certify_default_interval(params):
    rep = certify_cases(params)
    assert rep.passed
    assert (rep.eps_lo, rep.eps_hi) == (F(14, 75), F(1, 5))


def test_case_margins(params):
    rep = certify_cases(params)
    c2, c3a, c3b = rep.case("case2"), rep.case("case3a"), rep.case("case3b")
    # case2 minimum (1-eta) d/v + eta/2 (d-u)/v = d - eta(eta^2+2 delta)/(2(1-eta))
    p = params
    assert c2.extreme == p.d - p.eta * (p.eta**2 + 2 * p.delta) / (2 * (1 - p.eta)) == F(11, 20)
    assert c2.margin == c2.margin_at_eta == F(1, 100)
    assert c3a.margin_at_eta == F(1, 5) and c3a.extreme == F(2, 5)
    assert c3b.margin_at_eta == F(1, 50)
    # case3b is the binding constraint that defines eps2
    assert c3b.margin == 0 and c3b.passed
    assert rep.case("case1").margin == 0


def test_below_eps2_fails(params):
    e = F(14, 75) - F(1, 10**6)
    rep = certify_cases(params, e, params.eta)
    assert not rep.case("case3b").passed
    with pytest.raises(CertFailure, match="case3b"):
        certify_cases(params, e, params.eta, strict=True)


def test_corners_bound_random_interior(params):
    p = params
    rep = certify_cases(params)
    rng = random.Random(4)
    lo, hi = p.d / p.v, p.v

    def draw(sign=1):
        return sign * (lo + (hi - lo) * F(rng.randint(0, 10**4), 10**4))

    for _ in range(1000):
        e = rep.eps_lo + (rep.eps_hi - rep.eps_lo) * F(rng.randint(0, 1000), 1000)
        x = draw()
        # case2: y positive, z either sign
        val = phi(e, x, draw(), draw(rng.choice([-1, 1])))
        assert val >= rep.case("case2").extreme
        # case3: y, z negative
        val = phi(e, x, draw(-1), draw(-1))
        assert rep.case("case3a").extreme <= val <= rep.case("case3b").extreme


def test_flow_at_eta(params):
    rep = majority_flow_check(params, params.eta, k=19)
    assert rep.passed
    t = build_tilde_tau(params)
    assert t.image_of_interval(params.a, params.b) == (-params.u, -params.c)


def test_flow_fails_without_coupling(params):
    rep = majority_flow_check(params, 0)
    assert rep.positive_neighbour["ok"]
    assert not rep.negative_neighbours["ok"]
