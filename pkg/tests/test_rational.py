from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cml._rational import charpoly, nullspace, parse_rational, to_fraction


@pytest.mark.parametrize("x, expected", [
    (0.2, Fraction(1, 5)),
    (0.02, Fraction(1, 50)),
    (1e-3, Fraction(1, 1000)),
    (3, Fraction(3)),
    ("1/5", Fraction(1, 5)),
    ("0.125", Fraction(1, 8)),
    ("4*48^8", Fraction(4 * 48**8)),
    ("1/4*48^8", Fraction(1, 4 * 48**8)),
    ("2^3^2", Fraction(2**9)),
    ("-3/4", Fraction(-3, 4)),
    (np.float64(0.5), Fraction(1, 2)),
])
def test_to_fraction(x, expected):
    assert to_fraction(x) == expected


@pytest.mark.parametrize("bad", ["", "a/b", "1/", "3**", float("nan"), True])
def test_to_fraction_rejects(bad):
    with pytest.raises((ValueError, TypeError)):
        to_fraction(bad)


@given(st.fractions(max_denominator=10**6))
def test_parse_roundtrip(q):
    assert parse_rational(str(q)) == q


def test_nullspace():
    A = [[1, 2, 3], [2, 4, 6]]
    basis = nullspace(A)
    assert len(basis) == 2
    for v in basis:
        assert all(sum(Fraction(a) * b for a, b in zip(row, v)) == 0 for row in A)


def test_charpoly():
    M = [[Fraction(2), Fraction(1)], [Fraction(1), Fraction(2)]]
    # (x-1)(x-3)
    assert charpoly(M) == [1, -4, 3]
