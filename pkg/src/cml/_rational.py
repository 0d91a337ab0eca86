"""Small exact-arithmetic helpers shared by the analysis modules."""

from __future__ import annotations

import math
import re
from fractions import Fraction
from typing import Sequence

_INT_EXPR = re.compile(r"^[0-9*^()+\- ]+$")


def to_fraction(x) -> Fraction:
    """Convert ints, floats, Fractions and strings to an exact Fraction.

    Floats go through their shortest decimal repr, so ``0.2`` becomes
    ``1/5`` rather than the binary expansion of the double.  Strings accept
    ``"num/den"``, decimals, and integer products/powers like ``"4*48^8"``.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, bool):
        raise TypeError("bool is not a number here")
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        if not math.isfinite(x):
            raise ValueError(f"non-finite value {x!r}")
        return Fraction(repr(float(x)))
    if isinstance(x, str):
        return parse_rational(x)
    # numpy scalars and the like
    if hasattr(x, "item"):
        return to_fraction(x.item())
    raise TypeError(f"cannot convert {type(x).__name__} to Fraction")


def _int_product(expr: str) -> int:
    expr = expr.strip().replace("**", "^")
    if not expr or not _INT_EXPR.match(expr) or "(" in expr or ")" in expr:
        raise ValueError(f"bad integer expression {expr!r}")
    out = 1
    for factor in expr.split("*"):
        parts = factor.strip().split("^")
        if any(not p.strip() for p in parts):
            raise ValueError(f"bad integer expression {expr!r}")
        base = int(parts[0])
        # right-associative powers
        e = 1
        for p in reversed(parts[1:]):
            e = int(p) ** e
        out *= base ** e if len(parts) > 1 else base
    return out


def parse_rational(s: str) -> Fraction:
    s = s.strip()
    if not s:
        raise ValueError("empty rational")
    if "/" in s:
        num, _, den = s.partition("/")
        return Fraction(_parse_part(num), 1) / _parse_part(den)
    return _parse_part(s)


def _parse_part(s: str) -> Fraction:
    s = s.strip()
    try:
        return Fraction(s)
    except ValueError:
        pass
    neg = s.startswith("-")
    val = Fraction(_int_product(s[1:] if neg else s))
    return -val if neg else val


def nullspace(rows: Sequence[Sequence[Fraction]]) -> list[list[Fraction]]:
    """Exact basis of the right nullspace of a rational matrix (RREF)."""
    A = [list(map(Fraction, r)) for r in rows]
    n_rows = len(A)
    n_cols = len(A[0]) if A else 0
    pivots = []
    r = 0
    for c in range(n_cols):
        piv = next((i for i in range(r, n_rows) if A[i][c] != 0), None)
        if piv is None:
            continue
        A[r], A[piv] = A[piv], A[r]
        inv = 1 / A[r][c]
        A[r] = [x * inv for x in A[r]]
        for i in range(n_rows):
            if i != r and A[i][c] != 0:
                f = A[i][c]
                A[i] = [x - f * y for x, y in zip(A[i], A[r])]
        pivots.append(c)
        r += 1
        if r == n_rows:
            break
    free = [c for c in range(n_cols) if c not in pivots]
    basis = []
    for fc in free:
        vec = [Fraction(0)] * n_cols
        vec[fc] = Fraction(1)
        for i, pc in enumerate(pivots):
            vec[pc] = -A[i][fc]
        basis.append(vec)
    return basis


def charpoly(M: Sequence[Sequence[Fraction]]) -> list[Fraction]:
    """Characteristic polynomial coefficients (highest degree first), exact.

    Faddeev-LeVerrier recursion; fine for the small matrices used here.
    """
    n = len(M)
    A = [list(map(Fraction, r)) for r in M]
    coeffs = [Fraction(1)]
    Mk = [[Fraction(0)] * n for _ in range(n)]
    for k in range(1, n + 1):
        # Mk = A @ M_{k-1} + c_{k-1} I
        prev = Mk
        Mk = [[sum(A[i][l] * prev[l][j] for l in range(n)) for j in range(n)] for i in range(n)]
        for i in range(n):
            Mk[i][i] += coeffs[-1]
        AM = [[sum(A[i][l] * Mk[l][j] for l in range(n)) for j in range(n)] for i in range(n)]
        ck = -sum(AM[i][i] for i in range(n)) / k
        coeffs.append(ck)
    return coeffs
