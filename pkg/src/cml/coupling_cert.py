"""Local coupling rule and exact certification of the coupling inequalities.

Every bound is affine in the site values and in epsilon, so extremes over
the boxes are attained at corners and at the two epsilon endpoints.  All
pass/fail decisions use Fractions.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction

from ._rational import to_fraction
from .map_core import MapParams, build_tilde_tau


class CertFailure(AssertionError):
    pass


class NoAdmissibleEps(ValueError):
    pass


class FlowFailure(AssertionError):
    pass


def phi(eps, x, y, z):
    """(1 - eps) x + eps/2 (y + z); works for Fractions, floats and arrays."""
    return (1 - eps) * x + eps * (y + z) / 2


@dataclass(frozen=True)
class CaseResult:
    name: str
    statement: str
    extreme: Fraction  # worst value of x' over the box and eps interval
    target: Fraction
    margin: Fraction  # distance from the target, >= 0 means satisfied
    corner: tuple
    eps: Fraction
    strict: bool  # inequality required strictly
    margin_at_eta: Fraction

    @property
    def passed(self) -> bool:
        return self.margin > 0 if self.strict else self.margin >= 0

    def as_dict(self) -> dict:
        return {
            "inequality": self.name,
            "statement": self.statement,
            "extreme": str(self.extreme),
            "target": str(self.target),
            "margin": str(self.margin),
            "margin_float": float(self.margin),
            "margin_at_eta": str(self.margin_at_eta),
            "corner": [str(c) for c in self.corner],
            "eps": str(self.eps),
            "strict": self.strict,
            "pass": self.passed,
        }


@dataclass
class CertReport:
    eps_lo: Fraction
    eps_hi: Fraction
    cases: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.cases)

    def case(self, name: str) -> CaseResult:
        return next(c for c in self.cases if c.name == name)

    def as_dict(self) -> dict:
        return {
            "eps_lo": str(self.eps_lo),
            "eps_hi": str(self.eps_hi),
            "pass": self.passed,
            "cases": [c.as_dict() for c in self.cases],
        }


def _box(lo, hi, sign):
    return (sign * lo, sign * hi)


def _extreme(eps_vals, xs, ys, zs, which):
    best = None
    for e, x, y, z in itertools.product(eps_vals, xs, ys, zs):
        val = phi(e, x, y, z)
        if best is None or (val < best[0] if which == "min" else val > best[0]):
            best = (val, (x, y, z), e)
    return best


def certify_cases(params: MapParams, eps_lo=None, eps_hi=None, strict: bool = False) -> CertReport:
    """Certify the four coupling bounds over eps in [eps_lo, eps_hi].

    Without loss of generality x > 0.  Box values satisfy d/v <= |.| <= v.
    """
    p = params
    lo_e = to_fraction(eps_lo) if eps_lo is not None else compute_epsilon2(p)
    hi_e = to_fraction(eps_hi) if eps_hi is not None else p.eta
    if not 0 <= lo_e <= hi_e <= p.eta:
        raise ValueError(f"need 0 <= eps_lo <= eps_hi <= eta, got [{lo_e}, {hi_e}]")
    bl, bh = p.d / p.v, p.v
    pos = (bl, bh)
    neg = (-bh, -bl)
    both = neg + pos
    E = (lo_e, hi_e)
    eta = (p.eta,)
    rep = CertReport(lo_e, hi_e)

    def add(name, stmt, xs, ys, zs, which, target, strict_ineq):
        val, corner, e = _extreme(E, xs, ys, zs, which)
        at_eta = _extreme(eta, xs, ys, zs, which)[0]
        if which == "max":
            margin, m_eta = target - val, target - at_eta
        else:
            margin, m_eta = val - target, at_eta - target
        rep.cases.append(CaseResult(name, stmt, val, target, margin, corner, e, strict_ineq, m_eta))

    add("case1", "x' <= v", pos, both, both, "max", p.v, False)
    # one positive neighbour is enough; y is that neighbour
    add("case2", "y > 0 => x' > c", pos, pos, both, "min", p.c, True)
    add("case3a", "y, z < 0 => x' > a", pos, neg, neg, "min", p.a, True)
    # equality at eps2 still lands in tau~^-1[-u, -c] since tau~(b) = -c
    add("case3b", "y, z < 0 => x' <= b", pos, neg, neg, "max", p.b, False)
    if strict:
        for c in rep.cases:
            if not c.passed:
                raise CertFailure(
                    f"{c.name} ({c.statement}) fails: x'={c.extreme} at corner {c.corner}, eps={c.eps}"
                )
    return rep


def compute_epsilon2(params: MapParams) -> Fraction:
    """Smallest eps with case3a and case3b valid on all of [eps, eta]."""
    p = params
    dv, v = p.d / p.v, p.v
    # (1-e) v - e d/v = b  gives the lower threshold
    e_b = (v - p.b) / (v + dv)
    # (1-e) d/v - e v = a  gives an upper threshold
    e_a = (dv - p.a) / (dv + v)
    if e_b > p.eta or e_a <= p.eta:
        raise NoAdmissibleEps(f"eps window empty: lower {e_b}, case3a limit {e_a}, eta {p.eta}")
    return e_b


def case3_thresholds(params: MapParams) -> dict[str, Fraction]:
    p = params
    dv, v = p.d / p.v, p.v
    return {"case3b_lower": (v - p.b) / (v + dv), "case3a_upper": (dv - p.a) / (dv + v)}


@dataclass
class FlowReport:
    eps: Fraction
    k: int | None
    positive_neighbour: dict
    negative_neighbours: dict

    @property
    def passed(self) -> bool:
        return self.positive_neighbour["ok"] and self.negative_neighbours["ok"]


def majority_flow_check(params: MapParams, eps, k: int | None = None, strict: bool = False) -> FlowReport:
    """Exact check of the sign-forcing mechanism behind the majority vote.

    (i) a positive neighbour keeps x' in (c, v] and tau~^k x' in [c, v];
    (ii) two negative neighbours push x' into (a, b], whose tau~ image lies
    in [-u, -c], so tau~^k x' stays in [-v, -c].
    """
    p = params
    eps = to_fraction(eps)
    t = build_tilde_tau(p)
    pos = (p.d / p.v, p.v)
    neg = (-p.v, -p.d / p.v)
    both = neg + pos

    lo1 = _extreme((eps,), pos, pos, both, "min")[0]
    hi1 = _extreme((eps,), pos, pos, both, "max")[0]
    img1 = t.image_of_interval(lo1, hi1)
    trap = t.image_of_interval(p.c, p.v)
    i_ok = lo1 > p.c and hi1 <= p.v and p.c <= img1[0] and img1[1] <= p.v
    i_ok = i_ok and p.c <= trap[0] and trap[1] <= p.v
    first = {
        "x_prime": (lo1, hi1),
        "tau_image": img1,
        "trap_interval_image": trap,
        "ok": i_ok,
    }

    lo2 = _extreme((eps,), pos, neg, neg, "min")[0]
    hi2 = _extreme((eps,), pos, neg, neg, "max")[0]
    img2 = t.image_of_interval(lo2, hi2)
    trap2 = t.image_of_interval(-p.v, -p.c)
    ii_ok = p.a < lo2 and hi2 <= p.b and -p.u <= img2[0] and img2[1] <= -p.c
    ii_ok = ii_ok and -p.v <= trap2[0] and trap2[1] <= -p.c
    second = {
        "x_prime": (lo2, hi2),
        "tau_image": img2,
        "trap_interval_image": trap2,
        "ok": ii_ok,
    }
    if k is not None:
        # confirm the trapping claim directly for the requested k
        a, b = img1
        c2, d2 = img2
        for _ in range(k - 1):
            a, b = t.image_of_interval(a, b)
            c2, d2 = t.image_of_interval(c2, d2)
        first["tau_k_image"] = (a, b)
        second["tau_k_image"] = (c2, d2)
        first["ok"] = first["ok"] and p.c <= a and b <= p.v
        second["ok"] = second["ok"] and -p.v <= c2 and d2 <= -p.c
    rep = FlowReport(eps, k, first, second)
    if strict and not rep.passed:
        which = "(i)" if not first["ok"] else "(ii)"
        raise FlowFailure(f"majority flow {which} fails at eps={eps}")
    return rep
