"""Local map family: the piecewise-linear map tau~, its increasing-branch
variant, the rescaled iterate tau^ = tau~^k / v and the local map tau = tau^^3.

Everything here is exact: breakpoints and values are Fractions.
"""

from __future__ import annotations

import enum
import json
import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Sequence

from ._rational import to_fraction

DEFAULT_BREAKPOINT_CAP = 10**7
DEFAULT_K_CAP = 100_000


class ParameterError(ValueError):
    """Invalid (eta, delta, gamma)."""


ValidationError = ParameterError


class EtaOutOfRange(ParameterError):
    pass


class DeltaOutOfRange(ParameterError):
    def __init__(self, delta, lower, upper):
        self.delta, self.lower, self.upper = delta, lower, upper
        super().__init__(
            f"delta={delta} outside open interval ({lower}, {upper}) "
            f"~ ({float(lower):.6g}, {float(upper):.6g})"
        )


class GammaTooLarge(ParameterError):
    pass


class BreakpointExplosion(RuntimeError):
    pass


class KNotFound(RuntimeError):
    pass


class Profile(str, enum.Enum):
    """Choice of slope/structure requirements used to pick k."""

    THEOREM1 = "theorem1"
    THEOREM2 = "theorem2"


def delta_bounds(eta) -> tuple[Fraction, Fraction]:
    """Open interval of admissible delta for a given eta."""
    eta = to_fraction(eta)
    lo = eta**3 / (2 - 4 * eta)
    hi = (eta**3 - 3 * eta**2 + eta) / (4 - 2 * eta)
    return lo, hi


@dataclass(frozen=True)
class MapParams:
    eta: Fraction
    delta: Fraction
    gamma: Fraction

    @property
    def a(self):
        return 1 - 4 * self.eta

    @property
    def b(self):
        return 1 - 2 * self.eta - 4 * self.delta

    @property
    def c(self):
        return 1 - 2 * self.eta - 3 * self.delta

    @property
    def d(self):
        return 1 - 2 * self.eta - 2 * self.delta

    @property
    def d1(self):
        """d' = d + gamma"""
        return self.d + self.gamma

    @property
    def d2(self):
        """d'' = d + 2 gamma"""
        return self.d + 2 * self.gamma

    @property
    def v(self):
        return 1 - self.eta

    @property
    def u(self):
        return self.v**2

    def ladder(self) -> dict[str, Fraction]:
        return {
            "a": self.a, "b": self.b, "c": self.c, "d": self.d,
            "d1": self.d1, "d2": self.d2, "u": self.u, "v": self.v,
        }

    def as_dict(self) -> dict[str, str]:
        return {"eta": str(self.eta), "delta": str(self.delta), "gamma": str(self.gamma)}

    def slope_target_theorem2(self) -> Fraction:
        return 12 * self.v / (self.u - self.c)

    def monotone_length_bound(self) -> Fraction:
        return (self.u - self.c) / (6 * self.v)


def validate_params(eta, delta, gamma) -> MapParams:
    """Check the admissible parameter region and return exact MapParams."""
    vals = []
    for name, x in (("eta", eta), ("delta", delta), ("gamma", gamma)):
        try:
            f = to_fraction(x)
        except (TypeError, ValueError) as exc:
            raise ParameterError(f"{name}: {exc}") from None
        if f <= 0:
            raise ParameterError(f"{name} must be positive, got {f}")
        vals.append(f)
    eta, delta, gamma = vals
    if eta >= Fraction(1, 4):
        raise EtaOutOfRange(f"eta={eta} must be < 1/4")
    lo, hi = delta_bounds(eta)
    if not lo < delta < hi:
        raise DeltaOutOfRange(delta, lo, hi)
    p = MapParams(eta, delta, gamma)
    if gamma >= (p.u - p.d) / 2:
        raise GammaTooLarge(f"gamma={gamma} must be < (u-d)/2 = {(p.u - p.d) / 2}")
    lad = [Fraction(0), p.a, p.b, p.c, p.d, p.d1, p.d2, p.u, p.v, Fraction(1)]
    if any(x >= y for x, y in zip(lad, lad[1:])):
        raise ParameterError(f"breakpoint ladder not strictly increasing: {lad}")
    return p


@dataclass(frozen=True)
class PiecewiseLinearMap:
    """Piecewise-linear map on [x_0, x_n].

    Piece i lives on [x_i, x_{i+1}] and runs linearly from ``left[i]`` to
    ``right[i]``.  Between pieces the map may jump; evaluation at an
    interior breakpoint then uses the piece to the right.
    """

    breakpoints: tuple
    left: tuple
    right: tuple

    def __post_init__(self):
        bp = self.breakpoints
        if len(bp) < 2 or len(self.left) != len(bp) - 1 or len(self.right) != len(bp) - 1:
            raise ValueError("inconsistent piece data")
        if any(x >= y for x, y in zip(bp, bp[1:])):
            raise ValueError("breakpoints must be strictly increasing")

    @classmethod
    def from_nodes(cls, xs: Sequence, ys: Sequence) -> "PiecewiseLinearMap":
        xs = tuple(map(to_fraction, xs))
        ys = tuple(map(to_fraction, ys))
        return cls(xs, ys[:-1], ys[1:])

    @property
    def n_pieces(self) -> int:
        return len(self.left)

    @property
    def domain(self):
        return self.breakpoints[0], self.breakpoints[-1]

    @cached_property
    def continuous(self) -> bool:
        return all(r == l for r, l in zip(self.right[:-1], self.left[1:]))

    @cached_property
    def slopes(self) -> tuple:
        bp = self.breakpoints
        return tuple(
            (self.right[i] - self.left[i]) / (bp[i + 1] - bp[i]) for i in range(self.n_pieces)
        )

    @property
    def values(self) -> tuple:
        """Node values; only meaningful for continuous maps."""
        if not self.continuous:
            raise ValueError("node values are ambiguous for a discontinuous map")
        return self.left + (self.right[-1],)

    def piece_index(self, x) -> int:
        bp = self.breakpoints
        if x < bp[0] or x > bp[-1]:
            raise ValueError(f"x={x} outside domain [{bp[0]}, {bp[-1]}]")
        i = bisect_right(bp, x) - 1
        return min(i, self.n_pieces - 1)

    def _eval_piece(self, i: int, x):
        x0 = self.breakpoints[i]
        return self.left[i] + self.slopes[i] * (x - x0)

    def __call__(self, x):
        x = to_fraction(x)
        return self._eval_piece(self.piece_index(x), x)

    def min_abs_slope(self) -> Fraction:
        return min(abs(s) for s in self.slopes)

    def piece_images(self) -> list[tuple]:
        return [tuple(sorted((l, r))) for l, r in zip(self.left, self.right)]

    def range(self) -> tuple:
        lo = min(min(p) for p in self.piece_images())
        hi = max(max(p) for p in self.piece_images())
        return lo, hi

    def image_of_interval(self, lo, hi) -> tuple:
        """Hull of f([lo, hi]).  Exact union for continuous maps."""
        lo, hi = to_fraction(lo), to_fraction(hi)
        if lo > hi:
            lo, hi = hi, lo
        bp = self.breakpoints
        i0, i1 = self.piece_index(lo), self.piece_index(hi)
        if hi == bp[i1] and i1 > i0:
            i1 -= 1
        vals = []
        for i in range(i0, i1 + 1):
            a = max(lo, bp[i])
            b = min(hi, bp[i + 1])
            vals.append(self._eval_piece(i, a))
            vals.append(self._eval_piece(i, b))
        return min(vals), max(vals)

    def turning_points(self) -> list:
        """Interior breakpoints where the slope changes sign (continuous maps)."""
        s = self.slopes
        return [
            self.breakpoints[i + 1]
            for i in range(self.n_pieces - 1)
            if (s[i] > 0) != (s[i + 1] > 0) or s[i] == 0 or s[i + 1] == 0
        ]

    def monotone_pieces(self) -> list[tuple]:
        """Maximal monotonicity intervals as (x_lo, x_hi, y_lo, y_hi).

        For a discontinuous map a jump also ends an interval.
        """
        out = []
        bp, s = self.breakpoints, self.slopes
        start = 0
        for i in range(1, self.n_pieces + 1):
            end = i == self.n_pieces
            if not end:
                same = (s[i] > 0) == (s[i - 1] > 0) and s[i] != 0 and s[i - 1] != 0
                end = not same or self.right[i - 1] != self.left[i]
            if end:
                ys = [self.left[start], self.right[i - 1]]
                out.append((bp[start], bp[i], min(ys), max(ys)))
                start = i
        return out

    def scaled(self, factor) -> "PiecewiseLinearMap":
        """Return factor * self (values scaled)."""
        f = to_fraction(factor)
        return PiecewiseLinearMap(
            self.breakpoints, tuple(f * y for y in self.left), tuple(f * y for y in self.right)
        )

    def simplified(self) -> "PiecewiseLinearMap":
        """Merge adjacent collinear pieces."""
        bp, L, R, S = [self.breakpoints[0]], [], [], []
        for i in range(self.n_pieces):
            if L and R[-1] == self.left[i] and S[-1] == self.slopes[i]:
                R[-1] = self.right[i]
                bp[-1] = self.breakpoints[i + 1]
                continue
            L.append(self.left[i])
            R.append(self.right[i])
            S.append(self.slopes[i])
            bp.append(self.breakpoints[i + 1])
        return PiecewiseLinearMap(tuple(bp), tuple(L), tuple(R))

    def to_float_arrays(self):
        import numpy as np

        return (
            np.array([float(x) for x in self.breakpoints]),
            np.array([float(y) for y in self.left]),
            np.array([float(y) for y in self.right]),
        )

    def to_json(self) -> str:
        doc = {
            "breakpoints": [str(x) for x in self.breakpoints],
            "continuous": self.continuous,
        }
        if self.continuous:
            doc["values"] = [str(y) for y in self.values]
        else:
            doc["values"] = [str(y) for y in self.left] + [str(self.right[-1])]
            doc["left"] = [str(y) for y in self.left]
            doc["right"] = [str(y) for y in self.right]
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "PiecewiseLinearMap":
        doc = json.loads(text)
        xs = [Fraction(x) for x in doc["breakpoints"]]
        if doc.get("continuous", True) and "left" not in doc:
            return cls.from_nodes(xs, [Fraction(y) for y in doc["values"]])
        return cls(
            tuple(xs),
            tuple(Fraction(y) for y in doc["left"]),
            tuple(Fraction(y) for y in doc["right"]),
        )


def identity_map(lo=-1, hi=1) -> PiecewiseLinearMap:
    return PiecewiseLinearMap.from_nodes([lo, hi], [lo, hi])


def _odd_from_positive(pos: Sequence[tuple]) -> PiecewiseLinearMap:
    neg = [(-x, -y) for x, y in reversed(pos[1:])]
    nodes = neg + list(pos)
    return PiecewiseLinearMap.from_nodes([p[0] for p in nodes], [p[1] for p in nodes])


def tilde_tau_nodes(params: MapParams) -> list[tuple]:
    p = params
    return [
        (Fraction(0), Fraction(0)), (p.a, -p.u), (p.b, -p.c), (p.c, p.c), (p.d, p.v),
        (p.d1, p.c), (p.d2, p.d), (p.u, p.u), (p.v, p.c), (Fraction(1), -p.v),
    ]


def build_tilde_tau(params: MapParams) -> PiecewiseLinearMap:
    """Continuous odd map [-1,1] -> [-v,v] through the node list."""
    return _odd_from_positive(tilde_tau_nodes(params))


def build_acute_tau(params: MapParams) -> PiecewiseLinearMap:
    """Flip every decreasing branch of tau~ into an increasing one."""
    t = build_tilde_tau(params)
    left, right = [], []
    for l, r in zip(t.left, t.right):
        lo, hi = min(l, r), max(l, r)
        left.append(lo)
        right.append(hi)
    return PiecewiseLinearMap(t.breakpoints, tuple(left), tuple(right))


def compose(outer: PiecewiseLinearMap, inner: PiecewiseLinearMap) -> PiecewiseLinearMap:
    """Exact piecewise-linear representation of outer o inner."""
    obp = outer.breakpoints
    bps = [inner.breakpoints[0]]
    L, R = [], []
    for i in range(inner.n_pieces):
        x0, x1 = inner.breakpoints[i], inner.breakpoints[i + 1]
        y0, y1 = inner.left[i], inner.right[i]
        if y0 == y1:
            val = outer(y0)
            L.append(val)
            R.append(val)
            bps.append(x1)
            continue
        lo, hi = min(y0, y1), max(y0, y1)
        j0 = bisect_right(obp, lo)
        j1 = bisect_left(obp, hi)
        cuts = list(obp[j0:j1])  # outer breakpoints strictly inside (lo, hi)
        if y0 > y1:
            cuts.reverse()
        ys = [y0] + cuts + [y1]
        slope_inv = (x1 - x0) / (y1 - y0)
        for ya, yb in zip(ys, ys[1:]):
            xb = x1 if yb == y1 else x0 + (yb - y0) * slope_inv
            m = min(ya, yb)
            j = min(bisect_right(obp, m) - 1, outer.n_pieces - 1)
            L.append(outer._eval_piece(j, ya))
            R.append(outer._eval_piece(j, yb))
            bps.append(xb)
    return PiecewiseLinearMap(tuple(bps), tuple(L), tuple(R))


def iterate_map(m: PiecewiseLinearMap, n: int, cap: int = DEFAULT_BREAKPOINT_CAP) -> PiecewiseLinearMap:
    """n-fold composition m o ... o m, exact."""
    if n < 1:
        raise ValueError("n must be >= 1")
    out = m
    for _ in range(n - 1):
        out = compose(m, out)
        if len(out.breakpoints) > cap:
            raise BreakpointExplosion(f"{len(out.breakpoints)} breakpoints > cap {cap}")
    return out


@dataclass(frozen=True)
class LocalMap:
    """(scale * base^k)^power evaluated by repeated exact evaluation.

    ``build_hat_tau`` returns power=1, ``build_tau`` power=3.  Use
    :meth:`as_piecewise` for the symbolic representation when k is small.
    """

    base: PiecewiseLinearMap
    k: int
    scale: Fraction
    power: int = 1
    params: MapParams | None = None

    def step(self, x):
        for _ in range(self.k):
            x = self.base(x)
        return self.scale * x

    def __call__(self, x):
        x = to_fraction(x)
        for _ in range(self.power):
            x = self.step(x)
        return x

    def image_of_interval(self, lo, hi) -> tuple:
        for _ in range(self.power):
            for _ in range(self.k):
                lo, hi = self.base.image_of_interval(lo, hi)
            lo, hi = self.scale * lo, self.scale * hi
        return lo, hi

    def as_piecewise(self, cap: int = DEFAULT_BREAKPOINT_CAP) -> PiecewiseLinearMap:
        one = iterate_map(self.base, self.k, cap).scaled(self.scale)
        return one if self.power == 1 else iterate_map(one, self.power, cap)

    def float_nodes(self):
        """Float breakpoints/values of the base map, nearest rounding."""
        return self.base.to_float_arrays()


def build_hat_tau(params: MapParams, k: int) -> LocalMap:
    return LocalMap(build_tilde_tau(params), int(k), 1 / params.v, 1, params)


def build_tau(params: MapParams, k: int) -> LocalMap:
    return LocalMap(build_tilde_tau(params), int(k), 1 / params.v, 3, params)


def build_check_tau(params: MapParams, k: int) -> LocalMap:
    """Increasing-branch analogue of tau^: acute^k / v."""
    return LocalMap(build_acute_tau(params), int(k), 1 / params.v, 1, params)


def min_slope(m) -> Fraction:
    """Exact minimum |slope| over all linear pieces.

    A LocalMap is handled without composing: its pieces follow paths of
    k*power pieces of the base map, see :func:`iterate_min_slopes`.
    """
    if isinstance(m, LocalMap):
        n = m.k * m.power
        for i, val in enumerate(iterate_min_slopes(m.base), start=1):
            if i == n:
                return val * abs(m.scale) ** m.power
    return m.min_abs_slope()


# ---------------------------------------------------------------- Markov DP


@dataclass(frozen=True)
class CellGraph:
    """Transitions between linear pieces of a Markov piecewise-linear map."""

    cells: tuple  # (lo, hi) per piece
    slopes: tuple  # |slope| per piece
    successors: tuple  # piece indices contained in each piece's image


def cell_graph(m: PiecewiseLinearMap) -> CellGraph:
    """Piece-level transitions; requires every piece image to be a union of pieces."""
    bp = m.breakpoints
    cells = tuple((bp[i], bp[i + 1]) for i in range(m.n_pieces))
    succ = []
    for i, (lo, hi) in enumerate(m.piece_images()):
        if lo not in bp or hi not in bp:
            raise ValueError(f"piece {cells[i]} image [{lo}, {hi}] not a union of pieces")
        j0, j1 = bp.index(lo), bp.index(hi)
        succ.append(tuple(range(j0, j1)))
    return CellGraph(cells, tuple(abs(s) for s in m.slopes), tuple(succ))


def iterate_min_slopes(m: PiecewiseLinearMap) -> Iterable[Fraction]:
    """Yield exact min |(m^n)'| for n = 1, 2, ... on a Markov map.

    On piece i, m^n has min slope |s_i| * min over successor pieces j of the
    (n-1)-step minimum starting in j; the recursion is exact because the
    pieces form a Markov partition.
    """
    g = cell_graph(m)
    cur = list(g.slopes)
    logs = [math.log(s) for s in g.slopes]
    curlog = logs[:]
    while True:
        yield min(cur)
        nxt, nxtlog = [], []
        for i, succ in enumerate(g.successors):
            best = succ[0]
            for j in succ[1:]:
                dl = curlog[j] - curlog[best]
                if dl < -1e-9 or (abs(dl) <= 1e-9 and cur[j] < cur[best]):
                    best = j
            nxt.append(g.slopes[i] * cur[best])
            nxtlog.append(logs[i] + curlog[best])
        cur, curlog = nxt, nxtlog


# ------------------------------------------------------------- lap images


def lap_images(m: PiecewiseLinearMap, n: int) -> set[tuple]:
    """Images of all maximal monotonicity intervals of m^n (continuous m).

    Each lap of m^n is a lap of m^(n-1) cut where its image crosses a
    turning point of m, so the image sets follow a recursion on intervals.
    """
    if not m.continuous:
        raise ValueError("lap_images needs a continuous map")
    tps = sorted(m.turning_points())
    cur = {(lo, hi) for _, _, lo, hi in m.monotone_pieces()}
    for _ in range(n - 1):
        nxt = set()
        for lo, hi in cur:
            cuts = [lo] + [t for t in tps if lo < t < hi] + [hi]
            for a, b in zip(cuts, cuts[1:]):
                ya, yb = m(a), m(b)
                nxt.add((min(ya, yb), max(ya, yb)))
        cur = nxt
    return cur


# ------------------------------------------------------------ k selection


@dataclass(frozen=True)
class KSelection:
    k: int
    profile: Profile
    slope_target: Fraction
    min_slope_hat: Fraction
    covering_ok: bool
    lap_bound: Fraction | None = None
    lap_bound_limit: Fraction | None = None

    def summary(self) -> dict:
        out = {
            "k": self.k,
            "profile": self.profile.value,
            "slope_target": str(self.slope_target),
            "min_slope_hat": float(self.min_slope_hat),
            "covering_ok": self.covering_ok,
        }
        if self.lap_bound is not None:
            out["lap_length_bound"] = float(self.lap_bound)
            out["lap_length_limit"] = float(self.lap_bound_limit)
        return out


def covering_holds(params: MapParams, k: int) -> bool:
    from .transfer import covering_check  # local import: transfer builds on this module

    return covering_check(params, k).passed


def lap_length_bound(params: MapParams, k: int, min_slope_hat: Fraction) -> Fraction:
    """Upper bound on the longest monotonicity interval of tau^.

    A lap J of tau^ is mapped with slope at least the minimum slope onto an
    interval of length |tau^(J)|, so |J| <= |tau^(J)| / min slope.
    """
    t = build_tilde_tau(params)
    longest = max(hi - lo for lo, hi in lap_images(t, k)) / params.v
    return longest / min_slope_hat


def select_k(
    params: MapParams,
    slope_target=4,
    profile: Profile | str = Profile.THEOREM1,
    k_cap: int = DEFAULT_K_CAP,
) -> KSelection:
    """Smallest k meeting the slope target plus the profile's side conditions."""
    profile = Profile(profile)
    if profile is Profile.THEOREM2:
        slope_target = max(to_fraction(slope_target), params.slope_target_theorem2())
    target = to_fraction(slope_target)
    if target < 4:
        raise ValueError("slope_target must be >= 4")
    t = build_tilde_tau(params)
    inv_v = 1 / params.v
    for k, mk in enumerate(iterate_min_slopes(t), start=1):
        if k > k_cap:
            raise KNotFound(f"no k <= {k_cap} reaches slope {target}")
        ms = mk * inv_v
        if ms < target:
            continue
        if not covering_holds(params, k):
            continue
        if profile is Profile.THEOREM2:
            bound = lap_length_bound(params, k, ms)
            limit = params.monotone_length_bound()
            if bound >= limit:
                continue
            return KSelection(k, profile, target, ms, True, bound, limit)
        return KSelection(k, profile, target, ms, True)
    raise AssertionError("unreachable")
