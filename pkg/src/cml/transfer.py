"""Transfer-operator analysis of the local maps.

Markov partitions and exact transition matrices, invariant step densities,
push-forward of step densities (exact or float), covering and contraction
checks for tau^, and an Ulam discretization for maps without Markov
structure.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from ._rational import charpoly, nullspace, to_fraction
from .map_core import (
    MapParams,
    PiecewiseLinearMap,
    build_tilde_tau,
    iterate_min_slopes,
    lap_images,
)


class NotMarkov(ValueError):
    def __init__(self, cell, image):
        self.cell, self.image = cell, image
        super().__init__(f"image of cell [{cell[0]}, {cell[1]}] is {image}, not a union of cells")


class NoFixedDensity(RuntimeError):
    pass


class ExpansionMismatch(AssertionError):
    pass


class CoveringFailure(AssertionError):
    pass


class ContractionNotMet(AssertionError):
    pass


# ------------------------------------------------------------ partitions


@dataclass(frozen=True)
class MarkovPartition:
    cut_points: tuple

    @property
    def cells(self):
        c = self.cut_points
        return [(c[i], c[i + 1]) for i in range(len(c) - 1)]


def _cell_image_components(m: PiecewiseLinearMap, lo, hi) -> list[tuple]:
    """Image of [lo, hi] as a sorted list of disjoint closed intervals."""
    bp = m.breakpoints
    pieces = []
    for i in range(m.n_pieces):
        a, b = max(lo, bp[i]), min(hi, bp[i + 1])
        if a >= b:
            continue
        ya, yb = m._eval_piece(i, a), m._eval_piece(i, b)
        pieces.append((min(ya, yb), max(ya, yb)))
    pieces.sort()
    merged = [list(pieces[0])]
    for a, b in pieces[1:]:
        if a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return [tuple(x) for x in merged]


def markov_check(m: PiecewiseLinearMap, cut_points: Sequence) -> MarkovPartition:
    """Verify every cell maps onto a union of cells, exactly."""
    cuts = tuple(sorted(set(map(to_fraction, cut_points))))
    cs = set(cuts)
    for lo, hi in zip(cuts, cuts[1:]):
        comps = _cell_image_components(m, lo, hi)
        for a, b in comps:
            if a not in cs or b not in cs:
                raise NotMarkov((lo, hi), comps)
    return MarkovPartition(cuts)


@dataclass(frozen=True)
class TransitionMatrix:
    """Density action of a Markov piecewise-linear map on step densities.

    ``entries[i][j]`` is the height produced on cell i by unit height on
    cell j; columns preserve mass when weighted by cell lengths.
    """

    cells: tuple
    entries: tuple

    @property
    def lengths(self):
        return [b - a for a, b in self.cells]

    def to_numpy(self) -> np.ndarray:
        return np.array([[float(x) for x in row] for row in self.entries])

    def apply(self, heights: Sequence) -> list:
        n = len(self.cells)
        return [sum(self.entries[i][j] * heights[j] for j in range(n)) for i in range(n)]

    def column_masses(self) -> list:
        L = self.lengths
        n = len(self.cells)
        return [sum(L[i] * self.entries[i][j] for i in range(n)) / L[j] for j in range(n)]


def transition_matrix(m: PiecewiseLinearMap, cut_points: Sequence | None = None) -> TransitionMatrix:
    """Exact transition matrix on the cut points refined by the map breakpoints."""
    if cut_points is None:
        cuts = list(m.breakpoints)
    else:
        cuts = sorted(set(map(to_fraction, cut_points)))
        lo, hi = cuts[0], cuts[-1]
        cuts = sorted(set(cuts) | {x for x in m.breakpoints if lo < x < hi})
    part = markov_check(m, cuts)
    cells = part.cells
    index = {c: i for i, c in enumerate(part.cut_points)}
    n = len(cells)
    M = [[Fraction(0)] * n for _ in range(n)]
    for j, (lo, hi) in enumerate(cells):
        i_piece = m.piece_index(lo)
        s = abs(m.slopes[i_piece])
        if s == 0:
            raise NotMarkov((lo, hi), "constant branch")
        ya, yb = m(lo), m._eval_piece(i_piece, hi)
        ya, yb = min(ya, yb), max(ya, yb)
        if ya not in index or yb not in index:
            raise NotMarkov((lo, hi), [(ya, yb)])
        for i in range(index[ya], index[yb]):
            M[i][j] += 1 / s
    return TransitionMatrix(tuple(cells), tuple(tuple(r) for r in M))


# ------------------------------------------------------------ step densities


@dataclass(frozen=True)
class StepDensity:
    """Piecewise-constant function; heights[i] on [partition[i], partition[i+1])."""

    partition: tuple
    heights: tuple

    def __post_init__(self):
        if len(self.partition) != len(self.heights) + 1:
            raise ValueError("need len(partition) == len(heights) + 1")

    @classmethod
    def indicator(cls, lo, hi, height=1):
        return cls((lo, hi), (height,))

    @classmethod
    def from_arrays(cls, partition, heights):
        return cls(tuple(partition), tuple(heights))

    @property
    def cells(self):
        p = self.partition
        return [(p[i], p[i + 1]) for i in range(len(self.heights))]

    @property
    def support(self):
        return self.partition[0], self.partition[-1]

    def __call__(self, x):
        p = self.partition
        if x < p[0] or x > p[-1]:
            return 0 * self.heights[0]
        i = int(np.searchsorted(np.asarray([float(t) for t in p]), float(x), side="right")) - 1
        # fix float rounding near a cut
        i = min(max(i, 0), len(self.heights) - 1)
        while i > 0 and x < p[i]:
            i -= 1
        while i < len(self.heights) - 1 and x >= p[i + 1]:
            i += 1
        return self.heights[i]

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        p = np.array([float(t) for t in self.partition])
        h = np.array([float(t) for t in self.heights])
        idx = np.searchsorted(p, x, side="right") - 1
        out = np.zeros_like(np.asarray(x, dtype=float))
        ok = (idx >= 0) & (x <= p[-1])
        idx = np.clip(idx, 0, len(h) - 1)
        out[ok] = h[idx[ok]]
        return out

    def integral(self):
        return sum(h * (b - a) for h, (a, b) in zip(self.heights, self.cells))

    def integral_over(self, lo, hi):
        tot = 0 * self.heights[0]
        for h, (a, b) in zip(self.heights, self.cells):
            w = min(b, hi) - max(a, lo)
            if w > 0:
                tot += h * w
        return tot

    def l1_norm(self):
        return sum(abs(h) * (b - a) for h, (a, b) in zip(self.heights, self.cells))

    def variation(self):
        """Total variation on the closed interval, counting the end jumps."""
        h = self.heights
        return abs(h[0]) + sum(abs(y - x) for x, y in zip(h, h[1:])) + abs(h[-1])

    def refine(self, points) -> "StepDensity":
        pts = sorted(set(self.partition) | {p for p in points})
        zero = 0 * self.heights[0]
        heights = []
        for a, b in zip(pts, pts[1:]):
            if a < self.partition[0] or b > self.partition[-1]:
                heights.append(zero)
            else:
                heights.append(self((a + b) / 2) if isinstance(a, Fraction) else self._at_cell(a))
        return StepDensity(tuple(pts), tuple(heights))

    def _at_cell(self, a):
        p = self.partition
        i = int(np.searchsorted(np.asarray([float(t) for t in p]), float(a), side="right")) - 1
        return self.heights[min(max(i, 0), len(self.heights) - 1)]

    def _binary(self, other: "StepDensity", op) -> "StepDensity":
        pts = set(self.partition) | set(other.partition)
        a, b = self.refine(pts), other.refine(pts)
        return StepDensity(a.partition, tuple(op(x, y) for x, y in zip(a.heights, b.heights)))

    def __add__(self, other):
        return self._binary(other, lambda x, y: x + y)

    def __sub__(self, other):
        return self._binary(other, lambda x, y: x - y)

    def scale(self, c) -> "StepDensity":
        return StepDensity(self.partition, tuple(c * h for h in self.heights))

    def rescale_x(self, c) -> "StepDensity":
        """Density of the push-forward under x -> c x (c > 0)."""
        return StepDensity(tuple(c * x for x in self.partition), tuple(h / c for h in self.heights))

    def reflect(self) -> "StepDensity":
        """x -> f(-x)."""
        return StepDensity(
            tuple(-x for x in reversed(self.partition)), tuple(reversed(self.heights))
        )

    def compact(self) -> "StepDensity":
        p, h = [self.partition[0]], []
        for (a, b), y in zip(self.cells, self.heights):
            if h and h[-1] == y:
                p[-1] = b
            else:
                h.append(y)
                p.append(b)
        return StepDensity(tuple(p), tuple(h))

    def l1_distance(self, other: "StepDensity"):
        return (self - other).l1_norm()

    def to_float(self) -> "StepDensity":
        return StepDensity(tuple(float(x) for x in self.partition), tuple(float(h) for h in self.heights))

    def csv_rows(self):
        for (a, b), h in zip(self.cells, self.heights):
            yield float(a), float(b), float(h)


def push_forward(m: PiecewiseLinearMap, f: StepDensity) -> StepDensity:
    """Exact Perron-Frobenius image of a step density under a PL map."""
    events: dict = defaultdict(Fraction)
    bp = m.breakpoints
    fp = f.partition
    i = max(0, m.piece_index(max(fp[0], bp[0])))
    j = 0
    while i < m.n_pieces and j < len(f.heights):
        lo = max(bp[i], fp[j])
        hi = min(bp[i + 1], fp[j + 1])
        h = f.heights[j]
        if hi > lo and h != 0:
            s = m.slopes[i]
            if s == 0:
                raise ValueError("push-forward through a constant branch is singular")
            ya, yb = m._eval_piece(i, lo), m._eval_piece(i, hi)
            w = h / abs(s)
            events[min(ya, yb)] += w
            events[max(ya, yb)] -= w
        if bp[i + 1] <= fp[j + 1]:
            i += 1
        else:
            j += 1
    lo, hi = m.domain
    pts = sorted(set(events) | {lo, hi})
    heights = []
    run = Fraction(0)
    for x in pts[:-1]:
        run += events.get(x, 0)
        heights.append(run)
    return StepDensity(tuple(pts), tuple(heights)).compact()


class FloatPushForward:
    """Vectorized float push-forward for a fixed PL map.

    Event points within ``tol`` of each other (or of a snap point) are
    merged so that repeated application does not accumulate slivers.
    """

    def __init__(self, m: PiecewiseLinearMap, snap_points=None, tol: float = 1e-13):
        bp, yl, yr = m.to_float_arrays()
        self.bp = bp
        self.yl = yl
        self.slope = np.array([float(s) for s in m.slopes])
        if np.any(self.slope == 0):
            raise ValueError("constant branch")
        snap = bp if snap_points is None else np.asarray(snap_points, dtype=float)
        self.snap = np.unique(np.concatenate([snap, bp]))
        self.tol = tol

    def _snap(self, x):
        idx = np.clip(np.searchsorted(self.snap, x), 1, len(self.snap) - 1)
        left, right = self.snap[idx - 1], self.snap[idx]
        best = np.where(np.abs(x - left) <= np.abs(right - x), left, right)
        return np.where(np.abs(best - x) <= self.tol, best, x)

    def __call__(self, edges: np.ndarray, heights: np.ndarray):
        z = np.union1d(edges, self.bp)
        z = z[(z >= max(edges[0], self.bp[0])) & (z <= min(edges[-1], self.bp[-1]))]
        mid = 0.5 * (z[:-1] + z[1:])
        pi = np.clip(np.searchsorted(self.bp, mid, side="right") - 1, 0, len(self.slope) - 1)
        ci = np.clip(np.searchsorted(edges, mid, side="right") - 1, 0, len(heights) - 1)
        h = heights[ci]
        keep = (h != 0) & (z[1:] > z[:-1])
        pi, ci, h = pi[keep], ci[keep], h[keep]
        x0, x1 = z[:-1][keep], z[1:][keep]
        s = self.slope[pi]
        ya = self.yl[pi] + s * (x0 - self.bp[pi])
        yb = self.yl[pi] + s * (x1 - self.bp[pi])
        lo = self._snap(np.minimum(ya, yb))
        hi = self._snap(np.maximum(ya, yb))
        w = h / np.abs(s)
        pts = np.concatenate([lo, hi, self.bp[[0, -1]]])
        wts = np.concatenate([w, -w, [0.0, 0.0]])
        order = np.argsort(pts, kind="stable")
        pts, wts = pts[order], wts[order]
        # cluster near-equal points
        newgrp = np.concatenate([[True], np.diff(pts) > self.tol])
        gid = np.cumsum(newgrp) - 1
        upts = pts[newgrp]
        uw = np.zeros(len(upts))
        np.add.at(uw, gid, wts)
        out_h = np.cumsum(uw)[:-1]
        return upts, out_h


# ------------------------------------------------------- invariant densities


@dataclass(frozen=True)
class FixedSpace:
    """Fixed probability densities of a Markov map, one per ergodic class."""

    dimension: int
    basis: tuple  # StepDensity, each a probability density
    matrix: TransitionMatrix

    @property
    def density(self) -> StepDensity:
        if self.dimension != 1:
            raise ValueError(f"fixed space has dimension {self.dimension}")
        return self.basis[0]


def _closed_classes(succ: list[list[int]]) -> list[list[int]]:
    n = len(succ)
    reach = []
    for i in range(n):
        seen, stack = {i}, [i]
        while stack:
            x = stack.pop()
            for y in succ[x]:
                if y not in seen:
                    seen.add(y)
                    stack.append(y)
        reach.append(seen)
    classes, done = [], set()
    for i in range(n):
        if i in done:
            continue
        cls = {j for j in reach[i] if i in reach[j]}
        done |= cls
        # closed: nothing leaves the class
        if all(reach[j] <= cls for j in cls):
            classes.append(sorted(cls))
    return classes


def invariant_density(m: PiecewiseLinearMap, cut_points: Sequence | None = None) -> FixedSpace:
    """Exact fixed densities via the rational nullspace of M - I."""
    T = transition_matrix(m, cut_points)
    n = len(T.cells)
    A = [[T.entries[i][j] - (1 if i == j else 0) for j in range(n)] for i in range(n)]
    ns = nullspace(A)
    if not ns:
        raise NoFixedDensity("eigenvalue 1 missing")
    # image of cell j hits cell i  ->  j -> i
    succ = [[i for i in range(n) if T.entries[i][j] != 0] for j in range(n)]
    classes = _closed_classes(succ)
    if len(classes) != len(ns):
        raise NoFixedDensity(f"nullspace dim {len(ns)} != {len(classes)} closed classes")
    L = T.lengths
    basis = []
    for cls in classes:
        sub = [[A[i][j] for j in cls] for i in cls]
        vec = nullspace(sub)
        if len(vec) != 1:
            raise NoFixedDensity(f"class {cls} not irreducible")
        full = [Fraction(0)] * n
        for idx, x in zip(cls, vec[0]):
            full[idx] = x
        mass = sum(h * l for h, l in zip(full, L))
        full = [h / mass for h in full]
        if any(h < 0 for h in full):
            raise NoFixedDensity("negative fixed density")
        parts = tuple([T.cells[0][0]] + [c[1] for c in T.cells])
        basis.append(StepDensity(parts, tuple(full)).compact())
    # positive-side class first
    basis.sort(key=lambda d: -float(d.integral_over(0, d.partition[-1])) if d.partition[-1] > 0 else 0.0)
    return FixedSpace(len(ns), tuple(basis), T)


def h_tilde(params: MapParams) -> StepDensity:
    """Invariant probability density of tau~ on [c, v]."""
    p = params
    t = build_tilde_tau(p)
    return invariant_density(t, [p.c, p.d, p.d1, p.d2, p.u, p.v]).density


def h_tilde_alpha(params: MapParams, alpha) -> StepDensity:
    """alpha h~(x) + (1 - alpha) h~(-x) on [-1, 1]."""
    alpha = to_fraction(alpha)
    h = h_tilde(params)
    full = StepDensity((Fraction(-1), Fraction(1)), (Fraction(0),))
    return (full + h.scale(alpha) + h.reflect().scale(1 - alpha)).compact()


def h_hat_alpha(params: MapParams, alpha) -> StepDensity:
    """v h~_alpha(v x), the rescaled density living on [-1, 1]."""
    v = params.v
    h = h_tilde_alpha(params, alpha)
    out = StepDensity(tuple(x / v for x in h.partition), tuple(v * y for y in h.heights))
    # the stretched domain beyond [-1, 1] carries zero height
    return _restrict(out, -1, 1)


def _restrict(f: StepDensity, lo, hi) -> StepDensity:
    lo, hi = to_fraction(lo), to_fraction(hi)
    g = f.refine([lo, hi])
    p, h = [], []
    for (a, b), y in zip(g.cells, g.heights):
        if a >= lo and b <= hi:
            if not p:
                p.append(a)
            p.append(b)
            h.append(y)
    return StepDensity(tuple(p), tuple(h))


# ----------------------------------------------------------- gamma expansion


def expansion_coefficients(eta, delta) -> dict[str, Fraction]:
    """First-order coefficients in gamma of the three cell probabilities."""
    e, s = to_fraction(eta), to_fraction(delta)
    den = e**5 + 3 * s * e**4 + 4 * s * e**3 + 12 * s**2 * e**2 + 4 * s**2 * e + 12 * s**3
    return {
        "c_d": (e**2 + 4 * s) / (e**4 + 4 * s * e**2 + 4 * s**2),
        "d_u": -(3 * e**3 + 10 * s * e + 12 * s**2 - 3 * s * e**2 - 2 * e**4) / den,
        "u_v": (6 * s * e + 2 * e**3 - 6 * s * e**2 - 2 * e**4) / den,
    }


def cell_probabilities(params: MapParams) -> dict[str, Fraction]:
    h = h_tilde(params)
    p = params
    return {
        "c_d": h.integral_over(p.c, p.d),
        "d_u": h.integral_over(p.d, p.u),
        "u_v": h.integral_over(p.u, p.v),
    }


@dataclass
class ExpansionReport:
    eta: Fraction
    delta: Fraction
    gammas: list
    formula: dict
    fitted: dict
    remainder_coef: dict
    rel_error: dict
    probabilities: list
    tol: float
    passed: bool

    def rows(self):
        for key in self.formula:
            yield {
                "integral": key,
                "formula": float(self.formula[key]),
                "fitted": float(self.fitted[key]),
                "rel_error": float(self.rel_error[key]),
                "gamma2_coef": float(self.remainder_coef[key]),
            }


def gamma_expansion_check(
    eta,
    delta,
    gammas: Sequence = (Fraction(1, 10**4), Fraction(1, 10**5), Fraction(1, 10**6)),
    tol: float = 1e-3,
    strict: bool = False,
) -> ExpansionReport:
    """Compare exact cell probabilities with the first-order gamma formulas.

    The linear coefficient is extracted by Richardson extrapolation over the
    two smallest gammas, the gamma^2 coefficient by least squares on the
    remainder.
    """
    eta, delta = to_fraction(eta), to_fraction(delta)
    from .map_core import validate_params

    gs = sorted(map(to_fraction, gammas), reverse=True)
    coef = expansion_coefficients(eta, delta)
    probs = [cell_probabilities(validate_params(eta, delta, g)) for g in gs]
    base = {"c_d": 0, "d_u": 1, "u_v": 0}
    fitted, rem, rel = {}, {}, {}
    for key in coef:
        ratios = [(pr[key] - base[key]) / g for pr, g in zip(probs, gs)]
        g1, g2 = gs[-2], gs[-1]
        r1, r2 = ratios[-2], ratios[-1]
        fitted[key] = (g1 * r2 - g2 * r1) / (g1 - g2)
        # remainder R(g) = P - base - coef g ~ A g^2
        num = sum((pr[key] - base[key] - coef[key] * g) * g**2 for pr, g in zip(probs, gs))
        den = sum(g**4 for g in gs)
        rem[key] = num / den
        rel[key] = abs(fitted[key] - coef[key]) / abs(coef[key])
    passed = all(float(r) <= tol for r in rel.values())
    rep = ExpansionReport(eta, delta, gs, coef, fitted, rem, rel, probs, tol, passed)
    if strict and not passed:
        raise ExpansionMismatch(f"relative errors {({k: float(v) for k, v in rel.items()})}")
    return rep


# ----------------------------------------------------------------- covering


@dataclass
class CoveringReport:
    k: int
    n_lap_images: int
    failures: list
    q: Fraction
    q_interval: tuple
    q_ok: bool

    @property
    def passed(self) -> bool:
        return not self.failures


def covering_q(params: MapParams) -> Fraction:
    p = params
    return (p.u - p.c) / p.v * (p.u - p.c) / (p.v - p.u)


def covering_check(params: MapParams, k: int, strict: bool = False) -> CoveringReport:
    """Exact check that tau^^3 maps every lap of tau^ onto [-1, 1].

    Uses the lap-image recursion of :func:`lap_images` so tau~^k is never
    composed symbolically.
    """
    t = build_tilde_tau(params)
    inv_v = 1 / params.v

    def hat_image(lo, hi):
        for _ in range(k):
            lo, hi = t.image_of_interval(lo, hi)
        return lo * inv_v, hi * inv_v

    failures = []
    images = lap_images(t, k)
    for lo, hi in sorted(images):
        j1 = (lo * inv_v, hi * inv_v)
        j2 = hat_image(*j1)
        j3 = hat_image(*j2)
        if j3 != (-1, 1):
            failures.append({"lap_image": (lo, hi), "tau_hat3": j3})
    q = covering_q(params)
    qi = t.image_of_interval(params.c / params.v, params.v)
    rep = CoveringReport(k, len(images), failures, q, qi, qi == (params.c, params.c + q))
    if strict and failures:
        raise CoveringFailure(f"k={k}: {failures[0]}")
    return rep


# ------------------------------------------------------------------ mixing


@dataclass
class MixingReport:
    rho: float
    eigenvalues: np.ndarray
    charpoly: list
    C: float
    decay: list  # uniform-start L1 distances, n = 0..n_max


def _float_pf_iterate(m: PiecewiseLinearMap, f: StepDensity, n: int, scale=None, snap=None):
    """Yield float step densities P^n f (edges, heights) for n = 1..n."""
    pf = FloatPushForward(m, snap_points=snap)
    e = np.array([float(x) for x in f.partition])
    h = np.array([float(y) for y in f.heights])
    for _ in range(n):
        e, h = pf(e, h)
        yield e, h


def _union_edges(*edge_arrays, tol: float = 1e-12) -> np.ndarray:
    """Sorted union of edge arrays with near-duplicates (float noise) merged."""
    z = np.unique(np.concatenate(edge_arrays))
    keep = np.concatenate([[True], np.diff(z) > tol])
    return z[keep]


def _l1_float(e1, h1, e2, h2):
    z = _union_edges(e1, e2)
    mid = 0.5 * (z[:-1] + z[1:])

    def ev(e, h):
        idx = np.searchsorted(e, mid, side="right") - 1
        ok = (idx >= 0) & (idx < len(h))
        out = np.zeros(len(mid))
        out[ok] = h[idx[ok]]
        return out

    return float(np.sum(np.abs(ev(e1, h1) - ev(e2, h2)) * np.diff(z)))


def _var_float(h):
    return float(abs(h[0]) + np.sum(np.abs(np.diff(h))) + abs(h[-1]))


def estimate_mixing_rate(params: MapParams, n_max: int = 30) -> MixingReport:
    """Second eigenvalue modulus of tau~ on [c, v] and an empirical C."""
    p = params
    t = build_tilde_tau(p)
    cuts = [p.c, p.d, p.d1, p.d2, p.u, p.v]
    T = transition_matrix(t, cuts)
    cp = charpoly(T.entries)
    roots = np.roots([float(x) for x in cp])
    mods = np.sort(np.abs(roots))[::-1]
    # drop the Perron root
    rho = float(mods[1])
    h = h_tilde(p)
    tests = [StepDensity((p.c, p.v), (1 / (p.v - p.c),))]
    for a, b in zip(cuts, cuts[1:]):
        tests.append(StepDensity((a, b), (1 / (b - a),)))
    C = 0.0
    decay = []
    # test functions jump only at nodes, so exact iteration stays small
    for idx, f in enumerate(tests):
        var0 = float(f.variation())
        g = f
        for n in range(n_max + 1):
            dist = float(g.l1_distance(h))
            if n > 0:
                C = max(C, dist / (rho**n * var0))
            if idx == 0:
                decay.append(dist)
            g = push_forward(t, g)
    return MixingReport(rho, roots, cp, C, decay)


# ------------------------------------------------------------- contraction


def dyadic_suite(n_total: int = 50) -> list[StepDensity]:
    """Constant function plus indicators of dyadic subintervals of [-1, 1]."""
    out = [StepDensity((Fraction(-1), Fraction(1)), (Fraction(1, 2),))]
    level = 1
    while len(out) < n_total:
        cells = [(Fraction(-1) + Fraction(2 * i, 2**level), Fraction(-1) + Fraction(2 * (i + 1), 2**level))
                 for i in range(2**level)]
        need = n_total - len(out)
        if len(cells) > need:
            pick = np.unique(np.round(np.linspace(0, len(cells) - 1, need)).astype(int))
            cells = [cells[i] for i in pick]
        out.extend(StepDensity(c, (Fraction(1),)) for c in cells)
        level += 1
    return out[:n_total]


def _best_alpha_var(e, h, mass, hplus, hminus):
    """min over alpha in [0,1] of var(g - mass*(alpha h+ + (1-alpha) h-)).

    The objective is convex piecewise linear in alpha; evaluate at the
    breakpoints and the ends.
    """
    z = _union_edges(e, hplus[0], hminus[0])
    mid = 0.5 * (z[:-1] + z[1:])

    def ev(ed, hd):
        idx = np.searchsorted(ed, mid, side="right") - 1
        ok = (idx >= 0) & (idx < len(hd))
        out = np.zeros(len(mid))
        out[ok] = hd[idx[ok]]
        return out

    g, hp, hm = ev(e, h), ev(*hplus) * mass, ev(*hminus) * mass
    # values as A + alpha*B
    A = np.concatenate([[0.0], g - hm, [0.0]])
    B = np.concatenate([[0.0], -(hp - hm), [0.0]])
    dA, dB = np.diff(A), np.diff(B)
    cand = [0.0, 1.0]
    nz = dB != 0
    cand += [float(x) for x in np.clip(-dA[nz] / dB[nz], 0, 1)]
    cand = np.unique(cand)
    vals = np.abs(dA[None, :] + cand[:, None] * dB[None, :]).sum(axis=1)
    i = int(np.argmin(vals))
    return float(cand[i]), float(vals[i])


@dataclass
class ContractionReport:
    kappa: float
    k_values: list
    max_ratio: list  # per k
    worst_function: list
    mass_concentration: dict  # alpha -> exact mass on [d/v, u/v] sym
    smallest_k: int | None
    s4_mass: float
    s4_ratio_estimate: list

    @property
    def passed(self) -> bool:
        return self.smallest_k is not None and min(self.mass_concentration.values()) > 1 - self.kappa


def contraction_check(
    params: MapParams,
    kappa: float,
    k_values: Sequence[int] | None = None,
    k_max: int = 200,
    n_functions: int = 50,
    strict: bool = False,
) -> ContractionReport:
    """Variation contraction of P_tau^ toward the family h^_alpha.

    P_tau^ f equals the rescaled P_tau~^k f, so one trajectory of tau~ per
    test function serves every k up to its maximum.
    """
    p = params
    t = build_tilde_tau(p)
    v = float(p.v)
    hp = h_hat_alpha(p, 1).to_float()
    hm = h_hat_alpha(p, 0).to_float()
    hplus = (np.array(hp.partition), np.array(hp.heights))
    hminus = (np.array(hm.partition), np.array(hm.heights))
    ks = sorted(set(k_values)) if k_values is not None else list(range(1, k_max + 1))
    kmax = ks[-1]
    kset = set(ks)
    ratios = {k: [] for k in ks}
    suite = dyadic_suite(n_functions)
    for f in suite:
        var_f = float(f.variation())
        mass = float(f.integral())
        for n, (e, h) in enumerate(_float_pf_iterate(t, f, kmax), start=1):
            if n in kset:
                _, val = _best_alpha_var(e / v, h * v, mass, hplus, hminus)
                ratios[n].append(val / var_f)
    max_ratio = [max(ratios[k]) for k in ks]
    worst = [int(np.argmax(ratios[k])) for k in ks]
    smallest = next((k for k, r in zip(ks, max_ratio) if r <= kappa), None)
    mass = {}
    for alpha in (Fraction(0), Fraction(1, 2), Fraction(1)):
        h = h_hat_alpha(p, alpha)
        val = h.integral_over(-p.u / p.v, -p.d / p.v) + h.integral_over(p.d / p.v, p.u / p.v)
        mass[alpha] = val
    m1 = float(min(mass.values()))
    rep = ContractionReport(
        kappa, ks, max_ratio, worst, mass, smallest, m1**4, [min(1.0, 4 * r) for r in max_ratio]
    )
    if strict and not rep.passed:
        raise ContractionNotMet(f"no k in [{ks[0]}, {kmax}] reaches kappa={kappa}")
    return rep


# ------------------------------------------------------------ Lasota-Yorke


def lasota_yorke_beta(params: MapParams) -> Fraction:
    """beta = 2 max over linear pieces of tau^ of 1/|image|.

    A linear piece of tau~^k ends in some cell whose image it inherits, so the
    smallest image comes from the single-step cell images, rescaled by 1/v.
    """
    t = build_tilde_tau(params)
    smallest = min(hi - lo for lo, hi in t.piece_images())
    return 2 * params.v / smallest


def hat_push_forward_float(params: MapParams, k: int, f: StepDensity):
    """P_tau^ f as float arrays (edges, heights)."""
    t = build_tilde_tau(params)
    v = float(params.v)
    e = h = None
    for e, h in _float_pf_iterate(t, f, k):
        pass
    return e / v, h * v


def hat_push_forward(params: MapParams, k: int, f: StepDensity) -> StepDensity:
    """Exact P_tau^ f."""
    t = build_tilde_tau(params)
    g = f
    for _ in range(k):
        g = push_forward(t, g)
    return g.rescale_x(1 / params.v)


# ------------------------------------------------------------------- Ulam


def ulam_operator(
    m,
    n_cells: int | None = None,
    *,
    edges: Sequence | None = None,
    breaks: Sequence | None = None,
    domain=(-1.0, 1.0),
    max_depth: int = 30,
) -> np.ndarray:
    """Row-stochastic Ulam matrix, P[i, j] = m(C_i & T^-1 C_j) / m(C_i).

    ``m`` may be a PiecewiseLinearMap (handled piece by piece in closed form)
    or a vectorized callable that is monotone between consecutive ``breaks``;
    the latter is resolved by bisecting until a sub-interval's endpoint
    images fall in the same cell.
    """
    if edges is None:
        if n_cells is None or n_cells < 2:
            raise ValueError("need n_cells >= 2 or explicit edges")
        edges = np.linspace(domain[0], domain[1], n_cells + 1)
    edges = np.asarray([float(x) for x in edges])
    n = len(edges) - 1
    P = np.zeros((n, n))
    if isinstance(m, PiecewiseLinearMap):
        bp, yl, _ = m.to_float_arrays()
        sl = np.array([float(s) for s in m.slopes])
        for i in range(n):
            lo, hi = edges[i], edges[i + 1]
            for pi in range(m.n_pieces):
                a, b = max(lo, bp[pi]), min(hi, bp[pi + 1])
                if b <= a:
                    continue
                ya = yl[pi] + sl[pi] * (a - bp[pi])
                yb = yl[pi] + sl[pi] * (b - bp[pi])
                if sl[pi] == 0:
                    j = min(max(np.searchsorted(edges, ya, side="right") - 1, 0), n - 1)
                    P[i, j] += b - a
                    continue
                y0, y1 = min(ya, yb), max(ya, yb)
                j0 = max(np.searchsorted(edges, y0, side="right") - 1, 0)
                j1 = min(np.searchsorted(edges, y1, side="left"), n)
                for j in range(j0, j1):
                    w = min(y1, edges[j + 1]) - max(y0, edges[j])
                    if w > 0:
                        P[i, j] += w / abs(sl[pi])
            P[i] /= hi - lo
        return P
    brk = np.sort(np.asarray(breaks if breaks is not None else [], dtype=float))

    def cell_of(y):
        return int(min(max(np.searchsorted(edges, y, side="right") - 1, 0), n - 1))

    for i in range(n):
        lo, hi = edges[i], edges[i + 1]
        pts = [lo] + [b for b in brk if lo < b < hi] + [hi]
        stack = []
        for a, b in zip(pts, pts[1:]):
            stack.append((a, b, 0))
        while stack:
            a, b, depth = stack.pop()
            ya, yb = float(m(np.array([a]))[0]), float(m(np.array([b]))[0])
            ca, cb = cell_of(ya), cell_of(yb)
            if ca == cb:
                P[i, ca] += b - a
            elif depth >= max_depth:
                y0, y1 = min(ya, yb), max(ya, yb)
                span = y1 - y0
                if span <= 0:
                    P[i, ca] += b - a
                    continue
                for j in range(min(ca, cb), max(ca, cb) + 1):
                    w = min(y1, edges[j + 1]) - max(y0, edges[j])
                    if w > 0:
                        P[i, j] += (b - a) * w / span
            else:
                c = 0.5 * (a + b)
                stack.append((a, c, depth + 1))
                stack.append((c, b, depth + 1))
        P[i] /= hi - lo
    return P


def ulam_apply(P: np.ndarray, edges: np.ndarray, heights: np.ndarray) -> np.ndarray:
    """Push cell heights through a row-stochastic Ulam matrix."""
    w = np.diff(edges)
    return (heights * w) @ P / w
