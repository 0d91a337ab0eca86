"""Smoothed circle-map variant.

zeta concatenates the inverse branches of the increasing-branch map
tau_check = acute^k / v, one window of length 2 per monotone branch, with flat
plateaus where a branch is not onto.  Gaussian smoothing of zeta has a
closed form: a continuous piecewise-linear function is linear plus hinges,
and the hinge max(x - x_m, 0) convolves to sigma * (t Phi(t) + phi(t)) with
t = (x - x_m) / sigma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property

import numba as nb
import numpy as np

from .map_core import (
    MapParams,
    PiecewiseLinearMap,
    Profile,
    build_acute_tau,
    iterate_map,
    select_k,
    validate_params,
)

TAIL = 9.0  # Gaussian tail cutoff in units of sigma; G(9) < 1e-20
MIN_SIGMA = 1e-8
DEFAULT_SIGMAS = (1e-1, 1e-2, 1e-3, 1e-4)


class NonMonotoneBranch(ValueError):
    pass


class SigmaTooSmall(ValueError):
    pass


class InversionFailure(RuntimeError):
    pass


class RateNotLinear(AssertionError):
    pass


class ContractionNotObserved(AssertionError):
    pass


def default_smooth_params() -> tuple[MapParams, int]:
    """eta = 1/5, delta = 1/50, gamma = 1/50 with the theorem-1 k."""
    p = validate_params(Fraction(1, 5), Fraction(1, 50), Fraction(1, 50))
    return p, select_k(p, 4, Profile.THEOREM1).k


def build_check_tau_symbolic(params: MapParams, k: int) -> PiecewiseLinearMap:
    return iterate_map(build_acute_tau(params), k).scaled(1 / params.v)


# --------------------------------------------------------------------- zeta


@dataclass(frozen=True)
class ZetaFunction:
    """Continuous nondecreasing PL map on [-1, 2p-1], extended by zeta(x+2p) = zeta(x)+2."""

    p: int
    laps: tuple  # exact a_0 < ... < a_p
    lap_images: tuple  # exact (lo, hi) of each branch
    xs_exact: tuple
    ys_exact: tuple
    k: int | None = None

    @cached_property
    def xs(self) -> np.ndarray:
        return np.array([float(x) for x in self.xs_exact])

    @cached_property
    def ys(self) -> np.ndarray:
        return np.array([float(y) for y in self.ys_exact])

    @cached_property
    def slopes(self) -> np.ndarray:
        xe, ye = self.xs_exact, self.ys_exact
        return np.array([float((ye[i + 1] - ye[i]) / (xe[i + 1] - xe[i])) for i in range(len(xe) - 1)])

    @property
    def period(self) -> int:
        return 2 * self.p

    @cached_property
    def kinks(self) -> tuple[np.ndarray, np.ndarray]:
        """Kink positions in [-1, 2p-1) and slope jumps, including the wrap at -1."""
        xe, ye = self.xs_exact, self.ys_exact
        s = [(ye[i + 1] - ye[i]) / (xe[i + 1] - xe[i]) for i in range(len(xe) - 1)]
        pos, jump = [], []
        wrap = s[0] - s[-1]
        if wrap != 0:
            pos.append(float(xe[0]))
            jump.append(float(wrap))
        for i in range(1, len(s)):
            dj = s[i] - s[i - 1]
            if dj != 0:
                pos.append(float(xe[i]))
                jump.append(float(dj))
        return np.array(pos), np.array(jump)

    def exact(self, x) -> Fraction:
        """Exact evaluation on the base period [-1, 2p-1]."""
        from bisect import bisect_right

        x = Fraction(x)
        xe, ye = self.xs_exact, self.ys_exact
        n = math.floor((x - xe[0]) / self.period)
        xr = x - n * self.period
        i = min(bisect_right(xe, xr) - 1, len(xe) - 2)
        val = ye[i] + (ye[i + 1] - ye[i]) / (xe[i + 1] - xe[i]) * (xr - xe[i])
        return val + 2 * n

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return _zeta_many(x.ravel(), self.xs, self.ys, self.slopes, float(self.period)).reshape(x.shape)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        return _zeta_d_many(x.ravel(), self.xs, self.slopes, float(self.period)).reshape(x.shape)


def build_zeta(check_tau: PiecewiseLinearMap, k: int | None = None) -> ZetaFunction:
    """Concatenate the inverse branches of an increasing-branch map."""
    if any(s <= 0 for s in check_tau.slopes):
        raise NonMonotoneBranch("every branch must be increasing")
    laps = check_tau.monotone_pieces()
    bp = check_tau.breakpoints
    a = [laps[0][0]] + [lap[1] for lap in laps]
    xs, ys = [], []
    images = []
    pi = 0  # piece pointer
    for j, (lo_x, hi_x, lo_y, hi_y) in enumerate(laps):
        images.append((lo_y, hi_y))
        base = 2 * j
        xs.append(base - 1)
        ys.append(lo_x)
        if lo_y > -1:
            xs.append(base + lo_y)
            ys.append(lo_x)
        # interior breakpoints of this branch
        while bp[pi] < lo_x:
            pi += 1
        pi += 1
        while pi < len(bp) and bp[pi] < hi_x:
            xs.append(base + check_tau.left[pi])
            ys.append(bp[pi])
            pi += 1
        if hi_y < 1:
            xs.append(base + hi_y)
            ys.append(hi_x)
    xs.append(2 * len(laps) - 1)
    ys.append(a[-1])
    if any(x >= y for x, y in zip(xs, xs[1:])):
        raise NonMonotoneBranch("zeta nodes not strictly increasing")
    if ys[0] != -1 or ys[-1] != 1:
        raise NonMonotoneBranch("zeta must run from -1 to 1")
    return ZetaFunction(len(laps), tuple(a), tuple(images), tuple(xs), tuple(ys), k)


# ----------------------------------------------------------- numba kernels


@nb.njit(inline="always")
def _reduce(x, x0, P):
    n = math.floor((x - x0) / P)
    return x - n * P, n


@nb.njit(inline="always")
def _locate(xs, xr):
    i = np.searchsorted(xs, xr, side="right") - 1
    if i < 0:
        i = 0
    if i > xs.shape[0] - 2:
        i = xs.shape[0] - 2
    return i


@nb.njit(cache=True)
def _zeta_many(x, xs, ys, sl, P):
    out = np.empty(x.shape[0])
    for q in range(x.shape[0]):
        xr, n = _reduce(x[q], xs[0], P)
        i = _locate(xs, xr)
        out[q] = ys[i] + sl[i] * (xr - xs[i]) + 2.0 * n
    return out


@nb.njit(cache=True)
def _zeta_d_many(x, xs, sl, P):
    out = np.empty(x.shape[0])
    for q in range(x.shape[0]):
        xr, n = _reduce(x[q], xs[0], P)
        out[q] = sl[_locate(xs, xr)]
    return out


_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@nb.njit(inline="always")
def _G_dG(t):
    # G(t) = t Phi(t) + phi(t) - max(t, 0) and G'(t) = Phi(t) - H(t),
    # written with the tail erfc to avoid cancellation for t > 0
    e = 0.5 * math.erfc(abs(t) * _SQRT1_2)
    g = _INV_SQRT_2PI * math.exp(-0.5 * t * t) - abs(t) * e
    if t >= 0:
        return g, -e
    return g, e


@nb.njit(inline="always")
def _kink_sums(xr, kx, dk, sigma):
    """(S, S') contributions of kinks within TAIL sigma of xr; kx is extended."""
    w = TAIL * sigma
    j = np.searchsorted(kx, xr - w, side="left")
    s = 0.0
    ds = 0.0
    while j < kx.shape[0] and kx[j] <= xr + w:
        t = (xr - kx[j]) / sigma
        g, dg = _G_dG(t)
        s += dk[j] * g
        ds += dk[j] * dg
        j += 1
    return s, ds


@nb.njit(cache=True)
def _zs_many(x, xs, ys, sl, kx, dk, sigma, s_m1, P, want_deriv):
    n_pts = x.shape[0]
    val = np.empty(n_pts)
    der = np.empty(n_pts)
    for q in range(n_pts):
        xr, n = _reduce(x[q], xs[0], P)
        i = _locate(xs, xr)
        s, ds = _kink_sums(xr, kx, dk, sigma)
        val[q] = ys[i] + sl[i] * (xr - xs[i]) + 2.0 * n + sigma * (s - s_m1)
        der[q] = sl[i] + ds
    return val, der


@nb.njit(cache=True)
def _zs_inverse(y, xs, ys, sl, kx, dk, sigma, s_m1, P, tol, max_iter):
    """Solve zeta_sigma(x) = y for each y in [-1, 1) on the base period."""
    out = np.empty(y.shape[0])
    ok = True
    for q in range(y.shape[0]):
        target = y[q]
        lo = xs[0] - 1.0
        hi = xs[xs.shape[0] - 1] + 1.0
        # start from the unsmoothed inverse
        i = np.searchsorted(ys, target, side="left")
        if i <= 0:
            x = xs[0]
        elif i >= ys.shape[0]:
            x = xs[xs.shape[0] - 1]
        else:
            x = 0.5 * (xs[i - 1] + xs[i]) if sl[i - 1] == 0 else xs[i - 1] + (target - ys[i - 1]) / sl[i - 1]
        done = False
        for _ in range(max_iter):
            xr, n = _reduce(x, xs[0], P)
            j = _locate(xs, xr)
            s, ds = _kink_sums(xr, kx, dk, sigma)
            f = ys[j] + sl[j] * (xr - xs[j]) + 2.0 * n + sigma * (s - s_m1) - target
            d = sl[j] + ds
            if f > 0:
                hi = min(hi, x)
            else:
                lo = max(lo, x)
            if abs(f) <= tol:
                done = True
                break
            nx = x - f / d if d > 0 else 0.5 * (lo + hi)
            if not (lo < nx < hi):
                nx = 0.5 * (lo + hi)
            if hi - lo <= 1e-15 * max(1.0, abs(x)) or abs(nx - x) <= 4e-16 * max(1.0, abs(x)):
                done = True
                break
            x = nx
        out[q] = x
        if not done:
            ok = False
    return out, ok


@nb.njit(cache=True)
def _kr2_kernel(N, p, xs, ys, sl, kx, dk, sigma, s_m1, P, thr):
    """Per-threshold L1 distance between P_sigma chi and P_0 chi, chi = 1_[-1, x]."""
    h = 2.0 / N
    nthr = thr.shape[0]
    acc = np.zeros((N, nthr + 1))
    ip = 0
    jk = 0
    w = TAIL * sigma
    nx = xs.shape[0]
    for kk in range(p):
        for g in range(N):
            x = -1.0 + (g + 0.5) * h + 2.0 * kk
            while ip < nx - 2 and xs[ip + 1] <= x:
                ip += 1
            z0 = ys[ip] + sl[ip] * (x - xs[ip])
            w0 = sl[ip]
            while jk < kx.shape[0] and kx[jk] < x - w:
                jk += 1
            s = 0.0
            ds = 0.0
            j = jk
            while j < kx.shape[0] and kx[j] <= x + w:
                t = (x - kx[j]) / sigma
                gv, dg = _G_dG(t)
                s += dk[j] * gv
                ds += dk[j] * dg
                j += 1
            zs = z0 + sigma * (s - s_m1)
            ws = w0 + ds
            b0 = np.searchsorted(thr, z0, side="left")
            bs = np.searchsorted(thr, zs, side="left")
            acc[g, bs] += ws
            acc[g, b0] -= w0
    dist = np.zeros(nthr)
    for g in range(N):
        run = 0.0
        for j in range(nthr):
            run += acc[g, j]
            dist[j] += abs(run) * h
    return dist


@nb.njit(cache=True)
def _ulam_kernel(edges, p, xs, ys, sl, kx, dk, sigma, s_m1, P):
    """P[i, j] = m(C_i & tau^-1 C_j) / m(C_i) from inverse-branch images of edges."""
    n = edges.shape[0] - 1
    M = np.zeros((n, n))
    pre = np.empty(n + 1)
    w = TAIL * sigma
    for kk in range(p):
        for j in range(n + 1):
            x = edges[j] + 2.0 * kk
            xr, m = _reduce(x, xs[0], P)
            i = _locate(xs, xr)
            s = 0.0
            if sigma > 0:
                s, _ = _kink_sums(xr, kx, dk, sigma)
            pre[j] = ys[i] + sl[i] * (xr - xs[i]) + 2.0 * m + sigma * (s - s_m1)
        for j in range(n):
            a = min(max(pre[j], edges[0]), edges[n])
            b = min(max(pre[j + 1], edges[0]), edges[n])
            if b <= a:
                continue
            ia = np.searchsorted(edges, a, side="right") - 1
            if ia >= n:
                ia = n - 1
            while ia < n and edges[ia] < b:
                lo = max(a, edges[ia])
                hi = min(b, edges[ia + 1])
                if hi > lo:
                    M[ia, j] += hi - lo
                ia += 1
    for i in range(n):
        wi = edges[i + 1] - edges[i]
        for j in range(n):
            M[i, j] /= wi
    return M


# -------------------------------------------------------------- smoothing


@dataclass(frozen=True)
class SmoothedZeta:
    zeta: ZetaFunction
    sigma: float

    def __post_init__(self):
        if not self.sigma >= MIN_SIGMA:
            raise SigmaTooSmall(f"sigma={self.sigma} below {MIN_SIGMA}")

    @cached_property
    def _ext_kinks(self) -> tuple[np.ndarray, np.ndarray]:
        kx, dk = self.zeta.kinks
        P = float(self.zeta.period)
        w = TAIL * self.sigma + 1.0
        pieces_x = [kx - P, kx, kx + P]
        pieces_d = [dk, dk, dk]
        X = np.concatenate(pieces_x)
        D = np.concatenate(pieces_d)
        keep = (X >= kx.min() - w - 1.0) & (X <= kx.max() + w + 1.0) if len(kx) else np.zeros(0, bool)
        X, D = X[keep], D[keep]
        order = np.argsort(X, kind="stable")
        return X[order], D[order]

    @cached_property
    def offset(self) -> float:
        """S(-1), so that zeta_sigma(-1) = -1 exactly."""
        kx, dk = self._ext_kinks
        x0 = float(self.zeta.xs[0])
        s = 0.0
        for xk, d in zip(kx, dk):
            if abs(x0 - xk) <= TAIL * self.sigma:
                s += d * _G_py((x0 - xk) / self.sigma)
        return s

    def _args(self):
        kx, dk = self._ext_kinks
        z = self.zeta
        return z.xs, z.ys, z.slopes, kx, dk, float(self.sigma), self.offset, float(z.period)

    def value_and_derivative(self, x):
        x = np.asarray(x, dtype=float)
        v, d = _zs_many(x.ravel(), *self._args(), True)
        return v.reshape(x.shape), d.reshape(x.shape)

    def __call__(self, x):
        return self.value_and_derivative(x)[0]

    def derivative(self, x):
        return self.value_and_derivative(x)[1]

    def inverse(self, y, tol: float = 1e-15, max_iter: int = 200) -> np.ndarray:
        """Lift of the inverse: x in the base period with zeta_sigma(x) = y."""
        y = np.asarray(y, dtype=float)
        x, ok = _zs_inverse(y.ravel(), *self._args(), tol, max_iter)
        if not ok:
            raise InversionFailure("Newton/bisection did not converge")
        return x.reshape(y.shape)


def _G_py(t: float) -> float:
    if t > 0:
        return -t * 0.5 * math.erfc(t / math.sqrt(2)) + math.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)
    return t * 0.5 * math.erfc(-t / math.sqrt(2)) + math.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)


def smooth_zeta(zeta: ZetaFunction, sigma: float) -> SmoothedZeta:
    return SmoothedZeta(zeta, float(sigma))


def _wrap(x):
    """Project R onto the circle [-1, 1) = R / 2Z."""
    return np.mod(np.asarray(x) + 1.0, 2.0) - 1.0


@dataclass(frozen=True)
class CircleMap:
    """tau_check_sigma: the circle map whose inverse branches are zeta_sigma."""

    smoothed: SmoothedZeta

    def lift(self, y):
        return self.smoothed.inverse(_wrap(y)) + 2 * self.smoothed.zeta.p * np.floor((np.asarray(y) + 1) / 2)

    def __call__(self, y):
        return _wrap(self.smoothed.inverse(_wrap(y)))

    def derivative(self, y):
        x = self.smoothed.inverse(_wrap(y))
        return 1.0 / self.smoothed.derivative(x)


def circle_map(smoothed: SmoothedZeta) -> CircleMap:
    return CircleMap(smoothed)


# ----------------------------------------------------------------- PF maps


def _pf_generic(value_deriv, p: int, f, x, chunk: int = 1 << 22):
    x = np.asarray(x, dtype=float).ravel()
    out = np.zeros(len(x))
    ks = np.arange(p, dtype=float) * 2.0
    per = max(1, chunk // max(p, 1))
    for s in range(0, len(x), per):
        xx = (x[s:s + per, None] + ks[None, :]).ravel()
        z, w = value_deriv(xx)
        out[s:s + per] = (np.asarray(f(z)) * w).reshape(-1, p).sum(axis=1)
    return out


def pf_smooth(smoothed: SmoothedZeta, f):
    """Pointwise evaluator of P f(x) = sum_k f(zeta_s(x+2k)) zeta_s'(x+2k)."""
    p = smoothed.zeta.p
    return lambda x: _pf_generic(smoothed.value_and_derivative, p, f, x)


def pf_check(zeta: ZetaFunction, f):
    """Same formula with the unsmoothed zeta: the PF operator of tau_check."""
    p = zeta.p
    return lambda x: _pf_generic(lambda t: (zeta(t), zeta.derivative(t)), p, f, x)


def ulam_matrix(smoothed: SmoothedZeta, n_cells: int) -> np.ndarray:
    """Row-stochastic Ulam matrix of tau_check_sigma from exact preimages of cell edges."""
    edges = np.linspace(-1.0, 1.0, n_cells + 1)
    return _ulam_kernel(edges, smoothed.zeta.p, *smoothed._args())


# --------------------------------------------------------------- estimates


def sup_deviation(zeta: ZetaFunction, sigma: float, n_grid: int = 10_000) -> float:
    """sup |zeta_sigma - zeta| over the kinks plus a uniform grid of the period."""
    sz = smooth_zeta(zeta, sigma)
    grid = np.linspace(zeta.xs[0], zeta.xs[-1], n_grid)
    kx, _ = zeta.kinks
    pts = np.concatenate([grid, kx])
    return float(np.max(np.abs(sz(pts) - zeta(pts))))


@dataclass
class KR2Report:
    sigmas: list
    distances: list  # sup over thresholds, per sigma
    C0_per_sigma: list
    exponent: float
    C0: float
    residual: float
    C0_spread: float  # max/min - 1 over the last three sigmas
    thresholds: np.ndarray
    per_threshold: list
    fit_window: list

    @property
    def passed(self) -> bool:
        return self.exponent >= 0.9 and self.C0_spread <= 0.25


def kr2_check(
    zeta: ZetaFunction,
    sigma_list=DEFAULT_SIGMAS,
    n_grid: int = 1 << 16,
    n_thresholds: int = 64,
    fit_last: int | None = None,
    strict: bool = False,
) -> KR2Report:
    """d(sigma) = sup_x int |P_sigma chi_x - P chi_x| dm and its linear fit.

    The exponent is fitted by least squares in log-log over the last
    ``fit_last`` sigmas (all sigmas when None).
    """
    sig = sorted(map(float, sigma_list), reverse=True)
    thr = np.linspace(-1.0, 1.0, n_thresholds)
    dists, per = [], []
    for s in sig:
        sz = smooth_zeta(zeta, s)
        kx, dk = sz._ext_kinks
        d = _kr2_kernel(n_grid, zeta.p, zeta.xs, zeta.ys, zeta.slopes, kx, dk, s, sz.offset,
                        float(zeta.period), thr)
        per.append(d)
        dists.append(float(d.max()))
    window = sig if fit_last is None else sig[-fit_last:]
    dw = [dists[sig.index(s)] for s in window]
    A = np.vstack([np.log(window), np.ones(len(window))]).T
    coef, res, *_ = np.linalg.lstsq(A, np.log(dw), rcond=None)
    c0s = [d / s for d, s in zip(dists, sig)]
    last = c0s[-3:]
    spread = max(last) / min(last) - 1
    rep = KR2Report(
        sig, dists, c0s, float(coef[0]), float(math.exp(coef[1])),
        float(res[0]) if len(res) else 0.0, float(spread), thr, per, window,
    )
    if strict and not rep.passed:
        raise RateNotLinear(f"exponent {rep.exponent:.3f}, C0 spread {spread:.3f}")
    return rep


@dataclass
class KR1Report:
    sigmas: list
    kappa: list
    F: list
    n_max: int
    n_cells: int

    @property
    def passed(self) -> bool:
        return all(k < 1 for k in self.kappa)

    def stability(self) -> dict:
        return {
            "kappa_spread": max(self.kappa) / min(self.kappa) - 1,
            "F_spread": max(self.F) / min(self.F) - 1,
        }


def _var_heights(h):
    """Total variation of a step function on the circle."""
    return float(np.abs(np.diff(h)).sum() + abs(h[0] - h[-1]))


def kr1_single(smoothed: SmoothedZeta, n_max: int = 8, n_cells: int = 2048, levels: int = 6):
    """Fit (F, kappa) in var(P^n f) <= F (kappa^n var f + int|f|) on Ulam data.

    kappa is the slowest geometric decay of the excess variation
    var(P^n f) - var(P^n_inf f) over the test suite; F is the least constant
    that makes the bound hold with that kappa.
    """
    M = ulam_matrix(smoothed, n_cells)
    edges = np.linspace(-1.0, 1.0, n_cells + 1)
    wdt = np.diff(edges)
    # invariant density of the Ulam chain by power iteration
    hinv = np.full(n_cells, 0.5)
    for _ in range(200):
        new = (hinv * wdt) @ M / wdt
        if np.abs(new - hinv).max() < 1e-13:
            hinv = new
            break
        hinv = new
    suite = [np.full(n_cells, 0.5)]
    for lev in range(1, levels + 1):
        cells = 2**lev
        width = n_cells // cells
        for c in range(cells):
            f = np.zeros(n_cells)
            f[c * width:(c + 1) * width] = 1.0
            suite.append(f)
    curves = []
    for f in suite:
        vf = _var_heights(f)
        af = float(np.sum(np.abs(f) * wdt))
        mass = float(np.sum(f * wdt))
        g = f.copy()
        vs = [vf]
        for _ in range(n_max):
            g = (g * wdt) @ M / wdt
            vs.append(_var_heights(g))
        v_inf = _var_heights(mass * hinv)
        curves.append((vf, af, np.array(vs), v_inf))
    kappa = 0.0
    for vf, af, vs, v_inf in curves:
        if vf == 0:
            continue
        for n in range(1, n_max + 1):
            excess = max(vs[n] - v_inf, 0.0) / vf
            if excess > 0:
                kappa = max(kappa, excess ** (1.0 / n))
    kappa = max(kappa, 1e-12)
    F = 1.0
    for vf, af, vs, _ in curves:
        for n in range(n_max + 1):
            F = max(F, vs[n] / (kappa**n * vf + af))
    return kappa, F


def kr1_check(
    zeta: ZetaFunction,
    sigma_list=DEFAULT_SIGMAS,
    n_max: int = 8,
    n_cells: int = 2048,
    strict: bool = False,
) -> KR1Report:
    kap, Fs = [], []
    for s in sigma_list:
        k, F = kr1_single(smooth_zeta(zeta, s), n_max, n_cells)
        kap.append(k)
        Fs.append(F)
    rep = KR1Report(list(map(float, sigma_list)), kap, Fs, n_max, n_cells)
    if strict and not rep.passed:
        raise ContractionNotObserved(f"kappa estimates {kap}")
    return rep
