"""Finite-lattice engine for T_eps = T o Phi_eps and S_eps = Phi_eps o T.

Site i = (i0, i1) has neighbours i + e1 = (i0 + 1, i1) and
i + e2 = (i0, i1 + 1).  The local map is evaluated pointwise in float64;
tau~ on [0, 1] is written as a sum of hinge functions so the inner loop
vectorizes across sites.
"""

from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numba as nb
import numpy as np

from .map_core import MapParams, tilde_tau_nodes

PERIODIC, FIXED, FREE = 0, 1, 2
ORDER_T, ORDER_S = 0, 1
_BC = {"periodic": PERIODIC, "fixed": FIXED, "free": FREE}
_ORDER = {"T": ORDER_T, "S": ORDER_S}
SNAPSHOT_MAGIC = b"CML1"
# breakpoints of tau~ on [0, 1) ; a compile-time bound lets the hinge loop unroll
_NNODES = 9


class ConfigError(ValueError):
    pass


def worker_count() -> int:
    env = os.environ.get("CML_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"CML_THREADS must be an integer, got {env!r}") from None
        return max(1, n)
    return 1


@dataclass(frozen=True)
class LatticeMap:
    """Float data for tau = (tau~^k / v)^power."""

    nodes: np.ndarray  # positive-side breakpoints 0 = x_0 < ... < x_8
    coef: np.ndarray  # hinge coefficients
    k: int
    inv_v: float
    power: int = 3

    @classmethod
    def from_params(cls, params: MapParams, k: int, power: int = 3) -> "LatticeMap":
        nd = tilde_tau_nodes(params)
        xs = [x for x, _ in nd]
        ys = [y for _, y in nd]
        slopes = [(ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]) for i in range(len(xs) - 1)]
        coef = [slopes[0]] + [slopes[i] - slopes[i - 1] for i in range(1, len(slopes))]
        return cls(
            np.array([float(x) for x in xs[:-1]]),
            np.array([float(c) for c in coef]),
            int(k),
            float(1 / params.v),
            power,
        )


@nb.njit(nogil=True, cache=True)
def _apply_tau(buf, X, C, k, power, inv_v):
    n = buf.shape[0]
    for _ in range(power):
        for _ in range(k):
            for i in range(n):
                xi = buf[i]
                ax = abs(xi)
                y = C[0] * ax
                for m in range(1, _NNODES):
                    y += C[m] * max(ax - X[m], 0.0)
                buf[i] = y if xi >= 0.0 else -y
        for i in range(n):
            buf[i] = min(max(buf[i] * inv_v, -1.0), 1.0)


@nb.njit(nogil=True, cache=True)
def _couple(src, dst, L, eps, bc, ghost):
    """dst = Phi_eps(src) on flat row-major L x L arrays."""
    h = 0.5 * eps
    for i0 in range(L):
        for i1 in range(L):
            x = src[i0 * L + i1]
            w0 = 1.0 - eps
            acc = 0.0
            # neighbour e1
            j0 = i0 + 1
            if j0 < L:
                acc += h * src[j0 * L + i1]
            elif bc == 0:
                acc += h * src[i1]
            elif bc == 1:
                acc += h * ghost
            else:
                w0 += h
            # neighbour e2
            j1 = i1 + 1
            if j1 < L:
                acc += h * src[i0 * L + j1]
            elif bc == 0:
                acc += h * src[i0 * L]
            elif bc == 1:
                acc += h * ghost
            else:
                w0 += h
            dst[i0 * L + i1] = w0 * x + acc


@nb.njit(nogil=True, cache=True)
def _errors(prev, nxt, L, bc, ghost_sign):
    """Count sites where sign(nxt) differs from the majority of prev."""
    cnt = 0
    for i0 in range(L):
        for i1 in range(L):
            s = 1 if prev[i0 * L + i1] > 0.0 else -1
            tot = s
            j0 = i0 + 1
            if j0 < L:
                tot += 1 if prev[j0 * L + i1] > 0.0 else -1
            elif bc == 0:
                tot += 1 if prev[i1] > 0.0 else -1
            elif bc == 1:
                tot += ghost_sign
            else:
                tot += s
            j1 = i1 + 1
            if j1 < L:
                tot += 1 if prev[i0 * L + j1] > 0.0 else -1
            elif bc == 0:
                tot += 1 if prev[i0 * L] > 0.0 else -1
            elif bc == 1:
                tot += ghost_sign
            else:
                tot += s
            maj = 1 if tot > 0 else -1
            now = 1 if nxt[i0 * L + i1] > 0.0 else -1
            if now != maj:
                cnt += 1
    return cnt


@nb.njit(nogil=True, cache=True)
def _step_into(x, out, L, eps, X, C, k, power, inv_v, bc, ghost, order):
    if order == 0:
        _couple(x, out, L, eps, bc, ghost)
        _apply_tau(out, X, C, k, power, inv_v)
    else:
        tmp = x.copy()
        _apply_tau(tmp, X, C, k, power, inv_v)
        _couple(tmp, out, L, eps, bc, ghost)


@nb.njit(nogil=True, cache=True)
def _run(x, n_steps, L, eps, X, C, k, power, inv_v, bc, ghost, order,
         mag, fneg, orig, err, oval, traj, record):
    n = L * L
    ghost_sign = 1 if ghost > 0.0 else -1
    cur = x.copy()
    nxt = np.empty(n)
    tmp = np.empty(n)
    for t in range(n_steps):
        if order == 0:
            _couple(cur, nxt, L, eps, bc, ghost)
            _apply_tau(nxt, X, C, k, power, inv_v)
        else:
            for i in range(n):
                tmp[i] = cur[i]
            _apply_tau(tmp, X, C, k, power, inv_v)
            _couple(tmp, nxt, L, eps, bc, ghost)
        err[t] = _errors(cur, nxt, L, bc, ghost_sign)
        pos = 0
        for i in range(n):
            if nxt[i] > 0.0:
                pos += 1
        mag[t] = (2.0 * pos - n) / n
        fneg[t] = (n - pos) / n
        orig[t] = 1 if nxt[0] > 0.0 else -1
        oval[t] = nxt[0]
        if record:
            for i in range(n):
                traj[t, i] = nxt[i]
        cur, nxt = nxt, cur
    for i in range(n):
        x[i] = cur[i]


# ------------------------------------------------------------------ states


@dataclass
class LatticeState:
    cells: np.ndarray  # (L, L) float64
    time: int = 0
    boundary: str = "periodic"
    fixed_value: float = 0.0

    def __post_init__(self):
        self.cells = np.ascontiguousarray(self.cells, dtype=np.float64)
        if self.cells.ndim != 2 or self.cells.shape[0] != self.cells.shape[1]:
            raise ValueError("cells must be a square 2-d array")
        if self.boundary not in _BC:
            raise ConfigError(f"unknown boundary {self.boundary!r}")

    @property
    def L(self) -> int:
        return self.cells.shape[0]

    def signs(self) -> np.ndarray:
        return np.where(self.cells > 0, 1, -1).astype(np.int8)

    def copy(self) -> "LatticeState":
        return LatticeState(self.cells.copy(), self.time, self.boundary, self.fixed_value)


def site_uniforms(L: int, seed: int, stream: int = 0) -> np.ndarray:
    """Philox uniforms keyed by (seed, stream); site i0*L+i1 takes draw i0*L+i1."""
    key = (int(seed) << 64) | (int(stream) & (2**64 - 1))
    gen = np.random.Generator(np.random.Philox(key=key))
    return gen.random(L * L).reshape(L, L)


def init_lambda_plus(params: MapParams, L: int, seed: int, stream: int = 0, **kw) -> LatticeState:
    """i.i.d. uniform site values on [d/v, v]."""
    if L < 2:
        raise ConfigError("L must be >= 2")
    lo, hi = float(params.d / params.v), float(params.v)
    u = site_uniforms(L, seed, stream)
    return LatticeState(lo + (hi - lo) * u, **kw)


def init_lambda_minus(params: MapParams, L: int, seed: int, stream: int = 0, **kw) -> LatticeState:
    s = init_lambda_plus(params, L, seed, stream, **kw)
    s.cells = -s.cells
    return s


def init_symmetric(params: MapParams, L: int, seed: int, stream: int = 0, **kw) -> LatticeState:
    """Uniform on [-v, -d/v] u [d/v, v] with independent signs."""
    s = init_lambda_plus(params, L, seed, stream, **kw)
    signs = np.where(site_uniforms(L, seed, stream + 2**32) < 0.5, -1.0, 1.0)
    s.cells = s.cells * signs
    return s


INITS = {"lambda_plus": init_lambda_plus, "lambda_minus": init_lambda_minus, "symmetric": init_symmetric}


def step(state: LatticeState, eps: float, lmap: LatticeMap, ordering: str = "T") -> LatticeState:
    """One synchronous update into a fresh buffer."""
    if not 0 <= eps <= 0.25:
        raise ConfigError("eps must lie in [0, 1/4]")
    L = state.L
    x = state.cells.ravel()
    out = np.empty_like(x)
    _step_into(
        x, out, L, float(eps), lmap.nodes, lmap.coef, lmap.k, lmap.power, lmap.inv_v,
        _BC[state.boundary], float(state.fixed_value), _ORDER[ordering],
    )
    return LatticeState(out.reshape(L, L), state.time + 1, state.boundary, state.fixed_value)


def couple(state: LatticeState, eps: float) -> LatticeState:
    """Phi_eps alone."""
    L = state.L
    out = np.empty(L * L)
    _couple(state.cells.ravel(), out, L, float(eps), _BC[state.boundary], float(state.fixed_value))
    return LatticeState(out.reshape(L, L), state.time, state.boundary, state.fixed_value)


def apply_local_map(state: LatticeState, lmap: LatticeMap) -> LatticeState:
    """T alone: tau at every site."""
    buf = state.cells.ravel().copy()
    _apply_tau(buf, lmap.nodes, lmap.coef, lmap.k, lmap.power, lmap.inv_v)
    return LatticeState(buf.reshape(state.L, state.L), state.time, state.boundary, state.fixed_value)


def error_sites(prev: LatticeState, nxt: LatticeState) -> tuple[int, np.ndarray]:
    """Majority-rule violations between consecutive states, with site list."""
    s = prev.signs().astype(np.int32)
    now = nxt.signs()
    if prev.boundary == "periodic":
        tot = s + np.roll(s, -1, axis=0) + np.roll(s, -1, axis=1)
    else:
        L = prev.L
        e1 = np.empty_like(s)
        e2 = np.empty_like(s)
        e1[:-1] = s[1:]
        e2[:, :-1] = s[:, 1:]
        if prev.boundary == "fixed":
            g = 1 if prev.fixed_value > 0 else -1
            e1[-1] = g
            e2[:, -1] = g
        else:
            e1[-1] = s[-1]
            e2[:, -1] = s[:, -1]
        tot = s + e1 + e2
    maj = np.where(tot > 0, 1, -1)
    bad = np.argwhere(now != maj)
    return len(bad), bad


# --------------------------------------------------------------- simulation


@dataclass
class RunResult:
    eps: float
    L: int
    seed: int
    replica: int
    init: str
    magnetization: np.ndarray
    frac_negative: np.ndarray
    origin_sign: np.ndarray
    error_sites: np.ndarray
    origin_value: np.ndarray
    final: LatticeState
    trajectory: np.ndarray | None = None

    @property
    def n_steps(self) -> int:
        return len(self.magnetization)

    def time_average(self, start: int = 0) -> float:
        return float(self.magnetization[start:].mean())

    def error_rate(self) -> float:
        """Error sites per site per step."""
        return float(self.error_sites.sum()) / (self.n_steps * self.L * self.L)


def simulate(
    state: LatticeState,
    eps: float,
    lmap: LatticeMap,
    n_steps: int,
    ordering: str = "T",
    record_states: bool = False,
    meta: dict | None = None,
) -> RunResult:
    if not 0 <= eps <= 0.25:
        raise ConfigError("eps must lie in [0, 1/4]")
    L = state.L
    x = state.cells.ravel().copy()
    mag = np.empty(n_steps)
    fneg = np.empty(n_steps)
    orig = np.empty(n_steps, dtype=np.int8)
    err = np.empty(n_steps, dtype=np.int64)
    oval = np.empty(n_steps)
    traj = np.empty((n_steps if record_states else 1, L * L))
    _run(
        x, n_steps, L, float(eps), lmap.nodes, lmap.coef, lmap.k, lmap.power, lmap.inv_v,
        _BC[state.boundary], float(state.fixed_value), _ORDER[ordering],
        mag, fneg, orig, err, oval, traj, record_states,
    )
    meta = meta or {}
    final = LatticeState(x.reshape(L, L), state.time + n_steps, state.boundary, state.fixed_value)
    return RunResult(
        float(eps), L, meta.get("seed", 0), meta.get("replica", 0), meta.get("init", ""),
        mag, fneg, orig, err, oval, final, traj if record_states else None,
    )


@dataclass
class SweepRecord:
    eps: float
    L: int
    seed: int
    t: int
    magnetization: float
    frac_negative: float
    origin_sign: int
    error_sites: int

    FIELDS = ("eps", "L", "seed", "t", "magnetization", "frac_negative", "origin_sign", "error_sites")


@dataclass
class SweepConfig:
    params: MapParams
    k: int
    eps_grid: list
    L: int = 64
    steps: int = 20000
    replicas: int = 8
    seed: int = 0
    boundary: str = "periodic"
    ordering: str = "T"
    init: str = "lambda_plus"
    fixed_value: float = 0.0

    def validate(self):
        if self.L < 2:
            raise ConfigError("L must be >= 2")
        if self.steps < 1 or self.replicas < 1:
            raise ConfigError("steps and replicas must be positive")
        if self.boundary not in _BC:
            raise ConfigError(f"unknown boundary {self.boundary!r}")
        if self.ordering not in _ORDER:
            raise ConfigError(f"ordering must be 'T' or 'S', got {self.ordering!r}")
        if self.init not in INITS:
            raise ConfigError(f"unknown init {self.init!r}; choose from {sorted(INITS)}")
        for e in self.eps_grid:
            if not 0 <= float(e) <= 0.25:
                raise ConfigError(f"eps {e} outside [0, 1/4]")


@dataclass
class SweepResult:
    config: SweepConfig
    runs: list = field(default_factory=list)

    def records(self):
        """Per-step SweepRecords in (eps, replica, t) order."""
        for r in self.runs:
            seed = r.seed
            for t in range(r.n_steps):
                yield SweepRecord(
                    r.eps, r.L, seed, t + 1, float(r.magnetization[t]), float(r.frac_negative[t]),
                    int(r.origin_sign[t]), int(r.error_sites[t]),
                )

    def origin_negative_fraction(self, eps: float) -> float:
        """Fraction of replicas with x_origin <= 0 at the final step."""
        rs = [r for r in self.runs if r.eps == eps]
        return float(np.mean([r.origin_sign[-1] <= 0 for r in rs]))


def replica_seed(seed: int, replica: int) -> int:
    return int(seed) * 1_000_003 + int(replica)


def run_sweep(cfg: SweepConfig) -> SweepResult:
    """Evolve every (eps, replica) pair; replicas fan out over CML_THREADS workers."""
    cfg.validate()
    lmap = LatticeMap.from_params(cfg.params, cfg.k)
    init = INITS[cfg.init]
    jobs = []
    for e in cfg.eps_grid:
        for r in range(cfg.replicas):
            jobs.append((float(e), r))

    def one(job):
        e, r = job
        s = replica_seed(cfg.seed, r)
        st = init(cfg.params, cfg.L, s, boundary=cfg.boundary, fixed_value=cfg.fixed_value)
        return simulate(st, e, lmap, cfg.steps, cfg.ordering,
                        meta={"seed": s, "replica": r, "init": cfg.init})

    n = worker_count()
    if n == 1:
        runs = [one(j) for j in jobs]
    else:
        with ThreadPoolExecutor(n) as pool:
            runs = list(pool.map(one, jobs))
    return SweepResult(cfg, runs)


def autocorrelation(series, lag):
    """Normalized autocovariance at one lag or an array of lags."""
    x = np.asarray(series, dtype=float)
    lags = np.atleast_1d(np.asarray(lag, dtype=int))
    if len(x) < 10 * max(int(lags.max()), 1):
        raise ValueError("series must be at least 10 x lag long")
    x = x - x.mean()
    var = float(np.dot(x, x)) / len(x)
    if var == 0:
        out = np.where(lags == 0, 1.0, 0.0)
    else:
        out = np.array([float(np.dot(x[: len(x) - l], x[l:])) / len(x) / var for l in lags])
    return out if np.ndim(lag) else float(out[0])


def site_histogram(values: np.ndarray, bins: int = 20) -> np.ndarray:
    """Probability vector of values over equal bins of [-1, 1]."""
    h, _ = np.histogram(np.ravel(values), bins=bins, range=(-1.0, 1.0))
    return h / h.sum()


# ------------------------------------------------------------------------ io


def write_snapshot(path, state: LatticeState) -> None:
    from .io import atomic_write_bytes

    # 16-byte header: magic, u32 L, two reserved u32 words
    header = SNAPSHOT_MAGIC + struct.pack("<III", state.L, 0, 0)
    atomic_write_bytes(path, header + state.cells.astype("<f8").tobytes(order="C"))


def read_snapshot(path) -> LatticeState:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != SNAPSHOT_MAGIC:
        raise ValueError("not a CML1 snapshot")
    L, _, _ = struct.unpack("<III", raw[4:16])
    data = np.frombuffer(raw[16:], dtype="<f8")
    if data.size != L * L:
        raise ValueError("snapshot size mismatch")
    return LatticeState(data.reshape(L, L).copy())


def tau_reference(x: float, lmap: LatticeMap) -> float:
    """Pure-Python scalar tau using the same float operations as the kernel."""
    X, C = lmap.nodes.tolist(), lmap.coef.tolist()
    for _ in range(lmap.power):
        for _ in range(lmap.k):
            ax = abs(x)
            y = C[0] * ax
            for m in range(1, len(X)):
                y += C[m] * max(ax - X[m], 0.0)
            x = y if x >= 0.0 else -y
        x = min(max(x * lmap.inv_v, -1.0), 1.0)
    return x


def step_reference(cells: np.ndarray, eps: float, lmap: LatticeMap, ordering: str = "T") -> np.ndarray:
    """Scalar periodic step, loop by loop, for cross-checking the kernel."""
    L = cells.shape[0]
    out = np.empty_like(cells)
    h = 0.5 * eps
    if ordering == "T":
        for i0 in range(L):
            for i1 in range(L):
                y = (1.0 - eps) * cells[i0, i1] + (h * cells[(i0 + 1) % L, i1] + h * cells[i0, (i1 + 1) % L])
                out[i0, i1] = tau_reference(float(y), lmap)
    else:
        t = np.vectorize(lambda v: tau_reference(float(v), lmap))(cells)
        for i0 in range(L):
            for i1 in range(L):
                out[i0, i1] = (1.0 - eps) * t[i0, i1] + (h * t[(i0 + 1) % L, i1] + h * t[i0, (i1 + 1) % L])
    return out
