"""Toom north-east-centre majority PCA and the Peierls series bound."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ._rational import to_fraction

PEIERLS_BASE = 48**8


class LengthMismatch(ValueError):
    pass


@dataclass
class PcaState:
    spins: np.ndarray  # (L, L) int8 of +-1
    p: float
    seed: int = 0
    time: int = 0

    def __post_init__(self):
        if not 0 <= self.p <= 1:
            raise ValueError("p must lie in [0, 1]")
        self.spins = np.asarray(self.spins, dtype=np.int8)

    @property
    def L(self) -> int:
        return self.spins.shape[0]

    def magnetization(self) -> float:
        return float(self.spins.mean())


def majority(spins: np.ndarray) -> np.ndarray:
    """sign(s_i + s_{i+e1} + s_{i+e2}) on the torus; the sum is odd, never 0."""
    s = spins.astype(np.int16)
    tot = s + np.roll(s, -1, axis=0) + np.roll(s, -1, axis=1)
    return np.where(tot > 0, 1, -1).astype(np.int8)


def _flip_mask(L: int, p: float, seed: int, t: int) -> np.ndarray:
    # counter-based: the stream for step t depends only on (seed, t)
    key = (int(seed) << 64) | int(t)
    u = np.random.Generator(np.random.Philox(key=key)).random((L, L))
    return u < p


def pca_step(state: PcaState) -> PcaState:
    """Majority update, then independent flips with probability p."""
    new = majority(state.spins)
    if state.p > 0:
        new = np.where(_flip_mask(state.L, state.p, state.seed, state.time), -new, new).astype(np.int8)
    return PcaState(new, state.p, state.seed, state.time + 1)


@dataclass
class PcaRun:
    p: float
    L: int
    seed: int
    magnetization: np.ndarray
    frac_negative: np.ndarray
    origin_sign: np.ndarray
    error_sites: np.ndarray  # sites deviating from the majority rule per step
    final: PcaState


def run_pca(L: int, p: float, steps: int, seed: int = 0, init: str = "plus") -> PcaRun:
    if init == "plus":
        spins = np.ones((L, L), dtype=np.int8)
    elif init == "minus":
        spins = -np.ones((L, L), dtype=np.int8)
    elif init == "random":
        u = np.random.Generator(np.random.Philox(key=(int(seed) << 64) | (2**63))).random((L, L))
        spins = np.where(u < 0.5, -1, 1).astype(np.int8)
    else:
        raise ValueError(f"unknown init {init!r}")
    st = PcaState(spins, p, seed)
    mag = np.empty(steps)
    fneg = np.empty(steps)
    orig = np.empty(steps, dtype=np.int8)
    err = np.empty(steps, dtype=np.int64)
    for t in range(steps):
        maj = majority(st.spins)
        st = pca_step(st)
        err[t] = int((st.spins != maj).sum())
        mag[t] = st.magnetization()
        fneg[t] = float((st.spins < 0).mean())
        orig[t] = st.spins[0, 0]
    return PcaRun(p, L, seed, mag, fneg, orig, err, st)


@dataclass(frozen=True)
class PeierlsBound:
    delta: Fraction
    ratio: Fraction  # r = 48^8 delta
    series_value: Fraction | None  # None when divergent

    @property
    def divergent(self) -> bool:
        return self.series_value is None

    def __str__(self) -> str:
        return "Divergent" if self.divergent else str(self.series_value)


def peierls_series(delta) -> PeierlsBound:
    """sum_{M>=1} (48^8 delta)^M in closed form."""
    delta = to_fraction(delta)
    if delta < 0:
        raise ValueError("delta must be >= 0")
    r = PEIERLS_BASE * delta
    if r >= 1:
        return PeierlsBound(delta, r, None)
    return PeierlsBound(delta, r, r / (1 - r))


def peierls_delta() -> Fraction:
    """The per-error-site bound 1/4 48^-8 that makes the series equal 1/3."""
    return Fraction(1, 4 * PEIERLS_BASE)


@dataclass
class Comparison:
    cml_magnetization: np.ndarray
    pca_magnetization: np.ndarray
    cml_mean: float
    pca_mean: float
    sup_difference: float  # sup over prefixes of |difference of running means|
    mean_difference: float


def compare_cml_pca(cml_mag, pca_mag) -> Comparison:
    """Side-by-side magnetization trajectories of a CML run and a PCA run."""
    a = np.asarray(cml_mag, dtype=float)
    b = np.asarray(pca_mag, dtype=float)
    if a.shape != b.shape:
        raise LengthMismatch(f"trajectory lengths {a.shape} and {b.shape} differ")
    n = np.arange(1, len(a) + 1)
    ra, rb = np.cumsum(a) / n, np.cumsum(b) / n
    return Comparison(a, b, float(a.mean()), float(b.mean()),
                      float(np.max(np.abs(ra - rb))), float(abs(a.mean() - b.mean())))
