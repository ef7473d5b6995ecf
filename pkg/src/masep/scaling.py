"""Finite-size scaling of the spectral gap on one-species rings.

The relaxation time is tau = -1/Re E where E is the second-largest
eigenvalue.  Samples come either from dense diagonalization of the sector
(L - n, n) or from the one-species Bethe solver; the fit extracts the
dynamical exponent z from -Re E ~ c L^{-z}.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .bethe import ConvergenceError, solve_one_species
from .sectors import Sector
from .spectra import next_leading, second_largest, sector_spectrum, split_sectors

C_KPZ = 6.50918933794
CROSSCHECK_MAX_L = 14


class FitError(ValueError):
    """The samples cannot support an exponent fit."""


@dataclass
class GapSample:
    L: int
    rho: float
    p: float
    q: float
    E_plus: complex
    E_minus: complex
    method: str
    converged: bool = True
    crosscheck: float | None = None

    @property
    def tau(self) -> float:
        return -1.0 / self.E_plus.real

    def row(self) -> dict:
        return {"L": self.L, "rho": self.rho, "p": self.p, "q": self.q,
                "reE": self.E_plus.real, "imE": self.E_plus.imag, "method": self.method}


def particle_count(L: int, rho) -> int:
    n = Fraction(rho).limit_denominator(10**6) * L
    if n.denominator != 1:
        raise ValueError(f"rho*L = {float(n)} is not an integer at L={L}")
    return int(n)


def _canonical(L, n, p, q):
    # H(p,q) and H(q,p) are conjugate under reflection, and (L-n, n) under charge
    # conjugation times reflection, so the gap only depends on max/min of both pairs
    return min(n, L - n), max(p, q), min(p, q)


def _diag_pair(L, n, p, q):
    return second_largest(sector_spectrum(Sector(L, (L - n, n)), p, q))


def _bethe_pair(L, n, p, q):
    sol = solve_one_species(L, n, p, q)
    E = sol.energy
    return (complex(E.real, abs(E.imag)), complex(E.real, -abs(E.imag)))


def gap_scan(L_list, rho, p, q, method: str = "bethe",
             crosscheck_max_L: int = CROSSCHECK_MAX_L) -> list[GapSample]:
    """One gap sample per L.

    Bethe samples at L <= ``crosscheck_max_L`` are compared against dense
    diagonalization and the deviation stored in ``crosscheck``.  A Bethe
    failure at some L is recorded as a non-converged sample with NaN energy.
    """
    if method not in ("bethe", "diagonalization"):
        raise ValueError(f"unknown method {method!r}")
    p, q = float(p), float(q)
    if p < 0 or q < 0 or p + q <= 0:
        raise ValueError("rates must be non-negative with p + q > 0")
    out = []
    for L in sorted(set(int(x) for x in L_list)):
        n = particle_count(L, rho)
        if not 0 < n < L:
            raise ValueError(f"need 0 < rho*L < L, got n={n} at L={L}")
        n_c, pc, qc = _canonical(L, n, p, q)
        if method == "diagonalization":
            plus, minus = _diag_pair(L, n_c, pc, qc)
            out.append(GapSample(L, n / L, p, q, plus, minus, method))
            continue
        try:
            plus, minus = _bethe_pair(L, n_c, pc, qc)
        except ConvergenceError:
            nan = complex(math.nan, math.nan)
            out.append(GapSample(L, n / L, p, q, nan, nan, method, converged=False))
            continue
        check = None
        if L <= crosscheck_max_L:
            dp, _ = _diag_pair(L, n_c, pc, qc)
            check = abs(dp - plus)
        out.append(GapSample(L, n / L, p, q, plus, minus, method, True, check))
    return out


@dataclass
class ExponentFit:
    z: float
    c: float
    residuals: list[float]
    used_L: list[int]
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def fit_exponent(samples: list[GapSample]) -> ExponentFit:
    """Least-squares fit of ln(-Re E) = ln c - z ln L on the largest half of the samples."""
    good = sorted((s for s in samples if s.converged), key=lambda s: s.L)
    if len(good) < 4:
        raise FitError(f"need at least 4 converged samples, got {len(good)}")
    Ls = np.array([s.L for s in good], dtype=float)
    if Ls[-1] < 10 * Ls[0]:
        raise FitError(f"samples span L={Ls[0]:g}..{Ls[-1]:g}, less than a decade")
    gaps = np.array([-s.E_plus.real for s in good])
    if np.any(gaps <= 0):
        raise FitError("a sample has non-negative Re E")
    if np.any(np.diff(gaps) >= 0):
        bad = [int(Ls[i + 1]) for i in np.nonzero(np.diff(gaps) >= 0)[0]]
        raise FitError(f"gap does not decrease with L at L={bad}")
    k = math.ceil(len(good) / 2)
    x, y = np.log(Ls[-k:]), np.log(gaps[-k:])
    A = np.column_stack([np.ones_like(x), x])
    (lnc, slope), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ np.array([lnc, slope])
    # local slopes over consecutive pairs show how far the fit is from its limit
    local = -np.diff(np.log(gaps)) / np.diff(np.log(Ls))
    return ExponentFit(float(-slope), float(math.exp(lnc)), resid.tolist(),
                       [int(v) for v in Ls[-k:]], {"local_z": local.tolist()})


def asymptotic_prediction(L, rho, p, q) -> tuple[complex, complex]:
    """Leading large-L form of the second-largest pair (E+, E-)."""
    if p == q:
        v = complex(-4 * math.pi ** 2 * p / L ** 2)
        return v, v
    re = -2 * C_KPZ * abs(p - q) * math.sqrt(rho * (1 - rho)) * L ** -1.5
    im = 2 * math.pi * abs((p - q) * (1 - 2 * rho)) / L
    return complex(re, im), complex(re, -im)


@dataclass
class AmplitudeFit:
    amplitude: float
    slope: float
    predicted: float
    relative_error: float


def extrapolate_amplitude(samples: list[GapSample]) -> AmplitudeFit:
    """Fit c(L) = -Re E L^{3/2} linearly in L^{-1/2} and return the L -> inf intercept."""
    good = sorted((s for s in samples if s.converged), key=lambda s: s.L)
    if len(good) < 2:
        raise FitError("need at least two samples")
    s0 = good[0]
    if s0.p == s0.q:
        raise FitError("the L^{-3/2} amplitude is defined only for p != q")
    Ls = np.array([s.L for s in good], dtype=float)
    cL = np.array([-s.E_plus.real for s in good]) * Ls ** 1.5
    A = np.column_stack([np.ones_like(Ls), Ls ** -0.5])
    (c_inf, slope), *_ = np.linalg.lstsq(A, cL, rcond=None)
    pred = 2 * C_KPZ * abs(s0.p - s0.q) * math.sqrt(s0.rho * (1 - s0.rho))
    return AmplitudeFit(float(c_inf), float(slope), pred, float(abs(c_inf - pred) / pred))


def split_densities(s: Sector) -> list[float]:
    """Density of the collapsed one-species sector for each split j."""
    return [t.parts[1] / s.L for t in split_sectors(s)]


def next_leading_spread(s: Sector, p, q) -> float:
    """Largest distance between any two of the next-leading values E+-_j."""
    vals = np.array([v for pair in next_leading(s, p, q) for v in pair])
    return float(np.max(np.abs(vals[:, None] - vals[None, :])))


def asymmetry_ramp(s: Sector, deltas, total: float = 1.0) -> list[tuple[float, float]]:
    """(p - q, spread) along p = (total + d)/2, q = (total - d)/2."""
    out = []
    for d in deltas:
        p, q = (total + d) / 2, (total - d) / 2
        out.append((float(d), next_leading_spread(s, p, q)))
    return out
