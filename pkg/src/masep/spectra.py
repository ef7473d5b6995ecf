"""Sector spectra, genuine spectra and the checks built on them."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as la
from scipy.optimize import linear_sum_assignment
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
import scipy.sparse as sp

from .operators import (
    CapacityError,
    RateMatrix,
    build_hamiltonian,
    build_omega,
    build_phi,
    dense_capacity,
)
from .sectors import (
    Sector,
    complement,
    cover_lowerings,
    full_sector,
    genuine_dimension,
    mobius,
    sector_dimension,
    subsectors,
)

TOL_ABS = 1e-8
TOL_REL = 1e-8


class EigenSolverError(RuntimeError):
    pass


class StructuralError(RuntimeError):
    """A computed object has the wrong dimension or fails an exact identity."""


@dataclass
class Spectrum:
    values: np.ndarray
    sector: Sector | None = None
    p: object = None
    q: object = None
    tol_abs: float = TOL_ABS
    tol_rel: float = TOL_REL
    label: str = "full"

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=complex).ravel()
        order = np.lexsort((vals.imag, -vals.real))
        self.values = vals[order]

    def __len__(self) -> int:
        return len(self.values)

    def tolerance(self, value: complex) -> float:
        return max(self.tol_abs, self.tol_rel * abs(value))

    def shifted(self, offset: complex, negate: bool = False, label: str | None = None) -> "Spectrum":
        vals = -self.values + offset if negate else self.values + offset
        return Spectrum(vals, self.sector, self.p, self.q, self.tol_abs, self.tol_rel, label or self.label)

    def grouped(self) -> list[tuple[complex, int]]:
        """Eigenvalues merged within tolerance, with multiplicities."""
        vals = self.values
        if len(vals) == 0:
            return []
        tol = max(self.tol_abs, self.tol_rel * float(np.max(np.abs(vals))))
        pts = np.column_stack([vals.real, vals.imag])
        pairs = cKDTree(pts).query_pairs(tol, output_type="ndarray")
        graph = sp.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(vals),) * 2) \
            if len(pairs) else sp.coo_matrix((len(vals), len(vals)))
        ncomp, lab = connected_components(graph, directed=False)
        out = []
        for c in range(ncomp):
            members = vals[lab == c]
            out.append((complex(members.mean()), len(members)))
        out.sort(key=lambda t: (-round(t[0].real, 10), round(t[0].imag, 10)))
        return out

    def to_json(self) -> str:
        return json.dumps({
            "sector": None if self.sector is None else self.sector.label(),
            "kind": self.label,
            "p": _num(self.p),
            "q": _num(self.q),
            "eigenvalues": [[_clean(v.real), _clean(v.imag), m] for v, m in self.grouped()],
        }, indent=1)

    def to_csv(self) -> str:
        lines = ["re,im,multiplicity"]
        for v, m in self.grouped():
            lines.append(f"{_clean(v.real)!r},{_clean(v.imag)!r},{m}")
        return "\n".join(lines) + "\n"


def _clean(x: float) -> float:
    x = round(float(x), 12)
    return 0.0 if x == 0 else x


def _num(x):
    if x is None:
        return None
    return float(x)


def _check_capacity(dim: int) -> None:
    cap = dense_capacity()
    if dim > cap:
        raise CapacityError(f"dense dimension {dim} exceeds capacity {cap}")


def eigendecompose(M, left: bool = False, check: bool = True):
    """All eigenpairs of a real nonsymmetric matrix.

    Returns ``(values, right)`` or ``(values, right, left)``; columns are
    eigenvectors.  The backward error ``|Mv - Ev| / |M|`` of each pair is
    required to stay below 1e-10.
    """
    A = M.to_dense(float) if isinstance(M, RateMatrix) else np.asarray(M)
    _check_capacity(A.shape[0])
    try:
        if left:
            w, vl, vr = la.eig(A, left=True, right=True)
        else:
            w, vr = la.eig(A)
    except la.LinAlgError as exc:
        raise EigenSolverError(f"eigenvalue iteration failed: {exc}") from exc
    if check and A.size:
        norm = max(np.linalg.norm(A, 2), 1.0)
        res = np.linalg.norm(A @ vr - vr * w, axis=0) / np.linalg.norm(vr, axis=0)
        worst = float(np.max(res)) / norm
        if worst > 1e-10:
            raise EigenSolverError(f"backward error {worst:.2e} above 1e-10")
    return (w, vr, vl) if left else (w, vr)


@lru_cache(maxsize=4096)
def _spectrum_values(parts: tuple[int, ...], p, q) -> np.ndarray:
    s = Sector(sum(parts), parts)
    H = build_hamiltonian(s, p, q).to_dense(float)
    vals = la.eigvals(H)
    vals.setflags(write=False)
    return vals


def sector_spectrum(s: Sector, p, q) -> Spectrum:
    # checked outside the cache so a lowered capacity still applies
    _check_capacity(sector_dimension(s))
    return Spectrum(_spectrum_values(s.parts, p, q), s, p, q)


@dataclass
class MatchCertificate:
    ok: bool
    pairs: list = field(default_factory=list)
    unmatched: list = field(default_factory=list)
    worst: float = 0.0
    ambiguous: int = 0

    def __bool__(self) -> bool:
        return self.ok


def match_into(big, small, tol_abs: float = TOL_ABS, tol_rel: float = TOL_REL) -> MatchCertificate:
    """Inject the multiset ``small`` into ``big`` respecting multiplicities.

    Values within ``max(tol_abs, tol_rel*|b|)`` of each other are candidates;
    each connected cluster of candidates is resolved by a minimum-cost
    assignment, so degenerate eigenvalues never steal each other's partners.
    """
    A = np.asarray(getattr(big, "values", big), dtype=complex)
    B = np.asarray(getattr(small, "values", small), dtype=complex)
    if len(B) == 0:
        return MatchCertificate(True)
    if len(A) == 0:
        return MatchCertificate(False, unmatched=list(range(len(B))))
    tree = cKDTree(np.column_stack([A.real, A.imag]))
    radii = np.maximum(tol_abs, tol_rel * np.abs(B))
    cand = tree.query_ball_point(np.column_stack([B.real, B.imag]), radii)
    rows, cols = [], []
    for i, js in enumerate(cand):
        for j in js:
            rows.append(i)
            cols.append(len(B) + j)
    nB, nA = len(B), len(A)
    graph = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(nB + nA, nB + nA))
    ncomp, lab = connected_components(graph, directed=False)
    pairs, unmatched, worst, ambiguous = [], [], 0.0, 0
    big_cost = 1e300
    for c in range(ncomp):
        bi = np.flatnonzero(lab[:nB] == c)
        if len(bi) == 0:
            continue
        aj = np.flatnonzero(lab[nB:] == c)
        if len(aj) == 0:
            unmatched.extend(int(i) for i in bi)
            continue
        if len(bi) > 1 or len(aj) > 1:
            ambiguous += 1
        dist = np.abs(B[bi][:, None] - A[aj][None, :])
        allowed = dist <= radii[bi][:, None]
        cost = np.where(allowed, dist, big_cost)
        r, k = linear_sum_assignment(cost)
        used = set()
        for i, j in zip(r, k):
            if allowed[i, j]:
                pairs.append((int(bi[i]), int(aj[j])))
                worst = max(worst, float(dist[i, j]))
                used.add(i)
        unmatched.extend(int(bi[i]) for i in range(len(bi)) if i not in used)
    return MatchCertificate(not unmatched, sorted(pairs), sorted(unmatched), worst, ambiguous)


def multiset_contains(A, B, tol_abs: float = TOL_ABS, tol_rel: float = TOL_REL) -> MatchCertificate:
    return match_into(A, B, tol_abs, tol_rel)


def multiset_equal(A, B, tol_abs: float = TOL_ABS, tol_rel: float = TOL_REL) -> MatchCertificate:
    a = np.asarray(getattr(A, "values", A))
    b = np.asarray(getattr(B, "values", B))
    if len(a) != len(b):
        return MatchCertificate(False, unmatched=list(range(len(b))))
    return match_into(a, b, tol_abs, tol_rel)


def multiset_difference(A, B, tol_abs: float = TOL_ABS, tol_rel: float = TOL_REL) -> np.ndarray:
    """A minus B as multisets; raises if B is not contained in A."""
    a = np.asarray(getattr(A, "values", A), dtype=complex)
    cert = match_into(a, B, tol_abs, tol_rel)
    if not cert.ok:
        raise StructuralError(f"{len(cert.unmatched)} values could not be removed")
    used = {j for _, j in cert.pairs}
    return np.array([v for j, v in enumerate(a) if j not in used], dtype=complex)


@dataclass
class GenuineComponent:
    sector: Sector
    basis_matrix: np.ndarray
    dimension: int
    restricted: np.ndarray | None = None
    invariance_residual: float = 0.0


def _stacked_lowerings(s: Sector) -> np.ndarray | None:
    blocks = [build_phi(u, s).to_dense(float) for u in cover_lowerings(s)]
    return np.vstack(blocks) if blocks else None


def genuine_component(s: Sector, p=None, q=None) -> GenuineComponent:
    """Orthonormal basis of the common kernel of all cover-step merging maps.

    With rates given, also returns H restricted to that subspace.
    """
    dim = sector_dimension(s)
    _check_capacity(dim)
    stack = _stacked_lowerings(s)
    if stack is None:
        B = np.eye(dim)
    else:
        u, sv, vt = la.svd(stack, full_matrices=True)
        tol = 1e-10 * (sv[0] if len(sv) else 1.0)
        rank = int(np.sum(sv > tol))
        B = vt[rank:].T.conj()
    expected = genuine_dimension(s)
    if B.shape[1] != expected:
        raise StructuralError(f"kernel of {s} has dimension {B.shape[1]}, expected {expected}")
    comp = GenuineComponent(s, B, expected)
    if p is not None:
        H = build_hamiltonian(s, p, q).to_dense(float)
        HB = H @ B
        M = B.T @ HB
        comp.restricted = M
        scale = max(np.linalg.norm(H, 2), 1.0)
        comp.invariance_residual = float(np.linalg.norm(HB - B @ M)) / scale if B.size else 0.0
        if comp.invariance_residual > 1e-9:
            raise StructuralError(f"kernel of {s} is not H-invariant (residual {comp.invariance_residual:.2e})")
    return comp


def _genuine_kernel(s: Sector, p, q) -> np.ndarray:
    comp = genuine_component(s, p, q)
    if comp.dimension == 0:
        return np.zeros(0, dtype=complex)
    return la.eigvals(comp.restricted)


def _genuine_mobius(s: Sector, p, q, tol_abs: float, tol_rel: float) -> np.ndarray:
    plus, minus = [], []
    for u in subsectors(s):
        vals = sector_spectrum(u, p, q).values
        (plus if mobius(u, s) > 0 else minus).append(vals)
    pos = np.concatenate(plus)
    neg = np.concatenate(minus) if minus else np.zeros(0, dtype=complex)
    out = multiset_difference(pos, neg, tol_abs, tol_rel)
    if len(out) != genuine_dimension(s):
        raise StructuralError(f"signed combination for {s} left {len(out)} values")
    return out


def genuine_spectrum(s: Sector, p, q, method: str = "kernel",
                     tol_abs: float = TOL_ABS, tol_rel: float = TOL_REL) -> Spectrum:
    if method == "kernel":
        vals = _genuine_kernel(s, p, q)
    elif method == "mobius":
        vals = _genuine_mobius(s, p, q, tol_abs, tol_rel)
    else:
        raise ValueError(f"unknown method {method!r}")
    return Spectrum(vals, s, p, q, tol_abs, tol_rel, label=f"genuine-{method}")


@dataclass
class DualityReport:
    sector: Sector
    ok: bool
    spectral_match: MatchCertificate
    methods_agree: bool
    image_residual: float
    image_rank: int
    expected_rank: int
    failing: list = field(default_factory=list)


def omega_image(s: Sector) -> np.ndarray:
    """Images of the genuine bras of the complement sector under the reversal map.

    Columns live in the space of ``s``; they should span its genuine component.
    """
    L = s.L
    top = full_sector(L)
    sbar = complement(s)
    reps = genuine_component(sbar).basis_matrix
    lift = build_phi(sbar, top).to_dense(float).T
    W = build_omega(L).to_dense(float)
    down = build_phi(s, top).to_dense(float)
    return down @ (W @ (lift @ reps))


def check_spectral_duality(s: Sector, p, q, tol_abs: float = TOL_ABS, tol_rel: float = TOL_REL,
                           with_omega: bool = True) -> DualityReport:
    L = s.L
    sbar = complement(s)
    g_s = genuine_spectrum(s, p, q, "kernel", tol_abs, tol_rel)
    g_sbar = genuine_spectrum(sbar, p, q, "kernel", tol_abs, tol_rel)
    m_s = genuine_spectrum(s, p, q, "mobius", tol_abs, tol_rel)
    agree = bool(multiset_equal(g_s, m_s, tol_abs, tol_rel))
    target = g_s.shifted(-L * float(p + q), negate=True)
    cert = multiset_equal(g_sbar, target, tol_abs, tol_rel)
    failing = [complex(target.values[i]) for i in cert.unmatched]
    residual, rank = 0.0, genuine_dimension(s)
    if with_omega:
        img = omega_image(s)
        stack = _stacked_lowerings(s)
        if stack is not None and img.size:
            residual = float(np.linalg.norm(stack @ img)) / max(np.linalg.norm(img), 1.0)
        rank = int(np.linalg.matrix_rank(img, tol=1e-10 * max(np.linalg.norm(img, 2), 1.0))) if img.size else 0
    ok = cert.ok and agree and residual <= 1e-10 and rank == genuine_dimension(s)
    return DualityReport(s, ok, cert, agree, residual, rank, genuine_dimension(s), failing)


def _drop_stationary(values: np.ndarray) -> np.ndarray:
    vals = np.asarray(values, dtype=complex)
    i = int(np.argmin(np.abs(vals)))
    return np.delete(vals, i)


def leading_nonzero(spec, tol: float = TOL_ABS) -> np.ndarray:
    """All nonzero eigenvalues whose real part is maximal within ``tol``."""
    vals = _drop_stationary(getattr(spec, "values", spec))
    if len(vals) == 0:
        raise ValueError("single-state sector has no nonzero eigenvalue")
    top = vals.real.max()
    sel = vals[vals.real >= top - tol]
    return sel[np.lexsort((sel.imag,))]


def second_largest(spec, tol: float = TOL_ABS) -> tuple[complex, complex]:
    """The pair E+ (Im >= 0) and E- of leading nonzero eigenvalues."""
    sel = leading_nonzero(spec, tol)
    plus = sel[np.argmax(sel.imag)]
    minus = sel[np.argmin(sel.imag)]
    if len(sel) == 1:
        minus = plus
    return complex(plus), complex(minus)


def split_sectors(s: Sector) -> list[Sector]:
    """The one-species sectors (m_1+...+m_j, m_{j+1}+...+m_n), j = 1..n-1."""
    out = []
    for j in range(1, s.n):
        a = sum(s.parts[:j])
        out.append(Sector(s.L, (a, s.L - a)))
    return out


def next_leading(s: Sector, p, q) -> list[tuple[complex, complex]]:
    if s.n < 2:
        raise ValueError("next-leading eigenvalues need at least two species")
    return [second_largest(sector_spectrum(t, p, q)) for t in split_sectors(s)]


@dataclass
class GapCheck:
    sector: Sector
    ok: bool
    bound: float
    witness: complex | None
    margin: float


def check_gap_conjecture(s: Sector, p, q, tol: float = TOL_ABS) -> GapCheck:
    """No nonzero eigenvalue may lie strictly right of the next-leading string."""
    if s.n < 2:
        return GapCheck(s, True, 0.0, None, float("inf"))
    bound = max(e[0].real for e in next_leading(s, p, q))
    vals = _drop_stationary(sector_spectrum(s, p, q).values)
    i = int(np.argmax(vals.real))
    top = complex(vals[i])
    ok = top.real <= bound + tol
    return GapCheck(s, ok, bound, None if ok else top, bound - top.real)


def stationary_vector(s: Sector, p, q) -> np.ndarray:
    """Probability vector spanning the kernel of the sector generator."""
    dim = sector_dimension(s)
    _check_capacity(dim)
    if dim == 1:
        return np.ones(1)
    H = build_hamiltonian(s, p, q).to_dense(float)
    u, sv, vt = la.svd(H)
    tol = 1e-10 * max(sv[0], 1.0)
    null = vt[sv <= tol]
    if null.shape[0] != 1:
        raise StructuralError(f"kernel of H on {s} has dimension {null.shape[0]}")
    v = null[0].real
    v = v / v.sum()
    if v.min() < -1e-12:
        raise StructuralError("stationary vector has negative components")
    return v
