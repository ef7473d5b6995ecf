"""Concrete linear operators on sector spaces.

Every operator is a :class:`RateMatrix`: a sparse map ``(row, col) -> value``
between two sector bases.  Entries keep whatever scalar type the rates carry,
so passing :class:`fractions.Fraction` rates gives exact matrices.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Number

import numpy as np
import scipy.sparse as sp

from .sectors import Sector, SectorError, full_sector, is_subsector, sector_dimension

BASIS_CAPACITY = 10**6


class CapacityError(RuntimeError):
    """Requested object exceeds the configured size limit."""


def dense_capacity() -> int:
    """Largest dense dimension handed to the eigensolver (env ``MASEP_CAPACITY``)."""
    return int(os.environ.get("MASEP_CAPACITY", "6000"))


def _multiset_permutations(word: list[int]):
    # lexicographic next-permutation walk over distinct arrangements
    a = sorted(word)
    n = len(a)
    while True:
        yield tuple(a)
        i = n - 2
        while i >= 0 and a[i] >= a[i + 1]:
            i -= 1
        if i < 0:
            return
        j = n - 1
        while a[j] <= a[i]:
            j -= 1
        a[i], a[j] = a[j], a[i]
        a[i + 1:] = reversed(a[i + 1:])


@dataclass(frozen=True)
class SectorBasis:
    sector: Sector
    states: tuple[tuple[int, ...], ...]
    index: dict = field(compare=False, repr=False)

    def __len__(self) -> int:
        return len(self.states)


_BASIS_CACHE: dict[Sector, SectorBasis] = {}


def build_basis(s: Sector, capacity: int | None = None) -> SectorBasis:
    """Configurations of the sector in lexicographic order."""
    cap = BASIS_CAPACITY if capacity is None else capacity
    dim = sector_dimension(s)
    if dim > cap:
        raise CapacityError(f"sector {s} has dimension {dim} > capacity {cap}")
    cached = _BASIS_CACHE.get(s)
    if cached is not None:
        return cached
    word = [a + 1 for a, m in enumerate(s.parts) for _ in range(m)]
    states = tuple(_multiset_permutations(word))
    basis = SectorBasis(s, states, {k: i for i, k in enumerate(states)})
    _BASIS_CACHE[s] = basis
    return basis


class RateMatrix:
    """Sparse matrix with an explicit domain and codomain basis.

    Column ``c`` is the image of ``domain.states[c]``; rows index
    ``codomain.states``.  Zero entries are never stored.
    """

    def __init__(self, domain: SectorBasis, codomain: SectorBasis, entries: dict | None = None):
        self.domain = domain
        self.codomain = codomain
        self.entries: dict[tuple[int, int], Number] = {}
        for key, val in (entries or {}).items():
            if val != 0:
                self.entries[key] = val

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.codomain), len(self.domain))

    def __repr__(self) -> str:
        return f"RateMatrix({self.codomain.sector} <- {self.domain.sector}, nnz={len(self.entries)})"

    def to_dense(self, dtype=float) -> np.ndarray:
        out = np.zeros(self.shape, dtype=dtype)
        for (r, c), v in self.entries.items():
            out[r, c] = v
        return out

    def to_sparse(self, dtype=float) -> sp.csr_matrix:
        if not self.entries:
            return sp.csr_matrix(self.shape, dtype=dtype)
        rows, cols = zip(*self.entries)
        vals = np.array([complex(v) if dtype is complex else float(v) for v in self.entries.values()], dtype=dtype)
        return sp.csr_matrix((vals, (rows, cols)), shape=self.shape)

    def transpose(self) -> "RateMatrix":
        return RateMatrix(self.codomain, self.domain, {(c, r): v for (r, c), v in self.entries.items()})

    def __matmul__(self, other: "RateMatrix") -> "RateMatrix":
        if self.domain.sector != other.codomain.sector:
            raise SectorError("incompatible bases in product")
        by_row: dict[int, list] = {}
        for (r, c), v in other.entries.items():
            by_row.setdefault(r, []).append((c, v))
        acc: dict[tuple[int, int], Number] = {}
        for (r, mid), v in self.entries.items():
            for c, w in by_row.get(mid, ()):
                acc[(r, c)] = acc.get((r, c), 0) + v * w
        return RateMatrix(other.domain, self.codomain, acc)

    def __add__(self, other: "RateMatrix") -> "RateMatrix":
        acc = dict(self.entries)
        for k, v in other.entries.items():
            acc[k] = acc.get(k, 0) + v
        return RateMatrix(self.domain, self.codomain, acc)

    def __sub__(self, other: "RateMatrix") -> "RateMatrix":
        return self + other.scale(-1)

    def scale(self, factor) -> "RateMatrix":
        return RateMatrix(self.domain, self.codomain, {k: v * factor for k, v in self.entries.items()})

    def apply(self, vec: dict) -> dict:
        """Apply to a vector given as ``{configuration: coefficient}``."""
        out: dict = {}
        idx = self.domain.index
        by_col: dict[int, list] = {}
        for (r, c), v in self.entries.items():
            by_col.setdefault(c, []).append((r, v))
        for k, a in vec.items():
            for r, v in by_col.get(idx[tuple(k)], ()):
                key = self.codomain.states[r]
                out[key] = out.get(key, 0) + a * v
        return {k: v for k, v in out.items() if v != 0}

    def column_sums(self) -> list:
        sums = [0] * len(self.domain)
        for (_, c), v in self.entries.items():
            sums[c] += v
        return sums

    def same_as(self, other: "RateMatrix", tol: float = 0.0) -> bool:
        if self.shape != other.shape:
            return False
        keys = set(self.entries) | set(other.entries)
        return all(abs(self.entries.get(k, 0) - other.entries.get(k, 0)) <= tol for k in keys)

    def to_csv(self) -> str:
        lines = ["row,col,value"]
        for (r, c), v in sorted(self.entries.items()):
            lines.append(f"{r},{c},{_scalar_text(v)}")
        return "\n".join(lines) + "\n"

    def to_json(self, p=None, q=None) -> str:
        env = {
            "domain_sector": self.domain.sector.label(),
            "codomain_sector": self.codomain.sector.label(),
            "p": None if p is None else _scalar_text(p),
            "q": None if q is None else _scalar_text(q),
            "domain_basis": ["".join(map(str, k)) for k in self.domain.states],
            "codomain_basis": ["".join(map(str, k)) for k in self.codomain.states],
            "entries": [[r, c, _scalar_text(v)] for (r, c), v in sorted(self.entries.items())],
        }
        return json.dumps(env, indent=1)


def _scalar_text(v) -> str:
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, complex):
        return repr(v)
    return repr(float(v))


def identity(basis: SectorBasis, one=1) -> RateMatrix:
    return RateMatrix(basis, basis, {(i, i): one for i in range(len(basis))})


def _check_rates(p, q) -> None:
    if p < 0 or q < 0:
        raise ValueError(f"rates must be non-negative, got p={p}, q={q}")


def hop_rate(x: int, p, q):
    """Rate for the local exchange of a pair with species difference ``x``."""
    if x > 0:
        return p
    if x < 0:
        return q
    return 0 * p


def build_hamiltonian(s: Sector, p, q, capacity: int | None = None) -> RateMatrix:
    """Markov generator of the sector; bonds (i, i+1 mod L) for every site i."""
    _check_rates(p, q)
    basis = build_basis(s, capacity)
    L = s.L
    entries: dict[tuple[int, int], Number] = {}
    for col, k in enumerate(basis.states):
        diag = 0 * p
        for i in range(L):
            j = (i + 1) % L
            if k[i] == k[j]:
                continue
            rate = hop_rate(k[i] - k[j], p, q)
            if rate == 0:
                continue
            swapped = list(k)
            swapped[i], swapped[j] = k[j], k[i]
            row = basis.index[tuple(swapped)]
            entries[(row, col)] = entries.get((row, col), 0) + rate
            diag -= rate
        if diag != 0:
            entries[(col, col)] = entries.get((col, col), 0) + diag
    return RateMatrix(basis, basis, entries)


def build_symmetry(s: Sector, kind: str) -> RateMatrix:
    """Cyclic shift, reflection or charge conjugation as a permutation matrix.

    ``charge`` maps the sector onto the one with reversed parts.
    """
    basis = build_basis(s)
    n = s.n
    if kind == "shift":
        target, image = basis, lambda k: (k[-1],) + k[:-1]
    elif kind == "reflection":
        target, image = basis, lambda k: k[::-1]
    elif kind == "charge":
        target = build_basis(Sector(s.L, s.parts[::-1]))
        image = lambda k: tuple(n + 1 - a for a in k)
    else:
        raise ValueError(f"unknown symmetry {kind!r}")
    entries = {(target.index[image(k)], c): 1 for c, k in enumerate(basis.states)}
    return RateMatrix(basis, target, entries)


def species_map(s: Sector, t: Sector) -> list[int]:
    """Relabeling of the species of ``t`` onto those of the smaller sector ``s``.

    Entry ``x - 1`` of the result is the image of species ``x``.
    """
    if not is_subsector(s, t):
        raise SectorError(f"{s} is not a subsector of {t}")
    kept = set(s.subset)
    removed = [i + 1 for i, v in enumerate(t.subset) if v not in kept]
    return [x - sum(1 for r in removed if r < x) for x in range(1, t.n + 1)]


def build_phi(s: Sector, t: Sector) -> RateMatrix:
    """Species-merging map from the space of ``t`` onto the space of ``s``."""
    relabel = species_map(s, t)
    src, dst = build_basis(t), build_basis(s)
    entries = {}
    for c, k in enumerate(src.states):
        entries[(dst.index[tuple(relabel[a - 1] for a in k)], c)] = 1
    return RateMatrix(src, dst, entries)


def permutation_sign(k) -> int:
    sign, seen = 1, [False] * len(k)
    for i in range(len(k)):
        if seen[i]:
            continue
        j, length = i, 0
        while not seen[j]:
            seen[j] = True
            j = k[j] - 1
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


def build_omega(L: int) -> RateMatrix:
    """Sign-and-reversal map on the maximal sector: bra k -> sgn(k) |reversed k>."""
    basis = build_basis(full_sector(L))
    entries = {(basis.index[k[::-1]], c): permutation_sign(k) for c, k in enumerate(basis.states)}
    return RateMatrix(basis, basis, entries)


def r_matrix_entry(out: tuple[int, int], inp: tuple[int, int], lam, p, q):
    """Entry R^{gamma delta}_{alpha beta}(lam) with inp=(alpha, beta), out=(gamma, delta)."""
    (g, d), (a, b) = out, inp
    if a == b:
        return 1 if (g, d) == (a, b) else 0
    c = q if a < b else p
    if (g, d) == (a, b):
        return c * lam
    if (g, d) == (b, a):
        return 1 - c * lam
    return 0


def build_r_matrix(lam, p, q, N: int) -> np.ndarray:
    """Dense R(lam) = P(1 + lam h) on W (x) W with index alpha*N + beta (0-based)."""
    if N < 1:
        raise ValueError("N must be >= 1")
    R = np.zeros((N * N, N * N), dtype=complex)
    for a in range(N):
        for b in range(N):
            for g, d in ((a, b), (b, a)):
                R[g * N + d, a * N + b] = r_matrix_entry((g, d), (a, b), lam, p, q)
    return R


def spectral_parameter_merge(l1, l2, p, q):
    """Combined argument (l1 - l2)/(1 - (p+q) l2 + p q l1 l2) of the Yang-Baxter relation."""
    den = 1 - (p + q) * l2 + p * q * l1 * l2
    if den == 0:
        raise ZeroDivisionError("pole of the merged spectral parameter")
    return (l1 - l2) / den


def _swap(N: int) -> np.ndarray:
    P = np.zeros((N * N, N * N))
    for a in range(N):
        for b in range(N):
            P[b * N + a, a * N + b] = 1
    return P


def three_site(R: np.ndarray, N: int, pair: str) -> np.ndarray:
    """Embed a two-site matrix into W (x) W (x) W on sites ``pair`` (12, 13 or 23)."""
    I = np.eye(N)
    if pair == "12":
        return np.kron(R, I)
    if pair == "23":
        return np.kron(I, R)
    if pair == "13":
        P23 = np.kron(I, _swap(N))
        return P23 @ np.kron(R, I) @ P23
    raise ValueError(f"unknown site pair {pair!r}")


def ybe_residual(l1, l2, p, q, N: int) -> float:
    """Max-entry residual of R23(l2) R13(l1) R12(xi) = R12(xi) R13(l1) R23(l2)."""
    xi = spectral_parameter_merge(l1, l2, p, q)
    R12 = three_site(build_r_matrix(xi, p, q, N), N, "12")
    R13 = three_site(build_r_matrix(l1, p, q, N), N, "13")
    R23 = three_site(build_r_matrix(l2, p, q, N), N, "23")
    return float(np.abs(R23 @ R13 @ R12 - R12 @ R13 @ R23).max())


def _poly_mul_linear(poly: list, c0, c1) -> list:
    # poly * (c0 + c1 * lam)
    out = [0] * (len(poly) + 1)
    for i, a in enumerate(poly):
        if a == 0:
            continue
        if c0 != 0:
            out[i] += a * c0
        if c1 != 0:
            out[i + 1] += a * c1
    while len(out) > 1 and out[-1] == 0:
        out.pop()
    return out


def transfer_coefficients(s: Sector, p, q, n_states: int | None = None,
                          capacity: int | None = None) -> list[RateMatrix]:
    """Matrices T_0, ..., T_L with T(lam) = sum_k lam^k T_k on the sector.

    The auxiliary space has ``n_states`` local states (default L).  The trace
    is contracted one site at a time; each partial path carries its exact
    polynomial weight, so derivatives at lam = 0 are read off directly.
    """
    basis = build_basis(s, capacity)
    L = s.L
    N = L if n_states is None else n_states
    if N < s.n:
        raise ValueError(f"auxiliary space with {N} states cannot carry {s.n} species")
    one, zero = p ** 0, 0 * p
    acc: list[dict] = [dict() for _ in range(L + 1)]
    for col, k in enumerate(basis.states):
        for alpha in range(1, N + 1):
            paths = {(alpha, ()): [one]}
            for site in k:
                nxt: dict = {}
                for (aux, out), poly in paths.items():
                    if aux == site:
                        steps = [((aux, out + (site,)), one, zero)]
                    else:
                        c = q if aux < site else p
                        steps = [((aux, out + (site,)), zero, c),
                                 ((site, out + (aux,)), one, -c)]
                    for key, c0, c1 in steps:
                        new = _poly_mul_linear(poly, c0, c1)
                        if key in nxt:
                            old = nxt[key]
                            if len(old) < len(new):
                                old, new = new, old
                            old = list(old)
                            for i, v in enumerate(new):
                                old[i] += v
                            nxt[key] = old
                        else:
                            nxt[key] = new
                paths = nxt
            for (aux, out), poly in paths.items():
                if aux != alpha:
                    continue
                row = basis.index[out]
                for deg, v in enumerate(poly):
                    if v != 0:
                        acc[deg][(row, col)] = acc[deg].get((row, col), 0) + v
    return [RateMatrix(basis, basis, a) for a in acc]


def evaluate_transfer(coeffs: list[RateMatrix], lam, dtype=complex) -> np.ndarray:
    """Dense T(lam) from its polynomial coefficients."""
    out = np.zeros(coeffs[0].shape, dtype=dtype)
    power = 1
    for T in coeffs:
        if T.entries:
            out += power * T.to_dense(dtype)
        power = power * lam
    return out


def build_transfer(lam, s: Sector, p, q, n_states: int | None = None) -> RateMatrix:
    """T(lam) on the sector as a RateMatrix (exact if ``lam``, p, q are exact)."""
    coeffs = transfer_coefficients(s, p, q, n_states)
    acc: dict = {}
    power = lam ** 0
    for T in coeffs:
        for key, v in T.entries.items():
            acc[key] = acc.get(key, 0) + v * power
        power = power * lam
    return RateMatrix(coeffs[0].domain, coeffs[0].domain, acc)
