"""Basic sectors of the multi-species ring and the boolean lattice they form.

A basic sector of a ring of length L is a composition m = (m_1, ..., m_n) of L
with all parts positive.  Equivalently it is the subset
{m_1, m_1 + m_2, ..., m_1 + ... + m_{n-1}} of {1, ..., L-1}.  Both views are
kept on :class:`Sector`; ordering and lattice operations use the subset view.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from math import comb, factorial


class SectorError(ValueError):
    """Invalid sector description or an operation on incompatible sectors."""


@dataclass(frozen=True, order=False)
class Sector:
    L: int
    parts: tuple[int, ...]
    subset: tuple[int, ...] = field(init=False)

    def __post_init__(self) -> None:
        parts = tuple(int(x) for x in self.parts)
        if self.L < 1:
            raise SectorError(f"ring length must be >= 1, got {self.L}")
        if not parts or any(x < 1 for x in parts):
            raise SectorError(f"parts must be positive, got {parts}")
        if sum(parts) != self.L:
            raise SectorError(f"parts {parts} do not sum to L={self.L}")
        object.__setattr__(self, "parts", parts)
        acc, sub = 0, []
        for x in parts[:-1]:
            acc += x
            sub.append(acc)
        object.__setattr__(self, "subset", tuple(sub))

    @classmethod
    def from_subset(cls, L: int, subset) -> "Sector":
        sub = sorted(set(int(x) for x in subset))
        if len(sub) != len(list(subset)):
            raise SectorError(f"repeated elements in subset {list(subset)}")
        if sub and (sub[0] < 1 or sub[-1] > L - 1):
            raise SectorError(f"subset {sub} not contained in 1..{L - 1}")
        bounds = [0, *sub, L]
        return cls(L, tuple(b - a for a, b in zip(bounds, bounds[1:])))

    @classmethod
    def parse(cls, text: str, L: int | None = None) -> "Sector":
        """Parse ``"2,1,3,1"`` (parts) or ``"s:2,3,6"`` (subset, needs ``L``)."""
        text = text.strip()
        if text.startswith("s:"):
            if L is None:
                raise SectorError("subset form needs the ring length L")
            body = text[2:].strip()
            items = [int(x) for x in body.split(",") if x.strip()] if body else []
            return cls.from_subset(L, items)
        try:
            parts = tuple(int(x) for x in text.split(",") if x.strip())
        except ValueError as exc:
            raise SectorError(f"cannot parse sector {text!r}") from exc
        total = sum(parts)
        if L is not None and total != L:
            raise SectorError(f"sector {text!r} does not sum to L={L}")
        return cls(total, parts)

    @property
    def n(self) -> int:
        """Number of species present."""
        return len(self.parts)

    def label(self) -> str:
        return ",".join(str(x) for x in self.parts)

    def sort_key(self) -> tuple:
        return (self.L, len(self.subset), self.subset)

    def __str__(self) -> str:
        return "(" + ",".join(str(x) for x in self.parts) + ")"


def enumerate_basic_sectors(L: int) -> list[Sector]:
    """All 2^(L-1) basic sectors ordered by subset size, then lexicographically."""
    if L < 1:
        raise SectorError(f"ring length must be >= 1, got {L}")
    omega = range(1, L)
    out = []
    for k in range(L):
        for sub in combinations(omega, k):
            out.append(Sector.from_subset(L, sub))
    return out


def full_sector(L: int) -> Sector:
    """The maximal sector (1, ..., 1), i.e. subset {1, ..., L-1}."""
    return Sector(L, (1,) * L)


def complement(s: Sector) -> Sector:
    rest = sorted(set(range(1, s.L)) - set(s.subset))
    return Sector.from_subset(s.L, rest)


def is_subsector(lower: Sector, upper: Sector) -> bool:
    return lower.L == upper.L and set(lower.subset) <= set(upper.subset)


def multinomial(parts) -> int:
    out = factorial(sum(parts))
    for x in parts:
        out //= factorial(x)
    return out


def sector_dimension(s: Sector) -> int:
    return multinomial(s.parts)


def contractions(parts: tuple[int, ...]) -> list[tuple[int, ...]]:
    """Every composition obtained from ``parts`` by merging adjacent blocks."""
    n = len(parts)
    out = []
    # each of the n-1 gaps is either kept or merged
    for mask in range(1 << (n - 1)):
        merged, cur = [], parts[0]
        for i in range(1, n):
            if mask >> (i - 1) & 1:
                cur += parts[i]
            else:
                merged.append(cur)
                cur = parts[i]
        merged.append(cur)
        out.append(tuple(merged))
    return out


@lru_cache(maxsize=None)
def _genuine(parts: tuple[int, ...]) -> int:
    # g[i] = S_i! times the signed sum of 1/prod(block!) over contractions of
    # the first i parts, built by choosing where the last block starts
    S = [0]
    for x in parts:
        S.append(S[-1] + x)
    g = [1]
    for i in range(1, len(parts) + 1):
        g.append(sum((-1) ** (i - j - 1) * g[j] * comb(S[i], S[j]) for j in range(i)))
    return g[-1]


def genuine_dimension(s: Sector) -> int:
    """Number of eigenvalues born in ``s`` (dimension of its genuine component).

    Signed sum of multinomials over all adjacent-merge contractions of the parts.
    """
    return _genuine(s.parts)


def mobius(lower: Sector, upper: Sector) -> int:
    if not is_subsector(lower, upper):
        return 0
    return (-1) ** (len(upper.subset) - len(lower.subset))


def subsectors(s: Sector) -> list[Sector]:
    """All u with u.subset contained in s.subset, in canonical order."""
    out = []
    for k in range(len(s.subset) + 1):
        for sub in combinations(s.subset, k):
            out.append(Sector.from_subset(s.L, sub))
    return out


@dataclass(frozen=True)
class PosetRelation:
    lower: Sector
    upper: Sector
    covers: bool


def hasse_cover_edges(L: int) -> list[PosetRelation]:
    edges = []
    for s in enumerate_basic_sectors(L):
        for r in range(1, L):
            if r not in s.subset:
                t = Sector.from_subset(L, (*s.subset, r))
                edges.append(PosetRelation(s, t, True))
    return edges


def cover_lowerings(s: Sector) -> list[Sector]:
    """Sectors covered by ``s``: one element of the subset removed."""
    return [Sector.from_subset(s.L, [x for x in s.subset if x != r]) for r in s.subset]
