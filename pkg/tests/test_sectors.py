from itertools import combinations
from math import comb, factorial

import pytest
from hypothesis import given, settings, strategies as st

from masep.sectors import (
    Sector,
    SectorError,
    complement,
    enumerate_basic_sectors,
    full_sector,
    genuine_dimension,
    hasse_cover_edges,
    is_subsector,
    mobius,
    sector_dimension,
    subsectors,
)


def sectors_up_to(L_max):
    return st.integers(1, L_max).flatmap(
        lambda L: st.sets(st.integers(1, max(L - 1, 1)), max_size=L - 1).map(
            lambda sub: Sector.from_subset(L, [x for x in sub if x < L])))


def test_enumerate_l2():
    got = enumerate_basic_sectors(2)
    assert [(s.parts, s.subset) for s in got] == [((2,), ()), ((1, 1), (1,))]


def test_enumerate_l4_correspondence():
    got = {s.parts: s.subset for s in enumerate_basic_sectors(4)}
    assert len(got) == 8
    assert got[(1, 2, 1)] == (1, 3)
    assert got[(4,)] == ()
    assert got[(1, 1, 1, 1)] == (1, 2, 3)


@pytest.mark.parametrize("L", range(1, 9))
def test_enumeration_count(L):
    got = enumerate_basic_sectors(L)
    assert len(got) == 2 ** (L - 1)
    assert len(set(got)) == len(got)
    # cardinality first, then lexicographic
    assert got == sorted(got, key=Sector.sort_key)


def test_complement_examples():
    assert complement(Sector(4, (1, 3))).parts == (2, 1, 1)
    assert complement(Sector(4, (4,))).parts == (1, 1, 1, 1)


@given(sectors_up_to(10))
def test_complement_involution(s):
    assert complement(complement(s)) == s
    assert set(s.subset).isdisjoint(complement(s).subset)


@pytest.mark.parametrize("parts,dim", [((2, 1, 3, 1), 420), ((1, 1, 1, 1), 24), ((7,), 1), ((2, 3), 10)])
def test_dimension(parts, dim):
    assert sector_dimension(Sector(sum(parts), parts)) == dim


L4_GENUINE = {(4,): 1, (1, 3): 3, (2, 2): 5, (3, 1): 3, (1, 1, 2): 3, (1, 2, 1): 5, (2, 1, 1): 3, (1, 1, 1, 1): 1}


def test_genuine_dimension_l4_table():
    got = {s.parts: genuine_dimension(s) for s in enumerate_basic_sectors(4)}
    assert got == L4_GENUINE


def test_genuine_dimension_l5_pair():
    assert genuine_dimension(Sector(5, (1, 2, 1, 1))) == 9
    assert genuine_dimension(Sector(5, (2, 3))) == 9


def _genuine_by_subsets(s):
    # oracle: inclusion-exclusion over subsets of the subset, with dimensions
    # from binomial products rather than multinomials
    total = 0
    for k in range(len(s.subset) + 1):
        for sub in combinations(s.subset, k):
            bounds = [0, *sub, s.L]
            dim, left = 1, s.L
            for a, b in zip(bounds, bounds[1:]):
                dim *= comb(left, b - a)
                left -= b - a
            total += (-1) ** (len(s.subset) - k) * dim
    return total


@given(sectors_up_to(12))
def test_genuine_dimension_matches_oracle(s):
    assert genuine_dimension(s) == _genuine_by_subsets(s)


@given(sectors_up_to(12))
def test_dimensional_duality(s):
    assert genuine_dimension(s) == genuine_dimension(complement(s))
    assert sum(genuine_dimension(u) for u in subsectors(s)) == sector_dimension(s)


def test_full_sector_genuine_is_one():
    # the maximal sector carries only the sign-alternating state
    for L in range(1, 9):
        assert genuine_dimension(full_sector(L)) == 1


def test_mobius_examples():
    assert mobius(Sector.from_subset(4, [1]), Sector.from_subset(4, [1, 2, 3])) == 1
    assert mobius(Sector.from_subset(4, [1, 2]), Sector.from_subset(4, [1, 2, 3])) == -1
    assert mobius(Sector.from_subset(4, [2]), Sector.from_subset(4, [1, 3])) == 0


def test_mobius_sum_reproduces_genuine_l4():
    for s in enumerate_basic_sectors(4):
        got = sum(mobius(u, s) * sector_dimension(u) for u in subsectors(s))
        assert got == L4_GENUINE[s.parts]


@pytest.mark.parametrize("L,edges", [(2, 1), (4, 12), (5, 32)])
def test_hasse_edge_count(L, edges):
    got = hasse_cover_edges(L)
    assert len(got) == edges == (L - 1) * 2 ** (L - 2)
    for e in got:
        assert is_subsector(e.lower, e.upper)
        assert len(e.upper.subset) == len(e.lower.subset) + 1


def test_hasse_l2():
    (e,) = hasse_cover_edges(2)
    assert e.lower.subset == () and e.upper.subset == (1,)


def test_parse_forms():
    assert Sector.parse("2,1,3,1").subset == (2, 3, 6)
    assert Sector.parse("s:2,3,6", L=7).parts == (2, 1, 3, 1)
    assert Sector.parse("s:", L=3).parts == (3,)


@pytest.mark.parametrize("bad", ["0,2", "a,b", ""])
def test_parse_rejects(bad):
    with pytest.raises(SectorError):
        Sector.parse(bad)


def test_parse_wrong_length():
    with pytest.raises(SectorError):
        Sector.parse("1,2", L=4)
    with pytest.raises(SectorError):
        Sector.parse("s:4", L=4)
    with pytest.raises(SectorError):
        Sector.parse("s:1")


@settings(max_examples=50)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=5))
def test_multinomial_via_factorials(parts):
    s = Sector(sum(parts), tuple(parts))
    expect = factorial(s.L)
    for x in parts:
        expect //= factorial(x)
    assert sector_dimension(s) == expect
