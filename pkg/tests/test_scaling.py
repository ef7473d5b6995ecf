import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from masep.scaling import (
    C_KPZ,
    FitError,
    GapSample,
    asymmetry_ramp,
    asymptotic_prediction,
    extrapolate_amplitude,
    fit_exponent,
    gap_scan,
    next_leading_spread,
    particle_count,
    split_densities,
)
from masep.sectors import Sector


def synthetic(Ls, z, c=2.0, p=0.8, q=0.2, rho=0.5):
    return [GapSample(L, rho, p, q, complex(-c * L ** -z, 0), complex(-c * L ** -z, 0), "synthetic") for L in Ls]


def test_particle_count():
    assert particle_count(64, 0.5) == 32
    assert particle_count(12, 0.25) == 3
    with pytest.raises(ValueError):
        particle_count(10, 0.25)


def test_ssep_scan_exact():
    Ls = [4, 6, 8, 12]
    for s in gap_scan(Ls, 0.5, 0.3, 0.3, method="diagonalization"):
        assert s.E_plus.real == pytest.approx(-4 * 0.3 * math.sin(math.pi / s.L) ** 2, abs=1e-10)
    for s in gap_scan(Ls, 0.5, 0.3, 0.3, method="bethe"):
        assert s.E_plus.real == pytest.approx(-4 * 0.3 * math.sin(math.pi / s.L) ** 2, abs=1e-12)


def test_bethe_crosscheck_small_l():
    samples = gap_scan([8, 12, 16], 0.25, 0.8, 0.2, method="bethe", crosscheck_max_L=12)
    assert [s.crosscheck is not None for s in samples] == [True, True, False]
    assert all(s.crosscheck < 1e-8 for s in samples if s.crosscheck is not None)


def test_scan_canonicalizes_rates_and_density():
    a = gap_scan([12], 0.25, 0.8, 0.2, method="diagonalization")[0]
    b = gap_scan([12], 0.75, 0.2, 0.8, method="diagonalization")[0]
    assert a.E_plus == pytest.approx(b.E_plus, abs=1e-10)
    c = gap_scan([12], 0.75, 0.2, 0.8, method="bethe")[0]
    assert c.E_plus == pytest.approx(a.E_plus, abs=1e-8)


def test_scan_rejects():
    with pytest.raises(ValueError):
        gap_scan([8], 0.5, 0.8, 0.2, method="lanczos")
    with pytest.raises(ValueError):
        gap_scan([8], 1.0, 0.8, 0.2)
    with pytest.raises(ValueError):
        gap_scan([8], 0.5, -0.1, 0.2)


def test_fit_ssep_is_two():
    samples = gap_scan([16, 32, 64, 128, 256], 0.5, 0.5, 0.5, method="bethe")
    fit = fit_exponent(samples)
    assert abs(fit.z - 2) < 1e-3
    assert fit.c == pytest.approx(4 * math.pi ** 2 * 0.5, rel=1e-2)


@given(st.floats(1.0, 3.0), st.floats(0.1, 10))
def test_fit_recovers_power_law(z, c):
    fit = fit_exponent(synthetic([10, 20, 40, 80, 160], z, c))
    assert fit.z == pytest.approx(z, abs=1e-9)
    assert fit.c == pytest.approx(c, rel=1e-9)
    assert np.allclose(fit.diagnostics["local_z"], z)


def test_fit_refusals():
    with pytest.raises(FitError):
        fit_exponent(synthetic([64, 128], 1.5))
    with pytest.raises(FitError):
        fit_exponent(synthetic([64, 80, 96, 112], 1.5))
    rising = synthetic([10, 20, 40, 80], 1.5)
    rising[2].E_plus = complex(-1.0, 0)
    with pytest.raises(FitError):
        fit_exponent(rising)
    broken = synthetic([10, 20, 40, 80], 1.5)
    for s in broken[:1]:
        s.converged = False
    with pytest.raises(FitError):
        fit_exponent(broken)


def test_asymptotic_prediction():
    plus, minus = asymptotic_prediction(64, 0.5, 0.8, 0.2)
    assert plus.imag == 0 and plus == minus
    assert plus.real == pytest.approx(-2 * C_KPZ * 0.6 * 0.5 * 64 ** -1.5)
    a, b = asymptotic_prediction(100, 0.3, 0.8, 0.2), asymptotic_prediction(100, 0.7, 0.8, 0.2)
    assert a == pytest.approx(b)
    assert asymptotic_prediction(50, 0.3, 0.4, 0.4)[0] == pytest.approx(-4 * math.pi ** 2 * 0.4 / 2500)


def test_amplitude_recovers_intercept():
    Ls = np.array([64, 128, 256, 512])
    pred = 2 * C_KPZ * 0.6 * 0.5
    samples = [GapSample(int(L), 0.5, 0.8, 0.2, complex(-(pred + 3 * L ** -0.5) * L ** -1.5), 0j, "x") for L in Ls]
    fit = extrapolate_amplitude(samples)
    assert fit.amplitude == pytest.approx(pred, rel=1e-10)
    assert fit.relative_error < 1e-10
    with pytest.raises(FitError):
        extrapolate_amplitude(synthetic([8, 16], 2.0, p=0.5, q=0.5))


def test_split_densities():
    assert split_densities(Sector(7, (2, 1, 3, 1))) == pytest.approx([5 / 7, 4 / 7, 1 / 7])


def test_ramp_closes_at_ssep():
    s = Sector(7, (2, 1, 3, 1))
    ramp = asymmetry_ramp(s, [0.6, 0.3, 0.0])
    spreads = [v for _, v in ramp]
    assert spreads[-1] < 1e-10
    assert spreads[0] > spreads[1] > spreads[2]
    assert next_leading_spread(s, 0.8, 0.2) == pytest.approx(spreads[0])
