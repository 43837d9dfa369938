import numpy as np
import pytest

from conftest import XIS, kappa_of
from unbalbb84.fock import DomainError, FockBasis
from unbalbb84.oracles import creation_monomial_oracle
from unbalbb84.source import (
    SignalSettings,
    alice_reduced_matrix,
    poisson_truncation,
    poisson_weight,
    signal_ket,
    signal_overlap,
)


def explicit_ket(x, n, xi, fb):
    return creation_monomial_oracle(np.sqrt(xi), np.sqrt(1 - xi) * np.exp(-0.5j * np.pi * x), n, fb)


def test_xi_range():
    assert SignalSettings(1.0).xi == 0.5
    assert np.isclose(SignalSettings(0.3).xi, 1 / 1.3)
    with pytest.raises(DomainError):
        SignalSettings(0.0)
    with pytest.raises(DomainError):
        SignalSettings(1.5)
    with pytest.raises(DomainError):
        SignalSettings(1.0, signal_probs=(0.5, 0.5, 0.5, 0.5))


def test_vacuum_is_signal_independent():
    fb = FockBasis(3)
    st = SignalSettings(0.4)
    for x in range(4):
        assert np.allclose(signal_ket(x, 0, st, fb), fb.ket(0, 0))


def test_balanced_single_photon_phase_pi():
    fb = FockBasis(2)
    got = signal_ket(2, 1, SignalSettings(1.0), fb)
    assert np.allclose(got, (fb.ket(1, 0) - fb.ket(0, 1)) / np.sqrt(2), atol=1e-15)


def test_unbalanced_two_photon():
    fb = FockBasis(2)
    st = SignalSettings(kappa_of(0.7))
    want = np.sqrt(0.49) * fb.ket(2, 0) + np.sqrt(0.42) * fb.ket(1, 1) + np.sqrt(0.09) * fb.ket(0, 2)
    got = signal_ket(0, 2, st, fb)
    assert np.allclose(got, want, atol=1e-14)
    assert np.allclose(got, explicit_ket(0, 2, 0.7, fb), atol=1e-14)


def test_overlap_examples():
    bal = SignalSettings(1.0)
    assert abs(signal_overlap(0, 2, 1, bal)) < 1e-15
    assert np.isclose(signal_overlap(0, 2, 2, SignalSettings(kappa_of(0.7))), 0.16, atol=1e-14)
    for n in range(5):
        assert signal_overlap(1, 1, n, SignalSettings(0.3)) == 1


@pytest.mark.parametrize("xi", (0.5, 0.55, 0.75, 0.95))
def test_overlap_matches_vectors(xi):
    fb = FockBasis(6)
    st = SignalSettings(kappa_of(xi))
    for n in range(7):
        kets = [explicit_ket(x, n, xi, fb) for x in range(4)]
        for x in range(4):
            for y in range(4):
                assert abs(signal_overlap(x, y, n, st) - np.vdot(kets[y], kets[x])) < 1e-12


def test_balanced_same_basis_orthogonality():
    st = SignalSettings(1.0)
    for n in range(1, 8):
        assert abs(signal_overlap(0, 2, n, st)) < 1e-15
        assert abs(signal_overlap(1, 3, n, st)) < 1e-15


def test_poisson_weight():
    assert poisson_weight(0, SignalSettings(1.0)) == 1.0
    st = SignalSettings(1.0).with_intensity(0.5)
    assert np.isclose(st.rescaled_intensity, 1.0)
    assert np.isclose(poisson_weight(0, st), np.exp(-1))
    assert np.isclose(poisson_weight(2, st), np.exp(-1) / 2)
    mu = SignalSettings(0.3).with_intensity(1.7)
    n = poisson_truncation(mu.rescaled_intensity, 1e-12)
    assert 1 - sum(poisson_weight(k, mu) for k in range(n + 1)) < 1e-12
    assert 1 - sum(poisson_weight(k, mu) for k in range(n)) >= 1e-12


def test_alice_matrix_vacuum():
    assert np.allclose(alice_reduced_matrix(0, SignalSettings(0.6)), np.full((4, 4), 0.25))


def test_alice_matrix_balanced_single_photon():
    fb = FockBasis(1)
    st = SignalSettings(1.0)
    kets = [signal_ket(x, 1, st, fb) for x in range(4)]
    gram = np.array([[np.vdot(kets[y], kets[x]) for y in range(4)] for x in range(4)])
    m = alice_reduced_matrix(1, st)
    assert np.allclose(m, gram / 4, atol=1e-15)
    assert abs(m[0, 2]) < 1e-15 and np.isclose(abs(m[0, 1]) * 4, 1 / np.sqrt(2))


@pytest.mark.parametrize("xi", XIS)
def test_alice_matrix_is_state(xi):
    st = SignalSettings(kappa_of(xi))
    for n in range(7):
        m = alice_reduced_matrix(n, st)
        assert np.allclose(m, m.conj().T)
        assert np.isclose(np.trace(m).real, 1.0)
        assert np.linalg.eigvalsh(m).min() > -1e-12
