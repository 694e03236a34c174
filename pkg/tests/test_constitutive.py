import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from clothmpm.constitutive import (ElasticParams, InvalidDeformation, cauchy_stress,
                                   deformation_gradient, first_piola, psi, psi_hat,
                                   psi_inplane, psi_normal, psi_shear, psi_total,
                                   qr_decompose, qr_gram_schmidt)

from conftest import random_admissible_F, random_rotation

P = ElasticParams()


def fd_piola(F, p, h=1e-6):
    G = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            Fp, Fm = F.copy(), F.copy()
            Fp[i, j] += h
            Fm[i, j] -= h
            G[i, j] = (psi(Fp, p) - psi(Fm, p)) / (2 * h)
    return G


def test_params_validation():
    for bad in (dict(E=0), dict(nu=0.5), dict(nu=-0.1), dict(gamma=-1), dict(kappa=-1)):
        with pytest.raises(ValueError):
            ElasticParams(**bad)


def test_deformation_gradient(rng):
    D = rng.normal(size=(3, 3)) + 3 * np.eye(3)
    Di = np.linalg.inv(D)
    np.testing.assert_allclose(deformation_gradient(D, Di), np.eye(3), atol=1e-12)
    np.testing.assert_allclose(deformation_gradient(2 * D, Di), 2 * np.eye(3), atol=1e-12)
    d = rng.normal(size=(3, 3))
    np.testing.assert_allclose(deformation_gradient(d, Di) @ D, d, atol=1e-9)


def test_qr_examples(rng):
    s = qr_decompose(np.eye(3))
    np.testing.assert_allclose(s.Q, np.eye(3))
    np.testing.assert_allclose(s.R, np.eye(3))
    s = qr_decompose(np.diag([2.0, 1, 1]))
    np.testing.assert_allclose(s.Q, np.eye(3))
    np.testing.assert_allclose(s.R, np.diag([2.0, 1, 1]))
    for _ in range(50):
        R0 = np.triu(rng.uniform(-0.5, 0.5, (3, 3)))
        R0[np.diag_indices(3)] = rng.uniform(0.3, 2.0, 3)
        Om = random_rotation(rng)
        s = qr_decompose(Om @ R0)
        np.testing.assert_allclose(s.R, R0, atol=1e-8)
        np.testing.assert_allclose(s.Q.T @ s.Q, np.eye(3), atol=1e-9)
        assert np.linalg.det(s.Q) == pytest.approx(1.0)
        np.testing.assert_allclose(s.Q @ s.R, Om @ R0, atol=1e-9)


def test_qr_kernel_matches_numpy(rng):
    for _ in range(50):
        F = random_admissible_F(rng)
        Q, R = qr_gram_schmidt(F)
        s = qr_decompose(F)
        np.testing.assert_allclose(R, s.R, atol=1e-10)
        np.testing.assert_allclose(Q, s.Q, atol=1e-10)


def test_qr_rejects_inverted():
    with pytest.raises(InvalidDeformation):
        qr_decompose(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(InvalidDeformation):
        qr_decompose(np.zeros((3, 3)))


def test_psi_normal():
    assert psi_normal(1.0, 123.0) == 0.0
    assert psi_normal(1.5, 500.0) == 0.0
    assert psi_normal(0.5, 500.0) == pytest.approx(500 / 3 * 0.125)
    # value and slope continuous at R33 = 1
    eps = 1e-6
    assert psi_normal(1 - eps, 500.0) < 1e-15
    assert (psi_normal(1 - eps, 500) - psi_normal(1.0, 500)) / eps < 1e-9


def test_psi_shear():
    assert psi_shear(0.0, 0.0, 500) == 0.0
    assert psi_shear(0.1, 0.0, 500) == pytest.approx(2.5)
    assert psi_shear(0.3, -0.2, 7.0) == psi_shear(-0.2, 0.3, 7.0)


def test_psi_inplane(rng):
    assert psi_inplane(1, 0, 1, 100, 0.3) == pytest.approx(0.0, abs=1e-15)
    assert psi_inplane(1.1, 0, 1, 100, 0.3) == pytest.approx(0.673077, abs=1e-6)
    for _ in range(20):
        B = np.array([[rng.uniform(0.5, 1.5), rng.uniform(-0.5, 0.5)], [0, rng.uniform(0.5, 1.5)]])
        t = rng.uniform(0, 2 * np.pi)
        rot = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
        q, r = np.linalg.qr(rot @ B)
        r = r * np.sign(np.diag(r))[:, None]
        assert psi_inplane(r[0, 0], r[0, 1], r[1, 1], 100, 0.3) == pytest.approx(
            psi_inplane(B[0, 0], B[0, 1], B[1, 1], 100, 0.3), rel=1e-10, abs=1e-14)


def test_psi_total_examples(rng):
    assert psi(np.eye(3), P) == 0.0
    for _ in range(20):
        assert abs(psi(random_rotation(rng), P)) < 1e-10
    assert psi(np.diag([1, 1, 0.5]), P) == pytest.approx(20.833333333, rel=1e-9)


def test_closed_form_energy_matches_svd(rng):
    for _ in range(200):
        F = random_admissible_F(rng)
        s = qr_decompose(F)
        assert psi_hat(s.R, P.E, P.nu, P.gamma, P.kappa) == pytest.approx(psi_total(s, P),
                                                                            rel=1e-10, abs=1e-12)


def test_first_piola_examples():
    np.testing.assert_allclose(first_piola(qr_decompose(np.eye(3)), P), 0, atol=1e-10)
    G = first_piola(qr_decompose(np.diag([1, 1, 0.5])), P)
    expected = np.zeros((3, 3))
    expected[2, 2] = -125.0
    np.testing.assert_allclose(G, expected, atol=1e-10)


def test_first_piola_finite_differences(rng):
    for _ in range(100):
        F = random_admissible_F(rng)
        G = first_piola(qr_decompose(F), P)
        ref = fd_piola(F, P)
        assert np.linalg.norm(G - ref) <= 1e-4 * max(np.linalg.norm(ref), 1e-8)


@given(st.integers(0, 2**32 - 1))
def test_rotation_invariance(seed):
    rng = np.random.default_rng(seed)
    F = random_admissible_F(rng)
    Om = random_rotation(rng)
    v = psi(F, P)
    assert abs(psi(Om @ F, P) - v) < 1e-8 * max(1.0, v)
    assert v >= 0.0


def test_cauchy(rng):
    np.testing.assert_allclose(cauchy_stress(qr_decompose(np.eye(3)), P), 0, atol=1e-12)
    Om = random_rotation(rng)
    np.testing.assert_allclose(cauchy_stress(qr_decompose(Om), P), 0, atol=1e-9)
    for _ in range(20):
        F = random_admissible_F(rng)
        s = qr_decompose(F)
        Pk = first_piola(s, P)
        np.testing.assert_allclose(cauchy_stress(s, P), Pk @ F.T / np.linalg.det(F), atol=1e-12)
