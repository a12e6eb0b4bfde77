import numpy as np
import pytest

from physedit.constitutive import (batch_constitutive, constitutive_stress,
                                   lame_parameters)
from physedit.errors import NumericalError
from physedit.materials import MaterialClass, MaterialModel


def corotated_oracle(f, e, nu):
    """Scalar fixed-corotated first Piola via explicit polar decomposition."""
    mu, lam = lame_parameters(e, nu)
    u, s, vt = np.linalg.svd(f)
    r = u @ vt
    j = np.linalg.det(f)
    return 2 * mu * (f - r) + lam * (j - 1) * j * np.linalg.inv(f).T


class TestElastic:
    def test_rest_state_zero_stress(self):
        p, f_new, _ = constitutive_stress(np.eye(3), 0.0,
                                          MaterialClass.ELASTIC, 1e5, 0.3)
        assert np.allclose(p, 0.0, atol=1e-12)
        assert np.array_equal(f_new, np.eye(3))

    def test_uniaxial_closed_form(self):
        # F = diag(1.01, 1, 1), nu = 0: P = diag(2 mu 0.01, 0, 0) = diag(1000,0,0)
        f = np.diag([1.01, 1.0, 1.0])
        p, _, _ = constitutive_stress(f, 0.0, MaterialClass.ELASTIC, 1e5, 0.0)
        assert p[0, 0] == pytest.approx(1000.0, rel=1e-10)
        assert abs(p[1, 1]) < 1e-9 and abs(p[2, 2]) < 1e-9

    def test_matches_oracle_random(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            f = np.eye(3) + 0.05 * rng.standard_normal((3, 3))
            if np.linalg.det(f) <= 0:
                continue
            e, nu = 10 ** rng.uniform(4, 7), rng.uniform(0, 0.45)
            p, _, _ = constitutive_stress(f, 0.0, MaterialClass.ELASTIC, e, nu)
            assert np.allclose(p, corotated_oracle(f, e, nu), rtol=1e-9,
                               atol=1e-9 * e)

    def test_negative_determinant_rejected(self):
        with pytest.raises(NumericalError):
            constitutive_stress(np.diag([-1.0, 1.0, 1.0]), 0.0,
                                MaterialClass.ELASTIC, 1e5, 0.3)


class TestLiquid:
    def test_unit_volume_no_pressure(self):
        p, f_new, _ = constitutive_stress(np.eye(3), 0.0,
                                          MaterialClass.LIQUID, 1e5, 0.3)
        assert np.allclose(p, 0.0, atol=1e-9)
        assert np.allclose(f_new, np.eye(3), atol=1e-12)

    def test_shear_carries_no_stress(self):
        f = np.eye(3)
        f[0, 1] = 0.3  # volume-preserving shear
        p, f_new, _ = constitutive_stress(f, 0.0, MaterialClass.LIQUID, 1e5, 0.3)
        assert np.allclose(p, 0.0, atol=1e-8)
        # deformation resets to the isotropic volume ratio
        assert np.allclose(f_new, np.eye(3), atol=1e-12)

    def test_compression_gives_isotropic_kirchhoff(self):
        f = 0.95 * np.eye(3)
        e, nu = 2e5, 0.3
        p, f_new, _ = constitutive_stress(f, 0.0, MaterialClass.LIQUID, e, nu)
        tau = p @ f_new.T
        j = np.linalg.det(f)
        _, lam = lame_parameters(e, nu)
        expected = lam * (j - 1.0) * j
        assert np.allclose(tau, expected * np.eye(3), rtol=1e-9)


class TestPlasticine:
    def test_below_yield_untouched(self):
        table = MaterialModel(yield_stress=1e9)
        f = np.diag([1.02, 1.0, 0.99])
        _, f_new, _ = constitutive_stress(f, 0.0, MaterialClass.PLASTICINE,
                                          1e5, 0.3, table)
        assert np.allclose(f_new, f, atol=1e-12)

    def test_beyond_yield_projects_to_cylinder(self):
        table = MaterialModel(yield_stress=1e3)
        e, nu = 1e6, 0.3
        mu, _ = lame_parameters(e, nu)
        f = np.diag([1.3, 1.0, 0.8])
        _, f_new, _ = constitutive_stress(f, 0.0, MaterialClass.PLASTICINE,
                                          e, nu, table)
        eps = np.log(np.linalg.svd(f_new, compute_uv=False))
        dev = eps - eps.mean()
        assert 2 * mu * np.linalg.norm(dev) == pytest.approx(1e3, rel=1e-6)


class TestSand:
    def test_expansion_projects_to_tip(self):
        f = np.diag([1.1, 1.1, 1.1])  # pure expansion, tr(eps) > 0
        _, f_new, _ = constitutive_stress(f, 0.0, MaterialClass.SAND, 1e6, 0.3)
        sig = np.linalg.svd(f_new, compute_uv=False)
        assert np.allclose(sig, 1.0, atol=1e-12)

    def test_hydrostatic_compression_elastic(self):
        f = np.diag([0.97, 0.97, 0.97])
        _, f_new, _ = constitutive_stress(f, 0.0, MaterialClass.SAND, 1e6, 0.3)
        assert np.allclose(f_new, f, atol=1e-12)

    def test_shear_under_compression_stays_in_cone(self):
        table = MaterialModel(friction_angle_deg=30.0)
        e, nu = 1e6, 0.3
        mu, lam = lame_parameters(e, nu)
        f = np.diag([1.08, 0.85, 0.95])
        _, f_new, _ = constitutive_stress(f, 0.0, MaterialClass.SAND,
                                          e, nu, table)
        eps = np.log(np.linalg.svd(f_new, compute_uv=False))
        sin_phi = np.sin(np.deg2rad(30.0))
        alpha = np.sqrt(2 / 3) * 2 * sin_phi / (3 - sin_phi)
        dev = eps - eps.mean()
        residual = np.linalg.norm(dev) + \
            (3 * lam + 2 * mu) / (2 * mu) * eps.sum() * alpha
        assert residual <= 1e-9


class TestSnow:
    def test_singular_values_clamped(self):
        table = MaterialModel(snow_theta_c=2.5e-2, snow_theta_s=7.5e-3)
        f = np.diag([1.2, 0.8, 1.0])
        _, f_new, _ = constitutive_stress(f, 0.0, MaterialClass.SNOW,
                                          1e5, 0.2, table)
        sig = np.sort(np.linalg.svd(f_new, compute_uv=False))
        assert sig[0] == pytest.approx(1 - 2.5e-2, rel=1e-12)
        assert sig[-1] == pytest.approx(1 + 7.5e-3, rel=1e-12)

    def test_within_limits_untouched(self):
        f = np.diag([1.002, 0.99, 1.0])
        _, f_new, _ = constitutive_stress(f, 0.0, MaterialClass.SNOW, 1e5, 0.2)
        assert np.allclose(np.linalg.svd(f_new, compute_uv=False),
                           np.sort(np.diag(f))[::-1], atol=1e-12)


class TestRigid:
    def test_uses_clamped_stiffness(self):
        table = MaterialModel(rigid_young_modulus=1e9)
        f = np.diag([1.001, 1.0, 1.0])
        p_rigid, _, _ = constitutive_stress(f, 0.0, MaterialClass.RIGID,
                                            123.0, 0.3, table)
        p_ref, _, _ = constitutive_stress(f, 0.0, MaterialClass.ELASTIC,
                                          1e9, 0.3, table)
        assert np.allclose(p_rigid, p_ref, rtol=1e-12)


def test_batch_matches_singles():
    rng = np.random.default_rng(1)
    n = 40
    f = np.tile(np.eye(3), (n, 1, 1)) + 0.04 * rng.standard_normal((n, 3, 3))
    dets = np.linalg.det(f)
    f[dets <= 0.1] = np.eye(3)
    class_id = rng.integers(0, 6, n)
    e = 10 ** rng.uniform(4, 6, n)
    nu = rng.uniform(0.0, 0.4, n)
    p_batch, f_batch, _ = batch_constitutive(f, class_id, e, nu, np.zeros(n))
    for i in range(n):
        p_i, f_i, _ = constitutive_stress(f[i], 0.0, int(class_id[i]),
                                          e[i], nu[i])
        assert np.allclose(p_batch[i], p_i, rtol=1e-12, atol=1e-12)
        assert np.allclose(f_batch[i], f_i, rtol=1e-12, atol=1e-12)
