"""Stress laws and plastic return mappings for the six material classes.

All laws return the first Piola-Kirchhoff stress P together with the
(possibly projected) deformation gradient and updated plastic state:

  Elastic     fixed corotated  P = 2 mu (F - R) + lambda (J - 1) J F^-T
  Rigid       fixed corotated with E replaced by the rigid stiffness,
              no plasticity
  Liquid      mu = 0; F reset to the isotropic J^(1/3) I so only volume
              change carries stress
  Plasticine  corotated elasticity, von Mises return mapping on the
              principal log strains
  Sand        Hencky elasticity with Drucker-Prager projection of the
              log strains (non-associative, cohesionless)
  Snow        corotated with singular values clamped to
              [1 - theta_c, 1 + theta_s]

The solver forms the Kirchhoff product P F^T itself.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalError
from .materials import DEFAULT_MATERIAL_MODEL, MaterialClass, MaterialModel

_SIGMA_FLOOR = 1e-6  # keeps log strains finite under extreme compression


def lame_parameters(e, nu):
    mu = e / (2.0 * (1.0 + nu))
    lam = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    return mu, lam


def _svd3(f):
    try:
        u, sig, vt = np.linalg.svd(f)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD of deformation gradient failed: {exc}") from exc
    # keep rotations proper so R = U V^T is a true rotation
    det_u = np.linalg.det(u)
    det_vt = np.linalg.det(vt)
    flip_u = det_u < 0
    flip_v = det_vt < 0
    if np.any(flip_u):
        u[flip_u, :, 2] *= -1.0
        sig[flip_u, 2] *= -1.0
    if np.any(flip_v):
        vt[flip_v, 2, :] *= -1.0
        sig[flip_v, 2] *= -1.0
    return u, sig, vt


def _corotated_piola(f, r, j, mu, lam):
    f_inv_t = np.linalg.inv(f).transpose(0, 2, 1)
    return (2.0 * mu[:, None, None] * (f - r)
            + (lam * (j - 1.0) * j)[:, None, None] * f_inv_t)


def _von_mises_project(eps, mu, yield_stress):
    """Return-map principal log strains onto the von Mises cylinder."""
    mean = eps.mean(axis=1, keepdims=True)
    dev = eps - mean
    dev_norm = np.linalg.norm(dev, axis=1)
    delta_gamma = dev_norm - yield_stress / (2.0 * mu)
    out = eps.copy()
    plastic = (delta_gamma > 0) & (dev_norm > 0)
    if np.any(plastic):
        scale = (delta_gamma[plastic] / dev_norm[plastic])[:, None]
        out[plastic] = eps[plastic] - scale * dev[plastic]
    return out


def _drucker_prager_project(eps, mu, lam, friction_angle_deg):
    """Project principal log strains onto the Drucker-Prager cone."""
    sin_phi = np.sin(np.deg2rad(friction_angle_deg))
    alpha = np.sqrt(2.0 / 3.0) * 2.0 * sin_phi / (3.0 - sin_phi)
    tr = eps.sum(axis=1)
    dev = eps - tr[:, None] / 3.0
    dev_norm = np.linalg.norm(dev, axis=1)
    out = eps.copy()

    expanding = tr > 0
    out[expanding] = 0.0

    packed = ~expanding
    delta_gamma = dev_norm + ((3.0 * lam + 2.0 * mu) / (2.0 * mu)) * tr * alpha
    yielding = packed & (delta_gamma > 0) & (dev_norm > 0)
    if np.any(yielding):
        scale = (delta_gamma[yielding] / dev_norm[yielding])[:, None]
        out[yielding] = eps[yielding] - scale * dev[yielding]
    return out


def _recompose(u, sig, vt):
    return np.einsum("nij,nj,njk->nik", u, sig, vt)


def batch_constitutive(f, class_id, e, nu, plastic_state,
                       table: MaterialModel = DEFAULT_MATERIAL_MODEL):
    """Vectorized stress evaluation over a particle batch.

    f (N,3,3), class_id (N,), e (N,), nu (N,), plastic_state (N,).
    Returns (piola (N,3,3), f_new (N,3,3), plastic_state_new (N,)).
    """
    f = np.asarray(f, dtype=np.float64)
    n = f.shape[0]
    class_id = np.asarray(class_id)
    e_eff = np.where(class_id == MaterialClass.RIGID,
                     table.rigid_young_modulus, e)
    mu, lam = lame_parameters(e_eff, nu)
    mu = np.where(class_id == MaterialClass.LIQUID, 0.0, mu)

    j = np.linalg.det(f)
    if np.any(~np.isfinite(j)) or np.any(j <= 0):
        raise NumericalError("deformation gradient lost positive determinant")
    u, sig, vt = _svd3(f)

    needs_project = np.isin(class_id, (MaterialClass.PLASTICINE,
                                       MaterialClass.SAND,
                                       MaterialClass.SNOW,
                                       MaterialClass.LIQUID))
    f_new = f.copy()
    plastic_new = np.asarray(plastic_state, dtype=np.float64).copy()

    if np.any(needs_project):
        sig_proj = np.maximum(sig, _SIGMA_FLOOR)

        m = class_id == MaterialClass.PLASTICINE
        if np.any(m):
            eps = _von_mises_project(np.log(sig_proj[m]), mu[m], table.yield_stress)
            sig_proj[m] = np.exp(eps)
        m = class_id == MaterialClass.SAND
        if np.any(m):
            eps = _drucker_prager_project(np.log(sig_proj[m]), mu[m], lam[m],
                                          table.friction_angle_deg)
            sig_proj[m] = np.exp(eps)
        m = class_id == MaterialClass.SNOW
        if np.any(m):
            sig_proj[m] = np.clip(sig_proj[m], 1.0 - table.snow_theta_c,
                                  1.0 + table.snow_theta_s)
        m_liquid = class_id == MaterialClass.LIQUID
        if np.any(m_liquid):
            sig_proj[m_liquid] = np.cbrt(j[m_liquid])[:, None]

        f_new[needs_project] = _recompose(u[needs_project],
                                          sig_proj[needs_project],
                                          vt[needs_project])
        if np.any(m_liquid):
            # fluids carry no rotation; keep only the volume ratio
            f_new[m_liquid] = np.cbrt(j[m_liquid])[:, None, None] * np.eye(3)
        sig = np.where(needs_project[:, None], sig_proj, sig)
        j = np.where(needs_project, sig.prod(axis=1), j)

    r = u @ vt
    piola = np.zeros_like(f)

    hencky = class_id == MaterialClass.SAND
    coro = ~hencky
    if np.any(coro):
        piola[coro] = _corotated_piola(f_new[coro], r[coro], j[coro],
                                       mu[coro], lam[coro])
    if np.any(hencky):
        # Hencky-strain stress pairs with the log-strain projection:
        # tau = 2 mu eps + lam tr(eps);  P = U diag(tau / sigma) V^T
        eps = np.log(np.maximum(sig[hencky], _SIGMA_FLOOR))
        tau = (2.0 * mu[hencky, None] * eps
               + (lam[hencky] * eps.sum(axis=1))[:, None])
        piola[hencky] = _recompose(u[hencky], tau / sig[hencky], vt[hencky])

    return piola, f_new, plastic_new


def constitutive_stress(f, plastic_state, model, e, nu,
                        table: MaterialModel = DEFAULT_MATERIAL_MODEL):
    """Single-particle stress evaluation.

    Returns (piola 3x3, f_new 3x3, plastic_state_new scalar).
    """
    f = np.asarray(f, dtype=np.float64)
    single = f.ndim == 2
    if single:
        f = f[None]
    n = f.shape[0]
    p, f_new, plastic = batch_constitutive(
        f, np.full(n, int(model)), np.full(n, float(e)), np.full(n, float(nu)),
        np.full(n, float(plastic_state)), table)
    if single:
        return p[0], f_new[0], float(plastic[0])
    return p, f_new, plastic
