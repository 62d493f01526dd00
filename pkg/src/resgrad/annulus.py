"""Wavy-annulus geometry, the s-mapping, and the outer-wall flux profile.

Shared between the Stage-2 trainer and the finite-difference reference
solver so both discretize exactly the same domain and boundary data.
Functions are written with jax.numpy so they can sit inside traced losses;
plain numpy inputs work too.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np


@dataclass(frozen=True)
class AnnulusGeometry:
    """Cylindrical annulus with a sinusoidally undulating outer wall."""

    r_min: float = 0.2
    r_max: float = 1.0
    length: float = 10.0
    amplitude: float = 0.25
    lobes: int = 3

    def __post_init__(self):
        if self.r_max - self.amplitude <= self.r_min:
            raise ValueError("outer wall must stay outside the inner wall for all angles")

    def descriptor(self) -> dict:
        return {
            "r_min": self.r_min,
            "r_max": self.r_max,
            "length": self.length,
            "amplitude": self.amplitude,
            "lobes": self.lobes,
        }


def standard_geometry() -> AnnulusGeometry:
    """r_min 0.2, r_max 1.0, L = 10 r_max, amplitude 0.25 r_max, 3 lobes."""
    return AnnulusGeometry(r_min=0.2, r_max=1.0, length=10.0, amplitude=0.25, lobes=3)


def outer_radius(geom: AnnulusGeometry, theta):
    """Outer wall radius r_o(theta) and its derivative dr_o/dtheta."""
    ro = geom.r_max + geom.amplitude * jnp.sin(geom.lobes * theta)
    dro = geom.amplitude * geom.lobes * jnp.cos(geom.lobes * theta)
    return ro, dro


def gap(geom: AnnulusGeometry, theta):
    """Local annular gap r_o(theta) - r_min."""
    return outer_radius(geom, theta)[0] - geom.r_min


def map_s_to_r(geom: AnnulusGeometry, s, theta):
    """Normalized radial coordinate to physical radius: r = r_min + s*(r_o - r_min)."""
    if not isinstance(s, jax.core.Tracer):
        s_concrete = np.asarray(s)
        if s_concrete.size and (s_concrete.min() < 0.0 or s_concrete.max() > 1.0):
            raise ValueError("s must lie in [0, 1]")
    return geom.r_min + jnp.asarray(s) * gap(geom, theta)


def metric_h_theta(geom: AnnulusGeometry, s, theta):
    """Physical tangential distance per unit angle on the shell."""
    r = map_s_to_r(geom, s, theta)
    _, dro = outer_radius(geom, theta)
    return jnp.sqrt(r**2 + (jnp.asarray(s) * dro) ** 2)


def normal_derivative(geom: AnnulusGeometry, theta, t_r, t_theta):
    """Wall-normal derivative at r = r_o(theta) from radial/angular derivatives.

    Unit outward normal of the level set r - r_o(theta) = 0:
    (T_r - (r_o'/r^2) T_theta) / sqrt(1 + (r_o'/r)^2).
    """
    ro, dro = outer_radius(geom, theta)
    return (t_r - dro / ro**2 * t_theta) / jnp.sqrt(1.0 + (dro / ro) ** 2)


@dataclass(frozen=True)
class FluxProfile:
    """Piecewise-linear axial ramp for the prescribed outer-wall flux.

    q(z) = q_max * clamp((z - z1) / (z2 - z1), 0, 1); zero plateau before z1,
    q_max plateau after z2.
    """

    z1: float
    z2: float
    q_max: float = 1.0

    def __post_init__(self):
        if not self.z2 > self.z1:
            raise ValueError("ramp needs z2 > z1")

    def descriptor(self) -> dict:
        return {"kind": "linear_ramp", "z1": self.z1, "z2": self.z2, "q_max": self.q_max}


def default_flux(geom: AnnulusGeometry, q_max: float = 1.0) -> FluxProfile:
    return FluxProfile(z1=0.2 * geom.length, z2=0.4 * geom.length, q_max=q_max)


def flux_value(profile: FluxProfile, z):
    """Traceable ramp evaluation (no domain check)."""
    frac = (jnp.asarray(z) - profile.z1) / (profile.z2 - profile.z1)
    return profile.q_max * jnp.clip(frac, 0.0, 1.0)


def flux_at(profile: FluxProfile, z: float, length: float) -> float:
    if not 0.0 <= z <= length:
        raise ValueError(f"z = {z} outside [0, {length}]")
    return float(flux_value(profile, z))


def constant_flux(geom: AnnulusGeometry, value: float) -> FluxProfile:
    """Degenerate ramp that equals ``value`` on the whole wall."""
    eps = 1e-9 * geom.length
    return FluxProfile(z1=-2 * eps, z2=-eps, q_max=value)


def problem_hash(geom: AnnulusGeometry, flux: FluxProfile) -> bytes:
    """First 8 bytes of the SHA-256 of the canonical problem descriptor."""
    blob = json.dumps(
        {"geometry": geom.descriptor(), "flux": flux.descriptor()}, sort_keys=True
    ).encode()
    return hashlib.sha256(blob).digest()[:8]
