"""Wedge-prism beam steering: exact two-surface refraction and the thin-prism model.

Conventions. The optical axis is +z and rays travel toward +z. A prism's
rotor angle gives the transverse direction of its apex (thin edge); the apex
points along +x at rotor angle zero. Rays enter through the wedged face and
exit through the flat face, and a prism deviates the beam toward its base,
i.e. toward rotor angle + pi. Prisms are treated as angularly thin: surfaces
only redirect rays, transverse offsets inside the glass are ignored.

The thin-prism (paraxial) model assigns each prism a deflection of magnitude
(n - 1) * wedge_angle; the steered direction is the vector sum of the
per-prism transverse deflections.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .util import wrap_angle


class TotalInternalReflectionError(ValueError):
    """A ray met an interface beyond the critical angle."""


@dataclass(frozen=True)
class PrismSpec:
    """Wedge prism: refractive index and wedge angle (rad)."""

    refractive_index: float
    wedge_angle: float

    def __post_init__(self):
        if not 1.0 < self.refractive_index <= 3.0:
            raise ValueError("refractive index must be in (1, 3]")
        if not 0.0 < self.wedge_angle < np.pi / 4:
            raise ValueError("wedge angle must be in (0, pi/4)")

    @property
    def deflection(self) -> float:
        """Thin-prism deflection magnitude (n - 1) * wedge (rad)."""
        return (self.refractive_index - 1.0) * self.wedge_angle


@dataclass(frozen=True)
class DeflectionVector:
    """Transverse deflection: magnitude (rad) and phase of the thick edge."""

    magnitude: float
    phase: float

    def __post_init__(self):
        if self.magnitude < 0:
            raise ValueError("magnitude must be non-negative")
        object.__setattr__(self, "phase", float(wrap_angle(self.phase)))

    def components(self) -> np.ndarray:
        return self.magnitude * np.array([np.cos(self.phase), np.sin(self.phase)])


def paraxial_deflection(prism: PrismSpec) -> float:
    return prism.deflection


def deflection_vector(prism: PrismSpec, rotor_angle: float) -> DeflectionVector:
    """Thin-prism deflection at a rotor angle; points at the base, apex + pi."""
    return DeflectionVector(prism.deflection, rotor_angle + np.pi)


def refract_interface(d, n, n1: float, n2: float):
    """Snell refraction of unit direction(s) d at interface normal(s) n.

    n must point against the incident ray (d . n < 0), toward the incoming
    medium with index n1. Broadcasts over leading axes. Raises
    TotalInternalReflectionError if any ray exceeds the critical angle.
    """
    d = np.asarray(d, dtype=float)
    n = np.asarray(n, dtype=float)
    ci = -np.sum(d * n, axis=-1)
    if np.any(ci <= 0.0):
        raise ValueError("normal must oppose the incident ray (d . n < 0)")
    eta = n1 / n2
    st2 = eta * eta * (1.0 - ci * ci)
    if np.any(st2 > 1.0):
        raise TotalInternalReflectionError("incidence beyond the critical angle")
    ct = np.sqrt(1.0 - st2)
    out = eta * d + (eta * ci - ct)[..., None] * n
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def _face_normals(prism: PrismSpec, rotor_angle):
    """Per-surface incident-side normals for the wedged and flat faces."""
    a = np.asarray(rotor_angle, dtype=float)
    sa, ca = np.sin(prism.wedge_angle), np.cos(prism.wedge_angle)
    n_wedge = np.stack([sa * np.cos(a), sa * np.sin(a), -ca * np.ones_like(a)], axis=-1)
    n_flat = np.zeros_like(n_wedge)
    n_flat[..., 2] = -1.0
    return n_wedge, n_flat


def trace_prism(d, prism: PrismSpec, rotor_angle):
    """Exact trace through one prism: wedged entry face, flat exit face.

    d: unit direction(s) of shape (..., 3); rotor_angle broadcasts against the
    leading axes. Propagates TotalInternalReflectionError.
    """
    n_wedge, n_flat = _face_normals(prism, rotor_angle)
    n = prism.refractive_index
    inside = refract_interface(d, n_wedge, 1.0, n)
    return refract_interface(inside, n_flat, n, 1.0)


def angles_to_dir(h, v):
    """Transverse angular coordinates (rad) to unit direction(s).

    (h, v) is the polar angle times the unit azimuth vector, so the returned
    direction has polar angle hypot(h, v) exactly.
    """
    h = np.asarray(h, dtype=float)
    v = np.asarray(v, dtype=float)
    polar = np.hypot(h, v)
    sp = np.sinc(polar / np.pi)  # sin(polar)/polar, finite at zero
    return np.stack([sp * h, sp * v, np.cos(polar)], axis=-1)


def dir_to_angles(d):
    """Inverse of angles_to_dir for directions in the forward hemisphere."""
    d = np.asarray(d, dtype=float)
    polar = np.arccos(np.clip(d[..., 2], -1.0, 1.0))
    trans = np.hypot(d[..., 0], d[..., 1])
    with np.errstate(invalid="ignore"):
        scale = np.where(trans > 0.0, polar / np.where(trans > 0.0, trans, 1.0), 0.0)
    return d[..., 0] * scale, d[..., 1] * scale


def _paraxial_sum(prisms, rotor_angles):
    h = 0.0
    v = 0.0
    for prism, ang in zip(prisms, rotor_angles):
        a = np.asarray(ang, dtype=float)
        # deflection points at the base: apex angle + pi
        h = h - prism.deflection * np.cos(a)
        v = v - prism.deflection * np.sin(a)
    return h, v


def steer_two_prisms(p1: PrismSpec, p2: PrismSpec, theta1, theta2, model: str = "paraxial"):
    """Steered output direction(s) for a boresight ray through two prisms."""
    if model == "paraxial":
        return angles_to_dir(*_paraxial_sum([p1, p2], [theta1, theta2]))
    if model == "exact":
        theta1 = np.asarray(theta1, dtype=float)
        theta2 = np.asarray(theta2, dtype=float)
        shape = np.broadcast_shapes(theta1.shape, theta2.shape)
        d = np.zeros(shape + (3,))
        d[..., 2] = 1.0
        d = trace_prism(d, p1, np.broadcast_to(theta1, shape))
        return trace_prism(d, p2, np.broadcast_to(theta2, shape))
    raise ValueError(f"unknown model {model!r}")


def steer_three_prisms(pa: PrismSpec, pb: PrismSpec, pc: PrismSpec,
                       theta, phi3, model: str = "paraxial"):
    """Triple-prism steering: pa at +theta, pb at -theta, pc free at phi3.

    The first two prisms must be identical; counter-phased they form a
    harmonic oscillator along x that prism three offsets in any direction.
    """
    if pa != pb:
        raise ValueError("the counter-phased prism pair must be identical")
    theta = np.asarray(theta, dtype=float)
    phi3 = np.asarray(phi3, dtype=float)
    if model == "paraxial":
        return angles_to_dir(*_paraxial_sum([pa, pb, pc], [theta, -theta, phi3]))
    if model == "exact":
        shape = np.broadcast_shapes(theta.shape, phi3.shape)
        d = np.zeros(shape + (3,))
        d[..., 2] = 1.0
        d = trace_prism(d, pa, np.broadcast_to(theta, shape))
        d = trace_prism(d, pb, np.broadcast_to(-theta, shape))
        return trace_prism(d, pc, np.broadcast_to(phi3, shape))
    raise ValueError(f"unknown model {model!r}")


def fov_envelope(pa: PrismSpec, pb: PrismSpec, pc: PrismSpec,
                 n_theta: int = 1441, n_phi: int = 721, model: str = "paraxial"):
    """Angular extents (h_width, v_width) in rad swept by the triple prism."""
    theta = np.linspace(0.0, 2.0 * np.pi, n_theta)
    phi = np.linspace(0.0, 2.0 * np.pi, n_phi)
    tg, pg = np.meshgrid(theta, phi, indexing="ij")
    d = steer_three_prisms(pa, pb, pc, tg.ravel(), pg.ravel(), model=model)
    h, v = dir_to_angles(d)
    return float(h.max() - h.min()), float(v.max() - v.min())
