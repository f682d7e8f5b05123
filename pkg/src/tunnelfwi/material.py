"""Nodal ground model and isotropic elastic stiffness.

Wave velocities are stored as one coefficient per mesh vertex: the first
half of the vector carries P-wave velocities, the second half S-wave
velocities, both interpolated bilinearly inside each element.  Density is
spatially constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mesh as meshmod

SQRT2 = np.sqrt(2.0)


class InvalidMaterialError(ValueError):
    """P/S velocity pair without a positive first Lame parameter."""


@dataclass(frozen=True)
class AmbientProperties:
    vp: float
    vs: float
    rho: float

    def validate(self):
        if self.vp <= 0 or self.vs <= 0 or self.rho <= 0:
            raise InvalidMaterialError("ambient properties must be positive")
        if self.vp <= SQRT2 * self.vs:
            raise InvalidMaterialError(
                f"vp={self.vp} must exceed sqrt(2)*vs={SQRT2 * self.vs:.6g}")


@dataclass(frozen=True)
class ModelVector:
    """Coefficient vector of nodal (vp, vs) values, vp block first."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or len(v) % 2:
            raise InvalidMaterialError("model vector must be flat with even length")
        object.__setattr__(self, "values", v)

    @property
    def n_nodes(self):
        return len(self.values) // 2

    @property
    def vp(self):
        return self.values[:self.n_nodes]

    @property
    def vs(self):
        return self.values[self.n_nodes:]

    def validate(self):
        if np.any(self.vp <= 0) or np.any(self.vs <= 0):
            raise InvalidMaterialError("velocities must be positive everywhere")
        bad = self.vp <= SQRT2 * self.vs
        if np.any(bad):
            k = int(np.argmax(bad))
            raise InvalidMaterialError(
                f"vp <= sqrt(2)*vs at node {k}: vp={self.vp[k]}, vs={self.vs[k]}")

    def replace(self, values):
        return ModelVector(np.array(values, dtype=float))

    @classmethod
    def homogeneous(cls, mesh, vp, vs):
        n = mesh.n_nodes
        return cls(np.concatenate([np.full(n, float(vp)), np.full(n, float(vs))]))


def clamp_to_valid(values, margin=1e-6, floor=1.0):
    """Pull line-search trial models back inside the validity bound.

    S-wave velocities are reduced where vp <= sqrt(2)*vs; both blocks are
    floored at a small positive velocity.
    """
    v = np.array(values, dtype=float)
    n = len(v) // 2
    np.maximum(v, floor, out=v)
    limit = v[:n] / SQRT2 * (1.0 - margin)
    np.minimum(v[n:], limit, out=v[n:])
    return v


def evaluate_velocities(model: ModelVector, mesh, p):
    """Bilinear (vp, vs) at an arbitrary point."""
    e, (xi, eta) = meshmod.locate_point(mesh, p)
    w = _bilinear(xi, eta)
    corners = mesh.elements[e]
    return float(w @ model.vp[corners]), float(w @ model.vs[corners])


def _bilinear(xi, eta):
    return 0.25 * np.array([(1 - xi) * (1 - eta), (1 + xi) * (1 - eta),
                            (1 + xi) * (1 + eta), (1 - xi) * (1 + eta)])


def corner_velocities(model: ModelVector, mesh, e):
    """(vp, vs) coefficients at the four corners of element e."""
    corners = mesh.elements[e]
    return model.vp[corners], model.vs[corners]


def lame_parameters(vp, vs, rho):
    """First and second Lame parameter from wave velocities."""
    mu = rho * vs ** 2
    lam = rho * vp ** 2 - 2.0 * mu
    if np.any(np.asarray(lam) <= 0):
        raise InvalidMaterialError(f"lambda <= 0 for vp={vp}, vs={vs}")
    return lam, mu


def velocities_from_lame(lam, mu, rho):
    return np.sqrt((lam + 2.0 * mu) / rho), np.sqrt(mu / rho)


def isotropic_stiffness(vp, vs, rho):
    """Fourth-order isotropic stiffness tensor (2D, shape (2, 2, 2, 2))."""
    lam = rho * (vp ** 2 - 2.0 * vs ** 2)
    mu = rho * vs ** 2
    d = np.eye(2)
    C = (lam * np.einsum("ij,kl->ijkl", d, d)
         + mu * (np.einsum("il,jk->ijkl", d, d) + np.einsum("ik,jl->ijkl", d, d)))
    return C
