"""Misfit, adjoint fields, model gradients and gradient preconditioning.

The data misfit is the squared modulus of the record residuals summed over
frequencies, sources, receivers and directions.  Its model gradient comes
from one extra solve per (frequency, source) on the factorization that
already exists from the forward pass, followed by an element-wise
accumulation of the stiffness-derivative bilinear form.  The gradient is
masked to zero near stations and free surfaces with a linear ramp back to
one, and normalized by the lumped nodal areas.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import assembly as asmmod
from . import mesh as meshmod
from . import solver as solvermod


class AdjointError(ValueError):
    pass


@dataclass(frozen=True)
class Misfit:
    value: float
    partials: dict  # (frequency index, source index) -> partial sum


@dataclass(frozen=True)
class Gradient:
    values: np.ndarray      # length 2 n_nodes, aligned with the model vector
    node_areas: np.ndarray  # length n_nodes


@dataclass(frozen=True)
class PreconditionMask:
    factors: np.ndarray  # per-node scale in [0, 1]
    station_radius: float
    station_transition: float
    surface_distance: float
    surface_transition: float


def misfit(synthetic, observed) -> Misfit:
    """Least-squares record misfit with per-(frequency, source) partials."""
    if synthetic.values.shape != observed.values.shape:
        raise AdjointError(f"record shapes differ: {synthetic.values.shape} "
                           f"vs {observed.values.shape}")
    if not np.array_equal(synthetic.omegas, observed.omegas):
        raise AdjointError("record frequency lists differ")
    delta = (synthetic.values - observed.values) * synthetic.mask[None, None, :, :]
    per_fs = np.sum((delta * delta.conj()).real, axis=(2, 3))
    partials = {(f, s): float(per_fs[f, s])
                for f in range(per_fs.shape[0]) for s in range(per_fs.shape[1])}
    return Misfit(value=float(per_fs.sum()), partials=partials)


def residuals(synthetic, observed):
    """Masked record residuals, shape (n_f, n_s, n_r, 2)."""
    if synthetic.values.shape != observed.values.shape:
        raise AdjointError("record shapes differ")
    return (synthetic.values - observed.values) * synthetic.mask[None, None, :, :]


def adjoint_source(delta_u, layout, mesh, dof_map):
    """Right-hand side that excites -conj(residual) at the receivers."""
    delta_u = np.asarray(delta_u)
    if delta_u.shape != (layout.n_receivers, 2):
        raise AdjointError(f"residual slice has shape {delta_u.shape}, "
                           f"expected ({layout.n_receivers}, 2)")
    rhs = np.zeros(dof_map.n_dofs, dtype=complex)
    for r, rec in enumerate(layout.receivers):
        e, xi = meshmod.locate_station(mesh, rec.position)
        V, _ = asmmod.shape_functions(dof_map.p, np.asarray(xi))
        dofs = dof_map.element_dofs[e]
        for d in rec.directions:
            rhs[dofs[d::2]] += -np.conj(delta_u[r, d]) * V
    rhs[dof_map.clamped] = 0.0
    return rhs


def adjoint_field(fact: solvermod.Factorization, rhs):
    """Adjoint wave field from the reused forward factorization."""
    return fact.solve(rhs)


def accumulate_gradient(pairs_by_omega, mesh, model, rho, profile, cfg,
                        dof_map, areas=None) -> Gradient:
    """Model gradient from forward/adjoint field pairs.

    ``pairs_by_omega`` maps omega to a list of (u, u_adjoint) dof vectors.
    The entries are 2 Re(u . dL/dm_k . u_adj) summed over all pairs, divided
    by the lumped area of the coefficient's hat function.  The factor two is
    the derivative of |residual|^2 with respect to the real model parameters;
    the finite-difference oracle in the tests pins this convention.
    """
    if areas is None:
        areas = asmmod.node_areas(mesh)
    raw = np.zeros(2 * model.n_nodes, dtype=complex)
    for omega in sorted(pairs_by_omega):
        raw += asmmod.stiffness_derivative_products(
            pairs_by_omega[omega], mesh, model, rho, omega, profile, cfg, dof_map)
    values = 2.0 * raw.real / np.concatenate([areas, areas])
    return Gradient(values=values, node_areas=areas)


def gradient_imag_residue(pairs_by_omega, mesh, model, rho, profile, cfg, dof_map):
    """Imaginary leakage of the raw bilinear sum, for consistency checks."""
    raw = np.zeros(2 * model.n_nodes, dtype=complex)
    for omega in sorted(pairs_by_omega):
        raw += asmmod.stiffness_derivative_products(
            pairs_by_omega[omega], mesh, model, rho, omega, profile, cfg, dof_map)
    scale = np.abs(raw.real).max()
    return np.abs(raw.imag).max() / scale if scale > 0 else 0.0


def _segment_distances(points, a, b):
    """Distance of many points to the segment a-b."""
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.linalg.norm(points - a, axis=1)
    t = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(points - proj, axis=1)


def _ramp(d, inner, width):
    """0 inside the exclusion distance, linear to 1 across the transition."""
    if width <= 0:
        return (d > inner).astype(float)
    return np.clip((d - inner) / width, 0.0, 1.0)


def build_mask(layout, mesh, station_radius, surface_distance,
               station_transition=None, surface_transition=None) -> PreconditionMask:
    """Per-node gradient scale: zero at stations/free surfaces, ramped to one."""
    if station_radius < 0 or surface_distance < 0:
        raise AdjointError("mask distances must be >= 0")
    if station_transition is None:
        station_transition = station_radius
    if surface_transition is None:
        surface_transition = surface_distance

    nodes = mesh.nodes
    factors = np.ones(mesh.n_nodes)

    stations = layout.station_points()
    if len(stations) and (station_radius > 0 or station_transition > 0):
        d = np.min(np.linalg.norm(nodes[:, None, :] - stations[None, :, :], axis=2),
                   axis=1)
        factors = np.minimum(factors, _ramp(d, station_radius, station_transition))

    if len(mesh.free_surface_edges) and (surface_distance > 0 or surface_transition > 0):
        d = np.full(mesh.n_nodes, np.inf)
        for a, b in mesh.free_surface_edges:
            d = np.minimum(d, _segment_distances(nodes, nodes[a], nodes[b]))
        factors = np.minimum(factors, _ramp(d, surface_distance, surface_transition))

    return PreconditionMask(factors=factors,
                            station_radius=float(station_radius),
                            station_transition=float(station_transition),
                            surface_distance=float(surface_distance),
                            surface_transition=float(surface_transition))


def precondition(gradient: Gradient, mask: PreconditionMask) -> Gradient:
    """Entrywise product; both velocity blocks share the nodal mask."""
    n2 = len(gradient.values)
    if len(mask.factors) * 2 != n2:
        raise AdjointError(f"mask length {len(mask.factors)} does not match "
                           f"gradient length {n2}")
    scale = np.concatenate([mask.factors, mask.factors])
    return Gradient(values=gradient.values * scale, node_areas=gradient.node_areas)
