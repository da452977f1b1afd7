"""Reference homogenized matrices: corrector-based, 1D analytic, and the
known checkerboard value."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .coefficients import CoefficientField, SymMat
from .mesh import TriMesh
from .solver import CorrectorSolver


@dataclass(frozen=True)
class HomogenizedReference:
    matrix: SymMat
    provenance: str  # corrector_fem(n) | analytic_1d | checkerboard_exact


def homogenized_matrix(cell_mesh: TriMesh,
                       field: CoefficientField) -> HomogenizedReference:
    """Corrector-based homogenized matrix on the periodic cell.

    Entry (i, j) integrates (e_i + grad w_i)^T A (e_j + grad w_j) over the
    cell, with one-point quadrature consistent with the stiffness assembly.
    """
    solver = CorrectorSolver(cell_mesh, field)
    areas = solver._areas
    grads = solver._grads
    amat = solver._amat

    fluxes = []
    for k, p in enumerate(np.eye(2)):
        w = solver.solve(p)
        gw = np.einsum("tki,tk->ti", grads, w.values[cell_mesh.triangles])
        fluxes.append(gw + p)

    a = np.zeros((2, 2))
    for i in range(2):
        for j in range(i, 2):
            af = np.einsum("tij,tj->ti", amat, fluxes[j])
            a[i, j] = float(np.sum(areas * np.einsum("ti,ti->t",
                                                     fluxes[i], af)))
            a[j, i] = a[i, j]
    return HomogenizedReference(SymMat.from_array(a),
                                provenance=f"corrector_fem({cell_mesh.n})")


def harmonic_mean_1d(a: Callable[[np.ndarray], np.ndarray],
                     quad_points: int = 10_000) -> float:
    """(int_0^1 1/a)^{-1} by composite midpoint quadrature."""
    xs = (np.arange(quad_points) + 0.5) / quad_points
    vals = np.asarray(a(xs), dtype=float)
    if np.any(vals <= 0.0):
        raise ValueError("coefficient is not bounded below by a positive "
                         "constant on the quadrature grid")
    return float(1.0 / np.mean(1.0 / vals))


def arithmetic_mean_1d(a: Callable[[np.ndarray], np.ndarray],
                       quad_points: int = 10_000) -> float:
    xs = (np.arange(quad_points) + 0.5) / quad_points
    return float(np.mean(np.asarray(a(xs), dtype=float)))


def checkerboard_exact() -> HomogenizedReference:
    """The two-phase {4, 16} checkerboard homogenizes to sqrt(4*16) Id."""
    return HomogenizedReference(SymMat.identity(8.0),
                                provenance="checkerboard_exact")
