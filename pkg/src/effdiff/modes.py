"""Boundary-condition families for the sup space: eigenmodes of the
Neumann-to-Dirichlet Laplace operator, and the affine normal-trace family.

The Neumann-to-Dirichlet operator is only available through solves, so its
leading eigenpairs are computed by Lanczos iteration with full
reorthogonalization, one Laplace solve per operator application, against a
shared factorization.  The zero-mean constraint is handled by deflating the
constant boundary function, which keeps the operator symmetric.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .coefficients import SymMat, constant_field
from .mesh import TriMesh, boundary_mass_matrix, interpolate_boundary, \
    zero_mean_project
from .solver import NeumannSolver


@dataclass(frozen=True)
class ModeBasis:
    """Ordered boundary functions over boundary-loop DOFs of one mesh."""

    modes: np.ndarray                 # (P, nb)
    eigenvalues: np.ndarray | None    # (P,) for the R family, else None
    family: str                       # "r_modes" | "affine"
    mesh_n: int

    @property
    def count(self) -> int:
        return self.modes.shape[0]


class EigensolverError(RuntimeError):
    pass


def fix_sign(v: np.ndarray) -> np.ndarray:
    """Make the entry of largest absolute value positive (first on ties)."""
    k = int(np.argmax(np.abs(v)))
    return -v if v[k] < 0.0 else v


def lanczos_extreme(apply_op: Callable[[np.ndarray], np.ndarray],
                    dim: int,
                    nev: int,
                    deflate: np.ndarray | None = None,
                    which: str = "LA",
                    tol: float = 1e-10,
                    max_dim: int | None = None,
                    seed: int = 12345):
    """Extreme eigenpairs of a symmetric operator by Lanczos iteration.

    ``which`` selects the largest algebraic ("LA") or largest-magnitude
    ("LM") end of the spectrum.  Residual convergence is measured relative
    to the leading Ritz value.  Raises EigensolverError on non-convergence.
    """
    if max_dim is None:
        max_dim = min(dim, max(8 * nev + 60, 90))
    max_dim = min(max_dim, dim)
    if nev > max_dim:
        raise ValueError(f"cannot extract {nev} pairs from a Krylov space "
                         f"of dimension {max_dim}")

    rng = np.random.default_rng(seed)
    defl = None
    if deflate is not None:
        defl = deflate / np.linalg.norm(deflate)

    def project(z):
        if defl is not None:
            z = z - defl * (defl @ z)
        return z

    q = project(rng.standard_normal(dim))
    q /= np.linalg.norm(q)
    basis = [q]
    alphas: list[float] = []
    betas: list[float] = []

    def ritz(k):
        t = np.diag(np.array(alphas[:k]))
        if k > 1:
            off = np.array(betas[:k - 1])
            t += np.diag(off, 1) + np.diag(off, -1)
        vals, vecs = sla.eigh(t)
        order = np.argsort(-vals if which == "LA" else -np.abs(vals))
        return vals[order], vecs[:, order]

    result = None
    for j in range(max_dim):
        z = apply_op(basis[j])
        alphas.append(float(basis[j] @ z))
        # full reorthogonalization, twice for safety
        qmat = np.stack(basis, axis=1)
        for _ in range(2):
            z = project(z - qmat @ (qmat.T @ z))
        beta = float(np.linalg.norm(z))
        k = j + 1
        if k >= nev:
            vals, vecs = ritz(k)
            resid = beta * np.abs(vecs[-1, :nev])
            scale = max(np.abs(vals[0]), 1e-300)
            if np.all(resid <= tol * scale) or k == max_dim or beta < 1e-14:
                if np.all(resid <= max(tol, 1e-9) * scale) or beta < 1e-14 \
                        or k == dim:
                    result = (vals[:nev], qmat @ vecs[:, :nev], resid)
                    break
                if k == max_dim:
                    raise EigensolverError(
                        f"Lanczos did not converge in {max_dim} steps; "
                        f"residual norms {resid}")
        if beta < 1e-14:
            # invariant subspace found before nev pairs were available
            raise EigensolverError(
                f"Krylov breakdown at step {k} with only {k} directions")
        betas.append(beta)
        basis.append(z / beta)

    if result is None:
        raise EigensolverError("Lanczos failed to produce Ritz pairs")
    vals, vecs, _ = result
    return vals, vecs


class RModeOperator:
    """g -> trace of the harmonic extension with Neumann flux g."""

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        self.mass = boundary_mass_matrix(mesh)
        self.solver = NeumannSolver(mesh, constant_field(SymMat.identity()))
        self.chol = sla.cholesky(self.mass.toarray(), lower=True)

    def apply(self, g: np.ndarray) -> np.ndarray:
        g = zero_mean_project(self.mesh, self.mass, g)
        u = self.solver.solve(g, check_mean=False)
        return self.solver.trace(u)

    # symmetric conjugated operator y = L^T g
    def to_y(self, g: np.ndarray) -> np.ndarray:
        return self.chol.T @ g

    def from_y(self, y: np.ndarray) -> np.ndarray:
        return sla.solve_triangular(self.chol.T, y, lower=False)

    def apply_y(self, y: np.ndarray) -> np.ndarray:
        return self.to_y(self.apply(self.from_y(y)))


def compute_r_modes(mesh: TriMesh, p_count: int, tol: float = 1e-10) -> ModeBasis:
    """Top eigenpairs of the Neumann-to-Dirichlet Laplace operator.

    Modes are orthonormal in the boundary mass inner product, have zero
    boundary mean, and carry a deterministic sign convention.
    """
    nb = mesh.num_boundary_dofs
    if not 1 <= p_count <= nb - 1:
        raise ValueError(f"need 1 <= P <= {nb - 1} boundary modes, "
                         f"got {p_count}")
    op = RModeOperator(mesh)
    deflate = op.to_y(np.ones(nb))
    vals, ys = lanczos_extreme(op.apply_y, dim=nb, nev=p_count,
                               deflate=deflate, which="LA", tol=tol)
    if np.any(vals <= 0.0):
        raise EigensolverError(
            f"Neumann-to-Dirichlet operator produced non-positive "
            f"eigenvalues {vals}")
    modes = np.empty((p_count, nb))
    for k in range(p_count):
        modes[k] = fix_sign(op.from_y(ys[:, k]))
    return ModeBasis(modes=modes, eigenvalues=vals, family="r_modes",
                     mesh_n=mesh.n)


def affine_modes(mesh: TriMesh) -> ModeBasis:
    """The three normal-trace data e1.n, e2.n, (e1+e2)/2 . n.

    Each datum is L^2-projected onto the boundary P1 space, zero-meaned and
    normalized.  Gram-Schmidt is applied in index order, except that a
    datum lying in the span of the previous ones is kept normalized as-is:
    on the square the third direction is linearly dependent as a boundary
    function but still carries an independent energy measurement.
    """
    mass = boundary_mass_matrix(mesh)
    dense_mass = mass.toarray()
    directions = [np.array([1.0, 0.0]), np.array([0.0, 1.0]),
                  np.array([0.5, 0.5])]

    nb = mesh.num_boundary_dofs
    pts = mesh.nodes[mesh.boundary_loop]
    lengths = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)

    raw = []
    for e in directions:
        gn = mesh.boundary_normals @ e  # per boundary edge
        rhs = np.zeros(nb)
        # edge k contributes (e.n) * len/2 to both endpoints (loop k, k+1)
        np.add.at(rhs, np.arange(nb), gn * lengths / 2.0)
        np.add.at(rhs, (np.arange(nb) + 1) % nb, gn * lengths / 2.0)
        raw.append(np.linalg.solve(dense_mass, rhs))

    modes = []
    for g in raw:
        g = zero_mean_project(mesh, mass, g)
        for prev in modes:
            g = g - prev * float(prev @ (mass @ g))
        norm = float(np.sqrt(g @ (mass @ g)))
        if norm < 1e-8:
            # linearly dependent datum: keep the normalized original
            g = zero_mean_project(mesh, mass, raw[len(modes)])
            norm = float(np.sqrt(g @ (mass @ g)))
        modes.append(fix_sign(g / norm))
    return ModeBasis(modes=np.stack(modes), eigenvalues=None,
                     family="affine", mesh_n=mesh.n)


def choose_p(eps: float) -> int:
    """Number of boundary modes per the reported parameter choice."""
    if eps <= 0.0:
        raise ValueError(f"need eps > 0, got {eps}")
    return 3 if eps < 0.2 else 5


def modes_on_mesh(basis: ModeBasis, source: TriMesh,
                  target: TriMesh) -> ModeBasis:
    """Represent a mode basis on another mesh of the same domain.

    Affine families are rebuilt exactly; eigenmode families are transferred
    by arclength interpolation followed by zero-mean projection (no
    renormalization, so energies stay comparable across meshes).
    """
    if source.n != basis.mesh_n:
        raise ValueError("basis does not belong to the source mesh")
    if target.n == source.n:
        return basis
    if basis.family == "affine":
        return affine_modes(target)
    mass = boundary_mass_matrix(target)
    out = np.empty((basis.count, target.num_boundary_dofs))
    for k in range(basis.count):
        g = interpolate_boundary(source, basis.modes[k], target)
        out[k] = zero_mean_project(target, mass, g)
    return ModeBasis(modes=out, eigenvalues=basis.eigenvalues,
                     family=basis.family, mesh_n=target.n)
