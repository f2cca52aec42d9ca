"""Finite-volume operators on the node-centered grid.

Every node owns a control volume (half cells along the walls, quarter cells
at the corners). The diffusion matrix L is the volume-integrated flux form:
(L u)_p = sum over faces of (u_nb - u_p) * area / spacing, with no fluxes
through the outer walls, so constants are annihilated exactly and column
sums vanish; any backward-Euler step built on L conserves sum(vol * u) to
solver roundoff. Dirichlet rows are imposed by the projection
diag(1-m) A + diag(m), which keeps assembly sparse and deterministic.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu


class GridOperators:
    """Shared discrete operators plus a cache of factorized implicit solves."""

    def __init__(self, grid):
        self.grid = grid
        nx, ny = grid.nx, grid.ny
        self.shape = (nx, ny)
        self.n = nx * ny
        self.vol = grid.node_volumes()
        self.ax = np.full(nx, grid.hx)   # vertical-face areas indexed by x-node
        self.ax[[0, -1]] = 0.5 * grid.hx
        self.ay = np.full(ny, grid.hy)   # horizontal-face areas indexed by y-node
        self.ay[[0, -1]] = 0.5 * grid.hy
        self.L = self._assemble_flux_laplacian()
        bmask = np.zeros((nx, ny), dtype=bool)
        bmask[0, :] = bmask[-1, :] = bmask[:, 0] = bmask[:, -1] = True
        self.boundary_mask = bmask
        m = bmask.ravel().astype(float)
        self._proj_int = sp.diags(1.0 - m)
        self._proj_bnd = sp.diags(m)
        self._lu_cache: dict = {}

    def _assemble_flux_laplacian(self) -> sp.csr_matrix:
        nx, ny = self.shape
        hx, hy = self.grid.hx, self.grid.hy

        def k(i, j):
            return i * ny + j

        rows, cols, data = [], [], []
        # faces between (i, j) and (i+1, j)
        ii, jj = np.meshgrid(np.arange(nx - 1), np.arange(ny), indexing="ij")
        coef = (self.ay[jj] / hx).ravel()
        a, b = k(ii, jj).ravel(), k(ii + 1, jj).ravel()
        rows += [a, a, b, b]
        cols += [b, a, a, b]
        data += [coef, -coef, coef, -coef]
        # faces between (i, j) and (i, j+1)
        ii, jj = np.meshgrid(np.arange(nx), np.arange(ny - 1), indexing="ij")
        coef = (self.ax[ii] / hy).ravel()
        a, b = k(ii, jj).ravel(), k(ii, jj + 1).ravel()
        rows += [a, a, b, b]
        cols += [b, a, a, b]
        data += [coef, -coef, coef, -coef]
        L = sp.coo_matrix((np.concatenate(data),
                           (np.concatenate(rows), np.concatenate(cols))),
                          shape=(self.n, self.n))
        return L.tocsr()

    # -- array-level operators ----------------------------------------------

    def laplacian(self, field: np.ndarray) -> np.ndarray:
        """Volume-integrated flux divergence of a (nx, ny) field."""
        return (self.L @ field.ravel()).reshape(self.shape)

    def pointwise_laplacian(self, field: np.ndarray) -> np.ndarray:
        return self.laplacian(field) / self.vol

    def taxis_flux(self, v: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Volume-integrated div(v grad u), arithmetic-mean face values."""
        hx, hy = self.grid.hx, self.grid.hy
        out = np.zeros_like(u)
        f = 0.5 * (v[:-1, :] + v[1:, :]) * (u[1:, :] - u[:-1, :]) * self.ay[None, :] / hx
        out[:-1, :] += f
        out[1:, :] -= f
        f = 0.5 * (v[:, :-1] + v[:, 1:]) * (u[:, 1:] - u[:, :-1]) * self.ax[:, None] / hy
        out[:, :-1] += f
        out[:, 1:] -= f
        return out

    # -- implicit solves ------------------------------------------------------

    def dirichlet_project(self, A: sp.spmatrix) -> sp.csr_matrix:
        return (self._proj_int @ A + self._proj_bnd).tocsr()

    def implicit_matrix(self, diff: float, dt: float, dirichlet: bool,
                        composite: np.ndarray | None = None) -> sp.csr_matrix:
        A = sp.diags(self.vol.ravel() / dt) - diff * (
            self.L @ sp.diags(composite.ravel()) if composite is not None else self.L)
        if dirichlet:
            A = self.dirichlet_project(A)
        return A.tocsr()

    def implicit_solve(self, diff: float, dt: float, rhs: np.ndarray,
                       dirichlet: bool = False,
                       composite: np.ndarray | None = None) -> np.ndarray:
        """Solve (vol/dt - diff * L [diag c]) x = rhs, LU-cached when c is None."""
        if composite is None:
            key = (float(diff), float(dt), dirichlet)
            lu = self._lu_cache.get(key)
            if lu is None:
                lu = splu(self.implicit_matrix(diff, dt, dirichlet).tocsc())
                self._lu_cache[key] = lu
        else:
            lu = splu(self.implicit_matrix(diff, dt, dirichlet, composite).tocsc())
        return lu.solve(rhs.ravel()).reshape(self.shape)

    def poisson_solve(self, diff: float, rhs: np.ndarray,
                      boundary_values: np.ndarray) -> np.ndarray:
        """Solve -diff * L u = rhs (volume-integrated) with Dirichlet walls."""
        key = ("poisson", float(diff))
        lu = self._lu_cache.get(key)
        if lu is None:
            A = self.dirichlet_project(-diff * self.L)
            lu = splu(A.tocsc())
            self._lu_cache[key] = lu
        b = rhs.copy()
        b[self.boundary_mask] = boundary_values[self.boundary_mask]
        return lu.solve(b.ravel()).reshape(self.shape)
