"""P1 finite element operators on the macro interval and the micro cell.

Every two-scale field is represented by one micro P1 field per macro node, so
macro coupling of the micro unknowns is diagonal and weighted by the lumped
macro mass. Assembly is vectorized over elements and returns
``scipy.sparse.csr_matrix`` objects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import EllipticityError, InvalidArgumentError
from .geometry import Boundary, MacroMesh, MicroMesh, boundary_measure
from .kinetics import DiffusivityField


def _coefficient(d, n_elements, floor=None):
    d = np.asarray(d, dtype=float)
    if d.ndim == 0:
        d = np.full(n_elements, float(d))
    if d.shape != (n_elements,):
        raise InvalidArgumentError(f"coefficient table has shape {d.shape}, expected ({n_elements},)")
    if floor is not None and np.any(d < floor):
        raise EllipticityError(f"diffusivity below ellipticity floor {floor}")
    if np.any(d <= 0):
        raise EllipticityError("diffusivity must be strictly positive")
    return d


def _p1_gradients(mesh: MicroMesh):
    """Barycentric gradients, shape (m, 3, 2), and triangle areas."""
    p = mesh.nodes[mesh.triangles]
    area = mesh.triangle_areas
    grads = np.empty((mesh.n_triangles, 3, 2))
    for i in range(3):
        e = p[:, (i + 2) % 3] - p[:, (i + 1) % 3]
        grads[:, i, 0] = -e[:, 1] / (2 * area)
        grads[:, i, 1] = e[:, 0] / (2 * area)
    return grads, area


def _scatter(conn, local, n):
    k = conn.shape[1]
    rows = np.repeat(conn, k, axis=1).ravel()
    cols = np.tile(conn, (1, k)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble_stiffness(mesh, diffusivity=1.0, floor=None) -> sp.csr_matrix:
    """P1 stiffness with element-wise constant diffusivity."""
    if isinstance(mesh, MacroMesh):
        d = _coefficient(diffusivity, mesh.n_elements, floor)
        h = mesh.element_sizes
        ref = np.array([[1.0, -1.0], [-1.0, 1.0]])
        local = (d / h)[:, None, None] * ref
        return _scatter(mesh.elements, local, mesh.n_nodes)
    if isinstance(mesh, MicroMesh):
        d = _coefficient(diffusivity, mesh.n_triangles, floor)
        grads, area = _p1_gradients(mesh)
        local = (d * area)[:, None, None] * np.einsum("tik,tjk->tij", grads, grads)
        return _scatter(mesh.triangles, local, mesh.n_nodes)
    raise InvalidArgumentError(f"unsupported mesh type {type(mesh).__name__}")


def assemble_mass(mesh, lumped: bool = False) -> sp.csr_matrix:
    """Consistent P1 mass or its row-sum lumped diagonal."""
    if isinstance(mesh, MacroMesh):
        h = mesh.element_sizes
        ref = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
        local = h[:, None, None] * ref
        conn, n = mesh.elements, mesh.n_nodes
    elif isinstance(mesh, MicroMesh):
        ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
        local = mesh.triangle_areas[:, None, None] * ref
        conn, n = mesh.triangles, mesh.n_nodes
    else:
        raise InvalidArgumentError(f"unsupported mesh type {type(mesh).__name__}")
    M = _scatter(conn, local, n)
    if lumped:
        return sp.diags(np.asarray(M.sum(axis=1)).ravel()).tocsr()
    return M


def trace_indices(mesh: MicroMesh, tag) -> np.ndarray:
    """Global indices of the nodes on a tagged boundary part, sorted by (y2, y1)."""
    mask = mesh.edge_mask(tag)
    if not mask.any():
        raise InvalidArgumentError(f"no edges tagged {Boundary.parse(tag).value}")
    idx = np.unique(mesh.boundary_edges[mask])
    order = np.lexsort((mesh.nodes[idx, 0], mesh.nodes[idx, 1]))
    return idx[order]


@dataclass(frozen=True, eq=False)
class BoundaryOperator:
    """Edge mass matrix restricted to the nodes of one boundary part.

    ``matrix[i, j]`` couples ``indices[i]`` and ``indices[j]``.
    """

    tag: Boundary
    indices: np.ndarray
    matrix: sp.csr_matrix
    n_nodes: int

    @property
    def weights(self) -> np.ndarray:
        """Row sums: the integral of each trace hat function."""
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    @property
    def total_mass(self) -> float:
        return float(self.matrix.sum())

    def full(self) -> sp.csr_matrix:
        """Embedding into the global micro index space."""
        P = sp.csr_matrix(
            (np.ones(self.indices.size), (self.indices, np.arange(self.indices.size))),
            shape=(self.n_nodes, self.indices.size),
        )
        return (P @ self.matrix @ P.T).tocsr()

    def full_weights(self) -> np.ndarray:
        w = np.zeros(self.n_nodes)
        w[self.indices] = self.weights
        return w


def assemble_boundary_mass(mesh: MicroMesh, tag, lumped: bool = True) -> BoundaryOperator:
    """1D P1 mass on the edges tagged ``tag``."""
    tag = Boundary.parse(tag)
    idx = trace_indices(mesh, tag)
    local_of = {g: i for i, g in enumerate(idx)}
    mask = mesh.edge_mask(tag)
    edges = np.vectorize(local_of.__getitem__)(mesh.boundary_edges[mask])
    lengths = mesh.edge_measures[mask]
    if lumped:
        ref = np.diag([0.5, 0.5])
    else:
        ref = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    local = lengths[:, None, None] * ref
    M = _scatter(edges, local, idx.size)
    if lumped:
        M = sp.diags(np.asarray(M.sum(axis=1)).ravel()).tocsr()
    return BoundaryOperator(tag, idx, M, mesh.n_nodes)


def boundary_load(mesh: MicroMesh, edge_values: np.ndarray) -> np.ndarray:
    """Nodal load of an edge-wise flux given at edge endpoints.

    ``edge_values[..., k, e]`` is the flux on boundary edge ``k`` evaluated at
    its endpoint ``e``. The flux may jump at corners, which is why values are
    supplied per edge rather than per node. Integration uses the trapezoidal
    rule, exact for fluxes linear along each edge.
    """
    edge_values = np.asarray(edge_values, dtype=float)
    lead = edge_values.shape[:-2]
    n_edges = mesh.boundary_edges.shape[0]
    weights = np.repeat(0.5 * mesh.edge_measures, 2)
    E = sp.csr_matrix(
        (weights, (np.arange(2 * n_edges), mesh.boundary_edges.ravel())),
        shape=(2 * n_edges, mesh.n_nodes),
    )
    out = E.T @ edge_values.reshape(-1, 2 * n_edges).T
    return np.asarray(out.T).reshape(*lead, mesh.n_nodes)


def dump_coo(matrix, path) -> None:
    """Write ``row col value`` triplets, one per line, row-major."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write(f"# shape {coo.shape[0]} {coo.shape[1]}\n")
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{int(r)} {int(c)} {float(v)!r}\n")


def load_coo(path) -> sp.csr_matrix:
    with open(path) as fh:
        header = fh.readline().split()
        shape = (int(header[2]), int(header[3]))
        rows, cols, vals = [], [], []
        for line in fh:
            r, c, v = line.split()
            rows.append(int(r))
            cols.append(int(c))
            vals.append(float(v))
    return sp.csr_matrix((vals, (rows, cols)), shape=shape)


@dataclass(frozen=True, eq=False)
class Operators:
    """All time-independent matrices of the two-scale discretization."""

    macro: MacroMesh
    micro: MicroMesh
    micro_mass: sp.csr_matrix
    A1: sp.csr_matrix
    A2: sp.csr_matrix
    macro_mass: sp.csr_matrix
    A3: sp.csr_matrix
    gamma1: BoundaryOperator
    gamma2: BoundaryOperator
    omega: np.ndarray
    lumped: bool

    @property
    def n_cells(self) -> int:
        return self.macro.n_nodes

    @property
    def n_micro(self) -> int:
        return self.micro.n_nodes

    @property
    def gamma2_measure(self) -> float:
        return boundary_measure(self.micro, Boundary.GAMMA2)

    @property
    def b2(self) -> np.ndarray:
        """Integral of each micro hat function over the water-air interface."""
        return self.gamma2.full_weights()


def build_operators(
    macro: MacroMesh, micro: MicroMesh, diffusivity: DiffusivityField, lumped: bool = True
) -> Operators:
    """Assemble mass, stiffness and interface operators for both scales.

    The reactive interface mass is always lumped so the dissolution term is
    evaluated nodally; the exchange interface follows ``lumped``.
    """
    d = diffusivity
    macro_lumped = assemble_mass(macro, lumped=True)
    return Operators(
        macro=macro,
        micro=micro,
        micro_mass=assemble_mass(micro, lumped=lumped),
        A1=assemble_stiffness(micro, d.d1, d.d1_floor),
        A2=assemble_stiffness(micro, d.d2, d.d2_floor),
        macro_mass=assemble_mass(macro, lumped=lumped),
        A3=assemble_stiffness(macro, d.d3, d.d3_floor),
        gamma1=assemble_boundary_mass(micro, Boundary.GAMMA1, lumped=True),
        gamma2=assemble_boundary_mass(micro, Boundary.GAMMA2, lumped=lumped),
        omega=macro_lumped.diagonal().copy(),
        lumped=lumped,
    )
