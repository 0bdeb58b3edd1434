"""Macro interval and tagged micro cell meshes.

The macro domain is an interval ``[0, L]`` whose left end carries the
Dirichlet datum and whose right end is a no-flux boundary. The micro cell is
a rectangle triangulated by a structured grid of right triangles; its left
side is the reactive solid-water interface, its right side the water-air
interface and the top/bottom sides are the outer cell boundary.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError


class Boundary(str, enum.Enum):
    """Tags for the parts of the micro cell boundary."""

    GAMMA1 = "gamma1"
    GAMMA2 = "gamma2"
    OUTER = "outer"

    @classmethod
    def parse(cls, tag) -> "Boundary":
        if isinstance(tag, cls):
            return tag
        try:
            return cls(str(tag).lower())
        except ValueError:
            raise InvalidArgumentError(f"unknown boundary tag {tag!r}") from None


_TAG_CODES = {Boundary.GAMMA1: 0, Boundary.GAMMA2: 1, Boundary.OUTER: 2}
_CODE_TAGS = {v: k for k, v in _TAG_CODES.items()}


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MacroMesh:
    """Uniform or graded 1D grid on the macro interval.

    Node 0 is the Dirichlet end, node ``N`` the Neumann end.
    """

    nodes: np.ndarray
    elements: np.ndarray
    sizes: np.ndarray | None = None

    def __post_init__(self):
        nodes = _frozen(self.nodes, float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise InvalidArgumentError("macro mesh needs at least two nodes")
        if np.any(np.diff(nodes) <= 0):
            raise InvalidArgumentError("macro nodes must be strictly increasing")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "elements", _frozen(self.elements, np.int64))
        sizes = np.diff(nodes) if self.sizes is None else self.sizes
        object.__setattr__(self, "sizes", _frozen(sizes, float))

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def dirichlet_node(self) -> int:
        return 0

    @property
    def neumann_node(self) -> int:
        return self.nodes.size - 1

    @property
    def element_sizes(self) -> np.ndarray:
        return self.sizes

    @property
    def length(self) -> float:
        return float(self.nodes[-1] - self.nodes[0])


@dataclass(frozen=True, eq=False)
class MicroMesh:
    """Triangulated micro cell with tagged boundary edges.

    Attributes
    ----------
    nodes : (n, 2) array
        Node coordinates ``(y1, y2)``.
    triangles : (m, 3) array
        Counter-clockwise vertex indices.
    boundary_edges : (k, 2) array
        Node pairs of boundary edges.
    edge_tags : (k,) array
        Integer tag codes, see :func:`edge_tag`.
    edge_normals : (k, 2) array
        Outward unit normals of the boundary edges.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_tags: np.ndarray
    edge_normals: np.ndarray
    acute: bool = True

    def __post_init__(self):
        for name, dtype in (
            ("nodes", float),
            ("triangles", np.int64),
            ("boundary_edges", np.int64),
            ("edge_tags", np.int64),
            ("edge_normals", float),
        ):
            object.__setattr__(self, name, _frozen(getattr(self, name), dtype))
        if np.any(self.triangle_areas <= 0):
            raise InvalidArgumentError("micro mesh has degenerate or inverted triangles")
        for tag in (Boundary.GAMMA1, Boundary.GAMMA2):
            if not np.any(self.edge_tags == _TAG_CODES[tag]):
                raise InvalidArgumentError(f"micro mesh has no {tag.value} edges")
        g1 = set(self.boundary_edges[self.edge_tags == _TAG_CODES[Boundary.GAMMA1]].ravel())
        g2 = set(self.boundary_edges[self.edge_tags == _TAG_CODES[Boundary.GAMMA2]].ravel())
        if g1 & g2:
            raise InvalidArgumentError("gamma1 and gamma2 must not touch")
        if self.acute and self.max_angle() > np.pi / 2 + 1e-12:
            raise InvalidArgumentError("acute-mesh option set but a triangle is obtuse")

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def triangle_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def edge_measures(self) -> np.ndarray:
        p = self.nodes[self.boundary_edges]
        return np.hypot(*(p[:, 1] - p[:, 0]).T)

    @property
    def area(self) -> float:
        return float(self.triangle_areas.sum())

    def edge_mask(self, tag) -> np.ndarray:
        return self.edge_tags == _TAG_CODES[Boundary.parse(tag)]

    def edge_tag(self, k: int) -> Boundary:
        return _CODE_TAGS[int(self.edge_tags[k])]

    def max_angle(self) -> float:
        p = self.nodes[self.triangles]
        worst = 0.0
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            cos = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            worst = max(worst, float(np.arccos(np.clip(cos, -1.0, 1.0)).max()))
        return worst


def build_macro_mesh(n_elements: int, length: float) -> MacroMesh:
    """Uniform grid with ``n_elements`` elements on ``[0, length]``."""
    if int(n_elements) != n_elements or n_elements < 1:
        raise InvalidArgumentError(f"n_elements must be a positive integer, got {n_elements!r}")
    if not length > 0:
        raise InvalidArgumentError(f"length must be positive, got {length!r}")
    n = int(n_elements)
    h = length / n
    nodes = np.arange(n + 1) * h
    nodes[-1] = length
    elements = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    return MacroMesh(nodes, elements, np.full(n, h))


def build_micro_mesh(nx: int, ny: int, width: float = 1.0, height: float = 1.0) -> MicroMesh:
    """Structured right-triangle mesh of the ``width x height`` cell.

    Node ``(i, j)`` has index ``j * (nx + 1) + i``. Each grid square is split
    along its rising diagonal, so every triangle has one right angle and none
    is obtuse.
    """
    for name, v in (("nx", nx), ("ny", ny)):
        if int(v) != v or v < 1:
            raise InvalidArgumentError(f"{name} must be a positive integer, got {v!r}")
    if not (width > 0 and height > 0):
        raise InvalidArgumentError("cell dimensions must be positive")
    nx, ny = int(nx), int(ny)
    xs = np.arange(nx + 1) * (width / nx)
    ys = np.arange(ny + 1) * (height / ny)
    xs[-1], ys[-1] = width, height
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def idx(i, j):
        return j * (nx + 1) + i

    I, J = np.meshgrid(np.arange(nx), np.arange(ny))
    I, J = I.ravel(), J.ravel()
    p00, p10, p11, p01 = idx(I, J), idx(I + 1, J), idx(I + 1, J + 1), idx(I, J + 1)
    tris = np.empty((2 * I.size, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([p00, p10, p11])
    tris[1::2] = np.column_stack([p00, p11, p01])

    edges, tags, normals = [], [], []
    for j in range(ny):  # left side, y ascending
        edges.append((idx(0, j), idx(0, j + 1)))
        tags.append(_TAG_CODES[Boundary.GAMMA1])
        normals.append((-1.0, 0.0))
    for j in range(ny):  # right side
        edges.append((idx(nx, j), idx(nx, j + 1)))
        tags.append(_TAG_CODES[Boundary.GAMMA2])
        normals.append((1.0, 0.0))
    for i in range(nx):  # bottom then top
        edges.append((idx(i, 0), idx(i + 1, 0)))
        tags.append(_TAG_CODES[Boundary.OUTER])
        normals.append((0.0, -1.0))
    for i in range(nx):
        edges.append((idx(i, ny), idx(i + 1, ny)))
        tags.append(_TAG_CODES[Boundary.OUTER])
        normals.append((0.0, 1.0))
    return MicroMesh(nodes, tris, np.array(edges), np.array(tags), np.array(normals))


def boundary_measure(mesh: MicroMesh, tag) -> float:
    """Total length of the boundary edges carrying ``tag``.

    Uses a correctly rounded sum, so refining a structured mesh reproduces
    the measure bit for bit.
    """
    return math.fsum(mesh.edge_measures[mesh.edge_mask(tag)])


def export_macro_mesh(mesh: MacroMesh, path) -> None:
    """Write ``node``/``element``/``tag`` records, one per line."""
    with open(path, "w") as fh:
        for i, x in enumerate(mesh.nodes):
            fh.write(f"node {i} {float(x)!r}\n")
        for e, (a, b) in enumerate(mesh.elements):
            fh.write(f"element {e} {a} {b}\n")
        fh.write(f"tag dirichlet {mesh.dirichlet_node}\n")
        fh.write(f"tag neumann {mesh.neumann_node}\n")


def export_micro_mesh(mesh: MicroMesh, path) -> None:
    """Write ``node``/``triangle``/``edge`` records, one per line."""
    with open(path, "w") as fh:
        for i, (y1, y2) in enumerate(mesh.nodes):
            fh.write(f"node {i} {float(y1)!r} {float(y2)!r}\n")
        for t, (a, b, c) in enumerate(mesh.triangles):
            fh.write(f"triangle {t} {a} {b} {c}\n")
        for k, (a, b) in enumerate(mesh.boundary_edges):
            fh.write(f"edge {k} {a} {b} {mesh.edge_tag(k).value} {float(mesh.edge_measures[k])!r}\n")
