"""Structured unit-square meshes and Lagrange dof numbering."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .elements import ReferenceElement, cell_edges, reference_cell

__all__ = ["Mesh", "DofMap", "build_mesh", "build_dof_map"]


@dataclass(frozen=True)
class Mesh:
    coords: np.ndarray     # [nvertices][2], float64
    cell2vert: np.ndarray  # [ncells][nvert_per_cell], int32
    cell: object           # ReferenceCell

    @property
    def ncells(self) -> int:
        return len(self.cell2vert)

    @property
    def nvertices(self) -> int:
        return len(self.coords)


def build_mesh(kind: str, nx: int, ny: int) -> Mesh:
    """Structured mesh of the unit square: nx-by-ny quadrilaterals, each
    split into two triangles for the triangle variant.

    Vertices are numbered row-major, vertex (i, j) at (i/nx, j/ny).  Cell
    vertex order matches the reference cell, so every cell has positive
    Jacobian determinant.
    """
    cell = reference_cell(kind)
    if nx < 1 or ny < 1:
        raise ValueError("mesh needs at least one cell per direction")
    xs = np.linspace(0.0, 1.0, nx + 1)
    ys = np.linspace(0.0, 1.0, ny + 1)
    coords = np.array([(x, y) for y in ys for x in xs], dtype=np.float64)

    def v(i, j):
        return j * (nx + 1) + i

    cells = []
    for j in range(ny):
        for i in range(nx):
            v00, v10 = v(i, j), v(i + 1, j)
            v01, v11 = v(i, j + 1), v(i + 1, j + 1)
            if cell.kind == "triangle":
                cells.append((v00, v10, v01))
                cells.append((v10, v11, v01))
            else:
                # tensor vertex order (0,0), (1,0), (0,1), (1,1)
                cells.append((v00, v10, v01, v11))
    coords.setflags(write=False)
    c2v = np.array(cells, dtype=np.int32)
    c2v.setflags(write=False)
    return Mesh(coords, c2v, cell)


@dataclass(frozen=True)
class DofMap:
    cell2dof: np.ndarray  # [ncells][ndof_scalar], int32
    ndofs_global: int     # scalar dof count (multiply by value_size for vectors)
    element: ReferenceElement


def build_dof_map(mesh: Mesh, element: ReferenceElement) -> DofMap:
    """Global numbering for an equispaced Lagrange space on the mesh.

    Global dofs are ordered: all vertex dofs (by vertex number), then edge
    dofs (in first-seen order over cells), then cell-interior dofs.  Edge
    interior dofs are reversed when the global orientation of the edge (low
    vertex to high vertex) disagrees with the cell-local one, so neighbouring
    cells agree on shared dofs.
    """
    if element.cell.kind != mesh.cell.kind:
        raise ValueError("element and mesh cell kinds differ")
    k = element.degree
    edges = cell_edges(mesh.cell)
    per_edge = k - 1
    nloc = element.ndof_scalar

    n_interior = nloc - mesh.cell.nvertices - per_edge * len(edges)
    edge_ids = {}
    next_dof = mesh.nvertices
    cell2dof = np.empty((mesh.ncells, nloc), dtype=np.int32)

    edge_base = []
    for c in range(mesh.ncells):
        verts = mesh.cell2vert[c]
        cell2dof[c, : len(verts)] = verts
        pos = len(verts)
        for (a, b) in edges:
            ga, gb = int(verts[a]), int(verts[b])
            key = (min(ga, gb), max(ga, gb))
            if key not in edge_ids:
                edge_ids[key] = next_dof
                next_dof += per_edge
            base = edge_ids[key]
            flip = ga > gb  # local direction runs high-to-low globally
            for t in range(per_edge):
                slot = per_edge - 1 - t if flip else t
                cell2dof[c, pos + t] = base + slot
            pos += per_edge
    for c in range(mesh.ncells):
        pos = mesh.cell.nvertices + per_edge * len(edges)
        for t in range(n_interior):
            cell2dof[c, pos + t] = next_dof + c * n_interior + t
    ndofs = next_dof + mesh.ncells * n_interior
    cell2dof.setflags(write=False)
    return DofMap(cell2dof, ndofs, element)
