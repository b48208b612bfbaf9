"""Straight-line numpy residual assembly, the semantic ground truth.

This assembler shares no code with the kernel builder or the C emitters: it
tabulates bases and evaluates the weak forms directly with numpy einsum, so
it serves as an independent oracle for both.
"""

from __future__ import annotations

import numpy as np

from .elements import OperatorSpec, QuadratureRule, tabulate
from .mesh import DofMap, Mesh

__all__ = ["assemble_reference"]


def assemble_reference(
    spec: OperatorSpec, mesh: Mesh, dofmap: DofMap, rule: QuadratureRule, u
) -> np.ndarray:
    """Residual vector A(u) of the operator over the whole mesh.

    ``u`` is the flat coefficient vector (node-major, component-fastest for
    vector-valued spaces).  Returns a new flat vector of the same length.
    """
    elem = spec.element
    vs = elem.value_size
    nd = elem.ndof_scalar
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (vs * dofmap.ndofs_global,):
        raise ValueError(
            f"coefficient vector has shape {u.shape}, expected "
            f"({vs * dofmap.ndofs_global},)"
        )

    tab = tabulate(elem, rule)
    gtab = tabulate(spec.geometry, rule)
    phi = tab.values            # [q][i]
    dphi = tab.grads            # [q][i][b]
    qw = np.asarray(rule.weights)

    coords = mesh.coords[mesh.cell2vert]             # [c][v][2]
    J = np.einsum("cva,qvb->cqab", coords, gtab.grads)
    detJ = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    Jinv = np.empty_like(J)
    Jinv[..., 0, 0] = J[..., 1, 1]
    Jinv[..., 0, 1] = -J[..., 0, 1]
    Jinv[..., 1, 0] = -J[..., 1, 0]
    Jinv[..., 1, 1] = J[..., 0, 0]
    Jinv /= detJ[..., None, None]
    tw = qw[None, :] * np.abs(detJ)                  # [c][q]

    # physical test-function gradients: [c][q][i][a]
    gphix = np.einsum("cqba,qib->cqia", Jinv, dphi)

    if vs == 1:
        wloc = u[dofmap.cell2dof]                    # [c][i]
        uq = np.einsum("qi,ci->cq", phi, wloc)
        gx = np.einsum("cqia,ci->cqa", gphix, wloc)  # physical grad of u
        if spec.form == "mass":
            Aloc = np.einsum("cq,cq,qj->cj", tw, uq, phi)
        elif spec.form == "helmholtz":
            Aloc = np.einsum("cq,cqa,cqja->cj", tw, gx, gphix)
            Aloc += np.einsum("cq,cq,qj->cj", tw, uq, phi)
        else:
            raise ValueError(f"{spec.form} is not a scalar form")
        out = np.zeros(dofmap.ndofs_global)
        np.add.at(out, dofmap.cell2dof, Aloc)
        return out

    wloc = u.reshape(-1, 2)[dofmap.cell2dof]         # [c][i][d]
    gx = np.einsum("cqia,cid->cqad", gphix, wloc)    # du_d/dx_a
    if spec.form == "laplacian":
        Aloc = np.einsum("cq,cqad,cqja->cjd", tw, gx, gphix)
    elif spec.form == "elasticity":
        eps = 0.5 * (gx + np.swapaxes(gx, -1, -2))   # eps[d][a] symmetric
        Aloc = np.einsum("cq,cqad,cqja->cjd", tw, eps, gphix)
    else:
        raise ValueError(f"{spec.form} is not a vector form")
    out = np.zeros(2 * dofmap.ndofs_global)
    gdofs = 2 * dofmap.cell2dof[:, :, None] + np.arange(2)[None, None, :]
    np.add.at(out, gdofs, Aloc)
    return out
