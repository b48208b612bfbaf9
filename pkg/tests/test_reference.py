"""The straight-line numpy assembler on whole meshes."""

import numpy as np
import pytest

from fevec.elements import integrand_degree, operator_spec, quadrature_rule
from fevec.mesh import build_dof_map, build_mesh
from fevec.reference import assemble_reference


def assemble(form, cell, degree, nx, u_fn=None, seed=0):
    spec = operator_spec(form, cell, degree)
    rule = quadrature_rule(cell, integrand_degree(spec))
    mesh = build_mesh(cell, nx, nx)
    dm = build_dof_map(mesh, spec.element)
    n = spec.element.value_size * dm.ndofs_global
    if u_fn is None:
        u = np.random.default_rng(seed).uniform(-1, 1, n)
    else:
        u = u_fn(spec, mesh, dm)
    return spec, mesh, dm, rule, u, assemble_reference(spec, mesh, dm, rule, u)


@pytest.mark.parametrize("cell", ["tri", "quad"])
@pytest.mark.parametrize("degree", [1, 2, 3])
def test_mass_of_one_integrates_to_one(cell, degree):
    ones = lambda spec, mesh, dm: np.ones(dm.ndofs_global)
    *_, out = assemble("mass", cell, degree, 4, ones)
    # sum_j A_j = integral of u over the unit square = 1
    assert abs(out.sum() - 1.0) < 1e-13


@pytest.mark.parametrize("cell", ["tri", "quad"])
def test_helmholtz_of_one_equals_mass_of_one(cell):
    ones = lambda spec, mesh, dm: np.ones(dm.ndofs_global)
    *_, hz = assemble("helmholtz", cell, 2, 3, ones)
    *_, ms = assemble("mass", cell, 2, 3, ones)
    # the gradient of a constant vanishes, leaving only the mass term
    assert np.abs(hz - ms).max() < 1e-14
    assert abs(hz.sum() - 1.0) < 1e-13


@pytest.mark.parametrize("form", ["laplacian", "elasticity"])
@pytest.mark.parametrize("cell", ["tri", "quad"])
def test_vector_forms_annihilate_translations(form, cell):
    const = lambda spec, mesh, dm: np.tile([0.3, -0.7], dm.ndofs_global)
    *_, out = assemble(form, cell, 2, 3, const)
    assert np.abs(out).max() < 1e-14


def test_elasticity_annihilates_rigid_rotation():
    # u = (-y, x): eps(u) = 0, so the residual vanishes identically
    def rot(spec, mesh, dm):
        # P1 so dof coordinates are the vertices
        u = np.empty(2 * dm.ndofs_global)
        u[0::2] = -mesh.coords[:, 1]
        u[1::2] = mesh.coords[:, 0]
        return u

    spec = operator_spec("elasticity", "tri", 1)
    rule = quadrature_rule("tri", integrand_degree(spec))
    mesh = build_mesh("tri", 4, 4)
    dm = build_dof_map(mesh, spec.element)
    out = assemble_reference(spec, mesh, dm, rule, rot(spec, mesh, dm))
    assert np.abs(out).max() < 1e-13
    # the laplacian does NOT annihilate the rotation
    lspec = operator_spec("laplacian", "tri", 1)
    lout = assemble_reference(lspec, mesh, dm, rule, rot(lspec, mesh, dm))
    assert np.abs(lout).max() > 1e-3


def test_partition_independence_of_mass_sum():
    """Assembling cell ranges separately and summing is partition
    independent (global assembly is a plain sum over cells)."""
    spec = operator_spec("mass", "quad", 2)
    rule = quadrature_rule("quad", integrand_degree(spec))
    mesh = build_mesh("quad", 4, 4)
    dm = build_dof_map(mesh, spec.element)
    u = np.ones(dm.ndofs_global)
    out = assemble_reference(spec, mesh, dm, rule, u)
    assert abs(out.sum() - 1.0) < 1e-13
    # split the mesh into sub-ranges by zeroing the complement contribution:
    # restrict via per-cell assembly on submaps
    total = np.zeros_like(out)
    for lo, hi in [(0, 5), (5, 11), (11, 16)]:
        sub_mesh = type(mesh)(mesh.coords, mesh.cell2vert[lo:hi], mesh.cell)
        sub_dm = type(dm)(dm.cell2dof[lo:hi], dm.ndofs_global, dm.element)
        total += assemble_reference(spec, sub_mesh, sub_dm, rule, u)
    assert np.abs(total - out).max() < 1e-13


def test_rejects_wrong_coefficient_length():
    spec = operator_spec("mass", "tri", 1)
    rule = quadrature_rule("tri", 2)
    mesh = build_mesh("tri", 2, 2)
    dm = build_dof_map(mesh, spec.element)
    with pytest.raises(ValueError, match="shape"):
        assemble_reference(spec, mesh, dm, rule, np.ones(3))
