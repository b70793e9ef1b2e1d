import io

import numpy as np
import pytest

from consflux.fem import integrate_cells
from consflux.flow import FlowProblem, FlowSolver, solve_stationary
from consflux.flux import (AveragingScheme, FaceField, effective_face_permeability, exact_flux, extract_flux,
                           face_norm_error, integrate_flux_on_line, load_face_field, recover_dirichlet_flux,
                           save_face_field)
from consflux.linalg import SolverConfig
from consflux.mesh import FaceMarker, build_cartesian, distort, refine_cells

from conftest import STRIP_BC, parabola, parabola_velocity

TIGHT = SolverConfig(tolerance=1e-13)


def strip_problem(mesh, K=1.0):
    return FlowProblem(mesh, K=K, q=2.0, p_B=parabola, u_B=0.0)


def strip_flux(mesh, mode="sd", averaging="central", K=1.0):
    prob = strip_problem(mesh, K)
    p = solve_stationary(prob, mode, TIGHT)
    return extract_flux(mesh, p, prob, mode, averaging)


def test_isotropic_equal():
    theta, ke = effective_face_permeability(2.0 * np.eye(2), 2.0 * np.eye(2), [1.0, 0.0])
    assert theta == 0.5 and ke == pytest.approx(2.0)


def test_harmonic_one_three():
    theta, ke = effective_face_permeability(np.eye(2), 3 * np.eye(2), [0.0, 1.0])
    assert theta == pytest.approx(0.75) and ke == pytest.approx(1.5)


def test_low_side_dominates():
    _, ke = effective_face_permeability(np.eye(2), 1e-3 * np.eye(2), [1.0, 0.0])
    assert ke == pytest.approx(2e-3 / 1.001, rel=1e-14)


def test_boundary_face_one_sided():
    theta, ke = effective_face_permeability(np.diag([4.0, 1.0]), None, [1.0, 0.0])
    assert theta == 1.0 and ke == 4.0


def test_nonpositive_normal_component():
    with pytest.raises(ValueError):
        effective_face_permeability(np.zeros((2, 2)), np.eye(2), [1.0, 0.0])


def test_strip_interior_face_exact(strip4):
    U = strip_flux(strip4)
    mid = strip4.face_midpoints
    at_quarter = np.flatnonzero(np.isclose(mid[:, 0], 0.25) & (strip4.face_neighbor >= 0))
    assert len(at_quarter) == 1
    np.testing.assert_allclose(U.values[at_quarter[0]], 0.5, atol=1e-12)


def test_strip_dirichlet_faces(strip4):
    U = strip_flux(strip4)
    mid = strip4.face_midpoints
    left = np.flatnonzero(np.isclose(mid[:, 0], 0.0))
    right = np.flatnonzero(np.isclose(mid[:, 0], 1.0))
    np.testing.assert_allclose(U.values[left], -0.25, atol=1e-12)
    np.testing.assert_allclose(U.values[right], 1.75, atol=1e-12)
    # the plain face-norm error comes from these two faces only
    assert face_norm_error(U, parabola_velocity, strip4) == pytest.approx(np.sqrt(2 * 0.25**2), abs=1e-12)


def test_neumann_faces_carry_datum(grid4):
    prob = FlowProblem(grid4, K=1.0, q=2.0, p_B=parabola, u_B=lambda x, y, t, nx, ny: 0.1 * x * ny)
    p = solve_stationary(prob, "sd", TIGHT)
    U = extract_flux(grid4, p, prob, "sd")
    neu = grid4.face_marker == FaceMarker.NEUMANN
    pts = grid4.face_points(np.array([0.5 - 0.5 / np.sqrt(3), 0.5 + 0.5 / np.sqrt(3)]))[neu]
    ny = grid4.face_normals[neu, 1][:, None]
    np.testing.assert_allclose(U.values[neu], 0.1 * pts[..., 0] * ny, rtol=1e-14, atol=1e-16)


@pytest.mark.parametrize("averaging", ["central", "harmonic"])
def test_constant_pressure_zero_interior_flux(checkerboard, averaging):
    K = np.linspace(0.1, 3.0, checkerboard.num_elements)
    prob = FlowProblem(checkerboard, K=K, q=0.0, p_B=2.0, u_B=0.0)
    p = np.full(checkerboard.num_nodes, 2.0)
    for mode in ("sd", "wd"):
        U = extract_flux(checkerboard, p, prob, mode, averaging)
        assert np.max(np.abs(U.values[checkerboard.interior_faces])) <= 1e-14


def test_harmonic_equals_central_for_uniform_k():
    mesh = distort(build_cartesian(4, 4, bc_markers=STRIP_BC), 0.2, seed=9)
    a = strip_flux(mesh, averaging="central", K=2.5)
    b = strip_flux(mesh, averaging="harmonic", K=2.5)
    np.testing.assert_allclose(a.values, b.values, atol=1e-12)


def test_harmonic_weights_jump():
    mesh = build_cartesian(2, 1, bc_markers=STRIP_BC)
    K = np.array([1.0, 3.0])
    prob = FlowProblem(mesh, K=K, q=0.0, p_B=lambda x, y, t: 1.0 - x, u_B=0.0)
    p = solve_stationary(prob, "sd", TIGHT)
    U = extract_flux(mesh, p, prob, "sd", "harmonic")
    # continuous-flux 1D solution: flux = 1 / (0.5/1 + 0.5/3) = 1.5 everywhere
    interior = mesh.interior_faces
    np.testing.assert_allclose(U.values[interior], 1.5, atol=1e-12)


@pytest.mark.parametrize("mesh_name", ["strip4", "grid4"])
def test_recovery_exact_on_uniform_strips(mesh_name, request):
    mesh = request.getfixturevalue(mesh_name)
    U = strip_flux(mesh, "rd")
    assert face_norm_error(U, parabola_velocity, mesh) <= 1e-12


def test_recovery_boundary_exact_on_nonuniform_strip(nonuniform_strip):
    mesh = nonuniform_strip
    U = strip_flux(mesh, "rd")
    exact = exact_flux(mesh, parabola_velocity)
    d = mesh.face_marker == FaceMarker.DIRICHLET
    np.testing.assert_allclose(U.values[d], exact.values[d], atol=1e-12)
    # interior averages are not exact on unequal cells
    assert face_norm_error(U, parabola_velocity, mesh) > 1e-3


@pytest.mark.parametrize("mode", ["rd", "wd"])
def test_global_balance(mode):
    mesh = distort(refine_cells(build_cartesian(4, 4, bc_markers={"bottom": "neumann"}), [5]), 0.2, seed=3)
    q = lambda x, y, t: 1.0 + np.sin(3 * x) * y
    prob = FlowProblem(mesh, K=np.linspace(0.5, 2, mesh.num_elements), q=q, p_B=lambda x, y, t: x * y, u_B=-0.2)
    p = solve_stationary(prob, mode, TIGHT)
    U = extract_flux(mesh, p, prob, mode)
    b = mesh.boundary_faces
    assert np.sum(U.mean[b] * mesh.face_measures[b]) == pytest.approx(integrate_cells(mesh, q).sum(), abs=1e-10)


def test_recovery_requires_dirichlet():
    mesh = build_cartesian(2, 2, bc_markers={s: "neumann" for s in ("left", "right", "top", "bottom")})
    prob = FlowProblem(mesh, q=0.0, u_B=0.0)
    with pytest.raises(ValueError):
        recover_dirichlet_flux(mesh, np.zeros(mesh.num_nodes), prob)


def test_line_integrals_exact(grid4):
    U = exact_flux(grid4, parabola_velocity)
    assert integrate_flux_on_line(U, grid4, 1.0) == pytest.approx(2.0, abs=1e-14)
    assert integrate_flux_on_line(U, grid4, 0.5) == pytest.approx(1.0, abs=1e-14)
    assert integrate_flux_on_line(FaceField.zeros(grid4), grid4, 0.25) == 0.0


def test_line_integral_hanging(checkerboard):
    U = exact_flux(checkerboard, parabola_velocity)
    assert integrate_flux_on_line(U, checkerboard, 1.0) == pytest.approx(2.0, abs=1e-14)
    assert integrate_flux_on_line(U, checkerboard, 0.5) == pytest.approx(1.0, abs=1e-14)


def test_line_must_tile(grid4):
    with pytest.raises(ValueError):
        integrate_flux_on_line(FaceField.zeros(grid4), grid4, 0.3)


def test_exact_trace_zero_error(checkerboard):
    U = exact_flux(checkerboard, parabola_velocity)
    assert face_norm_error(U, parabola_velocity, checkerboard) <= 1e-15
    assert face_norm_error(U, parabola_velocity, checkerboard, weighted=True) <= 1e-15


def test_weighted_norm_scales_with_h(grid4):
    U = FaceField.zeros(grid4) + 1.0
    zero = lambda x, y, t: np.zeros(x.shape + (2,))
    plain = face_norm_error(U, zero, grid4, skip_neumann=False)
    weighted = face_norm_error(U, zero, grid4, weighted=True, skip_neumann=False)
    assert weighted == pytest.approx(plain * np.sqrt(0.25))
    assert plain == pytest.approx(np.sqrt(grid4.face_measures.sum()))


def test_face_field_shape():
    with pytest.raises(ValueError):
        FaceField(np.zeros((3, 3)))
    f = FaceField(np.array([[1.0, 3.0]]))
    assert f.mean.tolist() == [2.0]


def test_averaging_parse():
    assert AveragingScheme.parse("theta") is AveragingScheme.HARMONIC
    assert AveragingScheme.parse("1/2") is AveragingScheme.CENTRAL
    with pytest.raises(ValueError):
        AveragingScheme.parse("upwind")


def test_csv_roundtrip(tmp_path, checkerboard):
    U = strip_flux(checkerboard)
    save_face_field(U, checkerboard, tmp_path / "f.csv")
    V = load_face_field(tmp_path / "f.csv", checkerboard)
    np.testing.assert_array_equal(U.values, V.values)
    buf = io.StringIO()
    save_face_field(U, checkerboard, buf)
    assert buf.getvalue() == (tmp_path / "f.csv").read_text()
    assert buf.getvalue().splitlines()[0] == "face_id,x_mid,y_mid,nx,ny,measure,mean,g0,g1"


def test_csv_rejects_bad_input(tmp_path, grid4):
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        load_face_field(tmp_path / "bad.csv")
    save_face_field(FaceField.zeros(grid4), grid4, tmp_path / "f.csv")
    with pytest.raises(ValueError):
        load_face_field(tmp_path / "f.csv", build_cartesian(2, 2))
