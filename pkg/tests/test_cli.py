import numpy as np
import pytest

from consflux.cli import ConfigError, RunConfig, main
from consflux.flux import exact_flux, load_face_field, save_face_field
from consflux.mesh import build_cartesian, refine_cells, save_mesh
from consflux.writers import read_csv, read_vtk_cell_data, write_csv

from conftest import STRIP_BC, parabola_velocity

BARRIER_INI = """
[scenario]
name = barrier
n = 8
T = 0.1
snapshot_times = 0.05

[flow]
theta = harmonic

[postprocess]
enabled = true
weights = wl2

[output]
directory = out
vtk = true
flux_dump = true
"""


def test_consistency_row(tmp_path, capsys):
    assert main(["consistency", "--grid", "uniform1d", "--alpha", "sd", "--out", str(tmp_path / "c.csv")]) == 0
    row = read_csv(tmp_path / "c.csv")
    assert row["method"] == ["PP(SD,1/2,L2)"]
    assert row["residual_U"][0] == pytest.approx(0.707, abs=1e-3)
    assert row["flux_error_U"][0] == pytest.approx(0.354, abs=1e-3)


def test_consistency_stdout(capsys):
    assert main(["consistency", "--grid", "nonmatching", "--alpha", "wd", "--sigma", "20"]) == 0
    out = capsys.readouterr().out
    assert "residual_V" in out and "line_V_x0.5" in out


def test_converge_rates(tmp_path):
    out = tmp_path / "conv.csv"
    assert main(["converge", "--case", "smooth", "--levels", "4", "--alpha", "sd", "--out", str(out)]) == 0
    t = read_csv(out)
    assert t["energy_rate"][-1] == pytest.approx(1.00, abs=0.05)
    assert 1.5 <= t["flux_U_rate"][-1] < 1.6
    assert t["flux_V_rate"][-1] == pytest.approx(2.0, abs=0.05)
    assert t["residual_U_rate"][-1] == pytest.approx(0.5, abs=0.01)


def test_run_outputs(tmp_path):
    cfg = tmp_path / "barrier.ini"
    cfg.write_text(BARRIER_INI)
    assert main(["run", "--config", str(cfg)]) == 0
    out = tmp_path / "out"
    names = sorted(p.name for p in out.iterdir())
    assert names == ["barrier_final.vtk", "barrier_flux.csv", "barrier_summary.csv", "barrier_t0.05.vtk",
                     "barrier_timeseries.csv"]
    series = read_csv(out / "barrier_timeseries.csv")
    assert len(series["time"]) == 10
    assert max(series["max_c"]) <= 1 + 1e-10
    assert set(read_vtk_cell_data(out / "barrier_final.vtk")) == {"concentration", "permeability"}
    summary = read_csv(out / "barrier_summary.csv")
    assert summary["method"] == ["PP(SD,theta,wL2)"]


def test_run_deterministic(tmp_path):
    cfg = tmp_path / "barrier.ini"
    cfg.write_text(BARRIER_INI.replace("vtk = true", "vtk = false"))
    main(["run", "--config", str(cfg)])
    first = (tmp_path / "out" / "barrier_timeseries.csv").read_bytes()
    flux = (tmp_path / "out" / "barrier_flux.csv").read_bytes()
    main(["run", "--config", str(cfg)])
    assert (tmp_path / "out" / "barrier_timeseries.csv").read_bytes() == first
    assert (tmp_path / "out" / "barrier_flux.csv").read_bytes() == flux


@pytest.mark.parametrize("text", [
    "[scenario]\nname = barrier\ncolour = red\n",
    "[scenario]\nname = barrier\n[plot]\nx = 1\n",
    "[scenario]\nname = moon\n",
    "[scenario]\nname = barrier\nn = many\n",
    "[scenario]\nname = barrier\n[flow]\npreconditioner = ilu\n",
    "[scenario]\nname = barrier\n[geometry]\nblocks = 0.5 0.4 0 1\n",
    "not an ini file",
])
def test_config_rejected(text):
    with pytest.raises(ConfigError):
        RunConfig.from_string(text)


def test_config_defaults(tmp_path):
    cfg = RunConfig.from_string("[scenario]\nname = channel\n", tmp_path)
    assert cfg.spec.weights is None
    assert cfg.spec.dt == 0.005 and cfg.spec.T == 2
    assert cfg.output_dir == tmp_path / "output"
    assert cfg.csv and not cfg.vtk and not cfg.flux_dump


def test_config_geometry_override():
    cfg = RunConfig.from_string("[scenario]\nname = barrier\n[geometry]\nblocks = 0.25 0.5 0 0.5; 0.5 0.75 0.5 1\n")
    assert cfg.spec.blocks == (((0.25, 0.5), (0.0, 0.5)), ((0.5, 0.75), (0.5, 1.0)))


def test_exit_codes(tmp_path, capsys):
    (tmp_path / "bad.ini").write_text("[scenario]\nname = barrier\nwhat = 1\n")
    assert main(["run", "--config", str(tmp_path / "bad.ini")]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.ini")]) == 2
    assert main(["consistency", "--grid", "hexagonal", "--alpha", "sd"]) == 2
    assert main([]) == 2


def write_inputs(tmp_path, mesh, field, integrals):
    save_mesh(mesh, tmp_path / "mesh.txt")
    save_face_field(field, mesh, tmp_path / "flux.csv")
    write_csv({"element": list(range(mesh.num_elements)), "integral": list(integrals)}, tmp_path / "q.csv")
    return ["postprocess", "--mesh", str(tmp_path / "mesh.txt"), "--flux", str(tmp_path / "flux.csv"),
            "--source", str(tmp_path / "q.csv")]


def test_postprocess_idempotent(tmp_path):
    mesh = refine_cells(build_cartesian(2, 2, bc_markers=STRIP_BC), [0, 3])
    U = exact_flux(mesh, parabola_velocity)
    args = write_inputs(tmp_path, mesh, U, 2.0 * mesh.element_areas)
    assert main(args + ["--out", str(tmp_path / "V.csv")]) == 0
    V = load_face_field(tmp_path / "V.csv", mesh)
    np.testing.assert_allclose(V.mean, U.mean, atol=1e-12)


def test_postprocess_stdout_and_weights(tmp_path, capsys):
    mesh = build_cartesian(3, 3, bc_markers=STRIP_BC)
    U = exact_flux(mesh, parabola_velocity)
    args = write_inputs(tmp_path, mesh, U, np.zeros(9))
    assert main(args + ["--weights", "wl2"]) == 2  # permeability missing
    write_csv({"element": list(range(9)), "k": [1.0] * 9}, tmp_path / "k.csv")
    capsys.readouterr()
    assert main(args + ["--weights", "wl2", "--permeability", str(tmp_path / "k.csv")]) == 0
    assert capsys.readouterr().out.startswith("face_id,x_mid")


def test_postprocess_incompatible_is_numerical(tmp_path):
    mesh = build_cartesian(2, 2, bc_markers={s: "neumann" for s in ("left", "right", "top", "bottom")})
    U = exact_flux(mesh, lambda x, y, t: np.zeros(x.shape + (2,)))
    args = write_inputs(tmp_path, mesh, U, np.ones(4))
    assert main(args) == 1


def test_postprocess_bad_source(tmp_path):
    mesh = build_cartesian(2, 2, bc_markers=STRIP_BC)
    args = write_inputs(tmp_path, mesh, exact_flux(mesh, parabola_velocity), np.zeros(4))
    write_csv({"element": [0, 1], "integral": [0.0, 0.0]}, tmp_path / "q.csv")
    assert main(args) == 2


@pytest.mark.parametrize("name", ["barrier", "channel", "wellpair"])
def test_shipped_configs_parse(name):
    from pathlib import Path
    path = Path(__file__).resolve().parents[1] / "configs" / f"{name}.ini"
    cfg = RunConfig.from_file(path)
    assert cfg.spec.scenario == name
    assert cfg.spec.postprocess
    assert cfg.output_dir == path.parent / "output" / name
