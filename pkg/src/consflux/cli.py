"""Command-line front end.

Subcommands::

    consflux consistency --grid uniform1d --alpha sd
    consflux converge --case smooth --levels 4 --alpha sd
    consflux run --config barrier.ini
    consflux postprocess --mesh m.txt --flux U.csv --source q.csv --weights l2

Exit status: 0 on success, 1 on a numerical failure, 2 on bad input or
configuration.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import harness
from .flow import DirichletMode, PermeabilityField
from .flux import AveragingScheme, load_face_field, save_face_field
from .linalg import SolverConfig, SolverError
from .mesh import MeshError, load_mesh
from .postprocess import IncompatibleSourceError, PostProcessor, SourceSpec, WeightScheme
from .writers import format_table, read_csv, write_csv, write_vtk

log = logging.getLogger("consflux")

EXIT_OK, EXIT_NUMERICAL, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    """Invalid run configuration."""


# ---------------------------------------------------------------------------
# run configuration

# section -> key -> parser; anything else is rejected
_FLOAT, _INT, _STR = float, int, str


def _bool(v: str) -> bool:
    key = v.strip().lower()
    if key in ("1", "true", "yes", "on"):
        return True
    if key in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _floats(v: str) -> tuple:
    return tuple(float(x) for x in v.replace(",", " ").split())


def _boxes(v: str) -> tuple:
    boxes = []
    for part in v.split(";"):
        nums = _floats(part)
        if len(nums) != 4:
            raise ValueError("each block is 'x0 x1 y0 y1'")
        boxes.append(((nums[0], nums[1]), (nums[2], nums[3])))
    return tuple(boxes)


def _span(v: str) -> tuple:
    nums = _floats(v)
    if len(nums) != 2 or nums[0] >= nums[1]:
        raise ValueError("inlet is 'y0 y1' with y0 < y1")
    return nums


def _preconditioner(v: str):
    v = v.strip().lower()
    return None if v in ("", "none") else v


CONFIG_SCHEMA = {
    "scenario": {"name": _STR, "n": _INT, "dt": _FLOAT, "T": _FLOAT, "k_low": _FLOAT,
                 "snapshot_times": _floats},
    "geometry": {"blocks": _boxes, "inlet": _span},
    "flow": {"alpha": _STR, "theta": _STR, "sigma": _FLOAT, "tolerance": _FLOAT,
             "preconditioner": _preconditioner, "method": _STR},
    "postprocess": {"enabled": _bool, "weights": _STR, "tolerance": _FLOAT},
    "output": {"directory": _STR, "csv": _bool, "vtk": _bool, "flux_dump": _bool},
}


@dataclass(frozen=True)
class RunConfig:
    """Parsed ``run`` configuration.

    Defaults: the scenario's own grid, time step and end time; strong
    Dirichlet data, central averaging, no postprocessing (``enabled =
    false``; ``weights = l2`` when enabled), CG tolerance 1e-12 without
    preconditioning, outputs to ``./output`` with CSV on and VTK and the
    flux dump off.
    """

    spec: harness.CaseSpec
    output_dir: Path
    csv: bool = True
    vtk: bool = False
    flux_dump: bool = False

    @classmethod
    def from_string(cls, text: str, base: Path | None = None) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str  # keep "T" distinct from "t"
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse configuration: {exc}") from exc
        values: dict = {}
        for section in parser.sections():
            if section not in CONFIG_SCHEMA:
                raise ConfigError(f"unknown section [{section}]")
            schema = CONFIG_SCHEMA[section]
            for key, raw in parser.items(section):
                if key not in schema:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                try:
                    values[(section, key)] = schema[key](raw)
                except ValueError as exc:
                    raise ConfigError(f"[{section}] {key}: {exc}") from exc
        return cls._build(values, base or Path.cwd())

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
        return cls.from_string(text, path.parent)

    @classmethod
    def _build(cls, v: dict, base: Path) -> "RunConfig":
        get = v.get
        name = get(("scenario", "name"))
        if name not in ("barrier", "channel", "wellpair"):
            raise ConfigError("[scenario] name must be one of barrier, channel, wellpair")
        pp = get(("postprocess", "enabled"), False)
        solver_kw = {k: get(("flow", k)) for k in ("tolerance", "preconditioner", "method")
                     if ("flow", k) in v}
        pp_tol = get(("postprocess", "tolerance"))
        try:
            solver = SolverConfig(**solver_kw) if solver_kw else None
            pp_solver = SolverConfig(tolerance=pp_tol) if pp_tol is not None else None
            spec = harness.CaseSpec(
                scenario=name,
                mode=get(("flow", "alpha"), DirichletMode.STRONG),
                averaging=get(("flow", "theta"), AveragingScheme.CENTRAL),
                weights=get(("postprocess", "weights"), WeightScheme.UNIFORM) if pp else None,
                n=get(("scenario", "n")),
                dt=get(("scenario", "dt")),
                T=get(("scenario", "T")),
                sigma=get(("flow", "sigma"), 10.0),
                k_low=get(("scenario", "k_low")),
                blocks=get(("geometry", "blocks")),
                inlet=get(("geometry", "inlet")),
                snapshot_times=get(("scenario", "snapshot_times"), ()),
                solver=solver,
                pp_solver=pp_solver,
            )
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        out = Path(get(("output", "directory"), "output"))
        if not out.is_absolute():
            out = base / out
        return cls(spec, out, get(("output", "csv"), True), get(("output", "vtk"), False),
                   get(("output", "flux_dump"), False))


# ---------------------------------------------------------------------------
# subcommands


def _emit(table, out: str | None, title: str | None = None):
    if out:
        write_csv(table, out)
        log.info("wrote %s", out)
    else:
        if title:
            print(title)
        print(format_table(table))


def cmd_consistency(args) -> int:
    spec = harness.CaseSpec(f"consistency-{args.grid}", mode=args.alpha, averaging=args.theta,
                            weights=args.weights, sigma=args.sigma)
    row = harness.run_consistency(spec)
    _emit(row, args.out, f"{args.grid}: {row.label}")
    return EXIT_OK


def cmd_converge(args) -> int:
    scenario = {"smooth": "convergence-smooth", "distorted": "convergence-distorted-family"}[args.case]
    solver = SolverConfig(method="direct") if args.method == "direct" else None
    spec = harness.CaseSpec(scenario, mode=args.alpha, averaging=args.theta, weights=args.weights,
                            solver=solver)
    table = harness.run_convergence(spec, args.levels, transport=not args.no_transport)
    _emit(table, args.out, table.label)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = RunConfig.from_file(args.config)
    spec = cfg.spec
    log.info("running %s %s", spec.scenario, spec.label)
    result = harness.run_scenario(spec)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{spec.scenario}"
    summary = {
        "method": [spec.label],
        "residual": [result.residual],
        "overshoot": [result.overshoot[-1]],
        "min_c": [result.c_min[-1]],
        "max_c": [result.c_max[-1]],
    }
    if spec.scenario == "wellpair":
        summary["breakthrough_time"] = [result.breakthrough_time()]
    if cfg.csv:
        write_csv(result, out / f"{stem}_timeseries.csv")
        write_csv(summary, out / f"{stem}_summary.csv")
    if cfg.vtk:
        k = result.permeability
        for t, c in sorted(result.snapshots.items()):
            write_vtk(result.mesh, {"concentration": c, "permeability": k}, out / f"{stem}_t{t:g}.vtk")
        write_vtk(result.mesh, {"concentration": result.concentration, "permeability": k},
                  out / f"{stem}_final.vtk")
    if cfg.flux_dump:
        save_face_field(result.flux, result.mesh, out / f"{stem}_flux.csv")
    print(format_table(summary))
    return EXIT_OK


def _per_element(path, name: str, M: int) -> np.ndarray:
    table = read_csv(path)
    if "element" not in table or name not in table:
        raise ConfigError(f"{path}: expected columns 'element' and '{name}'")
    idx = np.asarray(table["element"], dtype=int)
    if sorted(idx.tolist()) != list(range(M)):
        raise ConfigError(f"{path}: need exactly one row per element 0..{M - 1}")
    values = np.empty(M)
    values[idx] = table[name]
    return values


def cmd_postprocess(args) -> int:
    mesh = load_mesh(args.mesh)
    M = mesh.num_elements
    field = load_face_field(args.flux, mesh)
    source = SourceSpec(_per_element(args.source, "integral", M))
    K = None
    if args.permeability:
        K = PermeabilityField.isotropic(_per_element(args.permeability, "k", M), M)
    elif WeightScheme.parse(args.weights) is WeightScheme.INVERSE_PERMEABILITY:
        raise ConfigError("--weights wl2 needs --permeability")
    pp = PostProcessor(mesh, args.weights, K, SolverConfig(tolerance=args.tolerance),
                       fix_dirichlet=args.fix_dirichlet)
    V, _, report = pp(field, source)
    out = args.out or sys.stdout
    save_face_field(V, mesh, out)
    log.info("residual norm after correction: %.3e", report.norm)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="consflux", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    grids = [s.split("-", 1)[1] for s in harness.SCENARIOS if s.startswith("consistency-")]
    c = sub.add_parser("consistency", help="stationary consistency test on a fixed grid")
    c.add_argument("--grid", required=True, choices=grids)
    c.add_argument("--alpha", required=True, choices=["sd", "wd", "rd"])
    c.add_argument("--sigma", type=float, default=10.0)
    c.add_argument("--theta", default="central", choices=["central", "harmonic"])
    c.add_argument("--weights", default="l2", choices=["l2", "wl2"])
    c.add_argument("--out", help="CSV file (default: table on stdout)")
    c.set_defaults(func=cmd_consistency)

    v = sub.add_parser("converge", help="convergence study on refined grids")
    v.add_argument("--case", required=True, choices=["smooth", "distorted"])
    v.add_argument("--levels", type=int, default=4)
    v.add_argument("--alpha", default="sd", choices=["sd", "wd", "rd"])
    v.add_argument("--theta", default="central", choices=["central", "harmonic"])
    v.add_argument("--weights", default="l2", choices=["l2", "wl2"])
    v.add_argument("--method", default="iterative", choices=["iterative", "direct"])
    v.add_argument("--no-transport", action="store_true", help="flow and flux errors only")
    v.add_argument("--out")
    v.set_defaults(func=cmd_converge)

    r = sub.add_parser("run", help="flow and transport scenario from an INI file")
    r.add_argument("--config", required=True)
    r.set_defaults(func=cmd_run)

    q = sub.add_parser("postprocess", help="make a face flux locally conservative")
    q.add_argument("--mesh", required=True)
    q.add_argument("--flux", required=True)
    q.add_argument("--source", required=True, help="CSV with columns element,integral")
    q.add_argument("--weights", default="l2", choices=["l2", "wl2"])
    q.add_argument("--permeability", help="CSV with columns element,k (needed for wl2)")
    q.add_argument("--fix-dirichlet", action="store_true", help="leave Dirichlet-face fluxes unchanged")
    q.add_argument("--tolerance", type=float, default=1e-13)
    q.add_argument("--out")
    q.set_defaults(func=cmd_postprocess)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (SolverError, IncompatibleSourceError, FloatingPointError) as exc:
        print(f"consflux: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, MeshError, ValueError, OSError) as exc:
        print(f"consflux: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
