"""Experiment runner and command line interface.

A run is described by a YAML file with nested sections::

    geometry: {N: 5, n: 10}
    field: {builtin: inclusions}        # or {background, features} or {raster}
    source: 1.0                         # scalar, or "manufactured"
    contrasts: [1.0e2, 1.0e4, 1.0e6]
    seed: 0
    errors:  {types: [polynomial, case1, case2], nb: [1, 2, 3, 4, 5]}
    precond: {coarse: [case3], nb: 2, domains: [1, 2], compositions: [additive, hybrid],
              solver: auto, restart: 2, tol: 1.0e-7, maxit: 500}
    output: out

Every run writes ``config.echo``: the configuration after defaults are
filled in, flattened to sorted ``key = value`` lines.  Its SHA-256 is the
config hash recorded with the results.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .field import (
    FieldError,
    FieldSpec,
    builtin_field,
    feature_list,
    manufactured_source,
    realize_field,
    realize_source,
    write_grid,
)
from .geometry import GridGeometry, LEFT, RIGHT, BOTTOM, TOP, build_geometry
from .interface import InterfaceOperator, error_metrics
from .local_mixed import GlobalSolution, monolithic_fine_solve
from .mortar_basis import BASIS_TYPES, build_mortar_basis, multiscale_edge_modes, polynomial_edge_modes
from .solvers import (
    COMPOSITIONS,
    CoarsePreconditioner,
    LocalPreconditioner,
    TwoLevelPreconditioner,
    gmres_restarted,
    pcg,
)

log = logging.getLogger(__name__)

SOLVERS = ("auto", "pcg", "gmres")
ERROR_COLUMNS = ("contrast", "case", "Nb", "e_u", "e_q", "conservation")
ITERATION_COLUMNS = ("contrast", "coarse", "Nb", "domain", "composition", "solver", "iterations", "converged")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config


@dataclass(frozen=True)
class ErrorStudyConfig:
    types: tuple[str, ...] = BASIS_TYPES
    nb: tuple[int, ...] = (1, 2, 3, 4, 5)


@dataclass(frozen=True)
class PrecondStudyConfig:
    coarse: tuple[str, ...] = ("case3",)
    nb: int = 2
    domains: tuple[int, ...] = (1, 2, 3, 4)
    compositions: tuple[str, ...] = COMPOSITIONS
    solver: str = "auto"
    restart: int = 2
    tol: float = 1e-7
    maxit: int = 500
    hybrid_form: str = "standard"
    side: str = "left"


@dataclass(frozen=True)
class ExperimentConfig:
    N: int
    n: int
    field: dict
    source: object = 1.0
    contrasts: tuple[float, ...] = (1e4,)
    seed: int = 0
    errors: ErrorStudyConfig = field(default_factory=ErrorStudyConfig)
    precond: PrecondStudyConfig = field(default_factory=PrecondStudyConfig)
    output: str = "out"

    def as_dict(self) -> dict:
        return {
            "geometry": {"N": self.N, "n": self.n},
            "field": self.field,
            "source": self.source,
            "contrasts": list(self.contrasts),
            "seed": self.seed,
            "errors": {"types": list(self.errors.types), "nb": list(self.errors.nb)},
            "precond": {
                "coarse": list(self.precond.coarse),
                "nb": self.precond.nb,
                "domains": list(self.precond.domains),
                "compositions": list(self.precond.compositions),
                "solver": self.precond.solver,
                "restart": self.precond.restart,
                "tol": self.precond.tol,
                "maxit": self.precond.maxit,
                "hybrid_form": self.precond.hybrid_form,
                "side": self.precond.side,
            },
            "output": self.output,
        }

    def echo(self) -> str:
        return canonical_echo(self.as_dict())

    def digest(self) -> str:
        return hashlib.sha256(self.echo().encode()).hexdigest()

    def geometry(self) -> GridGeometry:
        return build_geometry(self.N, self.n)


def _flatten(prefix: str, value, out: dict):
    if isinstance(value, dict):
        for k, v in value.items():
            _flatten(f"{prefix}.{k}" if prefix else str(k), v, out)
    else:
        out[prefix] = value


def canonical_echo(cfg: dict) -> str:
    """Sorted ``key = json-value`` lines for a nested dictionary."""
    flat: dict = {}
    _flatten("", cfg, flat)
    return "".join(f"{k} = {json.dumps(flat[k], sort_keys=True)}\n" for k in sorted(flat))


def _tuple(value, conv, name):
    items = value if isinstance(value, (list, tuple)) else [value]
    try:
        return tuple(conv(v) for v in items)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def _one_of(value, allowed, name):
    if value not in allowed:
        raise ConfigError(f"{name}: {value!r} is not one of {list(allowed)}")
    return value


def parse_config(data: dict, seed: int | None = None) -> ExperimentConfig:
    """Validate a nested dictionary and fill in defaults."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    known = {"geometry", "field", "source", "contrasts", "seed", "errors", "precond", "output"}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown config sections {sorted(extra)}")
    geo = data.get("geometry") or {}
    try:
        N, n = int(geo["N"]), int(geo["n"])
    except (KeyError, TypeError, ValueError):
        raise ConfigError("geometry needs integer N and n") from None
    if N < 2 or n < 2:
        raise ConfigError("geometry needs N >= 2 and n >= 2")

    fld = dict(data.get("field") or {"builtin": "inclusions"})
    if sum(k in fld for k in ("builtin", "features", "raster")) != 1:
        raise ConfigError("field needs exactly one of builtin, features, raster")
    if "features" in fld:
        feature_list(fld["features"])  # validate early
    source = data.get("source", 1.0)
    if source != "manufactured":
        try:
            source = float(source)
        except (TypeError, ValueError):
            raise ConfigError("source must be a number or 'manufactured'") from None

    contrasts = _tuple(data.get("contrasts", [1e4]), float, "contrasts")
    if any(not c > 0 for c in contrasts):
        raise ConfigError("contrasts must be positive")

    e = data.get("errors") or {}
    types = _tuple(e.get("types", list(BASIS_TYPES)), str, "errors.types")
    for t in types:
        _one_of(t, BASIS_TYPES, "errors.types")
    nbs = _tuple(e.get("nb", list(range(1, min(5, n) + 1))), int, "errors.nb")
    if any(nb < 1 or nb > n for nb in nbs):
        raise ConfigError(f"errors.nb values must lie in [1, {n}]")

    p = data.get("precond") or {}
    coarse = _tuple(p.get("coarse", ["case3"]), str, "precond.coarse")
    for t in coarse:
        _one_of(t, BASIS_TYPES + ("exact",), "precond.coarse")
    pnb = int(p.get("nb", 2))
    if pnb < 1 or pnb > n:
        raise ConfigError(f"precond.nb must lie in [1, {n}]")
    domains = _tuple(p.get("domains", [1, 2, 3, 4]), int, "precond.domains")
    for d in domains:
        _one_of(d, (1, 2, 3, 4), "precond.domains")
    comps = _tuple(p.get("compositions", list(COMPOSITIONS)), str, "precond.compositions")
    for c in comps:
        _one_of(c, COMPOSITIONS, "precond.compositions")
    pre = PrecondStudyConfig(
        coarse=coarse,
        nb=pnb,
        domains=domains,
        compositions=comps,
        solver=_one_of(str(p.get("solver", "auto")).lower(), SOLVERS, "precond.solver"),
        restart=int(p.get("restart", 2)),
        tol=float(p.get("tol", 1e-7)),
        maxit=int(p.get("maxit", 500)),
        hybrid_form=_one_of(p.get("hybrid_form", "standard"), ("standard", "literal"), "precond.hybrid_form"),
        side=_one_of(p.get("side", "left"), ("left", "right"), "precond.side"),
    )
    if pre.restart < 1 or pre.maxit < 1 or not pre.tol > 0:
        raise ConfigError("precond.restart, maxit and tol must be positive")
    if seed is None:
        seed = int(data.get("seed", 0))
    if seed < 0:
        raise ConfigError("seed must be non-negative")
    return ExperimentConfig(
        N=N,
        n=n,
        field=fld,
        source=source,
        contrasts=contrasts,
        seed=seed,
        errors=ErrorStudyConfig(types, nbs),
        precond=pre,
        output=str(data.get("output", "out")),
    )


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return parse_config(data or {}, seed=seed)


def field_for(cfg: ExperimentConfig, geom: GridGeometry, contrast: float):
    """Permeability for one contrast.  Built-in and feature fields take the
    contrast as the feature permeability; a raster ignores it."""
    f = cfg.field
    if "builtin" in f:
        spec = builtin_field(f["builtin"], contrast)
    elif "features" in f:
        feats = tuple(replace(ft, eta=contrast) for ft in feature_list(f["features"]))
        spec = FieldSpec(float(f.get("background", 1.0)), feats)
    else:
        spec = FieldSpec(raster=str(f["raster"]))
    return realize_field(spec, geom)


def source_for(cfg: ExperimentConfig, geom: GridGeometry):
    if cfg.source == "manufactured":
        return manufactured_source(geom)
    return realize_source(cfg.source, geom)


# ---------------------------------------------------------------- reports


@dataclass(frozen=True)
class ErrorRow:
    contrast: float
    case: str
    Nb: int
    e_u: float
    e_q: float
    conservation: float


@dataclass(frozen=True)
class IterationRow:
    contrast: float
    coarse: str
    Nb: int
    domain: int
    composition: str
    solver: str
    iterations: int
    converged: bool


@dataclass
class RunReport:
    errors: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    echo: str = ""
    config_hash: str = ""
    seed: int = 0


def _report(cfg: ExperimentConfig) -> RunReport:
    return RunReport(echo=cfg.echo(), config_hash=cfg.digest(), seed=cfg.seed)


def _max_conservation(sol: GlobalSolution, f) -> float:
    return float(np.abs(sol.conservation_residual(f)).max())


def _edge_modes(geom, kappa, basis_type, count, seed):
    if basis_type == "polynomial":
        return polynomial_edge_modes(geom, count)
    return multiscale_edge_modes(geom, kappa, int(basis_type[4:]), geom.n, seed)


def run_error_study(cfg: ExperimentConfig, threads: int = 1) -> RunReport:
    """Coarse mortar solves against the fine reference for every basis type
    and Nb; the projected systems are solved directly."""
    report = _report(cfg)
    geom = cfg.geometry()
    f = source_for(cfg, geom).values
    nb_max = max(cfg.errors.nb)
    for eta in cfg.contrasts:
        kappa = field_for(cfg, geom, eta).values
        op = InterfaceOperator(geom, kappa, threads=threads)
        g = op.rhs(f)
        fine = monolithic_fine_solve(geom, kappa, f)
        for bt in cfg.errors.types:
            modes = _edge_modes(geom, kappa, bt, nb_max, cfg.seed)
            for nb in cfg.errors.nb:
                try:
                    basis = build_mortar_basis(geom, modes, nb)
                    _, sol = op.solve_coarse(basis.R, f, g=g)
                    err = error_metrics(sol, fine, kappa)
                except Exception as exc:
                    raise RuntimeError(f"error study row (contrast={eta:g}, case={bt}, Nb={nb}): {exc}") from exc
                report.errors.append(ErrorRow(eta, bt, nb, err.e_u, err.e_q, _max_conservation(sol, f)))
    return report


def run_precond_study(cfg: ExperimentConfig, threads: int = 1) -> RunReport:
    """Krylov iteration counts for every (contrast, coarse space, local
    domain, composition).  PCG is refused for restrictive local domains."""
    pc = cfg.precond
    if pc.solver == "pcg" and any(d != 1 for d in pc.domains):
        raise ConfigError("PCG needs a symmetric preconditioner; local domains 2-4 are restrictive (use gmres or auto)")
    report = _report(cfg)
    geom = cfg.geometry()
    f = source_for(cfg, geom).values
    for eta in cfg.contrasts:
        kappa = field_for(cfg, geom, eta).values
        op = InterfaceOperator(geom, kappa, threads=threads)
        b = op.rhs(f)
        locals_ = {d: LocalPreconditioner(op, d) for d in pc.domains}
        for ct in pc.coarse:
            if ct == "exact":
                R, nb = np.eye(geom.n_mortar), geom.n
            else:
                R, nb = build_mortar_basis(geom, _edge_modes(geom, kappa, ct, pc.nb, cfg.seed), pc.nb).R, pc.nb
            cp = CoarsePreconditioner(op, R)
            for d in pc.domains:
                lp = locals_[d]
                for comp in pc.compositions:
                    M = TwoLevelPreconditioner(op, cp, lp, comp, hybrid_form=pc.hybrid_form)
                    use_pcg = pc.solver == "pcg" or (pc.solver == "auto" and lp.symmetric)
                    if use_pcg:
                        _, kr = pcg(op.apply, M, b, tol=pc.tol, maxit=pc.maxit)
                    else:
                        _, kr = gmres_restarted(op.apply, M, b, m=pc.restart, tol=pc.tol, maxit=pc.maxit, side=pc.side)
                    report.iterations.append(IterationRow(eta, ct, nb, d, comp, kr.method, kr.iterations, kr.converged))
    return report


# ---------------------------------------------------------------- outputs


def fmt6(x: float) -> str:
    return f"{x:.6g}"


def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return fmt6(v)
    return str(v)


def _write_csv(path: Path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(getattr(r, c)) for c in columns])


def emit_outputs(report: RunReport, directory) -> list[Path]:
    """Write ``errors.csv``, ``iterations.csv`` and ``config.echo``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = [d / "errors.csv", d / "iterations.csv", d / "config.echo"]
    _write_csv(paths[0], ERROR_COLUMNS, report.errors)
    _write_csv(paths[1], ITERATION_COLUMNS, report.iterations)
    paths[2].write_text(report.echo + f"# sha256 = {report.config_hash}\n")
    return paths


def read_errors_csv(path) -> list[ErrorRow]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        ErrorRow(float(r["contrast"]), r["case"], int(r["Nb"]), float(r["e_u"]), float(r["e_q"]), float(r["conservation"]))
        for r in rows
    ]


def read_iterations_csv(path) -> list[IterationRow]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        IterationRow(float(r["contrast"]), r["coarse"], int(r["Nb"]), int(r["domain"]), r["composition"], r["solver"], int(r["iterations"]), r["converged"] == "true")
        for r in rows
    ]


def cell_velocity(sol: GlobalSolution, nf: int) -> tuple[np.ndarray, np.ndarray]:
    """Cell-averaged velocity components from the outward side fluxes."""
    F = sol.flux
    qx = (F[:, RIGHT] - F[:, LEFT]) / (2 * sol.h)
    qy = (F[:, TOP] - F[:, BOTTOM]) / (2 * sol.h)
    return qx.reshape(nf, nf), qy.reshape(nf, nf)


def write_fields(sol: GlobalSolution, nf: int, directory) -> list[Path]:
    """``u_field.txt`` (pressure) and ``flux_field.txt`` (x then y velocity
    grid, each with its own header), rows from the bottom up."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    up, fp = d / "u_field.txt", d / "flux_field.txt"
    write_grid(up, sol.pressure, (nf, nf))
    with open(fp, "w") as fh:
        for comp in cell_velocity(sol, nf):
            fh.write(f"{nf} {nf}\n")
            for row in comp:
                fh.write(" ".join(f"{v:.6g}" for v in row) + "\n")
    return [up, fp]


def run_solve(cfg: ExperimentConfig, out, threads: int = 1) -> RunReport:
    """One fine solve through the interface system at the first contrast,
    with field dumps."""
    report = _report(cfg)
    geom = cfg.geometry()
    f = source_for(cfg, geom).values
    kappa = field_for(cfg, geom, cfg.contrasts[0]).values
    op = InterfaceOperator(geom, kappa, threads=threads)
    _, sol = op.solve_fine(f)
    res = _max_conservation(sol, f)
    log.info("fine solve: max conservation residual %.3e", res)
    write_fields(sol, geom.nf, out)
    return report


def run_snapshots(cfg: ExperimentConfig, out) -> list[Path]:
    """Export the per-edge mortar bases of every configured type at the
    largest Nb and the first contrast."""
    geom = cfg.geometry()
    kappa = field_for(cfg, geom, cfg.contrasts[0]).values
    nb = max(cfg.errors.nb)
    paths = []
    for bt in cfg.errors.types:
        basis = build_mortar_basis(geom, _edge_modes(geom, kappa, bt, nb, cfg.seed), nb)
        paths += basis.export(Path(out) / f"basis_{bt}")
    return paths


# ---------------------------------------------------------------- CLI


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="msmortar", description="Multiscale mortar mixed finite element experiments")
    p.add_argument("verb", choices=("solve", "errors", "precond", "snapshots"))
    p.add_argument("--config", required=True, help="YAML experiment file")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--seed", type=int, help="RNG seed (overrides the config)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for block solves")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg = load_config(args.config, seed=args.seed)
        out = Path(args.out or cfg.output)
        if args.verb == "errors":
            emit_outputs(run_error_study(cfg, args.threads), out)
        elif args.verb == "precond":
            emit_outputs(run_precond_study(cfg, args.threads), out)
        elif args.verb == "solve":
            emit_outputs(run_solve(cfg, out, args.threads), out)
        else:
            run_snapshots(cfg, out)
            emit_outputs(_report(cfg), out)
    except (ConfigError, FieldError, OSError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"msmortar: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
