"""Scenario-driven command line front end.

Subcommands:
  hardylab run <config>       execute the configured pipeline
  hardylab validate <config>  parse and validate, reporting all errors
  hardylab report <manifest>  pretty-print a finished run

Configs are flat text files with dotted keys, one `key = value` per line
(`#` comments).  Exit codes: 0 all checks pass, 1 a verification check
failed, 2 a construction step failed, 3 the config is invalid.
"""

from __future__ import annotations

import argparse
import difflib
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .mesh import (Mesh, ScalarField, build_radial_mesh, build_tensor_mesh,
                   MeshError)
from .operator import MatrixField, ProblemSpec, OperatorError, c_p
from .solver import SolveOptions, dirichlet_solve, SolverError
from .green import (green_potential, mollified_delta, check_assumptions,
                    GreenError, CriticalitySuspected)
from .hardy import optimal_pair, weight_from_green, HardyError
from .verify import (TestFunctionFamily, hardy_margin, null_sequence_decay,
                     null_criticality_growth, coarea_flux,
                     chain_rule_residual, simp_equivalence)
from .io import field_to_csv, table_to_csv, write_json, render_report_text


class ConfigError(Exception):
    """Raised for an invalid scenario configuration (exit code 3)."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


EXIT_PASS = 0
EXIT_CHECK_FAILED = 1
EXIT_CONSTRUCTION = 2
EXIT_CONFIG = 3

CHECK_NAMES = ("hardy_margin", "null_sequence", "null_criticality",
               "coarea_flux", "chain_rule", "simp_equivalence")

PIPELINES = ("solve", "green", "weight", "verify_all") + tuple(
    f"verify:{c}" for c in CHECK_NAMES)

# key -> (parser, default); None default means "required or contextual"
_KEYS = {
    "mesh.kind": (str, "radial"),
    "mesh.n": (int, 3),
    "mesh.r_min": (float, 1e-4),
    "mesh.r_max": (float, 1e4),
    "mesh.cells": (int, 1200),
    "mesh.grading": (str, "geometric"),
    "mesh.x_min": (float, -1.0),
    "mesh.x_max": (float, 1.0),
    "mesh.y_min": (float, -1.0),
    "mesh.y_max": (float, 1.0),
    "mesh.nx": (int, 64),
    "mesh.ny": (int, 64),
    "mesh.hole": (str, "none"),
    "operator.p": (float, 2.0),
    "operator.A": (str, "identity"),
    "operator.V": (str, "zero"),
    "density.center": (float, 1.0),
    "density.radius": (float, 0.4),
    "density.mass": (float, 1.0),
    "green.levels": (int, 24),
    "green.exhaust_k": (int, 8),
    "family.kind": (str, "random_bumps"),
    "family.count": (int, 40),
    "pipeline": (str, None),
    "seed": (int, None),
    "tolerances.solver": (float, 1e-10),
    "tolerances.margin": (float, 1e-6),
    "output.dir": (str, "runs"),
}


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated flat scenario description plus its canonical hash."""
    values: dict
    source_text: str

    def __getitem__(self, key):
        return self.values[key]

    @property
    def config_hash(self) -> str:
        canon = "\n".join(f"{k}={self.values[k]}"
                          for k in sorted(self.values))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


@dataclass
class RunManifest:
    """Completion marker written last; every listed artifact must exist."""
    config_hash: str
    version: str
    pipeline: str
    started: str
    finished: str = ""
    artifacts: list = field(default_factory=list)
    status: str = "incomplete"
    exit_code: int = EXIT_CONSTRUCTION

    def to_dict(self) -> dict:
        return {"config_hash": self.config_hash, "version": self.version,
                "pipeline": self.pipeline, "started": self.started,
                "finished": self.finished, "artifacts": self.artifacts,
                "status": self.status, "exit_code": self.exit_code}


def parse_config(path) -> ScenarioConfig:
    """Parse and validate a dotted-key config, collecting every error."""
    try:
        text = open(path, encoding="utf-8").read()
    except OSError as exc:
        raise ConfigError([f"cannot read config: {exc}"])
    errors = []
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            errors.append(f"line {lineno}: expected key = value")
            continue
        key, _, val = stripped.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _KEYS:
            hint = difflib.get_close_matches(key, _KEYS, n=1)
            suffix = f" (did you mean {hint[0]!r}?)" if hint else ""
            errors.append(f"line {lineno}: unknown key {key!r}{suffix}")
            continue
        if key in raw:
            errors.append(f"line {lineno}: duplicate key {key!r}")
            continue
        caster = _KEYS[key][0]
        try:
            raw[key] = caster(val)
        except ValueError:
            errors.append(f"line {lineno}: cannot parse {key} value "
                          f"{val!r} as {caster.__name__}")
    values = {k: (raw[k] if k in raw else dflt)
              for k, (_, dflt) in _KEYS.items()}
    values.update(raw)
    errors.extend(_validate(values, provided=set(raw)))
    if errors:
        raise ConfigError(errors)
    return ScenarioConfig(values=values, source_text=text)


def _validate(v, provided) -> list:
    errors = []
    if v["pipeline"] is None:
        errors.append("pipeline is required")
    elif v["pipeline"] not in PIPELINES:
        hint = difflib.get_close_matches(v["pipeline"], PIPELINES, n=1)
        suffix = f" (did you mean {hint[0]!r}?)" if hint else ""
        errors.append(f"unknown pipeline {v['pipeline']!r}{suffix}")
    if v["mesh.kind"] not in ("radial", "tensor2d"):
        errors.append("mesh.kind must be 'radial' or 'tensor2d'")
    if v["mesh.grading"] not in ("uniform", "geometric"):
        errors.append("mesh.grading must be 'uniform' or 'geometric'")
    if v["operator.p"] <= 1.0:
        errors.append("p must exceed 1")
    if v["mesh.kind"] == "radial":
        if v["mesh.n"] < 1:
            errors.append("mesh.n must be at least 1")
        if v["mesh.r_min"] >= v["mesh.r_max"]:
            errors.append("mesh.r_min must be below mesh.r_max")
        if v["mesh.n"] >= 2 and v["mesh.r_min"] <= 0:
            errors.append("mesh.r_min must be positive for n >= 2")
        if v["mesh.cells"] < 8:
            errors.append("mesh.cells must be at least 8")
    else:
        if v["mesh.nx"] < 8 or v["mesh.ny"] < 8:
            errors.append("mesh.nx and mesh.ny must be at least 8")
        if v["mesh.hole"] != "none":
            try:
                _parse_floats(v["mesh.hole"], 4)
            except ValueError:
                errors.append("mesh.hole must be 'none' or x0,x1,y0,y1")
    for desc, name in ((v["operator.A"], "operator.A"),
                       (v["operator.V"], "operator.V")):
        try:
            _check_descriptor(name, desc)
        except ValueError as exc:
            errors.append(str(exc))
    if v["density.radius"] <= 0:
        errors.append("density.radius must be positive")
    if v["density.mass"] <= 0:
        errors.append("density.mass must be positive")
    if v["green.levels"] < 3:
        errors.append("green.levels must be at least 3")
    if v["green.exhaust_k"] < 1:
        errors.append("green.exhaust_k must be at least 1")
    needs_seed = v["pipeline"] in ("verify_all", "verify:hardy_margin",
                                   "verify:simp_equivalence")
    if needs_seed and "seed" not in provided:
        errors.append("seed is required for randomized verification "
                      "families")
    if v["family.count"] < 1:
        errors.append("family.count must be at least 1")
    for key in ("tolerances.solver", "tolerances.margin"):
        if v[key] <= 0:
            errors.append(f"{key} must be positive")
    return errors


def _parse_floats(text, n):
    parts = [float(x) for x in text.split(",")]
    if len(parts) != n:
        raise ValueError(f"expected {n} comma-separated numbers")
    return parts


def _check_descriptor(name, desc):
    head, _, args = desc.partition(":")
    if name == "operator.A":
        if head == "identity" and not args:
            return
        if head == "diag":
            _parse_floats(args, 2)
            return
        if head == "rot":
            _parse_floats(args, 3)
            return
        raise ValueError(f"{name}: expected identity | diag:a,b | "
                         f"rot:a,b,theta, got {desc!r}")
    if head == "zero" and not args:
        return
    if head == "constant":
        _parse_floats(args, 1)
        return
    if head == "power":
        _parse_floats(args, 2)
        return
    if head == "annulus":
        _parse_floats(args, 3)
        return
    raise ValueError(f"{name}: expected zero | constant:c | power:c,s | "
                     f"annulus:r0,r1,depth, got {desc!r}")


def build_mesh(cfg: ScenarioConfig) -> Mesh:
    if cfg["mesh.kind"] == "radial":
        return build_radial_mesh(cfg["mesh.n"], cfg["mesh.r_min"],
                                 cfg["mesh.r_max"], cfg["mesh.cells"],
                                 cfg["mesh.grading"])
    hole = None
    if cfg["mesh.hole"] != "none":
        x0, x1, y0, y1 = _parse_floats(cfg["mesh.hole"], 4)
        hole = (x0, x1, y0, y1)
    return build_tensor_mesh((cfg["mesh.x_min"], cfg["mesh.x_max"]),
                             (cfg["mesh.y_min"], cfg["mesh.y_max"]),
                             cfg["mesh.nx"], cfg["mesh.ny"], hole=hole)


def build_matrix(cfg: ScenarioConfig, mesh: Mesh) -> MatrixField:
    desc = cfg["operator.A"]
    head, _, args = desc.partition(":")
    if head == "identity":
        return MatrixField.identity(mesh)
    if head == "diag":
        return MatrixField.diagonal(mesh, *_parse_floats(args, 2))
    a, b, theta = _parse_floats(args, 3)
    return MatrixField.rotated_diagonal(mesh, a, b, theta)


def build_potential(cfg: ScenarioConfig, mesh: Mesh) -> np.ndarray:
    desc = cfg["operator.V"]
    head, _, args = desc.partition(":")
    if head == "zero":
        return np.zeros(mesh.n_cells)
    if head == "constant":
        (c,) = _parse_floats(args, 1)
        return np.full(mesh.n_cells, c)
    r = np.linalg.norm(np.atleast_2d(mesh.cell_mid.T).T, axis=1) \
        if mesh.kind == "tensor2d" else mesh.cell_mid[:, 0]
    if head == "power":
        c, s = _parse_floats(args, 2)
        return c * r ** s
    r0, r1, depth = _parse_floats(args, 3)
    return np.where((r > r0) & (r < r1), depth, 0.0)


def build_spec(cfg: ScenarioConfig) -> ProblemSpec:
    mesh = build_mesh(cfg)
    return ProblemSpec(p=cfg["operator.p"],
                       n_dim=mesh.dim if mesh.kind == "tensor2d"
                       else cfg["mesh.n"],
                       mesh=mesh, A=build_matrix(cfg, mesh),
                       V=build_potential(cfg, mesh))


def _density(cfg: ScenarioConfig, mesh: Mesh) -> ScalarField:
    return mollified_delta(mesh, center=cfg["density.center"],
                           radius=cfg["density.radius"],
                           mass=cfg["density.mass"])


def _solve_options(cfg: ScenarioConfig) -> SolveOptions:
    return SolveOptions(max_iters=80,
                        tol_residual=cfg["tolerances.solver"])


def _output_dir(cfg: ScenarioConfig, config_path) -> str:
    root = os.environ.get("HARDYLAB_OUTPUT_ROOT", cfg["output.dir"])
    stem = os.path.splitext(os.path.basename(str(config_path)))[0]
    return os.path.join(root, f"{stem}-{cfg.config_hash}")


def _normalized_green(cfg, spec, opts):
    """Green potential rescaled so the transform f(G) tops out at 2,
    matching the normalization inf_K G >= 1 used by the cutoff analysis."""
    phi = _density(cfg, spec.mesh)
    Gp = green_potential(spec, phi, levels=cfg["green.levels"],
                         opts=opts, exhaust_K=cfg["green.exhaust_k"])
    p = spec.p
    scale = 2.0 ** (p / (p - 1.0)) / Gp.G.values.max()
    G_scaled = ScalarField(spec.mesh, Gp.G.values * scale)
    from .green import GreenPotential
    Gp_scaled = GreenPotential(G=G_scaled, density=phi,
                               exhaustion_trace=Gp.exhaustion_trace,
                               spec=spec)
    return Gp, Gp_scaled


def run(cfg: ScenarioConfig, config_path="scenario") -> RunManifest:
    """Execute the configured pipeline and persist artifacts; the manifest
    is written last as the atomic completion marker."""
    outdir = _output_dir(cfg, config_path)
    os.makedirs(outdir, exist_ok=True)
    manifest = RunManifest(config_hash=cfg.config_hash,
                           version=__version__,
                           pipeline=cfg["pipeline"],
                           started=_utc_now())
    arts = manifest.artifacts

    def emit(name, writer):
        path = os.path.join(outdir, name)
        writer(path)
        arts.append(path)

    try:
        exit_code = _run_pipeline(cfg, emit)
        manifest.status = "complete"
    except ConfigError:
        raise
    except (MeshError, OperatorError, SolverError, GreenError,
            CriticalitySuspected, HardyError) as exc:
        diag = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, CriticalitySuspected):
            diag["exhaustion_trace"] = exc.trace
        emit("diagnostic.json", lambda p: write_json(diag, p))
        manifest.status = "failed"
        exit_code = EXIT_CONSTRUCTION
    manifest.finished = _utc_now()
    manifest.exit_code = exit_code
    path = os.path.join(outdir, "manifest.json")
    write_json(manifest.to_dict(), path)
    manifest.artifacts = arts + [path]
    return manifest


def _run_pipeline(cfg, emit) -> int:
    spec = build_spec(cfg)
    opts = _solve_options(cfg)
    pipeline = cfg["pipeline"]

    if pipeline == "solve":
        phi = _density(cfg, spec.mesh)
        res = dirichlet_solve(spec, phi, 0.0, opts)
        emit("solution.csv", lambda p: field_to_csv(res.u, p))
        emit("solve_diagnostics.json", lambda p: write_json(
            {"residual_norm": res.residual_norm,
             "iterations": res.iterations,
             "converged": res.converged,
             "trace": res.diagnostics}, p))
        return EXIT_PASS if res.converged else EXIT_CONSTRUCTION

    if pipeline == "green":
        phi = _density(cfg, spec.mesh)
        Gp = green_potential(spec, phi, levels=cfg["green.levels"],
                             opts=opts, exhaust_K=cfg["green.exhaust_k"])
        chk = check_assumptions(spec, Gp)
        emit("green.csv", lambda p: field_to_csv(Gp.G, p))
        emit("density.csv", lambda p: field_to_csv(phi, p))
        emit("exhaustion_trace.json",
             lambda p: write_json(Gp.exhaustion_trace, p))
        emit("assumptions.json", lambda p: write_json(
            {"decay_at_infinity": chk.decay_at_infinity,
             "decay_trend": chk.decay_trend,
             "integral_VG": chk.integral_VG,
             "integral_absVG": chk.integral_absVG}, p))
        return EXIT_PASS

    if pipeline == "weight":
        phi = _density(cfg, spec.mesh)
        spec_w, W = optimal_pair(spec, phi, levels=cfg["green.levels"],
                                 opts=opts,
                                 exhaust_K=cfg["green.exhaust_k"])
        emit("weight.csv", lambda p: field_to_csv(W.W, p))
        emit("ground_state.csv", lambda p: field_to_csv(W.ground_state, p))
        meta = W.to_meta()
        meta["c_p"] = c_p(spec.p)
        emit("weight_meta.json", lambda p: write_json(meta, p))
        return EXIT_PASS if W.hypotheses_ok else EXIT_CHECK_FAILED

    # verification pipelines
    which = CHECK_NAMES if pipeline == "verify_all" \
        else (pipeline.split(":", 1)[1],)
    reports = _run_checks(cfg, spec, opts, which, emit)
    emit("reports.json", lambda p: write_json(
        [r.to_dict() for r in reports], p))
    emit("reports.txt", lambda p: open(p, "w").write(
        render_report_text(reports)))
    return EXIT_PASS if all(r.passed for r in reports) \
        else EXIT_CHECK_FAILED


def _run_checks(cfg, spec, opts, which, emit):
    p = spec.p
    seed = cfg["seed"] if cfg["seed"] is not None else 0
    # keep family supports clear of the outer truncation zone, where the
    # exhaustion-built Green potential collapses to the boundary datum and
    # its weight is not resolved on a graded mesh
    margin = 0.15 if spec.mesh.kind == "radial" else 0.05
    fam = TestFunctionFamily(kind=cfg["family.kind"],
                             count=cfg["family.count"], seed=seed,
                             support_margin=margin)
    need_green = {"hardy_margin", "null_sequence", "null_criticality",
                  "coarea_flux", "simp_equivalence"}
    reports = []
    spec_w = W = Gp_scaled = None
    if need_green & set(which):
        Gp, Gp_scaled = _normalized_green(cfg, spec, opts)
        spec_w, W = optimal_pair(spec, _density(cfg, spec.mesh),
                                 levels=cfg["green.levels"], opts=opts,
                                 exhaust_K=cfg["green.exhaust_k"])
        emit("green.csv", lambda pth: field_to_csv(Gp.G, pth))
        emit("weight.csv", lambda pth: field_to_csv(W.W, pth))

    for name in which:
        if name == "hardy_margin":
            rep = hardy_margin(spec_w, W, fam,
                               tol=cfg["tolerances.margin"])
        elif name == "null_sequence":
            spec_weighted = spec_w.with_potential(
                spec_w.V - W.cell_values())
            rep = null_sequence_decay(spec_weighted, Gp_scaled.G,
                                      [4, 8, 16, 32], p)
            emit("null_sequence.csv", lambda pth, r=rep: table_to_csv(
                r.artifacts, pth,
                columns=["k", "Q_uk", "X_k", "Y_k", "band_mass"]))
        elif name == "null_criticality":
            W_scaled = weight_from_green(spec_w, Gp_scaled)
            rep = null_criticality_growth(
                W_scaled, [3e-1, 1e-1, 3e-2, 1e-2], G=Gp_scaled.G)
            emit("null_criticality.csv", lambda pth, r=rep: table_to_csv(
                r.artifacts, pth, columns=["tau", "I", "ratio"]))
        elif name == "coarea_flux":
            gvals = Gp_scaled.G.values
            if spec.mesh.kind == "radial":
                # probe levels at radii between the density support and the
                # start of the outer truncation zone
                r = spec.mesh.coordinates()[:, 0]
                r_lo = 4.0 * (cfg["density.center"] + cfg["density.radius"])
                r_hi = 1e-4 * cfg["mesh.r_max"]
                probes = np.geomspace(r_lo, r_hi, 6)
                ts = list(np.interp(probes, r, gvals))
            else:
                pos = gvals[W.closed_form_region & (gvals > 0)]
                ts = list(np.geomspace(np.quantile(pos, 0.25),
                                       np.quantile(pos, 0.75), 6))
            rep = coarea_flux(Gp_scaled.G, spec.A, p, ts)
            emit("coarea_flux.csv", lambda pth, r=rep: table_to_csv(
                r.artifacts, pth, columns=["t", "flux", "dropped"]))
        elif name == "chain_rule":
            coords = spec.mesh.coordinates()
            scale = np.abs(coords).max()
            u = ScalarField(spec.mesh, 1.0 + (np.linalg.norm(
                coords, axis=1) / scale) ** 2)
            rep = chain_rule_residual(spec, u,
                                      f_choice=("power", (p - 1.0) / p))
        elif name == "simp_equivalence":
            rep = simp_equivalence(spec_w.with_potential(
                spec_w.V - W.cell_values()), W.ground_state, fam)
        else:
            raise ConfigError([f"unknown check {name!r}"])
        reports.append(rep)
    return reports


def _utc_now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def _cmd_validate(path) -> int:
    try:
        cfg = parse_config(path)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"ok: {len(cfg.values)} keys, pipeline={cfg['pipeline']}, "
          f"hash={cfg.config_hash}")
    return EXIT_PASS


def _cmd_run(path) -> int:
    try:
        cfg = parse_config(path)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    manifest = run(cfg, config_path=path)
    print(f"pipeline {manifest.pipeline}: {manifest.status}, "
          f"exit {manifest.exit_code}")
    for art in manifest.artifacts:
        print(f"  {art}")
    return manifest.exit_code


def _cmd_report(path) -> int:
    try:
        manifest = json.load(open(path, encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read manifest: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"pipeline : {manifest.get('pipeline')}")
    print(f"status   : {manifest.get('status')} "
          f"(exit {manifest.get('exit_code')})")
    print(f"config   : {manifest.get('config_hash')}")
    print(f"version  : {manifest.get('version')}")
    print(f"started  : {manifest.get('started')}")
    print(f"finished : {manifest.get('finished')}")
    for art in manifest.get("artifacts", []):
        exists = os.path.exists(art)
        print(f"  {'ok ' if exists else 'MISSING'} {art}")
        if art.endswith("reports.txt") and exists:
            print("".join("    " + line for line in
                          open(art, encoding="utf-8").readlines()))
    return EXIT_PASS


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hardylab",
        description="Numerical laboratory for optimal Hardy weights of "
                    "quasilinear operators")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("run", "execute a scenario config"),
                            ("validate", "check a config for errors"),
                            ("report", "pretty-print a run manifest")):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("path")
    args = parser.parse_args(argv)
    if args.command == "run":
        return _cmd_run(args.path)
    if args.command == "validate":
        return _cmd_validate(args.path)
    return _cmd_report(args.path)


if __name__ == "__main__":
    sys.exit(main())
