"""Command-line front end: ``curvrod <command> --config FILE --out DIR``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 acceptance failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import os
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np
import pydantic
import scipy
from scipy.spatial.transform import Rotation

from . import __version__
from ._so3 import expm
from .acceptance import run_acceptance
from .cell_problem import (
    CellProblem,
    CellProblemError,
    Q2Form,
    q2_circular_pointwise,
    q2_closed_form_isotropic,
    refinement_ladder,
)
from .config import TOLERANCE_PROFILES, ExperimentConfig, TOMLDecodeError, load_config
from .gamma_lab import (
    RodRecovery,
    ScaledEnergyError,
    gamma_limsup_check,
    intermediate_scaling_demo,
    optimal_corrector,
    reference_frames,
    stretched_string,
    uniform_rotation_frames,
)
from .geometry import (
    ChartError,
    GeometryError,
    ReferenceGeometry,
    build_frame,
    circle_arc,
    disc_mesh,
    from_samples,
    helix,
    helix_curvature_torsion,
    line,
    read_mesh,
    rectangle_mesh,
)
from .material import (
    MaterialError,
    MaterialModel,
    QuadraticFormQ3,
    fiber_q3,
    graded_svk,
    isotropic_q3,
    q3_from_material,
    svk,
    svk_barrier,
)
from .rod_model import MeshTooCoarse, ReferenceRod, RodState, bend_state, energy, minimize, reconstruct_midfiber, twist_state
from .string_model import ReducedDensityError, UnsupportedDensity, convexified_density, string_energy

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_ACCEPTANCE = 0, 2, 3, 4
COMMANDS = ("q2", "rod-solve", "string", "gamma-check", "demo-intermediate", "verify")
NUMERICAL_ERRORS = (
    CellProblemError,
    MeshTooCoarse,
    ScaledEnergyError,
    ReducedDensityError,
    ChartError,
    np.linalg.LinAlgError,
)


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------ builders


def build_geometry(cfg: ExperimentConfig, base: Path) -> ReferenceGeometry:
    g = cfg.geometry
    twist = g.twist
    if g.curve == "line":
        curve = line(g.length, g.n)
    elif g.curve == "circle-arc":
        curve = circle_arc(g.radius, g.length, g.n)
    elif g.curve == "helix":
        curve = helix(g.radius, g.pitch, g.length, g.n)
        if g.twist_with_torsion:
            twist = helix_curvature_torsion(g.radius, g.pitch)[1]
    else:
        pts = np.loadtxt(base / g.file, delimiter=",", ndmin=2)
        curve = from_samples(pts, g.n)
    seed = None if g.seed_normal is None else tuple(g.seed_normal)
    frame = build_frame(curve, seed, twist=twist)
    return ReferenceGeometry(curve, frame, build_section(cfg, base))


def build_section(cfg: ExperimentConfig, base: Path):
    sc = cfg.section
    if sc.kind == "disc":
        return disc_mesh(sc.triangles)
    if sc.kind == "rectangle":
        return rectangle_mesh(sc.triangles, sc.width, sc.height)
    from .geometry import normalize_cross_section

    mesh, _ = normalize_cross_section(read_mesh(base / sc.file))
    return mesh


def build_material(cfg: ExperimentConfig) -> tuple[Optional[MaterialModel], QuadraticFormQ3]:
    m = cfg.material
    if m.kind == "fiber":
        return None, fiber_q3(m.mu, m.lam, m.fiber_k, m.fiber_direction)
    if m.kind == "svk":
        mat = svk(m.mu, m.lam)
        return mat, isotropic_q3(m.mu, m.lam)
    if m.kind == "svk_barrier":
        mat = svk_barrier(m.mu, m.lam, m.barrier)
        return mat, isotropic_q3(m.mu, m.lam + m.barrier)
    mat = graded_svk(m.mu, m.lam, m.grading)
    return mat, q3_from_material(mat)


def _need_density(mat: Optional[MaterialModel], command: str) -> MaterialModel:
    if mat is None:
        raise ConfigError(f"material.kind = 'fiber' defines only Q3; '{command}' needs a stored energy density")
    return mat


def _is_isotropic_q3(q3: QuadraticFormQ3) -> bool:
    return q3.name == "isotropic"


# ------------------------------------------------------------------- output


def _fmt(x) -> str:
    return repr(float(x))


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _to_json(x):
    if isinstance(x, dict):
        return {str(k): _to_json(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_to_json(v) for v in x]
    if isinstance(x, np.ndarray):
        return _to_json(x.tolist())
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


def write_json(path: Path, data) -> None:
    with open(path, "w") as fh:
        json.dump(_to_json(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _manifest(args, command, sha, status, outputs, results=None) -> dict:
    return {
        "command": command,
        "config": None if args.config is None else str(args.config),
        "config_sha256": sha,
        "seed": args.seed,
        "threads": args.threads,
        "tolerance_profile": args.tolerance_profile,
        "tolerances": TOLERANCE_PROFILES[args.tolerance_profile],
        "versions": {
            "curvrod": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pydantic": pydantic.__version__,
        },
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "status": status,
        "outputs": sorted(outputs),
        "results": results or {},
    }


# ----------------------------------------------------------------- commands


def _q2_station(q3, mesh, R0, s):
    cp = CellProblem(q3, mesh, R0, s)
    Q = cp.q2_matrix()
    g_norms = [float(np.linalg.norm(cp.solve(e).g)) for e in np.eye(3)]
    return Q, g_norms


def cmd_q2(cfg, base, out, args, tol) -> tuple[int, dict]:
    geom = build_geometry(cfg, base)
    _, q3 = build_material(cfg)
    stations = [float(s) for s in cfg.q2.stations]
    if any(s < 0 or s > geom.length for s in stations):
        raise ConfigError("q2.stations must lie in [0, geometry.length]")
    R0s, _ = geom.frames(np.array(stations))
    meta: dict = {"method": cfg.q2.method, "triangles": geom.section.n_triangles, "stations": stations}
    if cfg.q2.method == "fem":
        with ThreadPoolExecutor(max_workers=max(1, args.threads)) as ex:
            res = list(ex.map(lambda k: _q2_station(q3, geom.section, R0s[k], stations[k]), range(len(stations))))
        Qs = np.array([r[0] for r in res])
        meta["g_norms"] = [r[1] for r in res]
    elif cfg.q2.method == "pointwise":
        if cfg.section.kind != "disc" or not q3.homogeneous:
            raise ConfigError("q2.method = 'pointwise' needs a disc section and a homogeneous material")
        Qs = np.array([q2_circular_pointwise(s, q3, R0s[k]).Q[0] for k, s in enumerate(stations)])
    else:
        if not _is_isotropic_q3(q3):
            raise ConfigError("q2.method = 'closed-form' needs an isotropic svk material")
        Q = q2_closed_form_isotropic(cfg.material.mu, cfg.material.lam).Q[0]
        Qs = np.array([Q for _ in stations])
    if cfg.q2.ladder:
        if cfg.section.kind != "disc":
            raise ConfigError("q2.ladder is only supported for disc sections")
        lad = refinement_ladder(q3, cfg.q2.ladder, disc_mesh, R0s[0], stations[0], args.threads)
        meta["ladder"] = {"triangles": lad["triangles"], "Q": lad["Q"], "extrapolated": lad["extrapolated"]}
    if _is_isotropic_q3(q3) and cfg.section.kind == "disc":
        cf = q2_closed_form_isotropic(cfg.material.mu, cfg.material.lam).Q[0]
        rel = np.abs(np.diag(Qs[0]) - np.diag(cf)) / np.diag(cf)
        meta["closed_form"] = {
            "diag": np.diag(cf),
            "rel_diff": rel,
            "within_tolerance": bool(rel.max() <= tol["q2_rel"]),
        }
    rows = [[s, Q[0, 0], Q[0, 1], Q[0, 2], Q[1, 1], Q[1, 2], Q[2, 2]] for s, Q in zip(stations, Qs)]
    write_csv(out / "q2.csv", ["s", "Q11", "Q12", "Q13", "Q22", "Q23", "Q33"], rows)
    write_json(out / "q2.json", meta)
    return EXIT_OK, {"files": ["q2.csv", "q2.json"], "Q_first_station": Qs[0]}


def _rod_q2(cfg, geom, q3) -> Q2Form:
    rc = cfg.rod
    if rc.q2_source == "explicit":
        Q = np.array(rc.q2_matrix, dtype=float)
        if not np.allclose(Q, Q.T) or np.linalg.eigvalsh(0.5 * (Q + Q.T)).min() < -1e-12:
            raise ConfigError("rod.q2_matrix must be symmetric positive semidefinite")
        return Q2Form.constant(Q)
    if rc.q2_source == "closed-form":
        if not _is_isotropic_q3(q3):
            raise ConfigError("rod.q2_source = 'closed-form' needs an isotropic svk material")
        return q2_closed_form_isotropic(cfg.material.mu, cfg.material.lam)
    const = q3.homogeneous and _is_isotropic_q3(q3)
    stations = np.array([0.0]) if const else np.linspace(0.0, geom.length, 9)
    R0s, _ = geom.frames(stations)
    if rc.q2_source == "pointwise":
        if cfg.section.kind != "disc" or not q3.homogeneous:
            raise ConfigError("rod.q2_source = 'pointwise' needs a disc section and a homogeneous material")
        Qs = [q2_circular_pointwise(s, q3, R0s[k]).Q[0] for k, s in enumerate(stations)]
    else:
        Qs = [CellProblem(q3, geom.section, R0s[k], s).q2_matrix() for k, s in enumerate(stations)]
    return Q2Form(stations, np.array(Qs))


def cmd_rod(cfg, base, out, args, tol) -> tuple[int, dict]:
    rc = cfg.rod
    geom = build_geometry(cfg, base)
    _, q3 = build_material(cfg)
    ref = ReferenceRod.from_frame(geom.frame, _rod_q2(cfg, geom, q3), rc.n)
    L = ref.length
    if rc.start == "reference":
        R = ref.R0.copy()
    elif rc.start == "twist":
        R = ref.R0 @ twist_state(L, rc.n, rc.turns, rc.wobble).R
    else:
        R = ref.R0 @ bend_state(L, rc.n, rc.kappa).R
    if rc.end_quaternion is not None:
        R_end = Rotation.from_quat(np.asarray(rc.end_quaternion, dtype=float)).as_matrix()
        w = Rotation.from_matrix(R[-1].T @ R_end).as_rotvec()
        R = R @ expm(np.linspace(0.0, 1.0, rc.n + 1)[:, None] * w)
    state0 = RodState.from_matrices(R, L, geom.curve.points[0])
    gtol = None if rc.gtol is None else rc.gtol
    if gtol is None:
        gtol = 1e-8 * rc.n * tol["gtol_factor"]
    res = minimize(state0, ref, rc.boundary, gtol=gtol, max_iter=rc.max_iter)
    v = reconstruct_midfiber(res.state)
    q = res.state.quats
    rows = [[s, *q[i], *v[i]] for i, s in enumerate(res.state.s)]
    write_csv(out / "rod_frames.csv", ["s", "qx", "qy", "qz", "qw", "vx", "vy", "vz"], rows)
    log = {
        "energy_initial": res.history[0],
        "energy_final": res.energy,
        "iterations": res.iterations,
        "grad_norm": res.grad_norm,
        "gtol": gtol,
        "converged": res.converged,
        "line_search_failed": res.line_search_failed,
        "history": res.history,
        "boundary": rc.boundary,
    }
    write_json(out / "rod_log.json", log)
    if res.line_search_failed:
        print("warning: line search failed; best iterate written", file=sys.stderr)
    return EXIT_OK, {"files": ["rod_frames.csv", "rod_log.json"], "energy": res.energy, "converged": res.converged}


def cmd_string(cfg, base, out, args, tol) -> tuple[int, dict]:
    sc = cfg.string
    geom = build_geometry(cfg, base)
    mat = _need_density(build_material(cfg)[0], "string")
    if not mat.homogeneous:
        raise ConfigError("the string command needs a homogeneous material")
    try:
        cvx = convexified_density(mat, 0.0, sc.r_max, sc.samples)
    except UnsupportedDensity as exc:
        raise ConfigError(str(exc)) from exc
    write_csv(out / "string_table.csv", ["r", "phi", "phi_convex"], zip(cvx.r, cvx.phi, cvx.phi_cvx))
    s = np.linspace(0.0, geom.length, sc.n + 1)
    v = sc.stretch * geom.curve.evaluate(s)[0]
    E = string_energy(v, cvx, geom.length)
    data = {"stretch": sc.stretch, "energy": E, "w0_convex_at_stretch": float(cvx.profile(sc.stretch))}
    write_json(out / "string.json", data)
    return EXIT_OK, {"files": ["string_table.csv", "string.json"], "energy": E}


def cmd_gamma(cfg, base, out, args, tol) -> tuple[int, dict]:
    gc = cfg.gamma
    geom = build_geometry(cfg, base)
    mat = _need_density(build_material(cfg)[0], "gamma-check")
    _, q3 = build_material(cfg)
    extra: dict = {"deformation": gc.deformation}
    if gc.deformation == "reference":
        deform = RodRecovery(reference_frames(geom))
    elif gc.deformation == "string-stretch":
        deform = stretched_string(geom, gc.stretch)
    else:
        R_start = geom.frames(np.array([0.0]))[0][0]
        frames = uniform_rotation_frames(gc.rate, R_start)
        cor = None
        if gc.correctors == "optimal":
            cor = optimal_corrector(frames, geom, q3, np.linspace(0.0, geom.length, gc.stations))
        deform = RodRecovery(frames, cor)
    res = gamma_limsup_check(deform, geom, mat, gc.h, gc.alpha, q3, args.threads, gc.n_panels)
    data = {**res.as_dict(), **extra}
    write_csv(out / "gamma.csv", ["h", "E"], zip(res.h, res.E))
    write_json(out / "gamma.json", data)
    return EXIT_OK, {"files": ["gamma.csv", "gamma.json"], "rate": res.rate, "extrapolated": res.extrapolated}


def cmd_intermediate(cfg, base, out, args, tol) -> tuple[int, dict]:
    ic = cfg.intermediate
    geom = build_geometry(cfg, base)
    mat = _need_density(build_material(cfg)[0], "demo-intermediate")
    axis = np.asarray(ic.axis, dtype=float)
    if np.linalg.norm(axis) == 0:
        raise ConfigError("intermediate.axis must be nonzero")
    R2 = expm(ic.angle * axis / np.linalg.norm(axis))
    try:
        res = intermediate_scaling_demo(ic.alpha, ic.beta, np.eye(3), R2, ic.s0, geom, mat, ic.h, args.threads)
    except ValueError as exc:
        if isinstance(exc, NUMERICAL_ERRORS):
            raise
        raise ConfigError(str(exc)) from exc
    write_csv(out / "intermediate.csv", ["h", "E"], zip(res.h, res.E))
    write_json(out / "intermediate.json", res.as_dict())
    return EXIT_OK, {"files": ["intermediate.csv", "intermediate.json"], "rate": res.rate}


def cmd_verify(cfg, base, out, args, tol) -> tuple[int, dict]:
    results = run_acceptance(seed=args.seed, threads=args.threads)
    for r in results:
        print(r.line())
    n_pass = sum(r.passed for r in results)
    print(f"{n_pass}/{len(results)} criteria passed")
    write_json(out / "acceptance.json", {"criteria": [r.as_dict() for r in results]})
    status = EXIT_OK if n_pass == len(results) else EXIT_ACCEPTANCE
    return status, {"files": ["acceptance.json"], "passed": n_pass, "total": len(results)}


HANDLERS = {
    "q2": cmd_q2,
    "rod-solve": cmd_rod,
    "string": cmd_string,
    "gamma-check": cmd_gamma,
    "demo-intermediate": cmd_intermediate,
    "verify": cmd_verify,
}


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="TOML experiment file")
    common.add_argument("--out", type=Path, default=None, help="output directory (env CURVROD_OUT)")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    common.add_argument("--tolerance-profile", choices=sorted(TOLERANCE_PROFILES), default="default")
    p = argparse.ArgumentParser(prog="curvrod", description="Thin curved rod experiments")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for c in COMMANDS:
        sub.add_parser(c, parents=[common])
    return p


def _fail(out: Optional[Path], kind: str, exc: BaseException, args, sha) -> None:
    msg = str(exc)
    print(f"error ({kind}): {msg}", file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            write_json(out / "error.json", {"kind": kind, "type": type(exc).__name__, "message": msg})
            write_json(out / "manifest.json", _manifest(args, args.command, sha, kind, ["error.json"]))
        except OSError:
            pass


def _config_error_message(exc: pydantic.ValidationError) -> str:
    parts = []
    for e in exc.errors():
        loc = ".".join(str(x) for x in e["loc"])
        parts.append(f"{loc}: {e['msg']}")
    return "; ".join(parts)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = args.out or (Path(os.environ["CURVROD_OUT"]) if os.environ.get("CURVROD_OUT") else Path("out"))
    sha = None
    try:
        if args.config is None:
            if args.command != "verify":
                raise ConfigError("--config is required for this command")
            cfg, base = ExperimentConfig(), Path.cwd()
        else:
            cfg, sha, base = load_config(args.config)
        if args.seed is None:
            args.seed = cfg.seed
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        out.mkdir(parents=True, exist_ok=True)
    except pydantic.ValidationError as exc:
        _fail(out, "config", ConfigError(_config_error_message(exc)), args, sha)
        return EXIT_CONFIG
    except (ConfigError, TOMLDecodeError, OSError) as exc:
        _fail(out, "config", exc, args, sha)
        return EXIT_CONFIG

    tol = TOLERANCE_PROFILES[args.tolerance_profile]
    try:
        status, results = HANDLERS[args.command](cfg, base, out, args, tol)
    except NUMERICAL_ERRORS as exc:
        _fail(out, "numerical", exc, args, sha)
        return EXIT_NUMERICAL
    except (ConfigError, GeometryError, MaterialError, OSError) as exc:
        _fail(out, "config", exc, args, sha)
        return EXIT_CONFIG
    files = list(results.pop("files", [])) + ["manifest.json"]
    label = {EXIT_OK: "ok", EXIT_ACCEPTANCE: "acceptance-failure"}.get(status, "error")
    write_json(out / "manifest.json", _manifest(args, args.command, sha, label, files, results))
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
