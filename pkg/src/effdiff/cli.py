"""Config-driven command-line front end.

Reads a JSON config with a versioned schema, resolves defaults (mode count
per epsilon, mesh sizes, profile overrides), optionally validates without
running, and emits the documented CSV/JSON result files atomically.

Exit codes: 0 success, 2 config file missing, 3 schema violation,
4 mesh-size cap exceeded, 1 any other runtime failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .coefficients import SymMat, constant_field, periodic_smooth_field, \
    scale_epsilon
from .experiments import DEFAULT_COARSE_H, coarse_mesh_n, \
    coefficient_noise_study, fine_mesh_n, identify_checkerboard, \
    identify_periodic, measurement_noise_study, one_d_profile, \
    periodic_reference, sweep, write_csv, write_json
from .homogenization import checkerboard_exact, homogenized_matrix
from .identify import me_ms_identity_check
from .mesh import build_periodic_cell_mesh, build_unit_square_mesh
from .modes import choose_p

SCHEMA_VERSION = 1
OUTPUT_ENV_VAR = "EFFDIFF_OUT_DIR"
DESK_DOF_CAP = 4_000_000

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG_MISSING = 2
EXIT_SCHEMA = 3
EXIT_DOF_CAP = 4

EXPERIMENTS = ("homogenize", "identify", "sweep", "noise_measurement",
               "noise_coefficient", "one_d_profile", "me_ms_check")
COEFFICIENTS = ("periodic_smooth", "checkerboard", "constant")
PROFILES = ("desk", "full")


class SchemaError(ValueError):
    pass


@dataclass
class RunConfig:
    experiment: str
    coefficient: str = "periodic_smooth"
    constant_entries: SymMat | None = None
    epsilons: list = field(default_factory=lambda: [0.2, 0.1, 0.05])
    strategies: list = field(default_factory=lambda: ["ME"])
    p: int | str = "auto"
    q: int = 11
    r: float | None = None
    coarse_h: float = DEFAULT_COARSE_H
    m1: int | None = None
    m2: int | None = None
    sigmas: list = field(default_factory=lambda: [0.01, 0.05, 0.1])
    sigma: float = 2.0
    base_seed: int = 0
    cell_n: int = 512
    profile: str = "desk"
    out_csv: str = "results.csv"
    out_json: str = "results.json"
    workers: int = 1
    grid: list = field(default_factory=lambda: [1.0, 3.0, 2001])

    def resolved_r(self) -> float:
        if self.r is not None:
            return self.r
        if self.coefficient == "checkerboard":
            return 20.0 if self.profile == "full" else 10.0
        return 40.0 if self.profile == "full" else 20.0

    def resolved_m1(self) -> int:
        if self.m1 is not None:
            return self.m1
        return 40 if self.profile == "full" else 10

    def resolved_m2(self) -> int:
        if self.m2 is not None:
            return self.m2
        return 40 if self.profile == "full" else 10

    def resolved_p(self, eps: float) -> int:
        return choose_p(eps) if self.p == "auto" else int(self.p)


def _expect(cond: bool, message: str) -> None:
    if not cond:
        raise SchemaError(message)


def load_config(path: str) -> RunConfig:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"config is not valid JSON: {exc}") from exc
    _expect(isinstance(doc, dict), "config root must be an object")
    _expect(doc.get("schema_version") == SCHEMA_VERSION,
            f"schema_version must be {SCHEMA_VERSION}, "
            f"got {doc.get('schema_version')!r}")
    _expect("experiment" in doc, "missing required key 'experiment'")
    _expect(doc["experiment"] in EXPERIMENTS,
            f"unknown experiment {doc['experiment']!r}; "
            f"expected one of {EXPERIMENTS}")

    cfg = RunConfig(experiment=doc["experiment"])
    coeff = doc.get("coefficient", "periodic_smooth")
    if isinstance(coeff, dict):
        _expect(coeff.get("kind") == "constant",
                "structured coefficient spec must have kind 'constant'")
        for k in ("a11", "a12", "a22"):
            _expect(isinstance(coeff.get(k), (int, float)),
                    f"constant coefficient needs numeric entry {k!r}")
        cfg.coefficient = "constant"
        cfg.constant_entries = SymMat(float(coeff["a11"]),
                                      float(coeff["a12"]),
                                      float(coeff["a22"]))
    else:
        _expect(coeff in COEFFICIENTS,
                f"unknown coefficient {coeff!r}; expected {COEFFICIENTS}")
        cfg.coefficient = coeff

    if "epsilons" in doc:
        eps = doc["epsilons"]
        _expect(isinstance(eps, list)
                and all(isinstance(e, (int, float)) and e > 0 for e in eps),
                "'epsilons' must be a list of positive numbers")
        cfg.epsilons = [float(e) for e in eps]
    if "strategies" in doc:
        strat = doc["strategies"]
        _expect(isinstance(strat, list) and strat,
                "'strategies' must be a non-empty list")
        cfg.strategies = strat
    if "P" in doc:
        _expect(doc["P"] == "auto"
                or (isinstance(doc["P"], int) and doc["P"] >= 1),
                "'P' must be 'auto' or a positive integer")
        cfg.p = doc["P"]
    if "Q" in doc:
        _expect(isinstance(doc["Q"], int) and doc["Q"] >= 1,
                "'Q' must be a positive integer")
        cfg.q = doc["Q"]
    for key, attr, kindcheck in (
            ("r", "r", lambda v: isinstance(v, (int, float)) and v > 0),
            ("coarse_H", "coarse_h",
             lambda v: isinstance(v, (int, float)) and v > 0),
            ("M1", "m1", lambda v: isinstance(v, int) and v >= 1),
            ("M2", "m2", lambda v: isinstance(v, int) and v >= 2),
            ("base_seed", "base_seed", lambda v: isinstance(v, int)),
            ("cell_n", "cell_n", lambda v: isinstance(v, int) and v >= 2),
            ("sigma", "sigma",
             lambda v: isinstance(v, (int, float)) and v >= 0)):
        if key in doc:
            _expect(kindcheck(doc[key]), f"invalid value for {key!r}")
            setattr(cfg, attr, doc[key])
    if "sigmas" in doc:
        _expect(isinstance(doc["sigmas"], list)
                and all(isinstance(s, (int, float)) and s >= 0
                        for s in doc["sigmas"]),
                "'sigmas' must be a list of nonnegative numbers")
        cfg.sigmas = [float(s) for s in doc["sigmas"]]
    if "grid" in doc:
        g = doc["grid"]
        _expect(isinstance(g, list) and len(g) == 3 and g[0] > 0
                and g[1] > g[0] and int(g[2]) >= 2,
                "'grid' must be [min, max, count] with 0 < min < max")
        cfg.grid = [float(g[0]), float(g[1]), int(g[2])]
    if "profile" in doc:
        _expect(doc["profile"] in PROFILES,
                f"profile must be one of {PROFILES}")
        cfg.profile = doc["profile"]
    out = doc.get("output", {})
    _expect(isinstance(out, dict), "'output' must be an object")
    cfg.out_csv = out.get("csv", cfg.out_csv)
    cfg.out_json = out.get("json", cfg.out_json)

    for eps in cfg.epsilons:
        _expect(cfg.q >= cfg.resolved_p(eps),
                f"Q = {cfg.q} < P = {cfg.resolved_p(eps)} at eps = {eps}")
    return cfg


def resolve_report(cfg: RunConfig) -> list[str]:
    """Human-readable resolution of defaults; used by --validate."""
    lines = [f"experiment: {cfg.experiment}",
             f"coefficient: {cfg.coefficient}",
             f"profile: {cfg.profile}",
             f"base_seed: {cfg.base_seed}"]
    if cfg.experiment in ("identify", "sweep", "noise_measurement",
                          "noise_coefficient"):
        r = cfg.resolved_r()
        lines.append(f"r: {r}")
        lines.append(f"coarse_H: {cfg.coarse_h} "
                     f"(coarse n = {coarse_mesh_n(cfg.coarse_h)})")
        for eps in cfg.epsilons:
            p = cfg.resolved_p(eps)
            align = math.ceil(1.0 / eps) \
                if cfg.coefficient == "checkerboard" else None
            n = fine_mesh_n(eps, r, align_cells=align)
            lines.append(f"eps = {eps}: P = {p}, Q = {cfg.q}, "
                         f"fine n = {n} ({(n + 1) ** 2} nodes)")
        if cfg.coefficient == "checkerboard" \
                or cfg.experiment == "noise_coefficient":
            lines.append(f"M1 = {cfg.resolved_m1()}, "
                         f"M2 = {cfg.resolved_m2()}")
    if cfg.experiment == "homogenize":
        lines.append(f"cell_n: {cfg.cell_n}")
    if cfg.experiment == "one_d_profile":
        lines.append(f"grid: {cfg.grid}")
    return lines


def check_dof_cap(cfg: RunConfig) -> None:
    if cfg.profile != "desk":
        return
    if cfg.experiment in ("identify", "sweep", "noise_measurement",
                          "noise_coefficient", "me_ms_check"):
        r = cfg.resolved_r()
        for eps in cfg.epsilons:
            align = math.ceil(1.0 / eps) \
                if cfg.coefficient == "checkerboard" else None
            n = fine_mesh_n(eps, r, align_cells=align)
            dofs = (n + 1) ** 2
            if dofs > DESK_DOF_CAP:
                raise _DofCapError(
                    f"desk profile caps fine-mesh nodes at {DESK_DOF_CAP}; "
                    f"eps = {eps}, r = {r} needs {dofs}. Reduce r or use "
                    f"--profile full.")


class _DofCapError(ValueError):
    pass


def run_experiment(cfg: RunConfig) -> list[dict]:
    if cfg.experiment == "homogenize":
        t0 = time.perf_counter()
        if cfg.coefficient == "constant":
            m = cfg.constant_entries or SymMat.identity()
            cell = build_periodic_cell_mesh(min(cfg.cell_n, 64))
            a = homogenized_matrix(cell, constant_field(m)).matrix
        elif cfg.coefficient == "checkerboard":
            a = checkerboard_exact().matrix
        else:
            a = periodic_reference(cfg.cell_n)
        return [{"experiment": "homogenize", "strategy": "A_star",
                 "epsilon": None, "P": None, "Q": None, "r": None,
                 "seed": None, "a11": a.a11, "a12": a.a12, "a22": a.a22,
                 "err_star": None, "err_eps_q": None, "psi_final": None,
                 "iters": None, "cell_n": cfg.cell_n,
                 "wall_ms": 1000.0 * (time.perf_counter() - t0)}]

    if cfg.experiment in ("identify", "sweep"):
        p = None if cfg.p == "auto" else int(cfg.p)
        return sweep(cfg.epsilons, strategies=cfg.strategies,
                     coefficient=cfg.coefficient, r=cfg.resolved_r(), p=p,
                     q=cfg.q, coarse_h=cfg.coarse_h, m1=cfg.resolved_m1(),
                     base_seed=cfg.base_seed, workers=cfg.workers)

    if cfg.experiment == "noise_measurement":
        eps = cfg.epsilons[0]
        return measurement_noise_study(
            eps=eps, r=cfg.resolved_r(), p=cfg.resolved_p(eps),
            sigmas=cfg.sigmas, draws=cfg.resolved_m2() * 4,
            base_seed=cfg.base_seed, coarse_h=cfg.coarse_h)

    if cfg.experiment == "noise_coefficient":
        eps = cfg.epsilons[0]
        return coefficient_noise_study(
            eps=eps, r=cfg.resolved_r(), p=cfg.resolved_p(eps),
            sigma=cfg.sigma, m1=cfg.resolved_m1(),
            base_seed=cfg.base_seed, coarse_h=cfg.coarse_h)

    if cfg.experiment == "one_d_profile":
        lo, hi, count = cfg.grid
        table = one_d_profile(lambda x: 2.0 + np.cos(2.0 * np.pi * x),
                              cfg.epsilons[0] if cfg.epsilons else 1e-3,
                              np.linspace(lo, hi, count))
        # scalar candidate stored in a11, objective value in psi_final
        return [{"experiment": "one_d_profile", "strategy": "ME",
                 "epsilon": cfg.epsilons[0] if cfg.epsilons else 1e-3,
                 "P": 1, "Q": None, "r": None, "seed": None,
                 "a11": float(ab), "a12": None, "a22": None,
                 "err_star": None, "err_eps_q": None,
                 "psi_final": float(psi), "iters": None, "wall_ms": 0.0}
                for ab, psi in table]

    if cfg.experiment == "me_ms_check":
        eps = cfg.epsilons[0]
        n = min(fine_mesh_n(eps, cfg.resolved_r()), 128)
        mesh = build_unit_square_mesh(n)
        coeff = scale_epsilon(periodic_smooth_field(), eps)
        rng = np.random.default_rng(cfg.base_seed)
        records = []
        for k in range(3):
            abar = SymMat(15.0 + 5.0 * rng.random(),
                          2.0 * rng.random() - 1.0,
                          10.0 + 4.0 * rng.random())
            t0 = time.perf_counter()
            me, ms = me_ms_identity_check(coeff, abar, mesh)
            records.append({
                "experiment": "me_ms_check", "strategy": "ME",
                "epsilon": eps, "P": None, "Q": None, "r": cfg.resolved_r(),
                "seed": cfg.base_seed + k, "a11": abar.a11,
                "a12": abar.a12, "a22": abar.a22, "err_star": None,
                "err_eps_q": None, "psi_final": me, "iters": None,
                "psi_me": me, "psi_ms": ms, "ratio": ms / me,
                "wall_ms": 1000.0 * (time.perf_counter() - t0)})
        return records

    raise SchemaError(f"unknown experiment {cfg.experiment!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="effdiff",
        description="Identify constant effective diffusion matrices from "
                    "coarse energy measurements.")
    parser.add_argument("config", help="path to a JSON run configuration")
    parser.add_argument("--validate", action="store_true",
                        help="resolve and print defaults without running")
    parser.add_argument("--profile", choices=PROFILES,
                        help="override the config profile")
    parser.add_argument("--workers", type=int, default=0,
                        help="worker threads (0 = sequential)")
    parser.add_argument("--seed", type=int,
                        help="override the config base seed")
    parser.add_argument("--out",
                        help=f"output directory (also {OUTPUT_ENV_VAR})")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    if not os.path.exists(args.config):
        print(f"error: config not found: {args.config}", file=sys.stderr)
        return EXIT_CONFIG_MISSING
    try:
        cfg = load_config(args.config)
    except SchemaError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_SCHEMA

    if args.profile:
        cfg.profile = args.profile
    if args.seed is not None:
        cfg.base_seed = args.seed
    if args.workers:
        cfg.workers = args.workers

    try:
        check_dof_cap(cfg)
    except _DofCapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOF_CAP

    if args.validate:
        for line in resolve_report(cfg):
            print(line)
        return EXIT_OK

    out_dir = args.out or os.environ.get(OUTPUT_ENV_VAR) or "."
    os.makedirs(out_dir, exist_ok=True)

    try:
        records = run_experiment(cfg)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: run failed: {exc!r}", file=sys.stderr)
        return EXIT_RUNTIME

    csv_path = os.path.join(out_dir, cfg.out_csv)
    json_path = os.path.join(out_dir, cfg.out_json)
    with open(args.config) as f:
        config_doc = json.load(f)
    write_csv(records, csv_path)
    write_json(records, json_path, config=config_doc)
    failures = [r for r in records if "error" in r]
    print(f"wrote {len(records)} records to {csv_path} and {json_path}"
          + (f" ({len(failures)} failed)" if failures else ""))
    return EXIT_RUNTIME if failures else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
