"""Experiment drivers: error metrics, identification runs for the periodic
and random test cases, noise studies, Monte Carlo ensembles, the 1D
objective profile, and CSV/JSON emission.

Every driver returns plain record dicts with a fixed core column set so a
sweep can be serialized and replayed; randomized drivers take explicit
seeds and are exactly reproducible.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.linalg as sla

from .coefficients import CoefficientField, SymMat, mean_over_cell, \
    periodic_smooth_field, sample_checkerboard, scale_epsilon
from .homogenization import checkerboard_exact, homogenized_matrix
from .identify import CoarseModel, Measurements, NoiseSpec, OptimizerTrace, \
    apply_measurement_noise, identify, mean_measurements, \
    simulate_measurements
from .mesh import TriMesh, build_periodic_cell_mesh, build_unit_square_mesh, \
    interpolate_nodal
from .modes import ModeBasis, affine_modes, choose_p, compute_r_modes, \
    modes_on_mesh
from .solver import assemble_volume_mass

CSV_COLUMNS = ["experiment", "strategy", "epsilon", "P", "Q", "r", "seed",
               "a11", "a12", "a22", "err_star", "err_eps_q", "psi_final",
               "iters", "wall_ms"]

STRATEGIES = ("ME", "MS", "MV", "A_star", "ME-affine")

DEFAULT_COARSE_H = 0.05


# ---------------------------------------------------------------------------
# mesh sizing conventions

def fine_mesh_n(eps: float, r: float, align_cells: int | None = None) -> int:
    """Subdivisions for mesh size h = eps / r, h measured as sqrt(2)/n.

    With ``align_cells`` the count is rounded up to a multiple of the
    coefficient cells per side, so piecewise-constant fields are constant
    on element interiors.
    """
    if eps <= 0.0 or r <= 0.0:
        raise ValueError(f"need eps > 0 and r > 0, got {eps}, {r}")
    n = math.ceil(math.sqrt(2.0) * r / eps)
    if align_cells:
        n = align_cells * math.ceil(n / align_cells)
    return n


def coarse_mesh_n(coarse_h: float = DEFAULT_COARSE_H) -> int:
    if coarse_h <= 0.0:
        raise ValueError(f"need coarse_h > 0, got {coarse_h}")
    return math.ceil(math.sqrt(2.0) / coarse_h)


def take_modes(basis: ModeBasis, count: int) -> ModeBasis:
    """Leading sub-family of an ordered mode basis."""
    if count > basis.count:
        raise ValueError(f"basis has {basis.count} modes, asked for {count}")
    eig = None if basis.eigenvalues is None else basis.eigenvalues[:count]
    return ModeBasis(modes=basis.modes[:count], eigenvalues=eig,
                     family=basis.family, mesh_n=basis.mesh_n)


def take_measurements(meas: Measurements, count: int) -> Measurements:
    """Restrict a measurement record to its first `count` modes."""
    cross = None if meas.cross is None else meas.cross[:count, :count]
    traces = None if meas.boundary_traces is None \
        else meas.boundary_traces[:count]
    fields = None if meas.volume_fields is None else meas.volume_fields[:count]
    return Measurements(basis=take_modes(meas.basis, count),
                        energies=meas.energies[:count], cross=cross,
                        boundary_traces=traces, volume_fields=fields,
                        mesh=meas.mesh, provenance=dict(meas.provenance))


# ---------------------------------------------------------------------------
# error metrics

@dataclass(frozen=True)
class ErrorReport:
    err_star: float
    err_eps_q: float | None
    metadata: dict


def err_star(abar: SymMat, a_star: SymMat) -> float:
    """Relative error over the three independent entries."""
    num = (abar.a11 - a_star.a11) ** 2 + (abar.a12 - a_star.a12) ** 2 \
        + (abar.a22 - a_star.a22) ** 2
    den = a_star.a11 ** 2 + a_star.a12 ** 2 + a_star.a22 ** 2
    if den == 0.0:
        raise ValueError("reference matrix is zero")
    return math.sqrt(num / den)


def err_eps_q(abar: SymMat, meas: Measurements, coarse_mesh: TriMesh,
              coarse_basis: ModeBasis | None = None) -> float:
    """Worst-case relative volume error over combinations of the Q modes.

    The ratio of volume norms is maximized by the generalized eigenproblem
    of the difference Gram against the measured-field Gram; the candidate
    solution is interpolated onto the measurement mesh.
    """
    if meas.volume_fields is None or meas.mesh is None:
        raise ValueError("operator error metric needs recorded volume fields")
    if coarse_basis is None:
        coarse_basis = modes_on_mesh(meas.basis, meas.mesh, coarse_mesh)
    coarse = CoarseModel(coarse_mesh, coarse_basis).evaluate(
        abar, need_grads=False)

    mass = assemble_volume_mass(meas.mesh)
    diffs = np.empty_like(meas.volume_fields)
    for k in range(meas.count):
        ubar = interpolate_nodal(coarse_mesh, coarse.values[k],
                                 meas.mesh.nodes)
        diffs[k] = meas.volume_fields[k] - ubar
    d = diffs @ (mass @ diffs.T)
    nmat = meas.volume_fields @ (mass @ meas.volume_fields.T)

    try:
        vals = sla.eigh(d, nmat, eigvals_only=True)
    except sla.LinAlgError:
        ridge = 1e-12 * np.trace(nmat) / meas.count
        warnings.warn(
            f"measured-field Gram numerically singular; adding ridge "
            f"{ridge:.3e}")
        vals = sla.eigh(d, nmat + ridge * np.eye(meas.count),
                        eigvals_only=True)
    return float(math.sqrt(max(vals[-1], 0.0)))


def err_eps_q_expect(abar: SymMat, eps: float, q: int, r: float,
                     m1: int, base_seed: int,
                     coarse_h: float = DEFAULT_COARSE_H) -> float:
    """Same metric with the measured fields replaced by their sample mean
    over checkerboard realizations."""
    batch, _, coarse = _checkerboard_batch(eps, q, r, m1, base_seed,
                                           keep_fields=True)
    return err_eps_q(abar, mean_measurements(batch), coarse)


# ---------------------------------------------------------------------------
# ensembles

@dataclass(frozen=True)
class EnsembleStat:
    mean: float
    ci95_low: float
    ci95_high: float
    m1: int
    m2: int
    batch_values: tuple

    def __post_init__(self):
        if not self.ci95_low <= self.mean <= self.ci95_high:
            raise ValueError("inconsistent confidence interval")


def ensemble(estimate: Callable[[Sequence[int]], float], m1: int, m2: int,
             base_seed: int, workers: int = 1) -> EnsembleStat:
    """Mean and normal-approximation 95% interval over M2 batches.

    Each batch calls `estimate` with M1 fresh seeds
    (base_seed + batch * M1 + index), so batches never share realizations.
    """
    if m2 < 2:
        raise ValueError(f"need at least 2 batches, got {m2}")
    seed_lists = [[base_seed + b * m1 + i for i in range(m1)]
                  for b in range(m2)]
    values = np.array(parallel_map(estimate, seed_lists, workers))
    mean = float(values.mean())
    half = 1.96 * float(values.std(ddof=1)) / math.sqrt(m2)
    return EnsembleStat(mean=mean, ci95_low=mean - half,
                        ci95_high=mean + half, m1=m1, m2=m2,
                        batch_values=tuple(float(v) for v in values))


def parallel_map(fn: Callable, items: Iterable, workers: int = 1) -> list:
    """Order-preserving map, optionally over a thread pool.

    Threads rather than processes: the heavy work happens inside numpy and
    the sparse factorizations, which release the interpreter lock, and
    thread workers keep closures and mesh caches shareable.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# 1D profile

def one_d_profile(a_per: Callable[[np.ndarray], np.ndarray], eps: float,
                  abar_grid: Sequence[float],
                  quad_points: int | None = None) -> np.ndarray:
    """Objective profile of the one-dimensional problem over a grid.

    With the two-point boundary datum the energy reduces to minus a
    quarter of the inverse-coefficient integral, so the mismatch is a
    quarter of the inverse-mean gap.  Returns rows (abar, value).
    """
    grid = np.asarray(abar_grid, dtype=float)
    if np.any(grid <= 0.0):
        raise ValueError("candidate grid must be positive")
    if quad_points is None:
        quad_points = max(20_000, int(math.ceil(50.0 / eps)))
    xs = (np.arange(quad_points) + 0.5) / quad_points
    vals = np.asarray(a_per(xs / eps), dtype=float)
    if np.any(vals <= 0.0):
        raise ValueError("coefficient is not coercive on the grid")
    inv_mean = float(np.mean(1.0 / vals))
    psi = 0.25 * np.abs(inv_mean - 1.0 / grid)
    return np.column_stack([grid, psi])


# ---------------------------------------------------------------------------
# identification drivers

def _strategy_objective(strategy: str) -> str:
    return {"ME": "psi_sigma", "ME-affine": "psi_sigma", "MS": "ms",
            "MV": "mv"}[strategy]


def _record(experiment: str, strategy: str, eps: float, p: int, q: int | None,
            r: float, seed: int | None, abar: SymMat, errs: float | None,
            erre: float | None, psi: float | None, iters: int | None,
            wall_ms: float, extra: dict | None = None) -> dict:
    rec = {
        "experiment": experiment, "strategy": strategy, "epsilon": eps,
        "P": p, "Q": q, "r": r, "seed": seed,
        "a11": abar.a11, "a12": abar.a12, "a22": abar.a22,
        "err_star": errs, "err_eps_q": erre, "psi_final": psi,
        "iters": iters, "wall_ms": wall_ms,
    }
    if extra:
        rec.update(extra)
    return rec


def periodic_reference(cell_n: int = 512) -> SymMat:
    cell = build_periodic_cell_mesh(cell_n)
    return homogenized_matrix(cell, periodic_smooth_field()).matrix


def identify_periodic(eps: float, r: float = 20.0, p: int | None = None,
                      q: int = 11, coarse_h: float = DEFAULT_COARSE_H,
                      strategy: str = "ME", a_star: SymMat | None = None,
                      compute_err_eps_q: bool = True,
                      meas_cache: dict | None = None) -> dict:
    """One identification run on the periodic test field.

    Passing a dict as ``meas_cache`` reuses the fine-mesh measurements
    across strategies for the same (eps, r, q).
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if p is None:
        p = choose_p(eps)
    if q < p:
        raise ValueError(f"need Q >= P, got Q={q}, P={p}")
    t0 = time.perf_counter()
    field = scale_epsilon(periodic_smooth_field(), eps)
    key = (eps, r, q)
    cached = meas_cache.get(key) if meas_cache is not None else None
    if cached is None:
        fine = build_unit_square_mesh(fine_mesh_n(eps, r))
        basis_q = compute_r_modes(fine, q)
        meas_q = simulate_measurements(fine, field, basis_q,
                                       provenance={"field": "periodic"})
        cached = (fine, meas_q)
        if meas_cache is not None:
            meas_cache[key] = cached
    fine, meas_q = cached
    coarse = build_unit_square_mesh(coarse_mesh_n(coarse_h))
    if a_star is None:
        a_star = periodic_reference()

    if strategy == "A_star":
        abar, psi, iters = a_star, None, None
    else:
        if strategy == "ME-affine":
            basis_p = affine_modes(fine)
            meas_p = simulate_measurements(fine, field, basis_p,
                                           keep_fields=False)
        else:
            meas_p = take_measurements(meas_q, p)
        init = mean_over_cell(periodic_smooth_field())
        trace = identify(meas_p, coarse, init,
                         objective=_strategy_objective(strategy))
        abar, psi = trace.final, trace.objective_values[-1]
        iters = trace.iterations
    erre = err_eps_q(abar, meas_q, coarse) if compute_err_eps_q else None
    wall = 1000.0 * (time.perf_counter() - t0)
    return _record("identify_periodic", strategy, eps, p, q, r, None, abar,
                   err_star(abar, a_star), erre, psi, iters, wall,
                   extra={"energies": [float(e) for e in meas_q.energies]})


def _checkerboard_batch(eps: float, q: int, r: float, m1: int,
                        base_seed: int, keep_fields: bool):
    """Measurements for M1 checkerboard realizations on a shared mesh."""
    cells = math.ceil(1.0 / eps)
    fine = build_unit_square_mesh(fine_mesh_n(eps, r, align_cells=cells))
    basis_q = compute_r_modes(fine, q)
    coarse = build_unit_square_mesh(coarse_mesh_n())
    batch = []
    for i in range(m1):
        seed = base_seed + i
        field = sample_checkerboard(seed, eps)
        batch.append(simulate_measurements(
            fine, field, basis_q, keep_fields=keep_fields,
            provenance={"field": "checkerboard", "seed": seed}))
    return batch, fine, coarse


def identify_checkerboard(eps: float, r: float = 10.0, p: int = 3,
                          q: int = 11, m1: int = 10, base_seed: int = 0,
                          coarse_h: float = DEFAULT_COARSE_H,
                          strategy: str = "ME",
                          compute_err_eps_q: bool = True,
                          meas_cache: dict | None = None) -> dict:
    """Identification against mean observables over M1 checkerboards."""
    if strategy not in ("ME", "MS", "A_star"):
        raise ValueError(f"strategy {strategy!r} not supported on the "
                         "random case")
    if q < p:
        raise ValueError(f"need Q >= P, got Q={q}, P={p}")
    t0 = time.perf_counter()
    key = (eps, r, q, m1, base_seed)
    cached = meas_cache.get(key) if meas_cache is not None else None
    if cached is None:
        batch, fine, coarse = _checkerboard_batch(
            eps, q, r, m1, base_seed, keep_fields=True)
        cached = (mean_measurements(batch), coarse)
        if meas_cache is not None:
            meas_cache[key] = cached
    mean_q, coarse = cached
    coarse = build_unit_square_mesh(coarse_mesh_n(coarse_h))
    a_star = checkerboard_exact().matrix

    if strategy == "A_star":
        abar, psi, iters = a_star, None, None
    else:
        meas_p = take_measurements(mean_q, p)
        init = SymMat.identity(10.0)  # the phase average
        trace = identify(meas_p, coarse, init,
                         objective=_strategy_objective(strategy))
        abar, psi = trace.final, trace.objective_values[-1]
        iters = trace.iterations
    erre = err_eps_q(abar, mean_q, coarse) if compute_err_eps_q else None
    wall = 1000.0 * (time.perf_counter() - t0)
    return _record("identify_checkerboard", strategy, eps, p, q, r,
                   base_seed, abar, err_star(abar, a_star), erre, psi,
                   iters, wall,
                   extra={"M1": m1,
                          "energies": [float(e) for e in mean_q.energies]})


# ---------------------------------------------------------------------------
# noise studies

def measurement_noise_study(eps: float = 0.05, r: float = 20.0,
                            p: int | None = None,
                            sigmas: Sequence[float] = (0.01, 0.05, 0.1),
                            draws: int = 40, base_seed: int = 0,
                            coarse_h: float = DEFAULT_COARSE_H) -> list[dict]:
    """Re-identify under multiplicative energy noise, per sigma and draw.

    Records the relative distance of each noisy result to the noiseless
    one; the noiseless baseline appears as the sigma = 0 record.
    """
    if p is None:
        p = choose_p(eps)
    field = scale_epsilon(periodic_smooth_field(), eps)
    fine = build_unit_square_mesh(fine_mesh_n(eps, r))
    basis = compute_r_modes(fine, p)
    meas = simulate_measurements(fine, field, basis, keep_fields=False)
    coarse = build_unit_square_mesh(coarse_mesh_n(coarse_h))
    init = mean_over_cell(periodic_smooth_field())

    t0 = time.perf_counter()
    clean = identify(meas, coarse, init)
    clean_norm = clean.final.frobenius()
    records = [_record("noise_measurement", "ME", eps, p, None, r, None,
                       clean.final, None, None,
                       clean.objective_values[-1], clean.iterations,
                       1000.0 * (time.perf_counter() - t0),
                       extra={"sigma": 0.0, "rel_coeff_error": 0.0})]
    for sigma in sigmas:
        for k in range(draws):
            t0 = time.perf_counter()
            seed = base_seed + k
            spec = NoiseSpec(kind="measurement", sigma=sigma, seed=seed)
            noisy = apply_measurement_noise(meas, spec)
            trace = identify(noisy, coarse, init)
            dv = trace.final.vec() - clean.final.vec()
            rel = math.sqrt(dv[0] ** 2 + 2 * dv[1] ** 2 + dv[2] ** 2) \
                / clean_norm
            records.append(_record(
                f"noise_measurement:sigma={sigma}", "ME", eps, p, None, r,
                seed, trace.final, None, None, trace.objective_values[-1],
                trace.iterations, 1000.0 * (time.perf_counter() - t0),
                extra={"sigma": sigma, "rel_coeff_error": rel}))
    return records


def coefficient_noise_study(eps: float = 0.05, r: float = 20.0,
                            p: int | None = None, sigma: float = 2.0,
                            m1: int = 10, base_seed: int = 0,
                            coarse_h: float = DEFAULT_COARSE_H) -> list[dict]:
    """Identify with random matrix perturbations inside the coarse solves."""
    if p is None:
        p = choose_p(eps)
    field = scale_epsilon(periodic_smooth_field(), eps)
    fine = build_unit_square_mesh(fine_mesh_n(eps, r))
    basis = compute_r_modes(fine, p)
    meas = simulate_measurements(fine, field, basis, keep_fields=False)
    coarse = build_unit_square_mesh(coarse_mesh_n(coarse_h))
    init = mean_over_cell(periodic_smooth_field())

    t0 = time.perf_counter()
    clean = identify(meas, coarse, init)
    records = [_record("noise_coefficient", "ME", eps, p, None, r, None,
                       clean.final, None, None,
                       clean.objective_values[-1], clean.iterations,
                       1000.0 * (time.perf_counter() - t0),
                       extra={"sigma": 0.0, "rel_coeff_error": 0.0})]
    t0 = time.perf_counter()
    spec = NoiseSpec(kind="coefficient", sigma=sigma, draws=m1,
                     seed=base_seed)
    trace = identify(meas, coarse, init, noise=spec)
    d = trace.final.as_array() - clean.final.as_array()
    rel = float(np.linalg.norm(d, 2) / np.linalg.norm(
        clean.final.as_array(), 2))
    records.append(_record(
        f"noise_coefficient:sigma={sigma}", "ME", eps, p, None, r,
        base_seed, trace.final, None, None, trace.objective_values[-1],
        trace.iterations, 1000.0 * (time.perf_counter() - t0),
        extra={"sigma": sigma, "M1": m1, "rel_coeff_error": rel}))
    return records


# ---------------------------------------------------------------------------
# sweep and serialization

def sweep(epsilons: Sequence[float], strategies: Sequence[str] = ("ME",),
          coefficient: str = "periodic_smooth", r: float = 20.0,
          p: int | None = None, q: int = 11,
          coarse_h: float = DEFAULT_COARSE_H, m1: int = 10,
          base_seed: int = 0, workers: int = 1) -> list[dict]:
    """Identification records over an epsilon grid and strategy list.

    Per-record failures are recorded (with an ``error`` field) and the
    sweep continues; record order is deterministic.
    """
    tasks = [(eps, strat) for eps in epsilons for strat in strategies]
    a_star = periodic_reference() if coefficient == "periodic_smooth" \
        and tasks else None

    def run(task):
        eps, strat = task
        try:
            if coefficient == "periodic_smooth":
                return identify_periodic(eps, r=r, p=p, q=q,
                                         coarse_h=coarse_h,
                                         strategy=strat, a_star=a_star)
            if coefficient == "checkerboard":
                return identify_checkerboard(eps, r=r, p=p or 3, q=q,
                                             m1=m1, base_seed=base_seed,
                                             coarse_h=coarse_h,
                                             strategy=strat)
            raise ValueError(f"unknown coefficient {coefficient!r}")
        except Exception as exc:  # noqa: BLE001 - per-record tolerance
            return {"experiment": f"identify_{coefficient}",
                    "strategy": strat, "epsilon": eps, "P": p, "Q": q,
                    "r": r, "seed": base_seed, "error": repr(exc)}

    if workers > 1:
        # no measurement cache across concurrent tasks; each solves its own
        return parallel_map(run, tasks, workers)
    cache: dict = {}

    def run_cached(task):
        eps, strat = task
        rec = None
        try:
            if coefficient == "periodic_smooth":
                rec = identify_periodic(eps, r=r, p=p, q=q,
                                        coarse_h=coarse_h, strategy=strat,
                                        a_star=a_star, meas_cache=cache)
            elif coefficient == "checkerboard":
                rec = identify_checkerboard(eps, r=r, p=p or 3, q=q, m1=m1,
                                            base_seed=base_seed,
                                            coarse_h=coarse_h,
                                            strategy=strat,
                                            meas_cache=cache)
            else:
                raise ValueError(f"unknown coefficient {coefficient!r}")
        except Exception as exc:  # noqa: BLE001
            rec = {"experiment": f"identify_{coefficient}",
                   "strategy": strat, "epsilon": eps, "P": p, "Q": q,
                   "r": r, "seed": base_seed, "error": repr(exc)}
        return rec

    return [run_cached(t) for t in tasks]


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(records: Sequence[dict], path: str) -> None:
    """Fixed-column CSV; extra record fields only appear in the JSON."""
    lines = [",".join(CSV_COLUMNS)]
    for rec in records:
        lines.append(",".join(_format_cell(rec.get(c)) for c in CSV_COLUMNS))
    _atomic_write(path, "\n".join(lines) + "\n")


def write_json(records: Sequence[dict], path: str,
               config: dict | None = None) -> None:
    doc = {"schema_version": 1, "records": list(records)}
    if config is not None:
        doc["config"] = config
    _atomic_write(path, json.dumps(doc, indent=2, default=float) + "\n")
