"""Config-driven experiment runner: builds problems from JSON configs, runs
the optimizers, the fine-grid convex oracle, parameter sweeps, the
mirror-vs-ISTA comparison, and diagnostics reports.  All outputs are CSV/JSON.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from .errors import InvalidInputError, MeoptError
from .manifold import Sphere, Torus
from .optimize import (
    OptimizerConfig,
    QuadraticGridProblem,
    TrajectoryRecord,
    grad_norm_sq,
    init_ensemble,
    ista_fixed_grid,
    mirror_fixed_grid,
    polish_sparse_minimizer,
    project,
    run,
)
from .problem import (
    DiscreteMeasure,
    ProblemSpec,
    certify_optimality,
    make_dirichlet_features,
    make_generic_problem,
    make_relu_hom_features,
    make_scalar_features,
    objective,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_CERTIFICATE = 2


class ConfigError(MeoptError, ValueError):
    """Invalid experiment configuration (exit code 1)."""


# ---------------------------------------------------------------------------
# seed derivation

_MASK64 = (1 << 64) - 1


def _splitmix64(z):
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def mix_seed(base, *parts):
    """Derived 64-bit seed: fold each part (ints directly, floats via their
    IEEE-754 bits) into the base with splitmix64 rounds.  Mixing on the axis
    values themselves keeps a cell's seed stable when other axis values are
    added to a sweep."""
    state = _splitmix64(int(base) & _MASK64)
    for p in parts:
        if isinstance(p, float):
            bits = int(np.float64(p).view(np.uint64))
        else:
            bits = int(p) & _MASK64
        state = _splitmix64(state ^ bits)
    return state


# ---------------------------------------------------------------------------
# configuration

_TWO_PI = 2.0 * np.pi


def _take(d, key, default):
    return d.get(key, default) if d else default


def _check_keys(d, allowed, where):
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")


@dataclass
class ProblemConfig:
    kind: str = "deconv1d"
    n_f: int = 3
    ambient_dim: int = 20
    data_sample_size: int = 4000
    teacher_atoms: list = None        # [[mass, [coords...], sign], ...]
    teacher_random: dict = None       # {"m0": int, "total_mass": float}
    lam: float = 0.2
    signed: bool = False
    scalar_kind: str = "cos"
    seed: int = 0

    KINDS = ("deconv1d", "deconv2d", "relu_net", "generic_scalar")

    @classmethod
    def from_dict(cls, d):
        d = d or {}
        _check_keys(d, ["kind", "n_f", "ambient_dim", "data_sample_size", "teacher",
                        "lambda", "signed", "scalar_kind", "seed"], "problem")
        kind = _take(d, "kind", "deconv1d")
        if kind not in cls.KINDS:
            raise ConfigError(f"unknown problem kind {kind!r}; expected one of {cls.KINDS}")
        teacher = d.get("teacher")
        atoms, random_spec = None, None
        if isinstance(teacher, dict):
            if "atoms" in teacher:
                atoms = teacher["atoms"]
            else:
                _check_keys(teacher, ["m0", "total_mass"], "problem.teacher")
                random_spec = {"m0": int(teacher.get("m0", 5)),
                               "total_mass": float(teacher.get("total_mass", 1.0))}
        elif isinstance(teacher, list):
            atoms = teacher
        elif teacher is not None:
            raise ConfigError("problem.teacher must be an atom list or {m0, total_mass}")
        return cls(
            kind=kind,
            n_f=int(_take(d, "n_f", 3)),
            ambient_dim=int(_take(d, "ambient_dim", 20)),
            data_sample_size=int(_take(d, "data_sample_size", 4000)),
            teacher_atoms=atoms,
            teacher_random=random_spec,
            lam=float(_take(d, "lambda", 0.2)),
            signed=bool(_take(d, "signed", False)),
            scalar_kind=str(_take(d, "scalar_kind", "cos")),
            seed=int(_take(d, "seed", 0)),
        )

    def default_teacher_atoms(self):
        if self.kind == "deconv1d":
            if self.signed:
                return [[1.0, [1.2], 1], [0.8, [3.0], -1], [1.1, [5.0], 1]]
            return [[1.0, [1.8], 1], [0.8, [3.0], 1], [1.1, [5.0], 1]]
        if self.kind == "deconv2d":
            return [[1.0, [np.pi, np.pi], 1]]
        return None


@dataclass
class InitConfig:
    kind: str = "grid"
    m: int = 100
    total_mass: float = 1.0
    seed: int = 0

    @classmethod
    def from_dict(cls, d):
        d = d or {}
        _check_keys(d, ["kind", "m", "total_mass", "seed"], "init")
        kind = _take(d, "kind", "grid")
        if kind not in ("grid", "uniform_random"):
            raise ConfigError(f"unknown init kind {kind!r}")
        return cls(kind=kind, m=int(_take(d, "m", 100)),
                   total_mass=float(_take(d, "total_mass", 1.0)),
                   seed=int(_take(d, "seed", 0)))


@dataclass
class DiagnosticsConfig:
    tau: float = None
    probe_grid_size: int = 200
    oracle_path: str = None
    certificate_grid: int = 2000
    certificate_tol: float = 1e-5
    rate_window_frac: float = 0.3
    c_theta: float = 1.0
    rho_lipschitz: float = 0.0

    @classmethod
    def from_dict(cls, d):
        d = d or {}
        _check_keys(d, ["tau", "probe_grid_size", "oracle_path", "certificate_grid",
                        "certificate_tol", "rate_window_frac", "c_theta",
                        "rho_lipschitz"], "diagnostics")
        return cls(
            tau=d.get("tau"),
            probe_grid_size=int(_take(d, "probe_grid_size", 200)),
            oracle_path=d.get("oracle_path"),
            certificate_grid=int(_take(d, "certificate_grid", 2000)),
            certificate_tol=float(_take(d, "certificate_tol", 1e-5)),
            rate_window_frac=float(_take(d, "rate_window_frac", 0.3)),
            c_theta=float(_take(d, "c_theta", 1.0)),
            rho_lipschitz=float(_take(d, "rho_lipschitz", 0.0)),
        )


@dataclass
class CompareConfig:
    alpha_mirror: float = None   # default 4 / lipschitz(Gram)
    alpha_ista: float = None     # default 0.95 / lipschitz(Gram)
    iters: int = 1000

    @classmethod
    def from_dict(cls, d):
        d = d or {}
        _check_keys(d, ["alpha_mirror", "alpha_ista", "iters"], "compare")
        return cls(alpha_mirror=d.get("alpha_mirror"), alpha_ista=d.get("alpha_ista"),
                   iters=int(_take(d, "iters", 1000)))


@dataclass
class ExperimentConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    init: InitConfig = field(default_factory=InitConfig)
    optimizer: dict = field(default_factory=dict)
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    compare: CompareConfig = field(default_factory=CompareConfig)
    out_dir: str = "out"

    @classmethod
    def from_dict(cls, d):
        d = d or {}
        _check_keys(d, ["problem", "init", "optimizer", "diagnostics", "compare",
                        "output"], "config")
        opt = dict(d.get("optimizer") or {})
        _check_keys(opt, ["alpha", "beta", "retraction", "iters", "descent_guard",
                          "stop_tol", "seed", "batch_size", "beta_ramp",
                          "guard_max_halvings"], "optimizer")
        return cls(
            problem=ProblemConfig.from_dict(d.get("problem")),
            init=InitConfig.from_dict(d.get("init")),
            optimizer=opt,
            diagnostics=DiagnosticsConfig.from_dict(d.get("diagnostics")),
            compare=CompareConfig.from_dict(d.get("compare")),
            out_dir=str((d.get("output") or {}).get("dir", "out")),
        )

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def optimizer_config(self, seed_override=None):
        opt = dict(self.optimizer)
        opt.setdefault("alpha", 1e-2)
        opt.setdefault("beta", 1e-2)
        opt.setdefault("retraction", "induced" if self.problem.kind == "relu_net" else "mirror")
        opt.setdefault("iters", 5000)
        if self.problem.kind == "relu_net":
            opt.setdefault("batch_size", 64)
            opt.setdefault("descent_guard", False)
        if seed_override is not None:
            opt["seed"] = int(seed_override)
        try:
            return OptimizerConfig(**opt)
        except (TypeError, InvalidInputError) as exc:
            raise ConfigError(f"bad optimizer section: {exc}") from exc

    def to_dict(self):
        pc = self.problem
        problem = {
            "kind": pc.kind, "n_f": pc.n_f, "ambient_dim": pc.ambient_dim,
            "data_sample_size": pc.data_sample_size, "lambda": pc.lam,
            "signed": pc.signed, "scalar_kind": pc.scalar_kind, "seed": pc.seed,
        }
        if pc.teacher_atoms is not None:
            problem["teacher"] = {"atoms": [
                [float(a[0]), [float(x) for x in np.atleast_1d(a[1])],
                 int(a[2]) if len(a) > 2 else 1]
                for a in pc.teacher_atoms
            ]}
        elif pc.teacher_random is not None:
            problem["teacher"] = dict(pc.teacher_random)
        return {
            "problem": problem,
            "init": dataclasses.asdict(self.init),
            "optimizer": dict(self.optimizer),
            "diagnostics": dataclasses.asdict(self.diagnostics),
            "compare": dataclasses.asdict(self.compare),
            "output": {"dir": self.out_dir},
        }


# ---------------------------------------------------------------------------
# problem construction


def build_problem(pc: ProblemConfig) -> ProblemSpec:
    if pc.kind in ("deconv1d", "deconv2d"):
        d = 1 if pc.kind == "deconv1d" else 2
        feats = make_dirichlet_features(d, pc.n_f)
        atoms = pc.teacher_atoms or pc.default_teacher_atoms()
        teacher = DiscreteMeasure.from_atoms(feats.manifold, [
            (float(a[0]), np.asarray(a[1], dtype=float), int(a[2]) if len(a) > 2 else 1)
            for a in atoms
        ])
        signed = pc.signed or teacher.is_signed
        return ProblemSpec(feats, teacher, lam=pc.lam, signed=signed)
    if pc.kind == "relu_net":
        feats = make_relu_hom_features(pc.ambient_dim, pc.data_sample_size, seed=pc.seed)
        if pc.teacher_atoms is not None:
            teacher = DiscreteMeasure.from_atoms(feats.manifold, [
                (float(a[0]), np.asarray(a[1], dtype=float), int(a[2]) if len(a) > 2 else 1)
                for a in pc.teacher_atoms
            ])
        else:
            spec_r = pc.teacher_random or {"m0": 5, "total_mass": 1.0}
            rng = np.random.default_rng(mix_seed(pc.seed, 0x7EAC))
            m0 = spec_r["m0"]
            pos = feats.manifold.sample_uniform(rng, m0)
            teacher = DiscreteMeasure(feats.manifold, np.full(m0, spec_r["total_mass"] / m0), pos)
        return ProblemSpec(feats, teacher, lam=pc.lam, signed=pc.signed)
    if pc.kind == "generic_scalar":
        feats = make_scalar_features(kind=pc.scalar_kind)
        return make_generic_problem(feats, pc.lam)
    raise ConfigError(f"unknown problem kind {pc.kind!r}")


def build_init(cfg: ExperimentConfig, spec: ProblemSpec):
    return init_ensemble(
        spec.manifold, cfg.init.m, cfg.init.kind,
        total_mass=cfg.init.total_mass, seed=cfg.init.seed, signed=spec.signed,
    )


# ---------------------------------------------------------------------------
# atoms <-> JSON


def atoms_to_json(measure: DiscreteMeasure):
    return [
        {"mass": float(w), "pos": [float(x) for x in p], "sign": int(s)}
        for w, p, s in measure.atoms()
    ]


def atoms_from_json(manifold, atoms):
    return DiscreteMeasure.from_atoms(
        manifold, [(a["mass"], np.asarray(a["pos"], dtype=float), a.get("sign", 1)) for a in atoms]
    )


def load_oracle(path, manifold):
    with open(path) as fh:
        data = json.load(fh)
    reference = atoms_from_json(manifold, data["atoms"])
    return float(data["j_star"]), reference, data


# ---------------------------------------------------------------------------
# CSV helpers (floats written with repr: shortest lossless round-trip)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def write_trajectory(path, record: TrajectoryRecord):
    write_csv(path, TrajectoryRecord.COLUMNS, record.rows())


def _jsonable(obj):
    """Strict-JSON payloads: non-finite floats become null."""
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# commands


def _probe_grid_for(spec, size):
    if spec.manifold.kind != "torus" or size is None or size <= 0:
        return None
    return spec.manifold.uniform_grid(size)[0]


def _rate_fits(record, frac):
    """Exponential and PowerLaw fits over the trailing window; None on failure
    (nonpositive gaps or missing oracle)."""
    fits = {}
    iters = np.asarray(record.iters)
    if len(iters) < 3:
        return {"Exponential": None, "PowerLaw": None}
    lo = float(iters[-1]) * (1.0 - frac)
    window = (lo, float(iters[-1]))
    for model in ("Exponential", "PowerLaw"):
        try:
            slope, r2 = diag.rate_fit(iters, record.gap, window, model)
            fits[model] = {"slope": slope, "r_squared": r2,
                           "window": [window[0], window[1]]}
        except (InvalidInputError, ValueError):
            fits[model] = None
    return fits


def cmd_run(cfg: ExperimentConfig, out_dir=None, seed_override=None):
    """Run one experiment; writes trajectory.csv and summary.json.
    Returns (exit_code, summary_dict)."""
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = build_problem(cfg.problem)
    ensemble = build_init(cfg, spec)
    opt = cfg.optimizer_config(seed_override)

    j_star, reference = None, None
    if cfg.diagnostics.oracle_path:
        j_star, reference, _ = load_oracle(cfg.diagnostics.oracle_path, spec.manifold)
    elif len(spec.teacher):
        reference = spec.teacher
    probe = _probe_grid_for(spec, cfg.diagnostics.probe_grid_size)
    w2_tau = cfg.diagnostics.tau
    if reference is not None and w2_tau is None:
        w2_tau = diag.default_tau(reference)
        if not np.isfinite(w2_tau):
            w2_tau = 1.0

    t0 = time.perf_counter()
    final, record = run(
        spec, ensemble, opt, probe_grid=probe, j_star=j_star,
        w2_reference=reference, w2_tau=w2_tau,
    )
    wall_total = 1e3 * (time.perf_counter() - t0)
    write_trajectory(out / "trajectory.csv", record)

    nu = project(final)
    cert = None
    exit_code = EXIT_OK
    if spec.manifold.kind == "torus":
        cert = certify_optimality(
            spec, nu, grid_size=cfg.diagnostics.certificate_grid,
            tol=cfg.diagnostics.certificate_tol,
        )
        if not cert.passed:
            exit_code = EXIT_CERTIFICATE
    summary = {
        "config": cfg.to_dict(),
        "final_J": record.J[-1],
        "j_star": j_star,
        "final_gap": record.gap[-1],
        "final_grad_norm_sq": record.grad_norm_sq[-1],
        "iterations": record.iters[-1],
        "certificate": cert.to_json_dict() if cert else None,
        "rates": _rate_fits(record, cfg.diagnostics.rate_window_frac),
        "final_atoms": atoms_to_json(nu),
        "wall_ms_total": wall_total,
    }
    write_json(out / "summary.json", summary)
    return exit_code, summary


def _cluster_seeds(spec, grid_solution, prune=1e-10):
    """Seed atoms for the oracle polish: local maxima of the grid mass profile
    (1D: circular neighbors; 2D: grid neighbors) above the prune threshold."""
    w = grid_solution.masses
    keep = w > prune
    pos = grid_solution.positions
    if spec.manifold.dim == 1:
        order = np.argsort(pos[:, 0])
        wo = np.where(keep, w, 0.0)[order]
        ismax = (wo > np.roll(wo, 1)) & (wo >= np.roll(wo, -1)) & (wo > 0)
        idx = order[ismax]
    else:
        side = int(round(np.sqrt(len(w))))
        wgrid = np.where(keep, w, 0.0).reshape(side, side)
        ismax = np.ones_like(wgrid, dtype=bool)
        for shift, axis in [(1, 0), (-1, 0), (1, 1), (-1, 1)]:
            ismax &= wgrid >= np.roll(wgrid, shift, axis=axis)
        ismax &= wgrid > 0
        idx = np.where(ismax.ravel())[0]
    if len(idx) == 0:
        return DiscreteMeasure.empty(spec.manifold)
    return DiscreteMeasure(spec.manifold, w[idx], pos[idx])


def _merge_close_atoms(measure, merge_dist=1e-6, prune=1e-12):
    """Prune tiny atoms, then greedily merge atoms within merge_dist."""
    keep = measure.masses > prune * max(measure.total_mass, 1.0)
    masses, pos = measure.masses[keep], measure.positions[keep]
    used = np.zeros(len(masses), dtype=bool)
    atoms = []
    man = measure.manifold
    for i in np.argsort(-masses):
        if used[i]:
            continue
        close = (man.dist(pos, pos[i]) <= merge_dist) & ~used
        atoms.append((float(masses[close].sum()), pos[i]))
        used |= close
    return DiscreteMeasure.from_atoms(man, atoms)


def cmd_oracle(cfg: ExperimentConfig, grid_size=2000, tol=1e-8, out_dir=None,
               mirror_iters=3000, max_refine_rounds=8):
    """Fine-grid convex solve: mirror descent on a uniform grid until the
    stationarity measure (alpha=1, beta=0) falls below tol or mirror_iters is
    reached; prune below mass 1e-10, merge within 1e-6, refine the sparse
    support by local descent, and repair against the optimality certificate.
    Writes oracle.json; returns (exit_code, payload)."""
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = build_problem(cfg.problem)
    if spec.manifold.kind != "torus" or spec.signed:
        raise ConfigError("the oracle supports unsigned exact-kernel torus problems")
    grid_pos, _ = spec.manifold.uniform_grid(grid_size)
    n = len(grid_pos)
    grid0 = DiscreteMeasure(spec.manifold, np.full(n, 1.0 / n), grid_pos)
    quad = QuadraticGridProblem(spec, grid_pos)
    alpha = 0.25 / max(1.0, float(np.max(np.abs(quad.jprime(grid0.masses)))))
    solution, record = mirror_fixed_grid(
        spec, grid0, alpha=alpha, iters=mirror_iters, stop_grad_sq=tol,
    )
    seeds = _cluster_seeds(spec, solution)
    seeds = _merge_close_atoms(seeds, merge_dist=1e-6, prune=1e-12)
    nu, grad_inf, rounds = seeds, np.inf, 0
    cert = None
    for rounds in range(max_refine_rounds + 1):
        nu, grad_inf = polish_sparse_minimizer(spec, nu)
        nu = _merge_close_atoms(nu, merge_dist=1e-6, prune=1e-12)
        cert = certify_optimality(spec, nu, grid_size=2 * grid_size, tol=1e-7)
        if cert.passed:
            break
        nu = DiscreteMeasure.from_atoms(
            spec.manifold,
            list(zip(nu.masses, nu.positions)) + [(1e-6, cert.worst_grid_location)],
        )
    j_star = objective(spec, nu)
    mass_bound = j_star / spec.lam if spec.lam > 0 else nu.total_mass + spec.teacher.total_mass
    cert_gap = -min(0.0, cert.grid_min) * mass_bound
    payload = {
        "j_star": j_star,
        "atoms": atoms_to_json(nu),
        "stationarity": record.grad_norm_sq[-1],
        "mirror_iters": record.iters[-1],
        "polish_grad_inf": grad_inf,
        "refine_rounds": rounds,
        "cert_gap": cert_gap,
        "certificate": cert.to_json_dict(),
        "grid_size": grid_size,
        "tol": tol,
    }
    write_json(out / "oracle.json", payload)
    return (EXIT_OK if cert.passed else EXIT_CERTIFICATE), payload


@dataclass
class SweepConfig:
    base: ExperimentConfig
    m_values: list
    beta_over_alpha_values: list
    lambda_values: list
    repeats: int = 5
    success_threshold: float = 1e-3

    @classmethod
    def from_dict(cls, d):
        _check_keys(d, ["base", "axes", "repeats", "success_threshold"], "sweep config")
        axes = d.get("axes") or {}
        _check_keys(axes, ["m", "beta_over_alpha", "lambda"], "sweep axes")
        if not axes:
            raise ConfigError("sweep needs at least one non-empty axis")
        return cls(
            base=ExperimentConfig.from_dict(d.get("base")),
            m_values=[int(v) for v in axes.get("m", [])] or [None],
            beta_over_alpha_values=[float(v) for v in axes.get("beta_over_alpha", [])] or [None],
            lambda_values=[float(v) for v in axes.get("lambda", [])] or [None],
            repeats=int(_take(d, "repeats", 5)),
            success_threshold=float(_take(d, "success_threshold", 1e-3)),
        )

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read sweep config {path}: {exc}") from exc


def _sweep_cell(args):
    base_dict, m, boa, lam, rep, seed, j_star = args
    try:
        cfg = ExperimentConfig.from_dict(base_dict)
        if m is not None:
            cfg.init.m = m
        if lam is not None:
            cfg.problem.lam = lam
        opt = cfg.optimizer_config(seed_override=seed)
        if boa is not None:
            opt.beta = opt.alpha * boa
        cfg.init.seed = seed
        spec = build_problem(cfg.problem)
        ens = build_init(cfg, spec)
        final, record = run(spec, ens, opt)
        return record.J[-1] - j_star
    except MeoptError:
        return np.nan


def cmd_sweep(sweep: SweepConfig, out_dir=None, jobs=1):
    """Grid of runs over (m, beta/alpha, lambda) axes with derived per-cell
    seeds; writes matrix.csv with one row per cell and repeat."""
    out = Path(out_dir or sweep.base.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base_seed = sweep.base.optimizer_config().seed

    # one oracle per distinct lambda (same teacher/features across cells)
    j_stars = {}
    for lam in sweep.lambda_values:
        cfg = ExperimentConfig.from_dict(sweep.base.to_dict())
        if lam is not None:
            cfg.problem.lam = lam
        _, payload = cmd_oracle(cfg, out_dir=out / "_oracle_cache")
        j_stars[lam] = payload["j_star"]

    tasks = []
    for m in sweep.m_values:
        for boa in sweep.beta_over_alpha_values:
            for lam in sweep.lambda_values:
                for rep in range(sweep.repeats):
                    seed = mix_seed(
                        base_seed,
                        m if m is not None else -1,
                        boa if boa is not None else -1.0,
                        lam if lam is not None else -1.0,
                        rep,
                    )
                    tasks.append((sweep.base.to_dict(), m, boa, lam, rep, seed, j_stars[lam]))

    jobs = max(1, int(jobs))
    cap = os.environ.get("MEOPT_THREADS")
    if cap:
        jobs = min(jobs, max(1, int(cap)))
    if jobs == 1:
        excesses = [_sweep_cell(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            excesses = list(pool.map(_sweep_cell, tasks))

    rows = []
    for (base_dict, m, boa, lam, rep, seed, j_star), excess in zip(tasks, excesses):
        cfg0 = sweep.base
        m_out = m if m is not None else cfg0.init.m
        boa_out = boa if boa is not None else _default_boa(cfg0)
        lam_out = lam if lam is not None else cfg0.problem.lam
        success = bool(np.isfinite(excess) and excess <= sweep.success_threshold)
        rows.append((m_out, float(boa_out), float(lam_out), rep, float(excess), success))
    write_csv(out / "matrix.csv",
              ["m", "beta_over_alpha", "lambda", "repeat", "final_excess", "success"], rows)
    return EXIT_OK, rows


def _default_boa(cfg):
    opt = cfg.optimizer_config()
    return opt.beta / opt.alpha if opt.alpha else np.nan


def cmd_compare(cfg: ExperimentConfig, out_dir=None):
    """Mirror (h(r)=r^2) vs ISTA (h(r)=r) mass dynamics from the identical
    fixed-grid initialization with beta = 0; writes compare.csv and
    compare_summary.json."""
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = build_problem(cfg.problem)
    if spec.manifold.kind != "torus" or spec.signed:
        raise ConfigError("compare supports unsigned deconvolution problems")
    grid_pos, _ = spec.manifold.uniform_grid(cfg.init.m)
    n = len(grid_pos)
    grid0 = DiscreteMeasure(spec.manifold, np.full(n, cfg.init.total_mass / n), grid_pos)

    if spec.lam == 0.0:
        on_grid = np.min(
            spec.manifold.dist(spec.teacher.positions[:, None, :], grid_pos[None, :, :]),
            axis=1,
        )
        if np.any(on_grid > 1e-9):
            raise ConfigError(
                "compare with lambda = 0 needs the teacher on the grid so the "
                "grid optimum is exact (J* = 0); move the teacher or supply an oracle"
            )
        j_star = 0.0
    else:
        _, payload = cmd_oracle(cfg, out_dir=out / "_oracle_cache")
        j_star = payload["j_star"]

    quad = QuadraticGridProblem(spec, grid_pos)
    lip = quad.lipschitz()
    a_mirror = cfg.compare.alpha_mirror or 4.0 / lip
    a_ista = cfg.compare.alpha_ista or 0.95 / lip
    iters = cfg.compare.iters
    _, rec_mirror = mirror_fixed_grid(spec, grid0, alpha=a_mirror, iters=iters, j_star=j_star)
    _, rec_ista = ista_fixed_grid(spec, grid0, alpha=a_ista, iters=iters, j_star=j_star)

    rows = list(zip(rec_mirror.iters, rec_mirror.gap, rec_ista.gap))
    write_csv(out / "compare.csv", ["iter", "gap_mirror", "gap_ista"], rows)
    fit_window = (100, min(1000, iters))
    try:
        expo, r2 = diag.rate_fit(rec_mirror.iters, rec_mirror.gap, fit_window, "PowerLaw")
        fit = {"exponent": expo, "r_squared": r2, "window": list(fit_window)}
    except InvalidInputError:
        fit = None
    summary = {
        "j_star": j_star,
        "alpha_mirror": a_mirror,
        "alpha_ista": a_ista,
        "iters": iters,
        "gap_mirror_final": rec_mirror.gap[-1],
        "gap_ista_final": rec_ista.gap[-1],
        "mirror_wins": bool(rec_mirror.gap[-1] < rec_ista.gap[-1]),
        "mirror_power_law": fit,
    }
    write_json(out / "compare_summary.json", summary)
    return EXIT_OK, summary


def load_checkpoint_atoms(path, manifold):
    """Accepts a summary.json (final_atoms) or a bare {"atoms": [...]} file."""
    with open(path) as fh:
        data = json.load(fh)
    atoms = data.get("final_atoms") or data.get("atoms")
    if atoms is None:
        raise ConfigError(f"{path} holds neither 'final_atoms' nor 'atoms'")
    return atoms_from_json(manifold, atoms)


def cmd_diagnose(cfg: ExperimentConfig, checkpoint_path, oracle_path, out_dir=None):
    """Full diagnostics report for a checkpoint measure against an oracle
    minimizer; writes diagnostics.json."""
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = build_problem(cfg.problem)
    nu = load_checkpoint_atoms(checkpoint_path, spec.manifold)
    j_star, reference, _ = load_oracle(oracle_path, spec.manifold)

    opt = cfg.optimizer_config()
    alpha, beta = opt.alpha, opt.beta
    tau = cfg.diagnostics.tau or diag.default_tau(reference)
    try:
        diag.check_admissible_tau(reference, tau)
    except diag.InadmissibleRadiusError as exc:
        raise ConfigError(
            f"inadmissible tau={tau}: {exc}; maximum admissible is {exc.max_admissible}"
        ) from exc

    # the second-order expansion block uses the alpha = beta = 1 normalization
    # (the gradient-side identity is stated there); sharpness uses the run steps
    moments = diag.local_moments(nu, reference, tau, 1.0, 1.0)
    kernels = diag.compute_kernels(spec, reference, 1.0, 1.0)
    expansion = diag.expansion_residual(spec, nu, reference, j_star, tau, 1.0, 1.0)
    sharp = diag.sharpness_ratio(spec, nu, j_star, alpha, beta)
    w2 = diag.cone_w2_upper(nu, reference, tau)

    vol = spec.manifold.volume
    rho_mass = reference.total_mass
    density = rho_mass / vol
    hbar = diag.prior_quality(reference, lambda p: density, rho_mass)
    rate_bounds = {
        str(t): diag.mirror_rate_bound(
            hbar, reference.total_mass, rho_mass, spec.manifold.dim,
            cfg.diagnostics.rho_lipschitz, cfg.diagnostics.c_theta, float(t),
        )
        for t in (1.0, 10.0, 100.0, 1000.0)
    }
    payload = {
        "tau": tau,
        "alpha": alpha,
        "beta": beta,
        "j_star": j_star,
        "objective": objective(spec, nu),
        "grad_norm_sq": grad_norm_sq(spec, nu, alpha, beta),
        "local_moments": moments.to_json_dict(),
        "kernels": kernels.to_json_dict(),
        "expansion": expansion.to_json_dict(),
        "sharpness_ratio": sharp,
        "cone_w2_upper": w2,
        "prior_quality_uniform": hbar,
        "mirror_rate_bound": rate_bounds,
    }
    write_json(out / "diagnostics.json", payload)
    return EXIT_OK, payload
