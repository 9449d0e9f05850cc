"""Optimizers: conic particle gradient descent (deterministic and stochastic),
the projected measure update, and the fixed-grid convex baselines (ISTA and
multiplicative mirror descent on atom masses)."""
from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from .cone import retract_arrays, RETRACTION_KINDS
from .errors import InvalidInputError, NonDescentError, StepTooLargeError, UnsupportedRetractionError
from .manifold import Manifold
from .problem import DiscreteMeasure, FirstVariationField, ProblemSpec, objective


@dataclass
class ParticleEnsemble:
    """State of the particle method: m lifted particles (r_i, theta_i, sign_i).

    The projected measure is (1/m) sum_i r_i^2 delta_{theta_i}; the divisor is
    the full particle count, dead particles (r = 0) included.
    """

    manifold: Manifold
    r: np.ndarray
    positions: np.ndarray
    signs: np.ndarray = None

    def __post_init__(self):
        self.r = np.atleast_1d(np.asarray(self.r, dtype=float))
        self.positions = np.asarray(self.positions, dtype=float)
        if self.signs is None:
            self.signs = np.ones(len(self.r), dtype=int)
        else:
            self.signs = np.atleast_1d(np.asarray(self.signs, dtype=int))
        if np.any(self.r < 0):
            raise InvalidInputError("particle mass parameters must be >= 0")
        if len(self.positions) != len(self.r) or len(self.signs) != len(self.r):
            raise InvalidInputError("r, positions and signs must have equal length")

    @property
    def m(self):
        return len(self.r)

    def copy(self):
        return ParticleEnsemble(
            self.manifold, self.r.copy(), self.positions.copy(), self.signs.copy()
        )


def project(ensemble: ParticleEnsemble) -> DiscreteMeasure:
    """Homogeneous projection: atoms (r_i^2 / m, theta_i, sign_i), zero-mass
    particles omitted."""
    alive = ensemble.r > 0.0
    return DiscreteMeasure(
        ensemble.manifold,
        ensemble.r[alive] ** 2 / ensemble.m,
        ensemble.positions[alive],
        ensemble.signs[alive],
    )


def init_ensemble(
    manifold, m, kind="grid", total_mass=1.0, seed=0, signed=False
) -> ParticleEnsemble:
    """Default initialization: positions on a uniform grid (or i.i.d. uniform),
    equal mass parameters so the projected total mass equals ``total_mass``.
    Signed mode places half the particles on each copy."""
    if m < 1:
        raise InvalidInputError(f"need at least one particle, got m={m}")
    rng = np.random.default_rng(seed)

    def positions_for(count):
        if kind == "grid":
            return manifold.uniform_grid(count)[0]
        if kind == "uniform_random":
            return manifold.sample_uniform(rng, count)
        raise InvalidInputError(f"unknown initialization kind {kind!r}")

    if signed:
        m_pos = (m + 1) // 2
        parts = [positions_for(m_pos), positions_for(m - m_pos)]
        positions = np.vstack([p for p in parts if len(p)])
        signs = np.concatenate([np.ones(m_pos, dtype=int), -np.ones(m - m_pos, dtype=int)])
    else:
        positions = positions_for(m)
        signs = np.ones(m, dtype=int)
    r = np.full(m, np.sqrt(total_mass))
    return ParticleEnsemble(manifold, r, positions, signs)


@dataclass
class BetaRamp:
    """Geometric ramp of the position step: beta_k = beta * initial_factor^(1 - k/ramp_iters)
    for k < ramp_iters, then beta."""

    initial_factor: float = 1e-2
    ramp_iters: int = 100

    def factor(self, k):
        if k >= self.ramp_iters:
            return 1.0
        return float(self.initial_factor ** (1.0 - k / self.ramp_iters))


@dataclass
class OptimizerConfig:
    alpha: float
    beta: float
    retraction: str = "mirror"
    iters: int = 1000
    descent_guard: bool = True
    stop_tol: float = 0.0
    seed: int = 0
    batch_size: int = None  # minibatch size; None = deterministic full-batch
    beta_ramp: BetaRamp = None
    guard_max_halvings: int = 60

    def __post_init__(self):
        if self.alpha <= 0:
            raise InvalidInputError(f"alpha must be > 0, got {self.alpha}")
        if self.beta < 0:
            raise InvalidInputError(f"beta must be >= 0, got {self.beta}")
        if self.iters < 0:
            raise InvalidInputError(f"iters must be >= 0, got {self.iters}")
        if self.retraction not in RETRACTION_KINDS:
            raise UnsupportedRetractionError(
                f"unknown retraction {self.retraction!r}; expected one of {RETRACTION_KINDS}"
            )
        if isinstance(self.beta_ramp, dict):
            self.beta_ramp = BetaRamp(**self.beta_ramp)


@dataclass
class TrajectoryRecord:
    """Per-iteration log: objective, gap, squared gradient norm, probe minimum
    of the first variation, transport upper bound, wall time."""

    iters: list = dc_field(default_factory=list)
    J: list = dc_field(default_factory=list)
    gap: list = dc_field(default_factory=list)
    grad_norm_sq: list = dc_field(default_factory=list)
    min_jprime: list = dc_field(default_factory=list)
    w2hat: list = dc_field(default_factory=list)
    wall_ms: list = dc_field(default_factory=list)

    COLUMNS = ("iter", "J", "gap", "grad_norm_sq", "min_Jprime", "w2hat", "wall_ms")

    def append(self, k, J, gap, gsq, minjp, w2, wall):
        if self.iters and k <= self.iters[-1]:
            raise InvalidInputError("trajectory rows must be strictly increasing in iter")
        self.iters.append(int(k))
        self.J.append(float(J))
        self.gap.append(float(gap))
        self.grad_norm_sq.append(float(gsq))
        self.min_jprime.append(float(minjp))
        self.w2hat.append(float(w2))
        self.wall_ms.append(float(wall))

    def rows(self):
        for vals in zip(
            self.iters, self.J, self.gap, self.grad_norm_sq,
            self.min_jprime, self.w2hat, self.wall_ms,
        ):
            yield vals

    def __len__(self):
        return len(self.iters)


def grad_norm_sq(spec: ProblemSpec, nu: DiscreteMeasure, alpha: float, beta: float) -> float:
    """|g_nu|^2 = int (4 alpha |J'|^2 + beta |grad J'|^2) dnu, exact atom sum."""
    if len(nu) == 0:
        return 0.0
    field = FirstVariationField(spec, nu)
    vals = field.values(nu.positions, nu.signs)
    gsum = 4.0 * alpha * float(nu.masses @ vals ** 2)
    if beta > 0:
        grads = field.grads(nu.positions, nu.signs)
        gsum += beta * float(nu.masses @ np.sum(grads ** 2, axis=1))
    return gsum


class _StepField:
    """Per-state cache: first variation values/gradients at the particles plus
    the alpha/beta-independent pieces of the squared gradient norm."""

    def __init__(self, spec, ensemble, data=None):
        self.nu = project(ensemble)
        self.field = FirstVariationField(spec, self.nu, data=data)
        alive = ensemble.r > 0.0
        self.alive = alive
        self.vals = np.zeros(ensemble.m)
        self.grads = np.zeros_like(ensemble.positions)
        if np.any(alive):
            self.vals[alive] = self.field.values(
                ensemble.positions[alive], ensemble.signs[alive]
            )
            self.grads[alive] = self.field.grads(
                ensemble.positions[alive], ensemble.signs[alive]
            )
        masses = ensemble.r ** 2 / ensemble.m
        self.stat_a = 4.0 * float(masses @ self.vals ** 2)
        self.stat_b = float(masses @ np.sum(self.grads ** 2, axis=1))

    def gsq(self, alpha, beta):
        return alpha * self.stat_a + beta * self.stat_b


def _apply_step(ensemble, sf: _StepField, retraction, alpha, beta):
    dr = -2.0 * alpha * ensemble.r * sf.vals
    dpos = -beta * sf.grads
    new_r, new_pos = retract_arrays(
        retraction, ensemble.manifold, ensemble.r, ensemble.positions, dr, dpos
    )
    return ParticleEnsemble(ensemble.manifold, new_r, new_pos, ensemble.signs.copy())


def cpgd_step(
    spec: ProblemSpec, ensemble: ParticleEnsemble, config: OptimizerConfig,
    alpha=None, beta=None,
) -> ParticleEnsemble:
    """One conic particle gradient descent step: every particle is retracted
    along (-2 alpha r J'(theta), -beta grad J'(theta)), with the first
    variation taken at the projected measure before the step."""
    alpha = config.alpha if alpha is None else alpha
    beta = config.beta if beta is None else beta
    sf = _StepField(spec, ensemble)
    return _apply_step(ensemble, sf, config.retraction, alpha, beta)


def sgd_step(
    spec: ProblemSpec, ensemble: ParticleEnsemble, config: OptimizerConfig, rng,
) -> ParticleEnsemble:
    """Stochastic step: J' and grad J' replaced by unbiased estimates from a
    fresh minibatch drawn by the feature model's streaming sampler."""
    if config.batch_size is None or config.batch_size < 1:
        raise InvalidInputError("sgd_step needs config.batch_size >= 1")
    batch = spec.features.fresh_batch(rng, config.batch_size)
    sf = _StepField(spec, ensemble, data=batch)
    return _apply_step(ensemble, sf, config.retraction, config.alpha, config.beta)


def projected_update(
    spec: ProblemSpec, nu: DiscreteMeasure, retraction: str, alpha: float, beta: float,
) -> DiscreteMeasure:
    """Projected iterate: nu_{k+1} = (T^theta)_# ((T^r)^2 nu_k) with
    (T^r(theta), T^theta(theta)) the retraction of the step field at r = 1."""
    if len(nu) == 0:
        return nu
    field = FirstVariationField(spec, nu)
    vals = field.values(nu.positions, nu.signs)
    grads = field.grads(nu.positions, nu.signs)
    ones = np.ones(len(nu))
    tr, tpos = retract_arrays(
        retraction, nu.manifold, ones, nu.positions, -2.0 * alpha * vals, -beta * grads
    )
    return DiscreteMeasure(nu.manifold, nu.masses * tr ** 2, tpos, nu.signs)


def _probe_min(field, probe_grid, signed):
    if probe_grid is None:
        return np.nan
    best = float(np.min(field.values(probe_grid)))
    if signed:
        best = min(best, float(np.min(field.values(probe_grid, -np.ones(len(probe_grid))))))
    return best


def run(
    spec: ProblemSpec,
    ensemble: ParticleEnsemble,
    config: OptimizerConfig,
    probe_grid=None,
    j_star=None,
    w2_reference=None,
    w2_tau=None,
):
    """Iterate cpgd_step (or sgd_step when batch_size is set), logging one
    trajectory row per visited state (iters + 1 rows when not stopped early).

    With the descent guard on, an objective increase halves both step sizes
    and retries the iteration; the halved steps persist.  The guard is
    inactive in stochastic mode.  Returns (final ensemble, TrajectoryRecord).
    """
    ens = ensemble.copy()
    alpha, beta = config.alpha, config.beta
    stochastic = config.batch_size is not None
    guard = config.descent_guard and not stochastic
    rng = np.random.default_rng(config.seed)
    record = TrajectoryRecord()
    t0 = time.perf_counter()

    w2_fn = None
    if w2_reference is not None:
        from .diagnostics import cone_w2_upper, default_tau

        tau = w2_tau if w2_tau is not None else default_tau(w2_reference)
        w2_fn = lambda nu: cone_w2_upper(nu, w2_reference, tau)

    def log_state(k, sf, J, beta_eff):
        gap = J - j_star if j_star is not None else np.nan
        w2 = w2_fn(sf.nu) if w2_fn is not None else np.nan
        record.append(
            k, J, gap, sf.gsq(alpha, beta_eff),
            _probe_min(sf.field, probe_grid, spec.signed),
            w2, 1e3 * (time.perf_counter() - t0),
        )

    sf = _StepField(spec, ens)
    J_cur = objective(spec, sf.nu)
    for k in range(config.iters):
        beta_eff = beta * (config.beta_ramp.factor(k) if config.beta_ramp else 1.0)
        log_state(k, sf, J_cur, beta_eff)
        if config.stop_tol > 0.0 and sf.gsq(alpha, beta_eff) <= config.stop_tol:
            return ens, record
        if stochastic:
            batch = spec.features.fresh_batch(rng, config.batch_size)
            trial_sf = _StepField(spec, ens, data=batch)
            ens = _apply_step(ens, trial_sf, config.retraction, alpha, beta_eff)
            sf = _StepField(spec, ens)
            J_cur = objective(spec, sf.nu)
            continue
        halvings = 0
        while True:
            try:
                # oversized steps may overflow before the guard rejects them
                with np.errstate(over="ignore", invalid="ignore"):
                    trial = _apply_step(ens, sf, config.retraction, alpha, beta_eff)
                    trial_sf = _StepField(spec, trial)
                    J_trial = objective(spec, trial_sf.nu)
                if not guard:
                    break
                if np.isfinite(J_trial) and J_trial <= J_cur:
                    break
            except StepTooLargeError:
                if not guard:
                    raise
                J_trial = np.inf
            halvings += 1
            if halvings > config.guard_max_halvings:
                raise NonDescentError(
                    "descent guard exhausted its halvings",
                    diagnostics={
                        "iter": k, "J": J_cur, "J_trial": float(J_trial),
                        "alpha": alpha, "beta": beta,
                        "grad_norm_sq": sf.gsq(alpha, beta_eff),
                    },
                )
            alpha, beta = 0.5 * alpha, 0.5 * beta
            beta_eff = 0.5 * beta_eff
        ens, sf, J_cur = trial, trial_sf, J_trial
    beta_eff = beta * (config.beta_ramp.factor(config.iters) if config.beta_ramp else 1.0)
    log_state(config.iters, sf, J_cur, beta_eff)
    return ens, record


# ---------------------------------------------------------------------------
# fixed-grid convex baselines


class QuadraticGridProblem:
    """Square-loss problem restricted to fixed atom locations: the objective
    is the quadratic 0.5 w'Gw + w'q + 0.5 c0 + lam sum(w) in the masses w."""

    def __init__(self, spec: ProblemSpec, positions):
        if spec.signed:
            raise InvalidInputError("fixed-grid baselines support unsigned problems only")
        self.spec = spec
        self.positions = np.asarray(positions, dtype=float)
        feats = spec.features
        self.gram = feats.kernel(self.positions, self.positions)
        res0 = spec.residual(DiscreteMeasure.empty(spec.manifold))
        self.q = feats.eval_residual(res0, self.positions)
        self.c0 = feats.residual_norm_sq(res0)

    def jprime(self, w):
        return self.gram @ w + self.q + self.spec.lam

    def objective(self, w):
        return float(
            0.5 * (w @ self.gram @ w) + w @ self.q + 0.5 * self.c0
            + self.spec.lam * np.sum(w)
        )

    def stationarity(self, w):
        """|g|^2 at (alpha, beta) = (1, 0): 4 * sum w * J'^2."""
        jp = self.jprime(w)
        return 4.0 * float(w @ jp ** 2)

    def lipschitz(self):
        return float(np.linalg.eigvalsh(self.gram).max())


def _fixed_grid_loop(quad, w0, update, iters, j_star, stop_grad_sq=None):
    record = TrajectoryRecord()
    t0 = time.perf_counter()
    w = np.asarray(w0, dtype=float).copy()
    k = 0
    while True:
        J = quad.objective(w)
        jp = quad.jprime(w)
        stat = 4.0 * float(w @ jp ** 2)
        gap = J - j_star if j_star is not None else np.nan
        record.append(k, J, gap, stat, float(jp.min()), np.nan,
                      1e3 * (time.perf_counter() - t0))
        if k >= iters or (stop_grad_sq is not None and stat <= stop_grad_sq):
            break
        w = update(w, jp)
        k += 1
    return w, record


def ista_fixed_grid(spec, grid_measure, alpha, iters, j_star=None):
    """Proximal gradient on atom masses with h(r) = r: per atom
    w <- max(0, w - alpha * J'_nu(theta_i))."""
    quad = QuadraticGridProblem(spec, grid_measure.positions)
    w, record = _fixed_grid_loop(
        quad, grid_measure.masses, lambda w, jp: np.maximum(0.0, w - alpha * jp),
        iters, j_star,
    )
    return DiscreteMeasure(spec.manifold, w, grid_measure.positions), record


def mirror_fixed_grid(spec, grid_measure, alpha, iters, j_star=None, stop_grad_sq=None):
    """Multiplicative mirror descent on atom masses (h(r) = r^2, beta = 0):
    w <- w * exp(-4 alpha J'_nu(theta_i))."""
    quad = QuadraticGridProblem(spec, grid_measure.positions)
    w, record = _fixed_grid_loop(
        quad, grid_measure.masses, lambda w, jp: w * np.exp(-4.0 * alpha * jp),
        iters, j_star, stop_grad_sq=stop_grad_sq,
    )
    return DiscreteMeasure(spec.manifold, w, grid_measure.positions), record


def polish_sparse_minimizer(spec, measure, gtol=1e-13, maxiter=4000):
    """Local refinement of a sparse candidate minimizer by quasi-Newton descent
    on the particle parameterization (u_i, theta_i) with masses u_i^2.

    Torus problems only (flat coordinates).  Returns (measure, grad_inf)."""
    from scipy.optimize import minimize

    if spec.manifold.kind != "torus":
        raise InvalidInputError("polish is implemented for torus problems")
    if spec.signed:
        raise InvalidInputError("polish is implemented for unsigned problems")
    man = spec.manifold
    m = len(measure)
    d = man.dim

    def unpack(x):
        return x[:m], x[m:].reshape(m, d)

    def fg(x):
        u, th = unpack(x)
        nu = DiscreteMeasure(man, u ** 2, th)
        field = FirstVariationField(spec, nu)
        vals = field.values(nu.positions)
        grads = field.grads(nu.positions)
        grad = np.concatenate([2.0 * u * vals, ((u ** 2)[:, None] * grads).ravel()])
        return objective(spec, nu), grad

    x0 = np.concatenate([np.sqrt(measure.masses), measure.positions.ravel()])
    res = minimize(fg, x0, jac=True, method="BFGS",
                   options={"gtol": gtol, "maxiter": maxiter})
    u, th = unpack(res.x)
    refined = DiscreteMeasure(man, u ** 2, th)
    return refined, float(np.max(np.abs(res.jac)))
