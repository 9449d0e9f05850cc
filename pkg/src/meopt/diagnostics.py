"""Empirical measurements of the local theory: per-spike moments, the global
and local interaction kernels, the second-order expansion residuals, the
sharpness (Polyak-Lojasiewicz) ratio, transport upper bounds, prior quality,
the mirror rate bound, and convergence-rate fitting."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cone import cos_pi
from .errors import InadmissibleRadiusError, InvalidInputError
from .manifold import Manifold
from .optimize import grad_norm_sq
from .problem import DiscreteMeasure, FirstVariationField, ProblemSpec, objective


def default_tau(reference: DiscreteMeasure) -> float:
    """Half the minimal (same-sign-aware) spike separation, capped at 1."""
    sep = _min_separation(reference)
    return min(1.0, 0.5 * sep)


def _min_separation(reference):
    n = len(reference)
    if n <= 1:
        return np.inf
    d = reference.manifold.dist(
        reference.positions[:, None, :], reference.positions[None, :, :]
    )
    same_sign = reference.signs[:, None] == reference.signs[None, :]
    d = np.where(same_sign, d, np.inf)
    np.fill_diagonal(d, np.inf)
    return float(d.min())


def check_admissible_tau(reference: DiscreteMeasure, tau: float):
    """A radius is admissible when the same-sign spikes are pairwise separated
    by more than 2*tau and tau is below the injectivity radius (pi)."""
    if tau <= 0:
        raise InadmissibleRadiusError(f"tau must be > 0, got {tau}")
    if tau >= np.pi:
        raise InadmissibleRadiusError(
            f"tau={tau} is not below the injectivity radius pi", max_admissible=np.pi
        )
    sep = _min_separation(reference)
    # open balls of radius tau remain disjoint when sep == 2*tau
    if not sep >= 2 * tau:
        raise InadmissibleRadiusError(
            f"tau={tau} violates the separation requirement: closest same-sign "
            f"spikes are {sep:.6g} < 2*tau apart",
            max_admissible=0.5 * sep,
        )


def _assign_cells(nu: DiscreteMeasure, reference: DiscreteMeasure, tau: float):
    """Cell index per atom of nu: 0..m*-1 for the spike balls, -1 for the rest.
    Atoms only ever match same-sign spikes (copies of the doubled space are
    disjoint)."""
    check_admissible_tau(reference, tau)
    if len(nu) == 0:
        return np.zeros(0, dtype=int)
    d = nu.manifold.dist(nu.positions[:, None, :], reference.positions[None, :, :])
    same_sign = nu.signs[:, None] == reference.signs[None, :]
    d = np.where(same_sign, d, np.inf)
    nearest = np.argmin(d, axis=1)
    within = d[np.arange(len(nu)), nearest] < tau
    return np.where(within, nearest, -1)


@dataclass
class LocalMomentReport:
    """Per-spike local masses, means, weighted biases and covariances of a
    measure relative to a reference minimizer, plus the far-field mass."""

    tau: float
    alpha: float
    beta: float
    bar_r_sq: np.ndarray        # nu(Theta_i)
    bar_theta: np.ndarray       # local means as points, (m*, ambient)
    b_r: np.ndarray             # (bar_r^2 - r_i^2) / (2 alpha r_i)
    b_theta: np.ndarray         # (bar_r^2 / (beta r_i)) (bar_theta - theta_i), normal coords
    sigma: np.ndarray           # weighted covariances, (m*, d, d)
    s: np.ndarray               # bar_r * sqrt(tr Sigma)
    bar_r0_sq: float            # nu(Theta_0)
    cell_index: np.ndarray      # per-atom cell assignment, -1 = far field

    def b_vector(self):
        """Interleaved (b_r_i, b_theta_i) vector of length m*(1+d)."""
        return np.concatenate(
            [np.concatenate([[self.b_r[i]], self.b_theta[i]]) for i in range(len(self.b_r))]
        )

    def to_json_dict(self):
        return {
            "tau": self.tau,
            "alpha": self.alpha,
            "beta": self.beta,
            "bar_r_sq": self.bar_r_sq.tolist(),
            "bar_theta": self.bar_theta.tolist(),
            "b_r": self.b_r.tolist(),
            "b_theta": self.b_theta.tolist(),
            "sigma": {"dims": list(self.sigma.shape), "data": self.sigma.ravel().tolist()},
            "s": self.s.tolist(),
            "bar_r0_sq": self.bar_r0_sq,
        }


def local_moments(
    nu: DiscreteMeasure,
    reference: DiscreteMeasure,
    tau: float,
    alpha: float = 1.0,
    beta: float = 1.0,
) -> LocalMomentReport:
    """Moments of Definition-style cells Theta_i = {dist(theta, theta_i) < tau},
    computed in normal coordinates at each reference spike."""
    cell = _assign_cells(nu, reference, tau)
    man = nu.manifold
    m_star = len(reference)
    d = man.dim
    bar_r_sq = np.zeros(m_star)
    bar_theta = reference.positions.copy()
    b_r = np.zeros(m_star)
    b_theta = np.zeros((m_star, d))
    sigma = np.zeros((m_star, d, d))
    s = np.zeros(m_star)
    for i in range(m_star):
        r_i = np.sqrt(reference.masses[i])
        mask = cell == i
        w = nu.masses[mask]
        tot = float(np.sum(w))
        bar_r_sq[i] = tot
        b_r[i] = (tot - reference.masses[i]) / (2.0 * alpha * r_i)
        if tot <= 0.0:
            continue
        logs = man.log(reference.positions[i], nu.positions[mask])
        basis = man.tangent_basis(reference.positions[i])
        coords = logs @ basis  # (n_cell, d) normal coordinates
        mean = w @ coords / tot
        bar_theta[i] = man.canonicalize(man.exp(reference.positions[i], basis @ mean))
        b_theta[i] = tot / (beta * r_i) * mean
        centered = coords - mean
        sigma[i] = (centered * w[:, None]).T @ centered / (tot * beta ** 2)
        s[i] = np.sqrt(tot) * np.sqrt(np.trace(sigma[i]))
    # complement form keeps the partition identity exact in floats
    bar_r0_sq = float(np.sum(nu.masses) - np.sum(bar_r_sq))
    return LocalMomentReport(
        tau=tau, alpha=alpha, beta=beta, bar_r_sq=bar_r_sq, bar_theta=bar_theta,
        b_r=b_r, b_theta=b_theta, sigma=sigma, s=s, bar_r0_sq=bar_r0_sq,
        cell_index=cell,
    )


@dataclass
class KernelReport:
    """Global kernel K and concatenated local kernels H at a reference
    minimizer, with their smallest singular values (non-degeneracy check)."""

    alpha: float
    beta: float
    K: np.ndarray
    H: np.ndarray
    H_blocks: np.ndarray
    sigma_min_K: float
    sigma_min_H: float

    def to_json_dict(self):
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "K": {"dims": list(self.K.shape), "data": self.K.ravel().tolist()},
            "H": {"dims": list(self.H.shape), "data": self.H.ravel().tolist()},
            "sigma_min_K": self.sigma_min_K,
            "sigma_min_H": self.sigma_min_H,
        }


def compute_kernels(
    spec: ProblemSpec, reference: DiscreteMeasure, alpha: float = 1.0, beta: float = 1.0,
) -> KernelReport:
    """K[(i,j),(i',j')] = <r_i nabla~_j phi(theta_i), r_i' nabla~_j' phi(theta_i')>
    with nabla~ = (2 alpha phi, beta grad phi); H_i = beta^2 hess J'_{nu*}(theta_i)."""
    if np.any(reference.masses <= 0):
        raise InvalidInputError("reference spikes must all carry positive mass")
    man = spec.manifold
    d = man.dim
    m_star = len(reference)
    P = reference.positions
    r = np.sqrt(reference.masses)
    feats = spec.features
    kval = feats.kernel(P, P)
    g1 = feats.grad1_kernel(P, P)
    cross = feats.cross_kernel(P, P)
    basis = man.tangent_basis(P)  # (m*, ambient, d)
    g1_coords = np.einsum("abj,ajd->abd", g1, basis)
    size = m_star * (1 + d)
    K = np.zeros((size, size))
    for i in range(m_star):
        for ip in range(m_star):
            blk = np.zeros((1 + d, 1 + d))
            blk[0, 0] = 4.0 * alpha ** 2 * kval[i, ip]
            # <2a phi_i, b grad_j' phi_i'> = 2ab d/dtheta'_{j'} k(theta_i, theta_i')
            blk[0, 1:] = 2.0 * alpha * beta * g1_coords[ip, i]
            blk[1:, 0] = 2.0 * alpha * beta * g1_coords[i, ip]
            blk[1:, 1:] = beta ** 2 * cross[i, ip]
            K[
                i * (1 + d): (i + 1) * (1 + d), ip * (1 + d): (ip + 1) * (1 + d)
            ] = r[i] * r[ip] * blk
    field = FirstVariationField(spec, reference)
    hess = field.hessians(P, reference.signs)
    H = np.zeros((size, size))
    H_blocks = beta ** 2 * hess
    for i in range(m_star):
        lo = i * (1 + d) + 1
        H[lo: lo + d, lo: lo + d] = H_blocks[i]
    sigma_min_K = float(np.linalg.svd(K, compute_uv=False).min())
    sigma_min_H = float(min(np.linalg.svd(Hb, compute_uv=False).min() for Hb in H_blocks))
    return KernelReport(
        alpha=alpha, beta=beta, K=K, H=H, H_blocks=H_blocks,
        sigma_min_K=sigma_min_K, sigma_min_H=sigma_min_H,
    )


@dataclass
class ExpansionReport:
    predicted_gap: float
    true_gap: float
    gap_residual: float
    predicted_grad_sq: float
    true_grad_sq: float
    grad_residual: float

    def to_json_dict(self):
        return {
            "predicted_gap": self.predicted_gap,
            "true_gap": self.true_gap,
            "gap_residual": self.gap_residual,
            "predicted_grad_sq": self.predicted_grad_sq,
            "true_grad_sq": self.true_grad_sq,
            "grad_residual": self.grad_residual,
        }


def expansion_residual(
    spec: ProblemSpec,
    nu: DiscreteMeasure,
    reference: DiscreteMeasure,
    j_star: float,
    tau: float,
    alpha: float = 1.0,
    beta: float = 1.0,
) -> ExpansionReport:
    """Second-order expansions of the gap and of half the squared gradient
    norm around the reference minimizer, evaluated from the local moments and
    kernels, against their exact values.

    The gap identity holds for any (alpha, beta); the gradient-side identity
    is stated in the alpha = beta = 1 normalization (under joint scaling the
    predicted side picks up an extra factor of the scale)."""
    mom = local_moments(nu, reference, tau, alpha, beta)
    ker = compute_kernels(spec, reference, alpha, beta)
    b = mom.b_vector()
    KH = ker.K + ker.H
    r_sq = reference.masses
    trace_h = sum(
        r_sq[i] * np.trace(mom.sigma[i] @ ker.H_blocks[i]) for i in range(len(reference))
    )
    trace_h2 = sum(
        r_sq[i] * np.trace(mom.sigma[i] @ ker.H_blocks[i] @ ker.H_blocks[i])
        for i in range(len(reference))
    )
    far = mom.cell_index == -1
    far_gap = 0.0
    far_grad = 0.0
    if np.any(far):
        ref_field = FirstVariationField(spec, reference)
        far_gap = float(
            nu.masses[far] @ ref_field.values(nu.positions[far], nu.signs[far])
        )
        nu_field = FirstVariationField(spec, nu)
        vals = nu_field.values(nu.positions[far], nu.signs[far])
        grads = nu_field.grads(nu.positions[far], nu.signs[far])
        far_grad = float(
            nu.masses[far] @ (4.0 * alpha * vals ** 2 + beta * np.sum(grads ** 2, axis=1))
        )
    predicted_gap = 0.5 * float(b @ KH @ b) + 0.5 * trace_h + far_gap
    true_gap = objective(spec, nu) - j_star
    predicted_grad = 0.5 * float(b @ KH @ KH @ b) + 0.5 * trace_h2 + 0.5 * far_grad
    true_grad = 0.5 * grad_norm_sq(spec, nu, alpha, beta)
    return ExpansionReport(
        predicted_gap=predicted_gap,
        true_gap=true_gap,
        gap_residual=abs(predicted_gap - true_gap),
        predicted_grad_sq=predicted_grad,
        true_grad_sq=true_grad,
        grad_residual=abs(predicted_grad - true_grad),
    )


def sharpness_ratio(
    spec: ProblemSpec, nu: DiscreteMeasure, j_star: float, alpha: float, beta: float,
):
    """0.5 |g_nu|^2 / (J(nu) - J*); None when the gap is below 1e-14 (0/0 guard)."""
    gap = objective(spec, nu) - j_star
    if gap < 1e-14:
        return None
    return 0.5 * grad_norm_sq(spec, nu, alpha, beta) / gap


def cone_w2_upper(nu: DiscreteMeasure, reference: DiscreteMeasure, tau: float) -> float:
    """Cost of the explicit transport plan sending each cell's mass to its
    spike (with radial rescaling) and the far field to the apex, in the
    alpha = beta = 1 cone metric.  Upper-bounds the unbalanced transport
    distance between nu and the reference."""
    cell = _assign_cells(nu, reference, tau)
    man = nu.manifold
    total = 0.0
    for i in range(len(reference)):
        mask = cell == i
        w = nu.masses[mask]
        bar_sq = float(np.sum(w))
        if bar_sq <= 0.0:
            total += reference.masses[i]  # mass created from the apex
            continue
        c = np.sqrt(reference.masses[i]) / np.sqrt(bar_sq)
        ang = man.dist(nu.positions[mask], reference.positions[i])
        total += float(np.sum(w * (1.0 + c ** 2 - 2.0 * c * cos_pi(ang))))
    total += float(np.sum(nu.masses[cell == -1]))
    return float(np.sqrt(max(total, 0.0)))


def prior_quality(reference: DiscreteMeasure, rho_density, rho_mass: float) -> float:
    """H-bar(nu*, rho) = sum r_i^2 log(r_i^2 / rho(theta_i)) - nu*(Theta) + rho(Theta)."""
    dens = np.array([float(rho_density(p)) for p in reference.positions])
    if np.any(dens <= 0.0):
        raise InvalidInputError("the reference density must be positive at every spike")
    w = reference.masses
    return float(np.sum(w * np.log(w / dens)) - np.sum(w) + rho_mass)


def mirror_rate_bound(
    prior_quality_value: float,
    nu_star_mass: float,
    rho_mass: float,
    d: int,
    lipschitz_log_density: float,
    c_theta: float,
    tau: float,
) -> float:
    """Closed-form upper bound on the mirror rate function at tau:
    (nu*(Theta) d (C_Theta + log tau + L/tau) + rho(Theta) - nu*(Theta)
     + sum r_i^2 log(r_i^2/rho(theta_i))) / tau."""
    if tau <= 0:
        raise InvalidInputError(f"tau must be > 0, got {tau}")
    sum_term = prior_quality_value + nu_star_mass - rho_mass
    numer = (
        nu_star_mass * d * (c_theta + np.log(tau) + lipschitz_log_density / tau)
        + rho_mass - nu_star_mass + sum_term
    )
    return float(numer / tau)


def rate_fit(iters, gaps, window, model):
    """Least-squares fit of log(gap) against k (``Exponential``) or log(k)
    (``PowerLaw``) over the iteration window (inclusive); returns
    (slope, r_squared)."""
    iters = np.asarray(iters, dtype=float)
    gaps = np.asarray(gaps, dtype=float)
    lo, hi = window
    mask = (iters >= lo) & (iters <= hi)
    if model == "PowerLaw":
        mask &= iters > 0
    if mask.sum() < 2:
        raise InvalidInputError("rate window must contain at least two iterations")
    k = iters[mask]
    g = gaps[mask]
    if np.any(~np.isfinite(g)) or np.any(g <= 0.0):
        raise InvalidInputError("rate fits require strictly positive gaps in the window")
    x = k if model == "Exponential" else np.log(k)
    if model not in ("Exponential", "PowerLaw"):
        raise InvalidInputError(f"unknown rate model {model!r}")
    y = np.log(g)
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(slope), float(r2)
