"""Optimization problems over measures: discrete measures, feature/kernel
models (Dirichlet low-pass filter, 2-homogeneous ReLU features on the sphere,
scalar features), the regularized objective, its first variation with spatial
derivatives, signed-measure doubling, and the global optimality certificate.
"""
from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, InvalidInputError
from .manifold import Manifold, Sphere, Torus

# ---------------------------------------------------------------------------
# discrete measures


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finite nonnegative measure sum_a masses[a] * delta_{positions[a]}.

    Signs tag the copy of the doubled space an atom lives on (signed
    problems); all signs are +1 in unsigned problems.
    """

    manifold: Manifold
    masses: np.ndarray
    positions: np.ndarray
    signs: np.ndarray = None

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.masses, dtype=float))
        p = np.asarray(self.positions, dtype=float)
        if p.ndim == 1:
            p = p.reshape(len(m), -1) if len(m) else p.reshape(0, self.manifold.ambient_dim)
        s = self.signs
        s = np.ones(len(m), dtype=int) if s is None else np.atleast_1d(np.asarray(s, dtype=int))
        if len(m) != len(p) or len(m) != len(s):
            raise InvalidInputError("masses, positions and signs must have equal length")
        if np.any(m < 0):
            raise InvalidInputError("atom masses must be nonnegative")
        if len(p):
            p = self.manifold.check_point(self.manifold.canonicalize(p))
        if np.any((s != 1) & (s != -1)):
            raise InvalidInputError("atom signs must be +1 or -1")
        object.__setattr__(self, "masses", m)
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "signs", s)

    @classmethod
    def empty(cls, manifold):
        return cls(manifold, np.zeros(0), np.zeros((0, manifold.ambient_dim)))

    @classmethod
    def from_atoms(cls, manifold, atoms):
        """Build from an iterable of (mass, position[, sign]) tuples."""
        atoms = list(atoms)
        if not atoms:
            return cls.empty(manifold)
        masses = [a[0] for a in atoms]
        positions = [np.atleast_1d(a[1]) for a in atoms]
        signs = [a[2] if len(a) > 2 else 1 for a in atoms]
        return cls(manifold, np.array(masses), np.array(positions), np.array(signs))

    def __len__(self):
        return len(self.masses)

    @property
    def total_mass(self):
        """Unsigned total mass."""
        return float(np.sum(self.masses))

    @property
    def is_signed(self):
        return bool(np.any(self.signs < 0))

    def restrict(self, mask):
        return DiscreteMeasure(self.manifold, self.masses[mask], self.positions[mask], self.signs[mask])

    def atoms(self):
        for w, p, s in zip(self.masses, self.positions, self.signs):
            yield float(w), p, int(s)


def merge_coefficients(positions, coeffs):
    """Sum coefficients of atoms at bitwise-identical positions.

    Guarantees exact cancellation when a measure is compared against itself
    (teacher reproduction); summing over the raw union of atom lists would
    leave float residue.
    """
    if len(positions) == 0:
        return positions, coeffs
    positions = np.ascontiguousarray(positions)
    view = positions.view(
        np.dtype((np.void, positions.dtype.itemsize * positions.shape[1]))
    ).ravel()
    uniq, first_idx, inverse = np.unique(view, return_index=True, return_inverse=True)
    summed = np.zeros(len(uniq))
    np.add.at(summed, inverse, coeffs)
    keep = summed != 0.0
    return positions[first_idx[keep]], summed[keep]


# ---------------------------------------------------------------------------
# feature models


class FeatureModel(abc.ABC):
    """Feature map phi: Theta -> F exposed through its kernel and derivatives.

    ``grad1_kernel`` returns Riemannian gradients in the ambient tangent
    representation; ``hess1_kernel`` and ``cross_kernel`` return matrices in
    the normal-coordinate frames given by ``manifold.tangent_basis``.
    """

    manifold: Manifold
    mode = "exact_kernel"

    @abc.abstractmethod
    def kernel(self, A, B):
        """k(theta, theta') for all pairs; shape (na, nb)."""

    @abc.abstractmethod
    def grad1_kernel(self, A, B):
        """Gradient in the first argument; shape (na, nb, ambient_tangent)."""

    @abc.abstractmethod
    def hess1_kernel(self, A, B):
        """Hessian in the first argument, normal coordinates; shape (na, nb, d, d)."""

    @abc.abstractmethod
    def cross_kernel(self, A, B):
        """Mixed derivative d2k/(dtheta dtheta'), normal coordinates; (na, nb, d, d)."""

    # -- residual machinery -------------------------------------------------
    # The residual f_nu - f_teacher (+ scalar offset where supported) is kept
    # in a model-specific dual representation so objective and first-variation
    # evaluations stay cheap.

    def make_residual(self, coeffs, positions, offset=0.0):
        if offset != 0.0:
            raise InvalidInputError("offsets are only supported by scalar feature models")
        positions, coeffs = merge_coefficients(positions, coeffs)
        return ("atoms", coeffs, positions)

    def residual_norm_sq(self, res):
        _, c, P = res
        if len(c) == 0:
            return 0.0
        return float(c @ self.kernel(P, P) @ c)

    def eval_residual(self, res, Q):
        """<phi(theta), residual>_F for each theta in Q; shape (nq,)."""
        _, c, P = res
        if len(c) == 0:
            return np.zeros(len(Q))
        return self.kernel(Q, P) @ c

    def grad_residual(self, res, Q):
        _, c, P = res
        if len(c) == 0:
            return np.zeros((len(Q), self.manifold.ambient_dim))
        return np.einsum("qpt,p->qt", self.grad1_kernel(Q, P), c)

    def hess_residual(self, res, Q):
        d = self.manifold.dim
        _, c, P = res
        if len(c) == 0:
            return np.zeros((len(Q), d, d))
        return np.einsum("qpij,p->qij", self.hess1_kernel(Q, P), c)


def _dirichlet_sums(n_f, u, order):
    """Dirichlet kernel D_n(u) = 1 + 2 sum_{k<=n} cos(ku) and its derivatives."""
    u = np.asarray(u, dtype=float)
    out = np.ones_like(u) if order == 0 else np.zeros_like(u)
    for k in range(1, n_f + 1):
        if order == 0:
            out = out + 2.0 * np.cos(k * u)
        elif order == 1:
            out = out - 2.0 * k * np.sin(k * u)
        else:
            out = out - 2.0 * k * k * np.cos(k * u)
    return out


class DirichletFeatures(FeatureModel):
    """Translates of the Dirichlet low-pass filter of order ``n_f`` on the
    1- or 2-torus; the 2D kernel is the tensor product of 1D kernels."""

    def __init__(self, d, n_f):
        if d not in (1, 2):
            raise InvalidInputError(f"Dirichlet features exist for d in {{1, 2}}, got {d}")
        if n_f < 1:
            raise InvalidInputError(f"filter order must be >= 1, got {n_f}")
        self.manifold = Torus(d)
        self.n_f = int(n_f)

    def _diffs(self, A, B):
        return np.asarray(A, dtype=float)[:, None, :] - np.asarray(B, dtype=float)[None, :, :]

    def kernel(self, A, B):
        U = self._diffs(A, B)
        out = _dirichlet_sums(self.n_f, U[..., 0], 0)
        for c in range(1, self.manifold.dim):
            out = out * _dirichlet_sums(self.n_f, U[..., c], 0)
        return out

    def grad1_kernel(self, A, B):
        U = self._diffs(A, B)
        d = self.manifold.dim
        D = [_dirichlet_sums(self.n_f, U[..., c], 0) for c in range(d)]
        D1 = [_dirichlet_sums(self.n_f, U[..., c], 1) for c in range(d)]
        out = np.empty(U.shape)
        for j in range(d):
            g = D1[j]
            for c in range(d):
                if c != j:
                    g = g * D[c]
            out[..., j] = g
        return out

    def hess1_kernel(self, A, B):
        U = self._diffs(A, B)
        d = self.manifold.dim
        D = [_dirichlet_sums(self.n_f, U[..., c], 0) for c in range(d)]
        D1 = [_dirichlet_sums(self.n_f, U[..., c], 1) for c in range(d)]
        D2 = [_dirichlet_sums(self.n_f, U[..., c], 2) for c in range(d)]
        out = np.empty(U.shape[:-1] + (d, d))
        for j in range(d):
            for jp in range(d):
                if j == jp:
                    h = D2[j]
                    for c in range(d):
                        if c != j:
                            h = h * D[c]
                else:
                    h = D1[j] * D1[jp]
                    for c in range(d):
                        if c != j and c != jp:
                            h = h * D[c]
                out[..., j, jp] = h
        return out

    def cross_kernel(self, A, B):
        # each second-argument derivative flips the sign of one difference
        # derivative, so the mixed block is the negated Hessian block
        return -self.hess1_kernel(A, B)


class ScalarFeatures(FeatureModel):
    """Scalar feature phi: Theta -> R with F = R; kernel k = phi * phi'."""

    def __init__(self, manifold, phi, dphi, ddphi, name="custom"):
        self.manifold = manifold
        self._phi, self._dphi, self._ddphi = phi, dphi, ddphi
        self.name = name

    def phi(self, P):
        P = np.asarray(P, dtype=float)
        return np.array([float(self._phi(p)) for p in P])

    def dphi(self, P):
        P = np.asarray(P, dtype=float)
        return np.stack([np.atleast_1d(np.asarray(self._dphi(p), dtype=float)) for p in P])

    def ddphi(self, P):
        P = np.asarray(P, dtype=float)
        return np.stack([np.atleast_2d(np.asarray(self._ddphi(p), dtype=float)) for p in P])

    def kernel(self, A, B):
        return np.outer(self.phi(A), self.phi(B))

    def grad1_kernel(self, A, B):
        return self.dphi(A)[:, None, :] * self.phi(B)[None, :, None]

    def hess1_kernel(self, A, B):
        return self.ddphi(A)[:, None, :, :] * self.phi(B)[None, :, None, None]

    def cross_kernel(self, A, B):
        return self.dphi(A)[:, None, :, None] * self.dphi(B)[None, :, None, :]

    def make_residual(self, coeffs, positions, offset=0.0):
        value = float(offset)
        if len(coeffs):
            value += float(self.phi(positions) @ coeffs)
        return ("scalar", value)

    def residual_norm_sq(self, res):
        return res[1] ** 2

    def eval_residual(self, res, Q):
        return self.phi(Q) * res[1]

    def grad_residual(self, res, Q):
        return self.dphi(Q) * res[1]

    def hess_residual(self, res, Q):
        return self.ddphi(Q) * res[1]


class ReluHomFeatures(FeatureModel):
    """Positively 2-homogeneous ReLU features on the sphere with a frozen
    empirical sample defining the Hilbert space: F = R^N, <f, g> = mean(f*g).

    phi(theta): x -> max(<x, u(theta)>, 0) with u(theta)_j = theta_j*|theta_j|.
    Derivatives use subgradient 0 at the ReLU kink; ``kink_tol`` flags
    evaluation points sitting essentially on a kink.
    """

    mode = "empirical_sample"
    kink_tol = 1e-9

    def __init__(self, ambient_dim, data_sample_size, seed=0):
        if data_sample_size < 1:
            raise InvalidInputError(f"data sample size must be >= 1, got {data_sample_size}")
        if ambient_dim < 2:
            raise InvalidInputError(f"ambient dimension must be >= 2, got {ambient_dim}")
        self.manifold = Sphere(ambient_dim - 1)
        rng = np.random.default_rng(seed)
        self.data = self.manifold.sample_uniform(rng, data_sample_size)
        self.n_samples = int(data_sample_size)

    @staticmethod
    def lift(P):
        """u(theta)_j = theta_j * |theta_j|."""
        P = np.asarray(P, dtype=float)
        return P * np.abs(P)

    def fresh_batch(self, rng, size):
        """Streaming sampler: fresh data points uniform on the sphere."""
        return self.manifold.sample_uniform(rng, size)

    def feature_matrix(self, P, data=None):
        """phi(theta_a)(x_n) as an (N, na) matrix."""
        X = self.data if data is None else data
        return np.maximum(X @ self.lift(P).T, 0.0)

    def near_kink(self, P, data=None):
        """Fraction of data points within kink_tol of each point's ReLU kink."""
        X = self.data if data is None else data
        S = X @ self.lift(P).T
        return np.mean(np.abs(S) < self.kink_tol, axis=0)

    def kernel(self, A, B, data=None):
        X = self.data if data is None else data
        return self.feature_matrix(A, X).T @ self.feature_matrix(B, X) / len(X)

    def _core(self, A, FB, data=None):
        """C[a,b,j] = mean_n mask_na FB_nb X_nj (shared by grad/hess blocks)."""
        X = self.data if data is None else data
        S = X @ self.lift(A).T
        mask = (S > 0.0).astype(float)
        return np.einsum("na,nb,nj->abj", mask, FB, X) / len(X)

    def grad1_kernel(self, A, B, data=None):
        X = self.data if data is None else data
        A = np.asarray(A, dtype=float)
        C = self._core(A, self.feature_matrix(B, X), X)
        amb = C * (2.0 * np.abs(A))[:, None, :]
        return amb - np.einsum("abj,aj->ab", amb, A)[:, :, None] * A[:, None, :]

    def hess1_kernel(self, A, B, data=None):
        X = self.data if data is None else data
        A = np.asarray(A, dtype=float)
        C = self._core(A, self.feature_matrix(B, X), X)
        grad_amb = C * (2.0 * np.abs(A))[:, None, :]
        radial = np.einsum("abj,aj->ab", grad_amb, A)
        diag = C * (2.0 * np.sign(A))[:, None, :]
        basis = self.manifold.tangent_basis(A)
        term = np.einsum("ajd,abj,aje->abde", basis, diag, basis)
        eye = np.eye(self.manifold.dim)
        return term - radial[:, :, None, None] * eye

    def cross_kernel(self, A, B, data=None):
        X = self.data if data is None else data
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float)
        maskA = (X @ self.lift(A).T > 0.0).astype(float)
        maskB = (X @ self.lift(B).T > 0.0).astype(float)
        gA = np.einsum("na,nj->anj", maskA, X) * (2.0 * np.abs(A))[:, None, :]
        gB = np.einsum("nb,nj->bnj", maskB, X) * (2.0 * np.abs(B))[:, None, :]
        gA_t = np.einsum("anj,ajd->and", gA, self.manifold.tangent_basis(A))
        gB_t = np.einsum("bnj,bjd->bnd", gB, self.manifold.tangent_basis(B))
        return np.einsum("and,bne->abde", gA_t, gB_t) / len(X)

    # -- residual machinery on the frozen (or a fresh) sample ---------------

    def make_residual(self, coeffs, positions, offset=0.0, data=None):
        if offset != 0.0:
            raise InvalidInputError("offsets are only supported by scalar feature models")
        X = self.data if data is None else data
        if len(coeffs) == 0:
            return ("empirical", np.zeros(len(X)), X)
        positions, coeffs = merge_coefficients(positions, coeffs)
        if len(coeffs) == 0:
            return ("empirical", np.zeros(len(X)), X)
        return ("empirical", self.feature_matrix(positions, X) @ coeffs, X)

    def residual_norm_sq(self, res):
        _, resid, _ = res
        return float(resid @ resid) / len(resid)

    def eval_residual(self, res, Q):
        _, resid, X = res
        return self.feature_matrix(Q, X).T @ resid / len(X)

    def _grad_pieces(self, res, Q):
        _, resid, X = res
        Q = np.asarray(Q, dtype=float)
        S = X @ self.lift(Q).T
        mask = (S > 0.0).astype(float)
        core = (X.T @ (mask * resid[:, None])).T / len(X)  # (nq, amb)
        return Q, core

    def grad_residual(self, res, Q):
        Q, core = self._grad_pieces(res, Q)
        amb = core * (2.0 * np.abs(Q))
        return amb - np.sum(amb * Q, axis=1, keepdims=True) * Q

    def hess_residual(self, res, Q):
        Q, core = self._grad_pieces(res, Q)
        grad_amb = core * (2.0 * np.abs(Q))
        radial = np.sum(grad_amb * Q, axis=1)
        diag = core * (2.0 * np.sign(Q))
        basis = self.manifold.tangent_basis(Q)
        term = np.einsum("qjd,qj,qje->qde", basis, diag, basis)
        eye = np.eye(self.manifold.dim)
        return term - radial[:, None, None] * eye


# ---------------------------------------------------------------------------
# problem specification and first variation


@dataclass(frozen=True)
class ProblemSpec:
    """Square-loss teacher-student problem over nonnegative (or doubled
    signed) measures: J(nu) = 0.5 * |f_nu - f_teacher + offset|^2 + lam * nu(Theta).

    ``offset`` shifts the target in F and is supported by scalar models only.
    """

    features: FeatureModel
    teacher: DiscreteMeasure
    lam: float
    signed: bool = False
    offset: float = 0.0

    def __post_init__(self):
        if self.lam < 0:
            raise InvalidInputError(f"regularization strength must be >= 0, got {self.lam}")
        if self.teacher.manifold != self.features.manifold:
            raise DimensionMismatchError("teacher atoms do not live on the feature manifold")
        if not self.signed and self.teacher.is_signed:
            raise InvalidInputError("unsigned problems require all teacher signs to be +1")

    @property
    def manifold(self):
        return self.features.manifold

    def check_measure(self, nu):
        if nu.manifold != self.manifold:
            raise DimensionMismatchError("measure does not live on the problem manifold")
        if not self.signed and nu.is_signed:
            raise InvalidInputError("unsigned problems require all atom signs to be +1")
        return nu

    def residual(self, nu, data=None):
        """Dual representation of f_nu - f_teacher (+ offset)."""
        self.check_measure(nu)
        coeffs = np.concatenate([nu.signs * nu.masses, -self.teacher.signs * self.teacher.masses])
        positions = (
            np.concatenate([nu.positions, self.teacher.positions])
            if len(nu) or len(self.teacher)
            else nu.positions
        )
        kwargs = {"offset": self.offset}
        if data is not None:
            kwargs["data"] = data
        return self.features.make_residual(coeffs, positions, **kwargs)


class FirstVariationField:
    """The function J'_nu on Theta (and its derivatives), with the residual
    built once.  In signed mode the kernel terms flip on the negative copy."""

    def __init__(self, spec: ProblemSpec, nu: DiscreteMeasure, data=None):
        self.spec = spec
        self.res = spec.residual(nu, data=data)

    def _signs(self, n, signs):
        if signs is None:
            return 1.0
        return np.asarray(signs, dtype=float)

    def values(self, P, signs=None):
        v = self.spec.features.eval_residual(self.res, P)
        return self._signs(len(v), signs) * v + self.spec.lam

    def grads(self, P, signs=None):
        g = self.spec.features.grad_residual(self.res, P)
        s = self._signs(len(g), signs)
        return g * (s if np.isscalar(s) else s[:, None])

    def hessians(self, P, signs=None):
        h = self.spec.features.hess_residual(self.res, P)
        s = self._signs(len(h), signs)
        return h * (s if np.isscalar(s) else s[:, None, None])


def objective(spec: ProblemSpec, nu: DiscreteMeasure) -> float:
    """J(nu) = 0.5 |f_nu - f*|^2 + lam * nu(Theta) (unsigned total mass)."""
    res = spec.residual(nu)
    return 0.5 * spec.features.residual_norm_sq(res) + spec.lam * nu.total_mass


def first_variation(spec, nu, theta, sign=1) -> float:
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    field = FirstVariationField(spec, nu)
    return float(field.values(theta[None, :], np.array([sign]))[0])


def grad_first_variation(spec, nu, theta, sign=1):
    """Riemannian gradient of J'_nu at theta (ambient tangent representation)."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    field = FirstVariationField(spec, nu)
    return field.grads(theta[None, :], np.array([sign]))[0]

def hess_first_variation(spec, nu, theta, sign=1):
    """Hessian of J'_nu at theta in normal coordinates (d x d)."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    field = FirstVariationField(spec, nu)
    return field.hessians(theta[None, :], np.array([sign]))[0]


# ---------------------------------------------------------------------------
# factories

def make_dirichlet_features(d, n_f) -> DirichletFeatures:
    return DirichletFeatures(d, n_f)


def make_relu_hom_features(ambient_dim, data_sample_size, seed=0) -> ReluHomFeatures:
    return ReluHomFeatures(ambient_dim, data_sample_size, seed=seed)


def make_scalar_features(manifold=None, kind="cos", samples=None) -> ScalarFeatures:
    """Scalar feature model from a closed-form id ("cos") or from samples.

    Samples are (point, value) pairs on the 1-torus, interpolated by a
    periodic cubic spline.
    """
    manifold = Torus(1) if manifold is None else manifold
    if samples is not None:
        from scipy.interpolate import CubicSpline

        pts = np.array([np.atleast_1d(p)[0] for p, _ in samples], dtype=float)
        vals = np.array([v for _, v in samples], dtype=float)
        order = np.argsort(pts)
        pts, vals = pts[order], vals[order]
        xs = np.concatenate([pts, [pts[0] + 2 * np.pi]])
        ys = np.concatenate([vals, [vals[0]]])
        spline = CubicSpline(xs, ys, bc_type="periodic")
        return ScalarFeatures(
            manifold,
            phi=lambda p: float(spline(np.mod(p[0], 2 * np.pi))),
            dphi=lambda p: np.array([float(spline(np.mod(p[0], 2 * np.pi), 1))]),
            ddphi=lambda p: np.array([[float(spline(np.mod(p[0], 2 * np.pi), 2))]]),
            name="spline",
        )
    if kind == "cos":
        return ScalarFeatures(
            manifold,
            phi=lambda p: np.cos(p[0]),
            dphi=lambda p: np.array([-np.sin(p[0])]),
            ddphi=lambda p: np.array([[-np.cos(p[0])]]),
            name="cos",
        )
    raise InvalidInputError(f"unknown scalar feature id {kind!r}")


def generic_objective(phi_model: ScalarFeatures, lam: float, nu: DiscreteMeasure) -> float:
    """J(nu) = 0.5 * (2 + int phi dnu)^2 + lam * nu(Theta)."""
    spec = make_generic_problem(phi_model, lam)
    return objective(spec, nu)


def make_generic_problem(phi_model: ScalarFeatures, lam: float) -> ProblemSpec:
    """The scalar reduction as a ProblemSpec (offset target 2 in F = R)."""
    teacher = DiscreteMeasure.empty(phi_model.manifold)
    return ProblemSpec(features=phi_model, teacher=teacher, lam=lam, offset=2.0)


def generic_optimal_mass(phi_star: float, lam: float) -> float:
    """Closed-form optimal total mass max(0, (-2 phi* - lam) / phi*^2)."""
    if phi_star >= 0:
        raise InvalidInputError("the scalar reduction requires phi* < 0")
    return max(0.0, (-2.0 * phi_star - lam) / phi_star ** 2)


# ---------------------------------------------------------------------------
# signed measures (doubling)


def lift_signed(features: FeatureModel, teacher: DiscreteMeasure, lam: float) -> ProblemSpec:
    """Build the doubled problem for a signed teacher: atoms carry sign tags,
    geometry is shared between the two copies."""
    return ProblemSpec(features=features, teacher=teacher, lam=lam, signed=True)


def split_signed(nu: DiscreteMeasure):
    """Jordan-style decomposition by sign tag: (positive part, negative part)."""
    return nu.restrict(nu.signs > 0), nu.restrict(nu.signs < 0)


# ---------------------------------------------------------------------------
# optimality certificate


@dataclass
class CertificateReport:
    passed: bool
    tol: float
    grid_min: float
    worst_grid_location: np.ndarray
    worst_grid_sign: int
    atom_values: np.ndarray
    atom_worst: float
    mass_tol: float
    grid_size: int

    def to_json_dict(self):
        return {
            "pass": bool(self.passed),
            "tol": self.tol,
            "grid_min": self.grid_min,
            "worst_grid_location": [float(x) for x in np.atleast_1d(self.worst_grid_location)],
            "worst_grid_sign": int(self.worst_grid_sign),
            "atom_values": [float(v) for v in self.atom_values],
            "atom_worst": float(self.atom_worst),
            "mass_tol": self.mass_tol,
            "grid_size": int(self.grid_size),
        }


def certify_optimality(
    spec: ProblemSpec,
    nu: DiscreteMeasure,
    grid_size: int = None,
    tol: float = 1e-5,
    mass_tol: float = None,
) -> CertificateReport:
    """Scan the first variation: optimality requires J'_nu >= 0 on Theta and
    J'_nu = 0 on the support.  Torus problems only (grid scan)."""
    manifold = spec.manifold
    if manifold.kind != "torus":
        raise InvalidInputError("the optimality certificate scans a torus grid")
    if grid_size is None:
        per_unit = 50.0
        grid_size = int(np.ceil(per_unit * 2 * np.pi)) ** manifold.dim
    grid, _ = manifold.uniform_grid(grid_size)
    field = FirstVariationField(spec, nu)
    copies = (1, -1) if spec.signed else (1,)
    grid_min, worst_loc, worst_sign = np.inf, grid[0], 1
    for s in copies:
        vals = field.values(grid, np.full(len(grid), s))
        i = int(np.argmin(vals))
        if vals[i] < grid_min:
            grid_min, worst_loc, worst_sign = float(vals[i]), grid[i], s
    if mass_tol is None:
        mass_tol = 1e-10 * max(nu.total_mass, 1.0)
    supported = nu.masses > mass_tol
    if np.any(supported):
        atom_values = field.values(nu.positions[supported], nu.signs[supported])
        atom_worst = float(np.max(np.abs(atom_values)))
    else:
        atom_values = np.zeros(0)
        atom_worst = 0.0
    passed = (grid_min >= -tol) and (atom_worst <= tol)
    return CertificateReport(
        passed=passed,
        tol=tol,
        grid_min=grid_min,
        worst_grid_location=worst_loc,
        worst_grid_sign=worst_sign,
        atom_values=atom_values,
        atom_worst=atom_worst,
        mass_tol=mass_tol,
        grid_size=grid_size,
    )
