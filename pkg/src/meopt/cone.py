"""The cone over the parameter space: R+ x Theta with the conic metric,
its geodesic distance, and the three cone-compatible retractions
(canonical, mirror, induced)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateStepError,
    DimensionMismatchError,
    StepTooLargeError,
    UnsupportedRetractionError,
)
from .manifold import ManifoldPoint, Manifold, Sphere, TangentVector

RETRACTION_KINDS = ("canonical", "mirror", "induced")


@dataclass(frozen=True)
class ConeParticle:
    """Lifted variable (r, theta); the carried mass is r**2.

    The sign is bookkeeping for problems over signed measures (two copies of
    the base space sharing one chart); the cone geometry ignores it.
    """

    r: float
    pos: ManifoldPoint
    sign: int = 1

    def __post_init__(self):
        if self.r < 0.0:
            raise ValueError(f"mass parameter r must be >= 0, got {self.r}")
        if self.sign not in (-1, 1):
            raise ValueError(f"sign must be +1 or -1, got {self.sign}")

    @property
    def mass(self):
        return self.r ** 2


@dataclass(frozen=True)
class ConeTangent:
    dr: float
    dpos: TangentVector


def cos_pi(z):
    """cos of the angle clamped at pi."""
    return np.cos(np.minimum(z, np.pi))


def cone_dist(p: ConeParticle, q: ConeParticle) -> float:
    """Geodesic distance of the cone metric (alpha = beta = 1 normalization).

    Particles with r = 0 are all identified with the apex.
    """
    if p.pos.manifold != q.pos.manifold:
        raise DimensionMismatchError("cone particles live over different manifolds")
    d2 = cone_dist_sq_arrays(
        p.pos.manifold, np.array([p.r]), p.pos.coords[None], np.array([q.r]), q.pos.coords[None]
    )
    return float(np.sqrt(d2[0]))


def cone_dist_sq_arrays(manifold, r1, pos1, r2, pos2):
    """Vectorized squared cone distance; broadcasts over leading axes."""
    ang = manifold.dist(pos1, pos2)
    return r1 ** 2 + r2 ** 2 - 2.0 * r1 * r2 * cos_pi(ang)


def _check_based(p: ConeParticle, t: ConeTangent):
    if t.dpos.base.manifold != p.pos.manifold or not np.array_equal(
        t.dpos.base.coords, p.pos.coords
    ):
        raise DimensionMismatchError("cone tangent is not based at the particle position")


def retract_canonical(p: ConeParticle, t: ConeTangent) -> ConeParticle:
    """(r, theta) -> (r + dr, Ret_theta(dtheta)); requires |dr| < r."""
    _check_based(p, t)
    if p.r == 0.0:
        return p
    if abs(t.dr) >= p.r:
        raise StepTooLargeError(
            f"canonical retraction needs |dr| < r, got |{t.dr}| >= {p.r}; shrink the step"
        )
    man = p.pos.manifold
    new_pos = ManifoldPoint(man, man.retract(p.pos.coords, t.dpos.delta))
    return ConeParticle(p.r + t.dr, new_pos, p.sign)


def retract_mirror(p: ConeParticle, t: ConeTangent) -> ConeParticle:
    """(r, theta) -> (r * exp(dr / r), Ret_theta(dtheta)); total for r > 0."""
    _check_based(p, t)
    if p.r == 0.0:
        return p
    man = p.pos.manifold
    new_pos = ManifoldPoint(man, man.retract(p.pos.coords, t.dpos.delta))
    return ConeParticle(p.r * float(np.exp(t.dr / p.r)), new_pos, p.sign)


def retract_induced(p: ConeParticle, t: ConeTangent) -> ConeParticle:
    """Retraction induced by the isometric embedding of the cone over the
    sphere into Euclidean space: u = r*theta + theta*dr + r*dtheta,
    output (|u|, u/|u|)."""
    _check_based(p, t)
    man = p.pos.manifold
    if not isinstance(man, Sphere):
        raise UnsupportedRetractionError("the induced retraction requires the sphere")
    if p.r == 0.0:
        return p
    u = p.r * p.pos.coords + p.pos.coords * t.dr + p.r * t.dpos.delta
    norm = float(np.linalg.norm(u))
    if norm == 0.0:
        raise DegenerateStepError("induced retraction hit the apex: u = 0")
    return ConeParticle(norm, ManifoldPoint(man, u / norm), p.sign)


_RETRACTION_FUNCS = {
    "canonical": retract_canonical,
    "mirror": retract_mirror,
    "induced": retract_induced,
}


def get_retraction(kind):
    try:
        return _RETRACTION_FUNCS[kind]
    except KeyError:
        raise UnsupportedRetractionError(
            f"unknown retraction {kind!r}; expected one of {RETRACTION_KINDS}"
        ) from None


def retract_arrays(kind, manifold, r, pos, dr, dpos):
    """Vectorized retraction over particle arrays.

    r: (m,), pos: (m, amb), dr: (m,), dpos: (m, amb) tangent. Particles with
    r == 0 are left untouched (zero-preserving axiom).
    """
    r = np.asarray(r, dtype=float)
    alive = r > 0.0
    new_r = r.copy()
    new_pos = np.array(pos, dtype=float, copy=True)
    if not np.any(alive):
        return new_r, new_pos
    ra, pa, dra, dpa = r[alive], pos[alive], dr[alive], dpos[alive]
    if kind == "canonical":
        if np.any(np.abs(dra) >= ra):
            worst = float(np.max(np.abs(dra) / ra))
            raise StepTooLargeError(
                f"canonical retraction needs |dr|/r < 1, got {worst:.3g}; shrink the step"
            )
        new_r[alive] = ra + dra
        new_pos[alive] = manifold.retract(pa, dpa)
    elif kind == "mirror":
        new_r[alive] = ra * np.exp(dra / ra)
        new_pos[alive] = manifold.retract(pa, dpa)
    elif kind == "induced":
        if not isinstance(manifold, Sphere):
            raise UnsupportedRetractionError("the induced retraction requires the sphere")
        u = ra[:, None] * pa + pa * dra[:, None] + ra[:, None] * dpa
        norms = np.linalg.norm(u, axis=-1)
        if np.any(norms == 0.0):
            raise DegenerateStepError("induced retraction hit the apex: u = 0")
        new_r[alive] = norms
        new_pos[alive] = u / norms[:, None]
    else:
        raise UnsupportedRetractionError(
            f"unknown retraction {kind!r}; expected one of {RETRACTION_KINDS}"
        )
    return new_r, new_pos


@dataclass
class CompatibilityReport:
    """Per-axiom verdicts for the cone-compatibility check."""

    retraction: str
    samples: int
    first_order_ok: bool
    first_order_dev: float
    zero_preserving_ok: bool
    zero_preserving_dev: float
    homogeneity_ok: bool
    homogeneity_dev: float

    @property
    def all_ok(self):
        return self.first_order_ok and self.zero_preserving_ok and self.homogeneity_ok


def check_cone_compatibility(
    retraction,
    manifold: Manifold,
    samples: int = 1000,
    rng=None,
    first_order_tol: float = 1e-6,
    homogeneity_tol: float = 1e-12,
) -> CompatibilityReport:
    """Verify the three compatibility axioms on random inputs.

    (i) Ret_p(0) = p and first-order agreement (central differences),
    (ii) zero-preserving at r = 0, (iii) the homogeneity identity
    r~ * r1 = r * r2, exact up to ``homogeneity_tol``.
    ``retraction`` may be a kind name or a callable with the same signature.
    """
    if callable(retraction) and not isinstance(retraction, str):
        func, name = retraction, getattr(retraction, "__name__", "custom")
    else:
        func, name = get_retraction(retraction), retraction
    rng = np.random.default_rng(0) if rng is None else rng
    eps = 1e-5
    dev_first = 0.0
    dev_zero = 0.0
    dev_hom = 0.0
    for _ in range(samples):
        r = float(np.exp(rng.normal(0.0, 0.7)))
        pos = ManifoldPoint(manifold, manifold.sample_uniform(rng))
        raw = rng.normal(size=manifold.ambient_dim)
        delta = manifold.project_tangent(pos.coords, raw)
        nd = np.linalg.norm(delta)
        if nd > 0:
            delta = delta * (rng.uniform(0.05, 0.45) / nd)
        dr = rng.uniform(-0.45, 0.45) * r
        tangent = ConeTangent(dr, TangentVector(pos, delta))
        p = ConeParticle(r, pos)

        # (i) zero step fixed point + first-order agreement of the differential
        zero = func(p, ConeTangent(0.0, TangentVector(pos, np.zeros_like(delta))))
        dev_first = max(dev_first, abs(zero.r - r), float(np.max(np.abs(zero.pos.coords - pos.coords))))
        plus = func(p, ConeTangent(eps * dr, TangentVector(pos, eps * delta)))
        minus = func(p, ConeTangent(-eps * dr, TangentVector(pos, -eps * delta)))
        fd_r = (plus.r - minus.r) / (2 * eps)
        fd_pos = (plus.pos.coords - minus.pos.coords) / (2 * eps)
        if manifold.kind == "torus":
            fd_pos = manifold.wrap_diff(plus.pos.coords, minus.pos.coords) / (2 * eps)
        dev_first = max(dev_first, abs(fd_r - dr), float(np.max(np.abs(fd_pos - delta))))

        # (ii) the apex is absorbing
        apex = ConeParticle(0.0, pos)
        out = func(apex, tangent)
        dev_zero = max(dev_zero, out.r)

        # (iii) homogeneity: Ret_(r,.)(r u, dtheta) and Ret_(r~,.)(r~ u, dtheta)
        r_tilde = float(np.exp(rng.normal(0.0, 0.7)))
        u = rng.uniform(-0.45, 0.45)
        out1 = func(ConeParticle(r, pos), ConeTangent(r * u, TangentVector(pos, delta)))
        out2 = func(ConeParticle(r_tilde, pos), ConeTangent(r_tilde * u, TangentVector(pos, delta)))
        scale = max(1.0, r * r_tilde)
        dev_hom = max(
            dev_hom,
            abs(r_tilde * out1.r - r * out2.r) / scale,
            float(np.max(np.abs(out1.pos.coords - out2.pos.coords))),
        )
    return CompatibilityReport(
        retraction=name,
        samples=samples,
        first_order_ok=dev_first <= first_order_tol,
        first_order_dev=dev_first,
        zero_preserving_ok=dev_zero == 0.0,
        zero_preserving_dev=dev_zero,
        homogeneity_ok=dev_hom <= homogeneity_tol,
        homogeneity_dev=dev_hom,
    )
