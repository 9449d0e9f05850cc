"""Geometry of the parameter space: the flat d-torus and the round d-sphere.

Points are plain numpy arrays (shape ``(..., d)`` for the torus, ``(..., d+1)``
for the sphere); the manifold objects carry all operations, vectorized over
leading axes.  Thin ``ManifoldPoint`` / ``TangentVector`` wrappers are provided
for the single-point API.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateInputError,
    DimensionMismatchError,
    InvalidInputError,
)

TWO_PI = 2.0 * np.pi
# stay clear of ill-conditioned arccos / non-unique logs near the cut locus
CUT_LOCUS_GUARD = np.pi - 1e-9


def _as_array(x):
    return np.asarray(x, dtype=float)


@dataclass(frozen=True)
class Torus:
    """Flat d-torus, angles in [0, 2*pi) per coordinate."""

    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidInputError(f"torus dimension must be >= 1, got {self.dim}")

    @property
    def kind(self):
        return "torus"

    @property
    def ambient_dim(self):
        return self.dim

    @property
    def volume(self):
        return TWO_PI ** self.dim

    def canonicalize(self, x):
        return np.mod(_as_array(x), TWO_PI)

    def check_point(self, x):
        x = _as_array(x)
        if x.shape[-1] != self.dim:
            raise DimensionMismatchError(
                f"expected point of length {self.dim}, got shape {x.shape}"
            )
        return x

    def wrap_diff(self, a, b):
        """Per-coordinate difference a - b wrapped into [-pi, pi)."""
        return np.mod(_as_array(a) - _as_array(b) + np.pi, TWO_PI) - np.pi

    def dist(self, a, b):
        # |a - b| is exactly symmetric, so the distance is too
        e = np.mod(np.abs(self.check_point(a) - self.check_point(b)), TWO_PI)
        return np.linalg.norm(np.minimum(e, TWO_PI - e), axis=-1)

    def log(self, base, target):
        w = self.wrap_diff(self.check_point(target), self.check_point(base))
        if np.any(np.abs(w) > CUT_LOCUS_GUARD):
            raise DegenerateInputError(
                "log map undefined: some coordinate is at the cut locus (|diff| ~ pi)"
            )
        return w

    def exp(self, base, v):
        return self.canonicalize(self.check_point(base) + _as_array(v))

    # the torus retraction is the exact exponential map
    retract = exp

    def project_tangent(self, x, v):
        return _as_array(v)

    def tangent_basis(self, x):
        return np.broadcast_to(
            np.eye(self.dim), _as_array(x).shape[:-1] + (self.dim, self.dim)
        ).copy()

    def sample_uniform(self, rng, n=None):
        shape = (self.dim,) if n is None else (n, self.dim)
        return rng.uniform(0.0, TWO_PI, size=shape)

    def uniform_grid(self, m):
        """Equispaced grid of m points; returns (points, covering_radius)."""
        if m < 1:
            raise InvalidInputError(f"grid size must be >= 1, got {m}")
        if self.dim == 1:
            pts = (TWO_PI * np.arange(m) / m)[:, None]
            return pts, np.pi / m
        if self.dim == 2:
            side = int(np.ceil(np.sqrt(m)))
            axis = TWO_PI * np.arange(side) / side
            xx, yy = np.meshgrid(axis, axis, indexing="ij")
            pts = np.stack([xx.ravel(), yy.ravel()], axis=-1)[:m]
            if m == side * side:
                radius = np.sqrt(2.0) * np.pi / side
            else:
                radius = self._covering_radius_estimate(pts)
            return pts, radius
        raise InvalidInputError(f"uniform_grid implemented for d in {{1, 2}}, got d={self.dim}")

    def _covering_radius_estimate(self, pts, probe_side=181):
        axis = TWO_PI * np.arange(probe_side) / probe_side
        xx, yy = np.meshgrid(axis, axis, indexing="ij")
        probe = np.stack([xx.ravel(), yy.ravel()], axis=-1)
        d = self.dist(probe[:, None, :], pts[None, :, :])
        return float(d.min(axis=1).max())


@dataclass(frozen=True)
class Sphere:
    """Round d-sphere embedded in R^(d+1); points are unit vectors."""

    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidInputError(f"sphere dimension must be >= 1, got {self.dim}")

    @property
    def kind(self):
        return "sphere"

    @property
    def ambient_dim(self):
        return self.dim + 1

    def canonicalize(self, x):
        x = _as_array(x)
        norms = np.linalg.norm(x, axis=-1, keepdims=True)
        if np.any(norms == 0.0):
            raise InvalidInputError("cannot canonicalize the zero vector onto the sphere")
        return x / norms

    def check_point(self, x):
        x = _as_array(x)
        if x.shape[-1] != self.dim + 1:
            raise DimensionMismatchError(
                f"expected point of length {self.dim + 1}, got shape {x.shape}"
            )
        norms = np.linalg.norm(x, axis=-1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise InvalidInputError("sphere point is not a unit vector")
        return x

    def dist(self, a, b):
        a, b = self.check_point(a), self.check_point(b)
        inner = np.clip(np.sum(a * b, axis=-1), -1.0, 1.0)
        return np.arccos(inner)

    def log(self, base, target):
        base, target = self.check_point(base), self.check_point(target)
        theta = self.dist(base, target)
        if np.any(theta > CUT_LOCUS_GUARD):
            raise DegenerateInputError("log map undefined near the antipode")
        v = target - np.sum(base * target, axis=-1, keepdims=True) * base
        nv = np.linalg.norm(v, axis=-1, keepdims=True)
        scale = np.where(nv > 0.0, np.asarray(theta)[..., None] / np.where(nv > 0, nv, 1.0), 0.0)
        return v * scale

    def exp(self, base, v):
        base, v = self.check_point(base), _as_array(v)
        t = np.linalg.norm(v, axis=-1, keepdims=True)
        unit = np.where(t > 0.0, v / np.where(t > 0, t, 1.0), 0.0)
        return np.cos(t) * base + np.sin(t) * unit

    def retract(self, base, v):
        """Add-and-renormalize; first-order agreement with exp."""
        return self.canonicalize(self.check_point(base) + _as_array(v))

    def project_tangent(self, x, v):
        x, v = self.check_point(x), _as_array(v)
        return v - np.sum(x * v, axis=-1, keepdims=True) * x

    def tangent_basis(self, x):
        """Orthonormal tangent basis at x, columns of shape (d+1, d), via a Householder frame."""
        x = self.check_point(x)
        single = x.ndim == 1
        pts = x[None, :] if single else x.reshape(-1, self.dim + 1)
        n, amb = pts.shape
        sign = np.where(pts[:, 0] >= 0.0, 1.0, -1.0)
        v = pts.copy()
        v[:, 0] += sign
        vnorm2 = np.sum(v * v, axis=1, keepdims=True)
        h = np.broadcast_to(np.eye(amb), (n, amb, amb)).copy()
        h -= 2.0 * v[:, :, None] * v[:, None, :] / vnorm2[:, :, None]
        basis = h[:, :, 1:]
        if single:
            return basis[0]
        return basis.reshape(x.shape[:-1] + (amb, self.dim))

    def sample_uniform(self, rng, n=None):
        shape = (self.dim + 1,) if n is None else (n, self.dim + 1)
        g = rng.standard_normal(shape)
        return g / np.linalg.norm(g, axis=-1, keepdims=True)

    def uniform_grid(self, m):
        raise InvalidInputError("uniform grids are only provided on the torus; sample the sphere instead")


Manifold = Torus | Sphere


def _same_manifold(a, b):
    if a.manifold != b.manifold:
        raise DimensionMismatchError(f"manifold mismatch: {a.manifold} vs {b.manifold}")


@dataclass(frozen=True)
class ManifoldPoint:
    """A single point; coordinates are canonicalized at construction."""

    manifold: Manifold
    coords: np.ndarray = field(repr=True)

    def __post_init__(self):
        c = self.manifold.check_point(self.manifold.canonicalize(self.coords))
        object.__setattr__(self, "coords", c)

    def dist(self, other):
        _same_manifold(self, other)
        return float(self.manifold.dist(self.coords, other.coords))


@dataclass(frozen=True)
class TangentVector:
    """A tangent vector at ``base``; orthogonality to the base is enforced on the sphere."""

    base: ManifoldPoint
    delta: np.ndarray

    def __post_init__(self):
        man = self.base.manifold
        d = _as_array(self.delta)
        if d.shape != (man.ambient_dim,):
            raise DimensionMismatchError(
                f"tangent vector must have shape ({man.ambient_dim},), got {d.shape}"
            )
        if man.kind == "sphere" and abs(float(np.dot(d, self.base.coords))) > 1e-10:
            raise InvalidInputError("sphere tangent vector is not orthogonal to its base point")
        object.__setattr__(self, "delta", d)

    @property
    def norm(self):
        return float(np.linalg.norm(self.delta))


def geodesic_dist(a: ManifoldPoint, b: ManifoldPoint) -> float:
    _same_manifold(a, b)
    return float(a.manifold.dist(a.coords, b.coords))


def log_map(base: ManifoldPoint, target: ManifoldPoint) -> TangentVector:
    _same_manifold(base, target)
    return TangentVector(base, base.manifold.log(base.coords, target.coords))


def retract_point(base: ManifoldPoint, v: TangentVector) -> ManifoldPoint:
    if v.base != base:
        raise InvalidInputError("tangent vector is not based at the given point")
    return ManifoldPoint(base.manifold, base.manifold.retract(base.coords, v.delta))


def uniform_grid(manifold: Manifold, m: int):
    """Uniform grid on the torus; returns (list of ManifoldPoint, covering radius)."""
    pts, radius = manifold.uniform_grid(m)
    return [ManifoldPoint(manifold, p) for p in pts], radius


def sample_uniform(manifold: Manifold, rng) -> ManifoldPoint:
    return ManifoldPoint(manifold, manifold.sample_uniform(rng))
