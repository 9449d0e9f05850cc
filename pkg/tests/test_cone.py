import numpy as np
import pytest

from meopt.cone import (
    ConeParticle,
    ConeTangent,
    CompatibilityReport,
    check_cone_compatibility,
    cone_dist,
    get_retraction,
    retract_arrays,
    retract_canonical,
    retract_induced,
    retract_mirror,
)
from meopt.errors import (
    DegenerateStepError,
    StepTooLargeError,
    UnsupportedRetractionError,
)
from meopt.manifold import ManifoldPoint, Sphere, TangentVector, Torus

T1 = Torus(1)
S2 = Sphere(2)


def particle(r, angle, sign=1):
    return ConeParticle(r, ManifoldPoint(T1, [angle]), sign)


def tangent(p, dr, dtheta):
    return ConeTangent(dr, TangentVector(p.pos, np.atleast_1d(dtheta)))


def test_cone_dist_identity():
    p = particle(1.3, 0.7)
    assert cone_dist(p, p) == 0.0


def test_cone_dist_angle_clamped():
    # at angle >= pi the distance is the through-the-apex path r1 + r2
    p, q = particle(1.0, 0.0), particle(1.0, np.pi)
    assert cone_dist(p, q) == pytest.approx(2.0, abs=1e-12)
    # on the 2-torus the angle genuinely exceeds pi and gets clamped
    t2 = Torus(2)
    a = ConeParticle(1.0, ManifoldPoint(t2, [0.0, 0.0]))
    b = ConeParticle(1.0, ManifoldPoint(t2, [np.pi, np.pi]))
    assert t2.dist(a.pos.coords, b.pos.coords) > np.pi
    assert cone_dist(a, b) == pytest.approx(2.0, abs=1e-12)


def test_cone_dist_to_apex():
    assert cone_dist(particle(2.0, 1.0), particle(0.0, 5.0)) == pytest.approx(2.0)


def test_apex_identification():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = particle(0.0, rng.uniform(0, 2 * np.pi))
        b = particle(0.0, rng.uniform(0, 2 * np.pi))
        assert cone_dist(a, b) == 0.0


def test_cone_triangle_inequality():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        ps = [particle(np.exp(rng.normal()), rng.uniform(0, 2 * np.pi)) for _ in range(3)]
        d01 = cone_dist(ps[0], ps[1])
        d12 = cone_dist(ps[1], ps[2])
        d02 = cone_dist(ps[0], ps[2])
        assert d02 <= d01 + d12 + 1e-12


def test_canonical_retraction():
    p = particle(1.0, 0.5)
    out = retract_canonical(p, tangent(p, -0.3, 0.0))
    assert out.r == pytest.approx(0.7)
    assert out.pos.coords[0] == pytest.approx(0.5)
    with pytest.raises(StepTooLargeError):
        retract_canonical(p, tangent(p, -1.0, 0.0))


def test_mirror_retraction_value():
    p = particle(2.0, 0.5)
    out = retract_mirror(p, tangent(p, -1.0, 0.0))
    assert out.r == pytest.approx(2.0 * np.exp(-0.5), abs=1e-12)
    assert out.r == pytest.approx(1.21306, abs=1e-5)


def test_mirror_mass_multiplicativity():
    # (Ret r)^2 / r^2 depends only on dr/r, never on r
    ratios = []
    for r in (0.5, 1.0, 3.0, 10.0):
        p = particle(r, 1.0)
        out = retract_mirror(p, tangent(p, -0.25 * r, 0.0))
        ratios.append(out.r ** 2 / r ** 2)
    assert np.ptp(ratios) < 1e-15


def test_induced_retraction_value():
    pos = ManifoldPoint(S2, [1, 0, 0])
    p = ConeParticle(1.0, pos)
    t = ConeTangent(0.0, TangentVector(pos, [0.0, 0.3, 0.0]))
    out = retract_induced(p, t)
    assert out.r == pytest.approx(np.sqrt(1.09), abs=1e-13)
    assert np.allclose(out.pos.coords, np.array([1.0, 0.3, 0.0]) / np.sqrt(1.09))


def test_induced_requires_sphere():
    p = particle(1.0, 0.5)
    with pytest.raises(UnsupportedRetractionError):
        retract_induced(p, tangent(p, 0.0, 0.0))


def test_induced_degenerate_step():
    pos = ManifoldPoint(S2, [1, 0, 0])
    p = ConeParticle(1.0, pos)
    with pytest.raises(DegenerateStepError):
        retract_induced(p, ConeTangent(-1.0, TangentVector(pos, [0.0, 0.0, 0.0])))


@pytest.mark.parametrize("name", ["canonical", "mirror"])
def test_zero_step_and_apex(name):
    func = get_retraction(name)
    p = particle(1.4, 2.0)
    out = func(p, tangent(p, 0.0, 0.0))
    assert out.r == p.r and out.pos.coords[0] == p.pos.coords[0]
    apex = particle(0.0, 2.0)
    out = func(apex, tangent(apex, 0.5, 0.3))
    assert out.r == 0.0
    assert out.pos.coords[0] == apex.pos.coords[0]


def test_homogeneity_identity_exact():
    # r~ * r1 == r * r2 where both steps use the scaled radial displacement
    rng = np.random.default_rng(2)
    for func in (retract_canonical, retract_mirror):
        for _ in range(200):
            r, rt = np.exp(rng.normal(size=2))
            u = rng.uniform(-0.4, 0.4)
            p1, p2 = particle(r, 1.0), particle(rt, 1.0)
            o1 = func(p1, tangent(p1, r * u, 0.1))
            o2 = func(p2, tangent(p2, rt * u, 0.1))
            scale = max(1.0, r * rt)
            assert abs(rt * o1.r - r * o2.r) / scale < 1e-12
            assert o1.pos.coords[0] == o2.pos.coords[0]


@pytest.mark.parametrize(
    "kind,manifold",
    [("canonical", T1), ("mirror", T1), ("canonical", S2), ("mirror", S2), ("induced", S2)],
)
def test_cone_compatibility_passes(kind, manifold):
    report = check_cone_compatibility(kind, manifold, samples=300, rng=np.random.default_rng(0))
    assert isinstance(report, CompatibilityReport)
    assert report.all_ok, report


def test_cone_compatibility_negative_control():
    # corrupted retraction scaling the angular step must fail axiom (i)
    def corrupted(p, t):
        bad = ConeTangent(t.dr, TangentVector(t.dpos.base, 1.1 * t.dpos.delta))
        return retract_mirror(p, bad)

    report = check_cone_compatibility(corrupted, T1, samples=100, rng=np.random.default_rng(0))
    assert not report.first_order_ok
    assert report.zero_preserving_ok


def test_retract_arrays_matches_single_particle():
    rng = np.random.default_rng(3)
    r = np.array([0.0, 0.8, 2.5])
    pos = rng.uniform(0, 2 * np.pi, (3, 1))
    dr = np.array([0.4, -0.2, 0.9])
    dpos = rng.normal(size=(3, 1)) * 0.1
    for kind in ("canonical", "mirror"):
        new_r, new_pos = retract_arrays(kind, T1, r, pos, dr, dpos)
        assert new_r[0] == 0.0 and new_pos[0, 0] == pos[0, 0]
        func = get_retraction(kind)
        for i in (1, 2):
            p = particle(r[i], pos[i, 0])
            out = func(p, tangent(p, dr[i], dpos[i]))
            assert new_r[i] == pytest.approx(out.r, abs=1e-15)
            assert new_pos[i, 0] == pytest.approx(out.pos.coords[0], abs=1e-15)
