import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meopt.errors import DegenerateInputError, DimensionMismatchError, InvalidInputError
from meopt.manifold import (
    ManifoldPoint,
    Sphere,
    TangentVector,
    Torus,
    geodesic_dist,
    log_map,
    retract_point,
    sample_uniform,
    uniform_grid,
)

T1 = Torus(1)
T2 = Torus(2)
S2 = Sphere(2)

angles = st.floats(0.0, 2 * np.pi - 1e-9)


def sphere_point(rng_seed):
    rng = np.random.default_rng(rng_seed)
    return ManifoldPoint(S2, S2.sample_uniform(rng))


def test_torus_dist_identity():
    assert geodesic_dist(ManifoldPoint(T1, [0.1]), ManifoldPoint(T1, [0.1])) == 0.0


def test_torus_dist_wraps():
    d = geodesic_dist(ManifoldPoint(T1, [0.0]), ManifoldPoint(T1, [3 * np.pi / 2]))
    assert d == pytest.approx(np.pi / 2, abs=1e-15)


def test_sphere_orthogonal_units():
    d = geodesic_dist(ManifoldPoint(S2, [1, 0, 0]), ManifoldPoint(S2, [0, 1, 0]))
    assert d == pytest.approx(np.pi / 2, abs=1e-15)


@given(a=st.lists(angles, min_size=2, max_size=2), b=st.lists(angles, min_size=2, max_size=2))
@settings(max_examples=200, deadline=None)
def test_torus_dist_symmetric(a, b):
    pa, pb = ManifoldPoint(T2, a), ManifoldPoint(T2, b)
    assert geodesic_dist(pa, pb) == geodesic_dist(pb, pa)


@given(
    a=st.lists(angles, min_size=2, max_size=2),
    b=st.lists(angles, min_size=2, max_size=2),
    c=st.lists(angles, min_size=2, max_size=2),
)
@settings(max_examples=300, deadline=None)
def test_torus_triangle_inequality(a, b, c):
    pa, pb, pc = (ManifoldPoint(T2, x) for x in (a, b, c))
    assert geodesic_dist(pa, pc) <= geodesic_dist(pa, pb) + geodesic_dist(pb, pc) + 1e-12


def test_sphere_triangle_inequality_random():
    rng = np.random.default_rng(0)
    pts = S2.sample_uniform(rng, 3000).reshape(1000, 3, 3)
    for a, b, c in pts:
        dab = S2.dist(a, b)
        dbc = S2.dist(b, c)
        dac = S2.dist(a, c)
        assert dac <= dab + dbc + 1e-12


def test_log_map_zero_at_equal_points():
    p = ManifoldPoint(T2, [0.3, 4.0])
    assert np.allclose(log_map(p, p).delta, 0.0)


def test_log_map_flat_torus():
    v = log_map(ManifoldPoint(T1, [0.0]), ManifoldPoint(T1, [0.3]))
    assert v.delta == pytest.approx([0.3])


def test_log_map_sphere_analytic():
    # invert the sphere exponential: target at angle 0.4 from e1 towards e2
    base = ManifoldPoint(S2, [1, 0, 0])
    target = ManifoldPoint(S2, [np.cos(0.4), np.sin(0.4), 0.0])
    v = log_map(base, target)
    assert np.allclose(v.delta, [0.0, 0.4, 0.0], atol=1e-14)
    assert v.norm == pytest.approx(geodesic_dist(base, target), abs=1e-14)


def test_log_map_cut_locus_errors():
    with pytest.raises(DegenerateInputError):
        log_map(ManifoldPoint(T1, [0.0]), ManifoldPoint(T1, [np.pi]))
    with pytest.raises(DegenerateInputError):
        log_map(ManifoldPoint(S2, [1, 0, 0]), ManifoldPoint(S2, [-1, 0, 0]))


def test_retract_zero_is_identity():
    p = sphere_point(1)
    q = retract_point(p, TangentVector(p, np.zeros(3)))
    assert np.allclose(q.coords, p.coords)


def test_retract_torus_is_exponential():
    p = ManifoldPoint(T2, [0.0, 0.0])
    q = retract_point(p, TangentVector(p, [0.1, -0.2]))
    assert np.allclose(q.coords, [0.1, 2 * np.pi - 0.2])


def test_retract_sphere_add_normalize():
    p = ManifoldPoint(S2, [1, 0, 0])
    for t in (0.1, 0.5):
        q = retract_point(p, TangentVector(p, [0.0, t, 0.0]))
        assert np.allclose(q.coords, np.array([1.0, t, 0.0]) / np.sqrt(1 + t * t))


def test_retract_first_order_agreement_with_exp():
    # central differences of the retraction along the exponential direction
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = S2.sample_uniform(rng)
        v = S2.project_tangent(x, rng.standard_normal(3))
        for h in (1e-5,):
            fd = (S2.retract(x, h * v) - S2.retract(x, -h * v)) / (2 * h)
            assert np.allclose(fd, v, atol=1e-8)


def test_log_retract_round_trip_torus():
    rng = np.random.default_rng(7)
    for _ in range(200):
        base = ManifoldPoint(T2, rng.uniform(0, 2 * np.pi, 2))
        target = ManifoldPoint(T2, rng.uniform(0, 2 * np.pi, 2))
        if geodesic_dist(base, target) >= np.pi - 0.1:
            continue
        back = retract_point(base, log_map(base, target))
        assert geodesic_dist(back, target) < 1e-10


def test_log_exp_round_trip_sphere():
    # the sphere retraction is first-order only; the exponential inverts the log
    rng = np.random.default_rng(11)
    for _ in range(200):
        a, b = S2.sample_uniform(rng, 2)
        if S2.dist(a, b) >= np.pi - 0.1:
            continue
        back = S2.exp(a, S2.log(a, b))
        assert np.max(np.abs(back - b)) < 1e-10


def test_sphere_tangency_preserved():
    rng = np.random.default_rng(5)
    for _ in range(50):
        a, b = S2.sample_uniform(rng, 2)
        if S2.dist(a, b) >= np.pi - 1e-6:
            continue
        v = S2.log(a, b)
        assert abs(np.dot(v, a)) < 1e-10
        basis = S2.tangent_basis(a)
        assert np.allclose(basis.T @ basis, np.eye(2), atol=1e-12)
        assert np.max(np.abs(basis.T @ a)) < 1e-12


def test_uniform_grid_1d():
    pts, radius = uniform_grid(T1, 4)
    assert np.allclose([p.coords[0] for p in pts], [0, np.pi / 2, np.pi, 3 * np.pi / 2])
    assert radius == pytest.approx(np.pi / 4)


def test_uniform_grid_2d_product():
    pts, radius = T2.uniform_grid(9)
    assert pts.shape == (9, 2)
    assert len({tuple(p) for p in pts}) == 9
    assert radius <= np.pi * 2 / np.floor(np.sqrt(9)) + 1e-12


@pytest.mark.parametrize("m", [1, 2, 5, 9, 12, 16])
def test_uniform_grid_2d_covering_bound(m):
    pts, radius = T2.uniform_grid(m)
    assert len(pts) == m
    assert radius <= np.pi * 2 / np.floor(m ** 0.5) + 1e-9


def test_uniform_grid_errors():
    with pytest.raises(InvalidInputError):
        T1.uniform_grid(0)
    with pytest.raises(InvalidInputError):
        S2.uniform_grid(10)


def test_sampling_deterministic():
    a = sample_uniform(S2, np.random.default_rng(42))
    b = sample_uniform(S2, np.random.default_rng(42))
    assert np.array_equal(a.coords, b.coords)


def test_sphere_samples_unit_norm():
    rng = np.random.default_rng(0)
    pts = S2.sample_uniform(rng, 1000)
    assert np.max(np.abs(np.linalg.norm(pts, axis=1) - 1.0)) < 1e-12


def test_sphere_sample_mean_is_small():
    # Monte Carlo check of uniformity: the mean of 1e5 samples is near zero
    rng = np.random.default_rng(123)
    pts = S2.sample_uniform(rng, 100_000)
    assert np.linalg.norm(pts.mean(axis=0)) < 0.02


def test_dimension_mismatch_errors():
    with pytest.raises(DimensionMismatchError):
        geodesic_dist(ManifoldPoint(T1, [0.0]), ManifoldPoint(T2, [0.0, 0.0]))
    with pytest.raises(DimensionMismatchError):
        T2.dist(np.zeros(2), np.zeros(3))


def test_point_canonicalization():
    p = ManifoldPoint(T1, [2 * np.pi + 0.25])
    assert p.coords[0] == pytest.approx(0.25)
    with pytest.raises(InvalidInputError):
        ManifoldPoint(S2, [2.0, 0.0, 0.0]).manifold.check_point([2.0, 0.0, 0.0])


def test_sphere_tangent_vector_orthogonality_enforced():
    p = ManifoldPoint(S2, [1, 0, 0])
    with pytest.raises(InvalidInputError):
        TangentVector(p, [0.5, 0.1, 0.0])
