import numpy as np
import pytest

from meopt.diagnostics import (
    check_admissible_tau,
    compute_kernels,
    cone_w2_upper,
    default_tau,
    expansion_residual,
    local_moments,
    mirror_rate_bound,
    prior_quality,
    rate_fit,
    sharpness_ratio,
)
from meopt.errors import InadmissibleRadiusError, InvalidInputError
from meopt.manifold import Torus
from meopt.optimize import grad_norm_sq
from meopt.problem import (
    DiscreteMeasure,
    ProblemSpec,
    make_dirichlet_features,
    objective,
)

T1 = Torus(1)


def reference_three_spikes():
    return DiscreteMeasure.from_atoms(T1, [(1.0, [1.0]), (0.64, [3.0]), (1.21, [5.0])])


# ---------------------------------------------------------------------------
# local moments


def test_tau_admissibility():
    ref = reference_three_spikes()
    check_admissible_tau(ref, 0.9)
    with pytest.raises(InadmissibleRadiusError) as exc:
        check_admissible_tau(ref, 1.2)
    assert exc.value.max_admissible == pytest.approx(1.0)
    assert default_tau(ref) == pytest.approx(1.0)
    single = DiscreteMeasure.from_atoms(T1, [(1.0, [0.5])])
    assert default_tau(single) == 1.0


def test_moments_single_atom_per_cell():
    ref = reference_three_spikes()
    rep = local_moments(ref, ref, 0.8, 1.0, 1.0)
    assert np.allclose(rep.b_r, 0.0)
    assert np.allclose(rep.b_theta, 0.0)
    assert np.allclose(rep.sigma, 0.0)
    assert rep.bar_r0_sq == 0.0
    assert np.allclose(rep.bar_r_sq, ref.masses)


def test_moments_symmetric_pair():
    # pair at theta_i +- delta with half masses: zero bias, variance delta^2
    ref = DiscreteMeasure.from_atoms(T1, [(1.0, [2.0])])
    delta = 0.05
    nu = DiscreteMeasure.from_atoms(T1, [(0.5, [2.0 - delta]), (0.5, [2.0 + delta])])
    rep = local_moments(nu, ref, 0.5, 1.0, 1.0)
    assert rep.b_r[0] == pytest.approx(0.0, abs=1e-15)
    assert rep.b_theta[0, 0] == pytest.approx(0.0, abs=1e-15)
    assert rep.sigma[0, 0, 0] == pytest.approx(delta ** 2, rel=1e-12)
    assert rep.s[0] == pytest.approx(delta, rel=1e-12)


def test_moments_far_atom_counted_in_theta0():
    ref = DiscreteMeasure.from_atoms(T1, [(1.0, [2.0])])
    nu = DiscreteMeasure.from_atoms(T1, [(0.7, [2.01]), (0.3, [5.0])])
    rep = local_moments(nu, ref, 0.5, 1.0, 1.0)
    assert rep.bar_r0_sq == pytest.approx(0.3)
    assert rep.bar_r_sq[0] == pytest.approx(0.7)


def test_moments_partition_conserves_mass():
    rng = np.random.default_rng(0)
    ref = reference_three_spikes()
    for _ in range(30):
        n = rng.integers(1, 40)
        nu = DiscreteMeasure(T1, rng.uniform(0, 1, n), T1.sample_uniform(rng, n))
        rep = local_moments(nu, ref, 0.7, 1.0, 1.0)
        assert rep.bar_r_sq.sum() + rep.bar_r0_sq == pytest.approx(nu.total_mass, abs=1e-15)


def test_moments_empty_cell_convention():
    ref = reference_three_spikes()
    nu = DiscreteMeasure.from_atoms(T1, [(0.5, [1.0])])
    rep = local_moments(nu, ref, 0.5, 2.0, 3.0)
    # cells 2 and 3 are empty: bar_theta = theta_i and b_r = -r_i / (2 alpha)
    assert np.allclose(rep.bar_theta[1:], ref.positions[1:])
    assert rep.b_r[1] == pytest.approx(-0.64 / (2 * 2.0 * 0.8))
    assert np.allclose(rep.sigma[1:], 0.0)


def test_moments_alpha_beta_scaling():
    ref = DiscreteMeasure.from_atoms(T1, [(1.0, [2.0])])
    nu = DiscreteMeasure.from_atoms(T1, [(0.9, [2.1])])
    r1 = local_moments(nu, ref, 0.5, 1.0, 1.0)
    r2 = local_moments(nu, ref, 0.5, 2.0, 4.0)
    assert r2.b_r[0] == pytest.approx(r1.b_r[0] / 2.0)
    assert r2.b_theta[0, 0] == pytest.approx(r1.b_theta[0, 0] / 4.0)
    assert r2.sigma[0, 0, 0] == pytest.approx(r1.sigma[0, 0, 0] / 16.0)


# ---------------------------------------------------------------------------
# kernels


def test_kernel_matrix_single_spike_values():
    f = make_dirichlet_features(1, 1)
    spike = DiscreteMeasure.from_atoms(T1, [(1.0, [2.0])])
    spec = ProblemSpec(f, spike, lam=0.1)
    rep = compute_kernels(spec, spike, 1.0, 1.0)
    # K entries at coincidence: 4 k = 12, mixed 0, angular sum k^2 = 2
    assert rep.K[0, 0] == pytest.approx(12.0)
    assert rep.K[0, 1] == pytest.approx(0.0, abs=1e-12)
    assert rep.K[1, 1] == pytest.approx(2.0)
    assert rep.K.shape == (2, 2)
    eigs = np.linalg.eigvalsh(rep.K)
    assert eigs.min() >= -1e-8 * np.trace(rep.K)


def test_kernel_H_blocks_and_sigma_min():
    f = make_dirichlet_features(1, 3)
    ref = reference_three_spikes()
    spec = ProblemSpec(f, ref, lam=0.2)
    rep = compute_kernels(spec, ref, 1.0, 1.0)
    size = 3 * 2
    assert rep.K.shape == (size, size) and rep.H.shape == (size, size)
    # zero r-rows/columns in H
    for i in range(3):
        assert np.all(rep.H[2 * i, :] == 0) and np.all(rep.H[:, 2 * i] == 0)
    assert rep.sigma_min_H == pytest.approx(
        min(abs(rep.H_blocks[i][0, 0]) for i in range(3))
    )
    with pytest.raises(InvalidInputError):
        compute_kernels(spec, DiscreteMeasure.from_atoms(T1, [(0.0, [1.0])]), 1.0, 1.0)


def test_kernels_match_fd_hessian_of_discrete_objective(deconv_oracle):
    # K + H equals the Hessian of the discrete objective at the minimizer in
    # the weighted-bias coordinates (single atom per cell)
    from meopt.harness import atoms_from_json

    f = make_dirichlet_features(1, 3)
    ref = atoms_from_json(T1, deconv_oracle["atoms"])
    spec = ProblemSpec(f, ref, lam=0.2)
    alpha = beta = 1.0
    rep = compute_kernels(spec, ref, alpha, beta)
    KH = rep.K + rep.H
    m = len(ref)
    r = np.sqrt(ref.masses)

    def J_of(b):
        b = b.reshape(m, 2)
        masses = ref.masses + 2 * alpha * r * b[:, 0]
        pos = ref.positions + (beta * r / masses)[:, None] * b[:, 1:]
        return objective(spec, DiscreteMeasure(T1, masses, pos))

    h = 1e-4
    size = 2 * m
    fd = np.zeros((size, size))
    for i in range(size):
        for j in range(i, size):
            ei = np.zeros(size); ei[i] = h
            ej = np.zeros(size); ej[j] = h
            fd[i, j] = fd[j, i] = (
                J_of(ei + ej) - J_of(ei - ej) - J_of(ej - ei) + J_of(-ei - ej)
            ) / (4 * h * h)
    scale = np.abs(KH).max()
    assert np.max(np.abs(KH - fd)) < 1e-5 * scale


# ---------------------------------------------------------------------------
# expansion


def test_expansion_zero_at_reference(deconv_oracle):
    from meopt.harness import atoms_from_json

    f = make_dirichlet_features(1, 3)
    teacher = DiscreteMeasure.from_atoms(T1, [(1.0, [1.8]), (0.8, [3.0]), (1.1, [5.0])])
    spec = ProblemSpec(f, teacher, lam=0.2)
    ref = atoms_from_json(T1, deconv_oracle["atoms"])
    j_star = deconv_oracle["j_star"]
    rep = expansion_residual(spec, ref, ref, j_star, default_tau(ref), 1.0, 1.0)
    assert abs(rep.predicted_gap) < 1e-10
    assert abs(rep.true_gap) < 1e-10
    assert rep.gap_residual < 1e-10
    assert rep.grad_residual < 1e-10


# ---------------------------------------------------------------------------
# sharpness


def test_sharpness_undefined_at_minimizer():
    f = make_dirichlet_features(1, 1)
    spike = DiscreteMeasure.from_atoms(T1, [(1.0, [2.0])])
    spec = ProblemSpec(f, spike, lam=0.0)
    assert sharpness_ratio(spec, spike, 0.0, 1e-2, 1e-2) is None


def test_sharpness_permutation_invariant_and_scaling():
    f = make_dirichlet_features(1, 3)
    ref = reference_three_spikes()
    spec = ProblemSpec(f, ref, lam=0.2)
    j_star = 0.0
    rng = np.random.default_rng(1)
    nu = DiscreteMeasure(T1, rng.uniform(0.2, 1, 6), T1.sample_uniform(rng, 6))
    base = sharpness_ratio(spec, nu, j_star, 1e-2, 1e-2)
    perm = rng.permutation(6)
    nu_p = DiscreteMeasure(T1, nu.masses[perm], nu.positions[perm])
    assert sharpness_ratio(spec, nu_p, j_star, 1e-2, 1e-2) == pytest.approx(base, rel=1e-12)
    assert sharpness_ratio(spec, nu, j_star, 3e-2, 3e-2) == pytest.approx(3 * base, rel=1e-12)


# ---------------------------------------------------------------------------
# transport upper bound


def test_w2_upper_examples():
    ref = DiscreteMeasure.from_atoms(T1, [(1.44, [2.0])])
    assert cone_w2_upper(ref, ref, 0.5) == 0.0
    # single cell, pure radial transport: cost = |rbar - r|
    nu = DiscreteMeasure.from_atoms(T1, [(1.0, [2.0])])
    assert cone_w2_upper(nu, ref, 0.5) == pytest.approx(abs(1.0 - 1.2), abs=1e-12)
    # far mass goes to the apex at squared cost = mass
    nu2 = DiscreteMeasure.from_atoms(T1, [(1.44, [2.0]), (0.3, [5.0])])
    assert cone_w2_upper(nu2, ref, 0.5) == pytest.approx(np.sqrt(0.3), abs=1e-12)
    # an empty cell charges the full spike mass (created from the apex)
    empty = DiscreteMeasure.empty(T1)
    assert cone_w2_upper(empty, ref, 0.5) == pytest.approx(np.sqrt(1.44), abs=1e-12)


def test_w2_upper_small_displacement():
    ref = DiscreteMeasure.from_atoms(T1, [(1.0, [2.0])])
    nu = DiscreteMeasure.from_atoms(T1, [(1.0, [2.0 + 0.01])])
    # cost^2 = 2 - 2 cos(0.01) ~ 0.01^2
    assert cone_w2_upper(nu, ref, 0.5) == pytest.approx(0.01, rel=1e-4)


# ---------------------------------------------------------------------------
# prior quality and mirror rate bound


def test_prior_quality_values():
    spike = DiscreteMeasure.from_atoms(T1, [(1.0, [1.0])])
    val = prior_quality(spike, lambda p: 1.0 / (2 * np.pi), 1.0)
    assert val == pytest.approx(np.log(2 * np.pi), abs=1e-12)
    assert val == pytest.approx(1.83788, abs=1e-5)
    # rho matching the spikes exactly gives zero
    ref = reference_three_spikes()
    dens = {tuple(p): w for w, p, _ in ref.atoms()}
    assert prior_quality(ref, lambda p: dens[tuple(p)], ref.total_mass) == pytest.approx(0.0)
    # spike mass 2, uniform density c
    two = DiscreteMeasure.from_atoms(T1, [(2.0, [0.5])])
    c = 0.3
    want = 2 * np.log(2 / c) - 2 + 2 * np.pi * c
    assert prior_quality(two, lambda p: c, 2 * np.pi * c) == pytest.approx(want, abs=1e-12)
    with pytest.raises(InvalidInputError):
        prior_quality(two, lambda p: 0.0, 1.0)


def test_mirror_rate_bound_values():
    hbar = np.log(2 * np.pi)
    val = mirror_rate_bound(hbar, 1.0, 1.0, 1, 0.0, 1.0, 100.0)
    assert val == pytest.approx((1 * (1 + np.log(100)) + np.log(2 * np.pi)) / 100, abs=1e-12)
    # decreasing in tau over a wide sampled range
    taus = np.geomspace(1.0, 1e6, 40)
    vals = [mirror_rate_bound(hbar, 1.0, 1.0, 1, 0.0, 1.0, t) for t in taus]
    assert np.all(np.diff(vals) < 0)
    # doubling C_Theta adds exactly nu*(Theta) * d / tau
    for tau in (3.0, 50.0):
        delta = (
            mirror_rate_bound(hbar, 2.0, 1.0, 3, 0.0, 2.0, tau)
            - mirror_rate_bound(hbar, 2.0, 1.0, 3, 0.0, 1.0, tau)
        )
        assert delta == pytest.approx(2.0 * 3 / tau, rel=1e-12)
    with pytest.raises(InvalidInputError):
        mirror_rate_bound(hbar, 1.0, 1.0, 1, 0.0, 1.0, 0.0)


def test_mirror_rate_bound_simplified_form_at_zero_lipschitz():
    hbar = 0.7
    for tau in (2.0, 10.0):
        general = mirror_rate_bound(hbar, 1.3, 0.9, 2, 0.0, 1.5, tau)
        simplified = (hbar + 1.3 * 2 * (np.log(tau) + 1.5)) / tau
        assert general == pytest.approx(simplified, rel=1e-12)


# ---------------------------------------------------------------------------
# rate fitting


def test_rate_fit_exact_exponential():
    k = np.arange(0, 200)
    gaps = 2.0 * 0.9 ** k
    slope, r2 = rate_fit(k, gaps, (0, 199), "Exponential")
    assert slope == pytest.approx(np.log(0.9), rel=1e-9)
    assert r2 == pytest.approx(1.0, abs=1e-12)


def test_rate_fit_exact_power_law():
    k = np.arange(1, 500)
    gaps = 1.0 / k
    slope, r2 = rate_fit(k, gaps, (1, 499), "PowerLaw")
    assert slope == pytest.approx(-1.0, rel=1e-9)
    assert r2 == pytest.approx(1.0, abs=1e-12)


def test_rate_fit_rejects_nonpositive_gaps():
    k = np.arange(10)
    gaps = np.linspace(1.0, -0.1, 10)
    with pytest.raises(InvalidInputError):
        rate_fit(k, gaps, (0, 9), "Exponential")
    with pytest.raises(InvalidInputError):
        rate_fit(k, np.ones(10), (0, 9), "Quadratic")
