import numpy as np
import pytest

from markgrid.augment import (
    AugmentationFactors,
    AugmentationPolicy,
    TransformRanges,
    augment,
    identity_policy,
    mu_upper_bound,
    probabilities,
    solve_mu,
    solve_policy,
)
from markgrid.synth import RenderSpec, render, sample_label

DEFAULT = AugmentationFactors(0.4, 0.3, 0.3)


def untouched(mu, factors):
    out = 1.0
    for g in factors.as_tuple():
        out *= 1.0 - mu * g
    return out


def bisect_mu(p_org, factors, tol=1e-12):
    """Independent root finder for the untouched-fraction equation."""
    a, b = 0.0, mu_upper_bound(factors)
    while b - a > tol:
        mid = 0.5 * (a + b)
        if untouched(mid, factors) > p_org:
            a = mid
        else:
            b = mid
    return 0.5 * (a + b)


def test_solve_mu_default_case():
    mu = solve_mu(0.5, DEFAULT)
    assert abs(mu - bisect_mu(0.5, DEFAULT)) < 1e-6
    assert abs(mu - 0.6173) < 1e-4
    assert abs(untouched(mu, DEFAULT) - 0.5) < 1e-6
    p = probabilities(mu, DEFAULT)
    assert np.allclose(p, (0.2469, 0.1852, 0.1852), atol=1e-4)


def test_solve_mu_direct_evaluation_point():
    # untouched(1.0) = 0.6 * 0.7 * 0.7 = 0.294 exactly
    assert abs(solve_mu(0.294, DEFAULT) - 1.0) < 1e-6


def test_solve_mu_trivial_and_errors():
    assert solve_mu(1.0, DEFAULT) == 0.0
    assert solve_mu(1.0, AugmentationFactors(0.0, 0.0, 0.0)) == 0.0
    with pytest.raises(ValueError):
        solve_mu(0.0, DEFAULT)
    with pytest.raises(ValueError):
        solve_mu(1.5, DEFAULT)
    with pytest.raises(ValueError):
        solve_mu(0.5, AugmentationFactors(0.0, 0.0, 0.0))


def test_probabilities_endpoints():
    assert probabilities(0.0, DEFAULT) == (0.0, 0.0, 0.0)
    assert probabilities(1.0, DEFAULT) == (0.4, 0.3, 0.3)
    with pytest.raises(ValueError):
        probabilities(3.0, DEFAULT)  # above 1/0.4


def test_calibration_identity_and_monotonicity():
    prev = None
    for p_org in np.linspace(0.05, 1.0, 20):
        policy = solve_policy(float(p_org))
        prod = (1 - policy.p_rt) * (1 - policy.p_sh) * (1 - policy.p_sc)
        assert abs(prod - p_org) < 1e-6
        if prev is not None:
            assert policy.mu < prev  # strictly decreasing in p_org
        prev = policy.mu


def test_golden_section_matches_bisection_on_random_instances():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        factors = AugmentationFactors(*rng.uniform(0.05, 1.0, size=3))
        p_org = float(rng.uniform(0.01, 1.0))
        assert abs(solve_mu(p_org, factors) - bisect_mu(p_org, factors)) < 1e-6


def test_inconsistent_policy_rejected():
    with pytest.raises(ValueError):
        AugmentationPolicy(p_org=0.5, mu=0.6, p_rt=0.9, p_sh=0.0, p_sc=0.0)


@pytest.fixture(scope="module")
def template_image():
    rng = np.random.default_rng(77)
    label = sample_label(rng, "cfmt")
    return render(label, RenderSpec(), "cfmt", rng).astype(np.float32)


def test_augment_identity_policy_returns_input(template_image):
    rng = np.random.default_rng(0)
    for _ in range(20):
        out = augment(template_image, identity_policy(), rng)
        assert np.array_equal(out, template_image)
        assert out is not template_image


def test_augment_transforms_change_pixels(template_image):
    policy = AugmentationPolicy(p_org=0.0, mu=2.5, p_rt=1.0, p_sh=0.0, p_sc=0.0)
    rng = np.random.default_rng(1)
    out = augment(template_image, policy, rng)
    assert out.shape == template_image.shape
    assert out.dtype == template_image.dtype
    assert not np.array_equal(out, template_image)


def test_augment_deterministic(template_image):
    policy = solve_policy(0.5)
    a = augment(template_image, policy, np.random.default_rng(5))
    b = augment(template_image, policy, np.random.default_rng(5))
    assert np.array_equal(a, b)


def test_augment_rejects_non_square():
    with pytest.raises(ValueError):
        augment(np.zeros((4, 5)), identity_policy(), np.random.default_rng(0))


def test_untouched_fraction_statistics_smoke(template_image):
    # Full 20,000-draw bound runs in the acceptance suite; quick check here.
    small = template_image[:64, :64]
    policy = solve_policy(0.5)
    rng = np.random.default_rng(99)
    hits = sum(
        np.array_equal(augment(small, policy, rng), small) for _ in range(2000)
    )
    assert abs(hits / 2000 - 0.5) < 0.04
