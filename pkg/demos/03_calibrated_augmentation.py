"""Solve the augmentation multiplier and check the calibration empirically.

Rotation, shear, and scale each fire with probability mu * gamma; mu is the
root of (1 - mu*g_rt)(1 - mu*g_sh)(1 - mu*g_sc) = p_org, found by
golden-section search on the squared residual.
"""

import numpy as np

from markgrid import (
    AugmentationFactors,
    RenderSpec,
    augment,
    make_sample,
    probabilities,
    solve_mu,
    solve_policy,
)

factors = AugmentationFactors(0.4, 0.3, 0.3)
for p_org in (1.0, 0.75, 0.5, 0.294):
    mu = solve_mu(p_org, factors)
    p = probabilities(mu, factors)
    untouched = (1 - p[0]) * (1 - p[1]) * (1 - p[2])
    print(f"p_org={p_org:<5} mu={mu:.6f} p=({p[0]:.4f},{p[1]:.4f},{p[2]:.4f}) "
          f"product={untouched:.6f}")

# Empirical check: at p_org = 0.5, about half of the augmented copies come
# back byte-identical to the input.
policy = solve_policy(0.5, factors)
image = make_sample("cfmt", RenderSpec(), [3, 3]).image.astype(np.float32)
rng = np.random.default_rng(0)
n = 4000
untouched = sum(np.array_equal(augment(image, policy, rng), image) for _ in range(n))
print(f"\nuntouched fraction over {n} draws: {untouched / n:.4f} (target 0.5)")
