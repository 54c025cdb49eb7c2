"""How much does the working correlation matter?

Designs are optimized at a guessed coefficient rho0 but scored at the
truth.  The exact correlation between the two quadratic forms says how
interchangeable the targets are; the scatter samples confirm it.

    python3 demos/robustness.py
"""

import numpy as np

from netdesign import (
    generate_bernoulli_network,
    generate_pm1_covariates,
    k_matrix,
    quadform_correlation,
    repair_isolated,
    robustness_scatter,
)

net = repair_isolated(
    generate_bernoulli_network(50, 0.08, seed=21), "connect", seed=22
).network
cov = generate_pm1_covariates(50, 5, seed=23)

grid = np.round(np.arange(0.1, 0.91, 0.1), 10)
kernels = {float(r): k_matrix(net, cov, float(r)) for r in grid}

print("correlation of x'K(rho0)x with x'K(rho)x across iid designs")
print("rho0 \\ rho " + " ".join(f"{r:5.1f}" for r in grid))
for r0 in grid:
    row = [quadform_correlation(kernels[float(r0)], kernels[float(r)])
           for r in grid]
    print(f"{r0:10.1f} " + " ".join(f"{c:5.2f}" for c in row))

# Spot check one pair against sampled designs.
sc = robustness_scatter(net, cov, 0.5, 0.9, n_designs=2000, seed=7)
exact = quadform_correlation(kernels[0.5], kernels[0.9])
print(f"\nrho0=0.5 vs rho=0.9: exact {exact:.3f}, "
      f"sampled {sc.sample_correlation:.3f}")
