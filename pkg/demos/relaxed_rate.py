"""
Relaxed rate of the binary model
================================

The binary model charges a quantized latent with two flags, a sign and an
explicit magnitude.  Between integers the rate is a blend of the two
neighbouring code lengths, weighted by a piecewise linear ramp, so that
training sees the same numbers as the coder at integer points.
"""

import numpy as np

from latentbin import BinaryModelParams, binary_code_length, gamma, relaxed_binary_rate, relaxed_binary_rate_grad

params = BinaryModelParams(mu=0.0, sigma=1.5, p_g0=0.4, p_g1=0.3)

# Discrete code lengths for the first few magnitudes.
for k in range(5):
    print(f"L({k}) = {float(binary_code_length(k, params)):.4f} bits")

# The blend weight stays at one up to 1/2, then falls linearly.
print("\n   t   gamma(t)")
for t in (0.0, 0.3, 0.5, 0.75, 1.0, 1.25, 1.5, 2.9):
    print(f"{t:5.2f}   {gamma(t):.3f}")

# Relaxed rate on a fine grid; it matches the discrete lengths at integers.
print("\n    y   relaxed   d/dy")
for y in np.arange(-2.0, 2.01, 0.25):
    g = relaxed_binary_rate_grad(y, params)
    flag = "  (one-sided)" if g.subgradient else ""
    print(f"{y:5.2f}   {float(relaxed_binary_rate(y, params)):7.4f}  {float(g.d_y):+.4f}{flag}")

k = np.arange(-50, 51)
gap = np.max(np.abs(relaxed_binary_rate(k, params) - binary_code_length(k, params)))
print(f"\nlargest gap at integers |k| <= 50: {gap:.1e} bits")
