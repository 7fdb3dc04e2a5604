"""Mollified normal trace of a smooth stress field as the bump radius shrinks.

Run: python3 demos/trace_convergence.py
"""
import numpy as np

from frictionstokes import DomainSpec, Mollifier, regularized_normal_trace
from frictionstokes.stress import StressField, analytic_norms

box = DomainSpec(2, ((0.0, 1.0),), 1.0)
row = lambda x: np.stack([x[:, 0] * x[:, 1], 1.0 + np.sin(np.pi * x[:, 0]) * np.exp(x[:, 1])], 1)  # noqa: E731
div = lambda x: x[:, 1] + np.sin(np.pi * x[:, 0]) * np.exp(x[:, 1])  # noqa: E731
field = StressField(row_fn=row, div_fn=div)
s_l2, d_l2 = analytic_norms(row, div, box)

exact = -row(np.array([[0.5, 0.0]]))[0, 1]
print(f"boundary value of -sigma_22 at x'=0.5: {exact:.6f}")
for rho in (0.2, 0.1, 0.05, 0.025):
    m = Mollifier(rho)
    val = regularized_normal_trace(field, None, m, [0.5], domain=box)
    bound = m.continuity_constant() * (s_l2 + d_l2)
    print(f"rho={rho:<6} R={val:.6f} error={abs(val - exact):.2e} continuity bound={bound:.2f}")
