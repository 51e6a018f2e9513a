"""framecalc: moving frames, differential invariants, and Noether laws.

For a catalog of Lie group actions the package constructs moving frames
and differential invariants, derives invariantized Euler-Lagrange
equations and Noether conservation laws in the structured form
Ad(rho)^-1 v(I) = c, produces Killing-form first integrals, and verifies
every derived identity numerically along extremal solutions.
"""

__version__ = "0.1.0"
