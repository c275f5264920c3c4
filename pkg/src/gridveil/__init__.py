"""gridveil: privacy-preserving TSO-DSO optimal power flow.

A DSO trains surrogate models (a feasibility polytope plus quadratic
PCC-flow regressors) on non-sensitive operating data of its distribution
grid.  The TSO embeds those surrogates into its own OPF and dispatches
distribution-level flexibility without ever seeing the distribution grid
model.  The package covers the whole desk-scale pipeline: case handling,
power flow, dataset sampling, surrogate training, the privacy-preserving
OPF, and a paired benchmark against the integrated AC-OPF.
"""

__version__ = "0.1.0"
