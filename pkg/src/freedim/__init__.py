"""Weighted Gaussian matrix models of L^inf[0,1]-circular operators.

Exact kernel geometry and free entropy dimension bounds, seeded samplers,
a from-scratch complex Schur solver, Dyson's triangular density and
packing/covering estimators for matrix point clouds.
"""

__version__ = "0.1.0"
