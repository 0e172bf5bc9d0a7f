"""
Flow basics
===========

The pieces of the conditional flow on toy fields where the answer is
known in closed form, then the trace estimator on a real model.
"""

import jax
import jax.numpy as jnp
import numpy as np

from ligflow import MolecularGraph
from ligflow.flow import (ConstantField, FlowModel, LinearField, SolverConfig, build_affine_map, gaussian_log_density,
                          integrate, log_density, sample, zero_field)
from ligflow.egnn import EGNNConfig

rng = np.random.default_rng(1)
p = np.array([2.0, -1.0, 0.5])
receptor = MolecularGraph(p[None], np.eye(5)[:1])

# %% one ligand atom, one receptor atom: Omega is I/2 on positions and omega = -p/2
amap = build_affine_map(1, receptor.positions, 0)
print("Omega =\n", amap.omega_matrix(), "\nomega =", amap.offset())

# %% with a zero field a sample is just the inverse affine map of a Gaussian draw: v = 2 z + p
x, _ = sample(zero_field(0), receptor, 1, np.random.default_rng(0))
z = np.random.default_rng(0).standard_normal(3)
print("sample", x[0], " closed form", 2 * z + p)

# %% density of that sample: Gaussian at z plus 3 log(1 - alpha) = log(1/8)
print("log p", log_density(zero_field(0), receptor, x, np.zeros((1, 0))),
      " closed form", float(gaussian_log_density(z) + np.log(1 / 8)))

# %% RK4 against exact solutions
z = rng.standard_normal(8)
print("constant field error", np.abs(integrate(ConstantField(jnp.ones(8), 1), receptor, z) - (z + 1)).max())
print("decay error", np.abs(integrate(LinearField(-1.0, 0.0, 1), receptor, z) - z / np.e).max())

# %% exact trace against the Hutchinson estimator on a small random model
cfg = EGNNConfig(ligand_features=5, receptor_features=5, hidden=16, signature=8, receptor_layers=2, ligand_layers=2)
model = FlowModel.init(jax.random.PRNGKey(2), cfg, zero_init=False)
rec = MolecularGraph(rng.standard_normal((8, 3)) * 3, np.eye(5)[rng.integers(0, 5, 8)])
xl, hl = rng.standard_normal((4, 3)), rng.standard_normal((4, 5))
exact = log_density(model, rec, xl, hl)
for k in (4, 16, 256):
    est, se = log_density(model, rec, xl, hl, trace="hutchinson", probes=k, key=jax.random.PRNGKey(k),
                          return_stderr=True)
    print(f"K={k:4d}  estimate {est:9.4f} +- {se:.4f}   exact {exact:9.4f}")

# %% forward then inverse
z = rng.standard_normal(32)
back = integrate(model, rec, integrate(model, rec, z, SolverConfig(steps=40)), SolverConfig(steps=40), inverse=True)
print("round trip relative error", np.linalg.norm(back - z) / np.linalg.norm(z))
