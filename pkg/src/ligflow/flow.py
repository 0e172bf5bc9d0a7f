"""Receptor-conditioned ligand flow.

The vertex vector ``v`` of a ligand is first re-centred on the centre of
mass of the whole complex by the affine map ``u = Omega v + omega``; the
result is the endpoint ``u(1)`` of the ODE ``du/dt = vec(gamma(G_u, G_rec))``
started from ``z ~ N(0, I)``.  Log-densities combine the Gaussian base,
the integrated Jacobian trace along the reverse trajectory and the
constant ``log|det Omega| = 3 log(1 - alpha)``.
"""

from dataclasses import dataclass
from functools import partial
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from . import egnn
from .autodiff import check_finite
from .errors import ContractError, DimensionError, NumericError
from .molgraph import devectorize, vectorize

LOG_2PI = float(np.log(2 * np.pi))


# ------------------------------------------------------------ affine map


@dataclass(frozen=True, eq=False)
class AffineComplexMap:
    n_atoms: int
    n_receptor: int
    feature_dim: int
    receptor_centroid: np.ndarray

    @property
    def alpha(self):
        return self.n_atoms / (self.n_atoms + self.n_receptor)

    @property
    def dim(self):
        return (3 + self.feature_dim) * self.n_atoms

    @property
    def log_abs_det(self):
        return 3.0 * np.log1p(-self.alpha)

    def omega_matrix(self):
        """Dense ``Omega``; only meant for checks on small systems."""
        n, d = self.n_atoms, self.feature_dim
        pos = np.eye(3 * n) - (self.alpha / n) * np.kron(np.ones((n, n)), np.eye(3))
        out = np.eye(self.dim)
        out[: 3 * n, : 3 * n] = pos
        return out

    def offset(self):
        """Dense ``omega``: positions ``-(1 - alpha) x_rec_av``, features zero."""
        out = np.zeros(self.dim)
        out[: 3 * self.n_atoms] = np.tile(-(1 - self.alpha) * self.receptor_centroid, self.n_atoms)
        return out

    def apply(self, v):
        """``u = Omega v + omega`` (positions minus the complex mean)."""
        v = np.asarray(v, dtype=np.float64)
        if v.shape[-1] != self.dim:
            raise DimensionError(f"vector of length {v.shape[-1]} for map of dimension {self.dim}")
        return np.asarray(to_centered(v, self.alpha, self.receptor_centroid, self.feature_dim))

    def invert(self, u):
        """``v = Omega^{-1} (u - omega)``."""
        u = np.asarray(u, dtype=np.float64)
        if u.shape[-1] != self.dim:
            raise DimensionError(f"vector of length {u.shape[-1]} for map of dimension {self.dim}")
        return np.asarray(from_centered(u, self.alpha, self.receptor_centroid, self.feature_dim))


def build_affine_map(n_atoms, receptor, feature_dim):
    """Affine map for a ligand of ``n_atoms`` atoms bound to ``receptor``."""
    if n_atoms < 1:
        raise ContractError("ligand must have at least one atom")
    positions = np.asarray(getattr(receptor, "positions", receptor), dtype=np.float64).reshape(-1, 3)
    if len(positions) < 1:
        raise ContractError("receptor must have at least one atom")
    return AffineComplexMap(int(n_atoms), len(positions), int(feature_dim), positions.mean(axis=0))


def to_centered(v, alpha, centroid, feature_dim):
    x, h = devectorize(v, feature_dim)
    shift = alpha * jnp.mean(x, axis=-2, keepdims=True) + (1 - alpha) * centroid
    return jnp.concatenate([(x - shift).reshape(v.shape[:-1] + (-1,)), h.reshape(v.shape[:-1] + (-1,))], axis=-1)


def from_centered(u, alpha, centroid, feature_dim):
    # Omega^{-1} = I + alpha / (1 - alpha) P on positions, P the atom-mean projector
    x, h = devectorize(u, feature_dim)
    xc = x + (1 - alpha) * centroid
    x = xc + alpha / (1 - alpha) * jnp.mean(xc, axis=-2, keepdims=True)
    return jnp.concatenate([x.reshape(u.shape[:-1] + (-1,)), h.reshape(u.shape[:-1] + (-1,))], axis=-1)


# ------------------------------------------------------------ solver


@dataclass(frozen=True)
class SolverConfig:
    steps: int = 40
    method: str = "rk4"

    def __post_init__(self):
        if int(self.steps) < 1:
            raise ContractError("solver needs at least one step")
        if self.method != "rk4":
            raise ContractError(f"unsupported solver {self.method!r}")


def rk4(field, y0, t0, t1, steps):
    """Fixed-step classical Runge-Kutta for pytree states; differentiable."""
    dt = (t1 - t0) / steps

    def add(a, b, c):
        return jax.tree_util.tree_map(lambda p, q: p + c * q, a, b)

    def step(y, k):
        t = t0 + k * dt
        k1 = field(y, t)
        k2 = field(add(y, k1, dt / 2), t + dt / 2)
        k3 = field(add(y, k2, dt / 2), t + dt / 2)
        k4 = field(add(y, k3, dt), t + dt)
        incr = jax.tree_util.tree_map(lambda a, b, c, d: (a + 2 * b + 2 * c + d) / 6, k1, k2, k3, k4)
        return add(y, incr, dt), None

    # rematerialise each step under reverse mode; memory stays O(steps * |state|)
    y, _ = jax.lax.scan(jax.checkpoint(step), y0, jnp.arange(steps, dtype=jnp.float64))
    return y


# ------------------------------------------------------------ fields


class ReceptorInput(NamedTuple):
    positions: jnp.ndarray
    features: jnp.ndarray
    adjacency: jnp.ndarray
    edge_features: jnp.ndarray
    globals: jnp.ndarray


def prepare_receptor(graph, cfg=None):
    """Dense arrays for a receptor graph (adjacency uses the distance cutoff)."""
    n = graph.n_atoms
    if n < 1:
        raise ContractError("receptor must have at least one atom")
    cutoff = cfg.cutoff if cfg is not None else 4.5
    edge_dim = cfg.receptor_edge_dim if cfg is not None else 0
    glob_dim = cfg.receptor_global_dim if cfg is not None else 0
    edge_feat = egnn.receptor_edge_tensor(n, graph.edge_index, graph.edge_attr[:, :edge_dim], edge_dim)
    glob = np.concatenate(graph.globals) if graph.globals else np.zeros(0)
    glob = np.resize(glob, glob_dim) if glob_dim else np.zeros(0)
    return ReceptorInput(
        jnp.asarray(graph.positions),
        jnp.asarray(graph.features),
        jnp.asarray(egnn.receptor_adjacency(graph.positions, graph.edge_index, cutoff)),
        jnp.asarray(edge_feat),
        jnp.asarray(glob),
    )


@jax.tree_util.register_pytree_node_class
class FlowModel:
    """Receptor EGNN + signature maps + ligand EGNN used as the flow field."""

    def __init__(self, config, params):
        self.config = config
        self.params = params

    @classmethod
    def init(cls, key, config, zero_init=True):
        kr, ks, kl = jax.random.split(key, 3)
        params = {
            "receptor": egnn.init_receptor(kr, config),
            "signature": egnn.init_signatures(ks, config),
            "ligand": egnn.init_ligand(kl, config, zero_init=zero_init),
        }
        return cls(config, params)

    @property
    def feature_dim(self):
        return self.config.ligand_features

    def tree_flatten(self):
        return (self.params,), self.config

    @classmethod
    def tree_unflatten(cls, config, children):
        return cls(config, children[0])

    def encode(self, rec):
        feats, _ = egnn.receptor_forward(
            self.params["receptor"], self.config, rec.positions, rec.features, rec.adjacency, rec.edge_features, rec.globals
        )
        return {"summary": egnn.receptor_summary(feats)}

    def velocity(self, u, t, ctx):
        x, h = devectorize(u, self.feature_dim)
        sigs = egnn.signatures(self.params["signature"], ctx["summary"], t)
        x, h = egnn.ligand_forward(self.params["ligand"], self.config, x, h, sigs)
        return jnp.concatenate([x.reshape(-1), h.reshape(-1)])


@jax.tree_util.register_pytree_node_class
class ConstantField:
    """``du/dt = c``; a test double for the flow field."""

    def __init__(self, value, feature_dim):
        self.value = value
        self.feature_dim = feature_dim

    def tree_flatten(self):
        return (self.value,), self.feature_dim

    @classmethod
    def tree_unflatten(cls, feature_dim, children):
        return cls(children[0], feature_dim)

    def encode(self, rec):
        return {}

    def velocity(self, u, t, ctx):
        return jnp.broadcast_to(self.value, u.shape) + 0.0 * u


@jax.tree_util.register_pytree_node_class
class LinearField:
    """``du/dt = rate * u + shift * tanh(u)``; rate/shift are trainable scalars."""

    def __init__(self, rate, shift, feature_dim):
        self.rate = rate
        self.shift = shift
        self.feature_dim = feature_dim

    def tree_flatten(self):
        return (self.rate, self.shift), self.feature_dim

    @classmethod
    def tree_unflatten(cls, feature_dim, children):
        return cls(*children, feature_dim)

    def encode(self, rec):
        return {}

    def velocity(self, u, t, ctx):
        return self.rate * u + self.shift * jnp.tanh(u)


def zero_field(feature_dim):
    return ConstantField(jnp.float64(0.0), feature_dim)


# ------------------------------------------------------------ integration


def _flow(model, rec, z, steps, inverse):
    ctx = model.encode(rec)
    field = lambda u, t: model.velocity(u, t, ctx)  # noqa: E731
    if inverse:
        return rk4(field, z, 1.0, 0.0, steps)
    return rk4(field, z, 0.0, 1.0, steps)


_flow_jit = jax.jit(_flow, static_argnames=("steps", "inverse"))


def _as_receptor(model, receptor):
    if isinstance(receptor, ReceptorInput):
        return receptor
    return prepare_receptor(receptor, getattr(model, "config", None))


def integrate(model, receptor, z, cfg=SolverConfig(), inverse=False):
    """Integrate the flow from ``t=0`` to ``1`` (or back when ``inverse``)."""
    z = jnp.asarray(z, dtype=jnp.float64)
    if z.shape[-1] % (3 + model.feature_dim):
        raise DimensionError(f"state of length {z.shape[-1]} is not (3 + d_h) N")
    rec = _as_receptor(model, receptor)
    out = _flow_jit(model, rec, z, cfg.steps, inverse)
    if not np.all(np.isfinite(np.asarray(out))):
        t = _first_nonfinite_time(model, rec, z, cfg.steps, inverse)
        raise NumericError(f"non-finite flow field at t={t:.6g}")
    return out


def _first_nonfinite_time(model, rec, z, steps, inverse):
    """Replay the trajectory one step at a time to locate the first bad time."""
    ctx = model.encode(rec)
    t0, t1 = (1.0, 0.0) if inverse else (0.0, 1.0)
    dt = (t1 - t0) / steps
    y = z
    for k in range(steps):
        t = t0 + k * dt
        if not np.all(np.isfinite(np.asarray(model.velocity(y, t, ctx)))):
            return t
        y = rk4(lambda u, s: model.velocity(u, s, ctx), y, t, t + dt, 1)
        if not np.all(np.isfinite(np.asarray(y))):
            return t + dt
    return t1


def sample(model, receptor, n_atoms, rng, cfg=SolverConfig(), n_samples=None):
    """Draw vertex lists ``(positions, features)`` for ``n_atoms`` ligand atoms."""
    if n_atoms < 1:
        raise ContractError("ligand must have at least one atom")
    rec = _as_receptor(model, receptor)
    amap = build_affine_map(n_atoms, np.asarray(rec.positions), model.feature_dim)
    shape = (amap.dim,) if n_samples is None else (n_samples, amap.dim)
    z = rng.standard_normal(shape)
    if n_samples is None:
        u1 = integrate(model, rec, z, cfg)
    else:
        u1 = _sample_batch_jit(model, rec, jnp.asarray(z), cfg.steps)
        check_finite(u1, "sampled flow states")
    v = amap.invert(np.asarray(u1))
    return devectorize(v, model.feature_dim)


@partial(jax.jit, static_argnames=("steps",))
def _sample_batch_jit(model, rec, z, steps):
    ctx = model.encode(rec)
    field = lambda u, t: jax.vmap(lambda ui: model.velocity(ui, t, ctx))(u)  # noqa: E731
    return rk4(field, z, 0.0, 1.0, steps)


# ------------------------------------------------------------ densities


def gaussian_log_density(z):
    return -0.5 * jnp.sum(z**2, axis=-1) - 0.5 * z.shape[-1] * LOG_2PI


def _log_density_terms(model, rec, v, steps, probes):
    """Return ``(log p per probe-or-exact, z)``.

    ``probes`` is ``None`` for the exact trace, otherwise a ``(K, d)`` array
    of Rademacher vectors held fixed along the trajectory.
    """
    d_h = model.feature_dim
    n = v.shape[-1] // (3 + d_h)
    n_rec = rec.positions.shape[0]
    alpha = n / (n + n_rec)
    centroid = jnp.mean(rec.positions, axis=0)
    u1 = to_centered(v, alpha, centroid, d_h)
    ctx = model.encode(rec)

    def f(u, t):
        return model.velocity(u, t, ctx)

    if probes is None:

        def aug(state, t):
            u, _ = state
            jac = jax.jacfwd(lambda w: f(w, t))(u)
            return f(u, t), jnp.trace(jac)

        acc0 = jnp.float64(0.0)
    else:

        def aug(state, t):
            u, _ = state
            du, jvp = jax.linearize(lambda w: f(w, t), u)
            quad = jax.vmap(lambda e: jnp.dot(e, jvp(e)))(probes)
            return du, quad

        acc0 = jnp.zeros(probes.shape[0])

    z, acc = rk4(aug, (u1, acc0), 1.0, 0.0, steps)
    log_det = 3.0 * jnp.log1p(-alpha)
    return gaussian_log_density(z) + acc + log_det, z


@partial(jax.jit, static_argnames=("steps",))
def _log_density_exact(model, rec, v, steps):
    return _log_density_terms(model, rec, v, steps, None)[0]


@partial(jax.jit, static_argnames=("steps",))
def _log_density_probes(model, rec, v, steps, probes):
    return _log_density_terms(model, rec, v, steps, probes)[0]


def rademacher(key, n_probes, dim):
    return jax.random.rademacher(key, (n_probes, dim), dtype=jnp.float64)


def log_density(model, receptor, positions, features, cfg=SolverConfig(), trace="exact", probes=1, key=None,
                return_stderr=False):
    """Log-density of a ligand vertex list given a receptor.

    ``trace`` is ``"exact"`` (full Jacobian) or ``"hutchinson"`` with
    ``probes`` Rademacher vectors; with ``return_stderr`` the Hutchinson
    estimate comes back as ``(mean, standard_error)``.
    """
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    features = np.asarray(features, dtype=np.float64).reshape(len(positions), -1)
    if len(positions) < 1:
        raise ContractError("ligand must have at least one atom")
    if features.shape[1] != model.feature_dim:
        raise DimensionError(f"features of width {features.shape[1]}, model expects {model.feature_dim}")
    rec = _as_receptor(model, receptor)
    v = jnp.asarray(vectorize(positions, features))
    if trace == "exact":
        out = float(_log_density_exact(model, rec, v, cfg.steps))
        if not np.isfinite(out):
            raise NumericError("non-finite log-density")
        return (out, 0.0) if return_stderr else out
    if trace != "hutchinson":
        raise ContractError(f"unknown trace mode {trace!r}")
    key = jax.random.PRNGKey(0) if key is None else key
    per_probe = np.asarray(_log_density_probes(model, rec, v, cfg.steps, rademacher(key, probes, v.shape[0])))
    check_finite(per_probe, "log-density")
    mean = float(per_probe.mean())
    if return_stderr:
        se = float(per_probe.std(ddof=1) / np.sqrt(probes)) if probes > 1 else float("nan")
        return mean, se
    return mean


def nll_loss(model, batch, cfg=SolverConfig(), trace="exact", probes=1, key=None):
    """Mean negative log-density over ``[(positions, features, receptor), ...]`` and its gradient.

    Returns ``(loss, grads)`` where ``grads`` matches the model pytree.
    """
    if not batch:
        raise ContractError("empty batch")
    keys = jax.random.split(jax.random.PRNGKey(0) if key is None else key, len(batch))
    total = 0.0
    grads = None
    for (positions, features, receptor), k in zip(batch, keys):
        rec = _as_receptor(model, receptor)
        v = jnp.asarray(vectorize(positions, features))
        eps = None if trace == "exact" else rademacher(k, probes, v.shape[0])
        loss, g = _nll_and_grad(model, rec, v, cfg.steps, eps)
        total += float(loss)
        grads = g if grads is None else jax.tree_util.tree_map(jnp.add, grads, g)
    n = len(batch)
    return total / n, jax.tree_util.tree_map(lambda a: a / n, grads)


def _single_nll(model, rec, v, steps, eps):
    return -jnp.mean(_log_density_terms(model, rec, v, steps, eps)[0])


_nll_and_grad = jax.jit(jax.value_and_grad(_single_nll), static_argnames=("steps",))


def batched_nll(model, recs, vs, steps, eps):
    """Mean NLL over a stacked batch of same-shaped records (differentiable)."""
    if eps is None:
        per = jax.vmap(lambda r, v: _single_nll(model, r, v, steps, None))(recs, vs)
    else:
        per = jax.vmap(lambda r, v, e: _single_nll(model, r, v, steps, e))(recs, vs, eps)
    return jnp.mean(per)
