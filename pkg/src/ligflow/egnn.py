"""Receptor EGNN, receptor signatures and the receptor-conditional ligand EGNN.

All forward functions are pure ``jax.numpy`` code over dense pair tensors.
Receptor information reaches the ligand network only through signatures
built from layer-wise mean receptor features, so the ligand network sees
nothing that moves when the receptor is rotated, translated or relabelled.
"""

from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

from .autodiff import init_mlp, mlp
from .errors import ContractError, NumericError


@dataclass(frozen=True)
class EGNNConfig:
    ligand_features: int
    receptor_features: int
    receptor_edge_dim: int = 0
    receptor_global_dim: int = 0
    hidden: int = 64
    signature: int = 32
    receptor_layers: int = 3
    ligand_layers: int = 3
    cutoff: float = 4.5
    distance_scale: float = 10.0
    actnorm: bool = False
    # Negative-control switch for the verification suite: "coordinates",
    # "index" or "both" inject non-equivariant terms into the ligand EGNN.
    mutation: str = ""


# ---------------------------------------------------------------- helpers


def _pair_geometry(x):
    diff = x[:, None, :] - x[None, :, :]
    sq = jnp.sum(diff**2, axis=-1)
    eye = jnp.eye(x.shape[0])
    # shift the diagonal before sqrt so the gradient stays finite there
    dist = jnp.sqrt(sq + eye) * (1.0 - eye)
    return diff, sq, dist, 1.0 - eye


def receptor_adjacency(positions, edge_index, cutoff):
    """Input edges united with all pairs closer than ``cutoff`` (no self loops)."""
    positions = np.asarray(positions, dtype=np.float64)
    n = len(positions)
    d = np.linalg.norm(positions[:, None] - positions[None], axis=-1)
    adj = (d < cutoff) & ~np.eye(n, dtype=bool)
    for i, j in np.asarray(edge_index, dtype=np.int64).reshape(-1, 2):
        adj[i, j] = adj[j, i] = True
    return adj.astype(np.float64)


def receptor_edge_tensor(n, edge_index, edge_attr, edge_dim):
    out = np.zeros((n, n, edge_dim))
    if edge_dim == 0:
        return out
    for (i, j), e in zip(np.asarray(edge_index).reshape(-1, 2), np.asarray(edge_attr).reshape(-1, edge_dim)):
        out[i, j] = out[j, i] = e
    return out


# --------------------------------------------------------------- receptor


def init_receptor(key, cfg):
    H = cfg.hidden
    keys = jax.random.split(key, cfg.receptor_layers + 1)
    params = {"embed": init_mlp(keys[0], [cfg.receptor_features, H]), "layers": []}
    if cfg.actnorm:
        params["actnorm"] = {"shift": jnp.zeros(cfg.receptor_features), "log_scale": jnp.zeros(cfg.receptor_features)}
    edge_in = 2 * H + 2 + cfg.receptor_edge_dim + cfg.receptor_global_dim
    for k in keys[1:]:
        ke, kb, kx, kh = jax.random.split(k, 4)
        params["layers"].append(
            {
                "phi_e": init_mlp(ke, [edge_in, H, H]),
                "phi_b": init_mlp(kb, [H, H, 1]),
                "phi_x": init_mlp(kx, [H, H, 1]),
                "phi_h": init_mlp(kh, [2 * H, H, H]),
            }
        )
    return params


def init_actnorm(params, features):
    """Data-dependent ActNorm initialisation from a stack of receptor features."""
    feats = np.concatenate([np.asarray(f) for f in features], axis=0)
    mean = feats.mean(axis=0)
    std = feats.std(axis=0) + 1e-6
    params = dict(params)
    params["actnorm"] = {"shift": jnp.asarray(-mean), "log_scale": jnp.asarray(-np.log(std))}
    return params


def receptor_forward(params, cfg, x, h, adj, edge_feat=None, glob=None):
    """Run the receptor EGNN; returns ``([h^1, ..., h^L], x^L)``."""
    n = x.shape[0]
    if n < 1:
        raise ContractError("receptor must contain at least one atom")
    if "actnorm" in params:
        h = (h + params["actnorm"]["shift"]) * jnp.exp(params["actnorm"]["log_scale"])
    h = mlp(params["embed"], h)
    _, sq0, _, _ = _pair_geometry(x)
    sq0 = sq0 / cfg.distance_scale
    extras = []
    if cfg.receptor_edge_dim:
        extras.append(edge_feat)
    if cfg.receptor_global_dim:
        extras.append(jnp.broadcast_to(glob, (n, n, cfg.receptor_global_dim)))
    feats = []
    for layer in params["layers"]:
        diff, sq, dist, offdiag = _pair_geometry(x)
        H = h.shape[-1]
        inp = jnp.concatenate(
            [
                jnp.broadcast_to(h[:, None, :], (n, n, H)),
                jnp.broadcast_to(h[None, :, :], (n, n, H)),
                (sq / cfg.distance_scale)[..., None],
                sq0[..., None],
                *extras,
            ],
            axis=-1,
        )
        m = mlp(layer["phi_e"], inp)
        b = mlp(layer["phi_b"], m, head="sigmoid")
        agg = jnp.sum(adj[..., None] * b * m, axis=1)
        w = mlp(layer["phi_x"], m)[..., 0] * offdiag
        x = x + jnp.sum(diff / (dist + 1.0)[..., None] * w[..., None], axis=1)
        h = h + mlp(layer["phi_h"], jnp.concatenate([h, agg], axis=-1))
        feats.append(h)
    return feats, x


def receptor_summary(features):
    """Concatenated layer-wise mean features ``(h_av^1, ..., h_av^L)``."""
    return jnp.concatenate([jnp.mean(f, axis=0) for f in features])


def check_layers(features):
    for k, f in enumerate(features):
        if not np.all(np.isfinite(np.asarray(f))):
            raise NumericError(f"non-finite receptor feature at layer {k + 1}")


# ------------------------------------------------------------- signatures


def init_signatures(key, cfg, n_maps=None):
    n_maps = cfg.ligand_layers if n_maps is None else n_maps
    keys = jax.random.split(key, n_maps + 1)
    S, H = cfg.signature, cfg.hidden
    first = init_mlp(keys[0], [cfg.receptor_layers * H + 2, H, S])
    return [first] + [init_mlp(k, [S, S, S]) for k in keys[1:]]


def _check_time(t):
    if isinstance(t, jax.core.Tracer):
        return
    if not 0.0 <= float(t) <= 1.0:
        raise ContractError(f"flow time {float(t)} outside [0, 1]")


def signatures(params, summary, t):
    """``g^0 = phi_g^0(summary, t)``, ``g^l = phi_g^l(g^(l-1))``; returns ``[g^1..g^L]``."""
    _check_time(t)
    t = jnp.asarray(t, dtype=jnp.float64)
    g = mlp(params[0], jnp.concatenate([summary, jnp.stack([t, 1.0 - t])]))
    out = []
    for phi in params[1:]:
        g = mlp(phi, g)
        out.append(g)
    return out


def signature_zero(params, summary, t):
    _check_time(t)
    t = jnp.asarray(t, dtype=jnp.float64)
    return mlp(params[0], jnp.concatenate([summary, jnp.stack([t, 1.0 - t])]))


# ----------------------------------------------------------------- ligand


def init_ligand(key, cfg, n_layers=None, zero_init=True):
    n_layers = cfg.ligand_layers if n_layers is None else n_layers
    d, H, S = cfg.ligand_features, cfg.hidden, cfg.signature
    layers = []
    for k in jax.random.split(key, n_layers):
        ke, ka, kx, kh = jax.random.split(k, 4)
        layer = {
            "phi_e": init_mlp(ke, [2 * d + 2 + S, H, H]),
            "phi_a": init_mlp(ka, [H + S, H, 1]),
            "phi_x": init_mlp(kx, [H + S, H, 1], zero_last=zero_init),
        }
        if d:
            layer["phi_h"] = init_mlp(kh, [d + H + S, H, d])
        layers.append(layer)
    return layers


def ligand_forward(layers, cfg, x, h, sigs, return_messages=False):
    """Receptor-conditional ligand EGNN on a fully connected ligand.

    ``sigs`` holds one signature per layer.  Returns the final positions
    and features, plus the last layer's pair messages if requested.
    """
    if len(sigs) != len(layers):
        raise ContractError(f"{len(sigs)} signatures supplied for {len(layers)} ligand layers")
    n = x.shape[0]
    if n < 1:
        raise ContractError("ligand must contain at least one atom")
    d = h.shape[-1]
    _, sq0, _, _ = _pair_geometry(x)
    sq0 = sq0 / cfg.distance_scale
    if cfg.mutation in ("index", "both"):
        h = h + 0.1 * jnp.arange(n, dtype=jnp.float64)[:, None]
    m = None
    for layer, g in zip(layers, sigs):
        diff, sq, dist, offdiag = _pair_geometry(x)
        S = g.shape[-1]
        gp = jnp.broadcast_to(g, (n, n, S))
        inp = jnp.concatenate(
            [
                jnp.broadcast_to(h[:, None, :], (n, n, d)),
                jnp.broadcast_to(h[None, :, :], (n, n, d)),
                (sq / cfg.distance_scale)[..., None],
                sq0[..., None],
                gp,
            ],
            axis=-1,
        )
        m = mlp(layer["phi_e"], inp)
        mg = jnp.concatenate([m, gp], axis=-1)
        b = mlp(layer["phi_a"], mg, head="sigmoid")
        agg = jnp.sum(b * m, axis=1)
        w = mlp(layer["phi_x"], mg)[..., 0]
        if cfg.mutation in ("coordinates", "both"):
            w = w + 0.1 * x[:, None, 0]
        w = w * offdiag
        x = x + jnp.sum(diff / (dist + 1.0)[..., None] * w[..., None], axis=1)
        if d:
            h = h + mlp(layer["phi_h"], jnp.concatenate([h, agg, jnp.broadcast_to(g, (n, S))], axis=-1))
    if return_messages:
        return x, h, m
    return x, h
