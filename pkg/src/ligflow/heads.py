"""Number, edge and property distributions plus a bond-length baseline.

The number head reads only final-layer receptor features through a mean,
the edge head scores every ligand pair with a second receptor-conditional
ligand EGNN started from the given vertices, and the property head chains
categorical factors ``p(a_k | a_<k, V, E, receptor)``.
"""

from dataclasses import dataclass, field

import jax
import jax.numpy as jnp
import numpy as np

from . import egnn
from .autodiff import init_mlp, mlp
from .errors import ContractError, SchemaError

N_MAX = 30
BOND_TYPES = ("single", "double", "triple")


# ---------------------------------------------------------------- number


def init_number_head(key, cfg, n_max=N_MAX, inner=True, zero_last=False):
    ki, ko = jax.random.split(key)
    H = cfg.hidden
    params = {"outer": init_mlp(ko, [H, H, n_max], zero_last=zero_last)}
    if inner:
        params["inner"] = init_mlp(ki, [H, H, H])
    return params


def number_log_probs(params, receptor_features):
    """Log-simplex over ``N = 1..N_max`` from final-layer receptor features."""
    h = receptor_features
    if h.shape[0] < 1:
        raise ContractError("receptor must have at least one atom")
    if "inner" in params:
        h = mlp(params["inner"], h)
    return mlp(params["outer"], jnp.mean(h, axis=0), head="log_softmax")


def number_nll(params, receptor_features, n_true):
    n_max = params["outer"][-1]["w"].shape[1]
    if not 1 <= int(n_true) <= n_max:
        raise ContractError(f"atom count {n_true} outside 1..{n_max}")
    return -number_log_probs(params, receptor_features)[int(n_true) - 1]


# ------------------------------------------------------------------ edges


def init_edge_head(key, cfg, n_classes=len(BOND_TYPES) + 1, layers=2):
    ks, kl, ko = jax.random.split(key, 3)
    return {
        "signature": egnn.init_signatures(ks, cfg, n_maps=layers),
        "egnn": egnn.init_ligand(kl, cfg, n_layers=layers, zero_init=False),
        "out": init_mlp(ko, [cfg.hidden, cfg.hidden, n_classes]),
    }


def edge_embedding(params, cfg, positions, features, summary):
    """Run the edge-head EGNN from ``V``; returns ``(h_final, pair_messages)``."""
    sigs = egnn.signatures(params["signature"], summary, 1.0)
    _, h, m = egnn.ligand_forward(params["egnn"], cfg, positions, features, sigs, return_messages=True)
    return h, m


def edge_log_probs(params, cfg, positions, features, summary):
    """Per-pair log-simplex ``(N, N, d_e + 1)``; the last class means "no bond".

    Pair messages are symmetrised because edges are undirected; only the
    ``i < j`` entries are meaningful.
    """
    if positions.shape[0] < 2:
        raise ContractError("edge distribution needs at least two atoms")
    _, m = edge_embedding(params, cfg, positions, features, summary)
    return mlp(params["out"], m + jnp.swapaxes(m, 0, 1), head="log_softmax")


def edge_labels(n, edge_index, edge_attr, n_classes):
    """Dense class table from an edge list; absent pairs get the null class."""
    labels = np.full((n, n), n_classes - 1, dtype=np.int64)
    for (i, j), e in zip(np.asarray(edge_index).reshape(-1, 2), np.asarray(edge_attr).reshape(len(edge_index), -1)):
        labels[i, j] = labels[j, i] = int(np.argmax(e))
    return labels


def edge_pair_terms(table, labels):
    """Log-probabilities of each labelled pair ``i < j`` (in row-major order)."""
    n = table.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    return table[iu, ju, labels[iu, ju]]


def edge_log_likelihood(table, labels):
    """Joint log-probability of a full edge labelling (pairs independent)."""
    return jnp.sum(edge_pair_terms(table, labels))


# ------------------------------------------------------------- properties


def init_property_head(key, cfg, property_sizes, width=16):
    property_sizes = [int(k) for k in property_sizes]
    H = cfg.hidden
    keys = jax.random.split(key, 3 + 2 * len(property_sizes))
    params = {
        "node": init_mlp(keys[0], [cfg.ligand_features, H, width]),
        "edge": init_mlp(keys[1], [len(BOND_TYPES), H, width]),
        "prev": init_mlp(keys[2], [width, H, width]),
        "W": [jax.random.normal(k, (width, size)) / np.sqrt(size) for k, size in zip(keys[3::2], property_sizes)],
        "out": [init_mlp(k, [3 * width, H, size]) for k, size in zip(keys[4::2], property_sizes)],
    }
    return params


def property_log_probs(params, node_features, edge_attr, previous, k):
    """Log-simplex for property ``k`` (0-based) given ``previous = [a_1..a_k]`` one-hots.

    ``node_features`` are the edge-head EGNN's final vertex features.
    """
    n_props = len(params["out"])
    if not 0 <= k < n_props:
        raise ContractError(f"property index {k} outside 0..{n_props - 1}")
    if len(previous) < k:
        raise ContractError(f"property {k} needs {k} preceding values")
    width = params["W"][0].shape[0]
    xi_h = jnp.mean(mlp(params["node"], node_features), axis=0)
    if edge_attr.shape[0]:
        xi_e = jnp.mean(mlp(params["edge"], edge_attr), axis=0)
    else:
        xi_e = jnp.zeros(width)
    acc = jnp.zeros(width)
    for j in range(k):
        acc = acc + params["W"][j] @ jnp.asarray(previous[j], dtype=jnp.float64)
    xi_a = mlp(params["prev"], acc)
    return mlp(params["out"][k], jnp.concatenate([xi_h, xi_e, xi_a]), head="log_softmax")


def property_nll(params, node_features, edge_attr, properties):
    total = 0.0
    for k, a in enumerate(properties):
        total = total - jnp.dot(jnp.asarray(a), property_log_probs(params, node_features, edge_attr, properties, k))
    return total


# ------------------------------------------------------------- bond table

# Single, double and triple covalent radii (Å) for the ligand alphabet.
COVALENT_RADII = {
    "C": (0.75, 0.67, 0.60),
    "N": (0.71, 0.60, 0.54),
    "O": (0.63, 0.57, 0.53),
    "F": (0.64, 0.59, 0.53),
}


@dataclass(frozen=True)
class BondTable:
    """Maximum bond distances per element pair for single/double/triple bonds.

    A pair is bonded with the highest order whose threshold it meets.
    """

    elements: tuple = ("C", "N", "O", "F")
    thresholds: dict = field(default_factory=dict)

    @classmethod
    def from_radii(cls, radii=None, tolerance=0.25, multiple_tolerance=0.05):
        radii = COVALENT_RADII if radii is None else radii
        table = {}
        for a in radii:
            for b in radii:
                single, double, triple = (ra + rb for ra, rb in zip(radii[a], radii[b]))
                limits = (single + tolerance, double + multiple_tolerance, triple + multiple_tolerance)
                if not limits[0] > limits[1] > limits[2]:
                    raise ContractError(f"thresholds for {a}-{b} are not strictly decreasing")
                table[(a, b)] = limits
        return cls(tuple(radii), table)

    def classify(self, a, b, distance):
        """Bond order index (0 single, 1 double, 2 triple) or ``None``."""
        try:
            single, double, triple = self.thresholds[(a, b)]
        except KeyError:
            raise SchemaError(f"no bond thresholds for element pair {a}-{b}") from None
        if distance <= triple:
            return 2
        if distance <= double:
            return 1
        if distance <= single:
            return 0
        return None


def infer_bonds(positions, elements, table=None):
    """Edge list ``(edge_index, edge_attr)`` from interatomic distances."""
    table = BondTable.from_radii() if table is None else table
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if len(elements) != len(positions):
        raise ContractError("one element per atom required")
    for el in elements:
        if el not in table.elements:
            raise SchemaError(f"unknown element {el!r}")
    index, attr = [], []
    for i in range(len(positions)):
        for j in range(i + 1, len(positions)):
            order = table.classify(elements[i], elements[j], float(np.linalg.norm(positions[i] - positions[j])))
            if order is not None:
                index.append((i, j))
                attr.append(np.eye(len(BOND_TYPES))[order])
    return np.asarray(index, dtype=np.int64).reshape(-1, 2), np.asarray(attr).reshape(-1, len(BOND_TYPES))
