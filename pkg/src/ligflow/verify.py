"""Executable invariance checks for the map, the flow and the heads.

Each check draws random graphs and transforms from recorded integer
seeds and reports the largest residual against a per-check tolerance.
Permutation laws hold up to float reassociation; rotation laws carry
solver error, hence the looser tolerances.
"""

from dataclasses import asdict, dataclass, field

import jax
import jax.numpy as jnp
import numpy as np

from . import egnn, heads
from .errors import ContractError
from .flow import (SolverConfig, build_affine_map, integrate, log_density, prepare_receptor)
from .molgraph import (MolecularGraph, apply_permutation, apply_rigid, devectorize, permute_vector, rotate_vector,
                       sample_random_permutation, sample_random_rigid, vectorize)

TOLERANCES = {
    "gamma_rotation": 1e-6,
    "gamma_permutation": 1e-10,
    "affine_map_laws": 1e-9,
    "flow_laws": 1e-5,
    "density_rigid": 1e-4,
    "density_permutation": 1e-6,
    "heads_rigid": 1e-6,
    "heads_permutation": 1e-10,
}


@dataclass
class InvarianceReport:
    name: str
    trials: int
    max_residual: float
    tolerance: float
    seeds: list = field(default_factory=list)

    @property
    def passed(self):
        return bool(self.max_residual <= self.tolerance)

    def to_json(self):
        return asdict(self) | {"passed": self.passed}

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name:<22} {self.trials:>4} {self.max_residual:12.3e} {self.tolerance:10.1e}  {status}"


def render(reports):
    lines = [f"{'check':<22} {'n':>4} {'max residual':>12} {'tolerance':>10}  status"]
    lines += [str(r) for r in reports]
    return "\n".join(lines)


# ------------------------------------------------------------ random inputs


def random_graph(rng, n_atoms, feature_dim, edges=True, scale=1.5):
    positions = rng.standard_normal((n_atoms, 3)) * scale
    features = rng.standard_normal((n_atoms, feature_dim))
    pairs = [(i, j) for i in range(n_atoms) for j in range(i + 1, n_atoms)]
    if edges and pairs:
        keep = [p for p in pairs if rng.random() < 0.3]
        index = np.asarray(keep, dtype=np.int64).reshape(-1, 2)
    else:
        index = np.zeros((0, 2), dtype=np.int64)
    attr = np.eye(len(heads.BOND_TYPES))[rng.integers(0, len(heads.BOND_TYPES), len(index))].reshape(-1, 3)
    return MolecularGraph(positions, features, index, attr)


def random_one_hot_graph(rng, n_atoms, width, scale=1.5, edges=True):
    g = random_graph(rng, n_atoms, width, edges=edges, scale=scale)
    return MolecularGraph(g.positions, np.eye(width)[rng.integers(0, width, n_atoms)], g.edge_index, g.edge_attr,
                          g.globals)


def _relative(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def _check_trials(trials):
    if trials < 1:
        raise ContractError("at least one trial required")


def _flow_of(model):
    return model.flow if hasattr(model, "flow") and not callable(model.flow) else model


# ------------------------------------------------------------ gamma


def gamma(model, ligand, receptor, t=0.5):
    """The complex-to-ligand map: final ligand EGNN layer given the receptor."""
    cfg = model.config
    rec = prepare_receptor(receptor, cfg)
    ctx = model.encode(rec)
    sigs = egnn.signatures(model.params["signature"], ctx["summary"], t)
    return egnn.ligand_forward(model.params["ligand"], cfg, jnp.asarray(ligand.positions),
                               jnp.asarray(ligand.features), sigs)


def check_gamma_semi_equivariance(model, trials=20, seed=0, n_atoms=6, n_receptor=12, identity=False):
    """Rotation and permutation semi-equivariance of the complex-to-ligand map.

    Returns ``(rotation_report, permutation_report)``.  With ``identity``
    every transform is the identity (a solver-free sanity baseline).
    """
    _check_trials(trials)
    model = _flow_of(model)
    rot_res, perm_res, seeds = 0.0, 0.0, []
    for k in range(trials):
        s = seed + k
        seeds.append(s)
        rng = np.random.default_rng(s)
        lig = random_graph(rng, n_atoms, model.feature_dim)
        rec = random_one_hot_graph(rng, n_receptor, model.config.receptor_features, scale=4.0)
        T = sample_random_rigid(rng)
        pi = sample_random_permutation(rng, n_atoms)
        pi_hat = sample_random_permutation(rng, n_receptor)
        if identity:
            T = T.identity()
            pi, pi_hat = pi.identity(n_atoms), pi_hat.identity(n_receptor)
        x, h = gamma(model, lig, rec)
        scale = float(np.linalg.norm(np.concatenate([np.ravel(x), np.ravel(h)])))
        # rotate the ligand only, move the receptor rigidly
        xr, hr = gamma(model, apply_rigid(lig, T.rotation_only), apply_rigid(rec, T))
        expected_x = np.asarray(x) @ T.rotation.T
        diff = np.concatenate([np.ravel(np.asarray(xr) - expected_x), np.ravel(np.asarray(hr) - np.asarray(h))])
        rot_res = max(rot_res, float(np.linalg.norm(diff)) / scale)
        xp, hp = gamma(model, apply_permutation(lig, pi), apply_permutation(rec, pi_hat))
        diff = np.concatenate([np.ravel(np.asarray(xp) - np.asarray(x)[pi.mapping]),
                               np.ravel(np.asarray(hp) - np.asarray(h)[pi.mapping])])
        perm_res = max(perm_res, float(np.linalg.norm(diff)) / scale)
    return (
        InvarianceReport("gamma_rotation", trials, rot_res, TOLERANCES["gamma_rotation"], seeds),
        InvarianceReport("gamma_permutation", trials, perm_res, TOLERANCES["gamma_permutation"], seeds),
    )


# ------------------------------------------------------------ affine map laws


def dense_affine(n_atoms, receptor_positions, feature_dim):
    """Independent dense construction of ``(Omega, omega)``, entry by entry."""
    rec = np.asarray(receptor_positions, dtype=np.float64).reshape(-1, 3)
    alpha = n_atoms / (n_atoms + len(rec))
    dim = n_atoms * (3 + feature_dim)
    omega_mat = np.eye(dim)
    omega = np.zeros(dim)
    centroid = rec.mean(axis=0)
    for i in range(n_atoms):
        for j in range(n_atoms):
            for a in range(3):
                omega_mat[3 * i + a, 3 * j + a] -= alpha / n_atoms
        omega[3 * i : 3 * i + 3] = -(1 - alpha) * centroid
    return omega_mat, omega


def check_lemma1(trials=50, seed=0, n_atoms=5, n_receptor=9, feature_dim=3):
    """Affine-map laws against a dense-matrix oracle.

    Residual is the worst of: map vs dense ``Omega v + omega``, rotation law
    ``G_{T R}(T v) = R G_R(v)`` and permutation law.
    """
    _check_trials(trials)
    worst, seeds = 0.0, []
    for k in range(trials):
        s = seed + k
        seeds.append(s)
        rng = np.random.default_rng(s)
        x = rng.standard_normal((n_atoms, 3)) * 2
        h = rng.standard_normal((n_atoms, feature_dim))
        v = vectorize(x, h)
        rec = rng.standard_normal((n_receptor, 3)) * 4 + rng.standard_normal(3) * 3
        T = sample_random_rigid(rng)
        pi = sample_random_permutation(rng, n_atoms)
        pi_hat = sample_random_permutation(rng, n_receptor)
        amap = build_affine_map(n_atoms, rec, feature_dim)
        mat, off = dense_affine(n_atoms, rec, feature_dim)
        u = np.asarray(amap.apply(v))
        worst = max(worst, _relative(u, mat @ v + off))
        worst = max(worst, _relative(np.asarray(amap.invert(u)), v))
        moved = build_affine_map(n_atoms, T.apply(rec), feature_dim)
        mat_t, off_t = dense_affine(n_atoms, T.apply(rec), feature_dim)
        tv = vectorize(T.apply(x), h)
        expected = rotate_vector(u, T.rotation, feature_dim)
        worst = max(worst, _relative(np.asarray(moved.apply(tv)), expected))
        worst = max(worst, _relative(mat_t @ tv + off_t, expected))
        permuted = build_affine_map(n_atoms, rec[pi_hat.mapping], feature_dim)
        pv = permute_vector(v, pi, feature_dim)
        worst = max(worst, _relative(np.asarray(permuted.apply(pv)), permute_vector(u, pi, feature_dim)))
    return InvarianceReport("affine_map_laws", trials, worst, TOLERANCES["affine_map_laws"], seeds)


# ------------------------------------------------------------ flow laws


def check_lemma2(model, trials=10, seed=0, n_atoms=5, n_receptor=10, steps=40):
    """Flow laws: ``Phi_{T R}(R z) = R Phi_R(z)`` and the permutation analogue."""
    _check_trials(trials)
    model = _flow_of(model)
    cfg = SolverConfig(steps=steps)
    d = model.feature_dim
    width = model.config.receptor_features if hasattr(model, "config") else 5
    worst, seeds = 0.0, []
    for k in range(trials):
        s = seed + k
        seeds.append(s)
        rng = np.random.default_rng(s)
        rec = random_one_hot_graph(rng, n_receptor, width, scale=4.0)
        z = rng.standard_normal(n_atoms * (3 + d))
        T = sample_random_rigid(rng)
        pi = sample_random_permutation(rng, n_atoms)
        pi_hat = sample_random_permutation(rng, n_receptor)
        u1 = np.asarray(integrate(model, rec, z, cfg))
        moved = np.asarray(integrate(model, apply_rigid(rec, T), rotate_vector(z, T.rotation, d), cfg))
        worst = max(worst, _relative(moved, rotate_vector(u1, T.rotation, d)))
        perm = np.asarray(integrate(model, apply_permutation(rec, pi_hat), permute_vector(z, pi, d), cfg))
        worst = max(worst, _relative(perm, permute_vector(u1, pi, d)))
    return InvarianceReport("flow_laws", trials, worst, TOLERANCES["flow_laws"], seeds)


# ------------------------------------------------------------ density invariance


def check_theorem1(model, trials=20, seed=0, n_atoms=6, n_receptor=16, steps=40, ligand=None, receptor=None):
    """End-to-end log-density invariance, exact trace.

    Returns ``(rigid_report, permutation_report)``; residuals are absolute
    differences in log-density.
    """
    _check_trials(trials)
    model = _flow_of(model)
    cfg = SolverConfig(steps=steps)
    rng0 = np.random.default_rng(seed)
    if receptor is None:
        receptor = random_one_hot_graph(rng0, n_receptor, model.config.receptor_features, scale=4.0)
    if ligand is None:
        ligand = random_graph(rng0, n_atoms, model.feature_dim)
    base = log_density(model, receptor, ligand.positions, ligand.features, cfg)
    rigid, perm, seeds = 0.0, 0.0, []
    for k in range(trials):
        s = seed + 1 + k
        seeds.append(s)
        rng = np.random.default_rng(s)
        T = sample_random_rigid(rng)
        lig_t, rec_t = apply_rigid(ligand, T), apply_rigid(receptor, T)
        rigid = max(rigid, abs(log_density(model, rec_t, lig_t.positions, lig_t.features, cfg) - base))
        pi = sample_random_permutation(rng, ligand.n_atoms)
        pi_hat = sample_random_permutation(rng, receptor.n_atoms)
        lig_p, rec_p = apply_permutation(ligand, pi), apply_permutation(receptor, pi_hat)
        perm = max(perm, abs(log_density(model, rec_p, lig_p.positions, lig_p.features, cfg) - base))
    return (
        InvarianceReport("density_rigid", trials, rigid, TOLERANCES["density_rigid"], seeds),
        InvarianceReport("density_permutation", trials, perm, TOLERANCES["density_permutation"], seeds),
    )


# ------------------------------------------------------------ heads


def head_outputs(model, ligand, receptor):
    """Number log-probs, edge table over ``i < j`` and all property log-probs."""
    from .model import edge_log_probs, number_log_probs, property_log_probs

    num = number_log_probs(model, receptor)
    table = edge_log_probs(model, receptor, ligand.positions, ligand.features)
    props = [property_log_probs(model, receptor, ligand.positions, ligand.features, ligand.edge_attr,
                                ligand.globals, k) for k in range(len(model.config.property_sizes))]
    return num, table, props


def _random_properties(rng, sizes):
    return tuple(np.eye(k)[rng.integers(0, k)] for k in sizes)


def check_heads(model, trials=20, seed=0, n_atoms=6, n_receptor=12):
    """Rigid and permutation invariance of the number, edge and property heads.

    Returns ``(rigid_report, permutation_report)``.  The edge table is
    compared as a pair table, so under a permutation entry ``(i, j)`` is
    matched with ``(pi(i), pi(j))``.
    """
    _check_trials(trials)
    rigid, perm, seeds = 0.0, 0.0, []
    cfg = model.config.egnn
    for k in range(trials):
        s = seed + k
        seeds.append(s)
        rng = np.random.default_rng(s)
        g = random_one_hot_graph(rng, n_atoms, cfg.ligand_features)
        lig = MolecularGraph(g.positions, g.features, g.edge_index, g.edge_attr,
                             _random_properties(rng, model.config.property_sizes))
        rec = random_one_hot_graph(rng, n_receptor, cfg.receptor_features, scale=4.0)
        num, table, props = head_outputs(model, lig, rec)
        T = sample_random_rigid(rng)
        num_t, table_t, props_t = head_outputs(model, apply_rigid(lig, T), apply_rigid(rec, T))
        rigid = max(rigid, _relative(num_t, num), _relative(table_t, table),
                    *(_relative(a, b) for a, b in zip(props_t, props)))
        pi = sample_random_permutation(rng, n_atoms)
        pi_hat = sample_random_permutation(rng, n_receptor)
        num_p, table_p, props_p = head_outputs(model, apply_permutation(lig, pi), apply_permutation(rec, pi_hat))
        m = pi.mapping
        off = ~np.eye(n_atoms, dtype=bool)
        perm = max(perm, _relative(num_p, num), _relative(table_p[off], table[np.ix_(m, m)][off]),
                   *(_relative(a, b) for a, b in zip(props_p, props)))
    return (
        InvarianceReport("heads_rigid", trials, rigid, TOLERANCES["heads_rigid"], seeds),
        InvarianceReport("heads_permutation", trials, perm, TOLERANCES["heads_permutation"], seeds),
    )


def run_all(model, trials=None, seed=0, steps=40):
    """Every check on ``model`` (a :class:`~ligflow.model.LigandModel`)."""
    reports = []
    reports += check_gamma_semi_equivariance(model, trials or 20, seed)
    reports.append(check_lemma1(trials or 50, seed))
    reports.append(check_lemma2(model, trials or 10, seed, steps=steps))
    reports += check_theorem1(model, trials or 20, seed, steps=steps)
    reports += check_heads(model, trials or 20, seed)
    return reports
