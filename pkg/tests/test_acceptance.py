"""Acceptance criteria, one pass/fail line each (see the terminal summary)."""

import time
from dataclasses import replace

import jax
import jax.numpy as jnp
import numpy as np
import pytest

from ligflow.autodiff import central_difference
from ligflow.egnn import EGNNConfig
from ligflow.flow import (FlowModel, LinearField, SolverConfig, build_affine_map, gaussian_log_density, integrate,
                          log_density, nll_loss, zero_field)
from ligflow.heads import init_number_head, number_log_probs, number_nll
from ligflow.io import (SYNTHETIC_CENTROID_OFFSET, iter_records, load_checkpoint, save_checkpoint,
                        synthetic_dataset)
from ligflow.model import LigandModel, ModelConfig, flatten_params, sample_graph
from ligflow.molgraph import MolecularGraph
from ligflow.verify import (check_gamma_semi_equivariance, check_heads, check_lemma1, check_lemma2, check_theorem1,
                            random_graph, random_one_hot_graph)

from fuzz import fuzz_corpus
from oracles import MixingField, dense_log_det, pushforward_density


@pytest.fixture(scope="module")
def wide_model():
    cfg = ModelConfig.default(hidden=64, signature=32, layers=3)
    return LigandModel.init(jax.random.PRNGKey(0), cfg, zero_init=False)


def test_criterion_1_density_invariance(wide_model, acceptance_log):
    start = time.perf_counter()
    rigid, perm = check_theorem1(wide_model, trials=20, seed=0, steps=40)
    seconds = time.perf_counter() - start
    ok = rigid.max_residual <= 1e-4 and perm.max_residual <= 1e-6 and seconds <= 300
    assert acceptance_log(1, "log-density invariance, width 64, L=3", ok,
                          f"rigid {rigid.max_residual:.2e} <= 1e-4, permutation {perm.max_residual:.2e} <= 1e-6, "
                          f"{seconds:.0f}s <= 300s")


def test_criterion_2_transformation_laws(wide_model, acceptance_log):
    l1 = check_lemma1(trials=50, seed=0)
    l2 = check_lemma2(wide_model, trials=10, seed=0, steps=40)
    ok = l1.max_residual <= 1e-9 and l2.max_residual <= 1e-5
    assert acceptance_log(2, "affine-map and flow transformation laws", ok,
                          f"affine map {l1.max_residual:.2e} <= 1e-9 over 50, flow {l2.max_residual:.2e} <= 1e-5 "
                          "at 40 RK4 steps")


def test_criterion_3_semi_equivariance(wide_model, acceptance_log):
    rot, perm = check_gamma_semi_equivariance(wide_model, trials=20, seed=0)
    flow = wide_model.flow
    broken = FlowModel(replace(flow.config, mutation="both"), flow.params)
    mrot, mperm = check_gamma_semi_equivariance(broken, trials=20, seed=0)
    ok = rot.passed and perm.passed and not mrot.passed and not mperm.passed
    assert acceptance_log(3, "complex-to-ligand map semi-equivariance", ok,
                          f"rotation {rot.max_residual:.2e} <= 1e-6, permutation {perm.max_residual:.2e} <= 1e-10; "
                          f"mutant {mrot.max_residual:.1e} / {mperm.max_residual:.1e} fails both")


def test_criterion_4_invertibility(wide_model, acceptance_log):
    rng = np.random.default_rng(4)
    worst = 0.0
    for k in range(50):
        n = int(rng.integers(1, 8))
        rec = random_one_hot_graph(rng, int(rng.integers(4, 16)), 5, scale=3.0)
        z = rng.standard_normal(n * 8)
        back = integrate(wide_model.flow, rec, integrate(wide_model.flow, rec, z), inverse=True)
        worst = max(worst, float(np.linalg.norm(back - z) / np.linalg.norm(z)))
    assert acceptance_log(4, "forward-then-inverse recovers z", worst <= 1e-5,
                          f"max relative error {worst:.2e} <= 1e-5 over 50 inputs")


def test_criterion_5_log_density(small_flow, acceptance_log):
    rng = np.random.default_rng(5)
    # (a) zero field: Gaussian plus log|det Omega|
    worst_a, worst_det = 0.0, 0.0
    for _ in range(10):
        n, n_rec, d = int(rng.integers(1, 6)), int(rng.integers(1, 12)), int(rng.integers(0, 4))
        rec = MolecularGraph(rng.standard_normal((n_rec, 3)) * 3, np.eye(5)[rng.integers(0, 5, n_rec)])
        x, h = rng.standard_normal((n, 3)), rng.standard_normal((n, d))
        amap = build_affine_map(n, rec.positions, d)
        u = amap.omega_matrix() @ np.concatenate([x.ravel(), h.ravel()]) + amap.offset()
        closed = float(gaussian_log_density(u)) + 3 * np.log(1 - n / (n + n_rec))
        worst_a = max(worst_a, abs(log_density(zero_field(d), rec, x, h) - closed))
        worst_det = max(worst_det, abs(dense_log_det(amap.omega_matrix()) - 3 * np.log(1 - amap.alpha)))
    # (b) exact against Hutchinson with 256 probes
    rec = random_one_hot_graph(rng, 8, 5, scale=3.0)
    lig = random_graph(rng, 4, 5)
    exact = log_density(small_flow, rec, lig.positions, lig.features)
    est, se = log_density(small_flow, rec, lig.positions, lig.features, trace="hutchinson", probes=256,
                          key=jax.random.PRNGKey(5), return_stderr=True)
    # (c) quadrature pushforward of a one-atom, feature-free ligand
    field = MixingField.random(0, scale=0.35)
    qrec = MolecularGraph(np.random.default_rng(4).standard_normal((3, 3)), np.eye(5)[:3])
    v0 = qrec.positions.mean(axis=0) + np.array([0.3, -0.2, 0.5])
    dens = np.exp(log_density(field, qrec, v0[None], np.zeros((1, 0)), SolverConfig(steps=200)))
    quad = pushforward_density(field, qrec, v0, bandwidth=0.03, grid=64)
    rel = abs(quad / dens - 1)
    ok = worst_a <= 1e-10 and worst_det <= 1e-12 and abs(est - exact) <= 3 * se and rel <= 0.02
    assert acceptance_log(5, "log-density correctness", ok,
                          f"(a) closed form {worst_a:.1e} <= 1e-10, dense det {worst_det:.1e}; "
                          f"(b) |exact-hutch| {abs(est - exact):.3f} <= 3SE {3 * se:.3f}; "
                          f"(c) quadrature {rel:.2%} <= 2%")


def test_criterion_6_gradient(acceptance_log):
    rng = np.random.default_rng(6)
    rec = random_one_hot_graph(rng, 6, 5)
    batch = [(g.positions, g.features, rec) for g in (random_graph(rng, 3, 2) for _ in range(2))]
    cfg = SolverConfig(steps=20)
    theta = np.array([0.4, -0.6])

    def field(p):
        return LinearField(jnp.float64(p[0]), jnp.float64(p[1]), 2)

    _, grads = nll_loss(field(theta), batch, cfg)
    analytic = np.array([grads.rate, grads.shift])
    fd = central_difference(lambda p: nll_loss(field(p), batch, cfg)[0], theta, step=1e-5)
    rel = float(np.max(np.abs(analytic - fd) / np.abs(fd)))
    assert acceptance_log(6, "NLL gradient against central differences", rel <= 1e-3,
                          f"max relative error {rel:.2e} <= 1e-3, 20-step solver")


def test_criterion_7_heads(wide_model, acceptance_log):
    rigid, perm = check_heads(wide_model, trials=20, seed=0)
    head = init_number_head(jax.random.PRNGKey(7), wide_model.config.egnn, zero_last=True)
    rec = wide_model.prepare(random_one_hot_graph(np.random.default_rng(7), 12, 5, scale=3.0))
    feats = wide_model.receptor_features(rec)[-1]
    uniform = float(np.max(np.abs(np.exp(number_log_probs(head, feats)) - 1 / 30)))
    nll = float(number_nll(head, feats, 6))
    ok = rigid.passed and perm.passed and uniform <= 1e-15 and abs(nll - np.log(30)) <= 1e-12
    assert acceptance_log(7, "number, edge and property heads", ok,
                          f"rigid {rigid.max_residual:.2e} <= 1e-6, permutation {perm.max_residual:.2e} <= 1e-10; "
                          f"zero head |p-1/30| {uniform:.0e}, NLL {nll:.6f} = log 30")


@pytest.mark.slow
def test_criterion_8_learning_signal(desk_run, acceptance_log):
    history = desk_run["history"]
    first, last = history[0]["vertex"], history[-1]["vertex"]
    drop = 1 - last / first
    start = time.perf_counter()
    receptors = synthetic_dataset(50, seed=1)
    cfg = SolverConfig(steps=desk_run["solver_steps"])
    offsets = []
    for k in range(500):
        r = receptors[k % 50]
        g = sample_graph(desk_run["model"], r.receptor, np.random.default_rng([0, k]), cfg)
        offsets.append(g.positions.mean(axis=0) - r.receptor.positions.mean(axis=0))
    offsets = np.asarray(offsets)
    error = float(np.linalg.norm(offsets.mean(axis=0) - SYNTHETIC_CENTROID_OFFSET))
    spread = float(np.mean(np.linalg.norm(offsets - SYNTHETIC_CENTROID_OFFSET, axis=1)))
    seconds = desk_run["seconds"] + time.perf_counter() - start
    ok = len(history) == 30 and drop >= 0.2 and error <= 0.5 and seconds <= 1800
    assert acceptance_log(8, "learning signal on synthetic complexes", ok,
                          f"flow NLL {first:.2f} -> {last:.2f} ({drop:.0%} >= 20%); mean sampled centroid offset "
                          f"{error:.3f} A <= 0.5 A from ground truth over 500 samples (per-sample distance "
                          f"{spread:.2f} A); {seconds / 60:.1f} min <= 30 min")


def test_criterion_9_io_totality(tmp_path, acceptance_log):
    lines, n_valid = fuzz_corpus(1000, seed=0)
    diags = []
    records = list(iter_records(lines, strict=False, diagnostics=diags))
    total = len(records) + len(diags) == 1000 and all(1 <= d.line <= 1000 for d in diags)
    model = LigandModel.init(jax.random.PRNGKey(9), ModelConfig.default(hidden=16, signature=8, layers=2))
    tensors = flatten_params(model.params)
    save_checkpoint(tmp_path / "c.npz", tensors, {"seed": 9})
    loaded, _ = load_checkpoint(tmp_path / "c.npz")
    exact = set(loaded) == set(tensors) and all(
        loaded[k].dtype == v.dtype and loaded[k].tobytes() == v.tobytes() for k, v in tensors.items())
    assert acceptance_log(9, "parser totality and checkpoint round trip", total and exact,
                          f"{len(records)} accepted + {len(diags)} located diagnostics = 1000 lines; "
                          f"{len(tensors)} tensors bit-exact")
