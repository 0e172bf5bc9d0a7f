"""Maximum-likelihood training with Adam, per-epoch checkpoints and a CSV loss curve.

Every epoch draws its dequantization noise, batch order and trace probes
from ``(seed, epoch)`` alone, so resuming from an epoch-``k`` checkpoint
replays epoch ``k + 1`` exactly.
"""

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import jax
import jax.numpy as jnp
import numpy as np
import optax

from . import egnn
from .dequant import NOISE_SCALE, dequantize
from .errors import ContractError, DataError, NumericError
from .flow import SolverConfig
from .io import load_checkpoint, save_checkpoint
from .model import (LigandModel, ModelConfig, example_losses, flatten_params, make_example, stack_examples,
                    unflatten_params)

log = logging.getLogger(__name__)

LOSS_PARTS = ("vertex", "number", "edge", "property")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 1e-3
    weight_decay: float = 1e-12
    steps: int = 40
    trace: str = "hutchinson"
    probes: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.probes < 1:
            raise ContractError("epochs must be non-negative; batch size and probes positive")
        if self.trace not in ("exact", "hutchinson"):
            raise ContractError(f"unknown trace mode {self.trace!r}")

    @property
    def solver(self):
        return SolverConfig(steps=self.steps)


def config_hash(*configs):
    blob = json.dumps([c if isinstance(c, dict) else c.to_dict() if hasattr(c, "to_dict") else asdict(c)
                       for c in configs], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def make_optimizer(tcfg):
    return optax.chain(optax.add_decayed_weights(tcfg.weight_decay), optax.adam(tcfg.learning_rate))


# ------------------------------------------------------------ checkpoints


def save_training_state(path, model, opt_state, epoch, tcfg, history):
    tensors = {"model" + k: v for k, v in flatten_params(model.params).items()}
    if opt_state is not None:
        tensors.update({"opt" + k: v for k, v in flatten_params(opt_state).items()})
    meta = {
        "model_config": model.config.to_dict(),
        "train_config": asdict(tcfg),
        "solver": asdict(tcfg.solver),
        "seed": tcfg.seed,
        "epoch": epoch,
        "config_hash": config_hash(model.config, tcfg),
        "history": history,
    }
    save_checkpoint(path, tensors, meta)


def load_model(path):
    """Model and checkpoint metadata from a training checkpoint."""
    tensors, meta = load_checkpoint(path)
    if "model_config" not in meta:
        raise DataError(f"{path} is not a model checkpoint")
    config = ModelConfig.from_dict(meta["model_config"])
    template = LigandModel.init(jax.random.PRNGKey(0), config)
    params = unflatten_params(template.params, tensors, prefix="model")
    return LigandModel(config, params), meta


def _load_opt_state(path, model, tcfg):
    tensors, meta = load_checkpoint(path)
    template = make_optimizer(tcfg).init(model.params)
    if not any(k.startswith("opt") for k in tensors):
        return template, meta
    return unflatten_params(template, tensors, prefix="opt"), meta


# ------------------------------------------------------------ training


class _Prepared:
    """Static per-record tensors, built once; only dequantized features change per epoch."""

    def __init__(self, model, records):
        self.records = list(records)
        if not self.records:
            raise DataError("training needs at least one record")
        schema = model.config.schema
        self.examples = [make_example(model, r, r.ligand.features) for r in self.records]
        self.schema = schema
        groups = {}
        for k, r in enumerate(self.records):
            groups.setdefault((r.ligand.n_atoms, r.receptor.n_atoms), []).append(k)
        self.groups = [groups[key] for key in sorted(groups)]

    def batches(self, rng, batch_size):
        out = []
        for idx in self.groups:
            perm = [idx[i] for i in rng.permutation(len(idx))]
            out += [perm[s : s + batch_size] for s in range(0, len(perm), batch_size)]
        return [out[i] for i in rng.permutation(len(out))]

    def batch(self, indices, features, batch_size):
        """Stacked batch padded to ``batch_size`` with zero-weight repeats."""
        pad = indices + [indices[0]] * (batch_size - len(indices))
        exs = []
        for k in pad:
            ex = self.examples[k]
            v = jnp.concatenate([ex.positions.reshape(-1), jnp.asarray(features[k]).reshape(-1)])
            exs.append(ex._replace(v=v))
        weights = jnp.asarray([1.0] * len(indices) + [0.0] * (batch_size - len(indices)))
        return stack_examples(exs), weights


def _weighted_loss(model, batch, weights, steps, eps):
    if eps is None:
        per = jax.vmap(lambda ex: example_losses(model, ex, steps, None))(batch)
    else:
        per = jax.vmap(lambda ex, e: example_losses(model, ex, steps, e))(batch, eps)
    total_w = jnp.sum(weights)
    parts = {k: jnp.sum(weights * v) / total_w for k, v in per.items()}
    return sum(parts.values()), parts


def _write_curve(path, history):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", *LOSS_PARTS, "total"])
        for row in history:
            writer.writerow([row["epoch"], *(f"{row[k]:.10g}" for k in LOSS_PARTS), f"{row['total']:.10g}"])


def train(records, mcfg=None, tcfg=TrainConfig(), out_dir=None, resume=None, model=None, on_epoch=None):
    """Fit a :class:`LigandModel` and return ``(model, history)``.

    ``history`` holds one dict per epoch with the mean of each factor NLL.
    With ``out_dir`` a ``checkpoint.npz`` (overwritten every epoch) and a
    ``loss.csv`` are written there.
    """
    optimizer = make_optimizer(tcfg)
    history = []
    start = 0
    if resume is not None:
        model, meta = load_model(resume)
        opt_state, _ = _load_opt_state(resume, model, tcfg)
        start = int(meta["epoch"])
        history = list(meta.get("history", []))
    else:
        if model is None:
            if mcfg is None:
                raise ContractError("a model config or a model is required")
            model = LigandModel.init(jax.random.PRNGKey(tcfg.seed), mcfg)
            if mcfg.egnn.actnorm:
                model = LigandModel(mcfg, dict(model.params, flow=dict(
                    model.params["flow"],
                    receptor=egnn.init_actnorm(model.params["flow"]["receptor"], [r.receptor.features for r in records]),
                )))
        opt_state = optimizer.init(model.params)
    prepared = _Prepared(model, records)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt = out_dir / "checkpoint.npz"
        if resume is None:
            save_training_state(ckpt, model, opt_state, 0, tcfg, history)

    steps = tcfg.steps

    @jax.jit
    def update(params, opt_state, batch, weights, eps):
        def loss_fn(p):
            return _weighted_loss(LigandModel(model.config, p), batch, weights, steps, eps)

        (loss, parts), grads = jax.value_and_grad(loss_fn, has_aux=True)(params)
        updates, opt_state = optimizer.update(grads, opt_state, params)
        return optax.apply_updates(params, updates), opt_state, loss, parts

    params = model.params
    for epoch in range(start, tcfg.epochs):
        rng = np.random.default_rng([tcfg.seed, epoch])
        features = [dequantize(r.ligand.features, prepared.schema, rng, NOISE_SCALE) for r in prepared.records]
        key = jax.random.fold_in(jax.random.PRNGKey(tcfg.seed), epoch)
        sums = dict.fromkeys(LOSS_PARTS, 0.0)
        count = 0
        for b, idx in enumerate(prepared.batches(rng, tcfg.batch_size)):
            batch, weights = prepared.batch(idx, features, tcfg.batch_size)
            dim = batch.v.shape[-1]
            eps = None
            if tcfg.trace == "hutchinson":
                eps = jax.random.rademacher(jax.random.fold_in(key, b), (tcfg.batch_size, tcfg.probes, dim),
                                            dtype=jnp.float64)
            params, opt_state, loss, parts = update(params, opt_state, batch, weights, eps)
            if not np.isfinite(float(loss)):
                raise NumericError(f"non-finite loss at epoch {epoch + 1}, batch {b + 1}; "
                                   "last good checkpoint kept")
            for k in LOSS_PARTS:
                sums[k] += float(parts[k]) * len(idx)
            count += len(idx)
        row = {"epoch": epoch + 1, **{k: sums[k] / count for k in LOSS_PARTS}}
        row["total"] = sum(row[k] for k in LOSS_PARTS)
        history.append(row)
        model = LigandModel(model.config, params)
        log.info("epoch %d: %s", epoch + 1, " ".join(f"{k}={row[k]:.4f}" for k in (*LOSS_PARTS, "total")))
        if out_dir is not None:
            save_training_state(ckpt, model, opt_state, epoch + 1, tcfg, history)
            _write_curve(out_dir / "loss.csv", history)
        if on_epoch is not None:
            on_epoch(row)
    if out_dir is not None and not history:
        _write_curve(out_dir / "loss.csv", history)
    return LigandModel(model.config, params), history


def evaluate(model, records, tcfg=TrainConfig(), seed=0):
    """Mean factor NLLs over ``records`` with fresh dequantization noise."""
    prepared = _Prepared(model, records)
    rng = np.random.default_rng(seed)
    features = [dequantize(r.ligand.features, prepared.schema, rng) for r in prepared.records]
    sums = dict.fromkeys(LOSS_PARTS, 0.0)
    fn = jax.jit(lambda m, b, w: _weighted_loss(m, b, w, tcfg.steps, None)[1])
    for group in prepared.groups:
        for s in range(0, len(group), tcfg.batch_size):
            idx = group[s : s + tcfg.batch_size]
            batch, weights = prepared.batch(idx, features, tcfg.batch_size)
            parts = fn(model, batch, weights)
            for k in LOSS_PARTS:
                sums[k] += float(parts[k]) * len(idx)
    return {k: v / len(records) for k, v in sums.items()}
