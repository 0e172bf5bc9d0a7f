"""Command line entry point: ``ligflow <command> [options]``.

Exit codes: 0 success, 1 a verification check failed, 2 usage error,
3 unreadable or malformed data.
"""

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import jax
import numpy as np

from .errors import ContractError, DataError, FormatError, LigflowError, NumericError, SchemaError
from .flow import SolverConfig
from .io import (Diagnostic, GraphRecord, graph_to_json, load_checkpoint, load_dataset, parse_xyz, record_to_json,
                 save_dataset, synthetic_dataset, validate_record)
from .molgraph import MolecularGraph

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 3

log = logging.getLogger("ligflow")


@dataclass(frozen=True)
class RunConfig:
    hidden: int = 64
    signature: int = 32
    receptor_layers: int = 3
    ligand_layers: int = 3
    n_max: int = 30
    steps: int = 40
    trace: str = "hutchinson"
    probes: int = 1
    learning_rate: float = 1e-3
    weight_decay: float = 1e-12
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0

    @classmethod
    def load(cls, path=None, overrides=None):
        data = {}
        if path is not None:
            try:
                data = json.loads(Path(path).read_text())
            except FileNotFoundError:
                raise DataError(f"config file {path} not found") from None
            except json.JSONDecodeError as exc:
                raise DataError(f"config file {path}: {exc.msg}", line=exc.lineno) from None
            if not isinstance(data, dict):
                raise DataError(f"config file {path} must hold a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ContractError(f"unknown config keys: {', '.join(sorted(unknown))}")
        data.update({k: v for k, v in (overrides or {}).items() if v is not None and k in known})
        return cls(**data)

    def model_config(self):
        from .egnn import EGNNConfig
        from .model import ModelConfig
        from .dequant import LIGAND_SCHEMA, RECEPTOR_SCHEMA

        cfg = EGNNConfig(
            ligand_features=LIGAND_SCHEMA.width,
            receptor_features=RECEPTOR_SCHEMA.width,
            hidden=self.hidden,
            signature=self.signature,
            receptor_layers=self.receptor_layers,
            ligand_layers=self.ligand_layers,
        )
        return ModelConfig(cfg, n_max=self.n_max)

    def train_config(self):
        from .train import TrainConfig

        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
                           weight_decay=self.weight_decay, steps=self.steps, trace=self.trace, probes=self.probes,
                           seed=self.seed)

    def hash(self):
        from .train import config_hash

        return config_hash(asdict(self))


# ------------------------------------------------------------ helpers


def _read_records(path, strict):
    diagnostics = []
    try:
        records = load_dataset(path, strict=strict, diagnostics=diagnostics)
    except FileNotFoundError:
        raise DataError(f"dataset {path} not found") from None
    for d in diagnostics:
        print(f"{path}: {d}", file=sys.stderr)
    return records


def _validated(records):
    for r in records:
        try:
            validate_record(r)
        except ContractError as exc:
            raise DataError(f"record {r.id!r}: {exc}") from None
    return records


def _read_receptors(path, strict):
    """Receptors from a record file, or a single receptor from an XYZ file."""
    if str(path).endswith(".xyz"):
        from .dequant import RECEPTOR_SCHEMA

        try:
            text = Path(path).read_text()
        except FileNotFoundError:
            raise DataError(f"receptor file {path} not found") from None
        positions, features, _ = parse_xyz(text, RECEPTOR_SCHEMA)
        return [(Path(path).stem, MolecularGraph(positions, features))]
    return [(r.id, r.receptor) for r in _read_records(path, strict)]


def _load_model(path):
    from .train import load_model

    try:
        return load_model(path)
    except FileNotFoundError:
        raise DataError(f"checkpoint {path} not found") from None


def _emit(lines, out):
    text = "".join(line + "\n" for line in lines)
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


# ------------------------------------------------------------ commands


def cmd_synth_data(args, cfg):
    records = synthetic_dataset(args.records, seed=cfg.seed, receptor_atoms=args.receptor_atoms)
    for r in records:
        r.meta.update(seed=cfg.seed, config_hash=cfg.hash())
    save_dataset(args.out, records)
    print(f"wrote {len(records)} records to {args.out} (seed {cfg.seed}, config {cfg.hash()})")
    return EXIT_OK


def cmd_train(args, cfg):
    from .train import train

    records = _validated(_read_records(args.data, args.strict))
    model, history = train(records, cfg.model_config(), cfg.train_config(), out_dir=args.out, resume=args.resume)
    for row in history:
        print(f"epoch {row['epoch']:3d}  vertex {row['vertex']:.4f}  number {row['number']:.4f}  "
              f"edge {row['edge']:.4f}  property {row['property']:.4f}")
    print(f"checkpoint: {Path(args.out) / 'checkpoint.npz'} (seed {cfg.seed}, config {cfg.hash()})")
    return EXIT_OK


def cmd_sample(args, cfg):
    from .model import sample_graph

    model, meta = _load_model(args.checkpoint)
    if args.count < 0:
        raise ContractError("count must be non-negative")
    receptors = _read_receptors(args.receptor, args.strict)
    solver = SolverConfig(steps=cfg.steps)
    lines = []
    for r_index, (rid, receptor) in enumerate(receptors):
        for k in range(args.count):
            rng = np.random.default_rng([cfg.seed, r_index, k])
            ligand = sample_graph(model, receptor, rng, solver, edges=args.edges)
            rec = GraphRecord(f"{rid}-sample-{k:04d}", ligand, receptor,
                              {"seed": [cfg.seed, r_index, k], "config_hash": meta.get("config_hash", cfg.hash()),
                               "receptor_id": rid})
            lines.append(record_to_json(rec))
    _emit(lines, args.out)
    return EXIT_OK


def cmd_score(args, cfg):
    from .model import score

    model, meta = _load_model(args.checkpoint)
    solver = SolverConfig(steps=cfg.steps)
    lines = []
    for record in _validated(_read_records(args.data, args.strict)):
        out = score(model, record, solver)
        lines.append(json.dumps({"id": record.id, "log_density": out, "seed": cfg.seed,
                                 "config_hash": meta.get("config_hash", cfg.hash())}, sort_keys=True))
    _emit(lines, args.out)
    return EXIT_OK


def cmd_verify(args, cfg):
    from . import verify
    from .model import LigandModel

    if args.checkpoint is not None:
        model, _ = _load_model(args.checkpoint)
    else:
        # random but non-degenerate position updates, so the checks are not vacuous
        model = LigandModel.init(jax.random.PRNGKey(cfg.seed), cfg.model_config(), zero_init=False)
    reports = verify.run_all(model, trials=args.trials, seed=cfg.seed, steps=cfg.steps)
    print(verify.render(reports))
    if args.out is not None:
        _emit([json.dumps(r.to_json() | {"config_hash": cfg.hash()}, sort_keys=True) for r in reports], args.out)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK


def cmd_inspect(args, cfg):
    try:
        tensors, meta = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise DataError(f"checkpoint {args.checkpoint} not found") from None
    n_params = sum(int(np.prod(v.shape)) for k, v in tensors.items() if k.startswith("model"))
    summary = {k: meta[k] for k in ("format_version", "epoch", "seed", "config_hash", "solver") if k in meta}
    summary["tensors"] = len(tensors)
    summary["model_parameters"] = n_params
    if meta.get("history"):
        summary["last_epoch_losses"] = meta["history"][-1]
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


# ------------------------------------------------------------ parser


def build_parser():
    parser = argparse.ArgumentParser(prog="ligflow", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON run configuration; flags override its values")
    parser.add_argument("--seed", type=int)
    mode = parser.add_mutually_exclusive_group()
    mode.add_argument("--strict", dest="strict", action="store_true", default=True,
                      help="abort on the first malformed record (default)")
    mode.add_argument("--lenient", dest="strict", action="store_false",
                      help="skip malformed records, reporting each with its line number")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="write a synthetic complex dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--records", type=int, default=200)
    p.add_argument("--receptor-atoms", type=int, default=16)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="fit a model to a record file")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="directory for checkpoint.npz and loss.csv")
    p.add_argument("--resume", help="checkpoint to continue from")
    for name, typ in (("epochs", int), ("batch-size", int), ("learning-rate", float), ("weight-decay", float),
                      ("steps", int), ("probes", int), ("hidden", int), ("signature", int),
                      ("receptor-layers", int), ("ligand-layers", int), ("n-max", int)):
        p.add_argument(f"--{name}", type=typ)
    p.add_argument("--trace", choices=("exact", "hutchinson"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate ligands for receptors")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--receptor", required=True, help="record file (.jsonl) or receptor .xyz")
    p.add_argument("--count", type=int, default=1, help="samples per receptor")
    p.add_argument("--edges", choices=("model", "table", "none"), default="model")
    p.add_argument("--steps", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("score", help="exact-trace log-likelihoods of records")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("verify", help="run the invariance checks")
    p.add_argument("--checkpoint", help="model to check; a fresh random model when omitted")
    p.add_argument("--trials", type=int)
    p.add_argument("--steps", type=int)
    for name, typ in (("hidden", int), ("signature", int), ("receptor-layers", int), ("ligand-layers", int)):
        p.add_argument(f"--{name}", type=typ)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("inspect-checkpoint", help="print checkpoint metadata")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        overrides = {k: v for k, v in vars(args).items() if k not in ("config", "func", "command")}
        cfg = RunConfig.load(args.config, overrides)
        return args.func(args, cfg)
    except (DataError, FormatError, SchemaError) as exc:
        print(f"ligflow: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ContractError as exc:
        print(f"ligflow: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"ligflow: numeric error: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except LigflowError as exc:
        print(f"ligflow: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
