"""Record files, XYZ text, checkpoints and the synthetic complex generator.

Dataset files hold one JSON object per line::

    {"id": "...",
     "ligand":   {"positions": [x1, y1, z1, x2, ...],      # 3N floats
                  "features":  [[...], ...],                # N rows of d_h
                  "edges":     [[i, j, [e...]], ...],       # i < j
                  "globals":   [[...], ...]},               # K property vectors
     "receptor": {... same four fields ...}}

Extra top-level keys (``seed``, ``log_density``, ...) are carried along in
``GraphRecord.meta``.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dequant import LIGAND_SCHEMA, RECEPTOR_SCHEMA, validate
from .errors import ContractError, DataError, FormatError
from .heads import infer_bonds
from .molgraph import MolecularGraph, RigidTransform, apply_rigid, sample_random_rigid

CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------- records


@dataclass(eq=False)
class GraphRecord:
    id: str
    ligand: MolecularGraph
    receptor: MolecularGraph
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Diagnostic:
    line: int
    message: str

    def __str__(self):
        return f"line {self.line}: {self.message}"


def graph_to_json(graph):
    return {
        "positions": graph.positions.reshape(-1).tolist(),
        "features": graph.features.tolist(),
        "edges": [[int(i), int(j), e.tolist()] for (i, j), e in zip(graph.edge_index, graph.edge_attr)],
        "globals": [a.tolist() for a in graph.globals],
    }


def graph_from_json(obj):
    if not isinstance(obj, dict):
        raise ValueError("graph must be an object")
    missing = {"positions", "features", "edges", "globals"} - set(obj)
    if missing:
        raise ValueError(f"missing field(s) {sorted(missing)}")
    positions = np.asarray(obj["positions"], dtype=np.float64)
    if positions.ndim != 1 or positions.size % 3:
        raise ValueError("positions must be a flat list of length 3N")
    n = positions.size // 3
    features = np.asarray(obj["features"], dtype=np.float64)
    if features.size == 0:
        features = features.reshape(n, -1) if n else np.zeros((0, 0))
    if features.ndim != 2 or len(features) != n:
        raise ValueError(f"features must have {n} rows")
    edges = obj["edges"]
    if not isinstance(edges, list):
        raise ValueError("edges must be a list")
    index = []
    attr = []
    for e in edges:
        if not (isinstance(e, list) and len(e) == 3 and all(isinstance(k, int) for k in e[:2])):
            raise ValueError(f"malformed edge {e!r}")
        index.append(e[:2])
        attr.append(np.asarray(e[2], dtype=np.float64).reshape(-1))
    widths = {len(a) for a in attr}
    if len(widths) > 1:
        raise ValueError("edge attributes of differing widths")
    attr = np.asarray(attr).reshape(len(index), widths.pop() if widths else 0)
    glob = obj["globals"]
    if not isinstance(glob, list):
        raise ValueError("globals must be a list")
    if not np.all(np.isfinite(positions)) or not np.all(np.isfinite(features)):
        raise ValueError("non-finite coordinate or feature")
    return MolecularGraph(positions.reshape(n, 3), features, np.asarray(index, dtype=np.int64).reshape(-1, 2), attr,
                          tuple(glob))


def record_to_json(record):
    out = {"id": record.id, "ligand": graph_to_json(record.ligand), "receptor": graph_to_json(record.receptor)}
    out.update(record.meta)
    return json.dumps(out, sort_keys=False)


def record_from_json(line):
    obj = json.loads(line)
    if not isinstance(obj, dict):
        raise ValueError("record must be a JSON object")
    for key in ("ligand", "receptor"):
        if key not in obj:
            raise ValueError(f"missing {key!r}")
    ligand = graph_from_json(obj.pop("ligand"))
    receptor = graph_from_json(obj.pop("receptor"))
    if receptor.n_atoms < 1:
        raise ValueError("receptor has no atoms")
    return GraphRecord(str(obj.pop("id", "")), ligand, receptor, obj)


def iter_records(lines, strict=True, diagnostics=None):
    """Yield records from an iterable of lines.

    Blank lines are skipped.  A malformed line raises :class:`DataError`
    in strict mode; in lenient mode it is appended to ``diagnostics``.
    """
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            yield record_from_json(line)
        except (ValueError, TypeError, ContractError) as exc:
            if strict:
                raise DataError(str(exc), line=lineno) from exc
            if diagnostics is not None:
                diagnostics.append(Diagnostic(lineno, str(exc)))


def load_dataset(path, strict=True, diagnostics=None):
    with open(path, encoding="utf-8") as fh:
        return list(iter_records(fh, strict=strict, diagnostics=diagnostics))


def save_dataset(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(record_to_json(r) + "\n")


def validate_record(record, ligand_schema=LIGAND_SCHEMA, receptor_schema=RECEPTOR_SCHEMA):
    """Raise if a record violates graph or schema invariants."""
    for name, g, schema in (("ligand", record.ligand, ligand_schema), ("receptor", record.receptor, receptor_schema)):
        if g.n_atoms < 1:
            raise ContractError(f"{name} has no atoms")
        if not np.all(np.isfinite(g.positions)):
            raise ContractError(f"{name} has non-finite positions")
        validate(g.features, schema)
    return True


# -------------------------------------------------------------------- XYZ


def parse_xyz(text, schema=LIGAND_SCHEMA):
    """Parse XYZ text into ``(positions, features, elements)``.

    Elements become one-hot rows of ``schema``'s ``element`` block; all
    other blocks are left at zero.
    """
    lines = text.splitlines()
    if not lines:
        raise FormatError("empty XYZ input", line=1)
    try:
        count = int(lines[0].strip())
    except ValueError:
        raise FormatError(f"atom count {lines[0].strip()!r} is not an integer", line=1, kind="count") from None
    if count < 0:
        raise FormatError("negative atom count", line=1, kind="count")
    rows = lines[2 : 2 + count]
    if len(rows) < count:
        raise FormatError(f"count line declares {count} atoms but the block starting here has {len(rows)} rows",
                          line=3, kind="count")
    extra = [ln for ln in lines[2 + count :] if ln.strip()]
    if extra:
        raise FormatError(f"more rows than the declared {count} atoms", line=3 + count, kind="count")
    block, offset = schema.block("element")
    positions = np.zeros((count, 3))
    features = np.zeros((count, schema.width))
    elements = []
    for k, row in enumerate(rows):
        lineno = k + 3
        parts = row.split()
        if len(parts) != 4:
            raise FormatError(f"expected 'Elem x y z', got {row!r}", line=lineno, kind="row")
        el = parts[0]
        if el not in block.labels:
            raise FormatError(f"unknown element {el!r}", line=lineno, kind="element")
        try:
            positions[k] = [float(p) for p in parts[1:]]
        except ValueError:
            raise FormatError(f"non-numeric coordinate in {row!r}", line=lineno, kind="coordinate") from None
        if not np.all(np.isfinite(positions[k])):
            raise FormatError(f"non-finite coordinate in {row!r}", line=lineno, kind="coordinate")
        features[k, offset + block.labels.index(el)] = 1.0
        elements.append(el)
    return positions, features, elements


def write_xyz(positions, elements, comment=""):
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    out = [str(len(positions)), comment.replace("\n", " ")]
    out += [f"{el} {x:.12g} {y:.12g} {z:.12g}" for el, (x, y, z) in zip(elements, positions)]
    return "\n".join(out) + "\n"


def elements_of(features, schema=LIGAND_SCHEMA):
    block, offset = schema.block("element")
    idx = np.argmax(np.asarray(features)[:, offset : offset + block.width], axis=1)
    return [block.labels[k] for k in idx]


# ------------------------------------------------------------ checkpoints


def save_checkpoint(path, tensors, meta):
    """Write named arrays plus JSON metadata to an ``.npz`` file."""
    meta = dict(meta, format_version=CHECKPOINT_VERSION)
    arrays = {f"t:{name}": np.asarray(value) for name, value in tensors.items()}
    arrays["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    tmp.replace(path)


def load_checkpoint(path):
    """Return ``(tensors, meta)`` from :func:`save_checkpoint` output."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        tensors = {k[2:]: np.array(data[k]) for k in data.files if k.startswith("t:")}
    version = meta.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version!r}")
    return tensors, meta


# -------------------------------------------------------------- synthetic

LIGAND_TEMPLATE_ELEMENTS = ("C", "C", "N", "C", "O", "C")
LIGAND_TEMPLATE_CHARGES = (0, 0, 1, 0, -1, 0)
# Per-axis standard deviation (Å) of the atom offsets, in the receptor frame.
LIGAND_OFFSET_STD = (0.35, 0.25, 0.15)
# Offset of the ligand centroid from the receptor centroid, receptor frame.
SYNTHETIC_CENTROID_OFFSET = np.zeros(3)


def ligand_template():
    """Zig-zag chain with 1.45 Å spacing centred on the origin."""
    n = len(LIGAND_TEMPLATE_ELEMENTS)
    angle = np.deg2rad(112.0)
    step_x, step_y = 1.45 * np.sin(angle / 2), 1.45 * np.cos(angle / 2)
    pts = np.array([[k * step_x, (k % 2) * step_y, 0.0] for k in range(n)])
    return pts - pts.mean(axis=0) + SYNTHETIC_CENTROID_OFFSET


def receptor_template(n_atoms=16, seed=7):
    """Fixed pocket: points on a shell of radius 4.5-6 Å with centroid 0."""
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_atoms, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pts = dirs * rng.uniform(4.5, 6.0, size=(n_atoms, 1))
    pts -= pts.mean(axis=0)
    labels = rng.integers(0, RECEPTOR_SCHEMA.width, size=n_atoms)
    return pts, np.eye(RECEPTOR_SCHEMA.width)[labels]


def synthetic_record(rng, index, receptor_atoms=16):
    """One complex: a rigidly placed receptor and a noisy ligand in its frame."""
    rec_pos, rec_feat = receptor_template(receptor_atoms)
    T = sample_random_rigid(rng)
    template = ligand_template()
    local = template + rng.standard_normal(template.shape) * np.asarray(LIGAND_OFFSET_STD)
    feats = np.stack([LIGAND_SCHEMA.encode(element=e, charge=c)
                      for e, c in zip(LIGAND_TEMPLATE_ELEMENTS, LIGAND_TEMPLATE_CHARGES)])
    edge_index, edge_attr = infer_bonds(template, list(LIGAND_TEMPLATE_ELEMENTS))
    net_charge = int(sum(LIGAND_TEMPLATE_CHARGES))
    has_nitrogen = int("N" in LIGAND_TEMPLATE_ELEMENTS)
    glob = (np.eye(2)[has_nitrogen], np.eye(3)[net_charge + 1])
    ligand = apply_rigid(MolecularGraph(local, feats, edge_index, edge_attr, glob), T)
    receptor = apply_rigid(MolecularGraph(rec_pos, rec_feat), T)
    return GraphRecord(f"synthetic-{index:05d}", ligand, receptor,
                       {"frame_rotation": T.rotation.reshape(-1).tolist(), "frame_translation": T.translation.tolist()})


def synthetic_dataset(n_records, seed=0, receptor_atoms=16):
    rng = np.random.default_rng(seed)
    return [synthetic_record(rng, k, receptor_atoms) for k in range(n_records)]


def record_frame(record):
    """Rigid transform that placed a synthetic record's receptor template."""
    return RigidTransform(np.asarray(record.meta["frame_rotation"]).reshape(3, 3),
                          np.asarray(record.meta["frame_translation"]))
