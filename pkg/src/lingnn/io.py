"""Plain-text dataset files, trajectory snapshots and report serialisation.

Dataset directory layout::

    edges.txt     whitespace-separated node pairs, one per line
    features.csv  comma-separated floats, row i holds node i
    labels.csv    node_id,class_index        (classification targets)
    targets.csv   node_id,y_1,...,y_m        (real targets; optional)
    mask.txt      one training node id per line

``#`` starts a comment in every file. ``labels.csv`` may declare the class
count with a ``# num_classes=K`` line; otherwise it is ``max class + 1``.
When ``targets.csv`` exists it supplies ``Y``; labels become optional.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, ReportError
from .graph import Graph
from .harness import Dataset, one_hot
from .model import GnnParams
from .trainer import Checkpoint, TrajectoryRecord

_NUM_CLASSES = re.compile(r"^#\s*num_classes\s*=\s*(\d+)\s*$")


@dataclass(frozen=True)
class DatasetPaths:
    edges_file: Path
    features_file: Path
    labels_file: Path
    mask_file: Path
    targets_file: Path | None = None

    @classmethod
    def from_dir(cls, root) -> "DatasetPaths":
        root = Path(root)
        t = root / "targets.csv"
        return cls(root / "edges.txt", root / "features.csv", root / "labels.csv",
                   root / "mask.txt", t if t.exists() else None)


def _lines(path):
    """Yield ``(line_no, stripped_text)`` for non-blank, non-comment lines."""
    try:
        with open(path, encoding="utf-8") as fh:
            for no, raw in enumerate(fh, start=1):
                text = raw.split("#", 1)[0].strip()
                if text:
                    yield no, text
    except FileNotFoundError:
        raise ParseError(path, 0, "file not found") from None


def _int(tok, path, no, what):
    try:
        return int(tok)
    except ValueError:
        raise ParseError(path, no, f"{what} {tok!r} is not an integer") from None


def _parse_features(path):
    rows, width = [], None
    for no, text in _lines(path):
        vals = []
        for tok in text.split(","):
            try:
                v = float(tok)
            except ValueError:
                raise ParseError(path, no, f"non-numeric feature {tok.strip()!r}") from None
            if not math.isfinite(v):
                raise ParseError(path, no, f"non-finite feature {tok.strip()!r}")
            vals.append(v)
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise ParseError(path, no, f"expected {width} features, found {len(vals)}")
        rows.append(vals)
    if not rows:
        raise ParseError(path, 0, "no feature rows")
    return np.array(rows, dtype=np.float64).T


def _parse_edges(path, n):
    pairs = []
    for no, text in _lines(path):
        toks = text.split()
        if len(toks) != 2:
            raise ParseError(path, no, f"expected 2 node ids, found {len(toks)}")
        u, v = (_int(t, path, no, "node id") for t in toks)
        for x in (u, v):
            if not 0 <= x < n:
                raise ParseError(path, no, f"node id {x} out of range [0, {n})")
        pairs.append((u, v))
    return Graph.from_edge_list(n, pairs)


def _node_rows(path, n, min_cols):
    """Rows ``node_id, values...`` keyed by node; each node at most once."""
    out = {}
    for no, text in _lines(path):
        toks = [t.strip() for t in text.split(",")]
        if len(toks) < min_cols:
            raise ParseError(path, no, f"expected at least {min_cols} fields")
        node = _int(toks[0], path, no, "node id")
        if not 0 <= node < n:
            raise ParseError(path, no, f"label for unknown node {node}")
        if node in out:
            raise ParseError(path, no, f"node {node} listed twice")
        out[node] = (no, toks[1:])
    return out


def _parse_labels(path, n):
    declared = None
    if not Path(path).exists():
        raise ParseError(path, 0, "file not found")
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            m = _NUM_CLASSES.match(line.strip())
            if m:
                declared = int(m.group(1))
    rows = _node_rows(path, n, 2)
    labels = np.full(n, -1, dtype=np.int64)
    line_of = {}
    for node, (no, toks) in rows.items():
        if len(toks) != 1:
            raise ParseError(path, no, "expected node_id,class_index")
        c = _int(toks[0], path, no, "class index")
        if c < 0 or (declared is not None and c >= declared):
            raise ParseError(path, no, f"class index {c} out of range")
        labels[node] = c
        line_of[node] = no
    k = declared if declared is not None else int(labels.max()) + 1
    if k < 1:
        raise ParseError(path, 0, "no labels")
    return labels, k


def _parse_targets(path, n):
    rows = _node_rows(path, n, 2)
    width = None
    T = None
    seen = np.zeros(n, dtype=bool)
    for node, (no, toks) in sorted(rows.items()):
        try:
            vals = [float(t) for t in toks]
        except ValueError:
            raise ParseError(path, no, "non-numeric target") from None
        if width is None:
            width = len(vals)
            T = np.zeros((width, n))
        elif len(vals) != width:
            raise ParseError(path, no, f"expected {width} target values, found {len(vals)}")
        T[:, node] = vals
        seen[node] = True
    if T is None:
        raise ParseError(path, 0, "no targets")
    return T, seen


def _parse_mask(path, n):
    ids = []
    for no, text in _lines(path):
        x = _int(text, path, no, "node id")
        if not 0 <= x < n:
            raise ParseError(path, no, f"node id {x} out of range [0, {n})")
        if x in ids:
            raise ParseError(path, no, f"node {x} listed twice")
        ids.append(x)
    if not ids:
        raise ParseError(path, 0, "empty mask")
    return np.array(sorted(ids), dtype=np.int64)


def parse_dataset(paths) -> Dataset:
    """Read a dataset directory (or :class:`DatasetPaths`) and cross-validate it."""
    if not isinstance(paths, DatasetPaths):
        paths = DatasetPaths.from_dir(paths)
    X = _parse_features(paths.features_file)
    n = X.shape[1]
    g = _parse_edges(paths.edges_file, n)
    idx = _parse_mask(paths.mask_file, n)
    labels = None
    if paths.targets_file is not None:
        T, seen = _parse_targets(paths.targets_file, n)
        missing = idx[~seen[idx]]
        if missing.size:
            raise ParseError(paths.targets_file, 0, f"no target for training node {missing[0]}")
        if Path(paths.labels_file).exists():
            labels, _ = _parse_labels(paths.labels_file, n)
        Y = T[:, idx].copy()
        return Dataset(g, X, Y, idx, labels, T)
    labels, k = _parse_labels(paths.labels_file, n)
    missing = idx[labels[idx] < 0]
    if missing.size:
        raise ParseError(paths.labels_file, 0, f"no label for training node {missing[0]}")
    full = np.zeros((k, n))
    have = labels >= 0
    full[:, have] = one_hot(labels[have], k)
    return Dataset(g, X, full[:, idx].copy(), idx, labels, full)


def fmt_float(x) -> str:
    """17 significant digits, lossless for float64."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt_float(v)
    return str(v)


def _write_text(path, text):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc}") from exc


def write_dataset(data: Dataset, root) -> None:
    root = Path(root)
    n = data.X.shape[1]
    _write_text(root / "edges.txt", "".join(f"{u} {v}\n" for u, v in data.graph.edges))
    _write_text(root / "features.csv",
                "".join(",".join(fmt_float(v) for v in data.X[:, i]) + "\n" for i in range(n)))
    _write_text(root / "mask.txt", "".join(f"{i}\n" for i in data.idx))
    if data.labels is not None:
        k = data.targets.shape[0] if data.targets is not None else int(data.labels.max()) + 1
        body = "".join(f"{i},{c}\n" for i, c in enumerate(data.labels) if c >= 0)
        _write_text(root / "labels.csv", f"# num_classes={k}\n" + body)
    is_one_hot = data.labels is not None and data.targets is not None and np.array_equal(
        data.targets[:, data.labels >= 0], one_hot(data.labels[data.labels >= 0], data.targets.shape[0]))
    if not is_one_hot:
        T = data.targets
        if T is None:
            T = np.zeros((data.Y.shape[0], n))
            T[:, data.idx] = data.Y
        rows = "".join(f"{i}," + ",".join(fmt_float(v) for v in T[:, i]) + "\n" for i in range(n))
        _write_text(root / "targets.csv", rows)


# ---------------------------------------------------------------------------
# reports

@dataclass
class Table:
    columns: list
    rows: list


def _jsonable(obj):
    if hasattr(obj, "to_dict"):
        return _jsonable(obj.to_dict())
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def report_json(report) -> str:
    # repr-based floats are the shortest exact round-trip form
    return json.dumps(_jsonable(report), sort_keys=True, indent=2, allow_nan=True) + "\n"


def report_csv(table: Table) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    for r in table.rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def write_report(report, path, fmt: str = "json") -> None:
    """Write ``report`` byte-stably as JSON (any mapping/dataclass with
    ``to_dict``) or CSV (a :class:`Table`)."""
    if fmt == "json":
        _write_text(path, report_json(report))
    elif fmt == "csv":
        if not isinstance(report, Table):
            raise ReportError("CSV output needs a Table")
        _write_text(path, report_csv(report))
    else:
        raise ReportError(f"unknown report format {fmt!r}")


def trajectory_table(traj: TrajectoryRecord) -> Table:
    return Table(traj.csv_header(), traj.csv_rows())


# ---------------------------------------------------------------------------
# parameter files and trajectory snapshots

def write_params(params: GnnParams, path) -> None:
    _write_text(path, report_json(params.to_dict()))


def read_params(path) -> GnnParams:
    try:
        return GnnParams.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    except FileNotFoundError:
        raise ParseError(path, 0, "file not found") from None
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(path, 0, f"invalid parameter file: {exc}") from None


def write_snapshots(traj: TrajectoryRecord, root, meta: dict) -> None:
    """One ``step_XXXXXXXX.json`` per checkpoint plus ``index.json``."""
    root = Path(root)
    entries = []
    for cp in traj.checkpoints:
        if cp.params is None:
            raise ReportError("trajectory carries no parameter snapshots")
        name = f"step_{cp.step:08d}.json"
        write_params(cp.params, root / name)
        entries.append({"step": cp.step, "t": cp.t, "loss": cp.loss,
                        "lambdas": list(cp.lambdas), "file": name})
    index = dict(meta)
    index.update({"lr": traj.lr, "optimizer": traj.optimizer, "status": traj.status,
                  "checkpoints": entries})
    _write_text(root / "index.json", report_json(index))


def read_snapshots(root):
    """Return ``(TrajectoryRecord, meta)`` from a snapshot directory."""
    root = Path(root)
    try:
        index = json.loads((root / "index.json").read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ParseError(root / "index.json", 0, "file not found") from None
    except json.JSONDecodeError as exc:
        raise ParseError(root / "index.json", exc.lineno, exc.msg) from None
    cps = []
    for e in index.get("checkpoints", []):
        p = read_params(root / e["file"])
        cps.append(Checkpoint(int(e["step"]), float(e["t"]), float(e["loss"]),
                              tuple(e["lambdas"]), None, p))
    meta = {k: v for k, v in index.items() if k != "checkpoints"}
    traj = TrajectoryRecord(tuple(cps), index.get("status", "ok"),
                            index.get("optimizer", "gd"), float(index.get("lr", 0.0)))
    return traj, meta
