"""Synthetic graph/label generation and the experiment families."""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .graph import AggregationKind, Graph, aggregation_matrix, train_index
from .gradients import LossKind
from .model import Architecture, init_params
from .theory import condition_report
from .trainer import TrainConfig, train

logger = logging.getLogger(__name__)

_ER = re.compile(r"^erdos_renyi(?:\(([^)]+)\))?$")
GRAPH_KINDS = ("path", "cycle", "star", "erdos_renyi")
LABEL_MODES = ("signal", "uniform_noise")


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic node-regression/classification instance.

    ``graph_kind`` may carry its parameter inline, e.g. ``"erdos_renyi(0.3)"``.
    Signal labels are ``W* X S^depth`` plus Gaussian noise; ``one_hot`` turns
    them into classes by a column-wise argmax.
    """

    graph_kind: str = "cycle"
    n: int = 20
    m_x: int = 4
    m_y: int = 3
    label_mode: str = "signal"
    signal_depth: int = 1
    noise_sigma: float = 0.0
    train_fraction: float = 0.1
    seed: int = 0
    aggregation: str = "gcn"
    one_hot: bool = False
    er_p: float = 0.2

    def __post_init__(self):
        m = _ER.match(self.graph_kind)
        if m:
            if m.group(1) is not None:
                object.__setattr__(self, "er_p", float(m.group(1)))
            object.__setattr__(self, "graph_kind", "erdos_renyi")
        if self.graph_kind not in GRAPH_KINDS:
            raise ConfigurationError(f"unknown graph kind {self.graph_kind!r}")
        if self.n < 1 or self.m_x < 1 or self.m_y < 1:
            raise ConfigurationError("n, m_x and m_y must be positive")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ConfigurationError("train_fraction must lie in (0, 1]")
        if not 0.0 <= self.er_p <= 1.0:
            raise ConfigurationError("erdos_renyi p must lie in [0, 1]")
        if self.label_mode not in LABEL_MODES:
            raise ConfigurationError(f"unknown label mode {self.label_mode!r}")
        if self.signal_depth < 0 or self.noise_sigma < 0:
            raise ConfigurationError("signal_depth and noise_sigma must be nonnegative")
        AggregationKind(self.aggregation)

    def to_dict(self):
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d):
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigurationError(f"unknown synthetic spec keys: {sorted(extra)}")
        return cls(**d)


@dataclass(frozen=True)
class Dataset:
    graph: Graph
    X: np.ndarray
    Y: np.ndarray
    idx: np.ndarray
    labels: Optional[np.ndarray] = None
    targets: Optional[np.ndarray] = None

    def S(self, kind) -> np.ndarray:
        return aggregation_matrix(self.graph, kind)


def make_graph(kind: str, n: int, rng=None, p: float = 0.2) -> Graph:
    if kind == "path":
        edges = [(i, i + 1) for i in range(n - 1)]
    elif kind == "cycle":
        edges = [(i, (i + 1) % n) for i in range(n)] if n >= 3 else [(i, i + 1) for i in range(n - 1)]
    elif kind == "star":
        edges = [(0, i) for i in range(1, n)]
    elif kind == "erdos_renyi":
        rng = np.random.default_rng(0) if rng is None else rng
        iu, ju = np.triu_indices(n, k=1)
        keep = rng.random(iu.size) < p
        edges = list(zip(iu[keep].tolist(), ju[keep].tolist()))
    else:
        raise ConfigurationError(f"unknown graph kind {kind!r}")
    return Graph(n, tuple(edges))


def one_hot(classes, m_y: int) -> np.ndarray:
    classes = np.asarray(classes, dtype=np.int64)
    Y = np.zeros((m_y, classes.size))
    Y[classes, np.arange(classes.size)] = 1.0
    return Y


def gen_synthetic(spec: SyntheticSpec) -> Dataset:
    """Deterministic instance from ``spec``.

    Draw order from one generator: graph (ER only), features, training set,
    labels. Two specs differing only in ``label_mode`` therefore share graph,
    features and training set.
    """
    rng = np.random.default_rng(spec.seed)
    g = make_graph(spec.graph_kind, spec.n, rng, spec.er_p)
    X = rng.normal(size=(spec.m_x, spec.n)) / np.sqrt(spec.m_x)
    n_bar = max(1, int(round(spec.train_fraction * spec.n)))
    idx = train_index(np.sort(rng.choice(spec.n, size=n_bar, replace=False)), spec.n)
    # separate stream for labels so both modes see the same X and idx
    lrng = np.random.default_rng([spec.seed, 1])
    if spec.label_mode == "signal":
        S = aggregation_matrix(g, spec.aggregation)
        W_star = lrng.normal(size=(spec.m_y, spec.m_x))
        T = W_star @ X @ np.linalg.matrix_power(S, spec.signal_depth)
        T = T + spec.noise_sigma * lrng.normal(size=T.shape)
        if spec.one_hot:
            labels = T.argmax(axis=0)
            targets = one_hot(labels, spec.m_y)
        else:
            labels, targets = None, T
    else:
        labels = lrng.integers(0, spec.m_y, size=spec.n)
        targets = one_hot(labels, spec.m_y)
    return Dataset(g, X, targets[:, idx].copy(), idx, labels, targets)


# ---------------------------------------------------------------------------

FAMILIES = ("skip_comparison", "depth_sweep", "label_comparison", "condition_scan")
REPORT_COLUMNS = ["family", "arch", "aggregation", "activation", "depth", "seed", "step", "t", "loss"]
CONDITION_COLUMNS = ["family", "arch", "aggregation", "activation", "depth", "seed",
                     "sigma_sq", "global_min"]


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment family over a grid of model variants.

    ``archs`` entries are ``linear`` (no skip heads) or ``multiscale``;
    ``activations`` are ``linear`` or ``relu``. ``skip_comparison`` always
    runs both archs from a shared initialisation (skip heads zeroed).
    """

    family: str
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    archs: tuple = ("linear",)
    aggregations: tuple = ("gcn",)
    activations: tuple = ("linear",)
    depths: tuple = (2,)
    hidden: int = 16
    init: str = "uniform_fan_in"
    seeds: tuple = (0,)
    workers: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown experiment family {self.family!r}")
        for name in ("archs", "aggregations", "activations", "depths", "seeds"):
            val = tuple(getattr(self, name))
            if not val:
                raise ConfigurationError(f"{name} must be non-empty")
            object.__setattr__(self, name, val)
        if any(int(d) < 1 for d in self.depths):
            raise ConfigurationError("depths must be positive")
        for a in self.archs:
            if a not in ("linear", "multiscale"):
                raise ConfigurationError(f"unknown arch {a!r}")
        for a in self.activations:
            if a not in ("linear", "relu"):
                raise ConfigurationError(f"unknown activation {a!r}")
        for a in self.aggregations:
            AggregationKind(a)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigurationError(f"unknown experiment keys: {sorted(extra)}")
        if "synthetic" in d:
            d["synthetic"] = SyntheticSpec.from_dict(d["synthetic"])
        if "train" in d:
            d["train"] = TrainConfig.from_dict(d["train"])
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "family": self.family, "synthetic": self.synthetic.to_dict(),
            "train": self.train.to_dict(), "archs": list(self.archs),
            "aggregations": list(self.aggregations), "activations": list(self.activations),
            "depths": list(self.depths), "hidden": self.hidden, "init": self.init,
            "seeds": list(self.seeds), "workers": self.workers,
        }


@dataclass
class CellResult:
    key: tuple
    status: str
    rows: list
    loss_initial: float
    loss_at_final_step: float

    @property
    def loss_drop(self):
        return self.loss_initial - self.loss_at_final_step

    def summary(self) -> dict:
        fam, arch, agg, act, depth, seed = self.key
        return {"family": fam, "arch": arch, "aggregation": agg, "activation": act,
                "depth": depth, "seed": seed, "status": self.status,
                "loss_initial": self.loss_initial, "loss_at_final_step": self.loss_at_final_step,
                "loss_drop": self.loss_drop}


@dataclass
class ExperimentReport:
    family: str
    columns: list
    rows: list
    cells: list

    def cell(self, **match) -> CellResult:
        hits = [c for c in self.cells if all(c.summary()[k] == v for k, v in match.items())]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} cells match {match}")
        return hits[0]

    def summaries(self) -> list:
        return [c.summary() for c in self.cells]


def _dataset_for(spec: ExperimentSpec, label_mode=None) -> Dataset:
    syn = spec.synthetic
    if label_mode is not None:
        syn = replace(syn, label_mode=label_mode)
    if spec.train.loss is LossKind.CROSS_ENTROPY and not syn.one_hot:
        syn = replace(syn, one_hot=True)
    return gen_synthetic(syn)


def _run_cell(key, params, data: Dataset, cfg: TrainConfig) -> CellResult:
    fam, arch, agg, act, depth, seed = key
    S = data.S(agg)
    _, traj = train(params, data.X, S, data.idx, data.Y, cfg)
    rows = [[fam, arch, agg, act, depth, seed, cp.step, cp.t, cp.loss] for cp in traj.checkpoints]
    cps = traj.checkpoints
    return CellResult(key, traj.status, rows, cps[0].loss, cps[-1].loss)


def _tasks(spec: ExperimentSpec):
    """(key, params, dataset) for every grid cell."""
    syn = spec.synthetic
    m_x = syn.m_x
    tasks = []
    if spec.family == "label_comparison":
        datasets = [(f"label_comparison/{mode}", _dataset_for(spec, mode)) for mode in LABEL_MODES]
    else:
        datasets = [(spec.family, _dataset_for(spec))]
    for fam, data in datasets:
        m_y = data.Y.shape[0]
        for agg in spec.aggregations:
            for act in spec.activations:
                for depth in spec.depths:
                    for seed in spec.seeds:
                        relu = act == "relu"
                        if spec.family == "skip_comparison":
                            multi = init_params(Architecture.build(True, relu), depth, m_x, spec.hidden,
                                                m_y, spec.init, seed, zero_skip_heads=True)
                            plain = multi.replace(arch=Architecture.build(False, relu), W=(multi.W[-1],))
                            tasks.append(((fam, "linear", agg, act, depth, seed), plain, data))
                            tasks.append(((fam, "multiscale", agg, act, depth, seed), multi, data))
                            continue
                        for arch in spec.archs:
                            a = Architecture.build(arch == "multiscale", relu)
                            p = init_params(a, depth, m_x, spec.hidden, m_y, spec.init, seed)
                            tasks.append(((fam, arch, agg, act, depth, seed), p, data))
    return tasks


def run_experiment(spec: ExperimentSpec) -> ExperimentReport:
    """Run every grid cell; rows are sorted by cell key, then step.

    A diverged cell keeps its rows and ``status='diverged'``; the grid goes on.
    ``condition_scan`` trains nothing and emits one row per depth with the
    graph condition value and global minimum instead of losses.
    """
    if spec.family == "condition_scan":
        return _condition_scan(spec)
    tasks = _tasks(spec)
    if spec.workers > 1:
        with ThreadPoolExecutor(max_workers=spec.workers) as pool:
            cells = list(pool.map(lambda t: _run_cell(t[0], t[1], t[2], spec.train), tasks))
    else:
        cells = [_run_cell(k, p, d, spec.train) for k, p, d in tasks]
    cells.sort(key=lambda c: c.key)
    for c in cells:
        if c.status != "ok":
            logger.warning("cell %s finished with status %s", c.key, c.status)
    rows = [r for c in cells for r in c.rows]
    return ExperimentReport(spec.family, list(REPORT_COLUMNS), rows, cells)


def _condition_scan(spec: ExperimentSpec) -> ExperimentReport:
    data = _dataset_for(spec)
    rows = []
    H_max = max(spec.depths)
    for agg in sorted(spec.aggregations):
        rep = condition_report(data.X, data.S(agg), data.idx, H_max, "linear", data.Y)
        for arch in sorted(spec.archs):
            multi = arch == "multiscale"
            sig = rep.sigma_sq_multiscale if multi else rep.sigma_sq_linear
            gm = rep.global_min_multiscale if multi else rep.global_min_linear
            for d in rep.depths:
                rows.append(["condition_scan", arch, agg, "linear", d, spec.synthetic.seed, sig[d], gm[d]])
    return ExperimentReport(spec.family, list(CONDITION_COLUMNS), rows, [])
