import numpy as np
import numpy.testing as npt
import pytest

from lingnn.errors import ConfigurationError
from lingnn.harness import (CONDITION_COLUMNS, REPORT_COLUMNS, ExperimentSpec, SyntheticSpec,
                            gen_synthetic, make_graph, one_hot, run_experiment)
from lingnn.theory import global_minimum
from lingnn.trainer import TrainConfig


class TestGraphs:
    def test_path(self):
        assert make_graph("path", 3).edges == ((0, 1), (1, 2))

    def test_cycle_and_star(self):
        assert len(make_graph("cycle", 5).edges) == 5
        assert make_graph("star", 4).edges == ((0, 1), (0, 2), (0, 3))

    def test_er_extremes(self):
        assert make_graph("erdos_renyi", 6, p=0.0).edges == ()
        assert len(make_graph("erdos_renyi", 6, p=1.0).edges) == 15

    def test_one_hot(self):
        npt.assert_array_equal(one_hot([1, 0], 3), [[0, 1], [1, 0], [0, 0]])


class TestSynthetic:
    def test_realizable_signal(self):
        spec = SyntheticSpec("cycle", n=12, m_x=3, m_y=2, signal_depth=2, train_fraction=0.5, seed=3)
        d = gen_synthetic(spec)
        assert d.X.shape == (3, 12) and d.Y.shape == (2, 6)
        assert global_minimum(d.X, d.S("gcn"), d.idx, d.Y, 2) == pytest.approx(0.0, abs=1e-20)
        assert global_minimum(d.X, d.S("gcn"), d.idx, d.Y, 0) > 1e-6

    def test_deterministic(self):
        spec = SyntheticSpec("erdos_renyi(0.3)", n=15, seed=7, noise_sigma=0.2)
        a, b = gen_synthetic(spec), gen_synthetic(spec)
        assert a.graph == b.graph
        assert a.X.tobytes() == b.X.tobytes() and a.Y.tobytes() == b.Y.tobytes()

    def test_label_modes_share_inputs(self):
        base = SyntheticSpec("erdos_renyi(0.3)", n=15, seed=2, one_hot=True)
        a = gen_synthetic(base)
        b = gen_synthetic(SyntheticSpec("erdos_renyi(0.3)", n=15, seed=2, label_mode="uniform_noise"))
        assert a.graph == b.graph
        npt.assert_array_equal(a.X, b.X)
        npt.assert_array_equal(a.idx, b.idx)
        npt.assert_array_equal(b.Y.sum(axis=0), 1.0)

    @pytest.mark.parametrize("bad", [dict(graph_kind="grid"), dict(train_fraction=0.0),
                                     dict(label_mode="random"), dict(noise_sigma=-1.0)])
    def test_rejects(self, bad):
        with pytest.raises(ConfigurationError):
            SyntheticSpec(**bad)


def _spec(family="depth_sweep", **kw):
    d = dict(family=family, synthetic=SyntheticSpec("cycle", n=10, m_x=3, m_y=2, train_fraction=0.5),
             train=TrainConfig(lr=1e-2, steps=20, record_every=5), depths=(2,), hidden=4,
             init="orthogonal")
    d.update(kw)
    return ExperimentSpec(**d)


class TestExperiments:
    def test_single_cell_rows(self):
        rep = run_experiment(_spec())
        assert rep.columns == REPORT_COLUMNS
        assert len(rep.rows) == 20 // 5 + 1
        assert [r[6] for r in rep.rows] == [0, 5, 10, 15, 20]
        assert rep.cells[0].loss_drop > 0

    def test_grid_order_and_determinism(self):
        spec = _spec(archs=("multiscale", "linear"), aggregations=("gin", "gcn"), depths=(1, 2), seeds=(1, 0))
        rep = run_experiment(spec)
        keys = [c.key for c in rep.cells]
        assert len(keys) == 16 and keys == sorted(keys)
        again = run_experiment(ExperimentSpec.from_dict(spec.to_dict()))
        assert again.rows == rep.rows

    def test_workers_match_serial(self):
        spec = _spec(depths=(1, 2, 3), seeds=(0, 1))
        par = ExperimentSpec.from_dict({**spec.to_dict(), "workers": 4})
        assert run_experiment(par).rows == run_experiment(spec).rows

    def test_skip_comparison_shared_start(self):
        rep = run_experiment(_spec("skip_comparison"))
        lin = rep.cell(arch="linear")
        multi = rep.cell(arch="multiscale")
        assert lin.loss_initial == multi.loss_initial
        assert multi.loss_at_final_step <= lin.loss_at_final_step

    def test_label_comparison_families(self):
        rep = run_experiment(_spec("label_comparison", train=TrainConfig(loss="ce", lr=1e-2, steps=10,
                                                                        record_every=10)))
        fams = sorted({c.key[0] for c in rep.cells})
        assert fams == ["label_comparison/signal", "label_comparison/uniform_noise"]

    def test_condition_scan(self):
        rep = run_experiment(_spec("condition_scan", archs=("linear", "multiscale"), depths=(3,)))
        assert rep.columns == CONDITION_COLUMNS
        assert len(rep.rows) == 2 * 4
        multi = [r for r in rep.rows if r[1] == "multiscale"]
        assert all(a[7] >= b[7] - 1e-12 for a, b in zip(multi, multi[1:]))

    def test_reference_scale_cell_accepted(self):
        spec = ExperimentSpec(family="depth_sweep",
                              synthetic=SyntheticSpec("erdos_renyi(0.1)", n=40, m_x=16, m_y=3, one_hot=True),
                              train=TrainConfig(loss="cross_entropy", lr=5e-5, steps=3, record_every=1),
                              aggregations=("gcn",), depths=(6,), hidden=32)
        rep = run_experiment(spec)
        assert rep.cells[0].status == "ok" and len(rep.rows) == 4

    def test_diverged_cell_recorded(self):
        spec = _spec(train=TrainConfig(lr=50.0, steps=50, record_every=1), init="gaussian(3.0)",
                     depths=(1, 3))
        rep = run_experiment(spec)
        assert "diverged" in {c.status for c in rep.cells}
        assert len(rep.cells) == 2 and all(c.rows for c in rep.cells)

    @pytest.mark.parametrize("bad", [dict(family="ablation"), dict(depths=()), dict(archs=("gat",)),
                                     dict(activations=("tanh",)), dict(aggregations=("sage",))])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            _spec(**bad)
