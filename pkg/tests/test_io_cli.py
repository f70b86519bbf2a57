import json

import numpy as np
import numpy.testing as npt
import pytest

from lingnn import io as lio
from lingnn.cli import main
from lingnn.errors import ParseError, ReportError
from lingnn.harness import SyntheticSpec, gen_synthetic
from lingnn.model import GnnParams, init_params
from lingnn.trainer import TrainConfig, TrajectoryRecord, train


def write_files(root, **files):
    base = {"edges.txt": "0 1\n", "features.csv": "1.0,0.0\n0.0,1.0\n",
            "labels.csv": "0,0\n1,1\n", "mask.txt": "0\n1\n"}
    base.update(files)
    for name, text in base.items():
        if text is not None:
            (root / name).write_text(text)
    return root


class TestParse:
    def test_minimal(self, tmp_path):
        d = lio.parse_dataset(write_files(tmp_path))
        npt.assert_array_equal(d.X, np.eye(2))
        assert d.graph.edges == ((0, 1),)
        npt.assert_array_equal(d.Y, np.eye(2))

    def test_comments_and_declared_classes(self, tmp_path):
        d = lio.parse_dataset(write_files(tmp_path, **{"labels.csv": "# num_classes=4\n0,0 # a\n1,3\n"}))
        assert d.Y.shape == (4, 2)

    @pytest.mark.parametrize("name,text,line,needle", [
        ("edges.txt", "0 1\n0 5\n", 2, "out of range"),
        ("edges.txt", "0 x\n", 1, "not an integer"),
        ("features.csv", "1.0,abc\n0,1\n", 1, "non-numeric"),
        ("features.csv", "1.0,0.0\n1.0\n", 2, "expected 2 features"),
        ("labels.csv", "0,0\n7,1\n", 2, "unknown node"),
        ("labels.csv", "0,0\n0,1\n", 2, "listed twice"),
        ("labels.csv", "# num_classes=1\n0,0\n1,1\n", 3, "out of range"),
        ("mask.txt", "# nothing\n", 0, "empty mask"),
        ("mask.txt", "0\n0\n", 2, "listed twice"),
        ("labels.csv", "0,0\n", 0, "no label for training node 1"),
        ("labels.csv", None, 0, "file not found"),
    ])
    def test_errors_name_file_and_line(self, tmp_path, name, text, line, needle):
        write_files(tmp_path, **{name: text})
        with pytest.raises(ParseError) as ei:
            lio.parse_dataset(tmp_path)
        assert ei.value.path.endswith(name) and ei.value.line == line
        assert needle in str(ei.value)

    def test_real_targets(self, tmp_path):
        write_files(tmp_path, **{"targets.csv": "0,0.5,1\n1,-2,3\n", "labels.csv": None})
        d = lio.parse_dataset(tmp_path)
        npt.assert_array_equal(d.Y, [[0.5, -2.0], [1.0, 3.0]])
        assert d.labels is None


class TestRoundTrip:
    @pytest.mark.parametrize("one_hot", [False, True])
    def test_dataset_idempotent(self, tmp_path, one_hot):
        d = gen_synthetic(SyntheticSpec("erdos_renyi(0.3)", n=12, m_x=3, seed=4, one_hot=one_hot,
                                        noise_sigma=0.1, train_fraction=0.5))
        lio.write_dataset(d, tmp_path / "a")
        d2 = lio.parse_dataset(tmp_path / "a")
        lio.write_dataset(d2, tmp_path / "b")
        for f in sorted(p.name for p in (tmp_path / "a").iterdir()):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
        assert d2.graph == d.graph
        assert d2.X.tobytes() == d.X.tobytes() and d2.Y.tobytes() == d.Y.tobytes()

    def test_params(self, tmp_path):
        p = init_params("multiscale", 2, 3, [4, 2], 2, "gaussian(0.3)", 1)
        lio.write_params(p, tmp_path / "p.json")
        q = lio.read_params(tmp_path / "p.json")
        assert q.flatten().tobytes() == p.flatten().tobytes()

    def test_bad_params_file(self, tmp_path):
        (tmp_path / "p.json").write_text("{")
        with pytest.raises(ParseError):
            lio.read_params(tmp_path / "p.json")

    def test_snapshots(self, tmp_path):
        d = gen_synthetic(SyntheticSpec("cycle", n=8, m_x=2, m_y=2, train_fraction=0.5))
        p = init_params("linear", 2, 2, 3, 2, "orthogonal", 0)
        _, traj = train(p, d.X, d.S("gcn"), d.idx, d.Y, TrainConfig(steps=10, record_every=5,
                                                                    snapshot_params=True))
        lio.write_snapshots(traj, tmp_path, {"aggregation": "gcn"})
        back, meta = lio.read_snapshots(tmp_path)
        assert meta["aggregation"] == "gcn" and back.lr == traj.lr
        for a, b in zip(traj.checkpoints, back.checkpoints):
            assert (a.step, a.t, a.loss, a.lambdas) == (b.step, b.t, b.loss, b.lambdas)
            assert a.params.flatten().tobytes() == b.params.flatten().tobytes()

    def test_snapshots_need_params(self, tmp_path):
        _, traj = train(GnnParams("linear", (np.eye(1),), (np.eye(1),)), [[1.0]], [[1.0]], [0], [[0.0]],
                        TrainConfig(steps=1))
        with pytest.raises(ReportError):
            lio.write_snapshots(traj, tmp_path, {})


class TestReports:
    def test_floats_exact(self):
        for x in (0.1, 1 / 3, 1e-300, -2.5e17):
            assert float(lio.fmt_float(x)) == x
        assert json.loads(lio.report_json({"v": 0.1}))["v"] == 0.1

    def test_json_stable(self):
        a = lio.report_json({"b": np.float64(1.5), "a": [np.int64(2), True]})
        assert a == lio.report_json({"a": [2, True], "b": 1.5})
        assert a.endswith("\n") and a.index('"a"') < a.index('"b"')

    def test_empty_trajectory_header_only(self):
        text = lio.report_csv(lio.trajectory_table(TrajectoryRecord(())))
        assert text.count("\n") == 1 and text.startswith("step,t,loss")

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ReportError):
            lio.write_report({}, tmp_path / "x", "xml")


@pytest.fixture
def dataset_dir(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"graph_kind": "cycle", "n": 10, "m_x": 3, "m_y": 2,
                                "signal_depth": 2, "train_fraction": 0.5}))
    assert main(["gen", "--spec", str(spec), "--out", str(tmp_path / "data")]) == 0
    return tmp_path


class TestCli:
    def test_pipeline(self, dataset_dir):
        t = dataset_dir
        data = str(t / "data")
        cfg = t / "run.json"
        cfg.write_text(json.dumps({"aggregation": "gcn",
                                   "model": {"arch": "multiscale", "depth": 2, "hidden": 4,
                                             "init": "orthogonal"},
                                   "train": {"lr": 0.001, "steps": 40, "record_every": 10}}))
        assert main(["check", "--data", data, "--max-depth", "2", "--out", str(t / "c.json")]) == 0
        assert json.loads((t / "c.json").read_text())["global_min_linear"][2] < 1e-20
        assert main(["train", "--data", data, "--config", str(cfg), "--out", str(t / "tr.csv"),
                     "--snapshots", str(t / "snap"), "--final-params", str(t / "final.json")]) == 0
        assert len((t / "tr.csv").read_text().splitlines()) == 6
        for case in ("thm1i", "thm1ii:2"):
            assert main(["verify", "--data", data, "--traj-snapshots", str(t / "snap"),
                         "--case", case, "--out", str(t / "v.csv")]) == 0
        assert main(["verify", "--data", data, "--traj-snapshots", str(t / "snap"), "--case", "thm1i",
                     "--pointwise", "3", "--out", str(t / "pw.csv")]) == 0
        assert len((t / "pw.csv").read_text().splitlines()) == 4
        assert main(["decompose", "--data", data, "--params", str(t / "final.json"),
                     "--out", str(t / "d.json")]) == 0
        d = json.loads((t / "d.json").read_text())
        assert d["dLdt_analytic"] <= 0

    def test_compare_skip(self, dataset_dir):
        t = dataset_dir
        data = str(t / "data")
        p = str(t / "p.json")
        assert main(["init", "--data", data, "--arch", "multiscale", "--depth", "2", "--hidden", "4",
                     "--scheme", "gaussian", "--out", p]) == 0
        assert main(["compare-skip", "--data", data, "--params", p]) == 2
        assert main(["compare-skip", "--data", data, "--params", p, "--project",
                     "--out", str(t / "s.json")]) == 0

    def test_experiment_byte_identical(self, tmp_path):
        spec = tmp_path / "e.json"
        spec.write_text(json.dumps({"family": "depth_sweep", "depths": [1, 2], "hidden": 3,
                                    "synthetic": {"n": 8, "train_fraction": 0.5},
                                    "train": {"lr": 0.01, "steps": 10, "record_every": 5}}))
        outs = []
        for k in range(2):
            out = tmp_path / f"r{k}.csv"
            assert main(["experiment", "--spec", str(spec), "--out", str(out),
                         "--summary", str(tmp_path / f"s{k}.json")]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1] and outs[0].count(b"\n") == 7

    def test_exit_codes(self, tmp_path, capsys):
        assert main([]) == 2
        assert main(["check", "--data", str(tmp_path / "missing"), "--max-depth", "1"]) == 2
        assert "file not found" in capsys.readouterr().err

    def test_diverged_training_exits_one(self, dataset_dir):
        t = dataset_dir
        cfg = t / "bad.json"
        cfg.write_text(json.dumps({"model": {"depth": 3, "hidden": 4, "init": "gaussian(3.0)"},
                                   "train": {"lr": 50.0, "steps": 50}}))
        assert main(["train", "--data", str(t / "data"), "--config", str(cfg),
                     "--out", str(t / "x.csv")]) == 1

    def test_unknown_config_key(self, dataset_dir):
        t = dataset_dir
        cfg = t / "bad.json"
        cfg.write_text(json.dumps({"optimiser": "sgd"}))
        assert main(["train", "--data", str(t / "data"), "--config", str(cfg),
                     "--out", str(t / "x.csv")]) == 2
