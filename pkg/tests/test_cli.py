import csv
import json
import subprocess
import sys

import pytest

from orchardgraph.cli import main
from orchardgraph.pointcloud import Matter, read_cloud, read_trunks


@pytest.fixture(scope="module")
def stand(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["simulate", "--rows", "1", "--per-row", "2", "--seed", "3", "--out", str(d / "stand.csv"),
                 "--trunks-out", str(d / "trunks.csv")]) == 0
    return d


def test_simulate_writes_labelled_cloud(stand):
    c = read_cloud(stand / "stand.csv")
    assert c.labeled and len(read_trunks(stand / "trunks.csv")) == 2


def test_preprocess(stand, capsys):
    out = stand / "pre.csv"
    assert main(["preprocess", str(stand / "stand.csv"), "--out", str(out), "--nodes-out",
                 str(stand / "nodes.csv")]) == 0
    c = read_cloud(out)
    truth = read_cloud(stand / "stand.csv")
    assert (c.matter[truth.matter == Matter.GROUND] == Matter.GROUND).mean() >= 0.99
    assert "voxels" in capsys.readouterr().out


def test_enrich_and_graph(stand):
    assert main(["enrich", str(stand / "stand.csv"), "--out", str(stand / "f.csv"), "--weights", "cosine",
                 "--neighborhood", "0.3", "--edges-out", str(stand / "e1.csv")]) == 0
    assert main(["graph", str(stand / "stand.csv"), "--edges-out", str(stand / "e2.csv")]) == 0
    with open(stand / "e2.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["a", "b", "cost"] and len(rows) > 1
    assert all(float(r[2]) <= 0.15 for r in rows[1:])


def test_find_trunks_segment_classify(stand):
    assert main(["find-trunks", str(stand / "stand.csv"), "--out", str(stand / "found.csv")]) == 0
    assert len(read_trunks(stand / "found.csv")) == 2
    assert main(["segment", str(stand / "stand.csv"), "--trunks", str(stand / "found.csv"),
                 "--out", str(stand / "seg.csv"), "--no-fallback"]) == 0
    assert main(["classify", str(stand / "stand.csv"), "--trunks", str(stand / "trunks.csv"),
                 "--out", str(stand / "cls.bin"), "--threshold", "0.216", "--smooth-radius", "0.3"]) == 0
    assert len(read_cloud(stand / "cls.bin")) == len(read_cloud(stand / "stand.csv"))


def test_calibrate_and_eval(stand, capsys):
    assert main(["calibrate", "--labeled", str(stand / "stand.csv"), "--trunks", str(stand / "trunks.csv"),
                 "--out", str(stand / "cal.json")]) == 0
    cal = json.loads((stand / "cal.json").read_text())
    assert cal["woody_mean"] > cal["leafy_mean"]
    assert "midpoint" in capsys.readouterr().out
    assert main(["eval", "trunks", "--pred", str(stand / "trunks.csv"), "--truth", str(stand / "trunks.csv"),
                 "--out", str(stand / "ev.csv")]) == 0
    assert ["f1", "1.0"] in list(csv.reader(open(stand / "ev.csv")))
    assert main(["segment", str(stand / "stand.csv"), "--trunks", str(stand / "trunks.csv"),
                 "--out", str(stand / "seg2.csv")]) == 0
    assert main(["eval", "segmentation", "--pred", str(stand / "seg2.csv"),
                 "--truth", str(stand / "stand.csv")]) == 0
    assert "v_measure" in capsys.readouterr().out


def test_analyze_manifest(stand):
    m = stand / "m.json"
    assert main(["analyze", str(stand / "stand.csv"), "--out", str(stand / "out.csv"), "--manifest", str(m),
                 "--truth-trunks", str(stand / "trunks.csv"), "--voxel-size", "0.1"]) == 0
    man = json.loads(m.read_text())
    assert {"v_measure", "f1", "trunk_precision", "trunk_recall"} <= set(man["metrics"])
    assert man["config"]["voxel_size"] == 0.1 and man["input"].endswith("stand.csv")


def test_flags_override_config_file(stand):
    cfg = stand / "cfg.json"
    cfg.write_text(json.dumps({"threshold": 0.5, "smoothing_radius": 0.4}))
    m = stand / "m2.json"
    assert main(["analyze", str(stand / "stand.csv"), "--out", str(stand / "o2.csv"), "--manifest", str(m),
                 "--config", str(cfg), "--threshold", "0.3", "--trunks", str(stand / "trunks.csv")]) == 0
    c = json.loads(m.read_text())["config"]
    assert (c["threshold"], c["smoothing_radius"]) == (0.3, 0.4)


def test_error_exit_codes(stand, capsys):
    assert main(["analyze", str(stand / "stand.csv"), "--out", str(stand / "x.csv"), "--no-detect"]) == 2
    assert "configuration error" in capsys.readouterr().err
    bad = stand / "bad.csv"
    bad.write_text("0,0,0\n1,1\n")
    assert main(["analyze", str(bad), "--out", str(stand / "x.csv")]) == 1
    err = capsys.readouterr().err
    assert "[read]" in err and "line 2" in err
    assert main(["segment", str(stand / "stand.csv"), "--trunks", str(stand / "missing.csv"),
                 "--out", str(stand / "x.csv")]) == 1


def test_sweep(stand):
    spec = stand / "sweep.json"
    spec.write_text(json.dumps({"grid": {}}))
    assert main(["sweep", str(spec), "--out", str(stand / "r.csv")]) == 0
    assert (stand / "r.csv").read_text().strip() == "metric,value,runtime_s"


def test_module_entry_point(stand):
    r = subprocess.run([sys.executable, "-m", "orchardgraph", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("orchardgraph ")
