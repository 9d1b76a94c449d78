from __future__ import annotations

import json
import subprocess
import sys

import pytest

from wamitrack.cli import main
from wamitrack.detector import read_detections
from wamitrack.gmphd import read_tracks


def _error_line(capsys):
    err = capsys.readouterr().err.strip().splitlines()[-1]
    assert err.startswith("error code=")
    return err


@pytest.fixture(scope="module")
def clean_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("clean")
    (d / "spec.json").write_text(json.dumps({"preset": "clean", "frames": 12}))
    assert main(["synth", str(d / "spec.json"), str(d / "scene")]) == 0
    return d / "scene"


def test_synth_layout(clean_dir):
    names = {p.name for p in clean_dir.iterdir()}
    assert names == {"frames", "ground_truth.csv", "homographies.txt", "scene.json"}
    assert len(list((clean_dir / "frames").iterdir())) == 12


def test_oracle_detect_track_eval(clean_dir, tmp_path, capsys):
    det = tmp_path / "det.csv"
    gt = str(clean_dir / "ground_truth.csv")
    assert main(["detect", str(clean_dir / "frames"), str(det), "--oracle-classifier", gt,
                 "--homographies", str(clean_dir / "homographies.txt")]) == 0
    dets = read_detections(det)
    assert sorted(dets) == list(range(3, 12))
    assert all(len(v) == 5 for v in dets.values())
    meta = json.loads((tmp_path / "det.meta.json").read_text())
    assert (meta["first_frame"], meta["last_frame"]) == (3, 11)

    capsys.readouterr()
    assert main(["eval", "detection", str(det), gt]) == 0
    assert "precision=1.000000" in capsys.readouterr().out.splitlines()
    assert main(["eval", "detection", str(det), gt, "--out", str(tmp_path / "rep.txt")]) == 0
    rep = dict(line.split("=", 1) for line in (tmp_path / "rep.txt").read_text().splitlines() if line.strip())
    assert float(rep["precision"]) == 1.0 and float(rep["recall"]) == 1.0

    trk = tmp_path / "trk.csv"
    assert main(["track", str(det), str(tmp_path / "det.homographies.txt"), str(trk)]) == 0
    assert read_tracks(trk)
    assert main(["eval", "tracking", str(trk), gt]) == 0


def test_empty_detections_give_empty_tracks(tmp_path):
    (tmp_path / "d.csv").write_text("frame,x,y,score,source,bbox_poly\n")
    (tmp_path / "h.txt").write_text("")
    assert main(["track", str(tmp_path / "d.csv"), str(tmp_path / "h.txt"), str(tmp_path / "t.csv")]) == 0
    assert read_tracks(tmp_path / "t.csv") == []


def test_usage_errors(capsys):
    assert main([]) == 1
    assert "kind=usage" in _error_line(capsys)
    assert main(["detect"]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["synth", "out"]) == 1  # no spec and no preset


def test_detect_needs_weights(clean_dir, tmp_path, capsys):
    assert main(["detect", str(clean_dir / "frames"), str(tmp_path / "d.csv")]) == 1
    assert main(["detect", str(clean_dir / "frames"), str(tmp_path / "d.csv"), "--threads", "0",
                 "--oracle-classifier", str(clean_dir / "ground_truth.csv")]) == 1


def test_data_errors(tmp_path, capsys):
    assert main(["eval", "detection", str(tmp_path / "nope.csv"), str(tmp_path / "gt.csv")]) == 2
    assert "kind=data" in _error_line(capsys)
    (tmp_path / "bad.wtz").write_bytes(b"garbage")
    (tmp_path / "v").mkdir()
    assert main(["detect", str(tmp_path / "v"), str(tmp_path / "d.csv"), "--classifier", str(tmp_path / "bad.wtz"),
                 "--regressor", str(tmp_path / "bad.wtz")]) == 2
    (tmp_path / "c.ini").write_text("[oops]\n")
    assert main(["track", str(tmp_path / "d.csv"), str(tmp_path / "h.txt"), str(tmp_path / "t.csv"),
                 "--config", str(tmp_path / "c.ini")]) == 2


def test_numerical_error_exit_code(tmp_path, capsys):
    (tmp_path / "d.csv").write_text("frame,x,y,score,source,bbox_poly\n0,5,5,0.9,direct,\n1,6,5,0.9,direct,\n")
    (tmp_path / "h.txt").write_text("1 0 0 0 1 0 0 0 1\n0 0 0 0 0 0 0 0 0\n")
    assert main(["track", str(tmp_path / "d.csv"), str(tmp_path / "h.txt"), str(tmp_path / "t.csv")]) == 3
    assert "kind=numerical" in _error_line(capsys)


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "wamitrack.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "0.1.0" in r.stdout
