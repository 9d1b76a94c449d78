from __future__ import annotations

import hashlib
import json
from pathlib import Path

import pytest

import training
from wamitrack.detector import Detector, NetworkClassifier, NetworkRegressor, calibrate_phi
from wamitrack.nn.serialize import read_weights, write_weights

ROOT = Path(__file__).resolve().parents[1]
_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_RESULTS] = {}


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, detail)`` records a pass/fail line for acceptance criterion ``n``."""
    results = request.config.stash[_RESULTS]

    def record(n: int, ok: bool, detail: str) -> bool:
        prev = results.get(n)
        results[n] = (bool(ok) and (prev is None or prev[0]), detail if prev is None else f"{prev[1]}; {detail}")
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def _source_key() -> str:
    h = hashlib.sha256()
    files = sorted((ROOT / "src" / "wamitrack").rglob("*.py")) + [ROOT / "tests" / "training.py"]
    for p in files:
        h.update(p.relative_to(ROOT).as_posix().encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


@pytest.fixture(scope="session")
def trained(request):
    """Trained classifier and regressor plus the calibrated threshold.

    Training takes tens of minutes on one core, so results are kept in the
    pytest cache and reused while the sources are unchanged.
    """
    cache = Path(request.config.cache.mkdir("wamitrack-nets")) / _source_key()
    meta_path = cache / "meta.json"
    if meta_path.is_file():
        meta = json.loads(meta_path.read_text())
        cls, reg = read_weights(cache / "classifier.wtz"), read_weights(cache / "regressor.wtz")
        meta["cached"] = True
        return cls, reg, meta
    cache.mkdir(parents=True, exist_ok=True)
    cls, acc, cls_s = training.train_classifier()
    reg, reg_s = training.train_regressor()
    val = training.render(*training.VALIDATION_SCENE)
    phi, _ = calibrate_phi(Detector(NetworkClassifier(cls), NetworkRegressor(reg)), val.frames,
                           val.ground_truth, val.homographies)
    write_weights(cache / "classifier.wtz", cls)
    write_weights(cache / "regressor.wtz", reg)
    meta = {"held_out_accuracy": acc, "classifier_seconds": cls_s, "regressor_seconds": reg_s, "phi": phi}
    meta_path.write_text(json.dumps(meta, indent=2) + "\n")
    meta["cached"] = False
    return cls, reg, meta
