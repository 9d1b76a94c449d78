from __future__ import annotations

import json

import numpy as np
import pytest

from wamitrack.registration import apply_h
from wamitrack.synth import (
    PRESETS,
    Camera,
    SceneSpec,
    SpecError,
    Vehicle,
    load_spec,
    preset,
    read_ground_truth,
    render_video,
    write_ground_truth,
)


def _small(**kw):
    base = dict(width=64, height=64, frames=6, margin=16, seed=3,
                vehicles=[Vehicle(id=1, path=[[20, 40], [80, 40]], speeds=[[0, 2.0]], loop=False)])
    base.update(kw)
    return SceneSpec(**base)


def test_all_presets_validate():
    for name in PRESETS:
        spec = preset(name).validate()
        assert spec.frames >= 30


def test_unknown_preset():
    with pytest.raises(SpecError):
        preset("nope")


def test_render_is_deterministic():
    a, b = render_video(_small()), render_video(_small())
    assert all(np.array_equal(x.pixels, y.pixels) for x, y in zip(a.frames, b.frames))
    assert a.ground_truth == b.ground_truth
    c = render_video(_small(seed=4))
    assert not np.array_equal(a.frames[0].pixels, c.frames[0].pixels)


def test_frames_are_8bit_range():
    out = render_video(_small())
    for f in out.frames:
        assert f.pixels.min() >= 0 and f.pixels.max() <= 255
        assert np.array_equal(f.pixels, np.round(f.pixels))
        assert f.pixels.shape == (64, 64)


def test_ground_truth_follows_camera():
    spec = _small(camera=Camera(drift=[0.7, -0.4], rotate_deg=0.3))
    out = render_video(spec)
    for r in out.ground_truth:
        world_px = np.array([r.world_x, r.world_y]) / spec.gsd
        np.testing.assert_allclose(apply_h(out.world_to_frame[r.frame], world_px), [r.x, r.y], atol=1e-6)


def test_sidecar_composes_world_poses():
    out = render_video(_small(camera=Camera(drift=[0.5, 0.2], rotate_deg=0.2, jitter=1.0)))
    np.testing.assert_allclose(out.homographies[0], np.eye(3))
    for t in range(1, len(out.frames)):
        want = out.world_to_frame[t] @ np.linalg.inv(out.world_to_frame[t - 1])
        np.testing.assert_allclose(out.homographies[t], want / want[2, 2], atol=1e-9)


def test_vehicle_speed_and_displacement():
    out = render_video(_small())
    rows = sorted(out.ground_truth, key=lambda r: r.frame)
    assert all(r.displacement_m == pytest.approx(2.0, abs=1e-9) for r in rows)
    # static camera: 2 m/frame at 0.25 m/px is 8 px/frame
    assert rows[1].x - rows[0].x == pytest.approx(8.0)


def test_vehicle_pixels_are_drawn():
    out = render_video(_small(noise_sigma=0.0))
    r = [g for g in out.ground_truth if g.frame == 2][0]
    assert out.frames[2].pixels[int(round(r.y)), int(round(r.x))] > 180


def test_stopgo_has_stationary_rows():
    out = render_video(preset("stopgo"))
    assert any(r.displacement_m < 0.8 for r in out.ground_truth)
    assert any(r.displacement_m >= 0.8 for r in out.ground_truth)


def test_merged_pairs_are_eight_pixels_apart():
    out = render_video(preset("merged"))
    by = {(r.frame, r.id): r for r in out.ground_truth}
    for (f, i), r in by.items():
        if i % 2 == 1 and (f, i + 1) in by:
            o = by[(f, i + 1)]
            assert np.hypot(r.x - o.x, r.y - o.y) == pytest.approx(8.0, abs=0.3)


@pytest.mark.parametrize("bad", [
    dict(width=10),
    dict(frames=0),
    dict(gsd=0),
    dict(vehicles=[Vehicle(id=1, path=[[0, 0]])]),
    dict(vehicles=[Vehicle(id=1, path=[[0, 0], [5000, 0]])]),
    dict(vehicles=[Vehicle(id=1, path=[[1, 1], [9, 9]]), Vehicle(id=1, path=[[1, 1], [9, 9]])]),
    dict(vehicles=[Vehicle(id=1, path=[[1, 1], [9, 9]], speeds=[[0, -1]])]),
])
def test_invalid_specs(bad):
    with pytest.raises(SpecError):
        _small(**bad).validate()


def test_spec_dict_round_trip_and_unknown_keys(tmp_path):
    spec = preset("dense")
    assert SceneSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(SpecError):
        SceneSpec.from_dict({**spec.to_dict(), "colour": 3})
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"preset": "clean", "frames": 12}))
    s = load_spec(p)
    assert s.frames == 12 and len(s.vehicles) == 5


def test_ground_truth_csv_round_trip(tmp_path):
    out = render_video(_small())
    write_ground_truth(tmp_path / "gt.csv", out.ground_truth)
    back = read_ground_truth(tmp_path / "gt.csv")
    assert [(r.frame, r.id) for r in back] == [(r.frame, r.id) for r in out.ground_truth]
    assert max(abs(a.x - b.x) for a, b in zip(back, out.ground_truth)) < 1e-4
    (tmp_path / "bad.csv").write_text("frame,id\n1,2\n")
    with pytest.raises(ValueError):
        read_ground_truth(tmp_path / "bad.csv")


def test_ground_truth_without_world_columns(tmp_path):
    (tmp_path / "gt.csv").write_text("frame,id,x,y\n0,1,5,6\n")
    r = read_ground_truth(tmp_path / "gt.csv")[0]
    assert np.isnan(r.world_x) and (r.x, r.y) == (5.0, 6.0)
