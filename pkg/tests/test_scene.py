import numpy as np
import pytest
import torch

from objsplat.fileio import (load_cameras, load_checkpoint, load_image_raw,
                             save_cameras, save_checkpoint, save_image_raw)
from objsplat.ply import read_point_cloud, read_ply, write_ply, write_point_cloud
from objsplat.render import DeformationField
from objsplat.scene import (BACKGROUND_ID, Camera, GaussianStore, GranularityLevel,
                            ObjectSet, SceneModel, TrackedMasks, look_at_camera,
                            validate_scene)

from conftest import random_store, simple_camera


def _clean_scene(rng, n=24):
    ids = np.zeros((n, 3), np.int64)
    ids[: n // 3] = (1, 2, 3)
    ids[n // 3: 2 * n // 3] = (1, 2, 4)
    store = random_store(rng, n, ids=ids)
    with torch.no_grad():
        store.rotations /= torch.linalg.norm(store.rotations, dim=1, keepdim=True)
    return SceneModel(store, [simple_camera()])


def test_fresh_scene_validates_clean(rng):
    scene = _clean_scene(rng)
    assert validate_scene(scene) == []
    # independent set-membership scan: every index in exactly one set per level
    for level in GranularityLevel:
        seen = np.zeros(len(scene.gaussians), dtype=int)
        for oset in scene.object_sets[level].values():
            seen[oset.gaussian_indices] += 1
        assert (seen == 1).all()


def test_validate_flags_unnormalized_quaternion(rng):
    scene = _clean_scene(rng)
    with torch.no_grad():
        scene.gaussians.rotations[0] = torch.tensor([2.0, 0, 0, 0])
    violations = validate_scene(scene)
    assert any("quaternion norm" in v for v in violations)


def test_validate_flags_overlapping_sets(rng):
    scene = _clean_scene(rng)
    level = GranularityLevel.SMALL
    extra = ObjectSet(99, level, scene.object_sets[level][3].gaussian_indices[:2])
    scene.object_sets[level][99] = extra
    violations = validate_scene(scene)
    assert any("overlapping sets at S" in v for v in violations)


def test_validate_flags_bad_camera(rng):
    scene = _clean_scene(rng)
    scene.cameras[0].fx = -1.0
    scene.cameras[0].rotation = np.eye(3) * 1.5
    scene.cameras[0].time = 3.0
    violations = validate_scene(scene)
    assert any("focal" in v for v in violations)
    assert any("orthonormal" in v for v in violations)
    assert any("time" in v for v in violations)


def test_validate_flags_inconsistent_small_parents(rng):
    scene = _clean_scene(rng)
    ids = scene.gaussians.object_ids.numpy()
    first = np.nonzero(ids[:, 2] == 3)[0][0]
    ids[first, 1] = 9  # one member of small set 3 claims another middle parent
    scene.gaussians.object_ids = torch.as_tensor(ids)
    scene.rebuild_object_sets()
    violations = validate_scene(scene)
    assert any("multiple middle parents" in v for v in violations)


def test_validate_flags_mask_object_without_set(rng):
    scene = _clean_scene(rng)
    masks = TrackedMasks(16, 16, 1)
    masks.record_first_seen(GranularityLevel.SMALL, 42, 0)
    scene.masks = masks
    violations = validate_scene(scene)
    assert any("no Gaussian set" in v for v in violations)
    masks.merges[GranularityLevel.SMALL][42] = 3
    assert validate_scene(scene) == []


def test_hierarchy_order():
    assert GranularityLevel.SMALL.order < GranularityLevel.MIDDLE.order
    assert GranularityLevel.MIDDLE.order < GranularityLevel.LARGE.order


# --------------------------------------------------------------------------- cameras

def test_camera_round_trip(tmp_path):
    cams = [look_at_camera([1, 2, -3], [0, 0, 0], fx=50, fy=52, width=64, height=48,
                           frame_index=4, time=0.25)]
    save_cameras(tmp_path / "cams.json", cams)
    loaded = load_cameras(tmp_path / "cams.json")
    assert loaded[0].fx == cams[0].fx
    assert loaded[0].frame_index == 4
    assert np.allclose(loaded[0].rotation, cams[0].rotation)


def test_look_at_camera_is_orthonormal():
    cam = look_at_camera([2, 1, -5], [0.2, -0.1, 0])
    assert np.abs(cam.rotation @ cam.rotation.T - np.eye(3)).max() < 1e-12
    pix, z = cam.project_points(np.array([[0.2, -0.1, 0.0]]))
    assert z[0] > 0
    assert pix[0] == pytest.approx([cam.cx, cam.cy], abs=1e-9)


# --------------------------------------------------------------------------- ply

def test_ply_binary_round_trip(tmp_path, rng):
    pts = rng.normal(0, 1, (17, 3))
    cols = rng.random((17, 3))
    write_point_cloud(tmp_path / "p.ply", pts, cols)
    rpts, rcols = read_point_cloud(tmp_path / "p.ply")
    assert rpts == pytest.approx(pts, abs=1e-6)
    assert np.abs(rcols - cols).max() <= 0.5 / 255 + 1e-9


def test_ply_ascii_reader(tmp_path):
    text = ("ply\nformat ascii 1.0\nelement vertex 2\n"
            "property float x\nproperty float y\nproperty float z\n"
            "property uchar red\nproperty uchar green\nproperty uchar blue\n"
            "end_header\n0.5 1.0 2.0 255 0 0\n-1.0 0.0 3.5 0 128 255\n")
    (tmp_path / "a.ply").write_text(text)
    pts, cols = read_point_cloud(tmp_path / "a.ply")
    assert pts[1] == pytest.approx([-1.0, 0.0, 3.5])
    assert cols[0] == pytest.approx([1.0, 0.0, 0.0])


def test_ply_empty_cloud_rejected(tmp_path):
    write_ply(tmp_path / "e.ply", [("x", "f4", np.zeros(0)), ("y", "f4", np.zeros(0)),
                                   ("z", "f4", np.zeros(0))])
    with pytest.raises(ValueError, match="empty"):
        read_point_cloud(tmp_path / "e.ply")


def test_ply_rejects_non_ply(tmp_path):
    (tmp_path / "x.ply").write_text("not a ply\n")
    with pytest.raises(ValueError):
        read_ply(tmp_path / "x.ply")


# --------------------------------------------------------------------------- images

def test_image_raw_round_trip(tmp_path, rng):
    img = rng.random((12, 10, 3)).astype(np.float32)
    save_image_raw(tmp_path / "i.npy", img)
    assert np.array_equal(load_image_raw(tmp_path / "i.npy"), img)
    planes = np.load(tmp_path / "i.npy")
    assert planes.shape == (3, 12, 10)  # planar layout


# --------------------------------------------------------------------------- checkpoints

def _scene_for_checkpoint(rng, with_deform=False, with_masks=False):
    scene = _clean_scene(rng)
    if with_deform:
        scene.deformation = DeformationField(hidden_layers=2, width=16, l_pos=2,
                                             l_time=1, seed=5).double()
    if with_masks:
        masks = TrackedMasks(16, 16, 1)
        masks.record_first_seen(GranularityLevel.SMALL, 3, 0)
        masks.record_first_seen(GranularityLevel.SMALL, 4, 0)
        masks.flag_partial(0, GranularityLevel.SMALL, 3)
        masks.merges[GranularityLevel.SMALL][9] = 3
        scene.masks = masks
    return scene


def test_checkpoint_round_trip(tmp_path, rng):
    scene = _scene_for_checkpoint(rng, with_deform=True, with_masks=True)
    save_checkpoint(tmp_path / "s.ckpt", scene, {"note": 1})
    loaded, config = load_checkpoint(tmp_path / "s.ckpt")
    assert config == {"note": 1}
    for a, b in zip(scene.gaussians.tensors(), loaded.gaussians.tensors()):
        assert torch.equal(a.detach(), b)
    for pa, pb in zip(scene.deformation.parameters(), loaded.deformation.parameters()):
        assert torch.equal(pa.detach(), pb)
    assert loaded.masks.is_partial(0, GranularityLevel.SMALL, 3)
    assert loaded.masks.resolve_id(GranularityLevel.SMALL, 9) == 3
    assert len(loaded.cameras) == len(scene.cameras)


def test_checkpoint_bytes_deterministic(tmp_path, rng):
    scene = _scene_for_checkpoint(rng, with_deform=True, with_masks=True)
    save_checkpoint(tmp_path / "a.ckpt", scene, {"k": [1, 2]})
    save_checkpoint(tmp_path / "b.ckpt", scene, {"k": [1, 2]})
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_checkpoint_bad_magic(tmp_path):
    (tmp_path / "x.ckpt").write_bytes(b"NOPE" + b"\0" * 16)
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(tmp_path / "x.ckpt")


def test_snapshot_is_detached(rng):
    scene = _clean_scene(rng)
    snap = scene.snapshot()
    with torch.no_grad():
        scene.gaussians.means += 1.0
    assert not torch.equal(snap.gaussians.means, scene.gaussians.means)
