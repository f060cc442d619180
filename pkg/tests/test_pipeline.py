import dataclasses
import filecmp
import hashlib
import json
import math
import os

import numpy as np
import pytest

from graspsynth import assets as A
from graspsynth import pipeline as P
from graspsynth import renderer as R
from conftest import toy_config


@pytest.fixture
def cfg(tmp_path):
    return toy_config(tmp_path)


class TestEnumerate:
    def test_small_product(self, tmp_path):
        c = toy_config(tmp_path, grasps=("grasp_01",), viewpoints=(0, 5), distances=(0.5,))
        specs = P.enumerate_frames(c)
        assert len(specs) == 4
        order = [(s.grasp_id, s.viewpoint_index, s.distance, s.background_index, s.glove_index) for s in specs]
        assert order == [("grasp_01", 0, 0.5, 0, 0), ("grasp_01", 0, 0.5, 1, 0),
                         ("grasp_01", 5, 0.5, 0, 0), ("grasp_01", 5, 0.5, 1, 0)]
        assert [s.frame_index for s in specs] == [0, 1, 2, 3]

    def test_loop_order(self, tmp_path):
        c = toy_config(tmp_path, grasps=("grasp_01", "grasp_08"), viewpoints=(1, 2, 3), n_backgrounds=2, gloves=2)
        specs = P.enumerate_frames(c)
        assert len(specs) == 2 * 3 * 2 * 2 * 2
        keys = [(s.grasp_slot, s.viewpoint_slot, c.distances.index(s.distance), s.background_index, s.glove_index)
                for s in specs]
        assert keys == sorted(keys)

    def test_deterministic(self, cfg):
        assert P.enumerate_frames(cfg) == P.enumerate_frames(cfg)

    def test_seed_changes_lights_only(self, cfg):
        a = P.enumerate_frames(cfg)
        b = P.enumerate_frames(dataclasses.replace(cfg, global_seed=99))
        assert len(a) == len(b)
        assert [dataclasses.replace(s, lighting_seed=0) for s in a] == [dataclasses.replace(s, lighting_seed=0) for s in b]
        assert all(x.lighting_seed != y.lighting_seed for x, y in zip(a, b))

    def test_lighting_seed_definition(self):
        h = hashlib.blake2b(b"7:42", digest_size=8).digest()
        assert P.lighting_seed(7, 42) == int.from_bytes(h, "big") & (2**63 - 1)
        assert P.lighting_seed(7, 42) != P.lighting_seed(7, 43)

    def test_empty_factor(self, cfg):
        with pytest.raises(P.ConfigError, match="distances|glove"):
            P.enumerate_frames(dataclasses.replace(cfg, glove_colors=()))
        with pytest.raises(P.ConfigError, match="backgrounds"):
            P.enumerate_frames(dataclasses.replace(cfg, backgrounds=()))

    def test_explicit_viewpoints(self, cfg):
        c = dataclasses.replace(cfg, explicit_viewpoints=((0.3, 0.1), (1.0, 2.0), (2.0, 4.0)))
        assert P.factor_counts(c)["viewpoints"] == 3

    def test_unknown_viewpoint_index(self, cfg):
        with pytest.raises(P.ConfigError):
            P.enumerate_frames(dataclasses.replace(cfg, viewpoint_indices=(200,)))


class TestSplit:
    def test_full_scale_counts(self):
        frames = [{"frame_index": i, "grasp_id": f"grasp_{i // 2880 + 1:02d}"} for i in range(11 * 2880)]
        s = P.split_dataset(frames, P.DEFAULT_SPLIT)
        assert {k: len(v) for k, v in s.items()} == {"train": 20160, "val": 5760, "test": 5760}
        for name in P.SPLITS:
            n_grasps = sum(1 for v in P.DEFAULT_SPLIT.values() if v == name)
            assert len(s[name]) == 2880 * n_grasps

    def test_single_grasp_all_train(self):
        frames = [{"frame_index": i, "grasp_id": "g"} for i in range(5)]
        assert P.split_dataset(frames, {"g": "train"}) == {"train": [0, 1, 2, 3, 4], "val": [], "test": []}

    def test_unassigned(self):
        with pytest.raises(P.ConfigError, match="grasp 'h'"):
            P.split_dataset([{"frame_index": 0, "grasp_id": "h"}], {"g": "train"})

    def test_config_requires_full_cover(self, cfg):
        with pytest.raises(P.ConfigError):
            P.build_manifest(dataclasses.replace(cfg, split={"grasp_01": "train"}), P.enumerate_frames(cfg))
        with pytest.raises(P.ConfigError):
            dataclasses.replace(cfg, split={"grasp_01": "holdout", "grasp_08": "val"})


class TestAssemble:
    @pytest.fixture
    def assets(self, cfg):
        return P.SceneAssets(cfg)

    def test_pole_camera_above_centroid(self, tmp_path, rig):
        g = A.GraspPose.rest(rig.n_joints, "rest")
        gp = tmp_path / "rest.json"
        A.save_grasp(g, gp)
        c = dataclasses.replace(toy_config(tmp_path), grasp_files=(str(gp),), split={"rest": "train"},
                                viewpoint_indices=(82,), distances=(0.8,))
        assets = P.SceneAssets(c)
        spec = P.enumerate_frames(c)[0]
        scene, cam, rec = P.assemble_scene(spec, c, assets)
        hand, _, _ = assets.posed_hand("rest")
        centroid = hand.vertices.mean(axis=0)
        np.testing.assert_allclose(cam.position, centroid + [0, 0, 0.8], atol=1e-12)
        assert P.reprojection_error(rec) <= 1e-6

    def test_probe_at_origin(self, cfg, assets):
        spec = P.enumerate_frames(cfg)[0]
        scene, cam, rec = P.assemble_scene(spec, cfg, assets)
        assert rec.probe_translation.tolist() == [0.0, 0.0, -A.DEFAULT_Z_OFFSET]
        g = assets.grasps[spec.grasp_id]
        np.testing.assert_allclose(rec.probe_rotation, A.euler_matrix_deg(g.probe_euler_deg))
        labels = [o.mesh.label for o in scene.objects]
        assert labels == ["hand", "arm", "probe"]
        assert scene.objects[0].color == cfg.glove_colors[spec.glove_index]

    def test_seeded_repeatable(self, cfg, assets):
        spec = P.enumerate_frames(cfg)[5]
        a = P.assemble_scene(spec, cfg, assets)
        b = P.assemble_scene(spec, cfg, P.SceneAssets(cfg))
        assert a[0].lights == b[0].lights
        assert json.dumps(a[2].to_dict()) == json.dumps(b[2].to_dict())

    def test_lights(self, cfg, assets):
        counts = set()
        for spec in P.enumerate_frames(cfg):
            scene, cam, rec = P.assemble_scene(spec, cfg, assets)
            hand, _, _ = assets.posed_hand(spec.grasp_id)
            c = hand.vertices.mean(axis=0)
            counts.add(len(scene.lights))
            for light in scene.lights:
                assert 0.5 <= light.intensity <= 1.5
                assert (np.asarray(light.position) - c) @ (cam.position - c) >= 0
        assert counts <= {1, 2, 3} and len(counts) > 1

    def test_distances_rigidly_related(self, cfg, assets):
        specs = P.enumerate_frames(cfg)
        near = next(s for s in specs if s.distance == 0.5)
        far = next(s for s in specs if s.distance == 0.8 and s.viewpoint_index == near.viewpoint_index
                   and s.grasp_id == near.grasp_id)
        _, cam_n, rec_n = P.assemble_scene(near, cfg, assets)
        _, cam_f, rec_f = P.assemble_scene(far, cfg, assets)
        np.testing.assert_allclose(cam_n.rotation, cam_f.rotation, atol=1e-14)
        to_world = lambda rec: (rec.hand_joints_3d - rec.translation) @ rec.rotation  # noqa: E731
        np.testing.assert_allclose(to_world(rec_n), to_world(rec_f), atol=1e-12)
        assert not np.allclose(rec_n.hand_joints_3d, rec_f.hand_joints_3d)

    def test_annotation_roundtrip(self, cfg, assets):
        _, _, rec = P.assemble_scene(P.enumerate_frames(cfg)[3], cfg, assets)
        again = P.AnnotationRecord.from_dict(json.loads(json.dumps(rec.to_dict())))
        assert np.array_equal(again.hand_joints_2d, rec.hand_joints_2d)
        assert np.array_equal(again.intrinsics, rec.intrinsics)
        assert P.reprojection_error(again) == 0.0
        assert np.all(again.hand_joints_3d[:, 2] > 0) and np.all(again.object_corners_3d[:, 2] > 0)


class TestConfig:
    def test_roundtrip_and_relative_paths(self, tmp_path, cfg):
        d = P.config_to_dict(cfg)
        d["backgrounds"] = ["backgrounds/background_0.png", "color:0.1,0.2,0.3"]
        (tmp_path / "c.json").write_text(json.dumps(d))
        loaded = P.load_config(tmp_path / "c.json")
        assert loaded.backgrounds[0] == str((tmp_path / "backgrounds/background_0.png").resolve())
        assert loaded.backgrounds[1] == "color:0.1,0.2,0.3"
        assert loaded.grasp_files == cfg.grasp_files and loaded.split == cfg.split

    def test_missing_field(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"format_version": P.CONFIG_FORMAT}))
        with pytest.raises(P.ConfigError, match="grasp_files"):
            P.load_config(tmp_path / "c.json")

    def test_bad_version_and_json(self, tmp_path):
        (tmp_path / "a.json").write_text("{}")
        (tmp_path / "b.json").write_text("{nope")
        with pytest.raises(P.ConfigError):
            P.load_config(tmp_path / "a.json")
        with pytest.raises(P.ConfigError):
            P.load_config(tmp_path / "b.json")
        with pytest.raises(FileNotFoundError):
            P.load_config(tmp_path / "missing.json")

    def test_bad_colors(self, cfg):
        with pytest.raises(P.ConfigError):
            dataclasses.replace(cfg, glove_colors=((1.2, 0, 0),))
        with pytest.raises(P.ConfigError):
            dataclasses.replace(cfg, distances=(0.5, -1.0))

    def test_missing_background(self, cfg):
        with pytest.raises(FileNotFoundError):
            P.SceneAssets(dataclasses.replace(cfg, backgrounds=("/nonexistent/bg.png",)))

    def test_output_dir_override(self, cfg, tmp_path, monkeypatch):
        monkeypatch.setenv(P.OUTPUT_ENV, str(tmp_path / "env"))
        assert P.resolve_output_dir(dataclasses.replace(cfg, output_dir="/x")) == tmp_path / "env"
        assert P.resolve_output_dir(cfg, tmp_path / "arg") == tmp_path / "arg"
        monkeypatch.delenv(P.OUTPUT_ENV)
        with pytest.raises(P.ConfigError):
            P.resolve_output_dir(cfg)


class TestGenerate:
    def test_layout(self, toy_dataset):
        cfg, root, manifest = toy_dataset
        assert manifest.frame_count == 16
        assert manifest.split_counts() == {"train": 8, "val": 8, "test": 0}
        on_disk = P.load_manifest(root)
        assert on_disk.to_dict() == json.loads(json.dumps(manifest.to_dict()))
        dirs = sorted(p.name for p in (root / "frames").iterdir())
        assert dirs == [f"frame_{i:06d}" for i in range(16)]
        for e in manifest.frames:
            files = sorted(os.listdir(root / e["path"]))
            assert files == sorted(list(R.PASS_FILES.values()) + [P.ANNOTATION_NAME])

    def test_annotations_on_disk(self, toy_dataset):
        _, root, manifest = toy_dataset
        for e in manifest.frames:
            rec = P.load_annotation(root, e)
            assert rec.frame_index == e["frame_index"]
            assert P.reprojection_error(rec) <= 1e-6

    def test_regenerate_single_frame(self, toy_dataset, tmp_path):
        cfg, root, _ = toy_dataset
        P.generate_frame(cfg, 11, tmp_path)
        d = "frames/frame_000011"
        names = sorted(os.listdir(root / d))
        match, mismatch, errors = filecmp.cmpfiles(root / d, tmp_path / d, names, shallow=False)
        assert match == names and not mismatch and not errors
        with pytest.raises(IndexError):
            P.generate_frame(cfg, 16, tmp_path)

    def test_failure_names_frame_and_leaves_no_manifest(self, tmp_path, rig):
        c = toy_config(tmp_path)
        bad = A.GraspPose("broken", np.zeros(3), np.zeros((rig.n_joints - 1, 3)), np.zeros(3))
        A.save_grasp(bad, tmp_path / "broken.json")
        c = dataclasses.replace(c, grasp_files=c.grasp_files[:1] + (str(tmp_path / "broken.json"),),
                                split={"grasp_01": "train", "broken": "test"})
        out = tmp_path / "out"
        out.mkdir()
        (out / P.MANIFEST_NAME).write_text("{}")  # stale manifest from an older run
        with pytest.raises(P.FrameGenerationError) as exc:
            P.generate_dataset(c, jobs=1, out_dir=out)
        assert exc.value.frame_index == 8
        assert not (out / P.MANIFEST_NAME).exists()
        with pytest.raises(FileNotFoundError, match="incomplete"):
            P.load_manifest(out)

    def test_failure_in_worker(self, tmp_path, rig):
        c = toy_config(tmp_path, grasps=("grasp_01",))
        bad = A.GraspPose("broken", np.zeros(3), np.zeros((rig.n_joints - 1, 3)), np.zeros(3))
        A.save_grasp(bad, tmp_path / "broken.json")
        c = dataclasses.replace(c, grasp_files=(str(tmp_path / "broken.json"),), split={"broken": "test"})
        with pytest.raises(P.FrameGenerationError) as exc:
            P.generate_dataset(c, jobs=2, out_dir=tmp_path / "out")
        assert exc.value.frame_index == 0

    def test_unassigned_grasp_fails_before_rendering(self, cfg, tmp_path):
        c = dataclasses.replace(cfg, split={"grasp_01": "train"})
        with pytest.raises(P.ConfigError):
            P.generate_dataset(c, out_dir=tmp_path / "o")
        assert not (tmp_path / "o").exists()


def test_demo_backgrounds(tmp_path):
    paths = P.write_demo_backgrounds(tmp_path, (40, 30))
    assert len(paths) == 8
    again = P.write_demo_backgrounds(tmp_path / "b", (40, 30))
    for a, b in zip(paths, again):
        assert filecmp.cmp(a, b, shallow=False)
    assert R.read_pass(paths[3]).shape == (30, 40, 3)


def test_demo_config(tmp_path):
    c = P.demo_config(tmp_path)
    assert len(P.enumerate_frames(c)) == 11 * 84 * 2 * 8 * 2
    assert sorted(P.DEFAULT_SPLIT.values()).count("train") == 7
    assert math.isclose(c.z_offset, A.DEFAULT_Z_OFFSET)
