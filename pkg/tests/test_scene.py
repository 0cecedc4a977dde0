"""Tests for the digital twin, depth rendering, corruption and datasets."""

import math

import numpy as np
import pytest

from src.config import CameraConfig, CorruptionConfig, SceneConfig, ToolkitConfig, ViewpointConfig
from src.errors import RejectionExhausted, UnknownRegime
from src.geometry.se3 import Pose, apply, exp_map, look_at, so3_exp
from src.scene.camera import CameraModel, corrupt_cloud, render_depth_cloud, sample_viewpoints
from src.scene.dataset import generate_dataset
from src.scene.io import read_dataset, read_ply, read_twin, write_dataset, write_ply, write_twin
from src.scene.primitives import Primitive
from src.scene.twin import DigitalTwin, Regime, build_mockup_scene, partition_target, sample_surface


def open_space_twin() -> DigitalTwin:
    """One far-away box and a single regime at the origin, so nothing is rejected."""
    box = Primitive("box", Pose(np.eye(3), np.array([50.0, 50.0, 50.0])), (0.1, 0.1, 0.1))
    regime = Regime(
        id=0,
        name="open",
        anchor_pose=Pose.identity(),
        camera_offset=np.array([0.0, -1.2, 0.0]),
        crop_radius=1.0,
        target_cloud=np.zeros((1, 3)),
    )
    return DigitalTwin(primitives=(box,), regimes=(regime,))


def small_camera(pose: Pose, noise: float = 0.0) -> CameraModel:
    return CameraModel(width=32, height=24, fx=28.0, fy=28.0, cx=15.5, cy=11.5, pose=pose, depth_noise_sigma=noise)


class TestMockupScene:
    def test_four_regimes_and_primitive_mix(self, twin):
        assert [r.id for r in twin.regimes] == [0, 1, 2, 3]
        kinds = [p.kind for p in twin.primitives]
        assert kinds.count("cylinder") >= 3
        assert kinds.count("box") == 1
        assert kinds.count("ring") == 1

    def test_deterministic(self):
        config = SceneConfig(surface_density=300.0)
        a = build_mockup_scene(3, config)
        b = build_mockup_scene(3, config)
        assert np.array_equal(a.cloud, b.cloud)
        for ra, rb in zip(a.regimes, b.regimes):
            assert np.array_equal(ra.target_cloud, rb.target_cloud)

    def test_target_clouds_differ(self, twin):
        clouds = [r.target_cloud for r in twin.regimes]
        for i in range(len(clouds)):
            for j in range(i + 1, len(clouds)):
                assert clouds[i].shape != clouds[j].shape or not np.array_equal(clouds[i], clouds[j])

    def test_unknown_regime(self, twin):
        with pytest.raises(UnknownRegime):
            twin.regime(7)
        with pytest.raises(UnknownRegime):
            partition_target(twin, -1)


class TestSurfaceSampling:
    def test_cylinder_lateral_count_and_surface_residual(self):
        cylinder = Primitive("cylinder", Pose.identity(), (1.0, 1.0))
        points = sample_surface(DigitalTwin(primitives=(cylinder,)), 100.0, seed=0)
        assert len(points) == round(100.0 * 2.0 * math.pi)
        assert np.allclose(np.hypot(points[:, 0], points[:, 1]), 1.0, atol=1e-9)
        assert np.all(np.abs(points[:, 2]) <= 0.5)

    def test_points_lie_on_surfaces(self, twin):
        assert np.max(twin.distance(twin.cloud)) < 1e-9

    def test_expected_count(self, twin):
        area = sum(p.area() for p in twin.primitives)
        assert abs(len(twin.cloud) - 1000.0 * area) <= 0.1 * 1000.0 * area

    def test_empty_twin(self):
        assert sample_surface(DigitalTwin(primitives=()), 100.0).shape == (0, 3)


class TestPartition:
    def test_points_within_radius(self, twin):
        for regime in twin.regimes:
            target = partition_target(twin, regime.id)
            assert len(target) > 0
            assert np.all(np.linalg.norm(target - regime.anchor, axis=1) <= regime.crop_radius)

    def test_infinite_radius_is_full_cloud(self, twin):
        assert np.array_equal(partition_target(twin, 0, crop_radius=math.inf), twin.cloud)

    def test_zero_radius_violates_regime_invariant(self, twin):
        assert len(partition_target(twin, 0, crop_radius=0.0)) == 0
        with pytest.raises(ValueError):
            Regime(0, "empty", Pose.identity(), np.zeros(3), 0.0, np.zeros((0, 3)))


class TestViewpoints:
    def test_clearance(self, twin):
        regime = twin.regime(0)
        poses = sample_viewpoints(twin, regime, 100, seed=0)
        assert len(poses) == 100
        distances = twin.distance(np.array([p.translation for p in poses]))
        assert np.all(distances >= 0.7)

    def test_exact_look_at_without_perturbation(self):
        twin = open_space_twin()
        regime = twin.regime(0)
        config = ViewpointConfig(position_std=0.0, rotation_perturbation=0.0, translation_perturbation=0.0)
        (pose,) = sample_viewpoints(twin, regime, 1, seed=0, config=config)
        expected = look_at(regime.nominal_camera, regime.anchor)
        assert np.allclose(pose.matrix(), expected.matrix(), atol=1e-12)

    def test_position_std(self):
        twin = open_space_twin()
        config = ViewpointConfig(translation_perturbation=0.0)
        poses = sample_viewpoints(twin, twin.regime(0), 10_000, seed=1, config=config)
        positions = np.array([p.translation for p in poses])
        std = positions.std(axis=0)
        assert np.all(np.abs(std - 0.2) <= 0.05 * 0.2)

    def test_deterministic(self, twin):
        a = sample_viewpoints(twin, twin.regime(1), 5, seed=4)
        b = sample_viewpoints(twin, twin.regime(1), 5, seed=4)
        assert all(np.array_equal(p.matrix(), q.matrix()) for p, q in zip(a, b))

    def test_rejection_exhausted(self, twin):
        config = ViewpointConfig(min_clearance=50.0, attempts_per_view=3)
        with pytest.raises(RejectionExhausted):
            sample_viewpoints(twin, twin.regime(0), 2, seed=0, config=config)


class TestRendering:
    def test_facing_away_is_empty(self):
        box = Primitive("box", Pose(np.eye(3), np.array([0.0, 0.0, 3.0])), (1.0, 1.0, 1.0))
        backwards = Pose(np.diag([1.0, -1.0, -1.0]), np.zeros(3))
        cloud = render_depth_cloud(DigitalTwin(primitives=(box,)), small_camera(backwards))
        assert cloud.shape == (0, 3)

    def test_plane_at_depth_two(self):
        wall = Primitive("box", Pose(np.eye(3), np.array([0.0, 0.0, 2.5])), (100.0, 100.0, 1.0))
        cloud = render_depth_cloud(DigitalTwin(primitives=(wall,)), small_camera(Pose.identity()))
        assert len(cloud) == 32 * 24
        assert np.allclose(cloud[:, 2], 2.0, atol=1e-9)

    def test_cylinder_hits_match_sphere_marching(self):
        cylinder = Primitive("cylinder", Pose(so3_exp([0.3, -0.2, 0.1]), np.array([0.1, 0.2, 0.0])), (0.5, 2.0))
        rng = np.random.default_rng(0)
        # rays cross the tube roughly perpendicular to its axis
        origins = np.column_stack([rng.uniform(-0.3, 0.3, 50), np.full(50, -3.0), rng.uniform(-0.3, 0.3, 50)])
        targets = cylinder.pose.translation + rng.uniform(-0.2, 0.2, (50, 3))
        directions = targets - origins
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        t_analytic = cylinder.intersect(origins, directions)
        for o, d, t in zip(origins, directions, t_analytic):
            s = 0.0
            for _ in range(10_000):
                step = float(cylinder.distance(o + s * d)[0])
                if step < 1e-10:
                    break
                s += step
            assert math.isfinite(t)
            assert abs(s - t) < 1e-6

    def test_noise_is_along_rays(self):
        wall = Primitive("box", Pose(np.eye(3), np.array([0.0, 0.0, 2.5])), (100.0, 100.0, 1.0))
        twin = DigitalTwin(primitives=(wall,))
        clean = render_depth_cloud(twin, small_camera(Pose.identity()))
        noisy = render_depth_cloud(twin, small_camera(Pose.identity(), noise=0.01), seed=3)
        ranges_clean = np.linalg.norm(clean, axis=1)
        ranges_noisy = np.linalg.norm(noisy, axis=1)
        directions = noisy / ranges_noisy[:, None]
        assert np.allclose(directions, clean / ranges_clean[:, None], atol=1e-9)
        assert 0.005 < np.std(ranges_noisy - ranges_clean) < 0.02


class TestCorruption:
    def test_severity_zero_is_identity(self):
        points = np.random.default_rng(0).normal(size=(100, 3))
        assert np.array_equal(corrupt_cloud(points, 0.0, seed=1), points)

    def test_severity_one_bounds(self):
        points = np.zeros((20_000, 3))
        for seed in range(5):
            out = corrupt_cloud(points, 1.0, seed=seed)
            bias = out.mean(axis=0)
            assert np.linalg.norm(bias) <= 0.25 * math.sqrt(3.0)
            assert np.linalg.norm(bias) <= 0.25 + 0.02
            assert np.max(out.var(axis=0)) <= 0.5 * 1.1

    def test_floor_makes_every_draw_a_stress_test(self):
        points = np.zeros((20_000, 3))
        out = corrupt_cloud(points, 1.0, seed=2, config=CorruptionConfig(floor=0.5))
        assert np.min(out.var(axis=0)) >= 0.25 * 0.9

    def test_reproducible(self):
        points = np.random.default_rng(1).normal(size=(50, 3))
        assert np.array_equal(corrupt_cloud(points, 0.7, seed=9), corrupt_cloud(points, 0.7, seed=9))

    def test_severity_out_of_range(self):
        with pytest.raises(ValueError):
            corrupt_cloud(np.zeros((3, 3)), 1.5)


class TestDataset:
    @pytest.fixture(scope="class")
    def dataset_config(self):
        return ToolkitConfig(
            scene=SceneConfig(surface_density=1000.0),
            camera=CameraConfig(width=40, height=30, fx=35.0, fy=35.0, depth_noise_sigma=0.0),
        )

    def test_split_sizes_and_disjointness(self, twin, dataset_config):
        dataset = generate_dataset(twin, 0, dataset_config, n_views=20, split=0.8)
        assert (len(dataset.train), len(dataset.test)) == (16, 4)
        train_idx = {s.index for s in dataset.train}
        test_idx = {s.index for s in dataset.test}
        assert not train_idx & test_idx
        assert train_idx | test_idx == set(range(20))

    def test_labels_align_source_with_twin(self, twin, dataset_config):
        dataset = generate_dataset(twin, 2, dataset_config, n_views=6, split=0.5)
        for sample in dataset.train + dataset.test:
            assert len(sample.source) > 0
            aligned = apply(exp_map(sample.label), sample.source)
            assert np.max(twin.distance(aligned)) < 1e-6

    def test_deterministic(self, twin, dataset_config):
        a = generate_dataset(twin, 1, dataset_config, n_views=4, split=0.5)
        b = generate_dataset(twin, 1, dataset_config, n_views=4, split=0.5)
        for sa, sb in zip(a.train + a.test, b.train + b.test):
            assert np.array_equal(sa.source, sb.source)
            assert np.array_equal(sa.label.as_array(), sb.label.as_array())

    def test_directory_round_trip(self, twin, dataset_config, tmp_path):
        dataset = generate_dataset(twin, 3, dataset_config, n_views=5, split=0.6)
        out = write_dataset(tmp_path, dataset)
        assert (out / "meta.json").is_file()
        assert (out / "labels.jsonl").is_file()
        loaded = read_dataset(tmp_path, 3)
        assert [s.index for s in loaded.train] == [s.index for s in dataset.train]
        for original, again in zip(dataset.test, loaded.test):
            assert np.array_equal(original.source, again.source)
            assert np.array_equal(original.label.as_array(), again.label.as_array())

    def test_missing_dataset(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_dataset(tmp_path, 0)


class TestIO:
    def test_ply_is_exact(self, tmp_path):
        points = np.random.default_rng(0).normal(size=(10, 3))
        write_ply(tmp_path / "cloud.ply", points)
        assert np.array_equal(read_ply(tmp_path / "cloud.ply"), points)

    def test_twin_json(self, twin, tmp_path):
        write_twin(tmp_path / "twin.json", list(twin.primitives))
        primitives = read_twin(tmp_path / "twin.json")
        assert [p.to_dict() for p in primitives] == [p.to_dict() for p in twin.primitives]
