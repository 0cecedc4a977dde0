"""Tests for preprocessing, FPFH, matching and the registration baselines."""

import math

import numpy as np
import pytest

from src.config import RegistrationConfig
from src.errors import DegenerateConfiguration, DegenerateNeighborhood, UnknownRegime
from src.geometry.se3 import LieVector, Pose, apply, compose, exp_map, geodesic_error, inverse, so3_exp
from src.registration.features import (
    compute_fpfh,
    estimate_normals,
    match_features,
    prepare_feature_cloud,
    voxel_downsample,
)
from src.registration.global_registration import fast_register, fgr_optimize, ransac_register
from src.registration.icp import evaluate_registration, icp_refine
from src.registration.partitioned import partitioned_register, prepare_target, register_to_target
from src.registration.procrustes import procrustes_weighted, weighted_residual
from src.registration.types import CorrespondenceSet, FeatureCloud, RegistrationResult

CONFIG = RegistrationConfig(voxel_size=0.05)
KNOWN = exp_map(LieVector([0.2, -0.3, 0.4], [0.3, -0.1, 0.2]))


def transformed(fc: FeatureCloud, pose: Pose) -> FeatureCloud:
    """The same feature cloud moved rigidly; descriptors are carried over."""
    return FeatureCloud(apply(pose, fc.points), fc.normals @ pose.rotation.T, fc.descriptors)


@pytest.fixture(scope="module")
def target_features(twin):
    return prepare_feature_cloud(twin.regime(0).target_cloud, CONFIG, viewpoint=twin.regime(0).nominal_camera)


class TestVoxelDownsample:
    def test_large_voxel_gives_centroid(self):
        points = np.random.default_rng(0).uniform(0.0, 1.0, (50, 3))
        down = voxel_downsample(points, 10.0)
        assert down.shape == (1, 3)
        assert np.allclose(down[0], points.mean(axis=0))

    def test_distinct_voxels_preserved(self):
        points = np.array([[0.1, 0.1, 0.1], [2.1, 0.1, 0.1]])
        assert len(voxel_downsample(points, 1.0)) == 2

    def test_unit_cube_corners(self):
        corners = np.array([[x, y, z] for x in (0.0, 1.0) for y in (0.0, 1.0) for z in (0.0, 1.0)])
        down = voxel_downsample(corners, 0.5)
        assert len(down) == 8
        assert {tuple(p) for p in down} == {tuple(p) for p in corners}

    def test_rejects_non_positive_voxel(self):
        with pytest.raises(ValueError):
            voxel_downsample(np.zeros((2, 3)), 0.0)


class TestNormals:
    def test_plane(self):
        g = np.linspace(-1.0, 1.0, 20)
        xx, yy = np.meshgrid(g, g)
        plane = np.column_stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)])
        normals = estimate_normals(plane, k=10, viewpoint=(0.0, 0.0, 1.0))
        assert np.allclose(normals, [0.0, 0.0, 1.0], atol=1e-9)

    def test_cylinder_normals_are_radial(self):
        rng = np.random.default_rng(1)
        theta = rng.uniform(0.0, 2.0 * math.pi, 4000)
        z = rng.uniform(-0.5, 0.5, 4000)
        points = np.column_stack([np.cos(theta), np.sin(theta), z])
        normals = estimate_normals(points, k=20, viewpoint=(0.0, 0.0, 0.0))
        radial = np.column_stack([np.cos(theta), np.sin(theta), np.zeros_like(theta)])
        cosines = np.abs(np.sum(normals * radial, axis=1))
        assert np.all(cosines >= math.cos(math.radians(5.0)))

    def test_oriented_toward_viewpoint(self, twin):
        cloud = voxel_downsample(twin.regime(1).target_cloud, 0.05)
        normals = estimate_normals(cloud, k=20)
        assert np.all(np.sum(normals * cloud, axis=1) <= 1e-12)

    def test_degenerate_neighborhood(self):
        line = np.column_stack([np.linspace(0.0, 1.0, 30), np.zeros(30), np.zeros(30)])
        with pytest.raises(DegenerateNeighborhood):
            estimate_normals(line, k=5, strict=True)

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            estimate_normals(np.zeros((5, 3)), k=10)


class TestFPFH:
    def test_rotation_invariance(self, twin):
        points = voxel_downsample(twin.regime(2).target_cloud, 0.05)[:400]
        normals = estimate_normals(points, k=15, viewpoint=twin.regime(2).nominal_camera)
        radius = 0.25
        original = compute_fpfh(points, normals, radius, max_nn=len(points))
        moved = compute_fpfh(apply(KNOWN, points), normals @ KNOWN.rotation.T, radius, max_nn=len(points))
        assert np.max(np.abs(original - moved)) < 1e-6

    def test_isolated_point_is_zero(self):
        points = np.array([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]])
        normals = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
        assert np.array_equal(compute_fpfh(points, normals, 0.5), np.zeros((2, 33)))

    def test_histogram_mass(self, target_features):
        descriptors = target_features.descriptors
        assert np.all(descriptors >= 0.0)
        triples = descriptors.reshape(-1, 3, 11).sum(axis=2)
        populated = np.any(descriptors > 0, axis=1)
        assert np.allclose(triples[populated], 200.0)


class TestMatching:
    def test_self_matching_is_exact(self, target_features):
        corr = match_features(target_features, target_features)
        assert len(corr) == len(target_features)
        assert np.all(corr.distances == 0.0)
        assert np.all(corr.target <= corr.source)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        src = FeatureCloud(rng.normal(size=(150, 3)), np.tile([0.0, 0.0, 1.0], (150, 1)), rng.uniform(0.0, 10.0, (150, 33)))
        tgt = FeatureCloud(rng.normal(size=(200, 3)), np.tile([0.0, 0.0, 1.0], (200, 1)), rng.uniform(0.0, 10.0, (200, 33)))
        corr = match_features(src, tgt)
        d2 = np.sum((src.descriptors[:, None, :] - tgt.descriptors[None, :, :]) ** 2, axis=2)
        assert np.array_equal(corr.target, np.argmin(d2, axis=1))
        assert np.array_equal(corr.source, np.arange(150))


class TestProcrustes:
    def test_exact_recovery(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            pose = exp_map(LieVector(rng.uniform(-1.0, 1.0, 3), rng.normal(size=3)))
            p = rng.normal(size=(10, 3))
            estimate = procrustes_weighted(p, apply(pose, p), CorrespondenceSet(np.arange(10), np.arange(10)))
            assert np.max(np.abs(estimate.matrix() - pose.matrix())) < 1e-9

    def test_zero_weight_equals_omission(self):
        rng = np.random.default_rng(4)
        p = rng.normal(size=(12, 3))
        q = apply(KNOWN, p) + rng.normal(scale=0.01, size=(12, 3))
        q[-1] += 5.0
        weights = np.r_[np.ones(11), 0.0]
        with_zero = procrustes_weighted(p, q, CorrespondenceSet(np.arange(12), np.arange(12), weights))
        omitted = procrustes_weighted(p, q, CorrespondenceSet(np.arange(11), np.arange(11)))
        assert np.allclose(with_zero.matrix(), omitted.matrix(), atol=1e-12)

    def test_beats_random_candidates(self):
        rng = np.random.default_rng(5)
        p = rng.normal(size=(20, 3))
        q = apply(KNOWN, p) + rng.normal(scale=0.05, size=(20, 3))
        corr = CorrespondenceSet(np.arange(20), np.arange(20), rng.uniform(0.1, 1.0, 20))
        best = weighted_residual(p, q, corr, procrustes_weighted(p, q, corr))
        for _ in range(10_000):
            candidate = exp_map(LieVector(rng.uniform(-math.pi / 2, math.pi / 2, 3), rng.normal(size=3)))
            assert best <= weighted_residual(p, q, corr, candidate) + 1e-12

    def test_collinear_is_degenerate(self):
        p = np.column_stack([np.arange(5.0), np.zeros(5), np.zeros(5)])
        with pytest.raises(DegenerateConfiguration):
            procrustes_weighted(p, p, CorrespondenceSet(np.arange(5), np.arange(5)))

    def test_zero_weights_are_degenerate(self):
        p = np.random.default_rng(6).normal(size=(4, 3))
        with pytest.raises(DegenerateConfiguration):
            procrustes_weighted(p, p, CorrespondenceSet(np.arange(4), np.arange(4), np.zeros(4)))


class TestGlobalRegistration:
    def test_ransac_identical_clouds(self, target_features):
        result = ransac_register(target_features, target_features, CONFIG, seed=0)
        rot, trans = geodesic_error(result.pose, Pose.identity())
        assert rot < 1e-6 and trans < 1e-6
        assert result.fitness == pytest.approx(1.0)

    def test_ransac_known_transform(self, target_features):
        source = transformed(target_features, inverse(KNOWN))
        result = ransac_register(source, target_features, CONFIG, seed=1)
        rot, trans = geodesic_error(result.pose, KNOWN)
        assert rot < 1e-3
        assert trans < 1e-3

    def test_ransac_deterministic(self, target_features):
        source = transformed(target_features, inverse(KNOWN))
        a = ransac_register(source, target_features, CONFIG, seed=7)
        b = ransac_register(source, target_features, CONFIG, seed=7)
        assert np.array_equal(a.pose.matrix(), b.pose.matrix())

    def test_fgr_identical_clouds(self, target_features):
        result = fast_register(target_features, target_features, CONFIG, seed=0)
        rot, trans = geodesic_error(result.pose, Pose.identity())
        assert rot < 1e-6 and trans < 1e-6

    def test_fgr_downweights_outliers(self):
        rng = np.random.default_rng(8)
        p = rng.uniform(-1.0, 1.0, (100, 3))
        q = apply(KNOWN, p)
        outliers = np.arange(70, 100)
        offsets = rng.normal(size=(30, 3))
        offsets *= (rng.uniform(1.0, 2.0, 30) / np.linalg.norm(offsets, axis=1))[:, None]
        q[outliers] += offsets
        corr = CorrespondenceSet(np.arange(100), np.arange(100))
        pose, weights, history = fgr_optimize(p, q, corr, iterations=64, mu_start=4.0)
        assert np.all(weights[outliers] < 0.1)
        rot, trans = geodesic_error(pose, KNOWN)
        assert rot < 5e-3 and trans < 5e-3
        assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))


class TestICP:
    @pytest.fixture(scope="class")
    def centered_cloud(self, twin):
        cloud = voxel_downsample(twin.regime(0).target_cloud, 0.02)
        return cloud - cloud.mean(axis=0)

    def test_ground_truth_is_fixed_point(self, centered_cloud):
        source = apply(inverse(KNOWN), centered_cloud)
        result = icp_refine(source, centered_cloud, KNOWN, 0.05)
        assert np.allclose(result.pose.matrix(), KNOWN.matrix(), atol=1e-9)
        assert result.history[0] == pytest.approx(0.0, abs=1e-9)

    @pytest.mark.parametrize("regime_id", [2, 3])
    def test_converges_from_nearby_start(self, twin, regime_id):
        cloud = voxel_downsample(twin.regime(regime_id).target_cloud, 0.025)
        target = cloud - cloud.mean(axis=0)
        source = apply(inverse(KNOWN), target)
        delta = Pose(so3_exp([math.radians(5.0), 0.0, 0.0]), [0.05, 0.0, 0.0])
        result = icp_refine(source, target, compose(delta, KNOWN), 0.025)
        rot, trans = geodesic_error(result.pose, KNOWN)
        assert rot < 1e-3
        assert trans < 1e-3
        assert all(b <= a + 1e-12 for a, b in zip(result.history, result.history[1:]))

    def test_evaluate_registration(self, centered_cloud):
        fitness, rms = evaluate_registration(centered_cloud, centered_cloud, Pose.identity(), 0.01)
        assert fitness == 1.0 and rms == 0.0
        fitness, _ = evaluate_registration(centered_cloud, centered_cloud, Pose(np.eye(3), [10.0, 0.0, 0.0]), 0.01)
        assert fitness == 0.0


class TestPartitioned:
    @staticmethod
    def sensor_view(regime):
        """Regime target expressed in a frame at the nominal camera."""
        sensor = Pose(regime.anchor_pose.rotation, regime.nominal_camera)
        return sensor, apply(inverse(sensor), regime.target_cloud)

    def test_infinite_crop_equals_unpartitioned(self, twin):
        _, source = self.sensor_view(twin.regime(0))
        src = prepare_feature_cloud(source, CONFIG)
        full = prepare_target(twin, 0, CONFIG, partitioned=False)
        inf_crop = prepare_target(twin, 0, CONFIG, partitioned=True, crop_radius=math.inf)
        assert np.array_equal(full.features.descriptors, inf_crop.features.descriptors)
        a = register_to_target(src, full, "fgr", CONFIG, seed=3)
        b = register_to_target(src, inf_crop, "fgr", CONFIG, seed=3)
        assert np.array_equal(a.pose.matrix(), b.pose.matrix())

    @pytest.mark.slow
    def test_localizes_in_twin_frame(self, twin):
        regime = twin.regime(0)
        sensor, source = self.sensor_view(regime)
        result = partitioned_register(twin, 0, source, "ransac", CONFIG, seed=0, refine=True)
        rot, trans = geodesic_error(result.pose, sensor)
        assert rot < 0.05 and trans < 0.05

    def test_unknown_regime(self, twin):
        with pytest.raises(UnknownRegime):
            partitioned_register(twin, 9, np.zeros((10, 3)))


class TestRegistrationResult:
    def test_bounds(self):
        with pytest.raises(ValueError):
            RegistrationResult(Pose.identity(), 0.0, 1.5)
        with pytest.raises(ValueError):
            RegistrationResult(Pose.identity(), 0.0, 0.5, runtime=-1.0)

    def test_to_dict(self):
        result = RegistrationResult(Pose(so3_exp([0.0, 0.0, 0.1]), [1.0, 2.0, 3.0]), 0.01, 0.9, 0.2)
        data = result.to_dict()
        assert set(data) == {"pose", "inlier_rms", "fitness", "runtime_s"}
        assert len(data["pose"]) == 16
