"""Tests for the numpy MLP, its losses, training loop, checkpoints and the learned pipeline."""

import math

import numpy as np
import pytest

from src.config import RegistrationConfig, TrainConfig
from src.errors import DimensionMismatch, EmptyCorrespondences, MissingModel, NonFiniteLoss
from src.geometry.se3 import Pose, apply, geodesic_error, head_vector, inverse, log_map, pose_from_head
from src.registration.partitioned import prepare_target
from src.registration.types import CorrespondenceSet, FeatureCloud
from src.regressor.checkpoint import load_model, read_loss_curve, save_model, write_loss_curve
from src.regressor.features import POOLED_DIM, ROW_DIM, FeatureInput, build_features, pool
from src.regressor.mlp import MLPModel, spectral_lipschitz
from src.regressor.pipeline import extract_features, predict_pose, prepare_views
from src.regressor.training import (
    TrainingSet,
    bce_with_logits,
    inlier_weights,
    lie_mse,
    loss_and_gradients,
    train,
    weighted_rigid,
)
from src.scene.dataset import ViewSample

EPS = 1e-6


def random_model(sizes=(5, 7, 4, 3), seed=0) -> MLPModel:
    rng = np.random.default_rng(seed)
    model = MLPModel.initialize(sizes, seed=seed)
    model.biases = [rng.normal(scale=0.1, size=b.shape) for b in model.biases]
    model.input_shift = rng.normal(size=sizes[0])
    model.input_scale = rng.uniform(0.5, 2.0, sizes[0])
    model.output_shift = rng.normal(size=sizes[-1])
    model.output_scale = rng.uniform(0.5, 2.0, sizes[-1])
    return model


def numeric_gradient(fn, theta: np.ndarray) -> np.ndarray:
    grad = np.zeros_like(theta)
    for i in range(len(theta)):
        step = np.zeros_like(theta)
        step[i] = EPS
        grad[i] = (fn(theta + step) - fn(theta - step)) / (2 * EPS)
    return grad


class TestMLP:
    def test_shapes(self):
        model = MLPModel.initialize()
        assert model.layer_sizes == (219, 128, 16, 6)
        assert model.forward(np.zeros(219)).shape == (6,)
        assert model.forward(np.zeros((4, 219))).shape == (4, 6)
        assert model.n_last == 128 * 16 + 16 + 16 * 6 + 6

    def test_wrong_width(self):
        with pytest.raises(DimensionMismatch):
            MLPModel.initialize((4, 3, 2)).forward(np.zeros(5))

    def test_set_flat_size(self):
        model = MLPModel.initialize((4, 3, 2))
        with pytest.raises(DimensionMismatch):
            model.set_flat(np.zeros(model.parameter_count() + 1))

    def test_copy_is_independent(self):
        model = random_model()
        clone = model.copy()
        clone.weights[0][0, 0] += 1.0
        assert model.weights[0][0, 0] != clone.weights[0][0, 0]

    def test_backward_matches_finite_differences(self):
        model = random_model()
        X = np.random.default_rng(1).normal(size=(6, 5))
        c = np.random.default_rng(2).normal(size=(6, 3))

        def objective(theta):
            perturbed = model.copy()
            perturbed.set_flat(theta)
            return float(np.sum(c * perturbed.forward(X)))

        cache = model.forward_cache(X)
        analytic = model.flat_gradient(*model.backward(cache, c))
        numeric = numeric_gradient(objective, model.get_flat())
        assert np.allclose(analytic, numeric, rtol=1e-5, atol=1e-6)

    def test_jacobian_head_matches_finite_differences(self):
        model = random_model()
        x = np.random.default_rng(3).normal(size=5)
        theta = model.get_flat()
        head_start = len(theta) - model.n_last
        J = model.jacobian_head(x)
        assert J.shape == (3, model.n_last)
        for k in range(3):

            def output_k(tail, k=k):
                perturbed = model.copy()
                perturbed.set_flat(np.concatenate([theta[:head_start], tail]))
                return float(perturbed.forward(x)[k])

            numeric = numeric_gradient(output_k, theta[head_start:])
            assert np.allclose(J[k], numeric, rtol=1e-5, atol=1e-6)

    def test_spectral_bound_holds(self):
        model = random_model()
        rng = np.random.default_rng(4)
        bound = spectral_lipschitz(model)
        for _ in range(200):
            a, b = rng.normal(size=(2, 5))
            ratio = np.linalg.norm(model.forward(a) - model.forward(b)) / np.linalg.norm(a - b)
            assert ratio <= bound + 1e-9


class TestFeatures:
    @pytest.fixture
    def clouds(self):
        rng = np.random.default_rng(5)
        normals = np.tile([0.0, 0.0, 1.0], (10, 1))
        src = FeatureCloud(rng.normal(size=(10, 3)), normals, rng.uniform(0, 5, (10, 33)))
        tgt = FeatureCloud(rng.normal(size=(10, 3)), normals, rng.uniform(0, 5, (10, 33)))
        return src, tgt

    def test_row_layout(self, clouds):
        src, tgt = clouds
        corr = CorrespondenceSet([0, 3, 7], [2, 2, 9])
        fi = build_features(src, tgt, corr)
        assert fi.x.shape == (3, ROW_DIM)
        assert np.array_equal(fi.source_points, src.points[[0, 3, 7]])
        assert np.array_equal(fi.target_points, tgt.points[[2, 2, 9]])
        assert fi.x[1, -1] == pytest.approx(np.linalg.norm(src.descriptors[3] - tgt.descriptors[2]))

    def test_pool_is_permutation_invariant(self, clouds):
        src, tgt = clouds
        fi = build_features(src, tgt, CorrespondenceSet(np.arange(10), np.arange(10)[::-1]))
        shuffled = FeatureInput(fi.x[np.random.default_rng(6).permutation(10)])
        a, b = pool(fi).vector, pool(shuffled).vector
        assert a.shape == (POOLED_DIM,)
        assert np.allclose(a, b)

    def test_empty_correspondences(self, clouds):
        with pytest.raises(EmptyCorrespondences):
            build_features(*clouds, CorrespondenceSet([], []))

    def test_subsample_keeps_order(self, clouds):
        src, tgt = clouds
        fi = build_features(src, tgt, CorrespondenceSet(np.arange(10), np.arange(10)))
        sub = fi.subsample(4, seed=1)
        assert len(sub) == 4
        positions = [int(np.flatnonzero(np.all(fi.x == row, axis=1))[0]) for row in sub.x]
        assert positions == sorted(positions)
        assert fi.subsample(20) is fi


class TestLosses:
    def test_lie_mse(self):
        assert lie_mse(np.zeros((2, 6)), np.ones((2, 6))) == pytest.approx(6.0)

    def test_weighted_rigid_gradient(self):
        rng = np.random.default_rng(7)
        p = rng.normal(size=(20, 3))
        q = rng.normal(size=(20, 3))
        w = rng.uniform(0.0, 1.0, 20)
        head = np.r_[rng.uniform(-1.0, 1.0, 3), rng.normal(size=3)]
        _, grad = weighted_rigid(head, p, q, w)
        numeric = numeric_gradient(lambda h: weighted_rigid(h, p, q, w)[0], head)
        assert np.allclose(grad, numeric, rtol=1e-5, atol=1e-6)

    def test_weighted_rigid_weight_scale_invariance(self):
        rng = np.random.default_rng(11)
        p = rng.normal(size=(15, 3))
        q = rng.normal(size=(15, 3))
        w = rng.uniform(0.1, 1.0, 15)
        head = np.r_[rng.uniform(-1.0, 1.0, 3), rng.normal(size=3)]
        loss, grad = weighted_rigid(head, p, q, w)
        scaled_loss, scaled_grad = weighted_rigid(head, p, q, 7.5 * w)
        assert scaled_loss == pytest.approx(loss, rel=1e-12)
        assert np.allclose(scaled_grad, grad, rtol=1e-12, atol=1e-14)

    def test_weighted_rigid_rejects_degenerate_weights(self):
        p = np.zeros((3, 3))
        with pytest.raises(ValueError):
            weighted_rigid(np.zeros(6), p, p, np.zeros(3))
        with pytest.raises(ValueError):
            weighted_rigid(np.zeros(6), p, p, np.array([1.0, -0.5, 1.0]))

    def test_weighted_rigid_zero_at_truth(self):
        p = np.random.default_rng(8).normal(size=(10, 3))
        pose = pose_from_head([0.1, 0.2, -0.3, 1.0, 0.0, 2.0])
        loss, grad = weighted_rigid(head_vector(pose), p, apply(pose, p), np.ones(10))
        assert loss == pytest.approx(0.0, abs=1e-20)
        assert np.allclose(grad, 0.0, atol=1e-10)

    def test_inlier_weights_fallback(self):
        p = np.zeros((4, 3))
        q = np.full((4, 3), 10.0)
        assert np.array_equal(inlier_weights(p, q, np.eye(3), np.zeros(3), 0.1), np.ones(4))

    def test_bce_gradient(self):
        logits = np.array([-2.0, -0.1, 0.3, 4.0])
        labels = np.array([0.0, 1.0, 1.0, 0.0])
        _, grad = bce_with_logits(logits, labels)
        numeric = numeric_gradient(lambda z: bce_with_logits(z, labels)[0], logits)
        assert np.allclose(grad, numeric, atol=1e-8)

    def test_weighted_rigid_network_gradient(self):
        rng = np.random.default_rng(9)
        model = random_model((5, 6, 4, 6))
        X = rng.normal(size=(3, 5))
        pairs = [(rng.normal(size=(8, 3)), rng.normal(size=(8, 3)), np.ones(8)) for _ in range(3)]
        data = TrainingSet(X, np.zeros((3, 6)), pairs)

        def objective(theta):
            perturbed = model.copy()
            perturbed.set_flat(theta)
            return loss_and_gradients(perturbed, data, [0, 1, 2], "weighted_rigid")[0]

        _, grad_W, grad_b = loss_and_gradients(model, data, [0, 1, 2], "weighted_rigid")
        numeric = numeric_gradient(objective, model.get_flat())
        assert np.allclose(model.flat_gradient(grad_W, grad_b), numeric, rtol=1e-4, atol=1e-6)


class TestTraining:
    @pytest.fixture
    def linear_data(self):
        rng = np.random.default_rng(10)
        X = rng.normal(size=(64, 10))
        Y = X @ rng.normal(scale=0.3, size=(10, 6))
        return TrainingSet(X, Y)

    def test_loss_decreases(self, linear_data):
        cfg = TrainConfig(epochs=40, learning_rate=1e-2, batch_size=16)
        result = train(MLPModel.initialize((10, 16, 8, 6)), linear_data, cfg, validation=linear_data)
        assert len(result.curve) == 41
        assert result.curve[0].epoch == 0
        assert result.final_loss < 0.5 * result.initial_loss
        assert math.isfinite(result.curve[-1].val_loss)

    def test_deterministic(self, linear_data):
        cfg = TrainConfig(epochs=3, batch_size=16)
        a = train(MLPModel.initialize((10, 8, 6), seed=1), linear_data, cfg).model
        b = train(MLPModel.initialize((10, 8, 6), seed=1), linear_data, cfg).model
        assert np.array_equal(a.get_flat(), b.get_flat())

    def test_divergence_raises(self, linear_data):
        cfg = TrainConfig(epochs=50, learning_rate=1e6, batch_size=16)
        with np.errstate(all="ignore"):
            with pytest.raises(NonFiniteLoss):
                train(MLPModel.initialize((10, 8, 6)), linear_data, cfg)

    def test_empty_dataset(self):
        with pytest.raises(ValueError):
            train(MLPModel.initialize((10, 8, 6)), TrainingSet(np.zeros((0, 10)), np.zeros((0, 6))))


class TestCheckpoint:
    def test_save_load_exact(self, tmp_path):
        model = random_model()
        save_model(tmp_path / "m.json", model, config_hash="abc", kind="evidential")
        loaded, header = load_model(tmp_path / "m.json")
        assert np.array_equal(loaded.get_flat(), model.get_flat())
        assert np.array_equal(loaded.output_scale, model.output_scale)
        assert header["kind"] == "evidential" and header["config_hash"] == "abc"

    def test_missing(self, tmp_path):
        with pytest.raises(MissingModel):
            load_model(tmp_path / "absent.json")

    def test_loss_curve(self, tmp_path):
        rng = np.random.default_rng(11)
        model = MLPModel.initialize((3, 4, 2))
        data = TrainingSet(rng.normal(size=(8, 3)), rng.normal(size=(8, 2)))
        curve = train(model, data, TrainConfig(epochs=2, batch_size=4)).curve
        write_loss_curve(tmp_path / "loss.csv", curve)
        back = read_loss_curve(tmp_path / "loss.csv")
        assert [r.epoch for r in back] == [0, 1, 2]
        assert [r.train_loss for r in back] == [r.train_loss for r in curve]


class TestPipeline:
    CONFIG = RegistrationConfig(voxel_size=0.05)

    @pytest.fixture(scope="class")
    def target(self, twin):
        return prepare_target(twin, 0, self.CONFIG)

    @staticmethod
    def view(twin, index: int, offset) -> ViewSample:
        regime = twin.regime(0)
        sensor = Pose(regime.anchor_pose.rotation, regime.nominal_camera + np.asarray(offset))
        return ViewSample(index, apply(inverse(sensor), regime.target_cloud), log_map(sensor))

    def test_predict_pose_uses_network_output(self, twin, target):
        sample = extract_features(self.view(twin, 0, [0.0, 0.0, 0.0]).source, target, self.CONFIG)
        head = np.array([0.1, -0.2, 0.3, 1.0, 2.0, 0.5])
        model = MLPModel.zeros((POOLED_DIM, 4, 6))
        model.output_shift = head
        result = predict_pose(model, sample, target, self.CONFIG)
        rot, trans = geodesic_error(result.pose, pose_from_head(head))
        assert rot < 1e-12 and trans < 1e-12
        assert 0.0 <= result.fitness <= 1.0

    def test_prepare_views(self, twin, target):
        views = [self.view(twin, i, [0.1 * i, 0.0, 0.0]) for i in range(3)]
        prepared = prepare_views(views, target, self.CONFIG, TrainConfig(max_correspondences=50))
        assert prepared.indices == [0, 1, 2]
        assert prepared.data.X.shape == (3, POOLED_DIM)
        for row, view in zip(prepared.data.Y, views):
            assert np.allclose(row, head_vector(view.pose), atol=1e-9)
        assert prepared.weight_rows.shape == (150, ROW_DIM)
        assert set(np.unique(prepared.weight_labels)) <= {0.0, 1.0}

    def test_empty_source(self, target):
        with pytest.raises(EmptyCorrespondences):
            extract_features(np.zeros((3, 3)), target, self.CONFIG)
