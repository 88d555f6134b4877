import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from oracles import central_difference_grads
from ropecloth.neural import (Adam, Mlp2, NeuralModel, RigidFrame, TrainConfig, cosine_lr, data_loss, fit_pca,
                              infer_mesh, mlp_forward, mlp_gradients, model_from_dataset, nonrigid_displacement,
                              pinn_collision_loss, train)
from ropecloth.neural.training import SHAPE, SKINNING, frame_metrics, graph_laplacian_energy
from ropecloth.sdf_collision import AnalyticSdf, Sphere

UNIT = AnalyticSdf((Sphere((0.0, 0.0, 0.0), 1.0),))


# -- rigid frame -----------------------------------------------------------------------------

def test_nonrigid_displacement_examples(rng):
    rest = rng.normal(size=(5, 3))
    assert np.all(nonrigid_displacement(rest, rest, RigidFrame()) == 0.0)
    shifted = rest + [0.0, 0.0, 1.0]
    d = nonrigid_displacement(shifted, rest, RigidFrame()).reshape(-1, 3)
    np.testing.assert_allclose(d, np.tile([0.0, 0.0, 1.0], (5, 1)), atol=1e-15)
    rot = Rotation.from_rotvec([0.3, -1.1, 0.4]).as_matrix()
    frame = RigidFrame(rot, np.array([0.5, 2.0, -1.0]))
    np.testing.assert_allclose(nonrigid_displacement(frame.to_world(rest), rest, frame), 0.0, atol=1e-14)
    with pytest.raises(ValueError):
        nonrigid_displacement(rest[:4], rest, RigidFrame())


# -- PCA -----------------------------------------------------------------------------------------

def test_equal_samples_give_zero_coefficients():
    x = np.tile(np.arange(6.0), (5, 1))
    pca = fit_pca(x, 2)
    np.testing.assert_array_equal(pca.project(x), 0.0)
    np.testing.assert_array_equal(pca.reconstruct(np.zeros(2)), x[0])
    assert pca.padded == 2
    np.testing.assert_allclose(pca.basis.T @ pca.basis, np.eye(2), atol=1e-10)


def test_full_rank_reconstruction(rng):
    x = rng.normal(size=(8, 12))
    pca = fit_pca(x, 7)  # centered rank is n - 1
    rec = pca.reconstruct(pca.project(x))
    assert np.linalg.norm(rec - x) / np.linalg.norm(x) < 1e-8
    np.testing.assert_allclose(pca.basis.T @ pca.basis, np.eye(7), atol=1e-10)
    assert np.all(np.diff(pca.singular_values) <= 0.0)


def test_toy_variances_pick_the_wide_axis(rng):
    # 2-D data embedded in 3-D: variance 4 along e_y, 1 along e_z
    z = rng.normal(size=(4000, 2)) * [2.0, 1.0]
    x = np.zeros((4000, 3))
    x[:, 1:] = z
    pca = fit_pca(x, 2)
    cov = np.cov(x.T)
    w, v = np.linalg.eigh(cov)
    top = v[:, np.argmax(w)]
    assert abs(pca.basis[:, 0] @ top) == pytest.approx(1.0, abs=1e-9)
    assert abs(pca.basis[1, 0]) > 0.999


@given(st.integers(0, 10**6), st.integers(1, 5))
def test_projector_idempotent_and_energy_identity(seed, k):
    r = np.random.default_rng(seed)
    x = r.normal(size=(10, 6)) @ r.normal(size=(6, 6))
    pca = fit_pca(x, k)
    once = pca.reconstruct(pca.project(x))
    twice = pca.reconstruct(pca.project(once))
    np.testing.assert_allclose(twice, once, atol=1e-12 * max(1.0, np.abs(x).max()))
    s = np.linalg.svd(x - x.mean(axis=0), compute_uv=False)
    residual = float(np.sum((x - once) ** 2))
    assert residual == pytest.approx(float(np.sum(s[k:] ** 2)), rel=1e-9, abs=1e-9)
    # sign convention: largest-magnitude entry of each column is positive
    cols = np.arange(pca.k)
    assert np.all(pca.basis[np.argmax(np.abs(pca.basis), axis=0), cols] > 0.0)
    again = fit_pca(x, k)
    assert np.array_equal(again.basis, pca.basis) and np.array_equal(again.mean, pca.mean)


def test_pca_rejects_bad_k(rng):
    with pytest.raises(ValueError):
        fit_pca(rng.normal(size=(4, 3)), 4)
    with pytest.raises(ValueError):
        fit_pca(rng.normal(size=(4, 3)), 0)


# -- MLP -------------------------------------------------------------------------------------------

def relative_errors(g, fd):
    return np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-6)


@pytest.mark.parametrize("activation", ["relu", "tanh"])
def test_backprop_matches_finite_differences(activation):
    for seed in range(10):
        r = np.random.default_rng(100 + seed)
        net = Mlp2.init(5, 3, width=7, seed=seed, activation=activation)
        x = r.normal(size=(4, 5))
        w = r.normal(size=(4, 3))

        def loss():
            return float(np.sum(w * mlp_forward(net, x)))

        fd = central_difference_grads(loss, net.params(), h=1e-5)
        g = mlp_gradients(net, x, w)
        for name in fd:
            assert np.max(relative_errors(g[name], fd[name])) < 1e-4, name


def test_zero_weights_output_bias():
    net = Mlp2.init(4, 3, width=5, seed=1)
    for name in ("w1", "w2", "w3"):
        getattr(net, name)[:] = 0.0
    np.testing.assert_array_equal(mlp_forward(net, np.ones((2, 4))), np.tile(net.b3, (2, 1)))


def test_gradients_are_linear_in_upstream(rng):
    net = Mlp2.init(4, 3, width=6, seed=2, activation="tanh")
    x, dy = rng.normal(size=(3, 4)), rng.normal(size=(3, 3))
    g1, g2 = mlp_gradients(net, x, dy), mlp_gradients(net, x, 2.0 * dy)
    for name in g1:
        np.testing.assert_allclose(g2[name], 2.0 * g1[name], rtol=1e-14, atol=0)


def test_cosine_schedule_and_adam():
    assert cosine_lr(1e-3, 0, 100) == 1e-3
    assert cosine_lr(1e-3, 50, 100) == pytest.approx(5e-4)
    assert cosine_lr(1e-3, 100, 100) == pytest.approx(0.0, abs=1e-18)
    net = Mlp2.init(2, 1, width=2, seed=0)
    before = net.copy()
    grads = {n: np.ones_like(p) for n, p in net.params().items()}
    Adam().update(net, grads, 0.01)
    # the first bias-corrected Adam step moves every parameter by lr against the gradient sign
    for n, p in net.params().items():
        np.testing.assert_allclose(p, before.params()[n] - 0.01, atol=1e-9)


# -- losses ------------------------------------------------------------------------------------------

def test_pinn_loss_outside_is_zero():
    pred = np.array([[2.0, 0.0, 0.0], [0.0, 1.5, 0.0]])
    loss, grad, inside = pinn_collision_loss(pred, pred + 0.1, UNIT, 1e-3)
    assert loss == 0.0 and np.all(grad == 0.0) and not inside.any()


def test_pinn_loss_example():
    pred = np.array([[0.9, 0.0, 0.0]])
    truth = np.array([[1.9, 0.0, 0.0]])
    loss, grad, inside = pinn_collision_loss(pred, truth, UNIT, 0.0)
    assert inside.all()
    assert loss == pytest.approx(0.01, rel=1e-12)
    np.testing.assert_allclose(grad, [[-0.2, 0.0, 0.0]], atol=1e-12)


@given(st.integers(0, 10**6))
def test_pinn_gradient_parallel_to_data_gradient(seed):
    r = np.random.default_rng(seed)
    pred = r.normal(size=(20, 3)) * 0.5
    truth = pred + r.normal(size=(20, 3))
    _, gd = data_loss(pred, truth)
    _, gp, inside = pinn_collision_loss(pred, truth, UNIT, 1e-3)
    for a, b in zip(gd[inside], gp[inside]):
        cos = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
        assert cos == pytest.approx(1.0, abs=1e-9)


def test_pinn_degenerate_falls_back_to_gradient():
    pred = np.array([[0.0, 0.5, 0.0]])
    _, grad, inside = pinn_collision_loss(pred, pred, UNIT, 0.0)
    assert inside.all()
    # target is pushed along +y, so the gradient points along -y
    np.testing.assert_allclose(grad, [[0.0, -1.0, 0.0]], atol=1e-12)


# -- training --------------------------------------------------------------------------------------

def repeated(ds, f):
    n = ds.vertices.shape[0]
    return dataclasses.replace(ds, vertices=np.repeat(ds.vertices[f:f + 1], n, axis=0),
                               bones=np.repeat(ds.bones[f:f + 1], n, axis=0),
                               translations=np.repeat(ds.translations[f:f + 1], n, axis=0))


def test_memorizes_a_single_frame(small_dataset):
    ds = repeated(small_dataset, 7)
    model = model_from_dataset(ds, 4)
    res = train(ds, model, TrainConfig(lr=1e-3, epochs=300, batch_size=64))
    m = frame_metrics(res.model, ds, ds.indices(ds.TRAIN), TrainConfig())
    assert m.data_loss < 1e-6


@pytest.fixture(scope="module")
def skinned(small_dataset):
    model = model_from_dataset(small_dataset, 8)
    # few frames: small batches and a high rate give enough Adam steps to beat the mean
    cfg = TrainConfig(lr=1e-2, epochs=300, batch_size=4)
    return model, train(small_dataset, model, cfg, SKINNING), cfg


def test_training_beats_mean_baseline(small_dataset, skinned):
    model, res, cfg = skinned
    val = small_dataset.indices(small_dataset.VALIDATION)
    baseline = frame_metrics(model, small_dataset, val, cfg)  # no net: rest + PCA mean
    assert res.validation.rmse < baseline.rmse
    assert len(res.log) == 300 and res.log[0][1] == cfg.lr


def test_training_is_deterministic(small_dataset, skinned):
    model, res, cfg = skinned
    again = train(small_dataset, model, cfg, SKINNING)
    assert again.log == res.log
    for name, p in res.model.skin_net.params().items():
        assert np.array_equal(p, again.model.skin_net.params()[name])


def test_zero_epochs_return_initialized_net(small_dataset):
    model = model_from_dataset(small_dataset, 4)
    res = train(small_dataset, model, TrainConfig(epochs=0))
    ref = Mlp2.init(3 * model.n_bones, 4, 64, 0)
    assert res.log == [] and res.best_epoch == -1
    assert np.array_equal(res.model.skin_net.w1, ref.w1)
    shape = train(small_dataset, res.model, TrainConfig(epochs=0), SHAPE)
    assert np.all(shape.model.shape_net.w3 == 0.0) and np.all(shape.model.shape_net.b3 == 0.0)


def test_shape_basis_has_higher_frequency(small_dataset, skinned):
    _, res, _ = skinned
    shape = train(small_dataset, res.model, TrainConfig(lr=1e-5, epochs=1, shape_k=8), SHAPE).model
    e_skin = graph_laplacian_energy(shape.skin_pca.basis[:, :5], small_dataset.edges).mean()
    e_shape = graph_laplacian_energy(shape.shape_pca.basis[:, :5], small_dataset.edges).mean()
    assert e_shape > e_skin


def test_config_validation():
    for kw in ({"data_weight": 0.0}, {"pinn_weight": -1.0}, {"lr": 0.0}, {"epochs": -1}, {"batch_size": 0}):
        with pytest.raises(ValueError):
            TrainConfig(**kw)
    TrainConfig(pinn_weight=0.0)


def test_shape_stage_needs_skinning(small_dataset):
    with pytest.raises(ValueError):
        train(small_dataset, model_from_dataset(small_dataset, 4), TrainConfig(epochs=1), SHAPE)


# -- inference -------------------------------------------------------------------------------------

def test_zero_nets_give_rest_plus_mean(small_dataset):
    model = model_from_dataset(small_dataset, 4)
    model.skin_net = Mlp2.init(3 * model.n_bones, 4, 8, 0)
    for p in model.skin_net.params().values():
        p[:] = 0.0
    frame = RigidFrame(translation=np.array([0.1, -0.2, 0.3]))
    out = infer_mesh(model, frame.to_world(model.rest_bones), frame)
    expected = model.rest_vertices + model.skin_pca.mean.reshape(-1, 3) + frame.translation
    np.testing.assert_allclose(out, expected, atol=1e-15)
    with pytest.raises(ValueError):
        infer_mesh(model, model.rest_bones[:-1], frame)


def test_model_round_trip(small_dataset, skinned, tmp_path):
    _, res, _ = skinned
    shape = train(small_dataset, res.model, TrainConfig(lr=1e-5, epochs=2, shape_k=4), SHAPE).model
    p = tmp_path / "m.rcf"
    shape.save(p)
    back = NeuralModel.load(p)
    bones = small_dataset.bones[3]
    frame = RigidFrame(translation=small_dataset.translations[3])
    assert np.array_equal(infer_mesh(back, bones, frame), infer_mesh(shape, bones, frame))
    assert back.shape_pca.k == 4 and back.meta == shape.meta


def test_closure_on_training_frame(small_dataset, skinned):
    _, res, cfg = skinned
    f = int(small_dataset.indices(small_dataset.TRAIN)[0])
    frame = RigidFrame(translation=small_dataset.translations[f])
    out = infer_mesh(res.model, small_dataset.bones[f], frame, use_shape=False)
    err = math.sqrt(np.mean(np.sum((out - small_dataset.vertices[f]) ** 2, axis=1)))
    train_rmse = frame_metrics(res.model, small_dataset, small_dataset.indices(small_dataset.TRAIN), cfg).rmse
    assert err < 4.0 * train_rmse
