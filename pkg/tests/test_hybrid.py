import numpy as np
import pytest

from adeptheq import gradcheck, hybrid, nn
from adeptheq.errors import ConfigurationError, InputError

TINY = hybrid.ModelConfig(input_shape=(1, 8, 8), n_classes=3, block_channels=(2,), hidden_units=(8,))


@pytest.fixture
def params():
    return hybrid.init_params(TINY, np.random.default_rng(0))


def test_layer_groups(params):
    assert params.names() == ["conv1_1", "fc1", "fc2", "pqc", "fc4"]
    tags = params.tags()
    assert tags["pqc"] == hybrid.QUANTUM and tags["fc4"] == hybrid.FINAL
    assert params["fc4"].tensors["weight"].shape == (3, 4)
    assert params["pqc"].tensors["angles"].shape == (2, 4, 3)
    angles = params["pqc"].tensors["angles"]
    assert angles.min() >= 0 and angles.max() < 2 * np.pi


def test_layered_parameters_needs_one_quantum_and_one_final(params):
    with pytest.raises(ConfigurationError):
        hybrid.LayeredParameters([l for l in params if l.tag != hybrid.QUANTUM])


def test_flatten_roundtrip(params):
    flat = params.flatten()
    assert flat.size == params.num_params
    back = params.assign_flat(flat)
    np.testing.assert_array_equal(back.flatten(), flat)


def test_fc4_vector_layout(params):
    vec = hybrid.fc4_to_vector(params["fc4"])
    assert vec.size == 3 * 4 + 3
    back = hybrid.fc4_from_vector(vec, 3, 4)
    np.testing.assert_array_equal(back["weight"], params["fc4"].tensors["weight"])
    np.testing.assert_array_equal(back["bias"], params["fc4"].tensors["bias"])


def test_normalize_bridge_examples():
    v = np.zeros(16)
    v[3] = 1
    x, _ = hybrid.normalize_bridge(v)
    np.testing.assert_array_equal(x, v)
    w = np.zeros(16)
    w[0] = 2
    x, _ = hybrid.normalize_bridge(w)
    np.testing.assert_array_equal(x, np.eye(16)[0])
    x, n = hybrid.normalize_bridge(np.zeros(16))
    assert np.all(np.isfinite(x))


def test_normalize_bridge_jvp_matches_finite_differences():
    rng = np.random.default_rng(1)
    v = rng.normal(size=16) * 3
    u = rng.normal(size=16)  # upstream
    x, n = hybrid.normalize_bridge(v)
    g = hybrid.normalize_bridge_backward(u, x, n)
    h = 1e-6
    num = np.array([(u @ hybrid.normalize_bridge(v + h * e)[0] - u @ hybrid.normalize_bridge(v - h * e)[0]) / (2 * h)
                    for e in np.eye(16)])
    np.testing.assert_allclose(g, num, atol=1e-6)


def test_forward_shapes_bounds_determinism(params):
    x = np.random.default_rng(2).normal(size=(5, 1, 8, 8))
    logits, tr = hybrid.forward(x, params, TINY)
    assert logits.shape == (5, 3)
    assert np.all(np.abs(tr.q_out) <= 1.0)
    again, _ = hybrid.forward(x, params, TINY)
    assert logits.tobytes() == again.tobytes()
    single, _ = hybrid.forward(x[0], params, TINY)
    np.testing.assert_allclose(single, logits[0], atol=1e-14)


def test_empty_batch_rejected(params):
    with pytest.raises(InputError):
        hybrid.loss_and_grads(np.zeros((0, 1, 8, 8)), np.zeros(0, dtype=int), params, TINY)


def test_zero_classifier_blocks_quantum_gradient(params):
    params["fc4"].tensors["weight"][:] = 0
    x = np.random.default_rng(3).normal(size=(4, 1, 8, 8))
    _, g = hybrid.loss_and_grads(x, np.array([0, 1, 2, 0]), params, TINY)
    assert not g["pqc"].tensors["angles"].any()
    assert not g["conv1_1"].tensors["weight"].any()


def test_uniform_logits_loss_is_log_m(params):
    params["fc4"].tensors["weight"][:] = 0
    params["fc4"].tensors["bias"][:] = 0.4
    x = np.random.default_rng(4).normal(size=(6, 1, 8, 8))
    loss, _ = hybrid.loss_and_grads(x, np.array([0, 1, 2, 0, 1, 2]), params, TINY)
    assert loss == pytest.approx(np.log(3), abs=1e-12)


def test_skip_layers_get_zero_grads(params):
    x = np.random.default_rng(5).normal(size=(2, 1, 8, 8))
    y = np.array([0, 1])
    _, full = hybrid.loss_and_grads(x, y, params, TINY)
    _, part = hybrid.loss_and_grads(x, y, params, TINY, skip={"conv1_1", "fc4"})
    assert not part["conv1_1"].tensors["weight"].any()
    assert not part["fc4"].tensors["weight"].any()
    np.testing.assert_array_equal(part["fc1"].tensors["weight"], full["fc1"].tensors["weight"])
    np.testing.assert_array_equal(part["pqc"].tensors["angles"], full["pqc"].tensors["angles"])


def test_end_to_end_gradient_check_tiny_model():
    res = gradcheck.check_gradients(TINY, n_coords=60, seed=3)
    assert res.n_coords >= 50
    assert set(res.per_tag) == {hybrid.CLASSICAL, hybrid.QUANTUM, hybrid.FINAL}
    assert res.max_rel_error <= 1e-3


@pytest.mark.slow
def test_learns_separable_toy_set():
    """200 separable 8x8 samples, 200 Adam steps -> >= 95% training accuracy."""
    rng = np.random.default_rng(0)
    y = np.arange(200) % 2
    x = 0.3 * rng.normal(size=(200, 1, 8, 8))
    x[y == 1, :, :4, :] += 1.0  # class 1 lights the top half
    x[y == 0, :, 4:, :] += 1.0
    cfg = hybrid.ModelConfig(input_shape=(1, 8, 8), n_classes=2)
    params = hybrid.init_params(cfg, rng)
    states = {(l.name, k): nn.AdamState.zeros_like(t) for l in params for k, t in l.tensors.items()}
    for step in range(200):
        idx = rng.choice(200, size=32, replace=False)
        _, g = hybrid.loss_and_grads(x[idx], y[idx], params, cfg)
        for (name, k), st in states.items():
            params[name].tensors[k], states[(name, k)] = nn.adam_step(
                params[name].tensors[k], g[name].tensors[k], st, 1e-3)
    acc = (hybrid.predict(x, params, cfg).argmax(1) == y).mean()
    assert acc >= 0.95
