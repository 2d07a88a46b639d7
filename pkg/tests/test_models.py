"""Model family: architecture facts, functional forward, checkpoints."""

from __future__ import annotations

import numpy as np
import pytest

from relmeta import nn
from relmeta.models import (
    ConvNet,
    ModelSpec,
    flatten_params,
    init_params,
    load_checkpoint,
    save_checkpoint,
    unflatten_params,
)
from relmeta.rng import stream
from relmeta.tensor import Tensor, grad


def hand_param_count(spec: ModelSpec) -> int:
    """Independent closed-form parameter count."""
    total = 0
    in_ch = spec.channels
    for i, (k, f) in enumerate(zip(spec.conv_kernels(), spec.conv_filters())):
        total += f * in_ch * k * k + f          # conv w + b
        if spec.batchnorm:
            total += 2 * f                       # gamma + beta
        in_ch = f
    d = spec.flat_dim
    for _ in range(spec.n_fc):
        total += d * spec.fc_width + spec.fc_width
        d = spec.fc_width
    total += d * spec.n_classes + spec.n_classes
    return total


def test_architecture_family_facts() -> None:
    s2 = ModelSpec(depth=2, canvas=64)
    s4 = ModelSpec(depth=4, canvas=64)
    s6 = ModelSpec(depth=6, canvas=128)
    assert s2.conv_filters() == [6, 12] and s2.conv_kernels() == [2, 2]
    assert s4.conv_filters() == [12, 24, 48, 96] and s4.conv_kernels()[0] == 4
    assert s6.conv_filters()[0] == 18 and s6.conv_kernels()[0] == 6
    assert s6.conv_filters()[-1] == 576
    # spatial halving chain at canvas 128, depth 6: 64 ... 2
    assert s6.spatial_sizes() == [64, 32, 16, 8, 4, 2]
    assert s6.flat_dim == 576 * 2 * 2 == 2304


def test_param_counts_match_closed_form() -> None:
    for depth, canvas in ((2, 64), (4, 64), (6, 64), (6, 128), (4, 32)):
        spec = ModelSpec(depth=depth, canvas=canvas)
        assert spec.n_params == hand_param_count(spec)


def test_canvas_too_small_rejected() -> None:
    with pytest.raises(ValueError):
        ModelSpec(depth=6, canvas=32)
    with pytest.raises(ValueError):
        ModelSpec(depth=3, canvas=64)


def test_init_params_shapes_and_stats() -> None:
    spec = ModelSpec(depth=2, canvas=32)
    params = init_params(spec, stream(0, "init", 0).numpy_rng())
    shapes = spec.param_shapes()
    assert list(params) == list(shapes)
    for name, p in params.items():
        assert p.shape == shapes[name]
    assert np.all(params["conv0.b"] == 0)
    assert np.all(params["bn0.gamma"] == 1)
    # xavier bound for the first conv: fan_in 3*2*2, fan_out 6*2*2
    limit = np.sqrt(6.0 / (12 + 24))
    assert np.max(np.abs(params["conv0.w"])) <= limit


def test_forward_shapes_and_determinism() -> None:
    spec = ModelSpec(depth=4, canvas=32)
    model = ConvNet.create(spec, stream(1, "init", 0).numpy_rng())
    x = np.random.default_rng(0).random((3, 3, 32, 32), dtype=np.float32)
    a = model.forward(x, bn_training=True)
    b = model.forward(x, bn_training=True)
    assert a.shape == (3, 2)
    assert np.array_equal(a.data, b.data)


def test_forward_rejects_wrong_input_shape() -> None:
    spec = ModelSpec(depth=2, canvas=32)
    model = ConvNet.create(spec, stream(1, "init", 1).numpy_rng())
    with pytest.raises(Exception):
        model.forward(np.zeros((1, 3, 16, 16), dtype=np.float32))


def test_forward_with_param_override_is_functional() -> None:
    spec = ModelSpec(depth=2, canvas=16, dropout=0.0)
    model = ConvNet.create(spec, stream(2, "init", 0).numpy_rng())
    x = np.random.default_rng(1).random((2, 3, 16, 16), dtype=np.float32)
    base = model.forward(x, bn_training=True).data.copy()
    shifted = {k: Tensor(v + 0.01) for k, v in model.params.items()}
    out = model.forward(x, shifted, bn_training=True)
    assert not np.allclose(out.data, base)
    # stored params untouched
    assert np.array_equal(model.forward(x, bn_training=True).data, base)


def test_gradients_flow_to_all_params() -> None:
    spec = ModelSpec(depth=2, canvas=16, dropout=0.0)
    model = ConvNet.create(spec, stream(3, "init", 0).numpy_rng())
    x = np.random.default_rng(2).random((4, 3, 16, 16), dtype=np.float32)
    y = np.array([0, 1, 0, 1])
    params = model.tensor_params(requires_grad=True)
    loss = nn.softmax_cross_entropy(model.forward(x, params, bn_training=True), y)
    gs = grad(loss, list(params.values()))
    for name, g in zip(params, gs):
        assert g.shape == model.params[name].shape
        assert np.all(np.isfinite(g.data))
    nonzero = sum(float(np.abs(g.data).sum()) > 0 for g in gs)
    assert nonzero >= len(gs) - 2  # head beta/bias chains can be tiny but not absent


def test_flatten_unflatten_roundtrip() -> None:
    spec = ModelSpec(depth=2, canvas=16)
    params = init_params(spec, stream(4, "init", 0).numpy_rng())
    vec = flatten_params(spec, params)
    assert vec.shape == (spec.n_params,)
    back = unflatten_params(spec, vec)
    for name in params:
        assert np.array_equal(back[name], params[name])
    with pytest.raises(Exception):
        unflatten_params(spec, vec[:-1])


def test_checkpoint_roundtrip(tmp_path) -> None:
    spec = ModelSpec(depth=2, canvas=16)
    model = ConvNet.create(spec, stream(5, "init", 0).numpy_rng())
    model.bn_states[0].mean[:] = 0.25
    model.bn_states[0].count = 7
    path = tmp_path / "m.rmwt"
    save_checkpoint(path, model, {"task": "demo", "seed": 5})
    loaded, meta = load_checkpoint(path)
    assert loaded.spec == spec
    assert np.array_equal(loaded.get_flat(), model.get_flat())
    assert np.allclose(loaded.bn_states[0].mean, 0.25)
    assert loaded.bn_states[0].count == 7
    assert meta == {"task": "demo", "seed": 5}


def test_checkpoint_bad_magic_rejected(tmp_path) -> None:
    p = tmp_path / "junk.rmwt"
    p.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(ValueError):
        load_checkpoint(p)


def test_checkpoint_eval_consistency(tmp_path) -> None:
    # a reloaded model must produce bit-identical logits
    spec = ModelSpec(depth=2, canvas=16, dropout=0.0)
    model = ConvNet.create(spec, stream(6, "init", 0).numpy_rng())
    x = np.random.default_rng(3).random((2, 3, 16, 16), dtype=np.float32)
    model.forward(x, bn_training=True, update_running=True)
    want = model.forward(x, bn_training=True).data
    path = tmp_path / "m.rmwt"
    save_checkpoint(path, model)
    loaded, _ = load_checkpoint(path)
    assert np.array_equal(loaded.forward(x, bn_training=True).data, want)
