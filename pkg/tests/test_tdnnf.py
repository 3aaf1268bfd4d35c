"""Tests for the TDNN-F network (REQ-FUNC-NET-001..005)."""

import numpy as np
import pytest

from core.errors import (
    ArchitectureMismatchError,
    FormatError,
    MissingArtifactError,
    ShapeMismatchError,
)
from core.tdnnf import (
    STUDENT_PARAM_LIMIT,
    LayerKind,
    LayerSpec,
    Network,
    NetworkConfig,
    count_params,
    load_architecture,
    load_checkpoint,
    save_checkpoint,
    semiorth_error,
    semiorth_step,
)


def _net(name, pdfs=18, seed=1, dtype=np.float64):
    config = load_architecture(name).with_output_dim(pdfs)
    net = Network(config, seed=seed, dtype=dtype)
    last = len(config.layers) - 1
    rng = np.random.default_rng(seed)
    # output weights start at zero; randomize so outputs depend on the input
    net.params[f"{last}.W"] = rng.normal(size=net.params[f"{last}.W"].shape)
    return net


@pytest.mark.parametrize(
    "name, params, left",
    [("student", 358_034, 150), ("student-transfer", 325_266, 78)],
)
def test_shipped_students(name, params, left):
    """REQ-FUNC-NET-002: Students stay below 400k parameters with right context 10."""
    config = load_architecture(name).with_output_dim(18)
    assert count_params(config) == params < STUDENT_PARAM_LIMIT
    assert config.left_context == left
    assert config.right_context == 10
    assert count_params(load_architecture(name).with_output_dim(22)) < STUDENT_PARAM_LIMIT


def test_reference_am_and_teacher():
    am = load_architecture("am")
    teacher = load_architecture("teacher")
    assert count_params(am) == 314_816
    assert count_params(teacher) == 7_608_640
    assert teacher.right_context == 10
    assert teacher.left_context == 88
    assert teacher.layers[teacher.bottleneck_layer].bottleneck == 128


@pytest.mark.parametrize("name", ["tiny-student", "student-transfer"])
def test_outputs_ignore_frames_outside_context(name):
    """REQ-FUNC-NET-001: Perturbing frames outside [-L, +R] leaves the output row bit-exact."""
    net = _net(name)
    left, right = net.left_context, net.right_context
    rng = np.random.default_rng(0)
    frames = rng.normal(size=(3 * 12 + left + right + 40, 64))
    k = (left + 2) // 3 + 4
    centre = 3 * k
    base = net.forward(frames).output

    outside = frames.copy()
    mask = np.ones(len(frames), dtype=bool)
    mask[centre - left : centre + right + 1] = False
    outside[mask] += rng.normal(size=(int(mask.sum()), 64))
    np.testing.assert_array_equal(net.forward(outside).output[k], base[k])

    inside = frames.copy()
    inside[centre + right] += 1.0
    assert not np.array_equal(net.forward(inside).output[k], base[k])


def test_output_rows_every_third_frame():
    net = _net("tiny-student")
    for frames in (1, 2, 3, 4, 30, 31):
        out = net.forward(np.zeros((frames, 64))).output
        assert out.shape == (-(-frames // 3), 18)
        np.testing.assert_allclose(np.exp(out).sum(axis=1), 1.0)
    assert net.forward(np.zeros((0, 64))).output.shape == (0, 18)


def test_capture_returns_lower_and_bottleneck():
    teacher = Network(load_architecture("tiny-teacher"), seed=3)
    result = teacher.forward(np.random.default_rng(1).normal(size=(20, 64)), capture=True)
    assert result.taps["bottleneck"].shape == (7, 16)
    assert result.taps["lower"].shape == (7, 32)


def test_semiorth_converges_on_random_factor():
    """REQ-FUNC-NET-003: A random 64 x 128 factor reaches error < 1e-3 within 20 steps."""
    m = np.random.default_rng(0).standard_normal((64, 128))
    for _ in range(20):
        m = semiorth_step(m)
    assert semiorth_error(m) < 1e-3


def test_semiorth_leaves_orthonormal_rows_alone():
    q, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((10, 4)))
    m = q.T
    np.testing.assert_array_equal(semiorth_step(m), m)
    with pytest.raises(ShapeMismatchError):
        semiorth_step(np.ones((5, 3)))


def test_backward_matches_finite_differences():
    """REQ-FUNC-NET-004: Analytic parameter gradients agree with central differences."""
    net = _net("tiny-student", seed=5)
    rng = np.random.default_rng(2)
    frames = rng.normal(size=(25, 64))
    g_out = rng.normal(size=net.forward(frames).output.shape)

    def loss():
        return float(np.sum(net.forward(frames).output * g_out))

    grads = net.backward(net.forward(frames), g_out)
    assert set(grads) == set(net.params)
    h = 1e-6
    for name, value in net.params.items():
        for _ in range(3):
            index = tuple(int(rng.integers(n)) for n in value.shape)
            original = value[index]
            value[index] = original + h
            up = loss()
            value[index] = original - h
            down = loss()
            value[index] = original
            numeric = (up - down) / (2 * h)
            assert grads[name][index] == pytest.approx(numeric, rel=1e-4, abs=1e-6), name


def test_frozen_layers_get_no_gradient():
    net = _net("tiny-student")
    net.freeze(2)
    frames = np.random.default_rng(0).normal(size=(12, 64))
    result = net.forward(frames)
    grads = net.backward(result, np.ones_like(result.output))
    assert grads
    assert not any(name.split(".")[0] in ("0", "1") for name in grads)
    assert set(net.trainable_names()) == set(grads)


def test_checkpoint_round_trip(tmp_path):
    """REQ-FUNC-NET-005: Saved networks reload with identical parameters and metadata."""
    net = Network(load_architecture("tiny-student").with_output_dim(18), seed=9)
    net.freeze(2)
    path = tmp_path / "m" / "model.ckpt"
    save_checkpoint(path, net, step=3, extra={"mode": "phone-align"})
    back, meta = load_checkpoint(path)
    assert meta["mode"] == "phone-align" and meta["step"] == 3
    assert back.frozen == {0, 1}
    assert back.digest() == net.digest()
    assert back.config == net.config


def test_checkpoint_errors(tmp_path):
    """REQ-FUNC-NET-005: Missing files and foreign bytes are reported."""
    with pytest.raises(MissingArtifactError):
        load_checkpoint(tmp_path / "none.ckpt")
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"WFGRAPH1" + bytes(8))
    with pytest.raises(FormatError):
        load_checkpoint(bad)


def test_architecture_validation():
    tdnn = LayerSpec(LayerKind.TDNN, offsets=(-1, 0, 6), dim=8)
    out = LayerSpec(LayerKind.OUTPUT, dim=4)
    with pytest.raises(ArchitectureMismatchError):
        NetworkConfig("wide", (tdnn, tdnn, out))
    with pytest.raises(ArchitectureMismatchError):
        NetworkConfig("unsorted", (LayerSpec(LayerKind.TDNN, offsets=(1, 0), dim=8), out))
    with pytest.raises(ShapeMismatchError):
        load_architecture("am").with_output_dim(18)
    with pytest.raises(MissingArtifactError):
        load_architecture("no-such-architecture")


def test_lower_stack_adds_linear_head():
    config = load_architecture("student-transfer").lower_stack(128)
    assert len(config.layers) == 7
    assert config.layers[-1].kind is LayerKind.LINEAR
    assert config.layers[-1].dim == 128
