"""
Unit tests for layers, the Adam optimizer and ZFCK checkpoints.
"""

import numpy as np
import pytest

from src.core.errors import FormatError, ShapeError
from src.nn import autodiff as ad
from src.nn.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from src.nn.layers import Activation, Conv2d, ConvTranspose2d, Mlp
from src.nn.optim import Adam, AdamState, adam_step
from tests.gradcheck import max_relative_error


@pytest.fixture
def rng():
    return np.random.default_rng(7)


class TestMlp:
    """Test suite for Mlp."""

    def test_same_seed_same_parameters(self):
        a = Mlp((3, 8, 3), Activation.RELU, np.random.default_rng(5))
        b = Mlp((3, 8, 3), Activation.RELU, np.random.default_rng(5))
        for (na, pa), (nb, pb) in zip(a.named_parameters().items(), b.named_parameters().items()):
            assert na == nb
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_parameter_names(self):
        mlp = Mlp((3, 4, 2), Activation.SIGMOID, np.random.default_rng(0))
        assert list(mlp.named_parameters()) == ["0.weight", "0.bias", "1.weight", "1.bias"]

    def test_init_bound(self):
        mlp = Mlp((16, 4), Activation.RELU, np.random.default_rng(0))
        assert np.all(np.abs(mlp.named_parameters()["0.weight"].data) <= 0.25)

    def test_last_layer_linear(self):
        mlp = Mlp((2, 3), Activation.RELU, np.random.default_rng(0))
        weight, bias = mlp.layers[0]
        x = np.array([[-5.0, 3.0]])
        np.testing.assert_allclose(mlp(x).data, x @ weight.data + bias.data)

    def test_rejects_wrong_width(self):
        mlp = Mlp((3, 4, 3), Activation.RELU, np.random.default_rng(0))
        with pytest.raises(ShapeError):
            mlp(np.ones((2, 4)))

    def test_gradients(self, rng):
        mlp = Mlp((3, 5, 3), Activation.SIGMOID, np.random.default_rng(1))
        x = rng.normal(size=(6, 3))
        loss = lambda: ad.reduce_mean(ad.square(mlp(x)))
        assert max_relative_error(loss, list(mlp.parameters())) <= 1e-4


class TestConvLayers:
    def test_conv_keeps_resolution(self):
        conv = Conv2d(2, 5, np.random.default_rng(0))
        assert conv(ad.Tensor(np.ones((2, 8, 8)))).shape == (5, 8, 8)

    def test_strided_conv_halves_resolution(self):
        conv = Conv2d(2, 4, np.random.default_rng(0), stride=2)
        assert conv(ad.Tensor(np.ones((2, 8, 8)))).shape == (4, 4, 4)

    def test_transposed_conv_doubles_resolution(self):
        up = ConvTranspose2d(4, 2, np.random.default_rng(0))
        assert up(ad.Tensor(np.ones((4, 4, 4)))).shape == (2, 8, 8)


class TestStateDict:
    def test_load_roundtrip_and_mismatch(self):
        a = Mlp((3, 4, 3), Activation.RELU, np.random.default_rng(0))
        b = Mlp((3, 4, 3), Activation.RELU, np.random.default_rng(1))
        b.load_state_dict(a.state_dict())
        np.testing.assert_array_equal(b(np.ones((1, 3))).data, a(np.ones((1, 3))).data)

        with pytest.raises(ShapeError):
            Mlp((3, 5, 3), Activation.RELU, np.random.default_rng(0)).load_state_dict(a.state_dict())


class TestAdam:
    """Test suite for adam_step and Adam."""

    def test_first_step_moves_by_lr(self):
        params = {"w": np.array([1.0, -2.0])}
        updated, state = adam_step(params, {"w": np.array([0.5, -3.0])}, AdamState(lr=0.1))
        # bias-corrected first step is lr * sign(grad)
        np.testing.assert_allclose(updated["w"], [0.9, -1.9], atol=1e-6)
        assert state.step == 1

    def test_inputs_not_mutated(self):
        params = {"w": np.array([1.0])}
        state = AdamState(lr=0.1)
        adam_step(params, {"w": np.array([1.0])}, state)
        assert state.step == 0
        assert params["w"][0] == 1.0

    def test_missing_gradient_counts_as_zero(self):
        updated, _ = adam_step({"w": np.array([1.0])}, {}, AdamState(lr=0.1))
        np.testing.assert_array_equal(updated["w"], [1.0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            adam_step({"w": np.ones(2)}, {"w": np.ones(3)}, AdamState(lr=0.1))

    def test_minimizes_quadratic(self):
        w = ad.parameter(np.array([3.0, -4.0]))
        optimizer = Adam({"w": w}, lr=0.1)
        for _ in range(300):
            optimizer.zero_grad()
            ad.reduce_sum(ad.square(w)).backward()
            optimizer.step()
        assert np.linalg.norm(w.data) < 0.1


class TestCheckpoint:
    """Test suite for ZFCK checkpoint files."""

    def test_roundtrip_is_exact(self, tmp_path):
        mlp = Mlp((3, 4, 3), Activation.RELU, np.random.default_rng(0))
        path = save_checkpoint(mlp.state_dict(), tmp_path / "sub" / "model.zfck")
        loaded = load_checkpoint(path)
        assert list(loaded) == list(mlp.state_dict())
        for name, values in mlp.state_dict().items():
            np.testing.assert_array_equal(loaded[name], values)

    def test_bad_magic(self):
        payload = encode_checkpoint({"w": np.ones(2)})
        with pytest.raises(FormatError):
            decode_checkpoint(b"NOPE" + payload[4:])

    def test_truncated(self):
        payload = encode_checkpoint({"w": np.ones((2, 3))})
        with pytest.raises(FormatError):
            decode_checkpoint(payload[:-8])

    def test_trailing_bytes(self):
        with pytest.raises(FormatError):
            decode_checkpoint(encode_checkpoint({"w": np.ones(2)}) + b"\x00")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "absent.zfck")

    def test_invalid_name_bytes(self, tmp_path):
        payload = bytearray(encode_checkpoint({"w": np.ones(2)}))
        # magic, version, entry count and name length precede the name
        assert payload[16:17] == b"w"
        payload[16] = 0xFF
        path = tmp_path / "corrupt.zfck"
        path.write_bytes(bytes(payload))
        with pytest.raises(FormatError, match="not valid UTF-8"):
            load_checkpoint(path)

    def test_truncated_inside_name(self):
        payload = encode_checkpoint({"weights": np.ones(2)})
        with pytest.raises(FormatError, match="parameter name"):
            decode_checkpoint(payload[:19])
