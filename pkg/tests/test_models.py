import numpy as np
import pytest

from dgnam import models
from dgnam.errors import DimensionError, InputError
from dgnam.models import LayerSpec, NetworkSpec
from dgnam.tensor import Tensor

from gradcheck import check_gradients

rng = np.random.default_rng(99)


def small_image(n=1, shape=(3, 32, 32)):
    return Tensor(rng.uniform(0, 1, (n, *shape)).astype(np.float32))


@pytest.fixture(scope="module")
def encoder():
    return models.init_instance(models.encoder_a_spec(), seed=4)


class TestForward:
    def test_zero_parameter_linear_net(self):
        spec = NetworkSpec((LayerSpec("lin", "dense", {"in": 4, "out": 3}),), (4,))
        net = models.init_instance(spec, seed=0, weight_scale=0.0)
        out = models.forward(net, Tensor(rng.uniform(-1, 1, (2, 4)).astype(np.float32)))
        np.testing.assert_array_equal(out.data, np.zeros((2, 3)))

    def test_identity_layer_returns_input(self):
        spec = NetworkSpec((LayerSpec("same", "reshape", {"shape": (4,)}),), (4,))
        net = models.init_instance(spec, seed=0)
        x = rng.uniform(-1, 1, (2, 4)).astype(np.float32)
        np.testing.assert_array_equal(models.forward(net, Tensor(x)).data, x)

    def test_run_twice_byte_identical(self, encoder):
        x = small_image(2)
        a = models.forward(encoder, x).data.tobytes()
        b = models.forward(encoder, x).data.tobytes()
        assert a == b

    def test_input_shape_mismatch(self, encoder):
        with pytest.raises(DimensionError, match="input shape"):
            models.forward(encoder, small_image(1, (3, 16, 16)))


class TestForwardToLayer:
    def test_final_layer_equals_forward(self, encoder):
        x = small_image()
        full = models.forward(encoder, x)
        code = models.forward_to_layer(encoder, "logits", x)
        np.testing.assert_array_equal(code.values.data, full.data)

    def test_unknown_layer(self, encoder):
        with pytest.raises(KeyError):
            models.forward_to_layer(encoder, "nope", small_image())

    @pytest.mark.parametrize("layer", models.CODE_LAYERS)
    def test_prefix_resume_equals_full(self, encoder, layer):
        x = small_image()
        code = models.forward_to_layer(encoder, layer, x)
        resumed = models.forward_from_layer(encoder, layer, code.values)
        np.testing.assert_array_equal(resumed.data, models.forward(encoder, x).data)

    def test_post_relu_codes_nonnegative(self, encoder):
        x = small_image(8)
        for layer in models.CODE_LAYERS:
            code = models.forward_to_layer(encoder, layer, x)
            assert code.values.data.min() >= 0.0


class TestUnitActivation:
    def test_final_layer_unit_equals_logit(self, encoder):
        x = small_image()
        logits = models.forward(encoder, x)
        act = models.unit_activation(encoder, "logits", 3, x)
        assert act.item() == float(logits.data[0, 3])

    def test_zero_weight_unit_is_zero(self):
        spec = NetworkSpec((LayerSpec("lin", "dense", {"in": 4, "out": 2}),), (4,))
        net = models.init_instance(spec, seed=0, weight_scale=0.0)
        assert models.unit_activation(net, "lin", 1, Tensor(rng.uniform(-1, 1, (1, 4)).astype(np.float32))).item() == 0.0

    def test_spatial_unit_is_center_slice(self, encoder):
        x = small_image()
        code = models.forward_to_layer(encoder, "conv2_relu", x)
        _, c, h, w = code.values.shape
        act = models.unit_activation(encoder, "conv2_relu", 5, x)
        assert act.item() == float(code.values.data[0, 5, h // 2, w // 2])

    def test_index_out_of_range(self, encoder):
        with pytest.raises(InputError, match="out of range"):
            models.unit_activation(encoder, "logits", 20, small_image())


class TestSpecValidation:
    def test_incompatible_shapes_name_layer(self):
        with pytest.raises(DimensionError, match="bad"):
            NetworkSpec(
                (LayerSpec("ok", "dense", {"in": 4, "out": 3}),
                 LayerSpec("bad", "dense", {"in": 5, "out": 2})),
                (4,),
            )

    def test_duplicate_names_rejected(self):
        with pytest.raises(InputError, match="unique"):
            NetworkSpec((LayerSpec("a", "flatten"), LayerSpec("a", "flatten")), (3, 4, 4))

    def test_missing_code_layer_rejected(self):
        with pytest.raises(InputError, match="code layer"):
            NetworkSpec((LayerSpec("a", "flatten"),), (3, 4, 4), ("ghost",))


class TestBuiltinSpecs:
    def test_generator_output_matches_encoder_input(self):
        specs = models.builtin_specs()
        for layer in models.CODE_LAYERS:
            g = specs["generator_for"](layer)
            assert g.output_shape() == tuple(specs["encoder_a"].input_shape)

    def test_comparator_is_encoder_truncation(self, encoder):
        comp = models.truncate_instance(encoder, models.COMPARATOR_LAYER)
        x = small_image()
        via_comp = models.forward(comp, x)
        via_trunc = models.forward_to_layer(encoder, models.COMPARATOR_LAYER, x)
        np.testing.assert_array_equal(via_comp.data, via_trunc.values.data)

    def test_encoder_b_architecturally_distinct(self):
        specs = models.builtin_specs()
        kinds_a = [l.kind for l in specs["encoder_a"].layers]
        kinds_b = [l.kind for l in specs["encoder_b"].layers]
        assert kinds_a != kinds_b
        assert specs["encoder_a"].output_shape() == specs["encoder_b"].output_shape()
        assert tuple(specs["encoder_a"].input_shape) == tuple(specs["encoder_b"].input_shape)

    def test_generator_unknown_layer(self):
        with pytest.raises(KeyError):
            models.generator_spec("pool1")

    def test_discriminator_single_logit(self):
        assert models.discriminator_spec().output_shape() == (1,)


def test_encoder_through_generator_composite_gradient():
    # tiny encoder/generator pair; code gradient vs the finite-difference oracle
    enc = models.init_instance(
        NetworkSpec(
            (LayerSpec("c", "conv", {"in": 1, "out": 2, "k": 3, "stride": 1, "pad": 1}),
             LayerSpec("a", "activation", {"fn": "tanh"}),
             LayerSpec("f", "flatten"),
             LayerSpec("d", "dense", {"in": 2 * 16, "out": 3})),
            (1, 4, 4),
        ),
        seed=5,
    )
    gen = models.init_instance(
        NetworkSpec(
            (LayerSpec("gd", "dense", {"in": 6, "out": 16}),
             LayerSpec("ga", "activation", {"fn": "sigmoid"}),
             LayerSpec("gr", "reshape", {"shape": (1, 4, 4)})),
            (6,),
        ),
        seed=6,
    )

    def build(ts):
        img = models.forward(gen, ts[0])
        return models.unit_activation(enc, "d", 1, img)

    check_gradients(build, [rng.uniform(-1, 1, (1, 6))])
