import numpy as np
import pytest

from dgnam import data as D
from dgnam import models, tensor as T
from dgnam.errors import InputError
from dgnam.models import LayerSpec, NetworkSpec
from dgnam.tensor import Tensor
from dgnam.training import (
    CodeStats,
    TrainConfig,
    compute_code_stats,
    dgn_losses,
    train_classifier,
    train_dgn,
)
from tests.gradcheck import numeric_grad, rel_err


def tiny_classifier_spec(num_classes, size=8):
    return NetworkSpec(
        layers=(
            LayerSpec("conv1", "conv", {"in": 3, "out": 6, "k": 3, "pad": 1}),
            LayerSpec("conv1_relu", "activation", {"fn": "relu"}),
            LayerSpec("pool1", "pool", {"k": 2}),
            LayerSpec("flat", "flatten"),
            LayerSpec("fc1", "dense", {"in": 6 * (size // 2) ** 2, "out": 16}),
            LayerSpec("fc1_relu", "activation", {"fn": "relu"}),
            LayerSpec("logits", "dense", {"in": 16, "out": num_classes}),
        ),
        input_shape=(3, size, size),
        code_layers=("fc1_relu",),
    )


def tiny_generator_spec(code_dim, size=8):
    return NetworkSpec(
        layers=(
            LayerSpec("g_fc", "dense", {"in": code_dim, "out": 4 * (size // 2) ** 2}),
            LayerSpec("g_fc_relu", "activation", {"fn": "leaky_relu", "slope": 0.2}),
            LayerSpec("g_reshape", "reshape", {"shape": (4, size // 2, size // 2)}),
            LayerSpec("g_up", "conv_transpose", {"in": 4, "out": 3, "k": 4, "stride": 2, "pad": 1}),
            LayerSpec("g_out", "activation", {"fn": "sigmoid"}),
        ),
        input_shape=(code_dim,),
    )


def tiny_discriminator_spec(size=8):
    return NetworkSpec(
        layers=(
            LayerSpec("d_conv", "conv", {"in": 3, "out": 4, "k": 3, "stride": 2, "pad": 1}),
            LayerSpec("d_relu", "activation", {"fn": "leaky_relu", "slope": 0.2}),
            LayerSpec("d_flat", "flatten"),
            LayerSpec("d_logit", "dense", {"in": 4 * (size // 2) ** 2, "out": 1}),
        ),
        input_shape=(3, size, size),
    )


def two_blob_dataset(n_per=24, size=8, seed=0):
    """Linearly separable toy problem: bright-left vs bright-right images."""
    rng = np.random.default_rng(seed)
    images = rng.uniform(0, 0.2, (2 * n_per, 3, size, size)).astype(np.float32)
    labels = np.zeros(2 * n_per, dtype=np.int64)
    images[:n_per, :, :, : size // 2] += 0.7
    images[n_per:, :, :, size // 2 :] += 0.7
    labels[n_per:] = 1
    np.clip(images, 0, 1, out=images)
    return D.Dataset(images, labels, ["left", "right"])


class TestTrainClassifier:
    def test_single_class_reaches_full_accuracy(self):
        ds = D.Dataset(
            np.random.default_rng(0).uniform(0, 1, (8, 3, 8, 8)).astype(np.float32),
            np.zeros(8, dtype=np.int64),
            ["only"],
        )
        cfg = TrainConfig(epochs=2, batch_size=4, lr=1e-2, seed=0)
        net, log, _ = train_classifier(tiny_classifier_spec(1), ds, ds, cfg)
        from dgnam.training import accuracy

        assert accuracy(net, ds) == 1.0

    def test_separable_problem_learned(self):
        ds = two_blob_dataset()
        train, val = D.split_dataset(ds, 0.25, seed=1)
        cfg = TrainConfig(epochs=12, batch_size=8, lr=3e-3, seed=0)
        net, log, _ = train_classifier(tiny_classifier_spec(2), train, val, cfg)
        from dgnam.training import accuracy

        assert accuracy(net, val) > 0.95

    def test_deterministic_across_runs(self):
        ds = two_blob_dataset(n_per=8)
        cfg = TrainConfig(epochs=2, batch_size=4, lr=1e-3, seed=7)
        a, log_a, _ = train_classifier(tiny_classifier_spec(2), ds, ds, cfg)
        b, log_b, _ = train_classifier(tiny_classifier_spec(2), ds, ds, cfg)
        assert a.param_bytes() == b.param_bytes()
        assert log_a == log_b

    def test_class_count_mismatch_rejected(self):
        ds = two_blob_dataset(n_per=4)
        with pytest.raises(InputError, match="classes"):
            train_classifier(tiny_classifier_spec(5), ds, ds, TrainConfig(epochs=1, batch_size=4))

    def test_checkpoint_cadence(self, tmp_path):
        ds = two_blob_dataset(n_per=8)
        cfg = TrainConfig(epochs=2, batch_size=4, lr=1e-3, seed=0, checkpoint_every=3)
        _, _, ckpts = train_classifier(tiny_classifier_spec(2), ds, ds, cfg, out_dir=str(tmp_path))
        # 8 iterations total -> periodic at 3, 6 plus the final one at 8
        assert [p.split("iter")[-1] for p in ckpts] == ["000003.ckpt", "000006.ckpt", "000008.ckpt"]


class TestCodeStats:
    def test_hand_computed_mean_and_population_std(self):
        spec = NetworkSpec(
            layers=(LayerSpec("id", "activation", {"fn": "relu"}),),
            input_shape=(2,),
            code_layers=("id",),
        )
        net = models.init_instance(spec, seed=0)
        images = np.array([[0.0, 0.0], [2.0, 4.0]], dtype=np.float32)
        stats = compute_code_stats(net, "id", images)
        np.testing.assert_allclose(stats.mean, [1.0, 2.0])
        np.testing.assert_allclose(stats.std, [1.0, 2.0])
        assert stats.count == 2

    def test_too_few_samples(self):
        spec = NetworkSpec(
            layers=(LayerSpec("id", "activation", {"fn": "relu"}),),
            input_shape=(2,), code_layers=("id",),
        )
        net = models.init_instance(spec, seed=0)
        with pytest.raises(InputError, match="at least 2"):
            compute_code_stats(net, "id", np.zeros((1, 2), dtype=np.float32))

    def test_validation(self):
        with pytest.raises(InputError, match="mismatch"):
            CodeStats("l", np.zeros(3), np.zeros(2), 10)
        with pytest.raises(InputError, match="non-negative"):
            CodeStats("l", np.zeros(2), np.array([1.0, -1.0]), 10)


@pytest.fixture(scope="module")
def dgn_setup():
    ds = two_blob_dataset(n_per=12, seed=3)
    enc = models.init_instance(tiny_classifier_spec(2), seed=5)
    comp = models.truncate_instance(enc, "conv1_relu")
    g_spec = tiny_generator_spec(code_dim=16)
    d_spec = tiny_discriminator_spec()
    return ds, enc, comp, g_spec, d_spec


class TestDgnLosses:
    def test_zero_discriminator_gives_ln2_adversarial_term(self, dgn_setup):
        ds, enc, comp, g_spec, d_spec = dgn_setup
        G = models.init_instance(g_spec, seed=1)
        Dn = models.init_instance(d_spec, seed=2)
        for k in Dn.params:
            Dn.params[k].data[...] = 0.0
        cfg = TrainConfig(epochs=1, batch_size=4, w_img=0.0, w_feat=0.0, w_adv=1.0)
        loss_g, loss_d, parts = dgn_losses(G, Dn, enc, "fc1_relu", comp, "conv1_relu", ds.images[:4], cfg)
        assert parts["L_adv"] == pytest.approx(np.log(2), rel=1e-5)
        assert loss_g.item() == pytest.approx(np.log(2), rel=1e-5)
        assert loss_d.item() == pytest.approx(2 * np.log(2), rel=1e-5)

    def test_perfect_reconstruction_zeroes_img_and_feat(self, dgn_setup):
        ds, enc, comp, _, d_spec = dgn_setup
        # a generator that is the identity on images, fed image-shaped codes
        ident = NetworkSpec(
            layers=(LayerSpec("noop", "activation", {"fn": "relu"}),),
            input_shape=(3, 8, 8),
        )
        passthrough_enc = models.init_instance(
            NetworkSpec(
                layers=(LayerSpec("code", "activation", {"fn": "relu"}),),
                input_shape=(3, 8, 8), code_layers=("code",),
            ),
            seed=0,
        )
        G = models.init_instance(ident, seed=1)
        Dn = models.init_instance(d_spec, seed=2)
        cfg = TrainConfig(epochs=1, batch_size=4, w_img=1.0, w_feat=1.0, w_adv=1.0)
        _, _, parts = dgn_losses(G, Dn, passthrough_enc, "code", comp, "conv1_relu", ds.images[:4], cfg)
        assert parts["L_img"] == 0.0
        assert parts["L_feat"] == 0.0

    def test_frozen_networks_untouched_by_training(self, dgn_setup):
        ds, enc, comp, g_spec, d_spec = dgn_setup
        before_e, before_c = enc.param_bytes(), comp.param_bytes()
        cfg = TrainConfig(epochs=1, batch_size=6, lr=1e-3, seed=0)
        train_dgn(g_spec, d_spec, enc, comp, "fc1_relu", "conv1_relu", ds, cfg)
        assert enc.param_bytes() == before_e
        assert comp.param_bytes() == before_c

    def test_generator_loss_gradient_matches_finite_differences(self, dgn_setup):
        ds, enc, comp, g_spec, d_spec = dgn_setup
        G = models.init_instance(g_spec, seed=1)
        Dn = models.init_instance(d_spec, seed=2)
        cfg = TrainConfig(epochs=1, batch_size=2, w_img=1.0, w_feat=1.0, w_adv=0.5)
        batch = ds.images[:2].astype(np.float64)
        target = G.params["g_up.w"]
        base = target.data.astype(np.float64)

        def f(w):
            target.data = w.astype(np.float64)
            for k in list(G.params) + list(Dn.params) + list(enc.params) + list(comp.params):
                pass
            loss_g, _, _ = dgn_losses(G, Dn, enc, "fc1_relu", comp, "conv1_relu", batch, cfg)
            return loss_g

        # cast every participant to float64 so the FD oracle is not f32-limited
        for net in (G, Dn, enc, comp):
            for k in net.params:
                net.params[k].data = net.params[k].data.astype(np.float64)
        loss = f(base)
        T.backward(loss)
        got = target.grad.copy()
        want = numeric_grad(lambda w: f(w).item(), base, eps=1e-4)
        assert rel_err(got, want) < 1e-3


class TestTrainDgn:
    def test_reconstruction_error_decreases(self, dgn_setup):
        ds, enc, comp, g_spec, d_spec = dgn_setup
        cfg = TrainConfig(epochs=60, batch_size=6, lr=5e-3, seed=0, w_adv=0.0)
        with np.errstate(over="ignore"):
            G, _, log, _ = train_dgn(g_spec, d_spec, enc, comp, "fc1_relu", "conv1_relu", ds, cfg)
        img_losses = [float(r[3]) for r in log if r[2] == "L_img"]
        assert np.mean(img_losses[-4:]) < 0.6 * np.mean(img_losses[:4])

    def test_deterministic(self, dgn_setup):
        ds, enc, comp, g_spec, d_spec = dgn_setup
        cfg = TrainConfig(epochs=1, batch_size=6, lr=1e-3, seed=9)
        g1, d1, log1, _ = train_dgn(g_spec, d_spec, enc, comp, "fc1_relu", "conv1_relu", ds, cfg)
        g2, d2, log2, _ = train_dgn(g_spec, d_spec, enc, comp, "fc1_relu", "conv1_relu", ds, cfg)
        assert g1.param_bytes() == g2.param_bytes()
        assert d1.param_bytes() == d2.param_bytes()
        assert log1 == log2

    def test_code_shape_mismatch_rejected(self, dgn_setup):
        ds, enc, comp, _, d_spec = dgn_setup
        bad = tiny_generator_spec(code_dim=17)
        with pytest.raises(InputError, match="code shape"):
            train_dgn(bad, d_spec, enc, comp, "fc1_relu", "conv1_relu", ds,
                      TrainConfig(epochs=1, batch_size=6))
