"""Session-scoped artifacts shared by the end-to-end acceptance tests.

Everything here is deterministic; the heavyweight fixtures (trained
networks) are built once per session and reused across criteria.
"""

import numpy as np
import pytest

from dgnam import analysis, checkpoint, data as D, models, training
from dgnam.am import AMConfig
from dgnam.training import TrainConfig

TOY_SEED = 0
IMAGE_SHAPE = (3, 32, 32)
NUM_CLASSES = 20
CODE_LAYER = "fc1_relu"

SYNTH_CFG = AMConfig(seed=0, iterations=150, learning_rate=1.0)


@pytest.fixture(scope="session")
def toy_splits():
    ds = D.make_toy_dataset(per_class=40, size=32, seed=TOY_SEED)
    train, val = D.split_dataset(ds, 0.2, seed=TOY_SEED)
    return ds, train, val


@pytest.fixture(scope="session")
def base_encoder(toy_splits, tmp_path_factory):
    """encoder_a trained to convergence, with a checkpoint series for the
    snapshot study. Returns (instance, log, checkpoint paths)."""
    _, train, val = toy_splits
    out = tmp_path_factory.mktemp("base_encoder")
    spec = models.encoder_a_spec(IMAGE_SHAPE, NUM_CLASSES)
    cfg = TrainConfig(epochs=15, batch_size=32, lr=1e-3, seed=0, checkpoint_every=60)
    return training.train_classifier(spec, train, val, cfg, out_dir=str(out))


@pytest.fixture(scope="session")
def code_stats(base_encoder, toy_splits):
    _, _, val = toy_splits
    return training.compute_code_stats(base_encoder[0], CODE_LAYER, val.images)


def train_generator(encoder, code_layer, train_ds, seed=0, epochs=40):
    g_spec = models.generator_spec(code_layer, IMAGE_SHAPE, encoder.spec)
    d_spec = models.discriminator_spec(IMAGE_SHAPE)
    comp = models.truncate_instance(encoder, models.COMPARATOR_LAYER)
    cfg = TrainConfig(epochs=epochs, batch_size=32, lr=2e-3, lr_decay=0.97, seed=seed)
    return training.train_dgn(g_spec, d_spec, encoder, comp, code_layer,
                              models.COMPARATOR_LAYER, train_ds, cfg)


@pytest.fixture(scope="session")
def generator_fc(base_encoder, toy_splits):
    _, train, _ = toy_splits
    G, _, log, _ = train_generator(base_encoder[0], CODE_LAYER, train)
    return G, log


@pytest.fixture(scope="session")
def encoder_b(toy_splits):
    _, train, val = toy_splits
    spec = models.encoder_b_spec(IMAGE_SHAPE, NUM_CLASSES)
    cfg = TrainConfig(epochs=15, batch_size=32, lr=1e-3, seed=1)
    net, _, _ = training.train_classifier(spec, train, val, cfg)
    return net


@pytest.fixture(scope="session")
def unit_syntheses(base_encoder, generator_fc, code_stats, toy_splits):
    """One synthesis per output unit of the base encoder, with activation
    percentiles against the validation set; reused by several criteria."""
    _, _, val = toy_splits
    rows, images = analysis.generalization_score(
        base_encoder[0], "logits", list(range(NUM_CLASSES)),
        generator_fc[0], code_stats, SYNTH_CFG, val.images)
    return rows, images


@pytest.fixture(scope="session", params=["quarter_shuffle", "channel_brg", "gaussian_blur"])
def modified_study(request, toy_splits, generator_fc):
    """Per modification kind: an encoder retrained on the doubled dataset and
    syntheses for every unit (regular classes first, modified classes after)."""
    kind = request.param
    ds, _, _ = toy_splits
    mod = D.build_modified_dataset(ds, D.Modification(kind, seed=0, radius=3.0))
    mtrain, mval = D.split_dataset(mod, 0.2, seed=0)
    spec = models.encoder_a_spec(IMAGE_SHAPE, 2 * NUM_CLASSES)
    cfg = TrainConfig(epochs=15, batch_size=32, lr=1e-3, seed=2)
    enc, _, _ = training.train_classifier(spec, mtrain, mval, cfg)
    stats = training.compute_code_stats(enc, CODE_LAYER, mval.images)
    images = []
    for u in range(2 * NUM_CLASSES):
        from dgnam import am

        res = am.synthesize(enc, "logits", u, generator_fc[0], stats,
                            AMConfig(seed=u, iterations=150, learning_rate=1.0))
        images.append(res.image)
    return kind, enc, np.stack(images)


@pytest.fixture(scope="session")
def overfit_encoder(toy_splits):
    """encoder_a trained on 10% of the training split (overfit comparison)."""
    _, train, val = toy_splits
    rng = np.random.default_rng(0)
    keep = np.sort(rng.permutation(len(train))[: len(train) // 10])
    small = D.Dataset(train.images[keep], train.labels[keep], list(train.class_names), "train")
    spec = models.encoder_a_spec(IMAGE_SHAPE, NUM_CLASSES)
    net, _, _ = training.train_classifier(spec, small, val, TrainConfig(epochs=40, batch_size=16, lr=1e-3, seed=3))
    return net
