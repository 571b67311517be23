"""Classifier training, generator/discriminator training against a frozen
encoder and comparator, and code statistics for the clipping box.

Logs are CSV rows `iteration,split,metric,value`; checkpoints use the
package's binary container. All runs are deterministic given the seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint, models
from . import tensor as T
from .errors import InputError, TrainingError
from .optim import AdamState, adam_step, sgd_step
from .tensor import Tensor


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 32
    lr: float = 1e-3
    lr_decay: float = 1.0  # multiplicative, per epoch
    optimizer: str = "adam"
    momentum: float = 0.9
    seed: int = 0
    checkpoint_every: int = 0  # iterations; 0 disables periodic checkpoints
    w_img: float = 1.0
    w_feat: float = 1.0
    w_adv: float = 0.01

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InputError("epochs and batch_size must be positive")
        if min(self.w_img, self.w_feat, self.w_adv) < 0 or max(self.w_img, self.w_feat, self.w_adv) == 0:
            raise InputError("loss weights must be >= 0 with at least one > 0")


@dataclass
class CodeStats:
    layer: str
    mean: np.ndarray  # per unit, flattened layer order
    std: np.ndarray  # population standard deviation
    count: int

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float32)
        self.std = np.asarray(self.std, dtype=np.float32)
        if self.mean.shape != self.std.shape:
            raise InputError("mean/std length mismatch")
        if self.count < 2:
            raise InputError("code stats need at least 2 samples")
        if self.std.min() < 0:
            raise InputError("std must be non-negative")


def write_log(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "split", "metric", "value"])
        w.writerows(rows)


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for i in range(0, n - batch_size + 1, batch_size):
        yield order[i : i + batch_size]


def _make_stepper(params, cfg):
    if cfg.optimizer == "adam":
        state = AdamState(params)
        return lambda lr: adam_step(params, state, lr)
    vel = {"s": None}

    def step(lr):
        vel["s"] = sgd_step(params, lr, cfg.momentum, vel["s"])

    return step


def accuracy(net, ds, batch_size=128):
    hits = 0
    for i in range(0, len(ds), batch_size):
        logits = models.forward(net, Tensor(ds.images[i : i + batch_size]))
        hits += int((logits.data.argmax(axis=1) == ds.labels[i : i + batch_size]).sum())
    return hits / len(ds)


def train_classifier(spec, train_ds, val_ds, cfg, out_dir=None):
    """Returns (instance, log rows, checkpoint paths)."""
    if spec.output_shape()[0] != train_ds.num_classes:
        raise InputError(
            f"spec emits {spec.output_shape()[0]} logits but dataset has {train_ds.num_classes} classes"
        )
    rng = np.random.default_rng(cfg.seed)
    net = models.init_instance(spec, seed=cfg.seed, meta={"seed": cfg.seed, "iterations": 0})
    params = net.param_list()
    step = _make_stepper(params, cfg)
    log, ckpts = [], []
    it = 0
    lr = cfg.lr

    def snapshot():
        net.training_meta["iterations"] = it
        log.append([it, "train", "accuracy", f"{accuracy(net, train_ds):.6f}"])
        log.append([it, "val", "accuracy", f"{accuracy(net, val_ds):.6f}"])
        if out_dir is not None:
            path = f"{out_dir}/encoder_iter{it:06d}.ckpt"
            checkpoint.save_instance(path, net)
            ckpts.append(path)

    for _ in range(cfg.epochs):
        for idx in _batches(len(train_ds), cfg.batch_size, rng):
            logits = models.forward(net, Tensor(train_ds.images[idx]))
            loss = T.softmax_cross_entropy(logits, train_ds.labels[idx])
            if not np.isfinite(loss.item()):
                raise TrainingError(f"loss diverged (NaN/Inf) at iteration {it}")
            T.backward(loss)
            step(lr)
            it += 1
            log.append([it, "train", "loss", f"{loss.item():.6f}"])
            if cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
                snapshot()
        lr *= cfg.lr_decay
    if not cfg.checkpoint_every or it % cfg.checkpoint_every:
        snapshot()
    return net, log, ckpts


def compute_code_stats(encoder, layer, images, batch_size=128):
    """Per-unit mean and population std of codes over a validation set."""
    if len(images) < 2:
        raise InputError("need at least 2 validation images for code stats")
    feats = []
    for i in range(0, len(images), batch_size):
        code = models.forward_to_layer(encoder, layer, Tensor(images[i : i + batch_size]))
        feats.append(code.values.data.reshape(len(code.values.data), -1))
    feats = np.concatenate(feats).astype(np.float64)
    return CodeStats(layer, feats.mean(axis=0), feats.std(axis=0), len(feats))


def dgn_losses(G, D, E, code_layer, C, comparator_layer, batch, cfg):
    """Generator and discriminator losses for one batch of real images.

    Returns (loss_G, loss_D, parts); loss_D is built on a detached generator
    output so each loss backpropagates only into its own network.
    """
    x = Tensor(batch)
    codes = models.forward_to_layer(E, code_layer, x).values.detach()
    codes = T.reshape(codes, (codes.shape[0], -1)) if len(codes.shape) > 2 and len(G.spec.input_shape) == 1 else codes
    fake = models.forward(G, codes)
    if fake.shape != x.shape:
        raise InputError(f"generator output {fake.shape} does not match images {x.shape}")

    l_img = T.mse(fake, x)
    feat_real = models.forward_to_layer(C, comparator_layer, x).values.detach()
    feat_fake = models.forward_to_layer(C, comparator_layer, fake).values
    l_feat = T.mse(feat_fake, feat_real)
    l_adv = T.bce_logits(models.forward(D, fake), 1.0)
    loss_g = T.mul_scalar(l_img, cfg.w_img) + T.mul_scalar(l_feat, cfg.w_feat) + T.mul_scalar(l_adv, cfg.w_adv)

    loss_d = T.bce_logits(models.forward(D, x), 1.0) + T.bce_logits(models.forward(D, fake.detach()), 0.0)
    parts = {"L_img": l_img.item(), "L_feat": l_feat.item(), "L_adv": l_adv.item()}
    return loss_g, loss_d, parts


# discriminator-balance rule: skip D updates after this many consecutive
# iterations of D loss below the floor, until it rises again
D_LOSS_FLOOR = 0.1
D_SKIP_PATIENCE = 200


def train_dgn(g_spec, d_spec, encoder, comparator, code_layer, comparator_layer, train_ds, cfg, out_dir=None):
    """Alternating D/G updates against a frozen encoder and comparator.

    Returns (G instance, D instance, log rows, checkpoint paths).
    """
    code_shape = encoder.spec.layer_output_shape(code_layer)
    flat_code = len(g_spec.input_shape) == 1
    want = (int(np.prod(code_shape)),) if flat_code else code_shape
    if tuple(g_spec.input_shape) != want:
        raise InputError(f"generator input {g_spec.input_shape} does not match code shape {code_shape}")
    if g_spec.output_shape() != tuple(encoder.spec.input_shape):
        raise InputError("generator output shape must equal encoder input shape")

    rng = np.random.default_rng(cfg.seed)
    G = models.init_instance(g_spec, seed=cfg.seed + 1, meta={"seed": cfg.seed, "code_layer": code_layer})
    D = models.init_instance(d_spec, seed=cfg.seed + 2, meta={"seed": cfg.seed})
    g_step = _make_stepper(G.param_list(), cfg)
    d_step = _make_stepper(D.param_list(), cfg)
    log, ckpts = [], []
    it = 0
    low_d = 0
    skipping_d = False
    lr = cfg.lr
    for _ in range(cfg.epochs):
        for idx in _batches(len(train_ds), cfg.batch_size, rng):
            loss_g, loss_d, parts = dgn_losses(G, D, encoder, code_layer, comparator, comparator_layer,
                                               train_ds.images[idx], cfg)
            dval = loss_d.item()
            if not (np.isfinite(loss_g.item()) and np.isfinite(dval)):
                raise TrainingError(f"loss diverged (NaN/Inf) at iteration {it}")
            if skipping_d and dval >= D_LOSS_FLOOR:
                skipping_d, low_d = False, 0
            if cfg.w_adv > 0 and not skipping_d:
                T.backward(loss_d)
                d_step(lr)
                low_d = low_d + 1 if dval < D_LOSS_FLOOR else 0
                if low_d >= D_SKIP_PATIENCE:
                    skipping_d = True
            T.backward(loss_g)
            g_step(lr)
            it += 1
            log.append([it, "train", "loss_G", f"{loss_g.item():.6f}"])
            log.append([it, "train", "loss_D", f"{dval:.6f}"])
            for k, v in parts.items():
                log.append([it, "train", k, f"{v:.6f}"])
            if out_dir is not None and cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
                path = f"{out_dir}/generator_iter{it:06d}.ckpt"
                G.training_meta["iterations"] = it
                checkpoint.save_instance(path, G)
                ckpts.append(path)
        lr *= cfg.lr_decay
    G.training_meta["iterations"] = it
    D.training_meta["iterations"] = it
    if out_dir is not None:
        path = f"{out_dir}/generator_iter{it:06d}.ckpt"
        checkpoint.save_instance(path, G)
        ckpts.append(path)
    return G, D, log, ckpts
