"""Quantitative companions to the qualitative experiments: nearest-neighbor
memorization checks, reflection metrics for the modified-dataset study,
snapshot-series reporting, and cross-network generalization scoring."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage, stats as sstats

from . import am, checkpoint, models, ppm
from .errors import InputError
from .tensor import Tensor


@dataclass(frozen=True)
class NNQueryResult:
    space: str  # "pixel" or an encoder layer name
    index: int  # into the dataset as given
    distance: float
    class_restrict: int | None = None


def _embed(images, space, encoder, batch_size=256):
    if space == "pixel":
        return np.asarray(images, dtype=np.float32).reshape(len(images), -1)
    if encoder is None:
        raise InputError(f"code space {space!r} requires an encoder instance")
    feats = []
    for i in range(0, len(images), batch_size):
        code = models.forward_to_layer(encoder, space, Tensor(images[i : i + batch_size]))
        feats.append(code.values.data.reshape(len(code.values.data), -1))
    return np.concatenate(feats)


def nearest_neighbor(query, dataset, space="pixel", encoder=None, class_restrict=None):
    """Exhaustive exact nearest neighbor by Euclidean distance; ties break to
    the lowest dataset index."""
    if class_restrict is not None:
        idx = np.flatnonzero(dataset.labels == class_restrict)
        if len(idx) == 0:
            raise InputError(f"no dataset images with class {class_restrict}")
    else:
        idx = np.arange(len(dataset))
    feats = _embed(dataset.images[idx], space, encoder)
    q = _embed(np.asarray(query, dtype=np.float32)[None], space, encoder)[0]
    d2 = ((feats - q) ** 2).sum(axis=1)
    best = int(d2.argmin())
    return NNQueryResult(space, int(idx[best]), float(np.sqrt(d2[best])), class_restrict)


# ---------------------------------------------------------------------------
# reflection metrics

def laplacian_energy(image):
    """Mean squared Laplacian response; high-frequency content proxy."""
    return float(np.mean([np.mean(ndimage.laplace(ch) ** 2) for ch in image]))


def seam_discontinuity(image):
    """Mean absolute jump across the two central quadrant seams."""
    c, h, w = image.shape
    horiz = np.abs(image[:, h // 2, :] - image[:, h // 2 - 1, :]).mean()
    vert = np.abs(image[:, :, w // 2] - image[:, :, w // 2 - 1]).mean()
    return float((horiz + vert) / 2.0)


def _channel_histograms(images, bins=16):
    out = []
    for c in range(images.shape[1]):
        h, _ = np.histogram(images[:, c], bins=bins, range=(0.0, 1.0), density=True)
        out.append(h)
    return np.stack(out)


def identify_channel_permutation(group_b, group_a, bins=16):
    """Permutation p minimizing the histogram distance between B's channels
    and A's channels under out[c] = in[p[c]]; returns (p, costs by p)."""
    hb = _channel_histograms(np.asarray(group_b), bins)
    ha = _channel_histograms(np.asarray(group_a), bins)
    costs = {}
    for p in itertools.permutations(range(hb.shape[0])):
        costs[p] = float(sum(np.abs(hb[c] - ha[p[c]]).sum() for c in range(hb.shape[0])))
    best = min(costs, key=lambda p: (costs[p], p))
    return best, costs


def identify_channel_permutation_paired(images, classes, dataset):
    """Permutation p minimizing the class-paired channel-mean distance: each
    image's per-channel mean is compared against its class's dataset mean
    under out[c] = in[p[c]]. Far more sensitive than pooled histograms when
    a shared background dominates the pixels."""
    images = np.asarray(images, dtype=np.float32)
    means = images.mean(axis=(2, 3))
    ref = []
    for c in classes:
        members = dataset.images[dataset.labels == c]
        if len(members) == 0:
            raise InputError(f"no dataset images with class {c}")
        ref.append(members.mean(axis=(0, 2, 3)))
    ref = np.stack(ref)
    costs = {}
    for p in itertools.permutations(range(images.shape[1])):
        costs[p] = float(np.abs(means - ref[:, list(p)]).sum())
    best = min(costs, key=lambda p: (costs[p], p))
    return best, costs


def _cohens_d(a, b):
    pooled = np.sqrt((np.var(a) + np.var(b)) / 2.0)
    if pooled == 0:
        return 0.0
    return float((np.mean(b) - np.mean(a)) / pooled)


@dataclass
class ReflectionReport:
    kind: str
    group_a: dict  # regular-class syntheses: metric name -> per-image values
    group_b: dict  # modified-class syntheses
    separation: dict  # metric name -> {mean_a, mean_b, cohen_d, ranksum_p}
    identified_permutation: tuple | None = None
    permutation_costs: dict = field(default_factory=dict)
    regular_permutation: tuple | None = None  # same score applied to group A


METRICS = {"laplacian_energy": laplacian_energy, "seam_discontinuity": seam_discontinuity}


def reflection_metrics(group_a, group_b, kind, reference=None, classes=None):
    """Compare regular-class syntheses (a) against modified-class ones (b).

    For the channel-permutation study, a `reference` dataset plus the original
    class of each synthesis (`classes`, shared by both groups) switches the
    permutation score to the class-paired form; otherwise pooled channel
    histograms of group A stand in as the reference."""
    if len(group_a) == 0 or len(group_b) == 0:
        raise InputError("both groups must be non-empty")
    group_a = np.asarray(group_a, dtype=np.float32)
    group_b = np.asarray(group_b, dtype=np.float32)
    ga, gb, sep = {}, {}, {}
    for name, fn in METRICS.items():
        va = np.array([fn(im) for im in group_a])
        vb = np.array([fn(im) for im in group_b])
        ga[name], gb[name] = va, vb
        p = float(sstats.ranksums(va, vb).pvalue) if (va.std() or vb.std()) else 1.0
        sep[name] = {"mean_a": float(va.mean()), "mean_b": float(vb.mean()),
                     "cohen_d": _cohens_d(va, vb), "ranksum_p": p}
    for c in range(group_a.shape[1]):
        ga[f"channel{c}_mean"] = group_a[:, c].reshape(len(group_a), -1).mean(axis=1)
        gb[f"channel{c}_mean"] = group_b[:, c].reshape(len(group_b), -1).mean(axis=1)
    report = ReflectionReport(kind, ga, gb, sep)
    if kind == "channel_brg" and group_a.shape[1] == 3:
        if reference is not None:
            if classes is None:
                classes = list(range(len(group_a)))
            perm, costs = identify_channel_permutation_paired(group_b, classes, reference)
            report.regular_permutation = identify_channel_permutation_paired(group_a, classes, reference)[0]
        else:
            perm, costs = identify_channel_permutation(group_b, group_a)
        report.identified_permutation = perm
        report.permutation_costs = {"".join(map(str, k)): v for k, v in costs.items()}
    return report


def write_reflection_csv(path, report):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["metric", "group", "mean", "cohen_d", "ranksum_p"])
        for name, s in report.separation.items():
            w.writerow([name, "regular", f"{s['mean_a']:.8g}", f"{s['cohen_d']:.8g}", f"{s['ranksum_p']:.8g}"])
            w.writerow([name, "modified", f"{s['mean_b']:.8g}", f"{s['cohen_d']:.8g}", f"{s['ranksum_p']:.8g}"])
        if report.identified_permutation is not None:
            w.writerow(["identified_permutation", "modified",
                        "".join(map(str, report.identified_permutation)), "", ""])
        if report.regular_permutation is not None:
            w.writerow(["identified_permutation", "regular",
                        "".join(map(str, report.regular_permutation)), "", ""])


# ---------------------------------------------------------------------------
# snapshot series

def snapshot_report(ckpt_paths, units, G, stats, cfg, out_dir, training_log=None):
    """Synthesize each unit against every checkpoint with a fixed seed.

    Emits one montage per checkpoint plus a CSV table
    (iteration, unit, activation, val_accuracy). Returns the table rows.
    """
    if len(ckpt_paths) < 2:
        raise InputError("need at least 2 checkpoints for a snapshot report")
    val_acc = {}
    if training_log:
        for it, split, metric, value in training_log:
            if split == "val" and metric == "accuracy":
                val_acc[int(it)] = float(value)
    rows = []
    for path in ckpt_paths:
        net = checkpoint.load_instance(path)
        iteration = int(net.training_meta.get("iterations", -1))
        images = []
        for u in units:
            res = am.synthesize(net, "logits", u, G, stats, cfg)
            images.append(res.image)
            rows.append([iteration, u, res.best_activation, val_acc.get(iteration, "")])
        ppm.write_montage(f"{out_dir}/snapshot_iter{iteration:06d}.ppm", images)
    with open(f"{out_dir}/snapshots.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "unit", "activation", "val_accuracy"])
        w.writerows(rows)
    return rows


# ---------------------------------------------------------------------------
# cross-network generalization

def activation_percentile(value, val_activations):
    """Rank of `value` within the unit's validation activations, in [0, 100];
    undefined (nan) for a constant distribution."""
    val_activations = np.asarray(val_activations)
    if val_activations.std() == 0:
        return float("nan")
    return float(100.0 * np.mean(val_activations <= value))


def validation_activations(net, layer, images, batch_size=256):
    """Per-unit activations over a validation set, for output-style layers."""
    acts = []
    for i in range(0, len(images), batch_size):
        code = models.forward_to_layer(net, layer, Tensor(images[i : i + batch_size]))
        v = code.values.data
        if v.ndim == 4:
            v = v[:, :, v.shape[2] // 2, v.shape[3] // 2]
        acts.append(v)
    return np.concatenate(acts)


def generalization_score(target, target_layer, units, G, stats, cfg, val_images):
    """Per-unit (synthesized activation, percentile in the unit's validation
    activation distribution). Also returns the syntheses for reuse."""
    if G.spec.output_shape() != tuple(target.spec.input_shape):
        raise InputError("target input shape must equal generator output shape")
    val_acts = validation_activations(target, target_layer, val_images)
    out = []
    images = []
    for u in units:
        res = am.synthesize(target, target_layer, u, G, stats, replace(cfg, seed=cfg.seed + u))
        pct = activation_percentile(res.best_activation, val_acts[:, u])
        out.append((u, res.best_activation, pct))
        images.append(res.image)
    return out, images


def write_scores_csv(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["unit", "activation", "percentile"])
        for u, a, p in rows:
            w.writerow([u, f"{a:.8g}", "" if np.isnan(p) else f"{p:.8g}"])
