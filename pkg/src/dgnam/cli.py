"""Single executable exposing every pipeline stage.

Each subcommand reads an optional key=value config file, applies flag
overrides, writes its outputs plus a `manifest.txt` echoing the effective
configuration, and exits nonzero with a one-line diagnostic on any error.
"""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import functools
import glob as globmod
import sys
from pathlib import Path

import click
import numpy as np

from . import am, analysis, checkpoint, config as cfgmod, data as datamod, figures, models, ppm, training
from .errors import DimensionError, InputError, ParseError, SynthesisError, TrainingError

_ERRORS = (DimensionError, InputError, ParseError, TrainingError, SynthesisError, KeyError, FileNotFoundError, OSError)


def _run(fn):
    @functools.wraps(fn)
    def wrapper(*a, **kw):
        try:
            return fn(*a, **kw)
        except _ERRORS as e:
            msg = str(e) if not isinstance(e, KeyError) else e.args[0]
            click.echo(f"error: {msg}", err=True)
            sys.exit(1)

    return wrapper


def _effective(config_path, **flags):
    file_cfg = cfgmod.read_config(config_path) if config_path else {}
    eff = cfgmod.merged(file_cfg, {k: v for k, v in flags.items() if v is not None})
    if "seed" not in eff:
        raise InputError("seed is mandatory: pass --seed or set seed= in the config file")
    return eff


def _get(eff, key, typ, default=None):
    if key not in eff:
        if default is None:
            raise InputError(f"missing required config key {key!r}")
        return default
    return cfgmod.coerce(str(eff[key]), typ)


def _train_config(eff, **extra):
    fields = dict(
        epochs=_get(eff, "epochs", int, 5),
        batch_size=_get(eff, "batch_size", int, 32),
        lr=_get(eff, "lr", float, 1e-3),
        lr_decay=_get(eff, "lr_decay", float, 1.0),
        optimizer=_get(eff, "optimizer", str, "adam"),
        seed=_get(eff, "seed", int),
        checkpoint_every=_get(eff, "checkpoint_every", int, 0),
        w_img=_get(eff, "w_img", float, 1.0),
        w_feat=_get(eff, "w_feat", float, 1.0),
        w_adv=_get(eff, "w_adv", float, 0.01),
    )
    fields.update(extra)
    return training.TrainConfig(**fields)


def _am_config(eff):
    return am.AMConfig(
        lam=_get(eff, "lam", float, am.DEFAULT_LAMBDA),
        learning_rate=_get(eff, "learning_rate", float, 1.0),
        iterations=_get(eff, "iterations", int, 200),
        init=_get(eff, "init", str, "gaussian_from_stats"),
        seed=_get(eff, "seed", int),
        clip=_get(eff, "clip", bool, True),
        norm_mode=_get(eff, "norm_mode", str, "squared"),
        gamma=_get(eff, "gamma", float, 0.0),
    )


def _outdir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(out, command, eff):
    cfgmod.write_manifest(out / "manifest.txt", {"command": command, **eff})


def _load_split(eff):
    ds = datamod.open_dataset(eff["data"])
    frac = _get(eff, "data_fraction", float, 1.0)
    if not 0 < frac <= 1.0:
        raise InputError(f"data_fraction must be in (0, 1], got {frac}")
    train_ds, val_ds = datamod.split_dataset(ds, _get(eff, "val_fraction", float, 0.2), _get(eff, "seed", int))
    if frac < 1.0:
        rng = np.random.default_rng(_get(eff, "seed", int))
        keep = np.sort(rng.permutation(len(train_ds))[: max(1, int(len(train_ds) * frac))])
        train_ds = datamod.Dataset(train_ds.images[keep], train_ds.labels[keep],
                                   list(train_ds.class_names), "train")
    return train_ds, val_ds


@click.group()
def main():
    """Preferred-stimulus synthesis through a learned generator prior."""


@main.command("make-toy-data")
@click.option("--out", required=True)
@click.option("--per-class", type=int, default=100, show_default=True)
@click.option("--size", type=int, default=32, show_default=True)
@click.option("--seed", type=int, required=True)
@_run
def make_toy_data(out, per_class, size, seed):
    """Write the procedural (shape, color) toy dataset."""
    ds = datamod.make_toy_dataset(per_class=per_class, size=size, seed=seed)
    datamod.save_dataset(out, ds)
    click.echo(f"wrote {len(ds)} images, {ds.num_classes} classes to {out}")


@main.command("modify-data")
@click.option("--kind", "kind", required=True, type=click.Choice(["quarter_shuffle", "channel_brg", "gaussian_blur"]))
@click.option("--in", "in_path", required=True)
@click.option("--out", required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--radius", type=float, default=3.0, show_default=True)
@_run
def modify_data(kind, in_path, out, seed, radius):
    """Double the class count with modified copies of every class."""
    base = datamod.open_dataset(in_path)
    mod = datamod.Modification(kind, seed=seed, radius=radius)
    datamod.save_dataset(out, datamod.build_modified_dataset(base, mod))
    click.echo(f"wrote {2 * base.num_classes}-class dataset to {out}")


@main.command("train-encoder")
@click.option("--config", "config_path", default=None)
@click.option("--data", default=None)
@click.option("--arch", default=None, type=click.Choice(["encoder_a", "encoder_b"]))
@click.option("--seed", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--out", default="encoder_run", show_default=True)
@_run
def train_encoder(config_path, data, arch, seed, epochs, out):
    """Train a classifier; writes checkpoints, accuracy CSV, and a curve figure."""
    eff = _effective(config_path, data=data, arch=arch, seed=seed, epochs=epochs)
    train_ds, val_ds = _load_split(eff)
    archname = _get(eff, "arch", str, "encoder_a")
    builder = models.encoder_a_spec if archname == "encoder_a" else models.encoder_b_spec
    spec = builder(tuple(train_ds.images.shape[1:]), train_ds.num_classes)
    cfg = _train_config(eff)
    outdir = _outdir(out)
    net, log, ckpts = training.train_classifier(spec, train_ds, val_ds, cfg, out_dir=str(outdir))
    training.write_log(outdir / "training.csv", log)
    figures.curve_figure(log, "accuracy", outdir / "accuracy.png", f"{archname} accuracy")
    figures.curve_figure(log, "loss", outdir / "loss.png", f"{archname} loss")
    _manifest(outdir, "train-encoder", eff)
    click.echo(f"final val accuracy {training.accuracy(net, val_ds):.4f}; {len(ckpts)} checkpoints in {out}")


@main.command("train-dgn")
@click.option("--config", "config_path", default=None)
@click.option("--encoder", "encoder_path", required=True)
@click.option("--layer", required=True)
@click.option("--data", default=None)
@click.option("--seed", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--out", default="dgn_run", show_default=True)
@_run
def train_dgn(config_path, encoder_path, layer, data, seed, epochs, out):
    """Train the generator/discriminator pair against a frozen encoder."""
    eff = _effective(config_path, data=data, seed=seed, epochs=epochs, encoder=encoder_path, layer=layer)
    train_ds, _ = _load_split(eff)
    E = checkpoint.load_instance(encoder_path)
    g_spec = models.generator_spec(layer, tuple(E.spec.input_shape), E.spec)
    d_spec = models.discriminator_spec(tuple(E.spec.input_shape))
    C = models.truncate_instance(E, models.COMPARATOR_LAYER)
    cfg = _train_config(eff)
    outdir = _outdir(out)
    G, D, log, ckpts = training.train_dgn(g_spec, d_spec, E, C, layer, models.COMPARATOR_LAYER,
                                          train_ds, cfg, out_dir=str(outdir))
    checkpoint.save_instance(outdir / "generator.ckpt", G)
    checkpoint.save_instance(outdir / "discriminator.ckpt", D)
    training.write_log(outdir / "training.csv", log)
    for metric in ("loss_G", "loss_D", "L_img"):
        figures.curve_figure(log, metric, outdir / f"{metric}.png")
    _manifest(outdir, "train-dgn", eff)
    click.echo(f"trained generator for layer {layer}; outputs in {out}")


@main.command("code-stats")
@click.option("--encoder", "encoder_path", required=True)
@click.option("--layer", required=True)
@click.option("--data", required=True)
@click.option("--out", required=True)
@click.option("--seed", type=int, required=True)
@click.option("--val-fraction", type=float, default=0.2, show_default=True)
@_run
def code_stats(encoder_path, layer, data, out, seed, val_fraction):
    """Per-unit mean/std of validation-set codes; defines the clipping box."""
    E = checkpoint.load_instance(encoder_path)
    _, val_ds = datamod.split_dataset(datamod.open_dataset(data), val_fraction, seed)
    stats = training.compute_code_stats(E, layer, val_ds.images)
    checkpoint.save_code_stats(out, stats)
    click.echo(f"wrote stats for {len(stats.std)} units at layer {layer} to {out}")


def _emit_am_result(outdir, tag, res, extra=None):
    ppm.write_ppm(outdir / f"{tag}.ppm", res.image)
    with open(outdir / f"{tag}_trace.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "objective", "activation"])
        for i, (o, a) in enumerate(zip(res.objectives, res.activations)):
            w.writerow([i, f"{o:.8g}", f"{a:.8g}"])
    echo = {f.name: getattr(res.config, f.name) for f in dataclasses.fields(res.config)}
    echo.update({"best_iteration": res.best_iteration, "best_objective": f"{res.best_objective:.8g}",
                 "best_activation": f"{res.best_activation:.8g}"})
    echo.update(extra or {})
    cfgmod.write_manifest(outdir / f"{tag}_config.txt", echo)
    figures.trace_figure(res.objectives, res.activations, outdir / f"{tag}_trace.png", tag)


def _synth_one(args):
    target, layer, unit, G, stats, cfg = args
    return am.synthesize(target, layer, unit, G, stats, cfg)


@main.command("synthesize")
@click.option("--config", "config_path", default=None)
@click.option("--target", "target_path", required=True)
@click.option("--gen", "gen_path", required=True)
@click.option("--stats", "stats_path", default=None)
@click.option("--layer", default="logits", show_default=True, help="target layer holding the unit")
@click.option("--unit", required=True, help="unit index or comma-separated list")
@click.option("--unit2", type=int, default=None, help="second unit (pair mode)")
@click.option("--gamma", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--iterations", type=int, default=None)
@click.option("--learning-rate", type=float, default=None)
@click.option("--lam", type=float, default=None)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--out", default="synthesis", show_default=True)
@_run
def synthesize_cmd(config_path, target_path, gen_path, stats_path, layer, unit, unit2, gamma,
                   seed, iterations, learning_rate, lam, jobs, out):
    """Code-space activation maximization for one or more units."""
    eff = _effective(config_path, target=target_path, gen=gen_path, stats=stats_path, layer=layer,
                     unit=unit, unit2=unit2, gamma=gamma, seed=seed, iterations=iterations,
                     learning_rate=learning_rate, lam=lam)
    cfg = _am_config(eff)
    if cfg.clip and not eff.get("stats"):
        raise InputError("clipping is enabled but no --stats file was given")
    target = checkpoint.load_instance(target_path)
    G = checkpoint.load_instance(gen_path)
    stats = checkpoint.load_code_stats(eff["stats"]) if eff.get("stats") else None
    outdir = _outdir(out)
    units = [int(u) for u in str(eff["unit"]).split(",")]
    if unit2 is not None:
        res = am.synthesize_pair(target, layer, units[0], unit2, G, stats, cfg)
        _emit_am_result(outdir, f"pair_u{units[0]}_u{unit2}", res, {"unit": units[0], "unit2": unit2})
    else:
        tasks = [(target, layer, u, G, stats, dataclasses.replace(cfg, seed=cfg.seed + u)) for u in units]
        if jobs > 1:
            with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as ex:
                results = list(ex.map(_synth_one, tasks))
        else:
            results = [_synth_one(t) for t in tasks]
        for u, res in zip(units, results):
            _emit_am_result(outdir, f"unit{u:04d}", res, {"unit": u})
        if len(results) > 1:
            ppm.write_montage(outdir / "montage.ppm", [r.image for r in results])
    _manifest(outdir, "synthesize", eff)
    click.echo(f"synthesis artifacts in {out}")


@main.command("pixel-am")
@click.option("--config", "config_path", default=None)
@click.option("--target", "target_path", required=True)
@click.option("--prior", default="none", type=click.Choice(["none", "l2_decay", "gaussian_blur_every_k", "jitter"]),
              show_default=True)
@click.option("--layer", default="logits", show_default=True)
@click.option("--unit", type=int, required=True)
@click.option("--seed", type=int, default=None)
@click.option("--iterations", type=int, default=None)
@click.option("--learning-rate", type=float, default=None)
@click.option("--out", default="pixel_am", show_default=True)
@_run
def pixel_am_cmd(config_path, target_path, prior, layer, unit, seed, iterations, learning_rate, out):
    """Pixel-space ascent baseline with a hand-designed prior."""
    eff = _effective(config_path, target=target_path, prior=prior, layer=layer, unit=unit,
                     seed=seed, iterations=iterations, learning_rate=learning_rate)
    cfg = dataclasses.replace(_am_config(eff), clip=False)
    target = checkpoint.load_instance(target_path)
    pr = am.PixelPrior(
        kind=eff["prior"],
        decay=_get(eff, "decay", float, 0.01),
        blur_sigma=_get(eff, "blur_sigma", float, 1.0),
        every_k=_get(eff, "every_k", int, 4),
        jitter=_get(eff, "jitter", int, 2),
    )
    outdir = _outdir(out)
    res = am.pixel_am(target, layer, unit, pr, cfg)
    _emit_am_result(outdir, f"pixel_u{unit:04d}_{pr.kind}", res, {"unit": unit, "prior": pr.kind})
    _manifest(outdir, "pixel-am", eff)
    click.echo(f"pixel-space baseline artifacts in {out}")


@main.command("search")
@click.option("--target", "target_path", required=True)
@click.option("--gen", "gen_path", required=True)
@click.option("--stats", "stats_path", required=True)
@click.option("--layer", default="logits", show_default=True)
@click.option("--unit", type=int, required=True)
@click.option("--trials", type=int, required=True)
@click.option("--seed", type=int, required=True)
@click.option("--out", default="search", show_default=True)
@_run
def search_cmd(target_path, gen_path, stats_path, layer, unit, trials, seed, out):
    """Random search over (lam, learning rate, iterations)."""
    target = checkpoint.load_instance(target_path)
    G = checkpoint.load_instance(gen_path)
    stats = checkpoint.load_code_stats(stats_path)
    ranked = am.random_search(target, layer, unit, G, stats, am.SearchSpace(), trials, seed)
    outdir = _outdir(out)
    with open(outdir / "ranking.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["rank", "lam", "learning_rate", "iterations", "seed", "best_activation"])
        for rank, (cfg, act) in enumerate(ranked):
            w.writerow([rank, f"{cfg.lam:.8g}", f"{cfg.learning_rate:.8g}", cfg.iterations, cfg.seed, f"{act:.8g}"])
    figures.scatter_figure([c.learning_rate for c, _ in ranked], [a for _, a in ranked],
                           "learning rate", "best activation", outdir / "ranking.png", logx=True)
    _manifest(outdir, "search", {"target": target_path, "gen": gen_path, "stats": stats_path,
                                 "layer": layer, "unit": unit, "trials": trials, "seed": seed})
    click.echo(f"best activation {ranked[0][1]:.6g} at lam={ranked[0][0].lam:.4g}")


@main.command("nnsearch")
@click.option("--query", required=True, help="query image (PPM)")
@click.option("--data", required=True)
@click.option("--space", default="pixel", show_default=True)
@click.option("--encoder", "encoder_path", default=None, help="required for code spaces")
@click.option("--class", "class_restrict", type=int, default=None)
@click.option("--out", default=None, help="optional result file")
@_run
def nnsearch_cmd(query, data, space, encoder_path, class_restrict, out):
    """Exact nearest neighbor of a query image in pixel or code space."""
    ds = datamod.open_dataset(data)
    enc = checkpoint.load_instance(encoder_path) if encoder_path else None
    q = ppm.read_ppm(query)
    if q.shape != ds.images.shape[1:]:
        q = q[: ds.images.shape[1]]
    res = analysis.nearest_neighbor(q, ds, space, enc, class_restrict)
    line = f"space={res.space} index={res.index} distance={res.distance:.8g} class={res.class_restrict}"
    if out:
        Path(out).write_text(line + "\n")
    click.echo(line)


@main.command("reflect")
@click.option("--kind", required=True, type=click.Choice(["quarter_shuffle", "channel_brg", "gaussian_blur"]))
@click.option("--group-a", "group_a", required=True, help="directory of regular-class syntheses (PPM)")
@click.option("--group-b", "group_b", required=True, help="directory of modified-class syntheses (PPM)")
@click.option("--ref-data", "ref_data", default=None,
              help="unmodified dataset for class-paired permutation scoring (file i of each group = class i)")
@click.option("--out", default="reflection", show_default=True)
@_run
def reflect_cmd(kind, group_a, group_b, ref_data, out):
    """Reflection metrics comparing regular- vs modified-class syntheses."""
    ims_a = [ppm.read_ppm(p) for p in sorted(Path(group_a).glob("*.ppm"))]
    ims_b = [ppm.read_ppm(p) for p in sorted(Path(group_b).glob("*.ppm"))]
    reference = datamod.open_dataset(ref_data) if ref_data else None
    report = analysis.reflection_metrics(ims_a, ims_b, kind, reference=reference)
    outdir = _outdir(out)
    analysis.write_reflection_csv(outdir / "reflection.csv", report)
    for metric in ("laplacian_energy", "seam_discontinuity"):
        figures.group_box_figure(report.group_a[metric], report.group_b[metric], metric,
                                 outdir / f"{metric}.png")
    _manifest(outdir, "reflect", {"kind": kind, "group_a": group_a, "group_b": group_b,
                                  "ref_data": ref_data or ""})
    if report.identified_permutation:
        click.echo(f"identified permutation {report.identified_permutation}"
                   + (f" (regular group: {report.regular_permutation})" if report.regular_permutation else ""))
    click.echo(f"reflection report in {out}")


@main.command("snapshots")
@click.option("--ckpt-glob", required=True)
@click.option("--gen", "gen_path", required=True)
@click.option("--stats", "stats_path", required=True)
@click.option("--units", required=True, help="comma-separated unit list")
@click.option("--seed", type=int, required=True)
@click.option("--iterations", type=int, default=100, show_default=True)
@click.option("--learning-rate", type=float, default=1.0, show_default=True)
@click.option("--log", "log_path", default=None, help="training CSV for accuracy column")
@click.option("--out", default="snapshots", show_default=True)
@_run
def snapshots_cmd(ckpt_glob, gen_path, stats_path, units, seed, iterations, learning_rate, log_path, out):
    """Synthesize fixed units against every checkpoint of a training run."""
    paths = sorted(globmod.glob(ckpt_glob))
    G = checkpoint.load_instance(gen_path)
    stats = checkpoint.load_code_stats(stats_path)
    cfg = am.AMConfig(seed=seed, iterations=iterations, learning_rate=learning_rate)
    log = None
    if log_path:
        with open(log_path) as f:
            log = list(csv.reader(f))[1:]
    outdir = _outdir(out)
    rows = analysis.snapshot_report(paths, [int(u) for u in units.split(",")], G, stats, cfg, str(outdir), log)
    by_it = {}
    for it, _, act, _ in rows:
        by_it.setdefault(it, []).append(float(act))
    its = sorted(by_it)
    figures.scatter_figure(its, [float(np.mean(by_it[i])) for i in its], "iteration",
                           "mean activation", outdir / "snapshots.png")
    _manifest(outdir, "snapshots", {"ckpt_glob": ckpt_glob, "gen": gen_path, "stats": stats_path,
                                    "units": units, "seed": seed, "iterations": iterations,
                                    "learning_rate": learning_rate})
    click.echo(f"snapshot report over {len(paths)} checkpoints in {out}")


@main.command("transfer")
@click.option("--target", "target_path", required=True)
@click.option("--gen", "gen_path", required=True)
@click.option("--stats", "stats_path", required=True)
@click.option("--data", required=True)
@click.option("--layer", default=None, help="target layer (defaults to its final layer)")
@click.option("--seed", type=int, required=True)
@click.option("--iterations", type=int, default=150, show_default=True)
@click.option("--learning-rate", type=float, default=1.0, show_default=True)
@click.option("--val-fraction", type=float, default=0.2, show_default=True)
@click.option("--out", default="transfer", show_default=True)
@_run
def transfer_cmd(target_path, gen_path, stats_path, data, layer, seed, iterations, learning_rate,
                 val_fraction, out):
    """Score syntheses against a (possibly different) target network."""
    target = checkpoint.load_instance(target_path)
    G = checkpoint.load_instance(gen_path)
    stats = checkpoint.load_code_stats(stats_path)
    layer = layer or target.spec.layers[-1].name
    _, val_ds = datamod.split_dataset(datamod.open_dataset(data), val_fraction, seed)
    units = list(range(target.spec.output_shape()[0]))
    cfg = am.AMConfig(seed=seed, iterations=iterations, learning_rate=learning_rate)
    rows, images = analysis.generalization_score(target, layer, units, G, stats, cfg, val_ds.images)
    outdir = _outdir(out)
    analysis.write_scores_csv(outdir / "scores.csv", rows)
    ppm.write_montage(outdir / "montage.ppm", images)
    figures.hist_figure([p for _, _, p in rows], "activation percentile", outdir / "percentiles.png")
    _manifest(outdir, "transfer", {"target": target_path, "gen": gen_path, "stats": stats_path,
                                   "data": data, "layer": layer, "seed": seed,
                                   "iterations": iterations, "learning_rate": learning_rate})
    med = float(np.nanmedian([p for _, _, p in rows]))
    click.echo(f"median activation percentile {med:.2f} over {len(units)} units")


if __name__ == "__main__":
    main()
