"""Preferred-stimulus synthesis by gradient ascent in a generator's code
space, with L2 code regularization and per-unit [0, 3*sigma] clipping, plus
the two-unit variant, pixel-space baselines, and hyperparameter random search.

The target network and the generator are never mutated; only the code moves.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import models
from . import tensor as T
from .data import gaussian_blur
from .errors import DimensionError, InputError, SynthesisError
from .tensor import Tensor

DEFAULT_LAMBDA = 0.005  # small L2 code weight; shipped default


@dataclass(frozen=True)
class AMConfig:
    lam: float = DEFAULT_LAMBDA
    learning_rate: float = 1.0
    iterations: int = 200
    init: str = "gaussian_from_stats"  # zeros | gaussian_from_stats | uniform_box
    seed: int = 0
    clip: bool = True
    norm_mode: str = "squared"  # squared | plain
    gamma: float = 0.0  # two-unit balance weight

    def __post_init__(self):
        if self.lam < 0 or self.gamma < 0:
            raise InputError("lam and gamma must be >= 0")
        if self.iterations < 1:
            raise InputError("iterations must be >= 1")
        if self.init not in ("zeros", "gaussian_from_stats", "uniform_box"):
            raise InputError(f"unknown init {self.init!r}")
        if self.norm_mode not in ("squared", "plain"):
            raise InputError(f"unknown norm_mode {self.norm_mode!r}")


@dataclass
class AMResult:
    code: np.ndarray
    image: np.ndarray  # CHW, from the best-objective iterate
    objectives: np.ndarray  # per iteration, evaluated before each step
    activations: np.ndarray
    best_iteration: int
    config: AMConfig

    @property
    def best_objective(self):
        return float(self.objectives[self.best_iteration])

    @property
    def best_activation(self):
        return float(self.activations[self.best_iteration])

    @property
    def max_activation(self):
        return float(self.activations.max())


def _code_penalty(code, cfg):
    if cfg.norm_mode == "squared":
        return T.sum_squares(code)
    return T.sqrt(T.sum_squares(code))


def am_objective(target, target_layer, unit, G, code, cfg):
    """activation(target unit on G(code)) - lam * ||code|| (squared or plain)."""
    img = models.forward(G, code)
    act = models.unit_activation(target, target_layer, unit, img)
    if cfg.lam == 0:
        return act, act
    obj = act - T.mul_scalar(_code_penalty(code, cfg), cfg.lam)
    return obj, act


def clip_code(code, stats):
    """Per-unit projection onto [0, 3*sigma]."""
    flat = np.asarray(code).reshape(-1)
    if flat.shape != stats.std.shape:
        raise DimensionError(f"code length {flat.shape[0]} does not match stats length {stats.std.shape[0]}")
    return np.clip(flat, 0.0, 3.0 * stats.std).reshape(np.shape(code)).astype(np.float32)


def init_code(shape, stats, cfg):
    rng = np.random.default_rng(cfg.seed)
    if cfg.init == "zeros":
        code = np.zeros(shape, dtype=np.float32)
    else:
        if stats is None:
            raise InputError(f"init {cfg.init!r} requires code stats")
        if cfg.init == "gaussian_from_stats":
            code = (stats.mean + stats.std * rng.standard_normal(stats.std.shape)).astype(np.float32)
        else:
            code = rng.uniform(0.0, 3.0 * stats.std).astype(np.float32)
        code = code.reshape(shape)
    if cfg.clip:
        code = clip_code(code, stats)
    return code


def _code_shape(G):
    return (1, *G.spec.input_shape)


def _ascend(G, stats, cfg, objective_fn):
    """Shared ascent loop; objective_fn(code tensor) -> (objective, activation)."""
    if cfg.clip and stats is None:
        raise InputError("clipping requires code stats")
    code = init_code(_code_shape(G), stats, cfg)
    objectives = np.empty(cfg.iterations, dtype=np.float64)
    activations = np.empty(cfg.iterations, dtype=np.float64)
    best_obj, best_it, best_code = -np.inf, 0, code.copy()
    for i in range(cfg.iterations):
        y = Tensor(code, requires_grad=True)
        obj, act = objective_fn(y)
        o = obj.item()
        if not np.isfinite(o):
            raise SynthesisError(f"objective is not finite at iteration {i}")
        objectives[i], activations[i] = o, act.item()
        if o > best_obj:
            best_obj, best_it, best_code = o, i, code.copy()
        T.backward(obj)
        code = code + cfg.learning_rate * y.grad
        if cfg.clip:
            code = clip_code(code, stats)
    img = models.forward(G, Tensor(best_code)).data[0]
    return AMResult(best_code, img, objectives, activations, best_it, cfg)


def synthesize(target, target_layer, unit, G, stats, cfg):
    """Single-unit code-space ascent; returns the best-objective iterate."""
    if G.spec.output_shape() != tuple(target.spec.input_shape):
        raise DimensionError(
            f"generator output {G.spec.output_shape()} does not match target input {tuple(target.spec.input_shape)}"
        )
    return _ascend(G, stats, cfg, lambda y: am_objective(target, target_layer, unit, G, y, cfg))


def synthesize_pair(target, target_layer, unit1, unit2, G, stats, cfg):
    """Two-unit ascent with an activation-distance penalty weighted by gamma."""
    if unit1 == unit2:
        raise InputError("the two units must differ")

    def objective(y):
        img = models.forward(G, y)
        a1 = models.unit_activation(target, target_layer, unit1, img)
        a2 = models.unit_activation(target, target_layer, unit2, img)
        obj = a1 + a2
        if cfg.lam:
            obj = obj - T.mul_scalar(_code_penalty(y, cfg), cfg.lam)
        if cfg.gamma:
            obj = obj - T.mul_scalar(T.absolute(a1 - a2), cfg.gamma)
        return obj, a1 + a2

    return _ascend(G, stats, cfg, objective)


@dataclass(frozen=True)
class PixelPrior:
    kind: str = "none"  # none | l2_decay | gaussian_blur_every_k | jitter
    decay: float = 0.01
    blur_sigma: float = 1.0
    every_k: int = 4
    jitter: int = 2

    def __post_init__(self):
        if self.kind not in ("none", "l2_decay", "gaussian_blur_every_k", "jitter"):
            raise InputError(f"unknown pixel prior {self.kind!r}")
        if self.kind == "gaussian_blur_every_k" and (self.blur_sigma <= 0 or self.every_k < 1):
            raise InputError("blur prior needs positive sigma and every_k >= 1")


def pixel_am(target, target_layer, unit, prior, cfg):
    """Baseline: gradient ascent directly on pixels with a hand-designed prior."""
    rng = np.random.default_rng(cfg.seed)
    shape = (1, *target.spec.input_shape)
    x = (0.5 + 0.05 * rng.standard_normal(shape)).astype(np.float32)
    x = np.clip(x, 0.0, 1.0)
    objectives = np.empty(cfg.iterations, dtype=np.float64)
    activations = np.empty(cfg.iterations, dtype=np.float64)
    best_obj, best_it, best_x = -np.inf, 0, x.copy()
    for i in range(cfg.iterations):
        shift = None
        if prior.kind == "jitter" and prior.jitter:
            shift = rng.integers(-prior.jitter, prior.jitter + 1, size=2)
            x = np.roll(x, shift, axis=(2, 3))
        t = Tensor(x, requires_grad=True)
        act = models.unit_activation(target, target_layer, unit, t)
        o = act.item()
        if not np.isfinite(o):
            raise SynthesisError(f"objective is not finite at iteration {i}")
        objectives[i] = activations[i] = o
        if o > best_obj:
            best_obj, best_it, best_x = o, i, x.copy()
        T.backward(act)
        x = x + cfg.learning_rate * t.grad
        if shift is not None:
            x = np.roll(x, -shift, axis=(2, 3))
        if prior.kind == "l2_decay":
            x = x * (1.0 - prior.decay)
        elif prior.kind == "gaussian_blur_every_k" and (i + 1) % prior.every_k == 0:
            x = gaussian_blur(x[0], prior.blur_sigma)[None]
        x = np.clip(x, 0.0, 1.0).astype(np.float32)
    return AMResult(best_x, best_x[0], objectives, activations, best_it, cfg)


@dataclass(frozen=True)
class SearchSpace:
    lam: tuple = (1e-4, 1e-1)  # log-uniform
    learning_rate: tuple = (0.05, 5.0)  # log-uniform
    iterations: tuple = (50, 300)  # uniform integer

    def __post_init__(self):
        for lo, hi in (self.lam, self.learning_rate, self.iterations):
            if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
                raise InputError("search space bounds must be finite with lo <= hi")


def random_search(target, target_layer, unit, G, stats, space, trials, seed, base_cfg=None):
    """Deterministic random search over (lam, learning rate, iterations).

    Returns [(AMConfig, best activation)] sorted by activation, best first.
    """
    if trials < 1:
        raise InputError("trials must be >= 1")
    base = base_cfg or AMConfig()
    rng = np.random.default_rng(seed)
    results = []
    for t in range(trials):
        lam = float(np.exp(rng.uniform(np.log(space.lam[0]), np.log(space.lam[1]))))
        lr = float(np.exp(rng.uniform(np.log(space.learning_rate[0]), np.log(space.learning_rate[1]))))
        iters = int(rng.integers(space.iterations[0], space.iterations[1] + 1))
        cfg = replace(base, lam=lam, learning_rate=lr, iterations=iters, seed=seed + t)
        res = synthesize(target, target_layer, unit, G, stats, cfg)
        results.append((cfg, res.best_activation))
    return sorted(results, key=lambda r: -r[1])
