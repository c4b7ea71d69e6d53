"""Loss, metrics, AdamW, and the training/evaluation loops."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import engine
from .data import NormStats, Sample, denormalize, normalize
from .engine import Tape, Tensor
from .errors import ConfigError, MetricError, NumericalError
from .model import ModelConfig, PgotModel, save_checkpoint


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def relative_l2(u: np.ndarray, u_hat: np.ndarray) -> float:
    """||u - u_hat|| / ||u|| over the flattened field."""
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    u_hat = np.asarray(u_hat, dtype=np.float64).reshape(-1)
    if u.shape != u_hat.shape:
        raise ConfigError(f"field shapes differ: {u.shape} vs {u_hat.shape}")
    denom = np.linalg.norm(u)
    if denom == 0.0:
        raise MetricError("relative L2 undefined for an all-zero reference field")
    return float(np.linalg.norm(u - u_hat) / denom)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    sorted_vals = values[order]
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(c: np.ndarray, c_hat: np.ndarray) -> float:
    """Pearson correlation of average-rank vectors (tie-aware)."""
    c = np.asarray(c, dtype=np.float64).reshape(-1)
    c_hat = np.asarray(c_hat, dtype=np.float64).reshape(-1)
    if c.shape != c_hat.shape:
        raise ConfigError(f"rank inputs differ in length: {c.shape} vs {c_hat.shape}")
    if len(c) < 3:
        raise MetricError(f"spearman needs at least 3 values, got {len(c)}")
    ra, rb = _average_ranks(c), _average_ranks(c_hat)
    sa, sb = ra.std(), rb.std()
    if sa == 0.0 or sb == 0.0:
        raise MetricError("spearman undefined when all values are tied")
    if np.array_equal(ra, rb):
        return 1.0
    if np.array_equal(ra + rb, np.full(len(ra), len(ra) + 1.0)):
        return -1.0
    rho = float(np.mean((ra - ra.mean()) * (rb - rb.mean())) / (sa * sb))
    return min(1.0, max(-1.0, rho))


def relative_l2_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Differentiable relative L2; the reference norm is a constant."""
    target = np.asarray(target)
    denom = float(np.linalg.norm(target.astype(np.float64)))
    if denom == 0.0:
        raise MetricError("relative L2 undefined for an all-zero reference field")
    diff = pred - engine.constant(target)
    sq = engine.sum_(diff * diff)
    return engine.sqrt(sq) * (1.0 / denom)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


class AdamW:
    """Adam with decoupled weight decay applied directly to parameters."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = list(params)  # list of (name, Tensor)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = {name: np.zeros_like(p.data, dtype=np.float64) for name, p in self.params}
        self._v = {name: np.zeros_like(p.data, dtype=np.float64) for name, p in self.params}

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def step(self, lr: float | None = None):
        lr = self.lr if lr is None else lr
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for name, p in self.params:
            grad = p.grad
            if grad is None:
                grad = np.zeros_like(p.data)
            if not np.all(np.isfinite(grad)):
                raise NumericalError(f"NaN/Inf gradient for parameter {name}", param=name)
            g = grad.astype(np.float64)
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay:
                p.data *= np.asarray(1.0 - lr * self.weight_decay, dtype=p.data.dtype)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = (p.data.astype(np.float64) - lr * update).astype(p.data.dtype)


def clip_grad_norm(params, max_norm: float) -> float:
    total = 0.0
    for _, p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for _, p in params:
            if p.grad is not None:
                p.grad = (p.grad * scale).astype(p.grad.dtype)
    return norm


def cosine_lr(step: int, total_steps: int, lr: float) -> float:
    """Cosine decay from lr to lr/10 over the run."""
    lr_final = lr / 10.0
    if total_steps <= 1:
        return lr
    t = min(step, total_steps - 1) / (total_steps - 1)
    return lr_final + 0.5 * (lr - lr_final) * (1.0 + math.cos(math.pi * t))


# ---------------------------------------------------------------------------
# run report
# ---------------------------------------------------------------------------


@dataclass
class RunReport:
    config_hash: str
    seed: int
    steps: int
    epoch_losses: list = field(default_factory=list)
    final_train_rel_l2: float | None = None
    eval_rel_l2: float | None = None
    eval_spearman: float | None = None
    wall_time_s: float | None = None
    peak_alloc_bytes: int | None = None

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "steps": self.steps,
            "epoch_losses": self.epoch_losses,
            "final_train_rel_l2": self.final_train_rel_l2,
            "eval_rel_l2": self.eval_rel_l2,
            "eval_spearman": self.eval_spearman,
            "wall_time_s": self.wall_time_s,
            "peak_alloc_bytes": self.peak_alloc_bytes,
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")


# ---------------------------------------------------------------------------
# loops
# ---------------------------------------------------------------------------


def _normalized_views(samples: list[Sample], stats: NormStats):
    views = []
    for s in samples:
        views.append(
            (
                normalize(s.input, stats.input_mean, stats.input_std),
                s.coords,
                normalize(s.target, stats.target_mean, stats.target_std),
            )
        )
    return views


def train(
    config: ModelConfig,
    samples: list[Sample],
    stats: NormStats,
    steps: int = 2000,
    lr: float = 1e-3,
    weight_decay: float = 1e-4,
    clip_norm: float = 5.0,
    checkpoint_path=None,
    eval_samples: list[Sample] | None = None,
) -> tuple[PgotModel, RunReport]:
    """Step-based training on the relative-L2 loss with cosine lr decay.

    One step is one optimizer update on one sample, cycling through the
    train set. The checkpoint is written at the best eval loss.
    """
    if not samples:
        raise ConfigError("training requires a non-empty dataset")
    config.validate()
    model = PgotModel(config)
    model.training = True
    opt = AdamW(model.parameters(), lr=lr, weight_decay=weight_decay)
    views = _normalized_views(samples, stats)
    eval_set = eval_samples if eval_samples is not None else samples
    report = RunReport(config_hash=config.hash(), seed=config.seed, steps=steps)
    start = time.perf_counter()
    best_eval = math.inf
    n = len(views)
    epoch_losses = []
    engine.reset_alloc_stats()
    for step in range(steps):
        a_norm, coords, u_norm = views[step % n]
        with Tape() as tape:
            pred = model.predict(a_norm, coords)
            loss = relative_l2_loss(pred, u_norm)
            value = loss.item()
            if not math.isfinite(value):
                report.wall_time_s = time.perf_counter() - start
                raise NumericalError(f"loss became non-finite at step {step}")
            tape.backward(loss)
        clip_grad_norm(opt.params, clip_norm)
        opt.step(lr=cosine_lr(step, steps, lr))
        opt.zero_grad()
        epoch_losses.append(value)
        if (step + 1) % n == 0 or step == steps - 1:
            report.epoch_losses.append(float(np.mean(epoch_losses)))
            epoch_losses = []
            model.training = False
            metrics = evaluate(model, eval_set, stats)
            model.training = True
            if metrics["rel_l2"] < best_eval:
                best_eval = metrics["rel_l2"]
                if checkpoint_path is not None:
                    save_checkpoint(model, checkpoint_path)
    model.training = False
    report.peak_alloc_bytes = engine.alloc_stats()["bytes"]
    report.wall_time_s = time.perf_counter() - start
    train_metrics = evaluate(model, samples, stats)
    report.final_train_rel_l2 = train_metrics["rel_l2"]
    eval_metrics = evaluate(model, eval_set, stats)
    report.eval_rel_l2 = eval_metrics["rel_l2"]
    report.eval_spearman = eval_metrics["spearman"]
    if checkpoint_path is not None and best_eval == math.inf:
        save_checkpoint(model, checkpoint_path)
    return model, report


def evaluate(model: PgotModel, samples: list[Sample], stats: NormStats) -> dict:
    """Mean denormalized relative L2 plus a scalar-functional Spearman rank.

    The rank functional is the per-sample mean target vs mean prediction;
    Spearman is reported as None when fewer than 3 samples are given.
    """
    if samples and samples[0].input.shape[1] != model.config.d_a:
        raise ConfigError(
            f"dataset d_a={samples[0].input.shape[1]} does not match model d_a={model.config.d_a}"
        )
    if samples and samples[0].target.shape[1] != model.config.d_u:
        raise ConfigError(
            f"dataset d_u={samples[0].target.shape[1]} does not match model d_u={model.config.d_u}"
        )
    errors = []
    mean_true = []
    mean_pred = []
    for s in samples:
        a_norm = normalize(s.input, stats.input_mean, stats.input_std)
        pred_norm = model.predict(a_norm, s.coords).data
        pred = denormalize(pred_norm, stats.target_mean, stats.target_std)
        errors.append(relative_l2(s.target, pred))
        mean_true.append(float(s.target.mean()))
        mean_pred.append(float(pred.mean()))
    rho = None
    if len(samples) >= 3:
        try:
            rho = spearman(np.asarray(mean_true), np.asarray(mean_pred))
        except MetricError:
            rho = None
    return {"rel_l2": float(np.mean(errors)), "spearman": rho}
