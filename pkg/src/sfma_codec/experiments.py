"""Desk-scale adaptation study built on real coded streams.

Everything here works on live model objects: code an evaluation set
through actual bitstreams, build rate/accuracy curves for the frozen
base versus base-plus-adapters, and sweep the adapter middle width.
The heavier CLI verbs and the end-to-end checks both call into this
module, so the whole study is reproducible from one config + seed.
Checkpoints can be cached to a directory to skip repeat training.
"""

import os
from dataclasses import dataclass

import numpy as np

from . import compress as cp
from .adapters import SfmaConfig, adapter_stack
from .analysis import RdCurve, bd_metric
from .checkpoint import load_state, save_state
from .codec import CodecConfig, PlacementConfig, init_codec
from .data import make_dataset
from .entropy import FactorizedPrior
from .errors import ConfigError
from .tasks import eval_accuracy, pretrain_task_model
from .training import TrainConfig, pretrain_base, train_adapters


def psnr(a, b):
    """Peak signal-to-noise ratio between [0,1] images (peak = 1)."""
    mse = float(np.mean((np.asarray(a, float) - np.asarray(b, float)) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(-10.0 * np.log10(mse))


def evaluate_point(images, codec, prior, adapters=None, placement=None,
                   mode=cp.MODE_MACHINE, mask_gen=None, lambda_id=0,
                   task_model=None, labels=None):
    """Code each image through a real stream; average bpp / PSNR / accuracy.

    bpp counts payload section bytes only, against the original pixel
    count.  Accuracy (if a task model is given) is top-1 on the clipped
    reconstructions.
    """
    per_bpp, per_psnr, recons = [], [], []
    for x in np.asarray(images, dtype=np.float64):
        stream = cp.compress(x, codec, adapters, placement, prior,
                             mode=mode, lambda_id=lambda_id,
                             mask_gen=mask_gen)
        x_hat = cp.decompress(stream.serialize(), codec, adapters=adapters,
                              prior=prior, placement=placement,
                              mask_gen=mask_gen)
        x_hat = np.clip(x_hat, 0.0, 1.0)
        h, w = x.shape[-2:]
        per_bpp.append(8 * sum(len(s) for s in stream.sections) / (h * w))
        per_psnr.append(psnr(x, x_hat))
        recons.append(x_hat)
    out = {"bpp": float(np.mean(per_bpp)),
           "psnr": float(np.mean(per_psnr)),
           "per_image_bpp": np.asarray(per_bpp),
           "accuracy": None}
    if task_model is not None:
        if labels is None:
            raise ConfigError("labels are required to evaluate accuracy")
        out["accuracy"] = eval_accuracy(task_model, np.stack(recons),
                                        np.asarray(labels))
    return out


def adapter_param_count(adapters):
    return int(sum(v.data.size for w in adapters.values()
                   for v in w.tensors.values()))


@dataclass(frozen=True)
class StudyConfig:
    """All knobs of the adaptation study, sized for a CPU desk run."""
    n_channels: int = 64
    m_channels: int = 64
    image_size: int = 64
    train_size: int = 96
    eval_size: int = 24
    data_seed: int = 100
    task_epochs: int = 12
    task_lr: float = 1e-2
    base_lambdas: tuple = (120.0, 400.0, 1300.0, 4500.0)
    base_epochs: int = 10
    base_batch: int = 8
    base_lr: float = 1e-3
    lambda_grid: tuple = (1.8, 3.5, 6.7, 13.0)
    adapter_middle: int = 64
    adapter_epochs: int = 5
    adapter_batch: int = 16
    adapter_lr: float = 1e-4
    milestones: tuple = (2, 4)
    decay: float = 0.5
    ablate_dims: tuple = (1, 32, 64)
    ablate_seeds: tuple = (0, 1, 2)
    ablate_epochs: int = 2
    quality: str = "accuracy"
    seed: int = 0

    def codec_config(self):
        return CodecConfig(self.n_channels, self.m_channels)

    def sfma_config(self, middle_dim=None):
        return SfmaConfig(
            in_dim=self.n_channels,
            middle_dim=self.adapter_middle if middle_dim is None
            else middle_dim)

    def __post_init__(self):
        if len(self.base_lambdas) != len(self.lambda_grid):
            raise ConfigError("base_lambdas must pair with lambda_grid")
        if len(self.lambda_grid) < 4:
            raise ConfigError("need >= 4 rate points for curve fitting")
        if self.quality not in ("accuracy", "psnr"):
            raise ConfigError(f"unknown quality metric {self.quality!r}")


def _cache_path(cache_dir, name):
    if cache_dir is None:
        return None
    os.makedirs(cache_dir, exist_ok=True)
    return os.path.join(cache_dir, name)


def pretrain_bases(images, study, cache_dir=None, log=None):
    """One frozen (codec, prior) pair per rate point, low to high rate."""
    bases = []
    for i, lam_mse in enumerate(study.base_lambdas):
        path = _cache_path(cache_dir, f"base_q{i}.npz")
        if path is not None and os.path.exists(path):
            st = load_state(path)
            bases.append((st["base_codec"], st["prior"]))
            continue
        codec = init_codec(study.codec_config(), seed=study.seed + i)
        prior = FactorizedPrior(study.n_channels)
        rows = pretrain_base(images, codec, prior, lam_mse,
                             epochs=study.base_epochs,
                             batch_size=study.base_batch,
                             lr=study.base_lr, seed=study.seed + i)
        if log:
            log(f"base_q{i}: lam_mse={lam_mse} "
                f"final_loss={rows[-1][1]:.3f} rate={rows[-1][2]:.3f}")
        if path is not None:
            save_state(path, codec=codec, prior=prior)
        bases.append((codec, prior))
    return bases


def train_adapter_point(train_x, codec, prior, task_model, study, lam,
                        middle_dim, seed, epochs, placement):
    """Fresh adapter stack trained at one λ; returns the frozen stack."""
    points = placement.adapter_points(study.codec_config())
    stack = adapter_stack(points, study.sfma_config(middle_dim), seed)
    cfg = TrainConfig(lam=lam, batch_size=study.adapter_batch,
                      epochs=epochs, base_lr=study.adapter_lr,
                      schedule="multistep", milestones=study.milestones,
                      decay=study.decay, crop_size=study.image_size,
                      seed=seed)
    train_adapters(train_x, codec, stack, prior, task_model, cfg, placement)
    for w in stack.values():
        w.set_trainable(False)
    return stack


def accuracy_curve(eval_x, eval_y, bases, task_model, adapters_by_point=None,
                   placement=None, label="", quality="accuracy"):
    """Rate/quality curve over the base grid, real streams throughout."""
    pts = []
    for i, (codec, prior) in enumerate(bases):
        if adapters_by_point is None:
            r = evaluate_point(eval_x, codec, prior, mode=cp.MODE_HUMAN,
                               task_model=task_model, labels=eval_y)
        else:
            r = evaluate_point(eval_x, codec, prior, adapters_by_point[i],
                               placement, mode=cp.MODE_MACHINE,
                               lambda_id=i, task_model=task_model,
                               labels=eval_y)
        pts.append((r["bpp"], r[quality]))
    return RdCurve(pts, label)


def run_study(study=None, cache_dir=None, log=None):
    """Full adaptation study; returns curves, sweeps, and checksums.

    The returned dict carries the frozen-base anchor curve, the adapted
    curve with its per-λ adapter stacks, the middle-width sweep rows,
    and base-codec checksums taken before and after all training.
    """
    study = study if study is not None else StudyConfig()
    placement = PlacementConfig()
    train_x, train_y = make_dataset(study.train_size, study.data_seed,
                                    study.image_size)
    eval_x, eval_y = make_dataset(study.eval_size, study.data_seed + 1,
                                  study.image_size)

    task_path = _cache_path(cache_dir, "task_model.npz")
    if task_path is not None and os.path.exists(task_path):
        task_model = load_state(task_path)["task_model"]
    else:
        task_model = pretrain_task_model(train_x, train_y,
                                         epochs=study.task_epochs,
                                         lr=study.task_lr, seed=study.seed)
        if task_path is not None:
            save_state(task_path, task_model=task_model)

    bases = pretrain_bases(train_x, study, cache_dir, log)
    checksums_before = tuple(c.checksum() for c, _ in bases)

    anchor = accuracy_curve(eval_x, eval_y, bases, task_model, label="base",
                        quality=study.quality)
    if log:
        log(f"anchor: {list(anchor.points())}")

    adapted_stacks = []
    for i, ((codec, prior), lam) in enumerate(zip(bases, study.lambda_grid)):
        path = _cache_path(cache_dir, f"adapters_l{i}.npz")
        if path is not None and os.path.exists(path):
            adapted_stacks.append(load_state(path)["adapters"])
            continue
        stack = train_adapter_point(
            train_x, codec, prior, task_model, study, lam,
            study.adapter_middle, study.seed + 10 * i,
            study.adapter_epochs, placement)
        if path is not None:
            save_state(path, adapters=stack)
        adapted_stacks.append(stack)
    adapted = accuracy_curve(eval_x, eval_y, bases, task_model,
                             adapted_stacks, placement, label="adapted",
                             quality=study.quality)
    if log:
        log(f"adapted: {list(adapted.points())}")
    bd_main = bd_metric(anchor, adapted, "BD_RATE")

    ablation = []
    for dim in study.ablate_dims:
        for s in study.ablate_seeds:
            stacks = []
            for i, ((codec, prior), lam) in enumerate(
                    zip(bases, study.lambda_grid)):
                path = _cache_path(cache_dir, f"ablate_c{dim}_s{s}_l{i}.npz")
                if path is not None and os.path.exists(path):
                    stacks.append(load_state(path)["adapters"])
                    continue
                stack = train_adapter_point(
                    train_x, codec, prior, task_model, study, lam,
                    dim, study.seed + 100 * s + 10 * i + 7,
                    study.ablate_epochs, placement)
                if path is not None:
                    save_state(path, adapters=stack)
                stacks.append(stack)
            curve = accuracy_curve(eval_x, eval_y, bases, task_model,
                                   stacks, placement,
                                   label=f"C{dim}_s{s}",
                                   quality=study.quality)
            row = {"middle_dim": dim, "seed": s,
                   "params": adapter_param_count(stacks[0]),
                   "bd_rate": bd_metric(anchor, curve, "BD_RATE").value}
            if log:
                log(f"ablate: {row}")
            ablation.append(row)

    checksums_after = tuple(c.checksum() for c, _ in bases)
    return {"study": study, "anchor": anchor, "adapted": adapted,
            "bd_rate": bd_main.value, "adapter_stacks": adapted_stacks,
            "ablation": ablation, "bases": bases, "task_model": task_model,
            "eval_data": (eval_x, eval_y),
            "checksums_before": checksums_before,
            "checksums_after": checksums_after}


def ablation_trend(rows):
    """Seed-averaged |BD-rate| per middle width, sorted by width."""
    dims = sorted({r["middle_dim"] for r in rows})
    means = []
    for d in dims:
        vals = [abs(r["bd_rate"]) for r in rows if r["middle_dim"] == d]
        means.append(float(np.mean(vals)))
    return dims, means
