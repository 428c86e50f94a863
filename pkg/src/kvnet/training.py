"""Synthetic phantoms, SSIM-loss training with RMSProp, evaluation.

Training is fully deterministic per (dataset seed, mask seed, init seed,
config): phantom generation, masks, shuffles and initialization all derive
from numpy SeedSequences, and checkpoints restore parameters and optimizer
state bit-exactly.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import metrics as Mx
from . import tensor as T
from .fourier import ComplexImage, fft2c, ifft2c
from .models import (ModelConfig, collect_params, load_checkpoint,
                     restore_params, save_checkpoint)
from .sampling import apply_mask, generate_random_mask
from .tensor import ParamStore, Tensor


# -- synthetic data ----------------------------------------------------------


@dataclass(frozen=True)
class PhantomSpec:
    """Random-ellipse phantom generator settings (stand-in for scanner data)."""

    size: int = 64
    min_ellipses: int = 5
    max_ellipses: int = 12
    intensity_min: float = 0.0
    intensity_max: float = 1.0
    phase_components: int = 3
    seed: int = 0


def _sample_rng(seed, index, salt=0):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, salt, index])))


def make_phantom(spec: PhantomSpec, index: int):
    """One deterministic phantom: (ground-truth image, full k-space)."""
    rng = _sample_rng(spec.seed, index)
    s = spec.size
    ax = np.linspace(-1.0, 1.0, s)
    yy, xx = np.meshgrid(ax, ax, indexing="ij")

    n_ell = int(rng.integers(spec.min_ellipses, spec.max_ellipses + 1))
    mag = np.zeros((s, s))
    for e in range(n_ell):
        if e == 0:  # a big central blob guarantees signal everywhere
            cx, cy = rng.uniform(-0.1, 0.1, size=2)
            a, b = rng.uniform(0.5, 0.8, size=2)
            amp = rng.uniform(0.5, spec.intensity_max)
        else:
            cx, cy = rng.uniform(-0.6, 0.6, size=2)
            a, b = rng.uniform(0.08, 0.45, size=2)
            amp = rng.uniform(spec.intensity_min, spec.intensity_max)
        theta = rng.uniform(0.0, np.pi)
        ct, st = np.cos(theta), np.sin(theta)
        u = (xx - cx) * ct + (yy - cy) * st
        v = -(xx - cx) * st + (yy - cy) * ct
        mag += amp * ((u / a) ** 2 + (v / b) ** 2 <= 1.0)

    peak = rng.uniform(0.8, 1.4)
    mag *= peak / max(mag.max(), 1e-6)

    phase = np.zeros((s, s))
    for _ in range(spec.phase_components):
        fx, fy = rng.uniform(-1.5, 1.5, size=2)
        amp = rng.uniform(0.0, 0.8)
        delta = rng.uniform(0.0, 2.0 * np.pi)
        phase += amp * np.sin(2.0 * np.pi * (fx * xx + fy * yy) + delta)

    z = mag * np.exp(1j * phase)
    image = ComplexImage.from_complex(z, "image")
    return image, fft2c(image)


def make_phantom_dataset(spec: PhantomSpec, n: int):
    if n < 1:
        raise ValueError("need at least one sample")
    return [make_phantom(spec, i) for i in range(n)]


# -- optimizer ---------------------------------------------------------------


def rmsprop_step(store: ParamStore, state: dict, lr, rho=0.99, eps=1e-8):
    """In-place RMSProp update: v <- rho*v + (1-rho)*g^2; th -= lr*g/(sqrt(v)+eps)."""
    for name, t in store.items():
        g = t.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        v = state.setdefault(name, np.zeros_like(t.data))
        v *= rho
        v += (1.0 - rho) * g * g
        t.data -= lr * g / (np.sqrt(v) + eps)


def ssim_loss(output, target, data_range) -> Tensor:
    """1 - SSIM, the training objective (scalar Tensor in [0, 2])."""
    return 1.0 - Mx.ssim(output, target, data_range)


# -- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 4
    lr: float = 1e-3
    lr_decayed: float = 1e-4
    decay_epoch: int = 40
    rmsprop_rho: float = 0.99
    rmsprop_eps: float = 1e-8
    seed: int = 0
    center_fraction: float = 0.08
    acceleration: float = 4.0
    remask_each_epoch: bool = False

    def __post_init__(self):
        for name in ("epochs", "batch_size", "lr", "lr_decayed", "decay_epoch",
                     "rmsprop_rho", "rmsprop_eps", "center_fraction", "acceleration"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


def learning_rate(config: TrainConfig, epoch: int) -> float:
    return config.lr if epoch < config.decay_epoch else config.lr_decayed


# -- sample preparation ------------------------------------------------------

_SPLIT_SALT = {"train": 11, "val": 13, "eval": 17}


@dataclass
class PreparedSample:
    k_raw_norm: np.ndarray      # [2,H,W] float32, masked and normalized
    mask_values: np.ndarray     # [W] uint8
    target_norm: np.ndarray     # [1,H,W] float32 magnitude / scale
    target: np.ndarray          # [H,W] float64 magnitude, original scale
    scale: float
    data_range_norm: float
    data_range: float
    zero_fill_mag: np.ndarray   # [H,W] float64 |zero-filled|, original scale


def prepare_sample(gt_image: ComplexImage, k_full: ComplexImage, mask) -> PreparedSample:
    """Mask, zero-fill and normalize one slice for the model."""
    k_masked = apply_mask(k_full, mask)
    zf = ifft2c(k_masked)
    zf_mag = zf.magnitude()
    scale = float(zf_mag.max())
    if scale <= 0:
        scale = 1.0
    target = gt_image.magnitude().astype(np.float64)
    k_raw_norm = (np.stack([k_masked.re, k_masked.im]) / scale).astype(np.float32)
    target_norm = (target / scale).astype(np.float32)[None]
    values = mask.values if hasattr(mask, "values") else np.asarray(mask, dtype=np.uint8)
    return PreparedSample(
        k_raw_norm=k_raw_norm,
        mask_values=values,
        target_norm=target_norm,
        target=target,
        scale=scale,
        data_range_norm=float(target_norm.max()),
        data_range=float(target.max()),
        zero_fill_mag=zf_mag.astype(np.float64),
    )


def _mask_for(config: TrainConfig, split: str, index: int, width: int, epoch=None):
    ids = [config.seed, _SPLIT_SALT[split], index]
    if epoch is not None:
        ids.append(2_000_003 + epoch)
    seed = int(np.random.SeedSequence(ids).generate_state(1)[0])
    return generate_random_mask(width, config.center_fraction, config.acceleration, seed)


def prepare_split(dataset, config: TrainConfig, split: str, epoch=None):
    out = []
    for i, (gt, k_full) in enumerate(dataset):
        mask = _mask_for(config, split, i, k_full.width, epoch)
        out.append(prepare_sample(gt, k_full, mask))
    return out


def _forward_batch(model, samples):
    x = Tensor(np.stack([s.k_raw_norm for s in samples]))
    masks = np.stack([s.mask_values for s in samples])
    return model(x, masks)


def _slice_metrics(out_norm, sample: PreparedSample):
    recon = out_norm.astype(np.float64) * sample.scale
    loss = 1.0 - float(Mx.ssim(out_norm, sample.target_norm[0], sample.data_range_norm).data)
    return (
        Mx.nmse(recon, sample.target),
        Mx.psnr(recon, sample.target, sample.data_range),
        float(Mx.ssim(recon, sample.target, sample.data_range).data),
        loss,
    )


def _evaluate_prepared(model, prepared, batch_size):
    nmses, psnrs, ssims, losses = [], [], [], []
    for lo in range(0, len(prepared), batch_size):
        chunk = prepared[lo : lo + batch_size]
        if model is None:
            outs = [(s.zero_fill_mag / s.scale).astype(np.float32) for s in chunk]
        else:
            out = _forward_batch(model, chunk)
            outs = [out.data[i, 0] for i in range(len(chunk))]
        for s, o in zip(chunk, outs):
            n, p, ss, lo_ = _slice_metrics(o, s)
            nmses.append(n)
            psnrs.append(p)
            ssims.append(ss)
            losses.append(lo_)
    report = Mx.MetricReport(
        nmse=float(np.mean(nmses)),
        psnr=float(np.mean(psnrs)),
        ssim=float(np.mean(ssims)),
        n_slices=len(prepared),
    )
    return report, float(np.mean(losses))


def evaluate(model, dataset, masks, batch_size=4):
    """Per-slice-averaged metrics for a model, or the zero-fill baseline
    when ``model`` is None.  ``masks`` is one mask or one per slice."""
    if len(dataset) == 0:
        raise ValueError("evaluate needs at least one slice")
    if not isinstance(masks, (list, tuple)):
        masks = [masks] * len(dataset)
    if len(masks) != len(dataset):
        raise ValueError(f"need one mask per slice: {len(masks)} masks, {len(dataset)} slices")
    prepared = [prepare_sample(gt, k, m) for (gt, k), m in zip(dataset, masks)]
    report, _ = _evaluate_prepared(model, prepared, batch_size)
    return report


# -- training loop -----------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float
    val: Mx.MetricReport


@dataclass
class History:
    records: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_ssim: float = -math.inf

    @property
    def final_val_ssim(self):
        return self.records[-1].val.ssim

    @property
    def train_losses(self):
        return [r.train_loss for r in self.records]


def train(model, train_set, val_set, config: TrainConfig, out_dir=None, resume_from=None):
    """Optimize ``model`` on phantom data; returns a History.

    Per epoch: seeded shuffle, SSIM loss on normalized magnitudes, RMSProp
    with the two-step learning-rate schedule, then a validation pass whose
    MetricReport is appended to ``metrics.csv`` when ``out_dir`` is given.
    The best-by-validation-SSIM checkpoint and the last epoch's checkpoint
    are persisted there too.
    """
    store = collect_params(model)
    opt_state = {}
    start_epoch = 0
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        restore_params(store, ckpt.model_arrays())
        opt_state = {k: v.copy() for k, v in ckpt.optimizer_state().items()}
        start_epoch = ckpt.epoch + 1

    train_prepared = prepare_split(train_set, config, "train")
    val_prepared = prepare_split(val_set, config, "val")

    csv_path = best_path = last_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, "metrics.csv")
        best_path = os.path.join(out_dir, "best.ckpt")
        last_path = os.path.join(out_dir, "last.ckpt")
        mask_dir = os.path.join(out_dir, "masks")
        os.makedirs(mask_dir, exist_ok=True)
        for split, prepared in (("train", train_prepared), ("val", val_prepared)):
            for i, s in enumerate(prepared):
                from .sampling import Mask

                Mask(s.mask_values).save(os.path.join(mask_dir, f"{split}_{i:04d}.msk"))

    history = History()
    n = len(train_prepared)
    arch = getattr(model, "arch", None)
    cfg_dict = None
    model_cfg = getattr(model, "config", None)
    if model_cfg is not None:
        from dataclasses import asdict

        cfg_dict = asdict(model_cfg)

    for epoch in range(start_epoch, config.epochs):
        if config.remask_each_epoch:
            train_prepared = prepare_split(train_set, config, "train", epoch=epoch)
        lr = learning_rate(config, epoch)
        order = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([config.seed, 104729, epoch]))
        ).permutation(n)

        loss_sum = 0.0
        for bi, lo in enumerate(range(0, n, config.batch_size)):
            chunk = [train_prepared[j] for j in order[lo : lo + config.batch_size]]
            out = _forward_batch(model, chunk)
            tgt = np.stack([s.target_norm for s in chunk])
            dr = np.array([s.data_range_norm for s in chunk])
            loss = ssim_loss(out, tgt, dr)
            value = float(loss.data)
            if not math.isfinite(value):
                raise RuntimeError(f"non-finite loss at epoch {epoch}, batch {bi}")
            store.zero_grad()
            loss.backward()
            rmsprop_step(store, opt_state, lr, config.rmsprop_rho, config.rmsprop_eps)
            loss_sum += value * len(chunk)
        train_loss = loss_sum / n

        val_report, val_loss = _evaluate_prepared(model, val_prepared, config.batch_size)
        history.records.append(EpochRecord(epoch, lr, train_loss, val_loss, val_report))

        if csv_path is not None:
            Mx.append_metrics_csv(csv_path, [Mx.format_metrics_row(
                epoch, "val", val_report.nmse, val_report.psnr, val_report.ssim, val_loss)])

        optimizer = {"type": "rmsprop", "rho": config.rmsprop_rho, "eps": config.rmsprop_eps,
                     "state": opt_state}
        if val_report.ssim > history.best_val_ssim:
            history.best_val_ssim = val_report.ssim
            history.best_epoch = epoch
            if best_path is not None:
                save_checkpoint(best_path, store, cfg_dict, arch, epoch, optimizer)
        if last_path is not None:
            save_checkpoint(last_path, store, cfg_dict, arch, epoch, optimizer)

    return history
