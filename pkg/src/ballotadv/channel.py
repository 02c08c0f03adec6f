"""Simulated print-and-scan channel and perturbation fidelity metrics.

The channel applies, in order: dot gain, Gaussian blur, a sub-pixel
translation (bilinear, edge pixels repeated), a gamma curve, a contrast
scale and offset, additive Gaussian noise, a clip to [0, 1] and optional
quantisation.  Randomness (translation and noise) comes from a substream
keyed by ``(seed, stream, image index)``.  Clean and adversarial copies of a
ballot use different streams because they are separate prints.

Scanner calibration passes a dark and a light reference patch through the
same channel and maps their medians back to 0.05 and 0.95.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import asdict, dataclass, fields, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from . import rng as rngmod
from .classifiers import Model, predict
from .data import HEIGHT, WIDTH, BubbleImage

DARK_REF, LIGHT_REF = 0.05, 0.95
CLEAN_STREAM, ADV_STREAM, REF_STREAM = 0, 1, 2
KL_EPS = 1e-9
SSIM_WIN = 8
SSIM_C1, SSIM_C2 = 0.01 ** 2, 0.03 ** 2


@dataclass(frozen=True)
class ChannelConfig:
    blur_sigma: float = 0.0
    noise_std: float = 0.0
    gamma: float = 1.0
    contrast_scale: float = 1.0
    contrast_offset: float = 0.0
    jitter_max: float = 0.0
    quant_levels: int | None = 256
    dot_gain: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.blur_sigma < 0 or self.noise_std < 0 or self.jitter_max < 0:
            raise ValueError("blur_sigma, noise_std and jitter_max must be >= 0")
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if not 0 <= self.dot_gain <= 1:
            raise ValueError("dot_gain must lie in [0, 1]")
        if self.quant_levels is not None and (int(self.quant_levels) != self.quant_levels
                                              or self.quant_levels < 2):
            raise ValueError("quant_levels must be an integer >= 2 (or null for none)")
        if not all(math.isfinite(v) for v in (self.contrast_scale, self.contrast_offset)):
            raise ValueError("contrast scale and offset must be finite")

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelConfig":
        d = dict(d)
        base = PRESETS[d.pop("preset")] if "preset" in d else cls()
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown channel fields: {sorted(unknown)}")
        return replace(base, **d)

    def to_dict(self) -> dict:
        return asdict(self)


# The identity preset skips quantisation so that it is exactly transparent.
PRESETS = {
    "identity": ChannelConfig(quant_levels=None),
    "laser+scan": ChannelConfig(blur_sigma=0.6, noise_std=0.02, gamma=1.1, jitter_max=0.4,
                                dot_gain=0.05, quant_levels=256),
    "harsh": ChannelConfig(blur_sigma=1.2, noise_std=0.05, gamma=1.3, contrast_scale=0.85,
                           contrast_offset=0.05, jitter_max=1.0, dot_gain=0.12,
                           quant_levels=64),
}


def preset(name: str, seed: int = 0) -> ChannelConfig:
    try:
        return replace(PRESETS[name], seed=seed)
    except KeyError:
        raise ValueError(f"unknown channel preset {name!r}; choose from {sorted(PRESETS)}") from None


def _channel_one(img: np.ndarray, cfg: ChannelConfig, gen: np.random.Generator) -> np.ndarray:
    x = img
    if cfg.dot_gain > 0:
        ink = ndimage.uniform_filter(1.0 - x, size=3, mode="nearest")
        x = x - cfg.dot_gain * ink
    if cfg.blur_sigma > 0:
        x = ndimage.gaussian_filter(x, cfg.blur_sigma, mode="nearest")
    if cfg.jitter_max > 0:
        dy, dx = gen.uniform(-cfg.jitter_max, cfg.jitter_max, 2)
        x = ndimage.shift(x, (dy, dx), order=1, mode="nearest")
    if cfg.gamma != 1.0:
        x = np.clip(x, 0.0, 1.0) ** cfg.gamma
    if cfg.contrast_scale != 1.0 or cfg.contrast_offset != 0.0:
        x = cfg.contrast_scale * x + cfg.contrast_offset
    if cfg.noise_std > 0:
        x = x + gen.normal(0.0, cfg.noise_std, x.shape)
    x = np.clip(x, 0.0, 1.0)
    if cfg.quant_levels is not None:
        q = cfg.quant_levels - 1
        x = np.rint(x * q) / q
    return x


def _gen(cfg, stream, index):
    return rngmod.substream(cfg.seed, rngmod.CHANNEL, stream, int(index))


def apply_channel(image, config: ChannelConfig, index: int = 0, stream: int = CLEAN_STREAM):
    """Pass one 40x50 image (array, flat array or ``BubbleImage``) through the channel."""
    if isinstance(image, BubbleImage):
        out = _channel_one(image.pixels, config, _gen(config, stream, index))
        return BubbleImage(out, image.label, image.mark_type)
    img = np.asarray(image, dtype=np.float64)
    out = _channel_one(img.reshape(HEIGHT, WIDTH), config, _gen(config, stream, index))
    return out.reshape(img.shape)


def apply_channel_batch(images, config: ChannelConfig, indices=None,
                        stream: int = CLEAN_STREAM) -> np.ndarray:
    x = np.asarray(images, dtype=np.float64)
    flat = x.reshape(len(x), HEIGHT, WIDTH)
    idx = np.arange(len(x)) if indices is None else np.asarray(indices)
    out = np.stack([_channel_one(im, config, _gen(config, stream, i)) for im, i in zip(flat, idx)]) \
        if len(x) else flat.copy()
    return out.reshape(x.shape)


# ---------------------------------------------------------------- calibration


@dataclass
class ScanBatch:
    """Scanned images together with the scanned reference patches."""

    images: np.ndarray
    dark_ref: np.ndarray
    light_ref: np.ndarray


def scan(images, config: ChannelConfig, indices=None, stream: int = CLEAN_STREAM) -> ScanBatch:
    """Channel output for ``images`` plus the dark and light reference patches."""
    dark = _channel_one(np.full((HEIGHT, WIDTH), DARK_REF), config, _gen(config, REF_STREAM, 2 * stream))
    light = _channel_one(np.full((HEIGHT, WIDTH), LIGHT_REF), config,
                         _gen(config, REF_STREAM, 2 * stream + 1))
    return ScanBatch(apply_channel_batch(images, config, indices, stream), dark, light)


def calibrate_contrast(batch: ScanBatch) -> tuple[float, float]:
    """Affine ``(scale, offset)`` sending the reference medians to 0.05 and 0.95."""
    dark = float(np.median(batch.dark_ref))
    light = float(np.median(batch.light_ref))
    if not light - dark > 1e-12:
        raise ValueError(f"degenerate calibration references: dark {dark:.6g}, light {light:.6g}")
    scale = (LIGHT_REF - DARK_REF) / (light - dark)
    return scale, DARK_REF - scale * dark


def apply_calibration(images, scale: float, offset: float) -> np.ndarray:
    x = np.asarray(images, dtype=np.float64)
    if scale == 1.0 and offset == 0.0:
        return x.copy()
    return np.clip(scale * x + offset, 0.0, 1.0)


def scan_and_calibrate(images, config: ChannelConfig, indices=None,
                       stream: int = CLEAN_STREAM) -> np.ndarray:
    batch = scan(images, config, indices, stream)
    return apply_calibration(batch.images, *calibrate_contrast(batch))


# ---------------------------------------------------------------- metrics


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def rmse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def _hist(x, bins):
    counts, _ = np.histogram(np.clip(x, 0.0, 1.0), bins=bins, range=(0.0, 1.0))
    p = counts / counts.sum() + KL_EPS
    return p / p.sum()


def kl_divergence_hist(a, b, bins: int = 50) -> float:
    """KL(P || Q) between smoothed pixel histograms of ``a`` and ``b`` over [0, 1]."""
    a, b = _pair(a, b)
    if bins < 2:
        raise ValueError("need at least two bins")
    p, q = _hist(a, bins), _hist(b, bins)
    return float(max(np.sum(p * np.log(p / q)), 0.0))


def ssim(a, b) -> float:
    """Mean SSIM over every 8x8 window (stride 1), unit dynamic range.

    Window statistics use population (1/n) variances and covariance.
    """
    a, b = _pair(a, b)
    a = a.reshape(HEIGHT, WIDTH) if a.ndim == 1 else a
    b = b.reshape(HEIGHT, WIDTH) if b.ndim == 1 else b
    wa = sliding_window_view(a, (SSIM_WIN, SSIM_WIN))
    wb = sliding_window_view(b, (SSIM_WIN, SSIM_WIN))
    ax = (-2, -1)
    ma, mb = wa.mean(axis=ax), wb.mean(axis=ax)
    da, db = wa - ma[..., None, None], wb - mb[..., None, None]
    va, vb = (da ** 2).mean(axis=ax), (db ** 2).mean(axis=ax)
    cov = (da * db).mean(axis=ax)
    s = ((2 * ma * mb + SSIM_C1) * (2 * cov + SSIM_C2)
         / ((ma ** 2 + mb ** 2 + SSIM_C1) * (va + vb + SSIM_C2)))
    return float(s.mean())


@dataclass
class PerturbationMetrics:
    rmse: float
    kl: float
    ssim: float


def _delta_image(d):
    return np.clip(d + 0.5, 0.0, 1.0)


def perturbation_fidelity(x, x_adv_digital, x_adv_channel, x_channel=None) -> PerturbationMetrics:
    """Compare the digital perturbation with the one that survives the channel.

    ``delta_digital = x_adv_digital - x`` and ``delta_channel = x_adv_channel -
    x_channel``, where ``x_channel`` is the channel output for the clean image
    (defaults to ``x``, right for the identity channel).  RMSE uses the raw
    deltas; KL (digital || channel) and SSIM use deltas shifted by +0.5 and
    clipped to [0, 1].
    """
    x, xd = _pair(x, x_adv_digital)
    _, xc = _pair(x, x_adv_channel)
    xcc = x if x_channel is None else _pair(x, x_channel)[1]
    dd, dc = xd - x, xc - xcc
    return PerturbationMetrics(rmse(dd, dc), kl_divergence_hist(_delta_image(dd), _delta_image(dc)),
                               ssim(_delta_image(dd), _delta_image(dc)))


# ---------------------------------------------------------------- evaluation


@dataclass
class AdvSet:
    """Clean images, their adversarial versions and the true labels."""

    x: np.ndarray
    x_adv: np.ndarray
    labels: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64).reshape(-1, HEIGHT * WIDTH)
        self.x_adv = np.asarray(self.x_adv, dtype=np.float64).reshape(self.x.shape)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(len(self.x))
        self.indices = np.asarray(self.indices, dtype=np.int64).reshape(len(self.x))

    def __len__(self):
        return len(self.x)


@dataclass
class PhysicalResult:
    robust_accuracy: float
    clean_accuracy: float
    digital_robust_accuracy: float
    n: int
    x_channel: np.ndarray
    x_adv_channel: np.ndarray


def physical_evaluation(model: Model, adv: AdvSet, config: ChannelConfig) -> PhysicalResult:
    """Scan and calibrate both the clean and adversarial images, then classify."""
    if len(adv) == 0:
        raise ValueError("empty adversarial set")
    xa = scan_and_calibrate(adv.x_adv, config, adv.indices, ADV_STREAM)
    xc = scan_and_calibrate(adv.x, config, adv.indices, CLEAN_STREAM)
    n = len(adv)
    robust = np.count_nonzero(predict(model, xa) == adv.labels) / n
    clean = np.count_nonzero(predict(model, xc) == adv.labels) / n
    digital = np.count_nonzero(predict(model, adv.x_adv) == adv.labels) / n
    return PhysicalResult(robust, clean, digital, n, xc, xa)


def physical_robust_accuracy(model: Model, adv: AdvSet, config: ChannelConfig) -> tuple[float, float]:
    """``(robust accuracy after the channel, channel-clean accuracy)``."""
    r = physical_evaluation(model, adv, config)
    return r.robust_accuracy, r.clean_accuracy


def fidelity_summary(adv: AdvSet, result: PhysicalResult) -> PerturbationMetrics:
    """Per-example fidelity metrics averaged over the set."""
    ms = [perturbation_fidelity(adv.x[i].reshape(HEIGHT, WIDTH), adv.x_adv[i].reshape(HEIGHT, WIDTH),
                                result.x_adv_channel[i].reshape(HEIGHT, WIDTH),
                                result.x_channel[i].reshape(HEIGHT, WIDTH)) for i in range(len(adv))]
    return PerturbationMetrics(float(np.mean([m.rmse for m in ms])), float(np.mean([m.kl for m in ms])),
                               float(np.mean([m.ssim for m in ms])))


GAP_COLUMNS = ["model", "attack", "budget", "n", "digital_robust_accuracy",
               "physical_robust_accuracy", "channel_clean_accuracy", "calibration"]
FIDELITY_COLUMNS = ["model", "attack", "budget", "n", "rmse", "kl", "ssim"]


def write_rows(path: str | os.PathLike, columns: list[str], rows: list[dict]) -> None:
    """CSV writer with fixed six-decimal floats."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([f"{r[c]:.6f}" if isinstance(r[c], float) else r[c] for c in columns])
