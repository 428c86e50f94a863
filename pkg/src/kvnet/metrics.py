"""Image quality metrics: SSIM (differentiable), PSNR, NMSE, metrics CSV.

SSIM follows the fastMRI evaluation convention: 7x7 uniform window,
k1=0.01 / k2=0.03 on the caller-supplied data range, biased window
moments, valid-region windowing (no padding).  It is built from tensor
ops so 1-SSIM can drive training.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor

CSV_FIELDS = ("epoch", "split", "nmse", "psnr", "ssim", "loss")


@dataclass
class MetricReport:
    nmse: float
    psnr: float
    ssim: float
    n_slices: int


def _as_nchw(x, dtype=None):
    if isinstance(x, Tensor):
        t = x
    else:
        t = Tensor(np.asarray(x, dtype=dtype))
    if t.data.ndim == 2:
        t = T.reshape(t, (1, 1) + t.data.shape)
    if t.data.ndim != 4 or t.data.shape[1] != 1:
        raise ShapeError(f"expected a magnitude image [H,W] or [N,1,H,W], got {t.data.shape}")
    return t


def ssim(x, y, data_range, win_size=7) -> Tensor:
    """Mean structural similarity between magnitude images (differentiable).

    ``data_range`` is a positive scalar or a per-slice vector of length N.
    Returns a scalar Tensor; gradients flow to ``x`` (and ``y``) when they
    are graph tensors.
    """
    x = _as_nchw(x)
    y = _as_nchw(y, dtype=x.dtype)
    if x.data.shape != y.data.shape:
        raise ShapeError(f"ssim: shapes differ, {x.data.shape} vs {y.data.shape}")

    dr = np.asarray(data_range, dtype=x.dtype)
    if np.any(dr <= 0):
        raise ValueError("data_range must be positive")
    if dr.ndim == 1:
        if dr.shape[0] != x.data.shape[0]:
            raise ShapeError(f"per-slice data_range needs {x.data.shape[0]} entries, got {dr.shape[0]}")
        dr = dr[:, None, None, None]
    c1 = (0.01 * dr) ** 2
    c2 = (0.03 * dr) ** 2

    mu_x = T.uniform_filter_valid(x, win_size)
    mu_y = T.uniform_filter_valid(y, win_size)
    xx = T.uniform_filter_valid(x * x, win_size)
    yy = T.uniform_filter_valid(y * y, win_size)
    xy = T.uniform_filter_valid(x * y, win_size)

    mu_xy = mu_x * mu_y
    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_xy

    lum = (2.0 * mu_xy + c1) / (mu_x * mu_x + mu_y * mu_y + c1)
    con = (2.0 * cov + c2) / (var_x + var_y + c2)
    return T.mean_all(lum * con)


def psnr(x, y, data_range) -> float:
    """20*log10(data_range) - 10*log10(MSE); +inf when x == y exactly."""
    if data_range <= 0:
        raise ValueError("data_range must be positive")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"psnr: shapes differ, {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 20.0 * math.log10(data_range) - 10.0 * math.log10(mse)


def nmse(x, y) -> float:
    """||x - y||^2 / ||y||^2 against the reference y."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"nmse: shapes differ, {x.shape} vs {y.shape}")
    denom = float(np.sum(y**2))
    if denom == 0.0:
        raise ValueError("nmse reference has zero norm")
    return float(np.sum((x - y) ** 2)) / denom


def format_metrics_row(epoch, split, nmse_v, psnr_v, ssim_v, loss_v):
    return {
        "epoch": int(epoch),
        "split": str(split),
        "nmse": float(nmse_v),
        "psnr": float(psnr_v),
        "ssim": float(ssim_v),
        "loss": float(loss_v),
    }


def write_metrics_csv(path, rows):
    """Write metrics rows (dicts with CSV_FIELDS keys) as UTF-8, '\\n' ends."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        _write_rows(fh, rows, header=True)


def append_metrics_csv(path, rows):
    import os

    fresh = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", encoding="utf-8", newline="\n") as fh:
        _write_rows(fh, rows, header=fresh)


def _write_rows(fh, rows, header):
    if header:
        fh.write(",".join(CSV_FIELDS) + "\n")
    for row in rows:
        fh.write(
            "{epoch},{split},{nmse:.10g},{psnr:.10g},{ssim:.10g},{loss:.10g}\n".format(**row)
        )


def read_metrics_csv(path):
    with open(path, encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for rec in reader:
            rows.append(
                format_metrics_row(
                    int(rec["epoch"]), rec["split"], float(rec["nmse"]),
                    float(rec["psnr"]), float(rec["ssim"]), float(rec["loss"]),
                )
            )
    return rows
