"""Network architectures and dual-domain mechanics.

Contains the two-side-residual image network (V-Net), the reference U-Net,
the frequency-domain K-Net with cross-domain pooling/upsampling, squeeze-
excite channel attention, softer data consistency, image-domain fusion,
the cascaded dual-domain model (KV-Net), closed-form parameter counting,
and the CKPT checkpoint format.

Layer maps are pinned so that the closed-form conv-weight counts and the
instantiated counts agree exactly; every closed-form term corresponds to a
named layer below.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import FormatError, ShapeError
from .fourier import ComplexImage, channel_paired_transform
from .sampling import Mask
from .tensor import ParamStore, Tensor


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters defining every network instance.

    c_v / c_k are the entry channel widths of the image and frequency
    branches, ``levels`` the encoder depth, ``blocks`` the number of
    cascaded dual-domain stages.
    """

    c_v: int = 32
    c_k: int = 8
    levels: int = 3
    blocks: int = 12
    leaky_slope: float = 0.2
    se_reduction: int = 8

    def __post_init__(self):
        if self.c_v < 2 or self.c_k < 2:
            raise ValueError("entry channel counts must be >= 2")
        if self.c_k % 2:
            raise ValueError(f"c_k must be even (channel pairs are complex planes), got {self.c_k}")
        if self.levels < 1 or self.blocks < 1:
            raise ValueError("levels and blocks must be >= 1")
        if self.se_reduction < 1:
            raise ValueError("se_reduction must be >= 1")

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in ("c_v", "c_k", "levels", "blocks", "leaky_slope", "se_reduction") if k in d})


def _rng_for(seed):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def _init_weight(shape, fan_in, rng, dtype, zero):
    if zero or rng is None:
        return np.zeros(shape, dtype=dtype)
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv:
    """Bias-free convolution layer, kernel 3x3 (pad 1) or 1x1."""

    def __init__(self, cin, cout, ksize, rng, dtype, zero):
        self.w = Tensor(
            _init_weight((cout, cin, ksize, ksize), cin * ksize * ksize, rng, dtype, zero),
            requires_grad=True,
        )

    def __call__(self, x):
        return T.conv2d(x, self.w)

    def named_params(self):
        yield "w", self.w


class ConvT:
    """Bias-free 2x2 stride-2 transposed convolution (spatial doubling)."""

    def __init__(self, cin, cout, rng, dtype, zero):
        self.w = Tensor(_init_weight((cin, cout, 2, 2), cin * 4, rng, dtype, zero), requires_grad=True)

    def __call__(self, x):
        return T.conv_transpose2d(x, self.w)

    def named_params(self):
        yield "w", self.w


class Dense:
    def __init__(self, cin, cout, rng, dtype, zero):
        self.w = Tensor(_init_weight((cout, cin), cin, rng, dtype, zero), requires_grad=True)
        self.b = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return T.linear(x, self.w, self.b)

    def named_params(self):
        yield "w", self.w
        yield "b", self.b


class SqueezeExcite:
    """Channel attention: global pool -> bottleneck MLP -> sigmoid scaling.

    The second layer starts at zero so the gate opens at 0.5 for every
    channel; a hidden width floor of 1 keeps tiny models valid.
    """

    def __init__(self, channels, reduction, slope, rng, dtype, zero=False):
        hidden = max(1, channels // reduction)
        self.slope = slope
        self.fc1 = Dense(channels, hidden, rng, dtype, zero)
        self.fc2 = Dense(hidden, channels, rng, dtype, zero=True)

    def __call__(self, x):
        n, c = x.data.shape[:2]
        s = T.global_avg_pool(x)
        s = T.leaky_relu(self.fc1(s), self.slope)
        s = T.sigmoid(self.fc2(s))
        return x * T.reshape(s, (n, c, 1, 1))

    def named_params(self):
        for sub, layer in (("fc1", self.fc1), ("fc2", self.fc2)):
            for name, t in layer.named_params():
                yield f"{sub}.{name}", t


def _check_divisible(x, levels, who):
    h, w = x.data.shape[-2:]
    step = 1 << levels
    if h % step or w % step:
        raise ShapeError(f"{who}: spatial extents {h}x{w} must be divisible by 2^levels = {step}")


def _named(prefix, module):
    for name, t in module.named_params():
        yield f"{prefix}.{name}", t


class VNet:
    """Light-weight encoder-decoder with two-side residual connections.

    Each encoder block is two 3x3 convs; blocks are joined by 2x2 max
    pooling.  The bottleneck halves its width again so its input can be
    added back (bottom-side residual).  Decoder blocks upsample with a
    channel-preserving transposed conv, add the encoder block's tail
    (top-side residual), apply channel attention, run two 3x3 convs that
    halve the width, and add the tensor that entered the matching encoder
    block (bottom-side residual).  The outermost block ends in a 1x1 conv
    to 2 channels plus a global input residual, which makes the
    zero-weight network an exact identity.
    """

    def __init__(self, c, levels, se_reduction=8, leaky_slope=0.2, dtype=np.float32,
                 init="kaiming", seed=0, rng=None):
        if c < 2:
            raise ValueError("entry channel count must be >= 2")
        zero = init == "zeros"
        if rng is None and not zero:
            rng = _rng_for(seed)
        self.c = c
        self.levels = levels
        self.slope = leaky_slope
        widths = [c * (1 << i) for i in range(levels)]  # block widths, shallow to deep

        self.enc = []
        prev = 2
        for w in widths:
            self.enc.append((Conv(prev, w, 3, rng, dtype, zero), Conv(w, w, 3, rng, dtype, zero)))
            prev = w
        deep = widths[-1]
        self.bneck = (Conv(deep, 2 * deep, 3, rng, dtype, zero), Conv(2 * deep, deep, 3, rng, dtype, zero))
        self.ups = [ConvT(w, w, rng, dtype, zero) for w in widths]
        self.se = [SqueezeExcite(w, se_reduction, leaky_slope, rng, dtype, zero) for w in widths]
        self.dec = []
        for i, w in enumerate(widths):
            out_w = w if i == 0 else widths[i - 1]
            self.dec.append((Conv(w, out_w, 3, rng, dtype, zero), Conv(out_w, out_w, 3, rng, dtype, zero)))
        self.out1x1 = Conv(c, 2, 1, rng, dtype, zero)

    def __call__(self, x):
        _check_divisible(x, self.levels, "vnet")
        act = lambda t: T.leaky_relu(t, self.slope)
        entries, tails = [], []
        h = x
        for conv_a, conv_b in self.enc:
            entries.append(h)
            h = act(conv_a(h))
            h = act(conv_b(h))
            tails.append(h)
            h = T.maxpool2(h)
        bn_in = h
        h = act(self.bneck[0](h))
        h = act(self.bneck[1](h))
        h = h + bn_in
        for i in reversed(range(self.levels)):
            h = act(self.ups[i](h))
            h = h + tails[i]
            h = self.se[i](h)
            conv_a, conv_b = self.dec[i]
            h = act(conv_a(h))
            h = act(conv_b(h))
            if i > 0:
                h = h + entries[i]
            else:
                h = self.out1x1(h)
                h = h + x
        return h

    def named_params(self):
        for i, (a, b) in enumerate(self.enc, start=1):
            yield from _named(f"enc{i}.conv1", a)
            yield from _named(f"enc{i}.conv2", b)
        yield from _named("bneck.conv1", self.bneck[0])
        yield from _named("bneck.conv2", self.bneck[1])
        for i in range(self.levels):
            yield from _named(f"dec{i + 1}.up", self.ups[i])
            yield from _named(f"dec{i + 1}.se", self.se[i])
            yield from _named(f"dec{i + 1}.conv1", self.dec[i][0])
            yield from _named(f"dec{i + 1}.conv2", self.dec[i][1])
        yield from _named("out1x1", self.out1x1)


def cd_pool(x, kind="max"):
    """Cross-domain pooling of frequency features: inverse transform each
    channel pair to image space, pool there, transform back."""
    if kind not in ("max", "avg"):
        raise ValueError(f"pool kind must be 'max' or 'avg', got {kind!r}")
    img = channel_paired_transform(x, "inv")
    pooled = T.maxpool2(img) if kind == "max" else T.avgpool2(img)
    return channel_paired_transform(pooled, "fwd")


def cd_upsample(x, weight):
    """Cross-domain upsampling: inverse transform, 2x2 stride-2 transposed
    conv in image space, forward transform.  Output channels (set by the
    kernel) must stay even so the pairs remain complex planes."""
    w = weight.w if isinstance(weight, ConvT) else weight
    if w.data.shape[1] % 2:
        raise ShapeError(f"cd_upsample: output channel count must be even, got {w.data.shape[1]}")
    img = channel_paired_transform(x, "inv")
    up = T.conv_transpose2d(img, w)
    return channel_paired_transform(up, "fwd")


class UNet:
    """Reference encoder-decoder with concatenation skips.

    Encoder matches VNet's; the bottleneck keeps its doubled width; each
    decoder level is a channel-halving 2x2 transposed conv, skip concat,
    then two 3x3 convs; a final 1x1 conv maps back to 2 channels.  Used
    directly as an ablation baseline and as the skeleton K-Net modifies.
    """

    cross_domain = False

    def __init__(self, c, levels, leaky_slope=0.2, dtype=np.float32, init="kaiming",
                 seed=0, rng=None):
        if c < 2:
            raise ValueError("entry channel count must be >= 2")
        if self.cross_domain and c % 2:
            raise ValueError(f"entry channel count must be even for k-space pairing, got {c}")
        zero = init == "zeros"
        if rng is None and not zero:
            rng = _rng_for(seed)
        self.c = c
        self.levels = levels
        self.slope = leaky_slope
        widths = [c * (1 << i) for i in range(levels)]

        self.enc = []
        prev = 2
        for w in widths:
            self.enc.append((Conv(prev, w, 3, rng, dtype, zero), Conv(w, w, 3, rng, dtype, zero)))
            prev = w
        deep = widths[-1]
        self.bneck = (Conv(deep, 2 * deep, 3, rng, dtype, zero), Conv(2 * deep, 2 * deep, 3, rng, dtype, zero))
        self.ups = [ConvT(2 * w, w, rng, dtype, zero) for w in widths]
        self.dec = [
            (Conv(2 * w, w, 3, rng, dtype, zero), Conv(w, w, 3, rng, dtype, zero)) for w in widths
        ]
        self.out1x1 = Conv(c, 2, 1, rng, dtype, zero)

    def _down(self, h):
        return T.maxpool2(h)

    def _up(self, h, level):
        return self.ups[level](h)

    def __call__(self, x):
        _check_divisible(x, self.levels, "knet" if self.cross_domain else "unet")
        act = lambda t: T.leaky_relu(t, self.slope)
        tails = []
        h = x
        for conv_a, conv_b in self.enc:
            h = act(conv_a(h))
            h = act(conv_b(h))
            tails.append(h)
            h = self._down(h)
        h = act(self.bneck[0](h))
        h = act(self.bneck[1](h))
        for i in reversed(range(self.levels)):
            h = act(self._up(h, i))
            h = T.concat([h, tails[i]], axis=1)
            conv_a, conv_b = self.dec[i]
            h = act(conv_a(h))
            h = act(conv_b(h))
        return self.out1x1(h)

    def named_params(self):
        for i, (a, b) in enumerate(self.enc, start=1):
            yield from _named(f"enc{i}.conv1", a)
            yield from _named(f"enc{i}.conv2", b)
        yield from _named("bneck.conv1", self.bneck[0])
        yield from _named("bneck.conv2", self.bneck[1])
        for i in range(self.levels):
            yield from _named(f"dec{i + 1}.up", self.ups[i])
            yield from _named(f"dec{i + 1}.conv1", self.dec[i][0])
            yield from _named(f"dec{i + 1}.conv2", self.dec[i][1])
        yield from _named("out1x1", self.out1x1)


class KNet(UNet):
    """Frequency-domain network: the reference U-Net with its pooling and
    upsampling swapped for the cross-domain versions.

    The transposed conv kernels keep U-Net's channel-halving shapes, so
    the swap adds no weights and the two architectures stay identical
    except for the resampling operators.
    """

    cross_domain = True

    def _down(self, h):
        return cd_pool(h, "max")

    def _up(self, h, level):
        return cd_upsample(h, self.ups[level])


def _mask_array(mask, dtype):
    values = mask.values if isinstance(mask, Mask) else np.asarray(mask)
    values = values.astype(dtype)
    if values.ndim == 1:
        return values[None, None, None, :]
    if values.ndim == 2:
        return values[:, None, None, :]
    raise ShapeError(f"mask must be [P] or [N,P], got shape {values.shape}")


def _pair_tensor(x, dtype=None):
    """Coerce a ComplexImage / complex array / array to an [N,2,H,W] Tensor."""
    if isinstance(x, Tensor):
        return x, False
    if isinstance(x, ComplexImage):
        arr = np.stack([x.re, x.im])[None]
        return Tensor(arr.astype(dtype or arr.dtype)), True
    arr = np.asarray(x)
    if np.iscomplexobj(arr):
        if arr.ndim == 2:
            arr = arr[None]
        arr = np.stack([arr.real, arr.imag], axis=1)
        return Tensor(arr.astype(dtype or np.float64)), True
    return Tensor(arr.astype(dtype or arr.dtype)), False


def data_consistency(k_hat, k_raw, mask, gamma):
    """Softer data consistency on k-space columns.

    Unsampled columns pass the prediction through; sampled columns blend
    as (1-gamma)*prediction + gamma*measurement, which is the same
    correction written so that gamma=0 is the exact identity and gamma=1
    exactly restores the measured data.  ``gamma`` may be a float or a
    learnable scalar Tensor.
    """
    hat, unwrap = _pair_tensor(k_hat)
    raw, _ = _pair_tensor(k_raw, dtype=hat.dtype)
    if hat.data.shape != raw.data.shape:
        raise ShapeError(f"data_consistency: shapes differ, {hat.data.shape} vs {raw.data.shape}")
    m = _mask_array(mask, hat.data.dtype)
    if m.shape[-1] != hat.data.shape[-1]:
        raise ShapeError(f"mask length {m.shape[-1]} != k-space width {hat.data.shape[-1]}")
    if isinstance(gamma, Tensor):
        gm = gamma * m
    else:
        gm = Tensor(np.asarray(gamma, dtype=hat.data.dtype) * m)
    out = hat * (1.0 - gm) + raw * gm
    if unwrap:
        return ComplexImage(out.data[0, 0], out.data[0, 1], "kspace")
    return out


def image_data_consistency(x, k_raw, mask, gamma):
    """Image-domain data consistency: subtract the inverse transform of the
    masked k-space residual, scaled by gamma.

    Algebraically identical to transform / k-space consistency / inverse
    transform, but gamma=0 leaves the input untouched without a transform
    round trip.
    """
    resid = channel_paired_transform(x, "fwd") + (-1.0) * _pair_tensor(k_raw, dtype=x.dtype)[0]
    m = _mask_array(mask, x.data.dtype)
    corr = channel_paired_transform(resid * m, "inv")
    if not isinstance(gamma, Tensor):
        gamma = Tensor(np.asarray(gamma, dtype=x.data.dtype))
    return x + (-1.0) * (corr * gamma)


def fuse_coefficients(mu):
    """Fusion weights (1/(1+mu), mu/(1+mu)); they always sum to one."""
    value = float(mu.data) if isinstance(mu, Tensor) else float(mu)
    if abs(1.0 + value) <= 1e-6:
        raise ValueError(f"degenerate fusion: |1+mu| = {abs(1.0 + value):.2e} <= 1e-6")
    if isinstance(mu, Tensor):
        denom = mu + 1.0
        return 1.0 / denom, mu / denom
    return 1.0 / (1.0 + value), value / (1.0 + value)


def fuse(a_v, a_k, mu):
    """Image-domain fusion of the two branch outputs."""
    if a_v.data.shape != a_k.data.shape:
        raise ShapeError(f"fuse: shapes differ, {a_v.data.shape} vs {a_k.data.shape}")
    w_v, w_k = fuse_coefficients(mu)
    return a_v * w_v + a_k * w_k


class KVBlock:
    """One cascade stage: parallel frequency and image branches, each with
    its own data consistency, merged by learnable fusion."""

    def __init__(self, config: ModelConfig, dtype, init, rng, scalar_init=1.0):
        zero = init == "zeros"
        self.vnet = VNet(config.c_v, config.levels, config.se_reduction, config.leaky_slope,
                         dtype, init, rng=rng)
        self.knet = KNet(config.c_k, config.levels, config.leaky_slope, dtype, init, rng=rng)
        val = 0.0 if zero else scalar_init
        self.gamma_k = Tensor(np.asarray(val, dtype=dtype), requires_grad=True)
        self.gamma_i = Tensor(np.asarray(val, dtype=dtype), requires_grad=True)
        self.mu = Tensor(np.asarray(val, dtype=dtype), requires_grad=True)

    def __call__(self, img, ksp, k_raw, mask):
        b_k = data_consistency(self.knet(ksp), k_raw, mask, self.gamma_k)
        a_k = channel_paired_transform(b_k, "inv")
        a_v = image_data_consistency(self.vnet(img), k_raw, mask, self.gamma_i)
        img_next = fuse(a_v, a_k, self.mu)
        ksp_next = channel_paired_transform(img_next, "fwd")
        return img_next, ksp_next

    def named_params(self):
        yield from _named("vnet", self.vnet)
        yield from _named("knet", self.knet)
        yield "gamma_k", self.gamma_k
        yield "gamma_i", self.gamma_i
        yield "mu", self.mu


class KVNet:
    """Cascade of dual-domain blocks mapping raw undersampled k-space to a
    magnitude image."""

    arch = "kvnet"

    def __init__(self, config: ModelConfig, dtype=np.float32, init="kaiming", seed=0):
        self.config = config
        rng = None if init == "zeros" else _rng_for(seed)
        self.blocks = [KVBlock(config, dtype, init, rng) for _ in range(config.blocks)]

    def __call__(self, k_raw, mask):
        k, _ = _pair_tensor(k_raw)
        img = channel_paired_transform(k, "inv")  # zero-filled start
        ksp = k
        for block in self.blocks:
            img, ksp = block(img, ksp, k, mask)
        return T.complex_magnitude(img)

    def named_params(self):
        for i, block in enumerate(self.blocks):
            yield from _named(f"block{i}", block)


class KNetCascade:
    """Ablation model: the frequency branch alone, cascaded with k-space
    data consistency."""

    arch = "cascade_k"

    def __init__(self, config: ModelConfig, dtype=np.float32, init="kaiming", seed=0):
        self.config = config
        rng = None if init == "zeros" else _rng_for(seed)
        zero = init == "zeros"
        self.knets = [KNet(config.c_k, config.levels, config.leaky_slope, dtype, init, rng=rng)
                      for _ in range(config.blocks)]
        val = 0.0 if zero else 1.0
        self.gammas = [Tensor(np.asarray(val, dtype=dtype), requires_grad=True)
                       for _ in range(config.blocks)]

    def __call__(self, k_raw, mask):
        k, _ = _pair_tensor(k_raw)
        ksp = k
        for net, gamma in zip(self.knets, self.gammas):
            ksp = data_consistency(net(ksp), k, mask, gamma)
        return T.complex_magnitude(channel_paired_transform(ksp, "inv"))

    def named_params(self):
        for i, (net, gamma) in enumerate(zip(self.knets, self.gammas)):
            yield from _named(f"block{i}.knet", net)
            yield f"block{i}.gamma_k", gamma


class VNetCascade:
    """Ablation model: the image branch alone, cascaded with image-domain
    data consistency."""

    arch = "cascade_v"

    def __init__(self, config: ModelConfig, dtype=np.float32, init="kaiming", seed=0):
        self.config = config
        rng = None if init == "zeros" else _rng_for(seed)
        zero = init == "zeros"
        self.vnets = [VNet(config.c_v, config.levels, config.se_reduction, config.leaky_slope,
                           dtype, init, rng=rng) for _ in range(config.blocks)]
        val = 0.0 if zero else 1.0
        self.gammas = [Tensor(np.asarray(val, dtype=dtype), requires_grad=True)
                       for _ in range(config.blocks)]

    def __call__(self, k_raw, mask):
        k, _ = _pair_tensor(k_raw)
        img = channel_paired_transform(k, "inv")
        for net, gamma in zip(self.vnets, self.gammas):
            img = image_data_consistency(net(img), k, mask, gamma)
        return T.complex_magnitude(img)

    def named_params(self):
        for i, (net, gamma) in enumerate(zip(self.vnets, self.gammas)):
            yield from _named(f"block{i}.vnet", net)
            yield f"block{i}.gamma_i", gamma


def collect_params(model) -> ParamStore:
    store = ParamStore()
    for name, t in model.named_params():
        store.add(name, t)
    return store


def build_model(arch, config: ModelConfig, dtype=np.float32, init="kaiming", seed=0):
    if arch == "vnet":
        return VNet(config.c_v, config.levels, config.se_reduction, config.leaky_slope,
                    dtype, init, seed=seed)
    if arch == "unet":
        return UNet(config.c_v, config.levels, config.leaky_slope, dtype, init, seed=seed)
    if arch == "knet":
        return KNet(config.c_k, config.levels, config.leaky_slope, dtype, init, seed=seed)
    if arch == "kvnet":
        return KVNet(config, dtype, init, seed)
    if arch == "cascade_k":
        return KNetCascade(config, dtype, init, seed)
    if arch == "cascade_v":
        return VNetCascade(config, dtype, init, seed)
    raise ValueError(f"unknown architecture {arch!r}")


# -- parameter counting ------------------------------------------------------


def count_params_closed_form(arch, c, L):
    """Conv-weight count of one network from the layer-map formulas.

    Counts convolution and transposed-convolution weights only (channel
    attention, data-consistency and fusion scalars are excluded, matching
    the convention that their cost is negligible).  For "unet"/"knet" this
    is the full-width-bottleneck reading that reproduces the published
    sizes (1,923,712 at c=32, L=3); halving the second bottleneck conv
    instead would give 1,628,800.  "knet" equals "unet" exactly: the
    cross-domain wrappers add no weights and its transposed convs keep
    U-Net's kernel shapes.
    """
    if c < 2 or L < 1:
        raise ValueError("need c >= 2 and L >= 1")
    enc = 9 * (2 * c + c * c + sum(
        2 ** (i - 1) * c * 2**i * c + (2**i * c) ** 2 for i in range(1, L)
    ))
    if arch == "vnet":
        dec = 2 * c + 9 * (2 * c * c + sum(
            2**i * c * 2 ** (i - 1) * c + (2 ** (i - 1) * c) ** 2 for i in range(1, L)
        ))
        bneck = 9 * 2 * (2 ** (L - 1) * c * 2**L * c)
        ups = 4 * sum((2 ** (i - 1) * c) ** 2 for i in range(1, L + 1))
        return enc + dec + bneck + ups
    if arch in ("unet", "knet"):
        dec = 2 * c + 9 * sum(
            2**i * c * 2 ** (i - 1) * c + (2 ** (i - 1) * c) ** 2 for i in range(1, L + 1)
        )
        bneck = 9 * (2 ** (L - 1) * c * 2**L * c + (2**L * c) ** 2)
        ups = 4 * sum(2**i * c * 2 ** (i - 1) * c for i in range(1, L + 1))
        return enc + dec + bneck + ups
    raise ValueError(f"unknown architecture {arch!r} (closed forms cover vnet/unet/knet)")


def count_ratio(c, L):
    """Size ratio r = U-Net weights / V-Net weights at the same c, L."""
    return count_params_closed_form("unet", c, L) / count_params_closed_form("vnet", c, L)


def kvnet_conv_count(c_v, c_k, L, blocks):
    """Total conv weights of the cascaded dual-domain model."""
    return blocks * (count_params_closed_form("vnet", c_v, L) + count_params_closed_form("knet", c_k, L))


def _is_conv_param(name):
    if ".se." in name:
        return False
    last = name.rsplit(".", 1)[-1]
    return last not in ("gamma_k", "gamma_i", "mu")


def count_params_instantiated(params, include="conv_only"):
    """Sum tensor element counts in a ParamStore (or model)."""
    if not isinstance(params, ParamStore):
        params = collect_params(params)
    if include == "all":
        return params.total_size()
    if include == "conv_only":
        return params.total_size(_is_conv_param)
    raise ValueError(f"include must be 'conv_only' or 'all', got {include!r}")


# -- checkpoint format -------------------------------------------------------

_CKPT_MAGIC = b"CKPT"


def save_checkpoint(path, store, config=None, arch=None, epoch=0, optimizer=None):
    """Write a CKPT file: magic, u32 header length, JSON header, f32 blobs.

    ``optimizer`` is a dict {"type", "rho", "eps", "state": {name: array}};
    its arrays are stored alongside the parameters under an ``opt.``
    prefix.  The write is atomic (temp file + rename) and round trips
    bit-exactly.
    """
    if not isinstance(store, ParamStore):
        store = collect_params(store)
    entries = []
    blobs = []
    offset = 0

    def push(name, arr):
        nonlocal offset
        if arr.dtype != np.float32:
            raise ValueError(f"checkpoint blobs are float32; {name} has dtype {arr.dtype}")
        raw = np.ascontiguousarray(arr).astype("<f4", copy=False).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "float32",
                        "byte_offset": offset})
        blobs.append(raw)
        offset += len(raw)

    for name, t in store.items():
        push(name, t.data)
    opt_desc = None
    if optimizer is not None:
        opt_desc = {k: v for k, v in optimizer.items() if k != "state"}
        for name, arr in optimizer["state"].items():
            push(f"opt.{name}", arr)

    header = {
        "format_version": 1,
        "config": dict(config) if isinstance(config, dict) else (asdict(config) if config else None),
        "arch": arch,
        "epoch": int(epoch),
        "optimizer": opt_desc,
        "params": entries,
    }
    payload = json.dumps(header).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        for raw in blobs:
            fh.write(raw)
    os.replace(tmp, path)


@dataclass
class Checkpoint:
    config: dict | None
    arch: str | None
    epoch: int
    optimizer: dict | None
    arrays: dict

    def model_arrays(self):
        return {k: v for k, v in self.arrays.items() if not k.startswith("opt.")}

    def optimizer_state(self):
        return {k[4:]: v for k, v in self.arrays.items() if k.startswith("opt.")}


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _CKPT_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {_CKPT_MAGIC!r}")
    (hlen,) = struct.unpack("<I", blob[4:8])
    header = json.loads(blob[8 : 8 + hlen].decode("utf-8"))
    base = 8 + hlen
    arrays = {}
    for entry in header["params"]:
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = base + entry["byte_offset"]
        arr = np.frombuffer(blob[start : start + 4 * n], dtype="<f4").reshape(entry["shape"])
        arrays[entry["name"]] = arr.copy()
    return Checkpoint(header.get("config"), header.get("arch"), header.get("epoch", 0),
                      header.get("optimizer"), arrays)


def restore_params(store: ParamStore, arrays):
    """Copy checkpoint arrays into a ParamStore built from the same config."""
    names = set(store.names())
    if names != set(arrays.keys()):
        missing = names - set(arrays)
        extra = set(arrays) - names
        raise FormatError(f"checkpoint/model mismatch: missing {sorted(missing)[:3]}, extra {sorted(extra)[:3]}")
    for name, t in store.items():
        arr = arrays[name]
        if tuple(arr.shape) != t.data.shape:
            raise ShapeError(f"checkpoint {name}: shape {arr.shape} != model {t.data.shape}")
        t.data = arr.astype(t.data.dtype)
