#!/usr/bin/env python3
"""Why pooling a spectrum directly fails: downsample phantom k-space with
traditional max/avg pooling and with the cross-domain versions, write the
image versions as PGMs, and report SSIM against the downsampled phantom."""

import argparse
import os

import numpy as np

from kvnet import tensor as T
from kvnet.cli import write_pgm
from kvnet.fourier import ifft2c_array
from kvnet.metrics import ssim
from kvnet.models import cd_pool
from kvnet.tensor import Tensor
from kvnet.training import PhantomSpec, make_phantom_dataset


def image_version(k_pair):
    return np.abs(ifft2c_array(k_pair[0, 0] + 1j * k_pair[0, 1]))


def downsample_reference(mag):
    h, w = mag.shape
    return mag.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=64, help="phantom size (default 64)")
    parser.add_argument("--seed", type=int, default=0, help="phantom seed (default 0)")
    parser.add_argument("--out", default="cd_pool_demo", help="output directory for PGMs")
    args = parser.parse_args()

    img, k = make_phantom_dataset(PhantomSpec(size=args.size, seed=args.seed), 1)[0]
    x = np.stack([k.re, k.im])[None]
    reference = downsample_reference(img.magnitude())
    dr = float(reference.max())

    routes = {
        "traditional_max": T.maxpool2(Tensor(x)).data,
        "traditional_avg": T.avgpool2(Tensor(x)).data,
        "cross_domain_max": cd_pool(Tensor(x), "max").data,
        "cross_domain_avg": cd_pool(Tensor(x), "avg").data,
    }

    os.makedirs(args.out, exist_ok=True)
    write_pgm(os.path.join(args.out, "phantom.pgm"), img.magnitude())
    write_pgm(os.path.join(args.out, "reference_downsampled.pgm"), reference)
    print(f"{'route':<22}{'ssim vs reference':>18}")
    for name, pooled in routes.items():
        image = image_version(pooled)
        write_pgm(os.path.join(args.out, f"{name}.pgm"), image)
        score = float(ssim(image, reference, dr).data)
        print(f"{name:<22}{score:>18.4f}")
    print(f"\nPGMs written to {args.out}/")


if __name__ == "__main__":
    main()
