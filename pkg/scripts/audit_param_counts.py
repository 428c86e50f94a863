#!/usr/bin/env python3
"""Print closed-form vs instantiated parameter counts for the standard
configurations, plus the U-Net/V-Net size ratio."""

import argparse

from kvnet.models import (ModelConfig, build_model, count_params_closed_form,
                          count_params_instantiated, count_ratio, kvnet_conv_count)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--L", type=int, default=3, help="encoder levels (default 3)")
    args = parser.parse_args()
    L = args.L

    print(f"{'arch':<18}{'c':>6}{'closed form':>14}{'instantiated':>14}")
    rows = [("vnet", 32), ("vnet", 8), ("unet", 32), ("unet", 8), ("knet", 8)]
    for arch, c in rows:
        cfg = ModelConfig(c_v=c, c_k=c if c % 2 == 0 else c + 1, levels=L, blocks=1)
        closed = count_params_closed_form(arch, c, L)
        inst = count_params_instantiated(build_model(arch, cfg, init="zeros"), "conv_only")
        flag = "" if inst == closed else "  MISMATCH"
        print(f"{arch:<18}{c:>6}{closed:>14,}{inst:>14,}{flag}")

    print(f"\nr = unet/vnet at c=32, L={L}: {count_ratio(32, L):.4f}")
    total = kvnet_conv_count(32, 8, L, 12)
    print(f"kvnet conv weights (c_v=32, c_k=8, L={L}, T=12): {total:,} (~{total / 1e6:.2f} M)")


if __name__ == "__main__":
    main()
