#!/usr/bin/env python3
"""Desk-scale ablation: zero-filling vs the frequency-only cascade vs the
image-only cascade vs the full dual-domain model, trained under an
identical budget on synthetic phantoms.

The defaults finish in a couple of minutes on a laptop CPU; scale --n-train
and --epochs up for smoother curves.
"""

import argparse
import time

from kvnet.models import KNetCascade, KVNet, ModelConfig, VNetCascade
from kvnet.training import (PhantomSpec, TrainConfig, _evaluate_prepared,
                            make_phantom_dataset, prepare_split, train)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n-train", type=int, default=64, help="training phantoms (default 64)")
    parser.add_argument("--n-val", type=int, default=16, help="validation phantoms (default 16)")
    parser.add_argument("--size", type=int, default=64, help="image size (default 64)")
    parser.add_argument("--epochs", type=int, default=5, help="epochs (default 5)")
    parser.add_argument("--blocks", type=int, default=2, help="cascade length T (default 2)")
    parser.add_argument("--cv", type=int, default=8, help="image-branch entry channels")
    parser.add_argument("--ck", type=int, default=4, help="frequency-branch entry channels")
    parser.add_argument("--levels", type=int, default=2, help="encoder levels (default 2)")
    parser.add_argument("--seed", type=int, default=0, help="seed for data, masks and init")
    parser.add_argument("--out", help="optional output directory prefix for metrics/checkpoints")
    args = parser.parse_args()

    train_set = make_phantom_dataset(PhantomSpec(size=args.size, seed=args.seed + 100), args.n_train)
    val_set = make_phantom_dataset(PhantomSpec(size=args.size, seed=args.seed + 200), args.n_val)
    tc = TrainConfig(epochs=args.epochs, batch_size=4, seed=args.seed)
    cfg = ModelConfig(c_v=args.cv, c_k=args.ck, levels=args.levels, blocks=args.blocks)

    zf_report, _ = _evaluate_prepared(None, prepare_split(val_set, tc, "val"), tc.batch_size)
    results = [("zero-fill", zf_report, 0.0)]

    for name, cls in (("cascaded K-Nets", KNetCascade),
                      ("cascaded V-Nets", VNetCascade),
                      ("KV-Net", KVNet)):
        model = cls(cfg, seed=args.seed)
        out_dir = f"{args.out}_{name.replace(' ', '_')}" if args.out else None
        t0 = time.time()
        hist = train(model, train_set, val_set, tc, out_dir=out_dir)
        results.append((name, hist.records[-1].val, time.time() - t0))

    print(f"\n{'model':<18}{'nmse':>10}{'psnr':>10}{'ssim':>10}{'train s':>10}")
    for name, rep, secs in results:
        print(f"{name:<18}{rep.nmse:>10.4f}{rep.psnr:>10.2f}{rep.ssim:>10.4f}{secs:>10.0f}")


if __name__ == "__main__":
    main()
