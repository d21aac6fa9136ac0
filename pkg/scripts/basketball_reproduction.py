"""Video completion on a raw 8-bit frame dump (optional, non-gating).

Expects frames stored back to back, row-major, one byte per pixel (the
reference clip is 144 x 256 pixels, 40 frames).  Half the pixels are
hidden at random and the held-out RMSE is compared with the reference
value 0.0219 at a +-100% tolerance.

    python scripts/basketball_reproduction.py clip.raw --height 144 --width 256 --frames 40
"""

import argparse
import json
from pathlib import Path

import numpy as np

from tubalnet.dataio import read_raw_frames, write_tensor
from tubalnet.training import TrainConfig, mean_fill, random_missing_mask, rmse, train_completion

REFERENCE_RMSE = 0.0219


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("raw")
    p.add_argument("--height", type=int, default=144)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--frames", type=int, default=40)
    p.add_argument("--missing-rate", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/video")
    args = p.parse_args(argv)

    truth = read_raw_frames(args.raw, args.height, args.width, args.frames)
    mask = random_missing_mask(truth.shape, args.missing_rate, seed=args.seed)
    cfg = TrainConfig(epochs=args.epochs, seed=args.seed)
    _, completed, report = train_completion(np.where(mask, truth, 0.0), mask, cfg, truth=truth)
    baseline = rmse(truth, mean_fill(truth, mask), ~mask)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_tensor(completed, out / "completed.t3b")
    summary = {
        "test_rmse": report.test_rmse,
        "meanfill_rmse": baseline,
        "reference_rmse": REFERENCE_RMSE,
        "within_tolerance": abs(report.test_rmse - REFERENCE_RMSE) <= REFERENCE_RMSE,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"test RMSE {report.test_rmse:.4f}  mean-fill {baseline:.4f}  reference {REFERENCE_RMSE}")


if __name__ == "__main__":
    main()
