"""Traffic-speed completion on a PeMS-style CSV (optional, non-gating).

The CSV holds one row per sensor and one column per 5-minute interval, days
back to back (228 sensors x 288 intervals x 44 days for the four-week
set).  Entries are hidden at random, the network fills them in, and the
held-out RMSE is printed next to a mean-fill baseline.

    python scripts/pems_reproduction.py V_228.csv --days 44 --missing-rate 0.3 --out runs/pems
"""

import argparse
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from tubalnet.dataio import traffic_csv_to_tensor, write_tensor
from tubalnet.training import TrainConfig, mean_fill, random_missing_mask, rmse, train_completion

REFERENCE_RMSE = 1.07


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("csv")
    p.add_argument("--sensors", type=int, default=228)
    p.add_argument("--intervals", type=int, default=288)
    p.add_argument("--days", type=int, default=44)
    p.add_argument("--missing-rate", type=float, default=0.3)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--latent-dim", type=int, default=20)
    p.add_argument("--batch-columns", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/pems")
    args = p.parse_args(argv)

    data = traffic_csv_to_tensor(args.csv, args.sensors, args.intervals, args.days)
    finite = np.isfinite(data)
    mask = random_missing_mask(data.shape, args.missing_rate, seed=args.seed) & finite
    cfg = TrainConfig(epochs=args.epochs, latent_dim=args.latent_dim, batch_columns=args.batch_columns, seed=args.seed)
    _, completed, report = train_completion(np.where(mask, data, 0.0), mask, cfg, truth=np.where(finite, data, np.nan))

    held_out = ~mask & finite
    baseline = rmse(np.where(held_out, data, 0.0), mean_fill(np.where(mask, data, 0.0), mask), held_out)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_tensor(completed, out / "completed.t3b")
    (out / "report.csv").write_text(report.to_csv())
    summary = {
        "test_rmse": report.test_rmse,
        "meanfill_rmse": baseline,
        "reference_rmse": REFERENCE_RMSE,
        "within_3x": report.test_rmse <= 3 * REFERENCE_RMSE,
        "config": asdict(cfg),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"test RMSE {report.test_rmse:.4f}  mean-fill {baseline:.4f}  reference {REFERENCE_RMSE}")


if __name__ == "__main__":
    main()
