"""Run every experiment from the JSON configs in scripts/configs and print the tables.

    python scripts/run_all.py [--only KIND ...] [--workers N] [--out DIR]
"""
import argparse
import time
from pathlib import Path

from kaclab.experiments import KINDS, ExperimentConfig, run

HERE = Path(__file__).resolve().parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--only", nargs="+", choices=KINDS, default=list(KINDS))
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("results"))
    args = ap.parse_args()
    for kind in args.only:
        cfg = ExperimentConfig.load(HERE / "configs" / f"{kind}.json").replace(out=str(args.out / kind))
        t0 = time.perf_counter()
        table, path = run(cfg, workers=args.workers)
        print(f"== {kind}: {path} ({time.perf_counter() - t0:.1f} s)")
        print(table.to_csv())


if __name__ == "__main__":
    main()
