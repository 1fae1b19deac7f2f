"""Run `fracneumann solve` (or `oracle` for the tiny configs) on every shipped config."""
import argparse
import time
from pathlib import Path

from fracneumann.cli import main

ROOT = Path(__file__).resolve().parents[1]


def run(args):
    rows = []
    for cfg in sorted((ROOT / "configs").glob("*.toml")):
        cmd = "oracle" if cfg.stem.startswith("tiny") else "solve"
        argv = [cmd, "--config", str(cfg)]
        if args.out:
            argv += ["--out", str(Path(args.out) / cfg.stem)]
        t0 = time.perf_counter()
        code = main(argv)
        rows.append((cfg.stem, cmd, code, time.perf_counter() - t0))
    print(f"\n{'config':28s} {'command':8s} exit  seconds")
    for name, cmd, code, dt in rows:
        print(f"{name:28s} {cmd:8s} {code:4d} {dt:8.1f}")


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default=None, help="parent output directory (default: per-config setting)")
    run(p.parse_args())
