"""Run every suite under configs/ and verify each artifact directory.

    python3 scripts/run_benchmarks.py --out runs/
"""
import argparse
import json
import sys
from pathlib import Path

from mexrl.cli import verify_artifact
from mexrl.harness import run_suite

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--out", type=Path, default=Path("runs"))
    parser.add_argument("--only", nargs="*", help="config stems to run (default: all)")
    args = parser.parse_args()
    status = {}
    for cfg in sorted((ROOT / "configs").glob("*.toml")):
        if args.only and cfg.stem not in args.only:
            continue
        out = args.out / cfg.stem
        code = run_suite(cfg, out)
        verified = verify_artifact(out)["passed"]
        status[cfg.stem] = {"acceptance": code == 0, "verify": verified}
        print(f"{cfg.stem}: acceptance {'PASS' if code == 0 else 'FAIL'}, "
              f"verify {'PASS' if verified else 'FAIL'}", flush=True)
    (args.out / "status.json").write_text(json.dumps(status, indent=2))
    return 0 if all(v["acceptance"] and v["verify"] for v in status.values()) else 1


if __name__ == "__main__":
    sys.exit(main())
