"""estimates -> solve -> verify through the CLI for one config file."""

import argparse
import json
import sys
from pathlib import Path

from spde_hjb.cli import main as cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(Path(__file__).resolve().parents[1] / "configs" / "heat.toml"))
    ap.add_argument("--out", default="runs/pipeline")
    ap.add_argument("--paths", type=int, default=None)
    args = ap.parse_args()
    out = Path(args.out)
    extra = ["--paths", str(args.paths)] if args.paths else []
    steps = [
        ["estimates", "--config", args.config, "--out", str(out / "estimates")],
        ["solve", "--config", args.config, "--out", str(out / "solve")],
        ["verify", "--config", args.config, "--solution", str(out / "solve" / "solution.json"),
         "--out", str(out / "verify"), *extra],
    ]
    for argv in steps:
        code = cli(argv)
        if code:
            print(f"{argv[0]} exited with {code}", file=sys.stderr)
            return code
    rep = json.loads((out / "verify" / "verification.json").read_text())
    print(json.dumps(rep["pass"], indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
