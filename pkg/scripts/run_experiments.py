"""Run every CLI subcommand on the shipped configs; reports go to out/<config>/.

Usage: python3 scripts/run_experiments.py [--quick]
"""

import argparse
import pathlib
import sys

from defect_homog import cli

ROOT = pathlib.Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

PLAN = [
    ("cubic", ["homogenize", "check", "solve", "rates", "sweep-defects", "averaging",
               "oracle-compare", "opnorm-demo"]),
    ("linear", ["homogenize", "check", "rates", "averaging", "oracle-compare"]),
    ("system2d", ["homogenize", "check", "rates", "oracle-compare"]),
    ("qplus", ["check"]),
    ("degenerate", ["check"]),  # expected exit 3
    ("stiff", ["check", "solve"]),  # solve at eps = 0.5 expected exit 3
]
QUICK_SKIP = {"opnorm-demo", "sweep-defects"}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true", help="skip the slower experiments")
    ap.add_argument("--out", default=str(ROOT / "out"))
    args = ap.parse_args(argv)
    summary = []
    for name, commands in PLAN:
        for command in commands:
            if args.quick and command in QUICK_SKIP:
                continue
            argv = [command, "--config", str(CONFIGS / f"{name}.json"),
                    "--out-dir", str(pathlib.Path(args.out) / name)]
            if name == "stiff" and command == "solve":
                argv += ["--epsilon", "0.5"]
            print(f"== {name}: {command}", flush=True)
            summary.append((name, command, cli.run(argv)))
    print("\nconfig      command          exit")
    for name, command, code in summary:
        print(f"{name:<11} {command:<16} {code}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
