"""Run one full-size experiment through the CLI and print its summary line.

    python scripts/run_experiment.py fig6 [--seed N] [--out DIR] [extra CLI flags]

Writes to ``results/<name>`` by default.  fig6 takes about 2 minutes,
fig7 about 13 and ew about 3 (one corpus, three τ values).
"""
import sys
from pathlib import Path

from mesodiff import cli

ROOT = Path(__file__).resolve().parents[1]
EXPERIMENTS = {"fig6": "fig6.json", "fig7": "fig7.json", "ew": "ew.json"}


def main(argv):
    if not argv or argv[0] not in EXPERIMENTS:
        print(f"usage: run_experiment.py {{{','.join(EXPERIMENTS)}}} [cli flags]", file=sys.stderr)
        return 2
    name, rest = argv[0], argv[1:]
    if "--out" not in rest:
        rest += ["--out", str(ROOT / "results" / name)]
    return cli.main([name, "--config", str(ROOT / "configs" / EXPERIMENTS[name]), *rest])


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
