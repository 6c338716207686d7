"""Regenerate tests/fixtures/modularity_optima.json.

Draws 50 random graphs on at most 12 vertices and stores their exhaustive
best modularity.  The brute force takes about a minute, so the test suite
reads the frozen values instead of recomputing them.
"""
import json
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))
from oracles import best_modularity_bruteforce  # noqa: E402

OUT = ROOT / "tests" / "fixtures" / "modularity_optima.json"


def random_graphs(count=50, seed=20240):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        n = int(rng.integers(4, 13))
        p = float(rng.uniform(0.2, 0.7))
        edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
        if edges:
            out.append((n, edges))
    return out


def main():
    cases = []
    for n, edges in random_graphs():
        cases.append({"n": n, "edges": edges, "best_q": best_modularity_bruteforce(n, edges)})
        print(n, len(edges), cases[-1]["best_q"])
    OUT.write_text(json.dumps(cases, indent=1) + "\n")


if __name__ == "__main__":
    main()
