"""Write the 500-row raw synergy-score fixture and its expected preprocessing counts.

Every (unordered pair, cell line) group is given a target average up front;
the rows of a group scatter symmetrically around it (some individual rows land
on the other side of a threshold), half of the duplicates list the drugs in
swapped order, and four rows carry non-numeric scores. The expected counts
follow from the targets alone, without running the preprocessing code.
"""

import argparse
import csv
import itertools
import json
import os

import numpy as np

DRUGS = [f"DRUG{i:02d}" for i in range(12)]
CELLS = [f"CELL{i}" for i in range(6)]


def build(seed=7):
    rng = np.random.default_rng(seed)
    keys = [(c, a, b) for c in CELLS for a, b in itertools.combinations(DRUGS, 2)]
    order = rng.permutation(len(keys))
    groups = [keys[i] for i in order[:204]]

    # 100 groups with 2 rows, 96 with 3 rows, 8 with 1 row; 4 malformed rows -> 500 rows
    sizes = [2] * 100 + [3] * 96 + [1] * 8
    targets = ([20.0] * 45 + [12.5] * 44 + [10.0 + 2.0**-4] * 1   # 90 positive
               + [-5.0] * 45 + [-0.5] * 34 + [-2.0**-4] * 1     # 80 negative
               + [10.0] * 1 + [0.0] * 1 + [5.0] * 32)           # 34 dropped
    perm = rng.permutation(len(groups))
    targets = [targets[i] for i in perm]

    rows = []
    for (cell, a, b), size, target in zip(groups, sizes, targets):
        spread = float(rng.integers(1, 9))
        offsets = {1: [0.0], 2: [-spread, spread], 3: [-spread, 0.0, spread]}[size]
        for k, off in enumerate(offsets):
            first, second = (a, b) if k % 2 == 0 else (b, a)
            rows.append([first, second, cell, repr(target + off)])
    for k in range(4):
        cell, a, b = groups[k]
        rows.append([a, b, cell, ["NA", "", "n/a", "inf"][k]])
    rows = [rows[i] for i in rng.permutation(len(rows))]

    kept = [(g, t) for g, t in zip(groups, targets) if t > 10.0 or t < 0.0]
    expected = {
        "rows": len(rows),
        "malformed": 4,
        "groups": len(groups),
        "triplets": len(kept),
        "positive": sum(t > 10.0 for _, t in kept),
        "negative": sum(t < 0.0 for _, t in kept),
        "dropped_between": sum(0.0 <= t <= 10.0 for t in targets),
        "drugs": len({d for (c, a, b), _ in kept for d in (a, b)}),
        "cell_lines": len({c for (c, _, _), _ in kept}),
    }
    return rows, expected


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    here = os.path.dirname(os.path.abspath(__file__))
    ap.add_argument("--out-dir", default=os.path.join(here, "..", "tests", "fixtures"))
    args = ap.parse_args()
    rows, expected = build()
    with open(os.path.join(args.out_dir, "raw_scores_500.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["drug_a", "drug_b", "cell_line", "synergy_score"])
        w.writerows(rows)
    with open(os.path.join(args.out_dir, "raw_scores_500.expected.json"), "w") as fh:
        json.dump(expected, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(expected)


if __name__ == "__main__":
    main()
