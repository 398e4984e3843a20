"""Relative multi-task performance for stored result rows.

Each row file lists per-task metrics; Delta_m averages the signed relative
change of every task against its single-task baseline (lower-is-better
metrics flip sign). The stored fixture rows live under tests/fixtures.

    python demos/04_delta_m_tables.py
"""

import csv
from pathlib import Path

from pgt.metrics import MetricsReport

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"


def main():
    for group in sorted(p for p in FIXTURES.iterdir() if p.is_dir()):
        base = MetricsReport.read(group / "baseline.txt")
        print(f"\n{group.name}")
        with open(group / "expected.csv") as fh:
            for row in csv.DictReader(fh):
                rep = MetricsReport.read(group / f"{row['row']}.txt").with_baseline(base)
                print(f"  {row['row']:<22} delta_m {rep.delta_m:+7.2f}%   (listed {float(row['delta_m']):+.2f})")


if __name__ == "__main__":
    main()
