#!/usr/bin/env python3
# SPDX-License-Identifier: MIT OR Apache-2.0
"""Build the quarterly US recession indicator series.

Downloads the monthly FRED series USREC (or reads a local copy with
--monthly) and writes one row per quarter: 1 when at least one month of
the quarter is a recession month, else 0.
"""

import argparse
import csv
import io
import sys
import urllib.request

URL = "https://fred.stlouisfed.org/graph/fredgraph.csv?id=USREC"


def load_monthly(path):
    if path:
        with open(path, newline="") as f:
            return f.read()
    with urllib.request.urlopen(URL, timeout=60) as r:
        return r.read().decode("utf-8")


def quarterly(text, first_year, last_year):
    rows = csv.reader(io.StringIO(text))
    next(rows)
    quarters = {}
    for row in rows:
        if len(row) < 2 or row[1].strip() in ("", "."):
            continue
        year, month = int(row[0][:4]), int(row[0][5:7])
        if not first_year <= year <= last_year:
            continue
        key = (year, (month - 1) // 3 + 1)
        quarters[key] = max(quarters.get(key, 0), int(float(row[1])))
    expected = [(y, q) for y in range(first_year, last_year + 1) for q in range(1, 5)]
    missing = [k for k in expected if k not in quarters]
    if missing:
        sys.exit(f"missing quarters, first: {missing[0]}")
    return [(f"{y}-{3 * (q - 1) + 1:02d}-01", quarters[(y, q)]) for y, q in expected]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--monthly", help="local monthly CSV (date,USREC) instead of downloading")
    ap.add_argument("--from-year", type=int, default=1855)
    ap.add_argument("--to-year", type=int, default=2013)
    ap.add_argument("-o", "--output", default="usrec_quarterly.csv")
    a = ap.parse_args()
    series = quarterly(load_monthly(a.monthly), a.from_year, a.to_year)
    with open(a.output, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["observation_date", "USREC"])
        w.writerows(series)
    print(f"{a.output}: {len(series)} quarters, {sum(v for _, v in series)} in recession")


if __name__ == "__main__":
    main()
