#!/usr/bin/env python3
"""Regenerate the committed test fixture deterministically.

The null fixture is a balanced assignment with covariates and outcome all
mutually independent, so every balance statistic should be insignificant.
"""

import pathlib

import numpy as np

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "tests" / "fixtures"


def write_null_small(path):
    g = np.random.Generator(np.random.Philox(np.random.SeedSequence(424242)))
    n = 200
    z = np.array([1] * (n // 2) + [0] * (n // 2))
    z = z[g.permutation(n)]
    x = g.normal(size=(n, 3))
    y = g.normal(size=n)
    lag = 0.6 * y + 0.8 * g.normal(size=n)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("unit,z,y,x1,x2,x3,y_lag\n")
        for i in range(n):
            cells = [float(v) for v in (y[i], x[i, 0], x[i, 1], x[i, 2], lag[i])]
            fh.write(f"{i},{z[i]}," + ",".join(repr(v) for v in cells) + "\n")


if __name__ == "__main__":
    FIXTURES.mkdir(parents=True, exist_ok=True)
    target = FIXTURES / "null_small.csv"
    write_null_small(target)
    print(f"wrote {target}")
