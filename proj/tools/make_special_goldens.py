"""Reference values for the special-function and interval tests (scipy)."""
import json
import random
import sys
from pathlib import Path

import numpy as np
from scipy import special, stats

out = Path(sys.argv[1] if len(sys.argv) > 1 else "tests/data/special_golden.json")
rng = random.Random(20240607)

betainc = []
for a in (0.5, 1.0, 2.0, 5.5, 30.0, 96.0):
    for b in (0.5, 1.0, 3.0, 10.0, 6.0):
        for x in (0.001, 0.1, 0.35, 0.5, 0.9, 0.999):
            betainc.append({"a": a, "b": b, "x": x, "value": float(special.betainc(a, b, x))})

intervals = []
pairs = set()
while len(pairs) < 200:
    n = rng.choice([1, 2, 3, 5, 10, 20, 50, 100, 250, 1000, rng.randint(1, 500)])
    k = rng.randint(0, n)
    pairs.add((k, n))
for k, n in sorted(pairs):
    for mass in (0.95,):
        a, b = k + 1, n - k + 1
        intervals.append({"k": k, "n": n, "mass": mass,
                          "low": float(stats.beta.ppf((1 - mass) / 2, a, b)),
                          "high": float(stats.beta.ppf((1 + mass) / 2, a, b))})

pearson = []
for _ in range(20):
    n = rng.randint(3, 60)
    xs = [rng.gauss(0, 1) for _ in range(n)]
    slope = rng.uniform(-1, 1)
    ys = [slope * x + rng.gauss(0, 1) for x in xs]
    r, p = stats.pearsonr(xs, ys)
    pearson.append({"xs": xs, "ys": ys, "r": float(r), "p": float(p)})

gamma = []
for a in (0.5, 1.0, 1.5, 2.0, 4.5, 10.0, 50.0):
    for x in (0.01, 0.5, 1.0, 3.0, 9.0, 40.0, 80.0):
        gamma.append({"a": a, "x": x, "q": float(special.gammaincc(a, x))})

chisq = []
for _ in range(50):
    table = [[rng.randint(1, 60) for _ in range(3)] for _ in range(2)]
    chi2, p, dof, _ = stats.chi2_contingency(np.array(table), correction=False)
    chisq.append({"table": table, "chi2": float(chi2), "df": int(dof), "p": float(p)})

out.write_text(json.dumps({"betainc": betainc, "intervals": intervals, "pearson": pearson,
                           "gamma_q": gamma, "chisq": chisq}, indent=1) + "\n")
print(f"wrote {out}")
