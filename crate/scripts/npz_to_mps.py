#!/usr/bin/env python3
"""Convert scipy's linprog benchmark arrays (c, A_ub, b_ub, A_eq, b_eq, bounds)
into gzipped free-format MPS files plus a suite manifest.

The arrays ship in the scipy source distribution under
benchmarks/benchmarks/linprog_benchmark_files/. Usage:

    python3 scripts/npz_to_mps.py <linprog_benchmark_files dir> <out dir> NAME...

Each problem is re-solved with scipy's HiGHS and the optimum is written to
<out dir>/manifest.csv alongside the value recorded in the npz file.
"""
import gzip
import os
import sys

import numpy as np
from scipy.optimize import linprog


def fmt(v):
    return repr(float(v))


def bounds_for(bounds, n):
    b = np.asarray(bounds, dtype=object)
    if b.size == 0:
        return [(0.0, None)] * n
    b = b.reshape(-1, 2)
    if b.shape[0] == 1:
        return [tuple(b[0])] * n
    assert b.shape[0] == n, b.shape
    return [tuple(r) for r in b]


def write_mps(name, c, a_ub, b_ub, a_eq, b_eq, bnds, path):
    n = len(c)
    rows = [("L", f"U{i + 1}") for i in range(a_ub.shape[0])]
    rows += [("E", f"E{i + 1}") for i in range(a_eq.shape[0])]
    a = np.vstack([a_ub.reshape(-1, n), a_eq.reshape(-1, n)])
    rhs = np.concatenate([b_ub.ravel(), b_eq.ravel()])
    out = [f"NAME {name}", "ROWS", " N COST"]
    out += [f" {k} {r}" for k, r in rows]
    out.append("COLUMNS")
    for j in range(n):
        col = f"X{j + 1}"
        if c[j] != 0:
            out.append(f" {col} COST {fmt(c[j])}")
        for i in np.nonzero(a[:, j])[0]:
            out.append(f" {col} {rows[i][1]} {fmt(a[i, j])}")
    out.append("RHS")
    for i in np.nonzero(rhs)[0]:
        out.append(f" RHS {rows[i][1]} {fmt(rhs[i])}")
    out.append("BOUNDS")
    for j, (lo, up) in enumerate(bnds):
        col = f"X{j + 1}"
        lo = -np.inf if lo is None else float(lo)
        up = np.inf if up is None else float(up)
        if lo == up:
            out.append(f" FX BND {col} {fmt(lo)}")
            continue
        if lo == -np.inf and up == np.inf:
            out.append(f" FR BND {col}")
            continue
        if lo == -np.inf:
            out.append(f" MI BND {col}")
        elif lo != 0.0:
            out.append(f" LO BND {col} {fmt(lo)}")
        if up != np.inf:
            out.append(f" UP BND {col} {fmt(up)}")
    out.append("ENDATA")
    with gzip.open(path, "wt") as f:
        f.write("\n".join(out) + "\n")


def main():
    src, dst, names = sys.argv[1], sys.argv[2], sys.argv[3:]
    os.makedirs(dst, exist_ok=True)
    manifest = ["file,reference_objective"]
    for name in names:
        d = np.load(os.path.join(src, name + ".npz"), allow_pickle=True)
        c = d["c"].astype(float)
        n = len(c)
        a_ub = d["A_ub"].astype(float).reshape(-1, n)
        a_eq = d["A_eq"].astype(float).reshape(-1, n)
        b_ub = d["b_ub"].astype(float)
        b_eq = d["b_eq"].astype(float)
        bnds = bounds_for(d["bounds"], n)
        fname = name.lower() + ".mps.gz"
        write_mps(name, c, a_ub, b_ub, a_eq, b_eq, bnds, os.path.join(dst, fname))
        res = linprog(c, A_ub=a_ub if a_ub.size else None, b_ub=b_ub if a_ub.size else None,
                      A_eq=a_eq if a_eq.size else None, b_eq=b_eq if a_eq.size else None,
                      bounds=bnds, method="highs")
        print(f"{name}: npz obj {float(d['obj']):.10g}  highs {res.fun:.10g}  status {res.status}")
        manifest.append(f"{fname},{res.fun!r}")
    with open(os.path.join(dst, "manifest.csv"), "w") as f:
        f.write("\n".join(manifest) + "\n")


if __name__ == "__main__":
    main()
