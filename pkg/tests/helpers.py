"""Independent oracle implementations shared by the unit and acceptance tests.

These deliberately re-derive results with the most literal code possible
(double loops, explicit formulas) so they stay independent of the library
paths they check.
"""

import numpy as np


def greedy_match_oracle(logits, probabilities, treatment, caliper):
    """O(n^2) reference matcher: re-sorts treated by descending score and
    scans every control for each one."""
    treated = [i for i in range(len(treatment)) if treatment[i] == 1]
    controls = [i for i in range(len(treatment)) if treatment[i] == 0]
    # descending probability, ties by original index
    treated = sorted(treated, key=lambda i: (-probabilities[i], i))
    used = set()
    pairs = []
    for t in treated:
        best = None
        best_dist = None
        for c in controls:
            if c in used:
                continue
            d = abs(logits[c] - logits[t])
            if best is None or d < best_dist or (d == best_dist and c < best):
                best, best_dist = c, d
        if best is not None and best_dist <= caliper:
            pairs.append((t, best))
            used.add(best)
    return pairs


def irls_oracle(X, y, tol=1e-12, max_iter=100):
    """Plain Newton-Raphson logistic fit, written independently of the
    library's IRLS (dense solve, probability-space sigmoid)."""
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    beta = np.zeros(X.shape[1])
    for _ in range(max_iter):
        p = 1.0 / (1.0 + np.exp(-(X @ beta)))
        g = X.T @ (y - p)
        H = (X * (p * (1 - p))[:, None]).T @ X
        step = np.linalg.solve(H, g)
        beta = beta + step
        if np.abs(step).max() < tol:
            break
    return beta


def summarize_oracle(points, ci_los, ci_his, failed, true_effect):
    """Metric recomputation with explicit loops (the 'spreadsheet')."""
    errs = []
    lengths = []
    hits = []
    n_fail = 0
    for p, lo, hi, f in zip(points, ci_los, ci_his, failed):
        if f:
            n_fail += 1
            continue
        errs.append(p - true_effect)
        if lo is not None and hi is not None:
            lengths.append(hi - lo)
            hits.append(1.0 if lo <= true_effect <= hi else 0.0)
    out = {"n_failures": n_fail}
    if errs:
        out["mean_bias"] = sum(errs) / len(errs)
        out["rmse"] = (sum(e * e for e in errs) / len(errs)) ** 0.5
        out["mae"] = float(np.median([abs(e) for e in errs]))
    if lengths:
        out["median_ci_length"] = float(np.median(lengths))
        out["coverage"] = sum(hits) / len(hits)
    return out
