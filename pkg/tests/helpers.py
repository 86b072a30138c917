"""Independent oracles used across the test suite.

These deliberately avoid the library's own computation paths: gradients
come from central finite differences, convolution from a direct
quadruple loop, and head assignment from a literal restatement of the
greedy rule.
"""

import numpy as np


def finite_difference(f, x: np.ndarray, step: float = 1e-3) -> np.ndarray:
    """Central finite-difference gradient of scalar f at x (64-bit)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max-norm relative error with a unit floor for tiny gradients."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = max(np.abs(numeric).max(), np.abs(analytic).max(), 1.0)
    return float(np.abs(analytic - numeric).max() / denom)


def direct_conv2d(x: np.ndarray, k: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """Reference cross-correlation computed with explicit loops."""
    n, cin, h, w = x.shape
    cout, _, kh, kw = k.shape
    hout = (h + 2 * padding - kh) // stride + 1
    wout = (w + 2 * padding - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((n, cout, hout, wout), dtype=np.float64)
    for b in range(n):
        for o in range(cout):
            for i in range(hout):
                for j in range(wout):
                    patch = xp[b, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
                    out[b, o, i, j] = (patch * k[o]).sum()
    return out


def greedy_assignment_oracle(values: np.ndarray, class_ids, aux_heads) -> dict:
    """Literal iteration of the assignment rule.

    Repeatedly find, among unplaced classes and unclaimed placeholder
    heads, the (class, head) pair with the largest activation; ties break
    toward the lower head index, then the lower class id. Commit it and
    repeat until every class is placed.
    """
    remaining_classes = list(class_ids)
    remaining_heads = list(aux_heads)
    assignment = {}
    while remaining_classes:
        best = None
        for ci, c in enumerate(class_ids):
            if c not in remaining_classes:
                continue
            for h in remaining_heads:
                cand = (values[ci, h], -h, -c)
                if best is None or cand > best[0]:
                    best = (cand, c, h)
        _, c, h = best
        assignment[c] = h
        remaining_classes.remove(c)
        remaining_heads.remove(h)
    return assignment
