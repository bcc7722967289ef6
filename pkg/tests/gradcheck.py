"""Central finite-difference gradient oracle shared by tests and the acceptance suite."""
import numpy as np

STEP = 1e-6


def numeric_grad(f, p, step=STEP):
    """d f / d p by central differences, perturbing ``p`` in place."""
    g = np.zeros_like(p)
    for i in np.ndindex(p.shape):
        old = p[i]
        p[i] = old + step
        lp = f()
        p[i] = old - step
        lm = f()
        p[i] = old
        g[i] = (lp - lm) / (2 * step)
    return g


def rel_error(analytic, numeric):
    """Norm-relative discrepancy |a - n| / (|a| + |n|), 0 when both vanish."""
    denom = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denom)
