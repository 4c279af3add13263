"""Independent reference computations used by the tests.

Nothing here calls into the solver or the Monte Carlo engine.
"""

import itertools

import numpy as np
from scipy.optimize import brentq


def threshold_by_brentq(values, n):
    x2 = np.asarray(values, dtype=float) ** 2
    x2 = x2[x2 > 0]
    f = lambda c: (x2 / (x2 + c)).sum() - n
    hi = 1.0
    while f(hi) > 0:
        hi *= 2
    return brentq(f, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)


def enumerate_aggregate(sites):
    """Exact per-key error moments over all inclusion patterns.

    ``sites`` is a list of ``(keys, values, probs)``.  Returns a dict
    ``{"bminmax"|"minmax": (keys, E[err], E[err^2], E[err^4])}``.
    """
    flat = [(int(k), float(x), float(p)) for keys, xs, ps in sites
            for k, x, p in zip(keys, xs, ps)]
    keys = sorted({k for k, _, _ in flat})
    pos = {k: i for i, k in enumerate(keys)}
    truth = np.zeros(len(keys))
    for k, x, _ in flat:
        truth[pos[k]] += x
    moments = {name: [np.zeros(len(keys)) for _ in range(3)] for name in ("bminmax", "minmax")}
    for pattern in itertools.product((0, 1), repeat=len(flat)):
        weight = 1.0
        est_b = np.zeros(len(keys))
        est_m = np.zeros(len(keys))
        for inc, (k, x, p) in zip(pattern, flat):
            weight *= p if inc else 1 - p
            if inc:
                est_b[pos[k]] += x
                est_m[pos[k]] += x / p
        if weight == 0:
            continue
        for name, est in (("bminmax", est_b), ("minmax", est_m)):
            err = est - truth
            m = moments[name]
            m[0] += weight * err
            m[1] += weight * err**2
            m[2] += weight * err**4
    return {name: (np.array(keys),) + tuple(m) for name, m in moments.items()}
