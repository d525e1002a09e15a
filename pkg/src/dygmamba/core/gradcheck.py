"""Central finite differences, used as the independent gradient oracle."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import NumericError
from .tensor import Parameter, no_grad


def finite_difference_gradient(f: Callable[[], float], params: Sequence[Parameter],
                               h: float = 1e-6, indices=None) -> list[np.ndarray]:
    """Estimate d f / d p for every coordinate of every parameter.

    ``f`` is re-evaluated with each coordinate nudged by +h and -h; parameter
    values are restored afterwards.  With ``indices`` (one array of flat
    positions per parameter) only those coordinates are differenced and each
    result is the 1-D array of estimates at those positions.
    """
    grads = []
    with no_grad():
        for k, p in enumerate(params):
            flat = p.data.reshape(-1)
            which = range(flat.size) if indices is None else np.asarray(indices[k]).tolist()
            g = np.zeros_like(p.data, dtype=np.float64) if indices is None else np.zeros(len(which))
            for j, i in enumerate(which):
                orig = flat[i]
                flat[i] = orig + h
                fp = float(f())
                flat[i] = orig - h
                fm = float(f())
                flat[i] = orig
                if not (np.isfinite(fp) and np.isfinite(fm)):
                    raise NumericError(f"non-finite objective while differencing {p.name}[{i}]")
                g.reshape(-1)[i if indices is None else j] = (fp - fm) / (2.0 * h)
            grads.append(g)
    return grads


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """max |a-b| / max(|a|, |b|, floor), the usual gradcheck ratio."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return float(np.abs(a - b).max(initial=0.0) / denom)
