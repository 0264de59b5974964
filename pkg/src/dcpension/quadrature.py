"""Quadrature rules used by the closed-form evaluators."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class QuadratureError(RuntimeError):
    def __init__(self, message: str, value, error: float):
        super().__init__(f"{message} (achieved error estimate {error:.3e})")
        self.value = value
        self.error = error


@dataclass(frozen=True)
class QuadResult:
    value: np.ndarray | float
    error: float
    evaluations: int


@lru_cache(maxsize=None)
def _leggauss(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre(f, a, b, n: int = 64):
    """Fixed-order Gauss-Legendre rule on [a, b], vectorised over array-valued limits.

    ``f`` receives nodes of shape ``broadcast(a, b).shape + (n,)`` and must
    return an array of the same shape.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    x, w = _leggauss(n)
    half = 0.5 * (b - a)
    nodes = (0.5 * (a + b))[..., None] + half[..., None] * x
    return half * np.sum(w * f(nodes), axis=-1)


def adaptive_simpson(f, a: float, b: float, tol: float = 1e-10, max_depth: int = 40) -> QuadResult:
    """Adaptive Simpson quadrature with Richardson correction.

    ``f`` maps a 1-D array of abscissae to values of shape ``(n,)`` or
    ``(n, k)`` (vector-valued integrands share one subdivision; the error test
    uses the largest component).  All intervals of one refinement level are
    evaluated in a single call.  ``tol`` is an absolute tolerance on the total.
    """
    a = float(a)
    b = float(b)
    if a == b:
        f0 = np.asarray(f(np.array([a])))
        return QuadResult(np.zeros_like(f0[0], dtype=float) if f0.ndim > 1 else 0.0, 0.0, 1)

    f3 = np.asarray(f(np.array([a, 0.5 * (a + b), b])), dtype=float)
    evals = 3
    lo = np.array([a])
    hi = np.array([b])
    flo, fmid, fhi = f3[0:1], f3[1:2], f3[2:3]
    whole = (b - a) / 6.0 * (flo + 4.0 * fmid + fhi)
    tols = np.array([tol])

    total = np.zeros_like(f3[0])
    err = 0.0
    depth = 0
    unconverged = False
    while lo.size:
        h = hi - lo
        mid = 0.5 * (lo + hi)
        n = lo.size
        fq = np.asarray(f(np.concatenate([lo + 0.25 * h, lo + 0.75 * h])), dtype=float)
        evals += 2 * n
        fl, fr = fq[:n], fq[n:]
        hb = (h / 12.0).reshape((n,) + (1,) * (fq.ndim - 1))
        s_left = hb * (flo + 4.0 * fl + fmid)
        s_right = hb * (fmid + 4.0 * fr + fhi)
        diff = s_left + s_right - whole
        dnorm = np.abs(diff).reshape(n, -1).max(axis=1)

        depth += 1
        done = dnorm <= 15.0 * tols
        if depth >= max_depth:
            unconverged = not bool(done.all())
            done[:] = True
        if done.any():
            total = total + np.sum((s_left + s_right + diff / 15.0)[done], axis=0)
            err += float(np.sum(dnorm[done]) / 15.0)

        keep = ~done
        if not keep.any():
            break
        lo_k, mid_k, hi_k = lo[keep], mid[keep], hi[keep]
        lo = np.concatenate([lo_k, mid_k])
        hi = np.concatenate([mid_k, hi_k])
        flo = np.concatenate([flo[keep], fmid[keep]])
        fmid_new = np.concatenate([fl[keep], fr[keep]])
        fhi = np.concatenate([fmid[keep], fhi[keep]])
        fmid = fmid_new
        whole = np.concatenate([s_left[keep], s_right[keep]])
        tols = np.concatenate([tols[keep], tols[keep]]) * 0.5

    value = total if total.ndim else float(total)
    if unconverged:
        raise QuadratureError(f"adaptive Simpson did not converge on [{a}, {b}] within depth {max_depth}",
                              value, err)
    return QuadResult(value, err, evals)
