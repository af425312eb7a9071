"""Numeric hot kernels with selectable backends.

Two implementations of every kernel are kept side by side: a numba
``@njit`` version (default) and a vectorized pure-numpy fallback.  The
fallback is selected by setting the environment variable
``GNSSFGO_PURE_NUMPY=1`` before import, or automatically when numba is
not importable.  ``benchmarks/bench_kernels.py`` times both.

Kernels operate on grouped factor blocks: within a group every factor
has the same residual dimension ``m`` and the same block widths, so the
jacobians stack into contiguous ``(n_factors, m, width)`` arrays.
"""

from __future__ import annotations

import math
import os

import numpy as np

ENV_PURE_NUMPY = "GNSSFGO_PURE_NUMPY"


def _pure_numpy_requested() -> bool:
    return os.environ.get(ENV_PURE_NUMPY, "").strip().lower() in ("1", "true", "yes", "on")


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _block_residual_add_np(ew, jac, cols, x):
    """ew[f] += jac[f] @ x[cols[f]:cols[f]+width] for every factor f."""
    idx = cols[:, None] + np.arange(jac.shape[2])[None, :]
    ew += np.einsum("fmi,fi->fm", jac, x[idx])


def _block_pair_accumulate_np(hmat, ja, jb, ca, cb, w):
    """hmat[ca+i, cb+j] += w * (ja[f].T @ jb[f])[i, j] for every factor f."""
    vals = np.einsum("f,fmi,fmj->fij", w, ja, jb)
    na = ja.shape[2]
    nb = jb.shape[2]
    rows = ca[:, None, None] + np.arange(na)[None, :, None]
    colsb = cb[:, None, None] + np.arange(nb)[None, None, :]
    np.add.at(hmat, (rows, colsb), vals)


def _block_rhs_accumulate_np(rhs, jac, cols, ew, w):
    """rhs[cols+i] -= w * (jac[f].T @ ew[f])[i] for every factor f."""
    vals = np.einsum("f,fmi,fm->fi", w, jac, ew)
    idx = cols[:, None] + np.arange(jac.shape[2])[None, :]
    np.subtract.at(rhs, idx, vals)


def _ils_search_np(zhat, lmat, dvec, cap):
    """Depth-first shrinking-ellipsoid search for the ``cap`` closest
    integer vectors under the metric (z - zhat)' Q^-1 (z - zhat) with
    Q = lmat.T @ diag(dvec) @ lmat, lmat unit lower triangular.

    Returns (candidates (cap, n) int64, distances (cap,), count).
    """
    n = zhat.shape[0]
    cand = np.zeros((cap, n), dtype=np.int64)
    cq = np.full(cap, np.inf)
    ncand = 0
    radius = np.inf

    ssum = np.zeros((n, n))
    center = np.zeros(n)
    zcur = np.zeros(n, dtype=np.int64)
    ycur = np.zeros(n)
    step = np.zeros(n, dtype=np.int64)
    partial = np.zeros(n)

    k = n - 1
    partial[k] = 0.0
    center[k] = zhat[k]
    zcur[k] = math.floor(center[k] + 0.5)
    step[k] = 1 if center[k] - zcur[k] >= 0.0 else -1

    while True:
        dy = zcur[k] - center[k]
        newdist = partial[k] + dy * dy / dvec[k]
        if newdist < radius:
            if k > 0:
                ycur[k] = dy
                for i in range(k):
                    ssum[k - 1, i] = ssum[k, i] + lmat[k, i] * ycur[k]
                k -= 1
                partial[k] = newdist
                center[k] = zhat[k] + ssum[k, k]
                zcur[k] = math.floor(center[k] + 0.5)
                step[k] = 1 if center[k] - zcur[k] >= 0.0 else -1
            else:
                pos = ncand if ncand < cap else cap - 1
                if newdist < cq[pos] or ncand < cap:
                    while pos > 0 and cq[pos - 1] > newdist:
                        cq[pos] = cq[pos - 1]
                        cand[pos] = cand[pos - 1]
                        pos -= 1
                    cq[pos] = newdist
                    cand[pos] = zcur
                    if ncand < cap:
                        ncand += 1
                if ncand == cap:
                    radius = cq[cap - 1]
                zcur[0] += step[0]
                step[0] = -step[0] - (1 if step[0] > 0 else -1)
        else:
            if k == n - 1:
                break
            k += 1
            zcur[k] += step[k]
            step[k] = -step[k] - (1 if step[k] > 0 else -1)

    return cand, cq, ncand


_NUMPY_IMPL = {
    "block_residual_add": _block_residual_add_np,
    "block_pair_accumulate": _block_pair_accumulate_np,
    "block_rhs_accumulate": _block_rhs_accumulate_np,
    "ils_search": _ils_search_np,
}


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

def _build_numba_impl():
    from numba import njit

    @njit(cache=True)
    def block_residual_add(ew, jac, cols, x):
        nf, m, width = jac.shape
        for f in range(nf):
            c0 = cols[f]
            for r in range(m):
                s = 0.0
                for i in range(width):
                    s += jac[f, r, i] * x[c0 + i]
                ew[f, r] += s

    @njit(cache=True)
    def block_pair_accumulate(hmat, ja, jb, ca, cb, w):
        nf, m, na = ja.shape
        nb = jb.shape[2]
        for f in range(nf):
            wf = w[f]
            if wf == 0.0:
                continue
            r0 = ca[f]
            c0 = cb[f]
            for i in range(na):
                for j in range(nb):
                    s = 0.0
                    for r in range(m):
                        s += ja[f, r, i] * jb[f, r, j]
                    hmat[r0 + i, c0 + j] += wf * s

    @njit(cache=True)
    def block_rhs_accumulate(rhs, jac, cols, ew, w):
        nf, m, width = jac.shape
        for f in range(nf):
            wf = w[f]
            if wf == 0.0:
                continue
            c0 = cols[f]
            for i in range(width):
                s = 0.0
                for r in range(m):
                    s += jac[f, r, i] * ew[f, r]
                rhs[c0 + i] -= wf * s

    @njit(cache=True)
    def ils_search(zhat, lmat, dvec, cap):
        n = zhat.shape[0]
        cand = np.zeros((cap, n), dtype=np.int64)
        cq = np.full(cap, np.inf)
        ncand = 0
        radius = np.inf

        ssum = np.zeros((n, n))
        center = np.zeros(n)
        zcur = np.zeros(n, dtype=np.int64)
        ycur = np.zeros(n)
        step = np.zeros(n, dtype=np.int64)
        partial = np.zeros(n)

        k = n - 1
        partial[k] = 0.0
        center[k] = zhat[k]
        zcur[k] = np.int64(math.floor(center[k] + 0.5))
        step[k] = 1 if center[k] - zcur[k] >= 0.0 else -1

        while True:
            dy = zcur[k] - center[k]
            newdist = partial[k] + dy * dy / dvec[k]
            if newdist < radius:
                if k > 0:
                    ycur[k] = dy
                    for i in range(k):
                        ssum[k - 1, i] = ssum[k, i] + lmat[k, i] * ycur[k]
                    k -= 1
                    partial[k] = newdist
                    center[k] = zhat[k] + ssum[k, k]
                    zcur[k] = np.int64(math.floor(center[k] + 0.5))
                    step[k] = 1 if center[k] - zcur[k] >= 0.0 else -1
                else:
                    pos = ncand if ncand < cap else cap - 1
                    if newdist < cq[pos] or ncand < cap:
                        while pos > 0 and cq[pos - 1] > newdist:
                            cq[pos] = cq[pos - 1]
                            for i in range(n):
                                cand[pos, i] = cand[pos - 1, i]
                            pos -= 1
                        cq[pos] = newdist
                        for i in range(n):
                            cand[pos, i] = zcur[i]
                        if ncand < cap:
                            ncand += 1
                    if ncand == cap:
                        radius = cq[cap - 1]
                    zcur[0] += step[0]
                    step[0] = -step[0] - (1 if step[0] > 0 else -1)
            else:
                if k == n - 1:
                    break
                k += 1
                zcur[k] += step[k]
                step[k] = -step[k] - (1 if step[k] > 0 else -1)

        return cand, cq, ncand

    return {
        "block_residual_add": block_residual_add,
        "block_pair_accumulate": block_pair_accumulate,
        "block_rhs_accumulate": block_rhs_accumulate,
        "ils_search": ils_search,
    }


def _select_backend():
    if _pure_numpy_requested():
        return "numpy", _NUMPY_IMPL, None
    try:
        impl = _build_numba_impl()
        return "numba", impl, None
    except ImportError as exc:  # pragma: no cover - depends on environment
        return "numpy", _NUMPY_IMPL, exc


BACKEND, _ACTIVE, _NUMBA_IMPORT_ERROR = _select_backend()

block_residual_add = _ACTIVE["block_residual_add"]
block_pair_accumulate = _ACTIVE["block_pair_accumulate"]
block_rhs_accumulate = _ACTIVE["block_rhs_accumulate"]
ils_search = _ACTIVE["ils_search"]


def backend() -> str:
    """Active kernel backend, either ``"numba"`` or ``"numpy"``."""
    return BACKEND


def implementations() -> dict:
    """Both backends keyed by name (numba entry absent when unavailable).

    Intended for benchmarks and cross-checking tests; production code
    goes through the module-level functions.
    """
    impls = {"numpy": _NUMPY_IMPL}
    if BACKEND == "numba":
        impls["numba"] = _ACTIVE
    else:
        try:
            impls["numba"] = _build_numba_impl()
        except ImportError:
            pass
    return impls
