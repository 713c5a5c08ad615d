"""Exact nearest-entry search and weighted Lloyd k-means.

Both are written so the k-means objective is non-increasing at every step
in floating point, not just in exact arithmetic: candidate entries come from
the fast ``|c|^2 - 2 x.c`` expansion, but the final choice is made on
directly computed squared distances, and centroid moves that do not lower
a cluster's error by more than rounding noise are rejected.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from .errors import EmptyTrainingSet

log = logging.getLogger(__name__)

MAX_EPOCHS = 200
SHIFT_TOL = 1e-6
JITTER = 1e-6
# relative slack covering rounding in the expansion and in per-cluster sums
_CAND_RTOL = 1e-10
_GUARD_RTOL = 1e-10


def sqdist(x, c):
    """Row-wise squared distance between ``x`` and ``c`` (same shape)."""
    d = x - c
    return np.einsum("ij,ij->i", d, d)


def nearest(x, entries, chunk=512):
    """Index of, and squared distance to, the closest entry for each row.

    Ties are broken toward the lowest entry index.

    Parameters
    ----------
    x : ndarray, shape (n, d)
    entries : ndarray, shape (k, d)

    Returns
    -------
    labels : ndarray of int64, shape (n,)
    dist : ndarray of float64, shape (n,)
    """
    x = np.asarray(x, dtype=np.float64)
    entries = np.asarray(entries, dtype=np.float64)
    n = len(x)
    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n, dtype=np.float64)
    cn = np.einsum("ij,ij->i", entries, entries)
    cmax = cn.max() if len(cn) else 0.0
    step = max(1, min(chunk, (1 << 23) // max(len(entries), 1)))
    for s in range(0, n, step):
        xb = x[s:s + step]
        xn = np.einsum("ij,ij->i", xb, xb)
        d = cn[None, :] - 2.0 * (xb @ entries.T)
        m = d.min(axis=1)
        tol = _CAND_RTOL * (xn + cmax) + 1e-300
        rows, cols = np.nonzero(d <= (m + tol)[:, None])
        exact = sqdist(xb[rows], entries[cols])
        order = np.lexsort((cols, exact, rows))
        r = rows[order]
        first = order[np.r_[True, r[1:] != r[:-1]]]
        labels[s + rows[first]] = cols[first]
        dist[s + rows[first]] = exact[first]
    return labels, dist


def objective(err, weights):
    """Correctly rounded weighted sum of per-point errors."""
    return math.fsum((weights * err).tolist())


def dedupe(vectors, weights=None):
    """Collapse repeated rows, summing their weights (counts by default)."""
    vectors = np.asarray(vectors, dtype=np.float64)
    uniq, inv = np.unique(vectors, axis=0, return_inverse=True)
    w = np.bincount(inv.ravel(), weights=weights, minlength=len(uniq))
    return uniq, w


def kmeans_pp(x, w, k, rng, init=None):
    """Weighted k-means++ seeding, optionally extending fixed ``init`` rows."""
    n, dim = x.shape
    centers = np.empty((k, dim))
    if init is not None and len(init):
        k0 = len(init)
        centers[:k0] = init
        _, mind = nearest(x, init)
    else:
        k0 = 1
        p = w / w.sum()
        i = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
        i = min(i, n - 1)
        centers[0] = x[i]
        mind = sqdist(x, np.broadcast_to(x[i], x.shape))
    for j in range(k0, k):
        cum = np.cumsum(w * mind)
        if cum[-1] <= 0:
            raise ValueError("fewer distinct points than centers")
        i = min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), n - 1)
        centers[j] = x[i]
        np.minimum(mind, sqdist(x, np.broadcast_to(x[i], x.shape)), out=mind)
    return centers


def _reassign(x, centers, labels, err, moved):
    """Assignment step given which centers moved since ``labels`` was computed.

    ``err`` must hold each point's squared distance to its (possibly moved)
    current center. Returns new labels and errors, never worse per point.
    """
    labels = labels.copy()
    err = err.copy()
    n_moved = int(moved.sum())
    if n_moved == 0:
        return labels, err
    if n_moved > len(centers) // 4:
        full = np.ones(len(x), dtype=bool)
    else:
        full = moved[labels]
        part = ~full
        if part.any():
            idx_moved = np.flatnonzero(moved)
            lab, d = nearest(x[part], centers[idx_moved])
            cand = idx_moved[lab]
            cur_l, cur_e = labels[part], err[part]
            better = (d < cur_e) | ((d == cur_e) & (cand < cur_l))
            labels[np.flatnonzero(part)[better]] = cand[better]
            err[np.flatnonzero(part)[better]] = d[better]
    if full.any():
        lab, d = nearest(x[full], centers)
        keep = d > err[full]
        lab[keep] = labels[full][keep]
        d[keep] = err[full][keep]
        labels[full] = lab
        err[full] = d
    return labels, err


def lloyd(x, w, centers, labels=None, max_epochs=MAX_EPOCHS, tol=SHIFT_TOL, reseed=True):
    """Weighted Lloyd iterations with dead-center reseeding.

    Parameters
    ----------
    x : ndarray, shape (n, d)
        Distinct training vectors.
    w : ndarray, shape (n,)
        Positive weights (multiplicities).
    centers : ndarray, shape (k, d)
        Initial centers; modified copy is returned.
    labels : ndarray, optional
        Initial assignment. Computed from scratch if omitted; when given, the
        first assignment step can only improve on it.

    Returns
    -------
    centers, labels, err, history
        ``history`` holds the weighted squared-error objective after every
        assignment step, starting with the initial one.
    """
    centers = np.array(centers, dtype=np.float64, copy=True)
    k = len(centers)
    if labels is None:
        labels, err = nearest(x, centers)
    else:
        labels = np.asarray(labels, dtype=np.int64)
        err = sqdist(x, centers[labels])
        labels, err = _reassign(x, centers, labels, err, np.ones(k, dtype=bool))
    history = [objective(err, w)]
    wf = w.astype(np.float64)
    for epoch in range(max_epochs):
        # update step
        mass = np.bincount(labels, weights=wf, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, wf[:, None] * x)
        used = mass > 0
        new = centers.copy()
        new[used] = sums[used] / mass[used, None]
        new_err = sqdist(x, new[labels])
        old_sse = np.bincount(labels, weights=wf * err, minlength=k)
        new_sse = np.bincount(labels, weights=wf * new_err, minlength=k)
        accept = used & (new_sse < old_sse * (1 - _GUARD_RTOL))
        moved = accept & np.any(new != centers, axis=1)
        shift = float(np.sqrt(sqdist(new[moved], centers[moved]).max())) if moved.any() else 0.0
        centers[moved] = new[moved]
        err = np.where(moved[labels], new_err, err)

        n_reseeded = 0
        dead = np.flatnonzero(~used)
        if reseed and len(dead):
            worst = np.argsort(-err, kind="stable")[:len(dead)]
            worst = worst[err[worst] > 0]
            n_reseeded = len(worst)
            if n_reseeded:
                centers[dead[:n_reseeded]] = x[worst]
                moved[dead[:n_reseeded]] = True

        labels_before = labels
        labels, err = _reassign(x, centers, labels, err, moved)
        history.append(objective(err, w))
        changed = int(np.count_nonzero(labels != labels_before))
        log.debug("lloyd epoch %d: objective %.6g shift %.3g changed %d reseeded %d",
                  epoch, history[-1], shift, changed, n_reseeded)
        if shift < tol and n_reseeded == 0 and changed == 0:
            break
    return centers, labels, err, history


def fit_kmeans(vectors, k, seed=0, weights=None, init=None, max_epochs=MAX_EPOCHS,
               tol=SHIFT_TOL, jitter=JITTER):
    """k-means++ seeded Lloyd k-means on (weighted) vectors.

    With fewer distinct vectors than ``k`` every vector becomes an entry and
    the remaining entries are seeded copies perturbed by ``jitter``.
    ``init`` (m <= k rows) fixes the first m entries of the starting codebook
    so a larger codebook starts from a smaller trained one.

    Returns
    -------
    centers, labels, err, history, x, w
        ``x``/``w`` are the distinct vectors and weights that ``labels`` and
        ``err`` refer to.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    if len(vectors) == 0:
        raise EmptyTrainingSet("no training vectors")
    x, w = dedupe(vectors, weights)
    rng = np.random.default_rng(seed)
    n, dim = x.shape
    init = None if init is None else np.asarray(init, dtype=np.float64)
    if init is not None and len(init) > k:
        raise ValueError("init has more rows than k")
    if n <= k:
        centers = np.empty((k, dim))
        head = init if init is not None else np.empty((0, dim))
        centers[:len(head)] = head
        # every distinct vector gets an entry unless init already holds it
        missing = x[nearest(x, head)[1] > 0] if len(head) else x
        m = min(len(missing), k - len(head))
        centers[len(head):len(head) + m] = missing[:m]
        fill = k - len(head) - m
        if fill:
            src = rng.integers(len(x), size=fill)
            centers[k - fill:] = x[src] + jitter * rng.standard_normal((fill, dim))
    else:
        centers = kmeans_pp(x, w, k, rng, init=init)
    labels = None
    if init is not None and len(init):
        labels, _ = nearest(x, init)
    centers, labels, err, history = lloyd(x, w, centers, labels, max_epochs=max_epochs, tol=tol)
    return centers, labels, err, history, x, w
