"""Weighted local linear regression with a Gaussian (product) kernel."""

from __future__ import annotations

import numpy as np

from .errors import BandwidthDegenerate

_CHUNK = 256


def _as2d(a):
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def weighted_sd(D, w=None) -> np.ndarray:
    D = _as2d(D)
    w = np.ones(len(D)) if w is None else np.asarray(w, dtype=float)
    mu = (w @ D) / w.sum()
    return np.sqrt((w @ (D - mu) ** 2) / w.sum())


def rule_of_thumb_bandwidth(D, w=None) -> np.ndarray:
    """``1.06 * sd * n^(-1/5)`` per dimension."""
    D = _as2d(D)
    sd = weighted_sd(D, w)
    for k, s in enumerate(sd):
        if not s > 0:
            raise BandwidthDegenerate(k)
    return 1.06 * sd * len(D) ** (-0.2)


def _kernel(D, points, h):
    # (G, n) product Gaussian kernel; normalizing constants cancel
    z = (points[:, None, :] - D[None, :, :]) / h
    return np.exp(-0.5 * np.sum(z * z, axis=2))


def local_linear(D, y, points, bandwidth, w=None) -> np.ndarray:
    """Evaluate the local linear fit of ``y`` on ``D`` at each row of ``points``.

    Each evaluation solves a kernel-weighted least-squares problem with the
    design centered at the evaluation point, so the intercept is the fitted
    value.  Affine data are reproduced exactly up to rounding.
    """
    D = _as2d(D)
    points = _as2d(points)
    y = np.asarray(y, dtype=float)
    h = np.broadcast_to(np.asarray(bandwidth, dtype=float), (D.shape[1],))
    w = np.ones(len(D)) if w is None else np.asarray(w, dtype=float)
    out = np.empty(len(points))
    for s in range(0, len(points), _CHUNK):
        g = points[s:s + _CHUNK]
        K = _kernel(D, g, h) * w[None, :]
        Z = D[None, :, :] - g[:, None, :]
        X = np.concatenate([np.ones(Z.shape[:2] + (1,)), Z], axis=2)
        XtK = X * K[:, :, None]
        A = np.einsum("gnk,gnl->gkl", XtK, X)
        b = np.einsum("gnk,n->gk", XtK, y)
        try:
            out[s:s + _CHUNK] = np.linalg.solve(A, b[:, :, None])[:, 0, 0]
        except np.linalg.LinAlgError:
            for r in range(len(g)):
                sw = np.sqrt(K[r])
                coef = np.linalg.lstsq(X[r] * sw[:, None], y * sw, rcond=None)[0]
                out[s + r] = coef[0]
    return out


def loo_residuals(D, y, bandwidth, w=None) -> np.ndarray:
    """Leave-one-out local linear residuals at the data points."""
    D = _as2d(D)
    y = np.asarray(y, dtype=float)
    h = np.broadcast_to(np.asarray(bandwidth, dtype=float), (D.shape[1],))
    w = np.ones(len(D)) if w is None else np.asarray(w, dtype=float)
    out = np.empty(len(D))
    for s in range(0, len(D), _CHUNK):
        g = D[s:s + _CHUNK]
        K = _kernel(D, g, h) * w[None, :]
        K[np.arange(len(g)), np.arange(s, s + len(g))] = 0.0
        Z = D[None, :, :] - g[:, None, :]
        X = np.concatenate([np.ones(Z.shape[:2] + (1,)), Z], axis=2)
        XtK = X * K[:, :, None]
        A = np.einsum("gnk,gnl->gkl", XtK, X)
        b = np.einsum("gnk,n->gk", XtK, y)
        coef = np.array([np.linalg.lstsq(A[r], b[r], rcond=None)[0][0] for r in range(len(g))])
        out[s:s + len(g)] = y[s:s + len(g)] - coef
    return out


def cv_bandwidth(D, y, w=None, multipliers=None) -> np.ndarray:
    """Rule-of-thumb bandwidth rescaled by the multiplier minimizing weighted LOO error."""
    base = rule_of_thumb_bandwidth(D, w)
    if multipliers is None:
        multipliers = np.geomspace(0.25, 4.0, 13)
    w_ = np.ones(len(y)) if w is None else np.asarray(w, dtype=float)
    scores = [np.sum(w_ * loo_residuals(D, y, c * base, w) ** 2) for c in multipliers]
    return multipliers[int(np.argmin(scores))] * base
