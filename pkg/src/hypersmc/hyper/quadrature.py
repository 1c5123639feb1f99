"""Vectorized adaptive Simpson quadrature and golden-section search."""

import math

import numpy as np

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def adaptive_simpson(f, edges, tol=1e-8, max_depth=40):
    """Integrate vectorized ``f`` over ``[edges[0], edges[-1]]``.

    Each panel ``[edges[i], edges[i+1]]`` is refined independently; all
    pending sub-intervals at a refinement level are evaluated in one call to
    ``f``. ``tol`` is an absolute tolerance on the total.

    Returns
    -------
    float
    """
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("edges must be strictly increasing with at least two entries")
    a, b = edges[:-1], edges[1:]
    m = 0.5 * (a + b)
    fa, fm, fb = np.split(f(np.concatenate([a, m, b])), 3)
    whole = (b - a) / 6 * (fa + 4 * fm + fb)
    tols = tol * (b - a) / (edges[-1] - edges[0])
    total = 0.0
    for depth in range(max_depth + 1):
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = np.split(f(np.concatenate([lm, rm])), 2)
        left = (m - a) / 6 * (fa + 4 * flm + fm)
        right = (b - m) / 6 * (fm + 4 * frm + fb)
        err = left + right - whole
        done = (np.abs(err) <= 15 * tols) | (depth == max_depth)
        total += float(np.sum((left + right + err / 15)[done]))
        keep = ~done
        if not keep.any():
            break
        a, m, b = a[keep], m[keep], b[keep]
        fa, fm, fb = fa[keep], fm[keep], fb[keep]
        flm, frm = flm[keep], frm[keep]
        left, right, tols = left[keep], right[keep], tols[keep] / 2
        # split each remaining interval into its two halves
        a, m, b, fa, fm, fb, whole = (
            np.concatenate([a, m]), np.concatenate([lm[keep], rm[keep]]), np.concatenate([m, b]),
            np.concatenate([fa, fm]), np.concatenate([flm, frm]), np.concatenate([fm, fb]),
            np.concatenate([left, right]))
        tols = np.concatenate([tols, tols])
    return total


def golden_section_max(f, lo, hi, xtol=1e-9, max_iter=200):
    """Maximize a scalar function on ``[lo, hi]`` by golden-section search.

    Returns ``(x, f(x))``; the endpoints are compared too, so a boundary
    maximum is returned exactly.
    """
    a, b = float(lo), float(hi)
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= xtol * max(1.0, abs(a) + abs(b)):
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    x, fx = (c, fc) if fc >= fd else (d, fd)
    for edge in (float(lo), float(hi)):
        fe = f(edge)
        if fe > fx:
            x, fx = edge, fe
    return x, fx
