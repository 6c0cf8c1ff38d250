"""Cauchy-Schwarz envelopes relating the statistics of two similar states.

If two pure states have overlap ``|<A|A'>| = y`` and a measurement outcome
has probability ``x`` on ``A``, its probability on ``A'`` lies in
``[g_lower(x, y), g_upper(x, y)]``.  The lower envelope is convex and the
upper one concave in ``x``, so their tangents give valid linear constraints.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError

SLACK = 1e-12
X_CLAMP = 1e-9


def _domain(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(~np.isfinite(x)) or np.any(~np.isfinite(y)):
        raise ContractError("envelope arguments must be finite")
    if np.any(x < -SLACK) or np.any(x > 1 + SLACK) or np.any(y < -SLACK) or np.any(y > 1 + SLACK):
        raise ContractError(f"envelope arguments must lie in [0, 1] (x={x}, y={y})")
    return np.clip(x, 0.0, 1.0), np.clip(y, 0.0, 1.0)


def _out(val):
    return float(val) if np.ndim(val) == 0 else val


def g_lower(x, y):
    x, y = _domain(x, y)
    s = 1 - y * y
    val = x + s * (1 - 2 * x) - 2 * y * np.sqrt(s * x * (1 - x))
    return _out(np.where(x > s, np.clip(val, 0.0, 1.0), 0.0))


def g_upper(x, y):
    x, y = _domain(x, y)
    s = 1 - y * y
    val = x + s * (1 - 2 * x) + 2 * y * np.sqrt(s * x * (1 - x))
    return _out(np.where(x < y * y, np.clip(val, 0.0, 1.0), 1.0))


def _slope_core(x, y, sign):
    s = 1 - y * y
    xc = np.clip(x, X_CLAMP, 1 - X_CLAMP)
    return -1 + 2 * y * y + sign * y * (1 - 2 * xc) * np.sqrt(s / (xc * (1 - xc)))


def g_lower_slope(x, y):
    """Derivative of :func:`g_lower` in ``x``; ``x`` is clamped away from 0 and 1."""
    x, y = _domain(x, y)
    return _out(np.where(x > 1 - y * y, _slope_core(x, y, -1.0), 0.0))


def g_upper_slope(x, y):
    """Derivative of :func:`g_upper` in ``x``; ``x`` is clamped away from 0 and 1."""
    x, y = _domain(x, y)
    return _out(np.where(x < y * y, _slope_core(x, y, 1.0), 0.0))


def tangent_lower(ref, y):
    """Slope and intercept of the tangent to ``g_lower`` at ``ref``.

    The returned line lies below ``g_lower`` everywhere on ``[0, 1]``.
    """
    xc = np.clip(np.asarray(ref, dtype=float), X_CLAMP, 1 - X_CLAMP)
    m = np.asarray(g_lower_slope(xc, y))
    t = np.asarray(g_lower(xc, y)) - m * xc
    return _out(m), _out(t)


def tangent_upper(ref, y):
    """Slope and intercept of the tangent to ``g_upper`` at ``ref``; lies above it."""
    xc = np.clip(np.asarray(ref, dtype=float), X_CLAMP, 1 - X_CLAMP)
    m = np.asarray(g_upper_slope(xc, y))
    t = np.asarray(g_upper(xc, y)) - m * xc
    return _out(m), _out(t)
