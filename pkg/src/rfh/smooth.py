"""Smooth steps and cutoffs with their first two derivatives (array-valued)."""
import numpy as np


def cinf_step(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1.  Returns (s, s', s'')."""
    x = np.asarray(x, dtype=float)
    inside = (x > 0.0) & (x < 1.0)
    xi = np.where(inside, x, 0.5)
    g = 1.0 / xi - 1.0 / (1.0 - xi)
    g1 = -1.0 / xi**2 - 1.0 / (1.0 - xi) ** 2
    g2 = 2.0 / xi**3 - 2.0 / (1.0 - xi) ** 3
    s = 0.5 * (1.0 - np.tanh(0.5 * g))  # 1 / (1 + e^g) without overflow
    q = s * (1.0 - s)
    s1 = -q * g1
    s2 = -(s1 * (1.0 - 2.0 * s) * g1 + q * g2)
    s = np.where(inside, s, (x >= 1.0).astype(float))
    s1 = np.where(inside, s1, 0.0)
    s2 = np.where(inside, s2, 0.0)
    if s.ndim == 0:
        return float(s), float(s1), float(s2)
    return s, s1, s2


def ramp(t, lo, hi):
    """Smooth 0 -> 1 transition of t across [lo, hi]; (value, d/dt, d2/dt2)."""
    w = hi - lo
    s, s1, s2 = cinf_step((np.asarray(t, dtype=float) - lo) / w)
    return s, s1 / w, s2 / w**2


def plateau(t, a, b, c, d):
    """Smooth bump: 0 below a, 1 on [b, c], 0 above d."""
    u, u1, u2 = ramp(t, a, b)
    v, v1, v2 = ramp(t, c, d)
    v, v1, v2 = 1.0 - v, -v1, -v2
    return u * v, u1 * v + u * v1, u2 * v + 2 * u1 * v1 + u * v2


def quintic_smoothstep(t):
    """6t^5 - 15t^4 + 10t^3 clamped to [0, 1]; (value, derivative)."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    val = t**3 * (10 - 15 * t + 6 * t * t)
    der = 30 * t * t * (1 - t) ** 2
    if val.ndim == 0:
        return float(val), float(der)
    return val, der
