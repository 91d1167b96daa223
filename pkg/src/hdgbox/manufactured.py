"""Manufactured solution for solver verification.

u_ex is a product of five trig factors, each of the form trig(k (a . x + c))
with a constant direction vector a.  Writing it that way keeps the gradient
and Laplacian exact by the product rule, with no symbolic machinery: only
the factor values and their first two derivatives enter.
"""

import numpy as np

__all__ = ["exact_solution", "rhs_f"]

_COS, _SIN = 0, 1

# (kind, direction a, offset c): factor = trig(k * (a . x + c))
_FACTORS = (
    (_COS, (1.0, -3.0, 2.0), 0.0),
    (_SIN, (1.0, 0.0, 0.0), 1.0),
    (_SIN, (0.0, -1.0, 0.0), 1.0),
    (_SIN, (2.0, 1.0, 0.0), 0.0),
    (_SIN, (3.0, -2.0, 2.0), 0.0),
)


def _factor_tables(x1, x2, x3, k):
    """Values, first and second derivatives of every factor w.r.t. its phase."""
    vals, d1, d2 = [], [], []
    for kind, a, c in _FACTORS:
        theta = k * (a[0] * x1 + a[1] * x2 + a[2] * x3 + c)
        s, co = np.sin(theta), np.cos(theta)
        if kind == _SIN:
            vals.append(s)
            d1.append(co)
            d2.append(-s)
        else:
            vals.append(co)
            d1.append(-s)
            d2.append(-co)
    return vals, d1, d2


def exact_solution(x1, x2, x3, k):
    """cos(k(x1-3x2+2x3)) sin(k(1+x1)) sin(k(1-x2)) sin(k(2x1+x2)) sin(k(3x1-2x2+2x3))."""
    vals, _, _ = _factor_tables(np.asarray(x1), np.asarray(x2), np.asarray(x3), k)
    out = vals[0]
    for v in vals[1:]:
        out = out * v
    return out


def rhs_f(x1, x2, x3, k, lam):
    """lam*u_ex - Laplace(u_ex), evaluated in closed form.

    Laplace of a product of phase factors f_m(k a_m . x + ...):
    sum_m k^2 |a_m|^2 f_m'' prod_{j != m} f_j
    + 2 sum_{m < j} k^2 (a_m . a_j) f_m' f_j' prod_{l != m, j} f_l.
    """
    x1, x2, x3 = np.asarray(x1), np.asarray(x2), np.asarray(x3)
    vals, d1, d2 = _factor_tables(x1, x2, x3, k)
    m = len(_FACTORS)
    a = [np.array(f[1]) for f in _FACTORS]

    u = vals[0]
    for v in vals[1:]:
        u = u * v

    def prod_except(skip):
        out = None
        for i in range(m):
            if i in skip:
                continue
            out = vals[i] if out is None else out * vals[i]
        return 1.0 if out is None else out

    lap = np.zeros(np.broadcast(x1, x2, x3).shape)
    for i in range(m):
        lap = lap + (k**2 * float(a[i] @ a[i])) * d2[i] * prod_except({i})
        for j in range(i + 1, m):
            lap = lap + 2.0 * (k**2 * float(a[i] @ a[j])) * d1[i] * d1[j] * prod_except({i, j})
    return lam * u - lap
