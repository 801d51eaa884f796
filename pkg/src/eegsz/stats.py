"""Two-way ANOVA without replication and paired t-test.

p-values come from the regularized incomplete beta function, evaluated with
the modified Lentz continued fraction.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .errors import DegenerateStatisticError, ShapeError

_TINY = 1e-300


def _betacf(a, b, x, max_iter=500, tol=1e-15):
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge "
                          f"(a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta ``I_x(a, b)`` for ``a, b > 0``, ``0 <= x <= 1``."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc needs a > 0 and b > 0")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def f_sf(f: float, df1: float, df2: float) -> float:
    """Upper tail ``P(F > f)`` of the F distribution."""
    if f <= 0:
        return 1.0
    if math.isinf(f):
        return 0.0
    return betainc(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f))


def f_cdf(f: float, df1: float, df2: float) -> float:
    return 1.0 - f_sf(f, df1, df2)


def t_sf_two_sided(t: float, df: float) -> float:
    """``P(|T| > |t|)`` for Student's t with ``df`` degrees of freedom."""
    if math.isinf(t):
        return 0.0
    return betainc(df / 2.0, 0.5, df / (df + t * t))


class AnovaResult(NamedTuple):
    F_rows: float
    F_cols: float
    p_rows: float
    p_cols: float
    ss_rows: float
    ss_cols: float
    ss_error: float
    ss_total: float
    df_rows: int
    df_cols: int
    df_error: int

    def to_dict(self):
        return {k: (None if isinstance(v, float) and math.isinf(v) else v)
                for k, v in self._asdict().items()}


def _f_ratio(ss, df, ms_error):
    if ss == 0.0:
        return 0.0
    if ms_error == 0.0:
        return math.inf
    return (ss / df) / ms_error


def anova_two_factor_no_replication(table) -> AnovaResult:
    """Rows (e.g. methods) by columns (e.g. bands), one observation per cell.

    A factor whose sum of squares is exactly zero gets ``F = 0`` and ``p = 1``;
    a non-zero factor over an exactly zero error term gets ``F = inf``.
    """
    x = np.asarray(table, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ShapeError(f"two-factor ANOVA needs at least a 2x2 table, got shape {x.shape}")
    r, c = x.shape
    grand = x.mean()
    row_means = x.mean(axis=1)
    col_means = x.mean(axis=0)
    ss_rows = float(c * np.sum((row_means - grand) ** 2))
    ss_cols = float(r * np.sum((col_means - grand) ** 2))
    resid = x - row_means[:, None] - col_means[None, :] + grand
    ss_error = float(np.sum(resid ** 2))
    ss_total = float(np.sum((x - grand) ** 2))
    df_r, df_c = r - 1, c - 1
    df_e = df_r * df_c
    ms_e = ss_error / df_e
    F_r = _f_ratio(ss_rows, df_r, ms_e)
    F_c = _f_ratio(ss_cols, df_c, ms_e)
    return AnovaResult(F_r, F_c, f_sf(F_r, df_r, df_e), f_sf(F_c, df_c, df_e),
                       ss_rows, ss_cols, ss_error, ss_total, df_r, df_c, df_e)


def paired_t_test(a, b):
    """Paired two-sided t-test; returns ``(t, p)``.

    Identical samples give ``(0.0, 1.0)``. Constant non-zero differences have
    no variance and raise :class:`DegenerateStatisticError`.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError("paired samples must be 1-D and equally long")
    n = a.size
    if n < 2:
        raise ShapeError("paired t-test needs at least two pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return 0.0, 1.0
        raise DegenerateStatisticError(
            f"differences are constant ({mean}); t statistic undefined")
    t = mean / (sd / math.sqrt(n))
    return t, t_sf_two_sided(t, n - 1)
