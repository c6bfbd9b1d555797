"""Agreement statistics: difference measures, Bland-Altman, Pearson."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import betainc

Z_95 = 1.96


@dataclass(frozen=True)
class BlandAltmanStats:
    bias: float
    sd: float
    lower_loa: float
    upper_loa: float
    lower_loa_ci: tuple
    upper_loa_ci: tuple
    p_value: float
    n: int

    def to_dict(self):
        d = asdict(self)
        d["lower_loa_ci"] = list(self.lower_loa_ci)
        d["upper_loa_ci"] = list(self.upper_loa_ci)
        return d


def diff_measures(pred, ref):
    """Absolute difference and relative difference in percent of ``ref``.

    The relative difference is None when ``ref`` is zero.
    """
    absolute = abs(pred - ref)
    relative = None if ref == 0 else 100.0 * absolute / abs(ref)
    return {"absolute": absolute, "relative_pct": relative}


def t_two_sided_p(t, df):
    """Two-sided p-value of a Student t statistic, via the incomplete beta."""
    if math.isinf(t):
        return 0.0
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


def bland_altman(pairs):
    """Bland-Altman agreement for (a, b) pairs with differences a - b.

    Limits of agreement are bias +/- 1.96 SD (sample SD); each limit gets a
    95% CI of +/- 1.96 SD sqrt(3/n). The p-value tests zero bias with a
    paired t-test on n - 1 degrees of freedom.
    """
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("bland_altman expects a sequence of (a, b) pairs")
    n = arr.shape[0]
    if n < 3:
        raise ValueError("bland_altman needs at least 3 pairs")
    d = arr[:, 0] - arr[:, 1]
    bias = float(np.mean(d))
    sd = float(np.std(d, ddof=1))
    half = Z_95 * sd
    ci = Z_95 * sd * math.sqrt(3.0 / n)
    lower, upper = bias - half, bias + half
    if sd == 0.0:
        p = 1.0 if bias == 0.0 else 0.0
    else:
        p = t_two_sided_p(bias / (sd / math.sqrt(n)), n - 1)
    return BlandAltmanStats(
        bias=bias, sd=sd,
        lower_loa=lower, upper_loa=upper,
        lower_loa_ci=(lower - ci, lower + ci),
        upper_loa_ci=(upper - ci, upper + ci),
        p_value=p, n=n,
    )


def pearson(x, y):
    """Sample Pearson correlation; None if either input has zero variance."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson expects two 1D sequences of equal length")
    if x.size < 2:
        raise ValueError("pearson needs at least two samples")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return None
    r = float(dx @ dy / math.sqrt(sxx * syy))
    return min(1.0, max(-1.0, r))
