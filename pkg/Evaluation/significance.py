"""Paired Student t-test with p-values from the regularized incomplete beta."""
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln
from django.utils.translation import gettext_lazy as _

from Master.validators import ContractViolation, require_finite

ITMAX = 500
EPS = 1e-15
TINY = 1e-300


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    df: int
    zero_variance: bool = False

    @property
    def significant(self):
        """Star convention: p < 0.01."""
        return self.p < 0.01


def betacf(a, b, x):
    """Continued fraction for the incomplete beta, evaluated with modified Lentz."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < TINY:
        d = TINY
    d = 1.0 / d
    h = d
    for m in range(1, ITMAX + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = TINY if abs(d) < TINY else d
        c = 1.0 + aa / c
        c = TINY if abs(c) < TINY else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = TINY if abs(d) < TINY else d
        c = 1.0 + aa / c
        c = TINY if abs(c) < TINY else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < EPS:
            return h
    raise ContractViolation(
        _("Incomplete beta did not converge for a=%(a)s, b=%(b)s, x=%(x)s."),
        code='no_convergence', params={'a': a, 'b': b, 'x': x},
    )


def betai(a, b, x):
    """Regularized incomplete beta I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ContractViolation(_("betai needs x in [0, 1], got %(x)s."), code='bad_x', params={'x': x})
    if x == 0.0 or x == 1.0:
        return x
    front = math.exp(gammaln(a + b) - gammaln(a) - gammaln(b) + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return front * betacf(a, b, x) / a
    return 1.0 - front * betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t, df):
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if math.isinf(t):
        return 0.0
    p = betai(0.5 * df, 0.5, df / (df + t * t))
    return min(max(p, 0.0), 1.0)


def paired_ttest(a, b):
    """Paired t-test on the per-fold differences a - b.

    Differences with zero variance give p = 1 when their mean is 0 and
    otherwise p = 0 with a signed infinite t and ``zero_variance`` set.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape or a.size < 2:
        raise ContractViolation(
            _("The paired t-test needs two equal-length samples of at least 2, got %(n)s and %(m)s."),
            code='bad_sample', params={'n': a.size, 'm': b.size},
        )
    require_finite(a, "first sample")
    require_finite(b, "second sample")
    diff = a - b
    n = diff.size
    df = n - 1
    mean = float(diff.mean())
    sd = float(diff.std(ddof=1))
    scale = max(float(np.max(np.abs(diff))), 1.0)
    if sd <= 1e-12 * scale:
        if mean == 0.0 or abs(mean) <= 1e-12 * scale:
            return TTestResult(t=0.0, p=1.0, df=df)
        return TTestResult(t=math.copysign(math.inf, mean), p=0.0, df=df, zero_variance=True)
    t = mean / (sd / math.sqrt(n))
    return TTestResult(t=t, p=t_two_sided_p(t, df), df=df)
