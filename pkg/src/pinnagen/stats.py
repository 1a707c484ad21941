"""PCA of log-magnitude transfer-function sets, CPV tables and normality tests.

Shapiro-Wilk follows Royston's 1995 algorithm (polynomial approximations of
the coefficients and of the null distribution of W, valid for 3 <= n <=
5000). Royston's multivariate test combines the per-column statistics with an
equivalent-degrees-of-freedom correction for their correlation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .shape_model import PcaModel, cpv_curve, fit_pca

_C1 = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056]
_C2 = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582663]


def _poly(coefs, x):
    """coefs[0] + coefs[1] x + ... (ascending order)."""
    return np.polynomial.polynomial.polyval(x, coefs)


def shapiro_wilk_coefficients(n: int) -> np.ndarray:
    if n < 3:
        raise ValueError("Shapiro-Wilk needs n >= 3")
    if n == 3:
        a = np.array([-np.sqrt(0.5), 0.0, np.sqrt(0.5)])
        return a
    i = np.arange(1, n + 1)
    m = sps.norm.ppf((i - 0.375) / (n + 0.25))
    ssq = float(m @ m)
    u = 1.0 / np.sqrt(n)
    rsn = np.sqrt(ssq)
    a = np.empty(n)
    a_n = _poly(_C1, u) + m[-1] / rsn
    if n > 5:
        a_n1 = _poly(_C2, u) + m[-2] / rsn
        phi = (ssq - 2 * m[-1] ** 2 - 2 * m[-2] ** 2) / (1 - 2 * a_n ** 2 - 2 * a_n1 ** 2)
        a[:] = m / np.sqrt(phi)
        a[-1], a[-2] = a_n, a_n1
        a[0], a[1] = -a_n, -a_n1
    else:
        phi = (ssq - 2 * m[-1] ** 2) / (1 - 2 * a_n ** 2)
        a[:] = m / np.sqrt(phi)
        a[-1], a[0] = a_n, -a_n
    return a


def _sw_pvalue(w: float, n: int) -> float:
    if n == 3:
        p = 6.0 / np.pi * (np.arcsin(np.sqrt(w)) - np.arcsin(np.sqrt(0.75)))
        return float(np.clip(p, 0.0, 1.0))
    w1 = np.log1p(-min(w, 1.0 - 1e-16))
    if n <= 11:
        gamma = -2.273 + 0.459 * n
        mu = _poly([0.5440, -0.39978, 0.025054, -0.0006714], n)
        sigma = np.exp(_poly([1.3822, -0.77857, 0.062767, -0.0020322], n))
        if w1 >= gamma:
            return 0.0
        z = (-np.log(gamma - w1) - mu) / sigma
    else:
        x = np.log(n)
        mu = _poly([-1.5861, -0.31082, -0.083751, 0.0038915], x)
        sigma = np.exp(_poly([-0.4803, -0.082676, 0.0030302], x))
        z = (w1 - mu) / sigma
    return float(sps.norm.sf(z))


def shapiro_wilk(sample) -> tuple[float, float]:
    """(W, p-value) of the Shapiro-Wilk normality test."""
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    n = len(x)
    if not 3 <= n <= 5000:
        raise ValueError(f"Shapiro-Wilk requires 3 <= n <= 5000, got {n}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite sample")
    centered = x - x.mean()
    ss = float(centered @ centered)
    if ss <= (1e-14 * max(1.0, np.abs(x).max())) ** 2 * n:
        raise ValueError("constant sample")
    a = shapiro_wilk_coefficients(n)
    w = float((a @ centered) ** 2 / ss)
    w = min(w, 1.0)
    return w, _sw_pvalue(w, n)


@dataclass
class NormalityReport:
    statistic: float
    p_value: float
    per_variable: list[tuple[float, float]]
    n: int
    dim: int
    equivalent_df: float
    warning: str | None = None

    def as_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "per_variable": [{"W": w, "p": p} for w, p in self.per_variable],
            "n": self.n,
            "dim": self.dim,
            "equivalent_df": self.equivalent_df,
            "warning": self.warning,
        }


def royston_test(data) -> NormalityReport:
    """Royston's multivariate normality test on the rows of ``data``."""
    x = np.asarray(data, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, dim = x.shape
    if n < 3:
        raise ValueError("Royston's test needs n >= 3")
    if dim < 1:
        raise ValueError("need at least one variable")
    per = []
    for j in range(dim):
        try:
            per.append(shapiro_wilk(x[:, j]))
        except ValueError as exc:
            raise ValueError(f"column {j}: {exc}") from None
    pvals = np.array([p for _, p in per])
    # Transform each p-value to a chi-square(1)-like contribution.
    k = sps.norm.ppf(np.clip(pvals / 2.0, 1e-300, 0.5)) ** 2
    if dim == 1:
        e = 1.0
    else:
        corr = np.corrcoef(x, rowvar=False)
        ln = np.log(n)
        u = 0.715
        v = 0.21364 + 0.015124 * ln ** 2 - 0.0018034 * ln ** 3
        lam = 5.0
        off = ~np.eye(dim, dtype=bool)
        c = np.abs(corr[off])
        nc = c ** lam * (1.0 - u * (1.0 - c) ** u / v)
        c_bar = nc.sum() / (dim * dim - dim)
        e = dim / (1.0 + (dim - 1) * c_bar)
    h = e * k.sum() / dim
    p = float(sps.chi2.sf(h, e))
    warning = None
    if dim >= n - 1:
        warning = f"dimension {dim} >= n - 1 = {n - 1}: the chi-square approximation is unreliable"
    return NormalityReport(float(h), p, [(float(w), float(q)) for w, q in per], n, dim, float(e), warning)


# ----------------------------------------------------------------------------
# PRTF model


def flatten_log_magnitude(q: np.ndarray) -> np.ndarray:
    """Row vector of an ``(n_f, n_d)`` log-magnitude set, direction-major:
    each direction's spectrum is contiguous (index d * n_f + f)."""
    q = np.asarray(q, dtype=float)
    return q.T.reshape(-1).copy()


def unflatten_log_magnitude(row: np.ndarray, n_f: int) -> np.ndarray:
    return np.asarray(row, dtype=float).reshape(-1, n_f).T.copy()


def fit_prtf_model(sets) -> PcaModel:
    """PCA over subjects' log-magnitude sets (each ``(n_f, n_d)``, dB)."""
    sets = [np.asarray(s, dtype=float) for s in sets]
    if len(sets) < 2:
        raise ValueError("at least 2 subjects are required")
    shapes = {s.shape for s in sets}
    if len(shapes) != 1:
        raise ValueError(f"dimension mismatch between sets: {sorted(shapes)}")
    return fit_pca(np.vstack([flatten_log_magnitude(s) for s in sets]))


@dataclass
class CpvTable:
    thresholds: list[float]
    p_needed: dict[str, list[int | None]]
    curves: dict[str, np.ndarray] = field(default_factory=dict)


def components_for(curve: np.ndarray, threshold: float) -> int | None:
    hit = np.flatnonzero(curve >= threshold - 1e-9)
    return int(hit[0]) + 1 if len(hit) else None


def compare_cpv(models: dict[str, PcaModel], thresholds=(90.0, 95.0, 99.0)) -> CpvTable:
    curves = {name: cpv_curve(m) for name, m in models.items()}
    table = {name: [components_for(c, t) for t in thresholds] for name, c in curves.items()}
    return CpvTable(list(thresholds), table, curves)


def cpv_csv(table: CpvTable) -> str:
    names = list(table.curves)
    length = max(len(c) for c in table.curves.values())
    lines = ["p," + ",".join(f"tau_{n}" for n in names)]
    for p in range(length):
        cells = [repr(float(table.curves[n][p])) if p < len(table.curves[n]) else "" for n in names]
        lines.append(f"{p + 1}," + ",".join(cells))
    return "\n".join(lines) + "\n"
