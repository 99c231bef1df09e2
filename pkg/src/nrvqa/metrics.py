"""Correlation metrics and the four-parameter logistic fit.

SRCC is the Pearson correlation of tie-averaged ranks.  PLCC is computed
after fitting q' = b2 + (b1 - b2) / (1 + exp(-(q - b3) / |b4|)) to the
predictions with damped (Levenberg-Marquardt) least squares, which absorbs
any monotone miscalibration of the raw scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class UndefinedCorrelationError(ValueError):
    """Correlation is undefined (constant input or too few points)."""


def average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the mean of their rank range."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("pearson needs two equal-length vectors of size >= 2")
    xd = x - x.mean()
    yd = y - y.mean()
    sx = np.sqrt((xd**2).sum())
    sy = np.sqrt((yd**2).sum())
    if sx == 0 or sy == 0:
        raise UndefinedCorrelationError("correlation of a constant vector is undefined")
    return float((xd * yd).sum() / (sx * sy))


def srcc(x, y) -> float:
    """Spearman rank correlation with exact tie handling."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 3:
        raise ValueError("srcc needs two equal-length vectors of size >= 3")
    return pearson(average_ranks(x), average_ranks(y))


@dataclass(frozen=True)
class LogisticFitParams:
    beta1: float
    beta2: float
    beta3: float
    beta4: float
    converged: bool
    iterations: int
    residual: float

    def __iter__(self):
        return iter((self.beta1, self.beta2, self.beta3, self.beta4))


def _sigmoid(u: np.ndarray) -> np.ndarray:
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    eu = np.exp(u[~pos])
    out[~pos] = eu / (1.0 + eu)
    return out


def logistic4(q: np.ndarray, beta1: float, beta2: float, beta3: float,
              beta4: float) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return beta2 + (beta1 - beta2) * _sigmoid((q - beta3) / abs(beta4))


def _jacobian(q: np.ndarray, beta: np.ndarray) -> np.ndarray:
    b1, b2, b3, b4 = beta
    u = (q - b3) / abs(b4)
    s = _sigmoid(u)
    ds = s * (1.0 - s)
    j = np.empty((q.size, 4))
    j[:, 0] = s
    j[:, 1] = 1.0 - s
    j[:, 2] = -(b1 - b2) * ds / abs(b4)
    j[:, 3] = -(b1 - b2) * ds * u * np.sign(b4) / abs(b4)
    return j


MAX_FIT_ITERATIONS = 200
FIT_RTOL = 1e-8


def fit_logistic4(pred, mos) -> LogisticFitParams:
    """Damped least-squares fit of the 4-parameter logistic curve.

    Initialization: b1 = max(mos), b2 = min(mos), b3 = mean(pred),
    b4 = std(pred) / 4.  Stops when the relative residual change drops
    below 1e-8 or after 200 iterations (then converged=False).
    """
    q = np.asarray(pred, dtype=np.float64)
    y = np.asarray(mos, dtype=np.float64)
    if q.shape != y.shape or q.ndim != 1 or q.size < 5:
        raise ValueError("fit needs two equal-length vectors of size >= 5")
    if y.min() == y.max():
        raise UndefinedCorrelationError("labels are constant; nothing to fit")
    beta = np.array([
        float(y.max()),
        float(y.min()),
        float(q.mean()),
        max(float(q.std()) / 4.0, 1e-6),
    ])
    residual = y - logistic4(q, *beta)
    sse = float(residual @ residual)
    lam = 1e-3
    converged = False
    iterations = 0
    for iterations in range(1, MAX_FIT_ITERATIONS + 1):
        jac = _jacobian(q, beta)
        jtj = jac.T @ jac
        jtr = jac.T @ residual
        accepted = False
        for _ in range(20):
            damped = jtj + lam * np.diag(np.maximum(np.diag(jtj), 1e-12))
            try:
                step = np.linalg.solve(damped, jtr)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            cand = beta + step
            if abs(cand[3]) < 1e-9:
                cand[3] = 1e-9
            cand_res = y - logistic4(q, *cand)
            cand_sse = float(cand_res @ cand_res)
            if np.isfinite(cand_sse) and cand_sse <= sse:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            break
        lam = max(lam / 10.0, 1e-12)
        beta = cand
        improvement = sse - cand_sse
        residual = cand_res
        prev_sse, sse = sse, cand_sse
        if improvement <= FIT_RTOL * max(prev_sse, 1e-300):
            converged = True
            break
    return LogisticFitParams(
        beta1=float(beta[0]), beta2=float(beta[1]),
        beta3=float(beta[2]), beta4=float(beta[3]),
        converged=converged, iterations=iterations,
        residual=float(np.sqrt(sse / q.size)),
    )


def plcc_after_fit(pred, mos) -> tuple[float, LogisticFitParams]:
    """Pearson correlation between logistic-fitted predictions and MOS."""
    params = fit_logistic4(pred, mos)
    fitted = logistic4(np.asarray(pred, dtype=np.float64), *params)
    return pearson(fitted, np.asarray(mos, dtype=np.float64)), params
