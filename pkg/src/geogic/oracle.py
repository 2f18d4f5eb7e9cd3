"""Kullback-Leibler loss and risk against a known truth, and closed-form constants.

Everything here needs quantities a data analyst never sees (the true mean,
the realized noise, the true covariance), so it serves simulation studies.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .covariance import CovMatrix, CovParams, ThetaBox, covariance_for, from_dense
from .datagen import Dataset
from .likelihood import ModelAlpha, SingularDesignError
from .mle import MleOptions, OptimizationError, maximize_in_box

GAMMA_MAX_K = 12
LOSS_FLOOR = 1e-12


@dataclass(frozen=True)
class KlReport:
    """``total = l0 + bias + stochastic``; ``risk`` is the expectation of ``total``.

    ``bias`` and ``stochastic`` already include their factor 1/2.
    ``direct`` is the loss from the Gaussian KL formula evaluated densely
    (``None`` when skipped) and ``discrepancy`` its gap to ``total``.
    """

    l0: float
    bias: float
    stochastic: float
    total: float
    risk: float
    direct: float | None = None
    discrepancy: float | None = None


class _Whitened:
    """Data and truth whitened by ``Sigma(theta)``; QR of the model columns."""

    def __init__(self, alpha: ModelAlpha, theta: CovParams, X: np.ndarray,
                 truth_cov: CovMatrix, sites, truth_color=None):
        self.cov = covariance_for(theta, sites)
        self.n = self.cov.n
        Xa = np.asarray(X, float)[:, alpha.columns]
        Xw = self.cov.whiten(Xa)
        self.Q, R = np.linalg.qr(Xw)
        d = np.abs(np.diag(R))
        if d.min() <= 1e-10 * d.max():
            raise SingularDesignError(f"singular design for model {alpha}")
        self.truth_cov = truth_cov
        if truth_color is None:
            truth_color = truth_cov.color(np.eye(self.n))
        self.Tw = self.cov.whiten(truth_color)

    def l0(self) -> float:
        tr = float(np.einsum("ij,ij->", self.Tw, self.Tw))
        return 0.5 * (self.cov.logdet - self.truth_cov.logdet + tr - self.n)

    def bias(self, mu0) -> float:
        mw = self.cov.whiten(mu0)
        r = mw - self.Q @ (self.Q.T @ mw)
        return float(r @ r)

    def stochastic(self, noise) -> float:
        c = self.Q.T @ self.cov.whiten(noise)
        return float(c @ c)

    def trace_term(self) -> float:
        QT = self.Q.T @ self.Tw
        return float(np.einsum("ij,ij->", QT, QT))


def l0_loss(theta: CovParams, truth_cov: CovMatrix, sites) -> float:
    """KL loss of ``N(mu0, Sigma(theta))`` from ``N(mu0, Sigma0)`` (known mean)."""
    cov = covariance_for(theta, sites)
    Tw = cov.whiten(truth_cov.color(np.eye(cov.n)))
    tr = float(np.einsum("ij,ij->", Tw, Tw))
    return 0.5 * (cov.logdet - truth_cov.logdet + tr - cov.n)


def kl_direct(alpha: ModelAlpha, theta: CovParams, data: Dataset,
              truth_cov: CovMatrix) -> float:
    """Gaussian KL divergence computed from dense matrices, no projections reused."""
    S = covariance_for(theta, data.sites, fast=False).dense()
    S0 = truth_cov.dense()
    Xa = data.X[:, alpha.columns]
    SiX = np.linalg.solve(S, Xa)
    beta = np.linalg.solve(Xa.T @ SiX, SiX.T @ data.Z)
    d = Xa @ beta - data.mu0
    _, ld = np.linalg.slogdet(S)
    _, ld0 = np.linalg.slogdet(S0)
    tr = float(np.trace(np.linalg.solve(S, S0)))
    return 0.5 * (ld - ld0 + tr - data.n + float(d @ np.linalg.solve(S, d)))


def kl_loss(alpha: ModelAlpha, theta: CovParams, data: Dataset, truth_cov: CovMatrix,
            noise=None, direct: bool | None = None, truth_color=None) -> KlReport:
    """KL loss ``L(alpha; theta)`` of a simulated dataset, decomposed.

    ``data`` must carry ``mu0``; ``noise`` defaults to ``data.noise``. The dense
    direct form is evaluated when ``direct`` is true (default: ``n <= 500``).
    ``truth_color`` may pass a cached ``truth_cov.color(I)``.
    """
    if data.mu0 is None:
        raise ValueError("kl_loss needs a simulated dataset with known mu0")
    noise = data.noise if noise is None else np.asarray(noise, float)
    w = _Whitened(alpha, theta, data.X, truth_cov, data.sites, truth_color)
    l0 = w.l0()
    bias = 0.5 * w.bias(data.mu0)
    stoch = 0.5 * w.stochastic(noise)
    risk = l0 + bias + 0.5 * w.trace_term()
    total = l0 + bias + stoch
    ref = None
    if direct or (direct is None and data.n <= 500):
        dd = data if noise is data.noise else Dataset(data.mu0 + noise, data.X, data.sites,
                                                      data.mu0, noise)
        ref = kl_direct(alpha, theta, dd, truth_cov)
    return KlReport(l0, bias, stoch, total, risk, ref,
                    None if ref is None else abs(ref - total))


def kl_risk(alpha: ModelAlpha, theta: CovParams, X: np.ndarray, mu0: np.ndarray,
            truth_cov: CovMatrix, sites) -> float:
    """``R(alpha; theta) = L0 + 1/2 mu0' S^-1 A mu0 + 1/2 tr(S^-1 M Sigma0)``.

    At ``theta0`` with a correct model the trace equals ``rank(M) = |alpha| + 1``
    (the intercept column counts), so ``R = (|alpha| + 1) / 2``.
    """
    return kl_risk_parts(alpha, theta, X, mu0, truth_cov, sites)["risk"]


def kl_risk_parts(alpha, theta, X, mu0, truth_cov, sites) -> dict:
    w = _Whitened(alpha, theta, X, truth_cov, sites)
    l0, bias, trace = w.l0(), w.bias(mu0), w.trace_term()
    return {"l0": l0, "bias": bias, "trace": trace,
            "risk": l0 + 0.5 * bias + 0.5 * trace,
            "rank": alpha.size + 1, "p_alpha": alpha.size}


def pseudo_true_theta(alpha: ModelAlpha, X: np.ndarray, mu0: np.ndarray,
                      truth_cov: CovMatrix, sites, box: ThetaBox,
                      opts: MleOptions | None = None, objective: str = "limit") -> CovParams:
    """Covariance parameter that the fit of model ``alpha`` targets, searched over ``box``.

    ``objective="limit"`` minimizes ``L0(theta) + 1/2 mu0' S^-1 A mu0``, the part
    of the risk that grows with ``n``; its minimizer is the large-sample limit of
    the MLE and equals ``theta0`` for a correct model. ``objective="risk"``
    minimizes the full risk ``R(alpha; theta)``, whose extra bounded trace term
    tilts the answer along weakly identified directions at finite ``n``.
    """
    if objective not in ("limit", "risk"):
        raise ValueError(f"unknown objective {objective!r}")
    opts = opts or MleOptions(box)
    if opts.box != box:
        opts = MleOptions(box, opts.resolution, opts.tol, opts.max_iter, opts.multistart)
    color = truth_cov.color(np.eye(truth_cov.n))
    Xa = np.asarray(X, float)[:, alpha.columns]
    with_trace = objective == "risk"

    def target(theta):
        cov = covariance_for(theta, sites)
        Q, _ = np.linalg.qr(cov.whiten(Xa))
        Tw = cov.whiten(color)
        mw = cov.whiten(mu0)
        r = mw - Q @ (Q.T @ mw)
        l0 = 0.5 * (cov.logdet - truth_cov.logdet + float(np.einsum("ij,ij->", Tw, Tw)) - cov.n)
        value = l0 + 0.5 * float(r @ r)
        if with_trace:
            QT = Q.T @ Tw
            value += 0.5 * float(np.einsum("ij,ij->", QT, QT))
        return value

    floor = 1e-8 * max(float(np.trace(truth_cov.dense())) / truth_cov.n, 1e-300)
    res = maximize_in_box([alpha], lambda th: {alpha: -target(th)},
                          lambda _, th: -target(th), opts, floor)[alpha]
    if isinstance(res, OptimizationError):
        raise res
    return res.theta_hat


def fold_omitted(truth_cov: CovMatrix, sites, omitted) -> CovMatrix:
    """Truth covariance with omitted stochastic regressors absorbed into it.

    ``omitted`` holds ``(beta_j, RegressorSpec)`` pairs of white-noise or
    exp-GP regressors left out of a model. Averaged over their draws they act
    as extra zero-mean noise with covariance ``beta_j^2 Sigma_j``, which is the
    sense in which the closed-form shifts below hold.
    """
    S = truth_cov.dense()
    for beta, spec in omitted:
        if spec.kind == "white_noise":
            S[np.diag_indices_from(S)] += beta * beta * spec.v2
        elif spec.kind == "exp_gp":
            extra = covariance_for(CovParams(0.0, spec.sigma2, spec.kappa), sites, fast=False)
            S += beta * beta * extra.dense()
        else:
            raise ValueError(f"{spec.kind} regressors are not random and cannot be folded")
    return from_dense(S, None, getattr(sites, "coords", None))


# -- closed-form constants ------------------------------------------------------

def kappa_star(omitted, sigma0_sq: float, kappa0: float) -> float:
    """Decay shift of the pseudo-true parameter when exp-GP regressors are omitted.

    ``omitted`` is a sequence of ``(beta_j, sigma_j^2, kappa_j)`` for the
    regressors of the true model missing from the candidate.
    """
    omitted = list(omitted)
    if not omitted:
        return 0.0
    w = sum(b * b * s2 for b, s2, _ in omitted)
    num = sum(b * b * s2 * (k - kappa0) for b, s2, k in omitted)
    return num / (sigma0_sq + w)


def hilbert_block(rows: int, cols: int) -> np.ndarray:
    """``V_{k,p}``: entries ``1 / (i + j - 1)`` with 1-based ``i <= k+1``, ``j <= p+1``."""
    i = np.arange(1, rows + 2)[:, None]
    j = np.arange(1, cols + 2)[None, :]
    return 1.0 / (i + j - 1)


def gamma_k(beta0, k: int) -> float:
    """``beta0' V_pp beta0 - beta0' V_pk V_kk^{-1} V_kp beta0``.

    This is the squared L2[0, 1] distance between the polynomial with
    coefficients ``beta0`` and the polynomials of degree ``<= k``.
    """
    beta0 = np.asarray(beta0, dtype=float)
    p = len(beta0) - 1
    if not 0 <= k <= p:
        raise ValueError(f"need 0 <= k <= p = {p}")
    if k > GAMMA_MAX_K:
        raise ValueError(f"V_kk is too ill-conditioned for k > {GAMMA_MAX_K}")
    if k == p:
        return 0.0
    Vpp = hilbert_block(p, p)
    Vkp = hilbert_block(k, p)
    Vkk = hilbert_block(k, k)
    c = Vkp @ beta0
    return float(beta0 @ Vpp @ beta0 - c @ np.linalg.solve(Vkk, c))


def shift_whitenoise(theta0: CovParams, omitted) -> CovParams:
    """Pseudo-true theta when white-noise regressors ``(beta_j, v_j^2)`` are omitted."""
    extra = sum(b * b * v2 for b, v2 in omitted)
    return CovParams(theta0.v2 + extra, theta0.sigma2, theta0.kappa)


def shift_expgp(theta0: CovParams, omitted) -> CovParams:
    """Pseudo-true theta when exp-GP regressors ``(beta_j, sigma_j^2, kappa_j)`` are omitted."""
    extra = sum(b * b * s2 for b, s2, _ in omitted)
    return CovParams(theta0.v2, theta0.sigma2 + extra,
                     theta0.kappa + kappa_star(omitted, theta0.sigma2, theta0.kappa))


def shift_monomial(theta0: CovParams, beta0, k: int) -> CovParams:
    """Pseudo-true theta for the nested polynomial model of degree ``k``."""
    g = gamma_k(beta0, k)
    s2 = theta0.sigma2
    return CovParams(theta0.v2, s2 + g, theta0.kappa - g * theta0.kappa / (s2 + g))


def theory_constant(kind: str, **inputs) -> float:
    """Dispatch ``kappa_star`` or ``gamma`` by name (used by the CLI)."""
    if kind in ("kappa_star", "kappa"):
        return kappa_star(inputs["omitted"], inputs["sigma0_sq"], inputs["kappa0"])
    if kind in ("gamma", "gamma_k"):
        return gamma_k(inputs["beta0"], inputs["k"])
    raise ValueError(f"unknown constant {kind!r}")


def loss_efficiency_ratio(selected_loss: float, losses) -> float:
    """``L(selected) / min L`` over the universe; a non-positive minimum is floored."""
    losses = list(losses)
    if not losses:
        return 1.0
    m = min(losses)
    if m <= LOSS_FLOOR:
        warnings.warn(f"minimum KL loss {m:.3g} floored at {LOSS_FLOOR:g}", RuntimeWarning)
        m = LOSS_FLOOR
    return max(selected_loss, m) / m
