"""Fixed-, random-, and multiplicative-effect NMA model fits with AIC.

All three models share the mean structure E(y) = X d over the study-level
contrasts y with within-study variances V = diag(s_i^2):

* fixed effect (FE):        y ~ MVN(X d, V)
* additive random effects:  y ~ MVN(X d, V + tau^2 I)
* multiplicative effects:   y ~ MVN(X d, phi V), phi >= 1

The FE and ME point estimates coincide (the weights are proportional); the
ME model only scales the covariance of the estimates by phi. AIC is
2 k - 2 log L with k = (n - 1) relative effects plus one heterogeneity
parameter for RE and ME.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .dataset import DesignMatrix, NetworkDataset
from .numerics import NumericError, minimize_scalar, normal_quantile, solve_spd

__all__ = [
    "EstimationError",
    "ModelKind",
    "ModelFit",
    "log_likelihood",
    "fit_fe",
    "fit_re",
    "fit_me",
    "estimate_tau2_dl",
    "estimate_tau2_reml",
    "estimate_phi",
    "reml_objective",
]

DEFAULT_CI_LEVEL = 0.95


class EstimationError(RuntimeError):
    """Model fitting is impossible for this dataset (rank, degrees of freedom)."""


class ModelKind(Enum):
    FE = "FE"
    RE_DL = "RE-DL"
    RE_REML = "RE-REML"
    ME = "ME"


@dataclass(frozen=True)
class ModelFit:
    """Fitted model: point estimates versus the reference, covariance, fit metrics.

    ``d_hat[j]`` is the estimated effect of ``column_treatments[j]`` relative
    to the dataset reference. ``tau2`` is set for RE fits, ``phi`` for ME fits.
    """

    kind: ModelKind
    d_hat: np.ndarray
    cov: np.ndarray
    fitted: np.ndarray
    residuals: np.ndarray
    log_lik: float
    aic: float
    ci_level: float
    column_treatments: tuple[str, ...]
    reference: str
    tau2: float | None = None
    phi: float | None = None

    def __post_init__(self) -> None:
        for name in ("d_hat", "cov", "fitted", "residuals"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_params(self) -> int:
        """Estimated parameters: n-1 effects, plus one variance parameter unless FE."""
        return len(self.d_hat) + (0 if self.kind is ModelKind.FE else 1)

    def contrast(self, treat_b: str, treat_a: str | None = None) -> tuple[float, float]:
        """Estimate and standard error of ``treat_b`` relative to ``treat_a``.

        ``treat_a=None`` means the dataset reference. Uses
        var(d_b - d_a) = cov_bb + cov_aa - 2 cov_ab with the reference
        contributing zero.
        """

        def locate(treat: str) -> int | None:
            if treat == self.reference:
                return None
            if treat in self.column_treatments:
                return self.column_treatments.index(treat)
            raise EstimationError(f"unknown treatment {treat!r}")

        jb = locate(treat_b)
        ja = locate(treat_a) if treat_a is not None else None
        est = 0.0
        var = 0.0
        if jb is not None:
            est += float(self.d_hat[jb])
            var += float(self.cov[jb, jb])
        if ja is not None:
            est -= float(self.d_hat[ja])
            var += float(self.cov[ja, ja])
        if jb is not None and ja is not None:
            var -= 2.0 * float(self.cov[jb, ja])
        return est, math.sqrt(max(var, 0.0))

    def ci(self, treat_b: str, treat_a: str | None = None) -> tuple[float, float]:
        est, se = self.contrast(treat_b, treat_a)
        z = normal_quantile(0.5 + self.ci_level / 2.0)
        return est - z * se, est + z * se


def log_likelihood(y: np.ndarray, mean: np.ndarray, cov_diag: np.ndarray) -> float:
    """Gaussian log-likelihood with a diagonal covariance matrix."""
    y = np.asarray(y, dtype=float)
    mean = np.asarray(mean, dtype=float)
    cov_diag = np.asarray(cov_diag, dtype=float)
    if np.any(cov_diag <= 0):
        raise EstimationError("non-positive variance in likelihood")
    m = y.size
    quad = float(np.sum((y - mean) ** 2 / cov_diag))
    return -0.5 * (m * math.log(2.0 * math.pi) + float(np.sum(np.log(cov_diag))) + quad)


def _check_ci_level(ci_level: float) -> None:
    if not (0.0 < ci_level < 1.0):
        raise EstimationError(f"ci_level must be in (0, 1), got {ci_level!r}")


def _wls(x: np.ndarray, y: np.ndarray, sigma2: np.ndarray):
    """Weighted least squares with diagonal covariance ``sigma2``.

    Returns (d_hat, cov, fitted, residuals, log det of the weighted Gram
    matrix X' diag(1/sigma2) X). The covariance is the Gram inverse, obtained
    by solving against the identity.
    """
    w = 1.0 / sigma2
    xw = x * w[:, None]
    gram = x.T @ xw
    p = gram.shape[0]
    rhs = np.concatenate([(xw.T @ y)[:, None], np.eye(p)], axis=1)
    try:
        result = solve_spd(gram, rhs)
    except NumericError:
        raise EstimationError("rank-deficient design") from None
    d_hat = result.solution[:, 0].copy()
    cov = result.solution[:, 1:]
    cov = 0.5 * (cov + cov.T)
    fitted = x @ d_hat
    return d_hat, cov, fitted, y - fitted, result.log_det


def fit_fe(ds: NetworkDataset, x: DesignMatrix, ci_level: float = DEFAULT_CI_LEVEL) -> ModelFit:
    """Fixed-effect fit: weighted least squares with inverse-variance weights."""
    _check_ci_level(ci_level)
    y = ds.effects()
    v = ds.variances()
    d_hat, cov, fitted, resid, _ = _wls(x.matrix, y, v)
    ll = log_likelihood(y, fitted, v)
    k = x.cols
    return ModelFit(
        ModelKind.FE, d_hat, cov, fitted, resid, ll, 2.0 * k - 2.0 * ll,
        ci_level, x.column_treatments, ds.reference,
    )


def fit_re(
    ds: NetworkDataset,
    x: DesignMatrix,
    tau2: float,
    kind: ModelKind = ModelKind.RE_DL,
    ci_level: float = DEFAULT_CI_LEVEL,
) -> ModelFit:
    """Random-effects fit at a given between-study variance tau^2 >= 0."""
    if kind not in (ModelKind.RE_DL, ModelKind.RE_REML):
        raise EstimationError(f"fit_re expects a random-effects kind, got {kind}")
    if tau2 < 0:
        raise EstimationError("negative between-study variance")
    _check_ci_level(ci_level)
    y = ds.effects()
    sigma2 = ds.variances() + tau2
    d_hat, cov, fitted, resid, _ = _wls(x.matrix, y, sigma2)
    ll = log_likelihood(y, fitted, sigma2)
    k = x.cols + 1
    return ModelFit(
        kind, d_hat, cov, fitted, resid, ll, 2.0 * k - 2.0 * ll,
        ci_level, x.column_treatments, ds.reference, tau2=float(tau2),
    )


def _require_residual_df(ds: NetworkDataset, x: DesignMatrix) -> int:
    df = ds.n_studies - x.cols
    if df <= 0:
        raise EstimationError("no residual degrees of freedom")
    return df


def estimate_phi(ds: NetworkDataset, x: DesignMatrix) -> float:
    """Variance inflation factor: FE residual variance, clamped at 1.

    phi_hat = max(1, (y - X d_FE)' V^-1 (y - X d_FE) / (m - (n - 1))); the
    clamp keeps the ME model from deflating within-study variances.
    """
    df = _require_residual_df(ds, x)
    fe = fit_fe(ds, x)
    quad = float(np.sum(fe.residuals**2 * ds.weights()))
    return max(1.0, quad / df)


def fit_me(ds: NetworkDataset, x: DesignMatrix, ci_level: float = DEFAULT_CI_LEVEL) -> ModelFit:
    """Multiplicative-effect fit: FE point estimates, covariance scaled by phi_hat."""
    _check_ci_level(ci_level)
    df = _require_residual_df(ds, x)
    fe = fit_fe(ds, x, ci_level)
    quad = float(np.sum(fe.residuals**2 * ds.weights()))
    phi = max(1.0, quad / df)
    ll = log_likelihood(ds.effects(), fe.fitted, phi * ds.variances())
    k = x.cols + 1
    return ModelFit(
        ModelKind.ME, fe.d_hat, phi * fe.cov, fe.fitted, fe.residuals,
        ll, 2.0 * k - 2.0 * ll, ci_level, x.column_treatments, ds.reference, phi=phi,
    )


def estimate_tau2_dl(ds: NetworkDataset, x: DesignMatrix) -> float:
    """Method-of-moments (DerSimonian-Laird type) between-study variance.

    tau2_hat = max(0, (Q_total - (m - (n-1))) / (tr W - tr(W X (X'WX)^-1 X'W)))
    with W = V^-1. The denominator is E[Q_total] sensitivity to tau2, so the
    estimator is unbiased before truncation and reduces to the classical
    DerSimonian-Laird estimator for a single pairwise comparison.
    """
    from .heterogeneity import q_total

    df = _require_residual_df(ds, x)
    fe = fit_fe(ds, x)
    q = q_total(ds, x, fe)
    w = ds.weights()
    xw = x.matrix * w[:, None]
    gram = x.matrix.T @ xw
    try:
        t = solve_spd(gram, xw.T)
    except NumericError:
        raise EstimationError("rank-deficient design") from None
    denom = float(np.sum(w)) - float(np.sum(xw * t.solution.T))
    if denom <= 0:
        raise EstimationError("degenerate weight structure in moment estimator")
    return max(0.0, (q - df) / denom)


def reml_objective(tau2: float, ds: NetworkDataset, x: DesignMatrix) -> float:
    """Restricted log-likelihood of tau^2 (up to an additive constant).

    l_R(tau2) = -1/2 [ log det(Sigma) + log det(X' Sigma^-1 X) + r' Sigma^-1 r ]
    with Sigma = V + tau2 I and r the GLS residuals at Sigma; the quadratic
    form equals y' P y of the standard REML projection.
    """
    if tau2 < 0:
        raise EstimationError("negative between-study variance")
    y = ds.effects()
    sigma2 = ds.variances() + tau2
    _, _, _, resid, gram_log_det = _wls(x.matrix, y, sigma2)
    quad = float(np.sum(resid**2 / sigma2))
    return -0.5 * (float(np.sum(np.log(sigma2))) + gram_log_det + quad)


def estimate_tau2_reml(ds: NetworkDataset, x: DesignMatrix, tol: float = 1e-10) -> float:
    """REML between-study variance: maximizes the restricted likelihood.

    The search bracket [0, 10 var(y) + 10 max(s_i^2)] contains the maximizer
    for any data on these scales; any larger tau2 would imply between-study
    spread exceeding the total observed spread by an order of magnitude.
    """
    _require_residual_df(ds, x)
    y = ds.effects()
    v = ds.variances()
    hi = 10.0 * float(np.var(y, ddof=1)) + 10.0 * float(np.max(v))
    return minimize_scalar(lambda t: -reml_objective(t, ds, x), 0.0, hi, tol=tol)
