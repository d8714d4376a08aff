"""Weighted Cox partial-likelihood engine.

Objective, score, information, Newton fitting and the Breslow baseline for
problems with either standard risk sets (cause-specific hazards: other causes
treated as censored) or extended risk sets with inverse-probability-of-
censoring weights (subdistribution hazards).

The weighted denominator at an event time t splits into a weight-one pool
(subjects still under observation, plus tied failures) and a decayed part
(subjects with an earlier competing event, down-weighted by the censoring
survival ratio G(t-)/G(X_l-)). Both parts reduce to prefix/suffix sums over
subjects sorted by time, so every evaluation is O(n log n + n p) and no
per-subject-per-time weight matrix is ever materialized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import CompetingRisksDataset, StepFunction

__all__ = [
    "IpcwSpec",
    "CoxProblem",
    "CoxFit",
    "problem_for_cause",
    "neg_log_partial_likelihood",
    "score_information",
    "newton_fit",
    "breslow_baseline",
]

# |beta_j| beyond this is treated as a monotone-likelihood (divergent) fit
DIVERGENCE_BOUND = 15.0


@dataclass(frozen=True)
class IpcwSpec:
    """Extended-risk-set weight specification for subdistribution fitting.

    ``keep_after`` marks subjects that remain in risk sets after their own
    failure (competing-cause events); ``ghat_left`` holds the censoring
    survival just before each subject's own time, and ``ghat`` is the
    censoring Kaplan-Meier used to evaluate the numerator G(t-).
    """

    keep_after: np.ndarray
    ghat_left: np.ndarray
    ghat: StepFunction


@dataclass(frozen=True)
class CoxProblem:
    """A (possibly weighted) Cox partial-likelihood problem for one cause.

    Parameters
    ----------
    time : ndarray
        Observed times.
    event : ndarray of bool
        Event indicator for the cause being modeled.
    covariates : ndarray
        n x p matrix.
    offset : ndarray or None
        Per-subject linear offset added to ``covariates @ beta``.
    ipcw : IpcwSpec or None
        None for standard risk sets with unit weights; otherwise the
        extended-risk-set weight structure.
    """

    time: np.ndarray
    event: np.ndarray
    covariates: np.ndarray
    offset: np.ndarray | None = None
    ipcw: IpcwSpec | None = None
    _engine: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        time = np.asarray(self.time, dtype=float)
        event = np.asarray(self.event, dtype=bool)
        cov = np.asarray(self.covariates, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != time.size or event.shape != time.shape:
            raise ValueError("inconsistent problem dimensions")
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event)
        object.__setattr__(self, "covariates", cov)
        if self.offset is not None:
            off = np.asarray(self.offset, dtype=float)
            if off.shape != time.shape:
                raise ValueError("offset must match time in length")
            object.__setattr__(self, "offset", off)
        object.__setattr__(self, "_engine", _RiskEngine(self))

    @property
    def n(self) -> int:
        return self.time.size

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_events(self) -> int:
        return int(self.event.sum())

    @property
    def engine(self) -> "_RiskEngine":
        return self._engine  # type: ignore[return-value]

    def linear_predictor(self, beta: np.ndarray) -> np.ndarray:
        eta = self.covariates @ np.asarray(beta, dtype=float)
        if self.offset is not None:
            eta = eta + self.offset
        return eta


@dataclass(frozen=True)
class CoxFit:
    """Result of a Newton fit.

    ``converged`` implies the final max-norm of the score was below the
    requested tolerance; ``diverged`` flags monotone likelihood (some
    coefficient ran past the divergence bound).
    """

    beta: np.ndarray
    loglik: float
    gradient_norm: float
    iterations: int
    converged: bool
    diverged: bool = False


class _RiskEngine:
    """Precomputed risk-set structure; all methods take a full linear predictor."""

    def __init__(self, prob: CoxProblem):
        time = prob.time
        n = time.size
        event = prob.event
        self.n = n
        self.fg = prob.ipcw is not None

        if self.fg:
            ip = prob.ipcw
            keep_after = np.asarray(ip.keep_after, dtype=bool)
            fail = event | keep_after
        else:
            keep_after = None
            fail = event

        order = np.lexsort((np.arange(n), fail.astype(np.int8), time))
        self.order = order
        self.t_sorted = time[order]
        self.ev_sorted = event[order]
        self.ev_pos = np.flatnonzero(self.ev_sorted)

        t_event = time[event]
        self.t_uniq, self.d = np.unique(t_event, return_counts=True)
        self.k = self.t_uniq.size
        self.d = self.d.astype(float)

        # cut_i: first sorted position belonging to the weight-one pool at t_i
        ut_all = np.unique(time)
        rank_sorted = np.searchsorted(ut_all, self.t_sorted)
        key = 2 * rank_sorted + (fail[order].astype(np.int64) if self.fg else 0)
        r_ev = np.searchsorted(ut_all, self.t_uniq)
        if self.fg:
            self.cut = np.searchsorted(key, 2 * r_ev + 1, side="left")
        else:
            self.cut = np.searchsorted(key, 2 * r_ev, side="left")

        if self.fg:
            gl = np.asarray(prob.ipcw.ghat_left, dtype=float)
            self.inv_gl = np.where(gl > 0, 1.0 / np.where(gl > 0, gl, 1.0), 0.0)[order]
            self.comp_sorted = np.flatnonzero(keep_after[order])
            comp_times = self.t_sorted[self.comp_sorted]
            # competing subjects strictly before each event time
            self.pre_count = np.searchsorted(comp_times, self.t_uniq, side="left")
            self.g_event = np.asarray(prob.ipcw.ghat.eval_left(self.t_uniq), dtype=float).reshape(-1)
            # index of the first event time strictly after each subject's own time
            self.tail_idx = np.searchsorted(self.t_uniq, self.t_sorted, side="right")
        # number of events whose pool contains sorted position q
        self.pool_count = np.searchsorted(self.cut, np.arange(n), side="right")
        self.inv_order = np.empty(n, dtype=int)
        self.inv_order[order] = np.arange(n)

    # -- core sums ---------------------------------------------------------

    def _denominators(self, eta: np.ndarray):
        """Shifted exp and weighted risk-set denominators per unique event time."""
        e = eta[self.order]
        shift = e.max() if e.size else 0.0
        s = np.exp(e - shift)
        suffix = np.concatenate([np.cumsum(s[::-1])[::-1], [0.0]])
        denom = suffix[self.cut]
        if self.fg and self.comp_sorted.size:
            pre = np.concatenate([[0.0], np.cumsum(s[self.comp_sorted] * self.inv_gl[self.comp_sorted])])
            denom = denom + self.g_event * pre[self.pre_count]
        return e, shift, s, denom

    def loglik(self, eta: np.ndarray) -> float:
        e, shift, _, denom = self._denominators(eta)
        if self.k == 0:
            return 0.0
        with np.errstate(divide="ignore"):
            return float(np.sum(e[self.ev_pos] - shift) - np.sum(self.d * np.log(denom)))

    def loglik_many(self, eta_mat: np.ndarray) -> np.ndarray:
        """Log partial likelihood for each column of an n x L predictor matrix."""
        if self.k == 0:
            return np.zeros(eta_mat.shape[1])
        e = eta_mat[self.order]
        shift = e.max(axis=0, keepdims=True)
        s = np.exp(e - shift)
        suffix = np.vstack([np.cumsum(s[::-1], axis=0)[::-1], np.zeros((1, s.shape[1]))])
        denom = suffix[self.cut]
        if self.fg and self.comp_sorted.size:
            pre = np.vstack(
                [
                    np.zeros((1, s.shape[1])),
                    np.cumsum(s[self.comp_sorted] * self.inv_gl[self.comp_sorted, None], axis=0),
                ]
            )
            denom = denom + self.g_event[:, None] * pre[self.pre_count]
        with np.errstate(divide="ignore"):
            return np.sum(e[self.ev_pos] - shift, axis=0) - self.d @ np.log(denom)

    def _exposures(self, denom: np.ndarray, power: int = 1):
        """Per sorted subject: sum over event times of w^power d / D^power."""
        with np.errstate(divide="ignore", invalid="ignore"):
            dd = self.d / denom**power
        pool = np.concatenate([[0.0], np.cumsum(dd)])[self.pool_count]
        if not self.fg:
            return pool
        g_pow = self.g_event**power
        tail = np.concatenate([np.cumsum((g_pow * dd)[::-1])[::-1], [0.0]])
        decay = np.zeros(self.n)
        cs = self.comp_sorted
        if cs.size:
            decay[cs] = self.inv_gl[cs] ** power * tail[self.tail_idx[cs]]
        return pool + decay

    def residuals(self, eta: np.ndarray):
        """Per-subject score residual g, curvature h, and the log likelihood.

        g and h are the first and (negated) second derivative of the log
        partial likelihood with respect to each subject's linear predictor.
        """
        e, shift, s, denom = self._denominators(eta)
        mu = s * self._exposures(denom, 1)
        s2 = s**2 * self._exposures(denom, 2)
        g = np.zeros(self.n)
        g[self.ev_pos] = 1.0
        g -= mu
        h = np.maximum(mu - s2, 0.0)
        if self.k == 0:
            ll = 0.0
        else:
            with np.errstate(divide="ignore"):
                ll = float(np.sum(e[self.ev_pos] - shift) - np.sum(self.d * np.log(denom)))
        return g[self.inv_order], h[self.inv_order], ll

    def gradient(self, X: np.ndarray, eta: np.ndarray) -> np.ndarray:
        g, _, _ = self.residuals(eta)
        return X.T @ g

    def _zbar(self, X: np.ndarray, s: np.ndarray, denom: np.ndarray) -> np.ndarray:
        """Weighted covariate mean of each risk set, k x p."""
        Xs = X[self.order] * s[:, None]
        suffix = np.vstack([np.cumsum(Xs[::-1], axis=0)[::-1], np.zeros((1, X.shape[1]))])
        s1 = suffix[self.cut]
        if self.fg and self.comp_sorted.size:
            pre = np.vstack(
                [
                    np.zeros((1, X.shape[1])),
                    np.cumsum(Xs[self.comp_sorted] * self.inv_gl[self.comp_sorted, None], axis=0),
                ]
            )
            s1 = s1 + self.g_event[:, None] * pre[self.pre_count]
        return s1 / denom[:, None]

    def score_information(self, X: np.ndarray, eta: np.ndarray):
        """Exact gradient and information (negative Hessian) of the log likelihood."""
        _, _, s, denom = self._denominators(eta)
        mu_sorted = s * self._exposures(denom, 1)
        mu = mu_sorted[self.inv_order]
        g = np.zeros(self.n)
        g[self.order[self.ev_pos]] = 1.0
        grad = X.T @ (g - mu)
        if self.k == 0:
            return grad, np.zeros((X.shape[1], X.shape[1]))
        zbar = self._zbar(X, s, denom)
        xm = X * np.sqrt(mu)[:, None]
        zd = zbar * np.sqrt(self.d)[:, None]
        info = xm.T @ xm - zd.T @ zd
        return grad, (info + info.T) / 2.0

    def gradient_and_diag_info(self, X: np.ndarray, eta: np.ndarray):
        """Gradient and the diagonal of the information, vectorized over covariates."""
        _, _, s, denom = self._denominators(eta)
        mu_sorted = s * self._exposures(denom, 1)
        mu = mu_sorted[self.inv_order]
        g = np.zeros(self.n)
        g[self.order[self.ev_pos]] = 1.0
        grad = X.T @ (g - mu)
        if self.k == 0:
            return grad, np.zeros(X.shape[1])
        zbar = self._zbar(X, s, denom)
        diag = mu @ X**2 - self.d @ zbar**2
        return grad, np.maximum(diag, 0.0)

    def baseline(self, eta: np.ndarray) -> StepFunction:
        """Breslow cumulative baseline hazard at the given linear predictor."""
        _, shift, _, denom = self._denominators(eta)
        if self.k == 0:
            return StepFunction(knots=np.array([0.0]), values=np.array([0.0]), value_before_first=0.0)
        if np.any(denom <= 0):
            raise RuntimeError("empty risk set at an event time")
        increments = self.d / denom * np.exp(-shift)
        return StepFunction(knots=self.t_uniq, values=np.cumsum(increments), value_before_first=0.0)


# -- public operations ------------------------------------------------------


def problem_for_cause(data: CompetingRisksDataset, cause: int) -> CoxProblem:
    """Cause-specific problem: failures of other causes treated as censored."""
    if not 1 <= cause <= data.cause_count:
        raise ValueError(f"cause must be in 1..{data.cause_count}")
    return CoxProblem(time=data.time, event=data.status == cause, covariates=data.covariates)


def neg_log_partial_likelihood(prob: CoxProblem, beta: np.ndarray) -> float:
    """Negative log partial likelihood (Breslow ties, weighted risk sets)."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (prob.p,):
        raise ValueError(f"beta must have length {prob.p}")
    return -prob.engine.loglik(prob.linear_predictor(beta))


def score_information(prob: CoxProblem, beta: np.ndarray):
    """Analytic gradient and information matrix of the log partial likelihood.

    Returns
    -------
    gradient : ndarray, shape (p,)
    information : ndarray, shape (p, p)
        Symmetric positive semidefinite negative Hessian.
    """
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (prob.p,):
        raise ValueError(f"beta must have length {prob.p}")
    return prob.engine.score_information(prob.covariates, prob.linear_predictor(beta))


def newton_fit(
    prob: CoxProblem,
    init: np.ndarray | None = None,
    tol: float = 1e-9,
    max_iter: int = 100,
    max_halvings: int = 20,
) -> CoxFit:
    """Maximize the (weighted) log partial likelihood by Newton's method.

    Step halving keeps the log likelihood non-decreasing across accepted
    steps. A coefficient exceeding the divergence bound flags monotone
    likelihood and stops the iteration.
    """
    beta = np.zeros(prob.p) if init is None else np.asarray(init, dtype=float).copy()
    engine = prob.engine
    X = prob.covariates
    loglik = engine.loglik(prob.linear_predictor(beta))
    iterations = 0
    converged = False
    diverged = bool(np.any(np.abs(beta) > DIVERGENCE_BOUND))
    grad_norm = np.inf

    for _ in range(max_iter):
        grad, info = engine.score_information(X, prob.linear_predictor(beta))
        grad_norm = float(np.max(np.abs(grad))) if grad.size else 0.0
        if grad_norm < tol:
            converged = True
            break
        if diverged:
            break
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(info, grad, rcond=None)[0]
        iterations += 1
        accepted = False
        for _h in range(max_halvings + 1):
            cand = beta + step
            cand_ll = engine.loglik(prob.linear_predictor(cand))
            if cand_ll >= loglik - 1e-12:
                beta, loglik = cand, cand_ll
                accepted = True
                break
            step /= 2.0
        if not accepted:
            break
        if np.any(np.abs(beta) > DIVERGENCE_BOUND):
            diverged = True
    else:
        grad = engine.gradient(X, prob.linear_predictor(beta))
        grad_norm = float(np.max(np.abs(grad))) if grad.size else 0.0
        converged = grad_norm < tol

    if prob.p == 0:
        converged = True
        grad_norm = 0.0
    return CoxFit(
        beta=beta,
        loglik=float(loglik),
        gradient_norm=grad_norm,
        iterations=iterations,
        converged=converged and not diverged,
        diverged=diverged,
    )


def breslow_baseline(prob: CoxProblem, beta: np.ndarray) -> StepFunction:
    """Breslow estimator of the cumulative baseline hazard at ``beta``.

    With zero coefficients and unit weights this is the Nelson-Aalen
    estimator; increments are invariant to rescaling all weights.
    """
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (prob.p,):
        raise ValueError(f"beta must have length {prob.p}")
    return prob.engine.baseline(prob.linear_predictor(beta))
