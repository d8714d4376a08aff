"""Tuning-parameter selection for indexed fit sequences.

Works on any sequence of fits indexed by a tuning grid (an L1 path indexed
by a descending penalty, or a boosting trajectory indexed by step count):
cross-validated partial likelihood, AIC/BIC, and the minimum / one-standard-
error / elbow selection rules. Series are always ordered from the sparsest
model to the densest, and every tie is broken toward the sparser model.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .cox import CoxProblem
from .data import CompetingRisksDataset

__all__ = [
    "CriterionSeries",
    "PathFitter",
    "cv_folds",
    "cv_partial_likelihood",
    "information_criteria",
    "select",
]


@dataclass(frozen=True)
class CriterionSeries:
    """A criterion evaluated along a tuning grid, sparsest model first.

    ``se`` is present only for cross-validated criteria. ``df`` holds the
    active-set size per grid point and ``events`` the number of observed
    events of the modeled cause.
    """

    index: np.ndarray
    values: np.ndarray
    df: np.ndarray
    events: int
    se: np.ndarray | None = None

    def __post_init__(self):
        index = np.asarray(self.index)
        values = np.asarray(self.values, dtype=float)
        df = np.asarray(self.df)
        if not (index.shape == values.shape == df.shape) or index.ndim != 1:
            raise ValueError("index, values and df must be 1-d arrays of equal length")
        if self.se is not None:
            se = np.asarray(self.se, dtype=float)
            if se.shape != values.shape:
                raise ValueError("se must match values in length")
            object.__setattr__(self, "se", se)
        object.__setattr__(self, "index", index)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "df", df)

    def __len__(self) -> int:
        return self.index.size


def information_criteria(logliks: np.ndarray, df: np.ndarray, events: int):
    """AIC and BIC for a sequence of fitted log partial likelihoods.

    AIC is ``-2 log L + 2 s`` and BIC is ``-2 log L + 2 s log(k)`` with
    ``s`` the active-set size and ``k`` the number of observed events of
    the cause of interest.
    """
    if events < 1:
        raise ValueError("events must be >= 1")
    logliks = np.asarray(logliks, dtype=float)
    df = np.asarray(df, dtype=float)
    aic = -2.0 * logliks + 2.0 * df
    bic = -2.0 * logliks + 2.0 * df * np.log(events)
    return aic, bic


def select(series: CriterionSeries, rule: str) -> int:
    """Pick a grid index by the given rule.

    Rules: ``cv_min``/``min`` take the argmin; ``cv_plus_1se`` takes the
    sparsest model whose value is within one standard error of the minimum;
    ``elbow`` takes the point after the largest single-step descent,
    traversing from sparsest to densest. Ties always go to the sparser model.
    """
    if len(series) == 0:
        raise ValueError("empty criterion series")
    values = series.values
    if rule in ("cv_min", "min"):
        return int(np.argmin(values))
    if rule == "cv_plus_1se":
        if series.se is None:
            raise ValueError("cv_plus_1se requires standard errors")
        best = int(np.argmin(values))
        threshold = values[best] + series.se[best]
        return int(np.flatnonzero(values <= threshold)[0])
    if rule == "elbow":
        descents = values[:-1] - values[1:]
        if descents.size == 0 or np.all(descents <= 0):
            warnings.warn("criterion never descends; selecting the sparsest model", stacklevel=2)
            return 0
        return int(np.argmax(descents)) + 1
    raise ValueError(f"unknown rule {rule!r}")


class PathFitter(Protocol):
    """What cross-validation needs from a path- or trajectory-fitting method."""

    cause: int
    grid_values: np.ndarray  # common tuning grid, sparsest model first

    def fit_coefs(self, data: CompetingRisksDataset) -> np.ndarray:
        """Fit on ``data`` and return a p x L coefficient matrix over the common grid."""
        ...

    def eval_problem(self, data: CompetingRisksDataset, train: CompetingRisksDataset) -> CoxProblem:
        """Problem used to evaluate log likelihoods on ``data``.

        Any data-dependent ingredient (e.g. the censoring distribution for
        subdistribution weights) must come from ``train`` to avoid leakage.
        """
        ...


def cv_folds(n: int, n_folds: int, seed: int, events: np.ndarray) -> np.ndarray:
    """Deterministic stratified fold labels in 0..n_folds-1.

    Event and non-event subjects are shuffled separately and dealt
    round-robin so every training complement keeps events of the modeled
    cause. The assignment depends only on (seed, n).
    """
    if n_folds < 2:
        raise ValueError("need at least 2 folds")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((int(seed), int(n)))))
    labels = np.empty(n, dtype=int)
    for mask in (events, ~events):
        idx = np.flatnonzero(mask)
        perm = idx[rng.permutation(idx.size)]
        labels[perm] = np.arange(perm.size) % n_folds
    return labels


def cv_partial_likelihood(
    fitter: PathFitter,
    data: CompetingRisksDataset,
    folds: int = 10,
    seed: int = 0,
    df: np.ndarray | None = None,
) -> CriterionSeries:
    """Cross-validated negative predictive log partial likelihood.

    Uses the full-minus-reduced construction: each fold contributes
    ``logL_full(beta_-k) - logL_-k(beta_-k)``, evaluated with the training
    fold's ingredients, and the reported error is the (negated) mean fold
    contribution with its standard error over folds.

    ``df`` are the full-data active-set sizes per grid point; if omitted,
    one extra full-data fit is run to obtain them.
    """
    event_mask = data.status == fitter.cause
    if not event_mask.any():
        raise ValueError("no events of the modeled cause")
    labels = cv_folds(data.n, folds, seed, event_mask)
    for k in range(folds):
        if not event_mask[labels != k].any():
            raise RuntimeError("a training fold lost all events; use fewer folds")

    contributions = []
    for k in range(folds):
        train = data.subset(np.flatnonzero(labels != k))
        coefs = fitter.fit_coefs(train)
        prob_train = fitter.eval_problem(train, train)
        prob_full = fitter.eval_problem(data, train)
        ll_train = prob_train.engine.loglik_many(prob_train.covariates @ coefs)
        ll_full = prob_full.engine.loglik_many(prob_full.covariates @ coefs)
        contributions.append(-(ll_full - ll_train))
    if df is None:
        df = np.count_nonzero(fitter.fit_coefs(data), axis=0)
    df = np.asarray(df)
    # fold paths may truncate at saturation; keep the grid prefix shared by all
    keep = min(min(c.size for c in contributions), df.size)
    contrib = np.vstack([c[:keep] for c in contributions])
    return CriterionSeries(
        index=fitter.grid_values[:keep],
        values=contrib.mean(axis=0),
        df=df[:keep],
        events=int(event_mask.sum()),
        se=contrib.std(axis=0, ddof=1) / np.sqrt(folds),
    )
