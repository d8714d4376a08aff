"""Fine-Gray extended risk sets with inverse-probability-of-censoring weights.

Subjects who fail from a competing cause stay in later risk sets with a
weight that decays by the censoring-survival ratio G(t-)/G(X_l-); censored
subjects leave with weight zero and subjects failing from the modeled cause
leave after their own event. With these risk sets and weights, fitting the
subdistribution hazards model reduces to weighted Cox regression.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cox import CoxProblem, IpcwSpec
from .data import CompetingRisksDataset, StepFunction, censoring_km

__all__ = ["WeightedRiskData", "finegray_expand"]


@dataclass(frozen=True)
class WeightedRiskData:
    """Weighted-Cox reduction of the subdistribution problem for one cause.

    ``problem`` is ready to pass to the Cox engine; ``weights_at`` evaluates
    the time-dependent weights on demand (nothing n x k is materialized).
    """

    base: CompetingRisksDataset
    cause: int
    ghat: StepFunction
    problem: CoxProblem

    @property
    def n_events(self) -> int:
        return self.base.event_count(self.cause)

    def in_risk_set(self, t: float) -> np.ndarray:
        """Membership of the extended risk set at time t (stored-row order)."""
        time, status = self.base.time, self.base.status
        competing = (status != 0) & (status != self.cause)
        return (time >= t) | competing

    def weights_at(self, t: float) -> np.ndarray:
        """Weight w_l(t) for every subject; zero for subjects outside the risk set.

        Before a subject's own time the weight is one. From that time on it
        is G(t-)/G(X_l-) for subjects with an observed failure and zero for
        censored subjects.
        """
        time, status = self.base.time, self.base.status
        delta = (status != 0).astype(float)
        gl = np.asarray(self.ghat.eval_left(time), dtype=float)
        gt = float(self.ghat.eval_left(t))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(gl > 0, gt / np.where(gl > 0, gl, 1.0), 0.0)
        w = np.where(time > t, 1.0, delta * ratio)
        return w * self.in_risk_set(t)

    def export_weights(self, path: str | Path) -> None:
        """Long-format debug export: one row per (event time, at-risk subject)."""
        event_times = np.unique(self.base.time[self.base.status == self.cause])
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["event_time", "subject", "weight"])
            for t in event_times:
                members = np.flatnonzero(self.in_risk_set(t))
                w = self.weights_at(t)
                for l in members:
                    writer.writerow([repr(float(t)), int(self.base.original_index[l]), repr(float(w[l]))])


def finegray_expand(
    data: CompetingRisksDataset,
    cause: int,
    ghat: StepFunction | None = None,
) -> WeightedRiskData:
    """Build the extended-risk-set weighted Cox problem for the given cause.

    Parameters
    ----------
    data : CompetingRisksDataset
    cause : int
        Cause whose subdistribution hazard is modeled.
    ghat : StepFunction, optional
        Censoring Kaplan-Meier to use for the weights. Defaults to the one
        estimated from ``data``; cross-validation passes the training-fold
        estimate here so held-out subjects are weighted by the training
        censoring distribution.
    """
    if not 1 <= cause <= data.cause_count:
        raise ValueError(f"cause must be in 1..{data.cause_count}")
    if ghat is None:
        ghat = censoring_km(data)
    status = data.status
    event = status == cause
    keep_after = (status != 0) & ~event
    ghat_left = np.asarray(ghat.eval_left(data.time), dtype=float)
    if np.any(keep_after & (ghat_left <= 0)):
        warnings.warn(
            "censoring survival is zero at a competing event time; "
            "those subjects get weight zero afterwards",
            RuntimeWarning,
            stacklevel=2,
        )
    problem = CoxProblem(
        time=data.time,
        event=event,
        covariates=data.covariates,
        ipcw=IpcwSpec(keep_after=keep_after, ghat_left=ghat_left, ghat=ghat),
    )
    return WeightedRiskData(base=data, cause=cause, ghat=ghat, problem=problem)
