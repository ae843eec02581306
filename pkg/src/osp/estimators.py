"""Gradient estimators for bandit feedback.

``inverse_weighted`` only needs the match indicator: it is nonzero when the
emitted vertex is the true one and is then reweighted by the inverse
inclusion probability. ``pseudo_inverse_label`` reconstructs an unbiased
label surrogate from the loss value through the pseudo-inverse of the decode
law's second-moment matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import structures as st
from .decoding import DecodeOutcome
from .errors import DomainError, InvariantViolation
from .numerics import DEFAULT_RCOND, frob_sq, pinv_psd
from .structures import StructureSpec

EXACT = "exact"
INVERSE_WEIGHTED = "inverse_weighted"
PSEUDO_INVERSE = "pseudo_inverse"

INDICATOR = "indicator"
LOSS_VALUE = "loss_value"


@dataclass(frozen=True)
class BanditFeedback:
    """What the environment reveals in a bandit round.

    ``kind`` is ``indicator`` (value is 1.0 on a match, else 0.0) or
    ``loss_value`` (value is the target loss in [0, 1]).
    """

    kind: str
    value: float
    round: int = 0

    def __post_init__(self) -> None:
        if self.kind not in (INDICATOR, LOSS_VALUE):
            raise DomainError(f"unknown feedback kind {self.kind!r}")
        if not 0.0 <= self.value <= 1.0:
            raise DomainError(f"feedback value {self.value} outside [0, 1]")


@dataclass(frozen=True, eq=False)
class GradientEstimate:
    matrix: np.ndarray
    frob_sq: float
    source: str

    @classmethod
    def of(cls, matrix: np.ndarray, source: str) -> "GradientEstimate":
        return cls(matrix, frob_sq(matrix), source)


def exact_gradient(spec: StructureSpec, prediction: np.ndarray, x: np.ndarray,
                   y: int) -> GradientEstimate:
    G = np.outer(prediction - st.embed(spec, y), x)
    return GradientEstimate.of(G, EXACT)


def inverse_weighted(spec: StructureSpec, outcome: DecodeOutcome, x: np.ndarray,
                     feedback: BanditFeedback) -> GradientEstimate:
    """``1[chosen == y] / p(y) * (prediction - y) x^T``.

    On a match the true label equals the chosen vertex, so the gradient is
    computable from the learner's own output.
    """
    if feedback.kind != INDICATOR:
        raise DomainError("inverse-weighted estimator consumes indicator feedback")
    x = np.asarray(x, dtype=float)
    if feedback.value < 0.5:
        return GradientEstimate(np.zeros((spec.dim, x.size)), 0.0, INVERSE_WEIGHTED)
    if not outcome.p_chosen > 0.0:
        raise InvariantViolation(f"chosen vertex has mass {outcome.p_chosen}")
    G = np.outer(outcome.prediction - st.embed(spec, outcome.chosen), x) / outcome.p_chosen
    return GradientEstimate.of(G, INVERSE_WEIGHTED)


def pseudo_inverse_label(spec: StructureSpec, outcome: DecodeOutcome, feedback: BanditFeedback,
                         c_value: float | None = None, rcond: float = DEFAULT_RCOND) -> np.ndarray:
    """Unbiased label surrogate ``V^{-1} P^+ y_hat <y_hat, V y>``.

    The inner product is recovered from the loss value as
    ``loss - <y_hat, b> - c``; ``c`` defaults to the structure's constant.
    """
    if feedback.kind != LOSS_VALUE:
        raise DomainError("pseudo-inverse estimator consumes loss-value feedback")
    c = spec.c if c_value is None else c_value
    yc = st.embed(spec, outcome.chosen)
    inner = feedback.value - float(yc @ spec.b) - c
    P_plus = pinv_psd(outcome.dist.second_moment(), rcond)
    return spec.V_inv @ (P_plus @ yc) * inner


def pseudo_inverse_gradient(prediction: np.ndarray, x: np.ndarray,
                            y_tilde: np.ndarray) -> GradientEstimate:
    """``(prediction - y_tilde) x^T``."""
    G = np.outer(np.asarray(prediction, dtype=float) - y_tilde, np.asarray(x, dtype=float))
    return GradientEstimate.of(G, PSEUDO_INVERSE)


def omega_bound(spec: StructureSpec) -> float:
    """Upper bound on ``tr(V^{-1} Q^+ V^{-T})`` for each structure kind."""
    d, m = spec.dim, spec.m
    if spec.kind == st.MULTICLASS:
        return float(d * d)
    if spec.kind == st.MULTILABEL:
        return d**5 / (4.0 * m * (d - m))
    return float(m**5)


def omega_exact(spec: StructureSpec, rcond: float = DEFAULT_RCOND) -> float:
    """``tr(V^{-1} Q^+ V^{-T})`` computed numerically."""
    Qp = pinv_psd(st.second_moment_uniform(spec), rcond)
    return float(np.trace(spec.V_inv @ Qp @ spec.V_inv.T))
