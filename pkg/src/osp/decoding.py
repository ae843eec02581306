"""Randomized decoding of a score vector into a vertex, with optional
uniform exploration.

Both decoders return the exact law of their output so downstream code can
compute expected losses, inclusion probabilities and second moments without
sampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import structures as st
from .errors import DomainError
from .fy_loss import Regularizer, SparseDistribution, regularized_prediction
from .structures import StructureSpec


@dataclass(eq=False)
class DecodeOutcome:
    """Result of one decode.

    Attributes:
        prediction: the regularized prediction for the scores.
        certificate: vertex decomposition of ``prediction``.
        y_star: nearest vertex to ``prediction``.
        delta_star: its distance in the structure's norm.
        p: probability of sampling from the certificate instead of ``y_star``.
        q: exploration rate (0 for plain randomized decoding).
        chosen: the emitted vertex.
        dist: exact law of the emitted vertex.
        p_chosen: ``dist.mass(chosen)``.
        explored: whether the uniform branch fired.
    """

    prediction: np.ndarray
    certificate: SparseDistribution
    y_star: int
    delta_star: float
    p: float
    q: float
    chosen: int
    dist: SparseDistribution
    p_chosen: float
    explored: bool


def decode_probability(spec: StructureSpec, delta_star: float) -> float:
    return min(1.0, 2.0 * delta_star / spec.nu)


def _phi(spec: StructureSpec, reg: Regularizer, theta: np.ndarray):
    yhat, cert = regularized_prediction(reg, spec, theta)
    y_star, delta = st.nearest_vertex(spec, yhat)
    p = decode_probability(spec, delta) if delta > 0 else 0.0
    point = SparseDistribution.point(spec, y_star)
    law = point if p == 0.0 else point.mix(cert, p)
    return yhat, cert, y_star, delta, p, law


def _draw_phi(rng: np.random.Generator, cert: SparseDistribution, y_star: int, p: float) -> int:
    if rng.random() < p:
        return cert.sample(rng)
    return y_star


def draw_decision(spec: StructureSpec, cert: SparseDistribution, y_star: int, p: float,
                  q: float, rng: np.random.Generator) -> tuple[int, bool]:
    """The random part of decoding, given the deterministic prediction state.

    Returns the chosen vertex id and whether the exploration branch fired.
    """
    explored = q > 0.0 and rng.random() < q
    chosen = st.sample_uniform(spec, rng) if explored else _draw_phi(rng, cert, y_star, p)
    return int(chosen), bool(explored)


def randomized_decode(spec: StructureSpec, reg: Regularizer, theta: np.ndarray,
                      rng: np.random.Generator) -> DecodeOutcome:
    """Nearest vertex, or with probability ``min(1, 2*delta/nu)`` a draw
    from the prediction's certificate."""
    return rdue_decode(spec, reg, theta, 0.0, rng)


def rdue_decode(spec: StructureSpec, reg: Regularizer, theta: np.ndarray, q: float,
                rng: np.random.Generator) -> DecodeOutcome:
    """Randomized decoding mixed with uniform exploration at rate ``q``.

    With ``q = 0`` no exploration coin is drawn, so the random stream is
    consumed exactly as in :func:`randomized_decode`.
    """
    if not 0.0 <= q <= 1.0:
        raise DomainError(f"exploration rate must lie in [0, 1], got {q}")
    yhat, cert, y_star, delta, p, law = _phi(spec, reg, theta)
    chosen, explored = draw_decision(spec, cert, y_star, p, q, rng)
    if q > 0.0:
        dist = SparseDistribution(spec, law.ids, (1.0 - q) * law.weights, uniform=q)
    else:
        dist = law
    return DecodeOutcome(
        prediction=yhat, certificate=cert, y_star=y_star, delta_star=delta, p=p, q=q,
        chosen=int(chosen), dist=dist, p_chosen=dist.mass(chosen), explored=bool(explored),
    )


def second_moment(outcome: DecodeOutcome) -> np.ndarray:
    """``E[y y^T]`` under the outcome's law (uniform part in closed form)."""
    return outcome.dist.second_moment()


def expected_target_loss(spec: StructureSpec, dist: SparseDistribution, y: int) -> float:
    """Exact expected target loss; the loss is affine so only the mean matters."""
    return st.target_loss(spec, dist.mean, y)


def decoding_factor(spec: StructureSpec, reg: Regularizer) -> float:
    """``4 gamma / (lambda nu)``, the loss-to-surrogate ratio of the decoder."""
    return 4.0 * spec.gamma / (reg.lambda_sc * spec.nu)


def rdue_bound(spec: StructureSpec, reg: Regularizer, surrogate: float, q: float) -> float:
    """Upper bound on the expected target loss of the exploring decoder."""
    K = spec.card
    return decoding_factor(spec, reg) * (1.0 - q) * surrogate + q * (K - 1) / K
