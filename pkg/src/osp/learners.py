"""Online learners over a Frobenius ball of linear estimators.

All learners share one protocol. ``predict(t)`` returns the estimator used
at round ``t`` (1-indexed) and ``update(t, arrivals)`` consumes the
gradient estimates delivered at the end of round ``t`` as a list of
``(origin_round, gradient)`` pairs sorted by origin. The feasible set is
the ball of radius ``B/2`` centered at zero, so its diameter is ``B``.
"""

from __future__ import annotations

import math
from collections import deque

import numpy as np

from .errors import ConfigError, ProtocolError
from .numerics import frob, frob_sq, project_frobenius_ball

EPS = 1e-8

KIND_OGD = "ogd"
KIND_ODAFTRL = "odaftrl"
KIND_BOLD = "bold"
KIND_SOLID = "solid"
LEARNERS = (KIND_OGD, KIND_ODAFTRL, KIND_BOLD, KIND_SOLID)


def _as_matrix(g) -> np.ndarray:
    return g.matrix if hasattr(g, "matrix") else np.asarray(g, dtype=float)


def ball_argmin(C: np.ndarray, lam: float, radius: float) -> np.ndarray:
    """``argmin_{||W||_F <= radius} <C, W> + lam/2 ||W||_F^2``.

    With ``lam = 0`` the linear objective is minimized at the boundary point
    opposite to ``C`` (zero if ``C`` vanishes).
    """
    if lam > 0.0:
        return project_frobenius_ball(-C / lam, radius)
    nrm = frob(C)
    if nrm == 0.0:
        return np.zeros_like(C)
    return -(radius / nrm) * C


class Learner:
    """Common interface; subclasses hold their own round state."""

    kind = ""

    def predict(self, t: int) -> np.ndarray:
        raise NotImplementedError

    def update(self, t: int, arrivals: list) -> None:
        raise NotImplementedError

    def summary(self) -> dict[str, float]:
        """Scalar state to log after each round (step size or regularizer)."""
        return {}


class AdaptiveOGD(Learner):
    """Projected online gradient descent with the adaptive step
    ``B / sqrt(2 (eps + sum ||G_i||_F^2))``.

    Args:
        shape: (d, n) shape of the estimator.
        B: diameter of the feasible ball.
        project: when False the iterate is never projected.
        eps: guard added to the squared-gradient sum.
    """

    kind = KIND_OGD

    def __init__(self, shape: tuple[int, int], B: float, project: bool = True, eps: float = EPS):
        if not B > 0:
            raise ConfigError(f"B must be positive, got {B}")
        self.B = float(B)
        self.radius = self.B / 2.0
        self.project = project
        self.eps = eps
        self.W = np.zeros(shape)
        self.sum_sq = 0.0
        self.steps = 0
        self.eta = math.nan

    def predict(self, t: int) -> np.ndarray:
        return self.W

    def step(self, G: np.ndarray, rate_sum: float | None = None,
             scale: float | None = None) -> None:
        """One gradient step. ``rate_sum`` and ``scale`` override the
        accumulator and the numerator ``B`` of the step size (SOLID uses both)."""
        self.sum_sq += frob_sq(G)
        acc = self.sum_sq if rate_sum is None else rate_sum
        num = self.B if scale is None else scale
        self.eta = num / math.sqrt(2.0 * (self.eps + acc))
        W = self.W - self.eta * G
        self.W = project_frobenius_ball(W, self.radius) if self.project else W
        self.steps += 1

    def update(self, t: int, arrivals: list) -> None:
        for _, g in arrivals:
            self.step(_as_matrix(g))

    def summary(self) -> dict[str, float]:
        return {"eta": self.eta}


class ODAFTRL(Learner):
    """Delayed FTRL over the ball with the AdaHedgeD regularization weight.

    The gradient of round ``s`` must arrive at the end of round ``s + D``.
    Each arrival produces a clipped progress term ``delta_s`` and the
    weight becomes ``lambda = sum(delta) / alpha`` with ``alpha = B^2 / 2``.
    The next iterate minimizes the arrived gradient sum plus the quadratic
    with the freshest weight.
    """

    kind = KIND_ODAFTRL

    def __init__(self, shape: tuple[int, int], B: float, D: int, alpha: float | None = None):
        if not B > 0:
            raise ConfigError(f"B must be positive, got {B}")
        if D < 0:
            raise ConfigError(f"delay must be nonnegative, got {D}")
        self.B = float(B)
        self.radius = self.B / 2.0
        self.D = int(D)
        self.alpha = self.B**2 / 2.0 if alpha is None else float(alpha)
        self.W = np.zeros(shape)
        self.G_sum = np.zeros(shape)
        self.recent: deque[np.ndarray] = deque(maxlen=self.D + 1)
        self.lam = 0.0
        self.delta_sum = 0.0
        self.deltas: list[float] = []
        self.lambdas: list[float] = [0.0]
        self.raw_deltas: list[float] = []
        # iterate and weight that produced it, for rounds whose gradient is pending
        self._played: dict[int, tuple[np.ndarray, float]] = {}

    def predict(self, t: int) -> np.ndarray:
        self._played[t] = (self.W, self.lam)
        return self.W

    def _F(self, lam: float, W: np.ndarray) -> float:
        return 0.5 * lam * frob_sq(W) + float(np.vdot(self.G_sum, W))

    def update(self, t: int, arrivals: list) -> None:
        expected = t - self.D
        if expected < 1:
            if arrivals:
                raise ProtocolError(f"round {t}: no feedback expected, got {len(arrivals)}")
            return
        if len(arrivals) != 1 or arrivals[0][0] != expected:
            got = [o for o, _ in arrivals]
            raise ProtocolError(f"round {t}: expected feedback of round {expected}, got {got}")
        s, g = arrivals[0]
        G = _as_matrix(g)
        W_s, lam_s = self._played.pop(s)
        self.G_sum = self.G_sum + G
        self.recent.append(G)
        window = sum(self.recent)
        w_nrm = frob(window)
        sigma = min(frob(G) / w_nrm, 1.0) if w_nrm > 0 else 0.0
        W_bar = ball_argmin(self.G_sum, lam_s, self.radius)
        W_hat = ball_argmin(self.G_sum - sigma * window, lam_s, self.radius)
        F_bar = self._F(lam_s, W_bar)
        raw = min(
            self._F(lam_s, W_s) - F_bar,
            float(np.vdot(G, W_s - W_bar)),
            self._F(lam_s, W_hat) - F_bar + float(np.vdot(G, W_s - W_hat)),
        )
        delta = max(raw, 0.0)
        self.raw_deltas.append(raw)
        self.deltas.append(delta)
        self.delta_sum += delta
        self.lam = self.delta_sum / self.alpha
        self.lambdas.append(self.lam)
        self.W = ball_argmin(self.G_sum, self.lam, self.radius)

    def summary(self) -> dict[str, float]:
        return {"lambda": self.lam}


class BOLD(Learner):
    """Round-robin bank of ``D + 1`` independent adaptive OGD instances.

    Instance ``t mod (D+1)`` predicts at round ``t`` and only ever sees the
    gradients of the rounds it predicted.
    """

    kind = KIND_BOLD

    def __init__(self, shape: tuple[int, int], B: float, D: int, project: bool = True,
                 eps: float = EPS):
        if D < 0:
            raise ConfigError(f"delay must be nonnegative, got {D}")
        self.D = int(D)
        self.instances = [AdaptiveOGD(shape, B, project, eps) for _ in range(self.D + 1)]
        self.seen: list[list[int]] = [[] for _ in range(self.D + 1)]
        self.last = 0

    def instance_for(self, t: int) -> int:
        return t % (self.D + 1)

    def predict(self, t: int) -> np.ndarray:
        self.last = self.instance_for(t)
        return self.instances[self.last].W

    def update(self, t: int, arrivals: list) -> None:
        for s, g in arrivals:
            r = self.instance_for(s)
            self.seen[r].append(s)
            self.instances[r].step(_as_matrix(g))

    def summary(self) -> dict[str, float]:
        return {"eta": self.instances[self.last].eta}


class SOLID(Learner):
    """Single adaptive OGD fed with delayed gradients in arrival order.

    The step size of the k-th inner update is
    ``2R / sqrt(2 (eps + A_k + c))`` where
    ``A_k = sum_{j<=k} (g_j^2 + 2 g_j * sum of the previous pending_j norms)``,
    ``g_j`` is the norm of the j-th delivered gradient, ``pending_j`` counts
    the updates the prediction of its origin round had not seen, and
    ``c = rx^2 ry^2 (tau*^2 + tau*)``. With ``R = B/2`` and no delay this is
    exactly the adaptive OGD step.
    """

    kind = KIND_SOLID

    def __init__(self, shape: tuple[int, int], B: float, R: float | None = None,
                 tau_star: int = 0, rx: float = 1.0, ry: float = 1.0,
                 project: bool = True, eps: float = EPS):
        self.inner = AdaptiveOGD(shape, B, project, eps)
        self.R = self.inner.B / 2.0 if R is None else float(R)
        if not self.R > 0:
            raise ConfigError(f"R must be positive, got {self.R}")
        self.tau_star = int(tau_star)
        self.offset = (rx * ry) ** 2 * (self.tau_star**2 + self.tau_star)
        self.acc = 0.0
        self.norms: list[float] = []
        self.prefix = [0.0]
        self.pending: list[int] = []
        self._updates_before: dict[int, int] = {}

    def predict(self, t: int) -> np.ndarray:
        self._updates_before[t] = len(self.norms)
        return self.inner.W

    def update(self, t: int, arrivals: list) -> None:
        for s, g in arrivals:
            G = _as_matrix(g)
            k = len(self.norms) + 1
            tau_k = (k - 1) - self._updates_before.pop(s)
            self.pending.append(tau_k)
            gn = frob(G)
            window = self.prefix[k - 1] - self.prefix[k - 1 - tau_k]
            self.acc += frob_sq(G) + 2.0 * gn * window
            self.norms.append(gn)
            self.prefix.append(self.prefix[-1] + gn)
            self.inner.step(G, rate_sum=self.acc + self.offset, scale=2.0 * self.R)

    def summary(self) -> dict[str, float]:
        return {"eta": self.inner.eta}


def make_learner(kind: str, shape: tuple[int, int], B: float, D: int = 0, *,
                 project: bool = True, R: float | None = None, tau_star: int = 0,
                 rx: float = 1.0, ry: float = 1.0, alpha: float | None = None) -> Learner:
    if kind == KIND_OGD:
        return AdaptiveOGD(shape, B, project)
    if kind == KIND_ODAFTRL:
        return ODAFTRL(shape, B, D, alpha)
    if kind == KIND_BOLD:
        return BOLD(shape, B, D, project)
    if kind == KIND_SOLID:
        return SOLID(shape, B, R, tau_star, rx, ry, project)
    raise ConfigError(f"unknown learner {kind!r}")
