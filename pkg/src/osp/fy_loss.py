"""Fenchel-Young surrogate losses and regularized predictions.

Three regularizers are supported, one per structure kind:

* ``negentropy_simplex``: Shannon negentropy on the simplex (softmax /
  logistic loss). A ``base`` other than e rescales the entropy, giving the
  base-``base`` logistic loss and strong convexity ``1/ln(base)`` w.r.t. l1.
* ``sq_l2_capped``: half squared l2 norm on the capped simplex (SparseMAP).
* ``negentropy_birkhoff``: entropy on the Birkhoff polytope with inverse
  temperature ``zeta``, solved by Sinkhorn.

Every prediction also returns a :class:`SparseDistribution` over vertices
whose mean reproduces the prediction; randomized decoding samples from it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import structures as st
from .assignment import hungarian, max_weight_assignment
from .errors import ConfigError, DomainError, NumericError
from .structures import StructureSpec

NEGENT_SIMPLEX = "negentropy_simplex"
SQ_L2_CAPPED = "sq_l2_capped"
NEGENT_BIRKHOFF = "negentropy_birkhoff"

ATOM_DROP = 1e-12
BVN_RESIDUAL = 1e-9
SINKHORN_WARM_START = 200
LOG_DOMAIN_SWITCH = 30.0


@dataclass(frozen=True)
class Regularizer:
    """Regularizer Omega together with its solver settings.

    Attributes:
        kind: regularizer family.
        lambda_sc: strong-convexity modulus w.r.t. the structure's norm.
        base: logarithm base for the simplex negentropy.
        zeta: inverse temperature for the Birkhoff negentropy.
        sinkhorn_tol: max-abs marginal residual at which Sinkhorn stops.
        sinkhorn_max_iter: iteration cap before a NumericError.
    """

    kind: str
    lambda_sc: float
    base: float = math.e
    zeta: float = 1.0
    sinkhorn_tol: float = 1e-10
    sinkhorn_max_iter: int = 10_000


def regularizer_for(spec: StructureSpec, base: float = math.e, zeta: float = 1.0,
                    sinkhorn_tol: float = 1e-10, sinkhorn_max_iter: int = 10_000) -> Regularizer:
    """The canonical regularizer for a structure kind."""
    if spec.kind == st.MULTICLASS:
        if not base > 1.0:
            raise ConfigError(f"entropy base must exceed 1, got {base}")
        return Regularizer(NEGENT_SIMPLEX, 1.0 / math.log(base), base=base)
    if spec.kind == st.MULTILABEL:
        return Regularizer(SQ_L2_CAPPED, 1.0)
    if not zeta > 0.0:
        raise ConfigError(f"zeta must be positive, got {zeta}")
    return Regularizer(NEGENT_BIRKHOFF, 1.0 / (spec.m * zeta), zeta=zeta,
                       sinkhorn_tol=sinkhorn_tol, sinkhorn_max_iter=sinkhorn_max_iter)


# ------------------------------------------------------------- distributions

@dataclass(eq=False)
class SparseDistribution:
    """Finitely supported law over vertices plus an implicit uniform part.

    The total mass of vertex ``v`` is ``weights[v] + uniform / K``; the
    uniform component is never expanded into K atoms.
    """

    spec: StructureSpec
    ids: np.ndarray
    weights: np.ndarray
    uniform: float = 0.0
    _vectors: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.weights = np.asarray(self.weights, dtype=float)
        total = float(self.weights.sum()) + self.uniform
        if np.any(self.weights < 0) or abs(total - 1.0) > 1e-10:
            raise DomainError(f"weights must be nonnegative and sum to 1 (sum={total!r})")

    @classmethod
    def point(cls, spec: StructureSpec, v: int) -> "SparseDistribution":
        return cls(spec, np.array([v]), np.array([1.0]))

    @classmethod
    def from_atoms(cls, spec: StructureSpec, ids, weights, uniform: float = 0.0,
                   drop: float = ATOM_DROP) -> "SparseDistribution":
        """Merge duplicate ids, drop tiny atoms and renormalize the explicit part."""
        ids = np.asarray(ids, dtype=np.int64)
        w = np.asarray(weights, dtype=float)
        uniq, inv = np.unique(ids, return_inverse=True)
        merged = np.bincount(inv, weights=w, minlength=len(uniq))
        keep = merged >= drop
        uniq, merged = uniq[keep], merged[keep]
        explicit = 1.0 - uniform
        if merged.size == 0:
            if explicit > 0:
                raise DomainError("no atoms left after consolidation")
        else:
            merged = merged * (explicit / merged.sum())
        return cls(spec, uniq, merged, uniform)

    @property
    def vectors(self) -> np.ndarray:
        if self._vectors is None:
            self._vectors = (np.array([st.embed(self.spec, v) for v in self.ids])
                             if self.ids.size else np.zeros((0, self.spec.dim)))
        return self._vectors

    @property
    def mean(self) -> np.ndarray:
        out = self.weights @ self.vectors
        if self.uniform:
            out = out + self.uniform * st.uniform_mean(self.spec)
        return out

    def mass(self, v: int) -> float:
        hit = np.flatnonzero(self.ids == v)
        w = float(self.weights[hit[0]]) if hit.size else 0.0
        return w + self.uniform / self.spec.card

    def second_moment(self) -> np.ndarray:
        X = self.vectors
        P = (X.T * self.weights) @ X
        if self.uniform:
            P = P + self.uniform * st.second_moment_uniform(self.spec)
        return P

    def mix(self, other: "SparseDistribution", p: float) -> "SparseDistribution":
        """Law of ``other`` with prob. ``p`` and ``self`` otherwise."""
        ids = np.concatenate([self.ids, other.ids])
        w = np.concatenate([(1.0 - p) * self.weights, p * other.weights])
        u = (1.0 - p) * self.uniform + p * other.uniform
        return SparseDistribution.from_atoms(self.spec, ids, w, uniform=u, drop=0.0)

    def sample(self, rng: np.random.Generator) -> int:
        """Draw a vertex id (explicit atoms first, then the uniform part)."""
        u = rng.random()
        if self.uniform and u >= 1.0 - self.uniform:
            return st.sample_uniform(self.spec, rng)
        cdf = np.cumsum(self.weights)
        k = int(np.searchsorted(cdf, u, side="right"))
        return int(self.ids[min(k, len(self.ids) - 1)])

    def support_size(self) -> int:
        return int(self.ids.size)


# ------------------------------------------------------------------ solvers

def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def capped_simplex_projection(theta: np.ndarray, m: int) -> np.ndarray:
    """Euclidean projection onto ``{y in [0,1]^d : sum(y) = m}``.

    The optimum is ``clip(theta - tau, 0, 1)`` for the threshold tau at
    which the clipped sum equals m; the sum is piecewise linear in tau with
    breakpoints at ``theta_i`` and ``theta_i - 1`` so tau is found exactly.
    """
    theta = np.asarray(theta, dtype=float)
    bps = np.unique(np.concatenate([theta, theta - 1.0]))
    f = np.clip(theta[None, :] - bps[:, None], 0.0, 1.0).sum(axis=1)
    # f is nonincreasing in tau; locate the segment that brackets m
    k = int(np.searchsorted(-f, -m, side="left"))
    if k < len(bps) and f[k] == m:
        tau = bps[k]
    else:
        lo, hi = bps[k - 1], bps[k]
        flo, fhi = f[k - 1], f[k]
        tau = lo + (flo - m) / (flo - fhi) * (hi - lo)
    return np.clip(theta - tau, 0.0, 1.0)


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    mx = np.max(a, axis=axis, keepdims=True)
    return np.squeeze(mx, axis=axis) + np.log(np.sum(np.exp(a - mx), axis=axis))


def _sinkhorn_dual(A: np.ndarray, f: np.ndarray, g: np.ndarray) -> float:
    with np.errstate(over="ignore"):
        val = float(f.sum() + g.sum() - np.exp(A + f[:, None] + g[None, :]).sum())
    return val if math.isfinite(val) else -math.inf


def _marginal_residual(A: np.ndarray, f: np.ndarray, g: np.ndarray) -> float:
    with np.errstate(over="ignore"):
        Y = np.exp(A + f[:, None] + g[None, :])
    err = float(max(np.max(np.abs(Y.sum(axis=1) - 1.0)), np.max(np.abs(Y.sum(axis=0) - 1.0))))
    return err if math.isfinite(err) else math.inf


def _sinkhorn_newton(A: np.ndarray, f: np.ndarray, g: np.ndarray, tol: float,
                     max_iter: int = 100):
    """Damped Newton ascent on the scaling dual, with ``g[-1]`` pinned."""
    m = A.shape[0]
    err = math.inf
    for _ in range(max_iter):
        Y = np.exp(A + f[:, None] + g[None, :])
        rs, cs = Y.sum(axis=1), Y.sum(axis=0)
        err = float(max(np.max(np.abs(rs - 1.0)), np.max(np.abs(cs - 1.0))))
        if err <= tol:
            return Y, err
        grad = np.concatenate([1.0 - rs, 1.0 - cs])[:-1]
        H = np.block([[np.diag(rs), Y], [Y.T, np.diag(cs)]])[:-1, :-1]
        # tiny ridge keeps the solve stable when some scalings underflow
        H[np.diag_indices_from(H)] += 1e-14 * float(np.max(np.diag(H)))
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            break
        full = np.append(step, 0.0)
        # near the optimum the dual value is flat to rounding, so steps are
        # accepted on either dual ascent or a drop of the marginal residual
        base = _sinkhorn_dual(A, f, g)
        slope = float(grad @ step)
        t = 1.0
        accepted = False
        while t > 1e-12:
            fn, gn = f + t * full[:m], g + t * full[m:]
            if (_sinkhorn_dual(A, fn, gn) >= base + 1e-4 * t * slope
                    or _marginal_residual(A, fn, gn) < (1.0 - 1e-4 * t) * err):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        f, g = fn, gn
    return None, err


def sinkhorn(theta: np.ndarray, zeta: float = 1.0, tol: float = 1e-10,
             max_iter: int = 10_000) -> np.ndarray:
    """Doubly stochastic scaling of ``exp(zeta * theta)``.

    Plain Sinkhorn sweeps converge slowly when the scores are very peaked,
    so after a bounded warm start the scalings are polished by Newton steps
    on the dual.

    Raises:
        NumericError: if the row and column sums are not within ``tol``.
    """
    A = zeta * np.asarray(theta, dtype=float)
    warm = min(max_iter, SINKHORN_WARM_START)
    err = math.inf
    if float(np.max(np.abs(A))) > LOG_DOMAIN_SWITCH:
        # start from the duals of the max-weight assignment, the zero
        # temperature limit of the scalings
        _, u, v = hungarian(-A)
        f = u
        g = -_logsumexp(A + f[:, None], axis=0)
        for _ in range(warm):
            f = -_logsumexp(A + g[None, :], axis=1)
            g = -_logsumexp(A + f[:, None], axis=0)
            Y = np.exp(A + f[:, None] + g[None, :])
            err = float(np.max(np.abs(Y.sum(axis=1) - 1.0)))
            if err <= tol:
                return Y
    else:
        K = np.clip(np.exp(A), 1e-300, 1e300)
        A = np.log(K)
        v = np.ones(A.shape[1])
        for _ in range(warm):
            u = 1.0 / (K @ v)
            v = 1.0 / (K.T @ u)
            Y = u[:, None] * K * v[None, :]
            err = float(np.max(np.abs(Y.sum(axis=1) - 1.0)))
            if err <= tol:
                return Y
        f, g = np.log(u), np.log(v)
    Y, err = _sinkhorn_newton(A, f, g, tol, max(max_iter - warm, 1))
    if Y is not None:
        return Y
    raise NumericError(f"Sinkhorn did not converge in {max_iter} iterations "
                       f"(marginal residual {err:.3e}, tol {tol:.1e})")


def capped_simplex_decomposition(spec: StructureSpec, y: np.ndarray) -> SparseDistribution:
    """Greedy Caratheodory decomposition of a capped-simplex point into m-hot vertices."""
    z = np.array(y, dtype=float)
    m, d = spec.m, spec.dim
    r = 1.0
    ids, ws = [], []
    for _ in range(2 * d + 2):
        if r <= 1e-12:
            break
        order = np.argsort(-z, kind="stable")
        top, rest = order[:m], order[m:]
        w = float(z[top].min())
        if rest.size:
            w = min(w, r - float(z[rest].max()))
        w = min(w, r)
        if w <= 1e-15:
            break
        ids.append(st.subset_rank(np.sort(top), d))
        ws.append(w)
        z[top] -= w
        r -= w
    if not ids:
        raise NumericError("capped-simplex decomposition produced no atoms")
    return SparseDistribution.from_atoms(spec, ids, ws)


def birkhoff_decomposition(spec: StructureSpec, Y: np.ndarray) -> SparseDistribution:
    """Greedy Birkhoff-von Neumann decomposition of a doubly stochastic matrix.

    Each step takes the permutation maximizing the product of its entries,
    subtracts its smallest entry, and stops once the leftover mass drops
    below ``BVN_RESIDUAL``; the leftover is spread proportionally.
    """
    m = spec.m
    Z = np.array(Y, dtype=float).reshape(m, m)
    rows = np.arange(m)
    ids, ws = [], []
    for _ in range(m * m + 1):
        left = float(Z.sum()) / m
        if left < BVN_RESIDUAL:
            break
        perm = max_weight_assignment(np.log(np.maximum(Z, 1e-300)))
        w = float(Z[rows, perm].min())
        if w <= 0.0:
            break
        ids.append(st.perm_rank(perm))
        ws.append(w)
        Z[rows, perm] -= w
        Z[rows, perm] = np.maximum(Z[rows, perm], 0.0)
    if not ids:
        raise NumericError("Birkhoff decomposition produced no atoms")
    return SparseDistribution.from_atoms(spec, ids, ws)


# --------------------------------------------------------- loss and gradient

def regularizer_value(reg: Regularizer, y: np.ndarray) -> float:
    """Omega(y) for a hull point (entropy terms use 0 log 0 = 0)."""
    y = np.asarray(y, dtype=float)
    if reg.kind == SQ_L2_CAPPED:
        return 0.5 * float(y @ y)
    pos = y[y > 0]
    ent = float(np.sum(pos * np.log(pos)))
    if reg.kind == NEGENT_SIMPLEX:
        return ent / math.log(reg.base)
    return ent / reg.zeta


def regularizer_grad(reg: Regularizer, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if reg.kind == SQ_L2_CAPPED:
        return y.copy()
    lg = np.log(np.maximum(y, 1e-300)) + 1.0
    if reg.kind == NEGENT_SIMPLEX:
        return lg / math.log(reg.base)
    return lg / reg.zeta


def _check_theta(spec: StructureSpec, theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (spec.dim,) or not np.all(np.isfinite(theta)):
        raise DomainError(f"theta must be a finite vector of length {spec.dim}")
    return theta


def regularized_prediction(reg: Regularizer, spec: StructureSpec,
                           theta: np.ndarray) -> tuple[np.ndarray, SparseDistribution]:
    """``argmax_{y in conv(Y)} <theta, y> - Omega(y)`` and a vertex certificate."""
    theta = _check_theta(spec, theta)
    if reg.kind == NEGENT_SIMPLEX:
        yhat = _softmax(theta * math.log(reg.base))
        cert = SparseDistribution.from_atoms(spec, np.arange(spec.dim), yhat)
    elif reg.kind == SQ_L2_CAPPED:
        yhat = capped_simplex_projection(theta, spec.m)
        cert = capped_simplex_decomposition(spec, yhat)
    else:
        m = spec.m
        Y = sinkhorn(theta.reshape(m, m), reg.zeta, reg.sinkhorn_tol, reg.sinkhorn_max_iter)
        yhat = Y.ravel()
        cert = birkhoff_decomposition(spec, Y)
    return yhat, cert


def fy_loss_from_prediction(reg: Regularizer, spec: StructureSpec, theta: np.ndarray,
                            yhat: np.ndarray, y: int) -> float:
    """Fenchel-Young loss given an already computed prediction."""
    yv = st.embed(spec, y)
    if reg.kind == NEGENT_SIMPLEX:
        # closed form: log-sum-exp in the chosen base minus the true score
        z = theta * math.log(reg.base)
        mx = z.max()
        val = (mx + math.log(np.exp(z - mx).sum())) / math.log(reg.base) - float(theta @ yv)
    elif reg.kind == SQ_L2_CAPPED:
        val = 0.5 * float(np.sum((yv - theta) ** 2)) - 0.5 * float(np.sum((yhat - theta) ** 2))
    else:
        conj = float(theta @ yhat) - regularizer_value(reg, yhat)
        val = conj + regularizer_value(reg, yv) - float(theta @ yv)
    return max(val, 0.0)


def fy_loss(reg: Regularizer, spec: StructureSpec, theta: np.ndarray, y: int) -> float:
    """``S(theta; y) = Omega*(theta) + Omega(y) - <theta, y>``."""
    theta = _check_theta(spec, theta)
    yhat, _ = regularized_prediction(reg, spec, theta)
    return fy_loss_from_prediction(reg, spec, theta, yhat, y)


def surrogate_gradient(spec: StructureSpec, prediction: np.ndarray, x: np.ndarray,
                       y: int) -> np.ndarray:
    """Gradient of ``W -> S(Wx; y)``, the outer product ``(yhat - y) x^T``."""
    return np.outer(np.asarray(prediction, dtype=float) - st.embed(spec, y),
                    np.asarray(x, dtype=float))


# ------------------------------------------------------ Frank-Wolfe fallback

def _fw_start(spec: StructureSpec) -> tuple[list[int], list[float]]:
    if spec.kind == st.RANKING:
        m = spec.m
        ids = [st.perm_rank([(i + k) % m for i in range(m)]) for k in range(m)]
    elif spec.kind == st.MULTILABEL:
        d, m = spec.dim, spec.m
        ids = sorted({st.subset_rank(sorted((i + k) % d for i in range(m)), d) for k in range(d)})
    else:
        ids = list(range(spec.dim))
    return ids, [1.0 / len(ids)] * len(ids)


def frank_wolfe_prediction(reg: Regularizer, spec: StructureSpec, theta: np.ndarray,
                           tol: float = 1e-7, max_iter: int = 5000
                           ) -> tuple[np.ndarray, SparseDistribution]:
    """Away-step Frank-Wolfe solver of the regularized prediction.

    Only uses the structure's linear oracle; kept as a slow reference.

    Raises:
        NumericError: if the duality gap is above ``tol`` after ``max_iter``.
    """
    theta = _check_theta(spec, theta)
    ids, ws = _fw_start(spec)
    active = dict(zip(ids, ws))
    vec = {v: st.embed(spec, v) for v in ids}
    y = sum(w * vec[v] for v, w in active.items())

    def dirderiv(point: np.ndarray, direction: np.ndarray) -> float:
        return float((regularizer_grad(reg, point) - theta) @ direction)

    gap = math.inf
    for _ in range(max_iter):
        grad = regularizer_grad(reg, y) - theta
        s = st.lmo(spec, -grad)
        if s not in vec:
            vec[s] = st.embed(spec, s)
        gap = float(grad @ (y - vec[s]))
        if gap <= tol:
            break
        a = max(active, key=lambda v: float(grad @ vec[v]))
        away_gap = float(grad @ (vec[a] - y))
        if gap >= away_gap:
            direction, gmax, fw = vec[s] - y, 1.0, True
        else:
            wa = active[a]
            direction, gmax, fw = y - vec[a], wa / (1.0 - wa) if wa < 1 else math.inf, False
        # bisection on the derivative of the convex 1-d restriction
        lo, hi = 0.0, min(gmax, 1e6)
        if dirderiv(y + hi * direction, direction) <= 0:
            step = hi
        else:
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if dirderiv(y + mid * direction, direction) > 0:
                    hi = mid
                else:
                    lo = mid
            step = lo
        if fw:
            for v in active:
                active[v] *= 1.0 - step
            active[s] = active.get(s, 0.0) + step
        else:
            for v in active:
                active[v] *= 1.0 + step
            active[a] -= step
        active = {v: w for v, w in active.items() if w > 1e-15}
        y = sum(w * vec[v] for v, w in active.items())
    else:
        raise NumericError(f"Frank-Wolfe gap {gap:.3e} above {tol:.1e} after {max_iter} iterations")
    cert = SparseDistribution.from_atoms(spec, list(active), list(active.values()))
    return y, cert
