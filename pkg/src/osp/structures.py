"""Structured output spaces: multiclass, fixed-cardinality multilabel, ranking.

Each space is a finite vertex set embedded in R^d together with a target loss
that is affine in its first argument (a SELF loss ``<y_pred, V y + b> + c``),
the geometric constants used by the decoding analysis, and exact linear
maximization over the convex hull.

Vertices are addressed by an integer id under a canonical enumeration:

* multiclass: the class index,
* multilabel: the lexicographic rank of the sorted m-subset,
* ranking: the Lehmer code of the permutation ``sigma`` whose matrix has
  ``Y[i, sigma[i]] = 1`` (flattened row-major).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations, permutations

import numpy as np

from .assignment import max_weight_assignment
from .errors import ConfigError, DomainError

MULTICLASS = "multiclass"
MULTILABEL = "multilabel"
RANKING = "ranking"
KINDS = (MULTICLASS, MULTILABEL, RANKING)

HULL_TOL = 1e-9
MAX_RANKING_M = 12
ENUM_LIMIT = 100_000


@dataclass(frozen=True, eq=False)
class StructureSpec:
    """Immutable description of an output space and its SELF loss.

    Attributes:
        kind: one of ``multiclass``, ``multilabel``, ``ranking``.
        dim: embedding dimension d (m*m for ranking).
        m: labels per vertex (multilabel, after any flip) or ranking size.
        norm: ``"l1"`` or ``"l2"``, the norm the constants refer to.
        nu: minimum pairwise distance between distinct vertices.
        gamma: Lipschitz constant of the target loss over the hull.
        kappa: constant with ``kappa * ||y|| >= ||y||_2``.
        card: number of vertices K.
        V, b, c: SELF parameters, ``L(y'; y) = <y', V y + b> + c``.
        V_inv: inverse of V.
        ry: max of the largest Euclidean norm in the hull and its diameter.
        flipped: multilabel only; labels are complemented at ingestion so
            that the internal cardinality is at most d/2.
        m_external: the label count as seen by the data source.
    """

    kind: str
    dim: int
    m: int
    norm: str
    nu: float
    gamma: float
    kappa: float
    card: int
    V: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    c: float
    V_inv: np.ndarray = field(repr=False)
    ry: float
    flipped: bool = False
    m_external: int = 0

    @property
    def c_descriptor(self) -> str:
        return "count_over_d" if self.kind == MULTILABEL else "constant"

    @property
    def norm_ord(self) -> int:
        return 1 if self.norm == "l1" else 2

    @property
    def side(self) -> int:
        """Ranking matrix side length (m); d for the other kinds."""
        return self.m if self.kind == RANKING else self.dim


def _freeze(*arrays: np.ndarray) -> None:
    for a in arrays:
        a.setflags(write=False)


def multiclass(d: int) -> StructureSpec:
    """Multiclass space of one-hot vectors with the 0-1 loss."""
    if d < 2:
        raise ConfigError(f"multiclass needs d >= 2, got {d}")
    ones = np.ones((d, d))
    V = ones - np.eye(d)
    V_inv = ones / (d - 1) - np.eye(d)
    b = np.zeros(d)
    _freeze(V, V_inv, b)
    return StructureSpec(
        kind=MULTICLASS, dim=d, m=1, norm="l1", nu=2.0, gamma=0.5, kappa=1.0,
        card=d, V=V, b=b, c=0.0, V_inv=V_inv, ry=math.sqrt(2.0), m_external=1,
    )


def multilabel_min_distance(d: int, m: int) -> float:
    """Minimum pairwise l2 distance between distinct m-hot vectors.

    Exhaustive for small instances, closed form otherwise.
    """
    if math.comb(d, m) <= 1:
        return math.inf
    if math.comb(d, m) <= 720:
        verts = np.array([_mhot(d, s) for s in combinations(range(d), m)])
        sq = np.sum(verts**2, axis=1)
        dist2 = sq[:, None] + sq[None, :] - 2.0 * verts @ verts.T
        np.fill_diagonal(dist2, np.inf)
        return float(np.sqrt(dist2.min()))
    return math.sqrt(2.0)


def multilabel(d: int, m: int) -> StructureSpec:
    """Multilabel space of m-hot vectors with the normalized Hamming loss.

    When ``m > d/2`` labels are complemented at ingestion; the Hamming loss
    is invariant under that map and the complemented space has cardinality
    ``d - m``.
    """
    if d < 2 or not 1 <= m <= d - 1:
        raise ConfigError(f"multilabel needs d >= 2 and 1 <= m <= d-1, got d={d}, m={m}")
    flipped = m > d / 2
    mi = d - m if flipped else m
    V = -(2.0 / d) * np.eye(d)
    V_inv = -(d / 2.0) * np.eye(d)
    b = np.full(d, 1.0 / d)
    _freeze(V, V_inv, b)
    # tight Lipschitz constant of the affine extension over the hull
    gamma = (2.0 / d) * math.sqrt(mi * (d - mi) / d)
    ry = max(math.sqrt(mi), math.sqrt(2.0 * min(mi, d - mi)))
    return StructureSpec(
        kind=MULTILABEL, dim=d, m=mi, norm="l2", nu=multilabel_min_distance(d, mi),
        gamma=gamma, kappa=1.0, card=math.comb(d, mi), V=V, b=b, c=mi / d,
        V_inv=V_inv, ry=ry, flipped=flipped, m_external=m,
    )


def ranking(m: int) -> StructureSpec:
    """Ranking space of m x m permutation matrices, loss = mismatch fraction."""
    if not 2 <= m <= MAX_RANKING_M:
        raise ConfigError(f"ranking needs 2 <= m <= {MAX_RANKING_M}, got {m}")
    d = m * m
    V = -np.eye(d) / m
    V_inv = -m * np.eye(d)
    b = np.zeros(d)
    _freeze(V, V_inv, b)
    return StructureSpec(
        kind=RANKING, dim=d, m=m, norm="l1", nu=4.0, gamma=1.0 / (2 * m), kappa=1.0,
        card=math.factorial(m), V=V, b=b, c=1.0, V_inv=V_inv, ry=math.sqrt(2.0 * m),
        m_external=m,
    )


def make_spec(kind: str, d: int = 0, m: int = 0) -> StructureSpec:
    if kind == MULTICLASS:
        return multiclass(d)
    if kind == MULTILABEL:
        return multilabel(d, m)
    if kind == RANKING:
        return ranking(m)
    raise ConfigError(f"unknown structure kind {kind!r}")


def spec_to_record(spec: StructureSpec) -> dict[str, str]:
    """Key-value record used in experiment configs."""
    if spec.kind == MULTICLASS:
        return {"kind": spec.kind, "d": str(spec.dim)}
    if spec.kind == MULTILABEL:
        return {"kind": spec.kind, "d": str(spec.dim), "m": str(spec.m_external)}
    return {"kind": spec.kind, "m": str(spec.m)}


def spec_from_record(rec: dict[str, str]) -> StructureSpec:
    try:
        kind = rec["kind"].strip().lower()
        return make_spec(kind, int(rec.get("d", 0)), int(rec.get("m", 0)))
    except KeyError as exc:
        raise ConfigError(f"structure record missing key {exc}") from None
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad structure record {rec}: {exc}") from None


# ---------------------------------------------------------------- vertex ids

def _mhot(d: int, subset) -> np.ndarray:
    y = np.zeros(d)
    y[list(subset)] = 1.0
    return y


def subset_rank(subset, d: int) -> int:
    """Lexicographic rank of a sorted subset among all same-size subsets."""
    s = sorted(int(i) for i in subset)
    m = len(s)
    rank, prev = 0, -1
    for i, c in enumerate(s):
        for j in range(prev + 1, c):
            rank += math.comb(d - j - 1, m - i - 1)
        prev = c
    return rank


def subset_unrank(rank: int, d: int, m: int) -> list[int]:
    out = []
    j = 0
    for i in range(m):
        while True:
            block = math.comb(d - j - 1, m - i - 1)
            if rank < block:
                break
            rank -= block
            j += 1
        out.append(j)
        j += 1
    return out


def perm_rank(perm) -> int:
    """Lehmer code of a permutation (lexicographic rank)."""
    p = [int(v) for v in perm]
    m = len(p)
    rank = 0
    for i in range(m):
        smaller = sum(1 for j in range(i + 1, m) if p[j] < p[i])
        rank += smaller * math.factorial(m - 1 - i)
    return rank


def perm_unrank(rank: int, m: int) -> list[int]:
    pool = list(range(m))
    out = []
    for i in range(m):
        f = math.factorial(m - 1 - i)
        k, rank = divmod(rank, f)
        out.append(pool.pop(k))
    return out


def _check_id(spec: StructureSpec, v: int) -> int:
    v = int(v)
    if not 0 <= v < spec.card:
        raise DomainError(f"vertex id {v} out of range [0, {spec.card})")
    return v


def embed(spec: StructureSpec, v: int) -> np.ndarray:
    """0/1 embedding of vertex ``v``."""
    v = _check_id(spec, v)
    if spec.kind == MULTICLASS:
        y = np.zeros(spec.dim)
        y[v] = 1.0
        return y
    if spec.kind == MULTILABEL:
        return _mhot(spec.dim, subset_unrank(v, spec.dim, spec.m))
    m = spec.m
    Y = np.zeros((m, m))
    Y[np.arange(m), perm_unrank(v, m)] = 1.0
    return Y.ravel()


def vertex_id(spec: StructureSpec, y: np.ndarray) -> int:
    """Inverse of :func:`embed` for exact 0/1 vectors."""
    y = np.asarray(y, dtype=float).ravel()
    if y.shape != (spec.dim,) or not np.all((y == 0) | (y == 1)):
        raise DomainError("not a 0/1 vector of the embedding dimension")
    if spec.kind == MULTICLASS:
        if y.sum() != 1:
            raise DomainError("multiclass vertex must be one-hot")
        return int(np.flatnonzero(y)[0])
    if spec.kind == MULTILABEL:
        if y.sum() != spec.m:
            raise DomainError(f"multilabel vertex must have {spec.m} ones")
        return subset_rank(np.flatnonzero(y), spec.dim)
    Y = y.reshape(spec.m, spec.m)
    if not (np.all(Y.sum(0) == 1) and np.all(Y.sum(1) == 1)):
        raise DomainError("ranking vertex must be a permutation matrix")
    return perm_rank(np.argmax(Y, axis=1))


def ingest_labels(spec: StructureSpec, labels: np.ndarray) -> int:
    """Map an external 0/1 label vector to an internal vertex id."""
    y = np.asarray(labels, dtype=float).ravel()
    if spec.flipped:
        y = 1.0 - y
    return vertex_id(spec, y)


def external_labels(spec: StructureSpec, v: int) -> np.ndarray:
    y = embed(spec, v)
    return 1.0 - y if spec.flipped else y


def enumerate_vertices(spec: StructureSpec, limit: int = ENUM_LIMIT) -> np.ndarray:
    """All K embedded vertices, row ``k`` is ``embed(spec, k)``."""
    if spec.card > limit:
        raise DomainError(f"K={spec.card} exceeds enumeration limit {limit}")
    if spec.kind == MULTICLASS:
        return np.eye(spec.dim)
    if spec.kind == MULTILABEL:
        # itertools.combinations emits subsets in lexicographic order
        return np.array([_mhot(spec.dim, s) for s in combinations(range(spec.dim), spec.m)])
    m = spec.m
    rows = []
    for p in permutations(range(m)):
        Y = np.zeros((m, m))
        Y[np.arange(m), p] = 1.0
        rows.append(Y.ravel())
    return np.array(rows)


# ------------------------------------------------------------- hull and loss

def hull_residual(spec: StructureSpec, y: np.ndarray) -> float:
    """Largest violation of the linear constraints describing conv(Y)."""
    y = np.asarray(y, dtype=float)
    box = max(float(np.max(-y)), float(np.max(y - 1.0)), 0.0)
    if spec.kind == MULTICLASS:
        eq = abs(float(y.sum()) - 1.0)
    elif spec.kind == MULTILABEL:
        eq = abs(float(y.sum()) - spec.m)
    else:
        Y = y.reshape(spec.m, spec.m)
        eq = max(float(np.max(np.abs(Y.sum(0) - 1))), float(np.max(np.abs(Y.sum(1) - 1))))
    return max(box, eq)


def check_hull(spec: StructureSpec, y: np.ndarray, tol: float = HULL_TOL) -> np.ndarray:
    """Validate hull membership and clamp tiny box violations.

    Raises:
        DomainError: if the residual exceeds ``tol``.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (spec.dim,):
        raise DomainError(f"expected vector of length {spec.dim}, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise DomainError("non-finite entries")
    res = hull_residual(spec, y)
    if res > tol:
        raise DomainError(f"point outside conv(Y): residual {res:.3e} > {tol:.1e}")
    return np.clip(y, 0.0, 1.0)


def self_loss(spec: StructureSpec, y_pred: np.ndarray, y_true: np.ndarray) -> float:
    """``<y_pred, V y_true + b> + c`` without any membership check."""
    return float(y_pred @ (spec.V @ y_true + spec.b) + spec.c)


def target_loss(spec: StructureSpec, y_pred: np.ndarray, y_true: int) -> float:
    """Affine target loss of a hull point against the true vertex.

    Multiclass: 0-1 loss; multilabel: Hamming distance / d; ranking:
    fraction of misplaced items.
    """
    y_pred = check_hull(spec, y_pred)
    y = embed(spec, y_true)
    if spec.kind == MULTICLASS:
        val = 1.0 - y_pred[y_true]
    elif spec.kind == MULTILABEL:
        val = 2.0 * (spec.m - float(y_pred @ y)) / spec.dim
    else:
        val = 1.0 - float(y_pred @ y) / spec.m
    return float(min(max(val, 0.0), 1.0))


def vertex_loss(spec: StructureSpec, v: int, y_true: int) -> float:
    """Target loss between two vertices given by id (no hull check needed)."""
    v, y_true = _check_id(spec, v), _check_id(spec, y_true)
    if v == y_true:
        return 0.0
    if spec.kind == MULTICLASS:
        return 1.0
    overlap = float(embed(spec, v) @ embed(spec, y_true))
    if spec.kind == MULTILABEL:
        return 2.0 * (spec.m - overlap) / spec.dim
    return 1.0 - overlap / spec.m


def second_moment_uniform(spec: StructureSpec) -> np.ndarray:
    """E[y y^T] for y uniform over the vertices, in closed form."""
    d = spec.dim
    if spec.kind == MULTICLASS:
        return np.eye(d) / d
    if spec.kind == MULTILABEL:
        m = spec.m
        off = m * (m - 1) / (d * (d - 1))
        Q = np.full((d, d), off)
        np.fill_diagonal(Q, m / d)
        return Q
    m = spec.m
    idx = np.arange(d)
    r, c = idx // m, idx % m
    same_r = r[:, None] == r[None, :]
    same_c = c[:, None] == c[None, :]
    Q = np.full((d, d), 1.0 / (m * (m - 1)))
    Q[same_r | same_c] = 0.0
    Q[same_r & same_c] = 1.0 / m
    return Q


def uniform_mean(spec: StructureSpec) -> np.ndarray:
    """Mean of the uniform distribution over the vertices."""
    if spec.kind == RANKING:
        return np.full(spec.dim, 1.0 / spec.m)
    return np.full(spec.dim, spec.m / spec.dim)


# ----------------------------------------------------------- oracles, sampling

def lmo(spec: StructureSpec, direction: np.ndarray) -> int:
    """Vertex maximizing ``<direction, y>``; ties go to the smallest id."""
    g = np.asarray(direction, dtype=float)
    if g.shape != (spec.dim,) or not np.all(np.isfinite(g)):
        raise DomainError("direction must be a finite vector of the embedding dimension")
    if spec.kind == MULTICLASS:
        return int(np.argmax(g))
    if spec.kind == MULTILABEL:
        # stable sort keeps lower indices first on ties -> smallest rank
        top = np.sort(np.argsort(-g, kind="stable")[: spec.m])
        return subset_rank(top, spec.dim)
    perm = max_weight_assignment(g.reshape(spec.m, spec.m))
    return perm_rank(perm)


def nearest_vertex(spec: StructureSpec, y: np.ndarray) -> tuple[int, float]:
    """Closest vertex to a hull point in the structure's norm.

    For all three spaces the distance to a vertex is a decreasing affine
    function of ``<y, vertex>`` on the hull, so the linear oracle applies.
    """
    y = check_hull(spec, y)
    v = lmo(spec, y)
    dist = float(np.linalg.norm(embed(spec, v) - y, ord=spec.norm_ord))
    return v, dist


def sample_uniform(spec: StructureSpec, rng: np.random.Generator) -> int:
    if spec.kind == MULTICLASS:
        return int(rng.integers(spec.dim))
    if spec.kind == MULTILABEL:
        return subset_rank(rng.choice(spec.dim, size=spec.m, replace=False), spec.dim)
    return perm_rank(rng.permutation(spec.m))
