"""Data sources.

All generators use ``numpy.random.Generator(numpy.random.Philox(seed))`` so a
seed fully determines the stream. Streams are materialized upfront and never
see the learner, which makes the adversary oblivious by construction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import structures as st
from .errors import ConfigError, FormatError
from .structures import StructureSpec

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801
MAX_REJECTIONS = 1_000_000


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(eq=False)
class LabeledStream:
    """A finite sequence of inputs and true vertices.

    Attributes:
        spec: output space of the labels.
        X: (T, n) inputs.
        Y: (T,) vertex ids.
        rx: declared bound on ``||x_t||_2``.
        comparator: optional planted estimator ``U*`` of shape (d, n).
        name: short label used in output files.
    """

    spec: StructureSpec
    X: np.ndarray
    Y: np.ndarray
    rx: float
    comparator: np.ndarray | None = None
    name: str = ""

    @property
    def n(self) -> int:
        return int(self.X.shape[1])

    @property
    def T(self) -> int:
        return int(self.X.shape[0])

    def __len__(self) -> int:
        return self.T

    def __iter__(self):
        for t in range(self.T):
            yield np.asarray(self.X[t], dtype=float), int(self.Y[t])

    def truncate(self, T: int) -> "LabeledStream":
        return LabeledStream(self.spec, self.X[:T], self.Y[:T], self.rx, self.comparator, self.name)


# ---------------------------------------------------------------- multiclass

def synth_multiclass(K: int, n_prime: int, r: float, T: int, seed: int) -> LabeledStream:
    """Binary inputs made of a class signature and label-independent noise.

    Each class owns a distinct signature of length ``10 n'`` with between
    ``n'`` and ``5 n'`` ones. An input concatenates the signature of a
    uniformly drawn class with ``30 n'`` noise bits of which exactly ``5 n'``
    are set. With probability ``r`` the label is replaced by a uniform class.
    """
    if K < 2 or n_prime < 1 or not 0.0 <= r <= 1.0 or T < 0:
        raise ConfigError(f"bad multiclass parameters K={K}, n'={n_prime}, r={r}, T={T}")
    rng = make_rng(seed)
    sig_len, noise_len, noise_ones = 10 * n_prime, 30 * n_prime, 5 * n_prime
    sigs: list[np.ndarray] = []
    seen: set[bytes] = set()
    for _ in range(MAX_REJECTIONS):
        if len(sigs) == K:
            break
        s = int(rng.integers(n_prime, 5 * n_prime + 1))
        v = np.zeros(sig_len, dtype=np.uint8)
        v[rng.choice(sig_len, size=s, replace=False)] = 1
        key = v.tobytes()
        if key not in seen:
            seen.add(key)
            sigs.append(v)
    else:
        raise ConfigError(f"could not draw {K} distinct signatures of length {sig_len}")
    S = np.array(sigs)
    cls = rng.integers(0, K, size=T)
    X = np.zeros((T, sig_len + noise_len))
    X[:, :sig_len] = S[cls]
    for t in range(T):
        X[t, sig_len + rng.choice(noise_len, size=noise_ones, replace=False)] = 1.0
    flip = rng.random(T) < r
    Y = np.where(flip, rng.integers(0, K, size=T), cls)
    rx = math.sqrt(10 * n_prime)
    return LabeledStream(st.multiclass(K), X, Y.astype(np.int64), rx, name=f"multiclass_K{K}")


# ---------------------------------------------------------------- multilabel

def synth_multilabel(d: int, m: int, n: int, T: int, seed: int, length: int = 50,
                     normalize: bool = True) -> LabeledStream:
    """Bag-of-words multilabel data with exactly ``m`` relevant labels.

    Labels have random prior weights and each label has a random word
    distribution over ``n`` features. A sample draws a Poisson(m) label
    count, keeps it only if it equals ``m``, picks that many distinct labels
    by prior weight, then draws a Poisson(``length``) document from the
    uniform mixture of the chosen labels' word distributions. Features are
    word counts, optionally scaled to unit l2 norm.

    Raises:
        ConfigError: if ``MAX_REJECTIONS`` draws fail to produce ``T`` samples.
    """
    if not 1 <= m <= d - 1 or n < 1 or T < 0:
        raise ConfigError(f"bad multilabel parameters d={d}, m={m}, n={n}, T={T}")
    spec = st.multilabel(d, m)
    rng = make_rng(seed)
    prior = rng.random(d)
    prior /= prior.sum()
    words = rng.random((d, n))
    words /= words.sum(axis=1, keepdims=True)
    X = np.zeros((T, n))
    Y = np.zeros(T, dtype=np.int64)
    t, attempts = 0, 0
    while t < T:
        attempts += 1
        if attempts > MAX_REJECTIONS:
            raise ConfigError(f"multilabel rejection sampling exhausted after {MAX_REJECTIONS} draws")
        if int(rng.poisson(m)) != m:
            continue
        labels = np.sort(rng.choice(d, size=m, replace=False, p=prior))
        k = int(rng.poisson(length))
        if k == 0:
            continue
        mix = words[labels].mean(axis=0)
        x = np.bincount(rng.choice(n, size=k, p=mix), minlength=n).astype(float)
        if normalize:
            x /= np.linalg.norm(x)
        X[t] = x
        ext = np.zeros(d)
        ext[labels] = 1.0
        Y[t] = st.ingest_labels(spec, ext)
        t += 1
    rx = 1.0 if normalize else float(np.max(np.linalg.norm(X, axis=1), initial=0.0))
    return LabeledStream(spec, X, Y, rx, name=f"multilabel_d{d}_m{m}")


# ----------------------------------------------------------------- separable

def _vertex_gap(spec: StructureSpec) -> float:
    """``||y||^2 - max_{v != y} <y, v>`` (same for every vertex)."""
    return 2.0 if spec.kind == st.RANKING else 1.0


def separable_stream(spec: StructureSpec, n: int, margin: float, T: int, seed: int,
                     B: float = 10.0) -> LabeledStream:
    """Linearly separable stream with a planted comparator.

    ``U* = c O^T`` has orthonormal-row structure with ``||U*||_F = B/2``.
    Each input is ``O u + v`` where ``u`` points along the centered
    embedding of a uniform vertex and ``v`` is noise orthogonal to the
    columns of ``O``, so the true vertex beats every other vertex by exactly
    ``margin`` in score under ``U*`` and ``||x_t|| <= 1``.

    Raises:
        ConfigError: if ``n <= d`` or the margin needs ``||x|| > 1``.
    """
    d = spec.dim
    if not margin > 0:
        raise ConfigError(f"margin must be positive, got {margin}")
    if n <= d:
        raise ConfigError(f"separable stream needs n > d ({n} <= {d})")
    rng = make_rng(seed)
    O, _ = np.linalg.qr(rng.standard_normal((n, d)))
    c = (B / 2.0) / math.sqrt(d)
    U = c * O.T
    ybar = st.uniform_mean(spec)
    # all vertices are equidistant from the uniform mean
    radius = float(np.linalg.norm(st.embed(spec, 0) - ybar))
    rho = margin * radius / (c * _vertex_gap(spec))
    if rho > 1.0:
        raise ConfigError(f"margin {margin} unreachable with B={B}: needs ||x|| = {rho:.3f} > 1")
    proj = np.eye(n) - O @ O.T
    X = np.zeros((T, n))
    Y = np.zeros(T, dtype=np.int64)
    for t in range(T):
        v = st.sample_uniform(spec, rng)
        u = rho * (st.embed(spec, v) - ybar) / radius
        noise = proj @ rng.standard_normal(n)
        nn = np.linalg.norm(noise)
        scale = math.sqrt(max(1.0 - rho * rho, 0.0)) * float(rng.random())
        noise = noise * (scale / nn) if nn > 0 else noise
        X[t] = O @ u + noise
        Y[t] = v
    return LabeledStream(spec, X, Y, 1.0, comparator=U, name=f"separable_{spec.kind}_d{d}")


# --------------------------------------------------------------------- MNIST

def _read_idx(path: Path, magic: int, ndim: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes, need {header})")
    got = int.from_bytes(raw[0:4], "big")
    if got != magic:
        raise FormatError(f"{path}: magic {got:#010x} at offset 0, expected {magic:#010x}")
    dims = [int.from_bytes(raw[4 + 4 * i: 8 + 4 * i], "big") for i in range(ndim)]
    need = header + int(np.prod(dims))
    if len(raw) < need:
        raise FormatError(f"{path}: truncated payload, {len(raw)} bytes but header at offset 4 "
                          f"declares dims {dims} needing {need}")
    return np.frombuffer(raw, dtype=np.uint8, count=need - header, offset=header).reshape(dims)


def load_mnist(images: str | Path, labels: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Parse an IDX image/label pair into (N, 784) floats in [0,1] and labels."""
    imgs = _read_idx(Path(images), IDX_IMAGES, 3)
    labs = _read_idx(Path(labels), IDX_LABELS, 1)
    if imgs.shape[0] != labs.shape[0]:
        raise FormatError(f"image count {imgs.shape[0]} (offset 4 of {images}) != "
                          f"label count {labs.shape[0]} (offset 4 of {labels})")
    if labs.size and int(labs.max()) > 9:
        raise FormatError(f"{labels}: label value {int(labs.max())} outside 0..9")
    X = imgs.reshape(imgs.shape[0], -1).astype(np.float32) / 255.0
    return X, labs.astype(np.int64)


def mnist_stream(images: str | Path, labels: str | Path, T: int, seed: int) -> LabeledStream:
    """Seeded shuffle of an MNIST split truncated to ``T`` rounds."""
    X, Y = load_mnist(images, labels)
    order = make_rng(seed).permutation(X.shape[0])[:T]
    Xs = X[order]
    rx = float(np.max(np.linalg.norm(Xs, axis=1), initial=0.0))
    return LabeledStream(st.multiclass(10), Xs, Y[order], rx, name="mnist")


def write_idx(path: str | Path, array: np.ndarray, magic: int) -> None:
    """Write a uint8 array in IDX format (used to build fixtures)."""
    a = np.asarray(array, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(int(magic).to_bytes(4, "big"))
        for s in a.shape:
            fh.write(int(s).to_bytes(4, "big"))
        fh.write(a.tobytes())


def dump_csv(stream: LabeledStream, path: str | Path) -> None:
    """One row per round: the input coordinates then the vertex id."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(stream.n)] + ["y"])
        for t in range(stream.T):
            w.writerow([f"{v:.17g}" for v in stream.X[t]] + [int(stream.Y[t])])
