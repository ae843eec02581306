"""Round loop, repetitions and output files.

Seeds: the master seed feeds ``numpy.random.SeedSequence``; repetition ``k``
uses child ``k`` of ``SeedSequence(seed).spawn(repetitions)``, whose
``generate_state(3)`` words seed the data stream, the decoder and the
delay generator respectively.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import decoding as dc
from .. import delay as dl
from .. import envs
from .. import estimators as es
from .. import fy_loss as fy
from .. import learners as ln
from .. import structures as st
from ..errors import ConfigError, InvariantViolation, NumericError
from ..numerics import frob_sq, project_frobenius_ball
from .config import BANDIT, FULL, THEORY, ExperimentConfig

ASSUMPTION_TOL = 1e-9
N_RANDOM_COMPARATORS = 20


# ------------------------------------------------------------------ builders

def build_stream(cfg: ExperimentConfig, seed: int) -> envs.LabeledStream:
    if cfg.stream == "multiclass":
        return envs.synth_multiclass(cfg.K, cfg.n_prime, cfg.r, cfg.T, seed)
    if cfg.stream == "multilabel":
        return envs.synth_multilabel(cfg.d, cfg.m, cfg.n, cfg.T, seed, cfg.length, cfg.normalize)
    if cfg.stream == "separable":
        spec = st.make_spec(cfg.structure, cfg.d, cfg.m)
        return envs.separable_stream(spec, cfg.n, cfg.margin, cfg.T, seed, cfg.B)
    if cfg.stream == "mnist":
        if not cfg.images or not cfg.labels:
            raise ConfigError("mnist stream needs images and labels paths")
        return envs.mnist_stream(cfg.images, cfg.labels, cfg.T, seed)
    raise ConfigError(f"unknown stream {cfg.stream!r}")


def build_regularizer(cfg: ExperimentConfig, spec: st.StructureSpec) -> fy.Regularizer:
    return fy.regularizer_for(spec, base=cfg.base, zeta=cfg.zeta)


def exploration_rate(cfg: ExperimentConfig, spec: st.StructureSpec, rx: float) -> float:
    """Exploration rate for the configured policy.

    The theory policy checks the horizon condition under which its formula
    is a probability and raises ConfigError otherwise.
    """
    if cfg.mode == FULL:
        return 0.0
    if cfg.q_policy != THEORY:
        return cfg.q
    B, T, K = cfg.B, cfg.T, spec.card
    if T <= 0:
        return 0.0
    if cfg.estimator == es.INVERSE_WEIGHTED:
        if T < B * B * K:
            raise ConfigError(f"theory q = B sqrt(K/T) needs T >= B^2 K = {B * B * K:g}, got T={T}")
        return B * math.sqrt(K / T)
    omega = es.omega_bound(spec)
    D = cfg.effective_D() if cfg.delay == dl.FIXED else 0
    if D > 0:
        q = (omega * B * B * rx * rx * D / T) ** (1.0 / 3.0)
    else:
        q = (4.0 * omega * B * B * rx * rx / T) ** (1.0 / 3.0)
    if q > 1.0:
        raise ConfigError(f"theory q = {q:.4g} exceeds 1: horizon T={T} too short for "
                          f"omega={omega:g}, B={B:g}, R_X={rx:g}")
    return q


def build_learner(cfg: ExperimentConfig, shape: tuple[int, int], profile: dl.DelayProfile,
                  rx: float, ry: float) -> ln.Learner:
    return ln.make_learner(
        cfg.learner, shape, cfg.B, cfg.effective_D(), project=cfg.project,
        R=cfg.R if cfg.R > 0 else None, tau_star=profile.tau_star, rx=rx, ry=ry,
        alpha=cfg.alpha if cfg.alpha > 0 else None,
    )


# -------------------------------------------------------------- comparators

def batch_fy_loss(reg: fy.Regularizer, spec: st.StructureSpec, Theta: np.ndarray,
                  y: int) -> np.ndarray:
    """Surrogate loss of each row of ``Theta`` against the same label."""
    if reg.kind == fy.NEGENT_SIMPLEX:
        z = Theta * math.log(reg.base)
        mx = z.max(axis=1, keepdims=True)
        lse = (mx[:, 0] + np.log(np.exp(z - mx).sum(axis=1))) / math.log(reg.base)
        return np.maximum(lse - Theta[:, y], 0.0)
    out = np.empty(Theta.shape[0])
    for i, th in enumerate(Theta):
        yhat, _ = fy.regularized_prediction(reg, spec, th) if reg.kind != fy.SQ_L2_CAPPED \
            else (fy.capped_simplex_projection(th, spec.m), None)
        out[i] = fy.fy_loss_from_prediction(reg, spec, th, yhat, y)
    return out


def _batch_prediction(reg: fy.Regularizer, spec: st.StructureSpec, Theta: np.ndarray) -> np.ndarray:
    if reg.kind == fy.NEGENT_SIMPLEX:
        z = Theta * math.log(reg.base)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)
    if reg.kind == fy.SQ_L2_CAPPED:
        return np.array([fy.capped_simplex_projection(th, spec.m) for th in Theta])
    return np.array([fy.regularized_prediction(reg, spec, th)[0] for th in Theta])


def fit_comparator(reg: fy.Regularizer, stream: envs.LabeledStream, B: float,
                   iters: int = 200) -> np.ndarray:
    """Offline estimator for the comparator column: projected gradient
    descent with step ``1/L`` on the average surrogate loss over the ball."""
    spec = stream.spec
    X = np.asarray(stream.X, dtype=float)
    Yv = np.array([st.embed(spec, v) for v in stream.Y]) if stream.T else np.zeros((0, spec.dim))
    W = np.zeros((spec.dim, stream.n))
    if stream.T == 0:
        return W
    # gradient Lipschitz bound of the averaged loss: ||X||_2^2 / (T lambda)
    L = float(np.linalg.norm(X, 2) ** 2) / (stream.T * reg.lambda_sc) + 1e-12
    step = 1.0 / L
    # Nesterov momentum on the ball
    V = W.copy()
    tk = 1.0
    for _ in range(iters):
        P = _batch_prediction(reg, spec, X @ V.T)
        grad = (P - Yv).T @ X / stream.T
        W_new = project_frobenius_ball(V - step * grad, B / 2.0)
        tk_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * tk * tk))
        V = W_new + ((tk - 1.0) / tk_new) * (W_new - W)
        W, tk = W_new, tk_new
    return W


def comparator_bank(cfg: ExperimentConfig, reg: fy.Regularizer, stream: envs.LabeledStream,
                    rng: np.random.Generator) -> tuple[list[str], np.ndarray]:
    """Named comparators stacked into a (k, d, n) array."""
    d, n = stream.spec.dim, stream.n
    names, mats = [], []
    wanted = [c.strip() for c in cfg.comparators.split(",") if c.strip()]
    if stream.comparator is not None:
        names.append("planted")
        mats.append(stream.comparator)
    if "zero" in wanted:
        names.append("zero")
        mats.append(np.zeros((d, n)))
    if "fit" in wanted:
        names.append("fit")
        mats.append(fit_comparator(reg, stream, cfg.B, cfg.fit_iters))
    if "random" in wanted:
        for i in range(N_RANDOM_COMPARATORS):
            G = rng.standard_normal((d, n))
            radius = (cfg.B / 2.0) * rng.random() ** (1.0 / (d * n))
            names.append(f"random{i}")
            mats.append(G * (radius / math.sqrt(frob_sq(G))))
    stack = np.array(mats) if mats else np.zeros((0, d, n))
    return names, stack


# ---------------------------------------------------------------- round loop

@dataclass
class _Pending:
    x: np.ndarray
    outcome: dc.DecodeOutcome
    y: int
    loss: float


@dataclass
class RepResult:
    """Everything one repetition produced."""

    columns: dict[str, np.ndarray]
    summary: dict[str, float]
    comparator_names: list[str]
    comparators: np.ndarray
    learner: ln.Learner
    # linear terms for regret certificates: sum <G_s, W_s>, sum G_s, sum ||G_s||^2
    lin_sum: float = 0.0
    grad_sum: np.ndarray | None = None
    grad_sq_sum: float = 0.0
    iterates: list[np.ndarray] = field(default_factory=list)
    grads: list[np.ndarray] = field(default_factory=list)
    # wall time is kept out of the summary so replays stay byte-identical
    seconds: float = 0.0


def _estimate(cfg: ExperimentConfig, spec: st.StructureSpec, p: _Pending) -> es.GradientEstimate:
    if cfg.mode == FULL:
        return es.exact_gradient(spec, p.outcome.prediction, p.x, p.y)
    if cfg.estimator == es.INVERSE_WEIGHTED:
        fb = es.BanditFeedback(es.INDICATOR, 1.0 if p.outcome.chosen == p.y else 0.0)
        return es.inverse_weighted(spec, p.outcome, p.x, fb)
    fb = es.BanditFeedback(es.LOSS_VALUE, p.loss)
    y_tilde = es.pseudo_inverse_label(spec, p.outcome, fb)
    return es.pseudo_inverse_gradient(p.outcome.prediction, p.x, y_tilde)


def rep_seeds(master: int, repetitions: int) -> list[tuple[int, int, int]]:
    children = np.random.SeedSequence(int(master)).spawn(repetitions)
    return [tuple(int(v) for v in c.generate_state(3, dtype=np.uint64)) for c in children]


def run_repetition(cfg: ExperimentConfig, rep: int = 0, stream: envs.LabeledStream | None = None,
                   keep_trajectory: bool = False) -> RepResult:
    """Execute the online protocol once.

    Args:
        cfg: validated configuration.
        rep: repetition index, selects the seed triple.
        stream: optional pre-built stream (otherwise generated from the seed).
        keep_trajectory: also store every played iterate and applied gradient.

    Raises:
        InvariantViolation: if the expected-loss assumption fails at a round.
        NumericError: re-raised with the failing round in the message.
    """
    s_stream, s_decode, s_delay = rep_seeds(cfg.seed, cfg.repetitions)[rep]
    if stream is None:
        stream = build_stream(cfg, s_stream)
    T = min(cfg.T, stream.T)
    spec = stream.spec
    reg = build_regularizer(cfg, spec)
    q = exploration_rate(cfg, spec, stream.rx)
    a = 1.0 - dc.decoding_factor(spec, reg)
    profile = cfg.delay_profile(s_delay)
    learner = build_learner(cfg, (spec.dim, stream.n), profile, stream.rx, spec.ry)
    rng = envs.make_rng(s_decode)
    names, comps = comparator_bank(cfg, reg, stream, rng)
    queue = dl.DelayQueue()
    played: dict[int, np.ndarray] = {}

    cols = {k: np.zeros(T) for k in ("loss", "exp_loss", "surrogate", "est_frob_sq", "step",
                                     "delivered", "q", "p")}
    cols["y"] = np.zeros(T, dtype=np.int64)
    cols["chosen"] = np.zeros(T, dtype=np.int64)
    comp_loss = np.zeros((T, len(names)))
    res = RepResult(cols, {}, names, comps, learner, grad_sum=np.zeros((spec.dim, stream.n)))
    step_key = "lambda" if cfg.learner == ln.KIND_ODAFTRL else "eta"
    t0 = time.perf_counter()
    for t in range(1, T + 1):
        x = np.asarray(stream.X[t - 1], dtype=float)
        y = int(stream.Y[t - 1])
        W = learner.predict(t)
        played[t] = W
        theta = W @ x
        try:
            out = dc.rdue_decode(spec, reg, theta, q, rng)
        except NumericError as exc:
            raise NumericError(f"round {t}: {exc}") from exc
        loss = st.vertex_loss(spec, out.chosen, y)
        exp_loss = dc.expected_target_loss(spec, out.dist, y)
        S = fy.fy_loss_from_prediction(reg, spec, theta, out.prediction, y)
        if cfg.check_assumption and exp_loss > (1.0 - a) * S + q + ASSUMPTION_TOL:
            raise InvariantViolation(
                f"round {t}: expected loss {exp_loss:.12g} > (1-a)S + q = {(1 - a) * S + q:.12g}")
        if len(names):
            comp_loss[t - 1] = batch_fy_loss(reg, spec, comps @ x, y)
        queue.push(dl.FeedbackEvent(t, t + profile.delay(t), _Pending(x, out, y, loss)))
        arrivals = []
        est_sq = 0.0
        for ev in queue.pop_due(t):
            g = _estimate(cfg, spec, ev.payload)
            W_s = played.pop(ev.origin)
            res.lin_sum += float(np.vdot(g.matrix, W_s))
            res.grad_sum += g.matrix
            res.grad_sq_sum += g.frob_sq
            if keep_trajectory:
                res.iterates.append(W_s)
                res.grads.append(g.matrix)
            est_sq += g.frob_sq
            arrivals.append((ev.origin, g))
        learner.update(t, arrivals)
        i = t - 1
        cols["loss"][i] = loss
        cols["exp_loss"][i] = exp_loss
        cols["surrogate"][i] = S
        cols["est_frob_sq"][i] = est_sq
        cols["step"][i] = learner.summary().get(step_key, math.nan)
        cols["delivered"][i] = len(arrivals)
        cols["q"][i] = q
        cols["p"][i] = out.p
        cols["y"][i] = y
        cols["chosen"][i] = out.chosen
    dropped = queue.shutdown()
    res.seconds = time.perf_counter() - t0

    cum_loss = np.cumsum(cols["loss"])
    cols["cum_loss"] = cum_loss
    cols["cum_exp_loss"] = np.cumsum(cols["exp_loss"])
    cols["cum_surrogate"] = np.cumsum(cols["surrogate"])
    cum_comp = np.cumsum(comp_loss, axis=0)
    final_comp = cum_comp[-1] if T else np.zeros(len(names))
    summary = {"T": float(T), "q": q, "a": a, "cum_loss": float(cum_loss[-1]) if T else 0.0,
               "cum_exp_loss": float(cols["cum_exp_loss"][-1]) if T else 0.0,
               "cum_surrogate": float(cols["cum_surrogate"][-1]) if T else 0.0,
               "pushed": float(queue.pushed), "delivered": float(queue.delivered),
               "dropped": float(len(dropped))}
    for j, nm in enumerate(names):
        if nm.startswith("random"):
            continue
        cols[f"comp_{nm}"] = comp_loss[:, j]
        cols[f"cum_comp_{nm}"] = cum_comp[:, j]
        cols[f"regret_{nm}"] = cum_loss - cum_comp[:, j]
        summary[f"cum_comp_{nm}"] = float(final_comp[j])
        summary[f"regret_{nm}"] = summary["cum_loss"] - float(final_comp[j])
    rnd = [j for j, nm in enumerate(names) if nm.startswith("random")]
    if rnd:
        best = rnd[int(np.argmin(final_comp[rnd]))]
        cols["comp_random_best"] = comp_loss[:, best]
        cols["cum_comp_random_best"] = cum_comp[:, best]
        cols["regret_random_best"] = cum_loss - cum_comp[:, best]
        summary["cum_comp_random_best"] = float(final_comp[best])
        summary["regret_random_best"] = summary["cum_loss"] - float(final_comp[best])
    # best available comparator (smallest cumulative surrogate) for headline regret
    if len(names):
        jb = int(np.argmin(final_comp))
        summary["regret_best"] = summary["cum_loss"] - float(final_comp[jb])
        summary["best_comparator"] = names[jb]  # type: ignore[assignment]
    res.columns = cols
    res.summary = summary
    return res


# -------------------------------------------------------------- file output

ROUND_COLUMNS = ("t", "y", "chosen", "loss", "exp_loss", "surrogate", "q", "p", "est_frob_sq",
                 "step", "delivered", "cum_loss", "cum_exp_loss", "cum_surrogate")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return f"{float(v):.17g}"


def write_round_csv(path: Path, res: RepResult) -> None:
    cols = res.columns
    T = len(cols["loss"])
    extra = sorted(k for k in cols if k.startswith(("comp_", "cum_comp_", "regret_")))
    header = list(ROUND_COLUMNS) + extra
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(T):
            row = [i + 1] + [cols[k][i] for k in header[1:]]
            w.writerow([_fmt(v) for v in row])


@dataclass
class RunResult:
    config: ExperimentConfig
    reps: list[RepResult]

    def mean(self, key: str) -> float:
        return float(np.mean([r.summary[key] for r in self.reps]))

    def std(self, key: str) -> float:
        return float(np.std([r.summary[key] for r in self.reps], ddof=1)) if len(self.reps) > 1 else 0.0


def _run_rep_worker(args):
    cfg, rep = args
    res = run_repetition(cfg, rep)
    res.learner = None  # learners can hold large state; not needed across processes
    return res


def run(cfg: ExperimentConfig, out_dir: str | Path | None = None,
        write: bool = True) -> RunResult:
    """All repetitions of one configuration, optionally written to disk.

    Files: ``rep<k>_rounds.csv`` per repetition, ``summary.csv`` (one row per
    repetition plus mean and std rows) and ``plot.csv`` (mean cumulative
    loss and regret at 100 evenly spaced rounds).
    """
    cfg = cfg.validate()
    jobs = [(cfg, k) for k in range(cfg.repetitions)]
    if cfg.threads > 1 and cfg.repetitions > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            reps = list(pool.map(_run_rep_worker, jobs))
    else:
        reps = [run_repetition(cfg, k) for k in range(cfg.repetitions)]
    result = RunResult(cfg, reps)
    if write:
        write_run(result, Path(out_dir if out_dir is not None else cfg.out) / cfg.name)
    return result


def summary_rows(result: RunResult) -> tuple[list[str], list[list[str]]]:
    keys = sorted({k for r in result.reps for k, v in r.summary.items() if not isinstance(v, str)})
    header = ["config", "repetition"] + keys
    rows = []
    for k, r in enumerate(result.reps):
        rows.append([result.config.name, str(k)] + [_fmt(r.summary.get(key, math.nan)) for key in keys])
    return header, rows


def write_run(result: RunResult, path: Path) -> None:
    path.mkdir(parents=True, exist_ok=True)
    result.config.write(path / "config.ini")
    if result.config.round_csv:
        for k, r in enumerate(result.reps):
            write_round_csv(path / f"rep{k}_rounds.csv", r)
    header, rows = summary_rows(result)
    keys = header[2:]
    with open(path / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
        vals = np.array([[r.summary.get(k, math.nan) for k in keys] for r in result.reps], dtype=float)
        w.writerow([result.config.name, "mean"] + [_fmt(v) for v in vals.mean(axis=0)])
        sd = vals.std(axis=0, ddof=1) if len(result.reps) > 1 else np.zeros(len(keys))
        w.writerow([result.config.name, "std"] + [_fmt(v) for v in sd])
    write_plot_csv(result, path / "plot.csv")
    with open(path / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["repetition", "seconds"])
        w.writerows([[k, f"{r.seconds:.3f}"] for k, r in enumerate(result.reps)])


def write_plot_csv(result: RunResult, path: Path, points: int = 100) -> None:
    T = len(result.reps[0].columns["loss"]) if result.reps else 0
    idx = sorted({max(1, round(T * (i + 1) / points)) for i in range(points)}) if T else []
    keys = [k for k in result.reps[0].columns if k.startswith(("cum_", "regret_"))] if T else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"mean_{k}" for k in keys] + [f"std_{k}" for k in keys])
        for t in idx:
            vals = np.array([[r.columns[k][t - 1] for k in keys] for r in result.reps])
            sd = vals.std(axis=0, ddof=1) if len(result.reps) > 1 else np.zeros(len(keys))
            w.writerow([str(t)] + [_fmt(v) for v in vals.mean(axis=0)] + [_fmt(v) for v in sd])


def sweep(configs: list[ExperimentConfig], out_dir: str | Path, axes: list[str] | None = None
          ) -> list[list[str]]:
    """Run every config; write ``sweep.csv`` (one row per config and
    repetition) and ``sweep_means.csv`` (one row per config)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    axes = axes or []
    all_rows: list[list[str]] = []
    header: list[str] | None = None
    means = []
    for cfg in configs:
        res = run(cfg, out)
        h, rows = summary_rows(res)
        if header is None:
            header = h
        elif h != header:
            raise ConfigError(f"config {cfg.name} produced a different summary schema")
        ax = [_fmt(getattr(cfg, a)) for a in axes]
        all_rows.extend([r[:1] + ax + r[1:] for r in rows])
        keys = h[2:]
        means.append([cfg.name] + ax + [_fmt(res.mean(k)) for k in keys]
                     + [_fmt(res.std(k)) for k in keys])
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        if header is not None:
            w.writerow(header[:1] + axes + header[1:])
        w.writerows(all_rows)
    with open(out / "sweep_means.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        if header is not None:
            keys = header[2:]
            w.writerow(["config"] + axes + [f"mean_{k}" for k in keys] + [f"std_{k}" for k in keys])
        w.writerows(means)
    return all_rows
