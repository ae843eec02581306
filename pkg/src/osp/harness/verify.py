"""Property suites run by ``osp verify``.

Each suite returns a list of :class:`Check` records with the measured slack
(the distance to the failing side of the inequality; negative means a
violation). Everything is exact enumeration or deterministic seeded sampling,
so results do not depend on the seed beyond the sampled test points.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .. import decoding as dc
from .. import delay as dl
from .. import envs
from .. import estimators as es
from .. import fy_loss as fy
from .. import learners as ln
from .. import structures as st
from ..numerics import frob, frob_sq, penrose_residuals, pinv, project_frobenius_ball
from ..structures import StructureSpec


@dataclass
class Check:
    suite: str
    name: str
    passed: bool
    slack: float
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.suite}.{self.name}: slack={self.slack:.3e} {self.detail}".rstrip()


def _check(suite: str, name: str, slack: float, detail: str = "") -> Check:
    return Check(suite, name, bool(slack >= 0.0), float(slack), detail)


def verify_specs() -> list[StructureSpec]:
    out = [st.multiclass(d) for d in (2, 3, 4, 5, 6)]
    out += [st.multilabel(d, m) for d in (3, 4, 5, 6) for m in range(1, d)]
    out += [st.ranking(m) for m in (2, 3, 4)]
    return out


def _label(spec: StructureSpec) -> str:
    return f"{spec.kind}(d={spec.dim},m={spec.m})"


# ---------------------------------------------------------------- structures

def check_self_identity(spec: StructureSpec) -> float:
    """Largest gap between the combinatorial loss and the SELF form on all pairs."""
    V = st.enumerate_vertices(spec)
    worst = 0.0
    for j in range(len(V)):
        yj = V[j]
        for i in range(len(V)):
            if spec.kind == st.MULTICLASS:
                comb = float(i != j)
            elif spec.kind == st.MULTILABEL:
                comb = float(np.sum(V[i] != yj)) / spec.dim
            else:
                comb = 1.0 - float(V[i] @ yj) / spec.m
            worst = max(worst, abs(comb - st.self_loss(spec, V[i], yj)))
    return worst


def suite_structures(specs=None) -> list[Check]:
    out = []
    for spec in specs or verify_specs():
        lab = _label(spec)
        V = st.enumerate_vertices(spec)
        K = len(V)
        diff = V[:, None, :] - V[None, :, :]
        D = np.linalg.norm(diff, ord=spec.norm_ord, axis=2)
        L = np.array([[st.self_loss(spec, V[i], V[j]) for j in range(K)] for i in range(K)])
        off = ~np.eye(K, dtype=bool)
        out.append(_check("structures", f"nu {lab}", 1e-12 - abs(D[off].min() - spec.nu)))
        sep = min(float(L[off].min()), 1e-12 - float(np.abs(L[~off]).max()))
        out.append(_check("structures", f"loss-zero-iff-equal {lab}", sep))
        out.append(_check("structures", f"lipschitz {lab}", float(np.min(spec.gamma * D - L)) + 1e-12))
        out.append(_check("structures", f"loss-le-1 {lab}", float(1.0 - L.max()) + 1e-12))
        out.append(_check("structures", f"inner-le-1 {lab}",
                          float(1.0 - np.abs(V @ spec.V @ V.T).max()) + 1e-12))
        out.append(_check("structures", f"self-identity {lab}", 1e-12 - check_self_identity(spec)))
        Q = st.second_moment_uniform(spec)
        out.append(_check("structures", f"second-moment {lab}",
                          1e-12 - float(np.abs(Q - V.T @ V / K).max())))
        rng = np.random.default_rng(spec.dim * 31 + spec.m)
        worst = 0.0
        for _ in range(30):
            g = rng.normal(size=spec.dim)
            s = V @ g
            worst = max(worst, float(s.max() - s[st.lmo(spec, g)]))
            y = rng.dirichlet(np.ones(K)) @ V
            v, dist = st.nearest_vertex(spec, y)
            dists = np.linalg.norm(V - y, ord=spec.norm_ord, axis=1)
            worst = max(worst, abs(dist - dists.min()), abs(dists[v] - dists.min()))
        out.append(_check("structures", f"oracles-vs-enumeration {lab}", 1e-10 - worst))
    return out


# ------------------------------------------------------------------ fy_loss

def _random_theta(rng, spec, scale=2.0):
    return rng.normal(size=spec.dim) * scale * rng.random()


def suite_fy_loss(specs=None, draws: int = 1000, fd_points: int = 100) -> list[Check]:
    out = []
    for spec in specs or [st.multiclass(4), st.multilabel(5, 2), st.multilabel(6, 4), st.ranking(3)]:
        lab = _label(spec)
        reg = fy.regularizer_for(spec)
        rng = np.random.default_rng(7 + spec.dim)
        rx = 1.0
        b = 2.0 * rx * rx * spec.kappa**2 / reg.lambda_sc
        s_nonneg = s_sep = s_smooth = s_cert = math.inf
        for _ in range(draws):
            x = rng.normal(size=3)
            x *= rx / np.linalg.norm(x)
            W = rng.normal(size=(spec.dim, 3)) * 2.0
            theta = W @ x
            y = int(rng.integers(spec.card))
            yhat, cert = fy.regularized_prediction(reg, spec, theta)
            S = fy.fy_loss_from_prediction(reg, spec, theta, yhat, y)
            yv = st.embed(spec, y)
            s_nonneg = min(s_nonneg, S)
            s_sep = min(s_sep, S - 0.5 * reg.lambda_sc * np.linalg.norm(yv - yhat, ord=spec.norm_ord) ** 2 + 1e-8)
            G = fy.surrogate_gradient(spec, yhat, x, y)
            s_smooth = min(s_smooth, b * S - frob_sq(G) + 1e-10)
            s_cert = min(s_cert, 1e-7 - float(np.linalg.norm(cert.mean - yhat)))
        out += [_check("fy_loss", f"nonnegative {lab}", s_nonneg),
                _check("fy_loss", f"separation {lab}", s_sep),
                _check("fy_loss", f"gradient-smoothness {lab}", s_smooth),
                _check("fy_loss", f"certificate-mean {lab}", s_cert)]
        worst = 0.0
        h = 1e-5
        for _ in range(fd_points):
            theta = _random_theta(rng, spec)
            y = int(rng.integers(spec.card))
            yhat, _ = fy.regularized_prediction(reg, spec, theta)
            grad = yhat - st.embed(spec, y)
            fd = np.zeros(spec.dim)
            for i in range(spec.dim):
                e = np.zeros(spec.dim)
                e[i] = h
                fd[i] = (fy.fy_loss(reg, spec, theta + e, y) - fy.fy_loss(reg, spec, theta - e, y)) / (2 * h)
            rel = float(np.linalg.norm(fd - grad) / max(1.0, np.linalg.norm(grad)))
            worst = max(worst, rel)
        out.append(_check("fy_loss", f"finite-difference {lab}", 1e-4 - worst))
    return out


# ----------------------------------------------------------------- decoding

def _outcome_with(out: dc.DecodeOutcome, v: int) -> dc.DecodeOutcome:
    return replace(out, chosen=v, p_chosen=out.dist.mass(v))


def suite_decoding(draws: int = 100_000) -> list[Check]:
    out = []
    for spec in (st.multiclass(3), st.multilabel(4, 2), st.ranking(3)):
        lab = _label(spec)
        reg = fy.regularizer_for(spec)
        rng = np.random.default_rng(5)
        theta = rng.normal(size=spec.dim) * 0.7
        q = 0.2
        rng_d = np.random.default_rng(11)
        first = dc.rdue_decode(spec, reg, theta, q, rng_d)
        counts = np.zeros(spec.card)
        z_sum = np.zeros(spec.dim)
        z_cnt = 0
        rng_z = np.random.default_rng(12)
        # the prediction state is deterministic in theta, so only the random
        # branch of the decoder is replayed
        for _ in range(draws):
            v, _ = dc.draw_decision(spec, first.certificate, first.y_star, first.p, q, rng_d)
            counts[v] += 1
        for _ in range(draws):
            if rng_z.random() < first.p:
                z_sum += st.embed(spec, first.certificate.sample(rng_z))
                z_cnt += 1
        masses = np.array([first.dist.mass(v) for v in range(spec.card)])
        sigma = np.sqrt(masses * (1 - masses) / draws)
        slack = float(np.min(3 * sigma - np.abs(counts / draws - masses)))
        out.append(_check("decoding", f"empirical-law {lab}", slack))
        err = float(np.max(np.abs(z_sum / max(z_cnt, 1) - first.prediction)))
        out.append(_check("decoding", f"conditional-mean {lab}", 0.02 - err))
        out.append(_check("decoding", f"mass-floor {lab}", float(masses.min() - q / spec.card) + 1e-15))
        out.append(_check("decoding", f"mass-sum {lab}", 1e-10 - abs(masses.sum() - 1.0)))
    out += suite_lemmas()
    return out


def suite_lemmas(n_theta: int = 100) -> list[Check]:
    out = []
    for spec in (st.multiclass(2), st.multiclass(3), st.multiclass(5), st.multilabel(5, 2),
                 st.multilabel(4, 2), st.ranking(3)):
        for base in ((math.e, 2.0) if spec.kind == st.MULTICLASS else (math.e,)):
            reg = fy.regularizer_for(spec, base=base)
            rng = np.random.default_rng(101)
            factor = dc.decoding_factor(spec, reg)
            for q in (0.0, 0.1, 0.5, 1.0):
                worst = math.inf
                for _ in range(n_theta):
                    theta = _random_theta(rng, spec, 4.0)
                    y = int(rng.integers(spec.card))
                    o = dc.rdue_decode(spec, reg, theta, q, rng)
                    S = fy.fy_loss_from_prediction(reg, spec, theta, o.prediction, y)
                    EL = dc.expected_target_loss(spec, o.dist, y)
                    worst = min(worst, dc.rdue_bound(spec, reg, S, q) - EL)
                    if q == 0.0:
                        worst = min(worst, factor * S - EL)
                out.append(_check("decoding", f"lemma q={q} base={base:.3g} {_label(spec)}", worst + 1e-9))
    return out


# --------------------------------------------------------------- estimators

def exact_expectations(spec, reg, W, x, y, q):
    """Exact expectations of both estimators and their second moments."""
    rng = np.random.default_rng(0)
    out = dc.rdue_decode(spec, reg, W @ x, q, rng)
    G = np.outer(out.prediction - st.embed(spec, y), x)
    E_iw = np.zeros_like(G)
    E_pi = np.zeros_like(G)
    E_ytil = np.zeros(spec.dim)
    m2_iw = m2_pi = tr = 0.0
    for v in range(spec.card):
        mass = out.dist.mass(v)
        if mass == 0.0:
            continue
        o = _outcome_with(out, v)
        ind = es.BanditFeedback(es.INDICATOR, 1.0 if v == y else 0.0)
        g_iw = es.inverse_weighted(spec, o, x, ind)
        loss = st.target_loss(spec, st.embed(spec, v), y)
        ytil = es.pseudo_inverse_label(spec, o, es.BanditFeedback(es.LOSS_VALUE, loss))
        g_pi = es.pseudo_inverse_gradient(out.prediction, x, ytil)
        E_iw += mass * g_iw.matrix
        E_pi += mass * g_pi.matrix
        E_ytil += mass * ytil
        m2_iw += mass * g_iw.frob_sq
        m2_pi += mass * g_pi.frob_sq
        tr += mass * float(ytil @ ytil)
    S = fy.fy_loss_from_prediction(reg, spec, W @ x, out.prediction, y)
    return dict(G=G, E_iw=E_iw, E_pi=E_pi, E_ytil=E_ytil, m2_iw=m2_iw, m2_pi=m2_pi, trace=tr,
                S=S, outcome=out)


def suite_estimators(samples: int = 50) -> list[Check]:
    out = []
    for spec in (st.multiclass(2), st.multiclass(3), st.multiclass(5), st.multilabel(5, 2),
                 st.ranking(3)):
        lab = _label(spec)
        reg = fy.regularizer_for(spec)
        rng = np.random.default_rng(17)
        omega = es.omega_bound(spec)
        s_iw = s_pi = s_m2iw = s_m2pi = s_tr = math.inf
        for k in range(samples):
            n = 3
            W = rng.normal(size=(spec.dim, n))
            x = rng.normal(size=n)
            rx = float(np.linalg.norm(x))
            y = int(rng.integers(spec.card))
            q = (0.05, 0.3, 0.7, 1.0)[k % 4]
            r = exact_expectations(spec, reg, W, x, y, q)
            s_iw = min(s_iw, 1e-9 - float(np.abs(r["E_iw"] - r["G"]).max()))
            s_pi = min(s_pi, 1e-9 - float(np.abs(r["E_pi"] - r["G"]).max()))
            s_m2iw = min(s_m2iw, spec.card / q * frob_sq(r["G"]) - r["m2_iw"] + 1e-9)
            b = 2 * rx * rx * spec.kappa**2 / reg.lambda_sc
            s_m2pi = min(s_m2pi, 2 * b * r["S"] + 2 * rx * rx * omega / q - r["m2_pi"] + 1e-9)
            s_tr = min(s_tr, omega / q - r["trace"] + 1e-9)
        out += [_check("estimators", f"unbiased-inverse-weighted {lab}", s_iw),
                _check("estimators", f"unbiased-pseudo-inverse {lab}", s_pi),
                _check("estimators", f"second-moment-inverse-weighted {lab}", s_m2iw),
                _check("estimators", f"second-moment-pseudo-inverse {lab}", s_m2pi),
                _check("estimators", f"trace-bound {lab}", s_tr)]
    for spec in [s for s in verify_specs() if s.dim <= 8] + [st.multilabel(8, 3), st.multilabel(8, 4)]:
        out.append(_check("estimators", f"omega {_label(spec)}",
                          es.omega_bound(spec) - es.omega_exact(spec) + 1e-9))
    return out


# ----------------------------------------------------------------- numerics

def suite_numerics(count: int = 100) -> list[Check]:
    rng = np.random.default_rng(23)
    worst = -math.inf
    for k in range(count):
        n = int(rng.integers(1, 37))
        r = int(rng.integers(1, n + 1))
        F = rng.normal(size=(n, r))
        A = F @ F.T
        P = pinv(A)
        smax = float(np.linalg.norm(A, 2))
        worst = max(worst, max(penrose_residuals(A, P)) / max(smax, 1e-300))
    out = [_check("numerics", "penrose-axioms", 1e-8 - worst)]
    s = math.inf
    for _ in range(count):
        X, Y = rng.normal(size=(4, 5)) * 3, rng.normal(size=(4, 5)) * 3
        rad = float(rng.random() * 5 + 0.1)
        s = min(s, frob(X - Y) - frob(project_frobenius_ball(X, rad) - project_frobenius_ball(Y, rad)) + 1e-12)
    out.append(_check("numerics", "projection-nonexpansive", s))
    return out


# ----------------------------------------------------------------- learners

def _grad_stream(T: int, shape, seed: int):
    rng = np.random.default_rng(seed)
    return [rng.normal(size=shape) * rng.random() for _ in range(T)]


def ogd_certificate_slack(B: float, lin_sum: float, grad_sum: np.ndarray, grad_sq: float,
                          comparators) -> float:
    """min over U of ``sqrt(2) B sqrt(sum ||G||^2) - sum <G_t, W_t - U>``."""
    bound = math.sqrt(2.0) * B * math.sqrt(grad_sq)
    return min(bound - (lin_sum - float(np.vdot(grad_sum, U))) for U in comparators)


def random_ball_points(rng, shape, radius: float, count: int = 20):
    pts = []
    for _ in range(count):
        G = rng.normal(size=shape)
        pts.append(G * (radius * rng.random() ** (1.0 / G.size) / frob(G)))
    return pts


def suite_learners(T: int = 1000) -> list[Check]:
    shape = (3, 4)
    B = 4.0
    out = []
    grads = _grad_stream(T, shape, 1)
    # feasibility and the OGD certificate
    ogd = ln.AdaptiveOGD(shape, B)
    lin, gsum, gsq, feas = 0.0, np.zeros(shape), 0.0, math.inf
    for t, G in enumerate(grads, 1):
        W = ogd.predict(t)
        feas = min(feas, B / 2 + 1e-9 - frob(W))
        lin += float(np.vdot(G, W))
        gsum += G
        gsq += frob_sq(G)
        ogd.update(t, [(t, G)])
    rng = np.random.default_rng(2)
    comps = [np.zeros(shape)] + random_ball_points(rng, shape, B / 2)
    out.append(_check("learners", "ogd-feasible", feas))
    out.append(_check("learners", "ogd-regret-certificate", ogd_certificate_slack(B, lin, gsum, gsq, comps)))
    # BOLD(D=0) and SOLID(no delay) against OGD
    bold, solid, ref = ln.BOLD(shape, B, 0), ln.SOLID(shape, B), ln.AdaptiveOGD(shape, B)
    same_b = same_s = True
    for t, G in enumerate(grads, 1):
        Wr, Wb, Ws = ref.predict(t), bold.predict(t), solid.predict(t)
        same_b &= np.array_equal(Wr, Wb)
        same_s &= np.array_equal(Wr, Ws)
        for lr in (ref, bold, solid):
            lr.update(t, [(t, G)])
    out.append(_check("learners", "bold-d0-equals-ogd", 0.0 if same_b else -1.0))
    out.append(_check("learners", "solid-no-delay-equals-ogd", 0.0 if same_s else -1.0))
    # ODAFTRL structure under several delays
    for D in (0, 1, 5):
        od = ln.ODAFTRL(shape, B, D)
        feas = math.inf
        for t in range(1, T + 1):
            feas = min(feas, B / 2 + 1e-9 - frob(od.predict(t)))
            od.update(t, [(t - D, grads[t - D - 1])] if t - D >= 1 else [])
        d_min = min(od.deltas) if od.deltas else 0.0
        mono = float(np.min(np.diff(od.lambdas))) if len(od.lambdas) > 1 else 0.0
        out += [_check("learners", f"odaftrl-delta-nonneg D={D}", d_min),
                _check("learners", f"odaftrl-lambda-monotone D={D}", mono),
                _check("learners", f"odaftrl-feasible D={D}", feas)]
    # once lambda is positive each iterate is the closed-form FTRL minimizer
    # with the freshest weight
    od = ln.ODAFTRL(shape, B, 0)
    od.lam = 0.7
    od.delta_sum = 0.7 * od.alpha
    worst = 0.0
    gs = np.zeros(shape)
    for t in range(1, 51):
        G = grads[t - 1]
        od.predict(t)
        od.update(t, [(t, G)])
        gs += G
        worst = max(worst, frob(od.W - project_frobenius_ball(-gs / od.lam, B / 2)))
        if od.lam <= 0:
            worst = math.inf
    out.append(_check("learners", "odaftrl-ftrl-closed-form", 1e-12 - worst))
    return out


# -------------------------------------------------------------------- delay

def suite_delay(T: int = 500) -> list[Check]:
    out = []
    for prof in (dl.DelayProfile.none(), dl.DelayProfile.fixed(3), dl.DelayProfile.uniform(7, 4)):
        q = dl.DelayQueue()
        gaps_ok = True
        got = 0
        for t in range(1, T + 1):
            q.push(dl.FeedbackEvent(t, t + prof.delay(t)))
            for ev in q.pop_due(t):
                got += 1
                if prof.kind == dl.FIXED and ev.deliver_at - ev.origin != prof.D:
                    gaps_ok = False
                if ev.deliver_at != t:
                    gaps_ok = False
        dropped = len(q.shutdown())
        out.append(_check("delay", f"conservation {prof.kind}", 0.0 if got + dropped == T else -1.0))
        out.append(_check("delay", f"delivery-time {prof.kind}", 0.0 if gaps_ok else -1.0))
    return out


# ------------------------------------------------------------------ harness

def suite_harness() -> list[Check]:
    import tempfile
    from pathlib import Path

    from .config import ExperimentConfig
    from .runner import run

    out = []
    cfg = ExperimentConfig(name="replay", T=300, K=4, n_prime=1, B=10, q_policy="fixed", q=0.2,
                           comparators="zero,random", repetitions=2, seed=3)
    with tempfile.TemporaryDirectory() as tmp:
        r1 = run(cfg, Path(tmp) / "a")
        r2 = run(cfg, Path(tmp) / "b")
        same = all((Path(tmp) / "a" / "replay" / f).read_bytes() == (Path(tmp) / "b" / "replay" / f).read_bytes()
                   for f in ("rep0_rounds.csv", "rep1_rounds.csv", "summary.csv", "plot.csv"))
    out.append(_check("harness", "replay-determinism", 0.0 if same else -1.0))
    worst = 0.0
    for rep in r1.reps:
        c = rep.columns
        worst = max(worst, float(np.abs(np.cumsum(c["loss"]) - c["cum_loss"]).max()))
        worst = max(worst, float(np.abs(c["regret_zero"] - (np.cumsum(c["loss"]) - np.cumsum(c["comp_zero"]))).max()))
    out.append(_check("harness", "regret-accounting", 1e-9 - worst))
    _ = r2
    return out


SUITES = {
    "structures": suite_structures,
    "fy_loss": suite_fy_loss,
    "decoding": suite_decoding,
    "estimators": suite_estimators,
    "numerics": suite_numerics,
    "learners": suite_learners,
    "delay": suite_delay,
    "harness": suite_harness,
}


def run_suites(names: list[str] | None = None, echo=print) -> list[Check]:
    names = names or list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown suite(s) {unknown}; choose from {sorted(SUITES)}")
    checks: list[Check] = []
    for n in names:
        t0 = time.perf_counter()
        res = SUITES[n]()
        for c in res:
            echo(c.line())
        echo(f"-- suite {n}: {sum(c.passed for c in res)}/{len(res)} passed "
             f"in {time.perf_counter() - t0:.1f}s")
        checks += res
    return checks


def corrupt_self(spec: StructureSpec) -> StructureSpec:
    """Negative control: swap two rows of V so the SELF form no longer matches."""
    V = spec.V.copy()
    V[[0, 1]] = V[[1, 0]]
    V.setflags(write=False)
    return replace(spec, V=V)


__all__ = ["Check", "SUITES", "run_suites", "check_self_identity", "corrupt_self", "envs"]
