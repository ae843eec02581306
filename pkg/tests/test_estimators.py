from dataclasses import replace

import numpy as np
import pytest

from osp import decoding as dc
from osp import estimators as es
from osp import fy_loss as fy
from osp import structures as st
from osp.errors import DomainError, InvariantViolation
from osp.numerics import frob_sq

SPECS = [st.multiclass(2), st.multiclass(3), st.multiclass(5), st.multilabel(5, 2),
         st.multilabel(6, 4), st.ranking(3)]


def ids(spec):
    return f"{spec.kind}-d{spec.dim}-m{spec.m}"


def outcomes(spec, reg, theta, q, seed=0):
    """Every possible decode outcome at ``theta`` with its probability."""
    base = dc.rdue_decode(spec, reg, theta, q, np.random.default_rng(seed))
    for v in range(spec.card):
        mass = base.dist.mass(v)
        if mass > 0:
            yield mass, replace(base, chosen=v, p_chosen=mass)


def indicator(v, y):
    return es.BanditFeedback(es.INDICATOR, 1.0 if v == y else 0.0)


def loss_feedback(spec, v, y):
    return es.BanditFeedback(es.LOSS_VALUE, st.target_loss(spec, st.embed(spec, v), y))


def test_inverse_weighted_examples():
    mc = st.multiclass(3)
    reg = fy.regularizer_for(mc)
    x = np.array([1.0, -2.0])
    out = dc.rdue_decode(mc, reg, np.array([0.3, 0.1, -0.2]), 0.5, np.random.default_rng(0))
    miss = es.inverse_weighted(mc, out, x, es.BanditFeedback(es.INDICATOR, 0.0))
    assert not np.any(miss.matrix) and miss.frob_sq == 0.0
    half = replace(out, p_chosen=0.5)
    hit = es.inverse_weighted(mc, half, x, es.BanditFeedback(es.INDICATOR, 1.0))
    G = np.outer(out.prediction - st.embed(mc, out.chosen), x)
    assert np.allclose(hit.matrix, 2 * G)
    with pytest.raises(InvariantViolation):
        es.inverse_weighted(mc, replace(out, p_chosen=0.0), x, es.BanditFeedback(es.INDICATOR, 1.0))
    with pytest.raises(DomainError):
        es.inverse_weighted(mc, out, x, es.BanditFeedback(es.LOSS_VALUE, 1.0))


def test_inverse_weighted_unbiased_multiclass():
    mc = st.multiclass(3)
    reg = fy.regularizer_for(mc)
    theta = np.array([0.7, -0.1, 0.2])
    x = np.array([0.5, 1.0, -1.0])
    for y in range(3):
        E = sum(m * es.inverse_weighted(mc, o, x, indicator(o.chosen, y)).matrix
                for m, o in outcomes(mc, reg, theta, 0.3))
        prediction = fy.regularized_prediction(reg, mc, theta)[0]
        assert np.abs(E - fy.surrogate_gradient(mc, prediction, x, y)).max() <= 1e-12


def test_pseudo_inverse_examples():
    mc = st.multiclass(3)
    reg = fy.regularizer_for(mc)
    theta = np.array([0.2, 0.0, -0.5])
    for y in range(3):
        E = sum(m * es.pseudo_inverse_label(mc, o, loss_feedback(mc, o.chosen, y))
                for m, o in outcomes(mc, reg, theta, 1.0))
        assert np.abs(E - st.embed(mc, y)).max() <= 1e-10
    out = dc.rdue_decode(mc, reg, theta, 0.5, np.random.default_rng(1))
    same = es.pseudo_inverse_label(mc, out, loss_feedback(mc, out.chosen, out.chosen))
    assert np.allclose(same, 0.0)
    G = es.pseudo_inverse_gradient(np.array([0.6, 0.4]), np.array([2.0]), np.array([1.0, 0.0]))
    assert np.allclose(G.matrix, [[-0.8], [0.8]])
    assert not np.any(es.pseudo_inverse_gradient(np.array([0.2, 0.8]), np.ones(3), np.array([0.2, 0.8])).matrix)
    with pytest.raises(DomainError):
        es.pseudo_inverse_label(mc, out, es.BanditFeedback(es.INDICATOR, 1.0))


def test_trace_bound_example():
    mc = st.multiclass(3)
    reg = fy.regularizer_for(mc)
    rng = np.random.default_rng(2)
    for _ in range(20):
        theta = rng.normal(size=3) * 2
        y = int(rng.integers(3))
        tr = sum(m * float(np.sum(es.pseudo_inverse_label(mc, o, loss_feedback(mc, o.chosen, y)) ** 2))
                 for m, o in outcomes(mc, reg, theta, 0.5))
        assert tr <= es.omega_bound(mc) / 0.5 + 1e-9


@pytest.mark.parametrize("spec", SPECS, ids=ids)
def test_unbiasedness_and_second_moments(spec):
    reg = fy.regularizer_for(spec)
    rng = np.random.default_rng(spec.dim * 7 + spec.m)
    omega = es.omega_bound(spec)
    for k in range(20):
        W = rng.normal(size=(spec.dim, 4))
        x = rng.normal(size=4)
        rx = np.linalg.norm(x)
        y = int(rng.integers(spec.card))
        q = (0.05, 0.3, 0.8, 1.0)[k % 4]
        theta = W @ x
        prediction = fy.regularized_prediction(reg, spec, theta)[0]
        G = fy.surrogate_gradient(spec, prediction, x, y)
        E_iw = np.zeros_like(G)
        E_pi = np.zeros_like(G)
        m2_iw = m2_pi = 0.0
        for m, o in outcomes(spec, reg, theta, q):
            g_iw = es.inverse_weighted(spec, o, x, indicator(o.chosen, y))
            yt = es.pseudo_inverse_label(spec, o, loss_feedback(spec, o.chosen, y))
            g_pi = es.pseudo_inverse_gradient(o.prediction, x, yt)
            E_iw += m * g_iw.matrix
            E_pi += m * g_pi.matrix
            m2_iw += m * g_iw.frob_sq
            m2_pi += m * g_pi.frob_sq
            assert g_pi.frob_sq == pytest.approx(frob_sq(g_pi.matrix), rel=1e-10)
        assert np.abs(E_iw - G).max() <= 1e-9
        assert np.abs(E_pi - G).max() <= 1e-9
        assert m2_iw <= spec.card / q * frob_sq(G) + 1e-9
        S = fy.fy_loss(reg, spec, theta, y)
        b = 2 * rx**2 * spec.kappa**2 / reg.lambda_sc
        assert m2_pi <= 2 * b * S + 2 * rx**2 * omega / q + 1e-9


def test_omega_examples():
    assert es.omega_bound(st.multiclass(10)) == 100
    assert es.omega_bound(st.multilabel(4, 2)) == 64
    assert es.omega_bound(st.ranking(3)) == 243


@pytest.mark.parametrize("spec", [st.multiclass(d) for d in range(2, 9)]
                         + [st.multilabel(d, m) for d in range(3, 9) for m in range(1, min(d, 5))]
                         + [st.ranking(m) for m in (2, 3, 4)], ids=ids)
def test_omega_dominates_trace(spec):
    assert es.omega_exact(spec) <= es.omega_bound(spec) + 1e-9


def test_feedback_validation():
    with pytest.raises(DomainError):
        es.BanditFeedback(es.LOSS_VALUE, 1.5)
    with pytest.raises(DomainError):
        es.BanditFeedback("other", 0.0)
